//! Provider gateway for structural proposals: prompt construction, an
//! OpenAI-compatible chat client, a deterministic scripted provider, and
//! extraction of configuration blocks from model output.

use std::collections::VecDeque;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::dsl::{parse_config, validate, StructuralConfig};
use crate::envs::{EnvKind, EnvSpec};
use crate::error::ParseError;

/// Credential and endpoint environment variables.
pub const API_KEY_VAR: &str = "GSIM_API_KEY";
pub const API_BASE_VAR: &str = "GSIM_API_BASE";

/// Compact language reference included in every prompt in place of a code
/// skeleton.
pub const GRAMMAR_REFERENCE: &str = r#"Configuration language reference:

config <name> {
  params { <name> = <default> in [<min>, <max>]; ... }
  state {
    <field> : int = <number>;
    <field> : float = <number>;
    <field> : pipeline = empty;
    <field> : records(<attr>: int|float|bool|sym, ...) = empty;
  }
  rules { <Rule>(<named args>); ... }
}

Rules (executed in order, each against the current working state):
  CompartmentFlow(from=<int field>, to=<int field>, count=<sampler>)
      moves a sampled count, capped at the source field.
  Accumulate(field=<int field>, delta=<sampler>, sign=1|-1)
      adds or subtracts a sampled count, floored at zero.
  PipelineAdvance(pipeline=<pipeline field>, deliver_to=<int field>)
      ages shipments one tick and delivers matured quantities.
  PipelineAppend(pipeline=<pipeline field>, quantity=<expr>, delay=<expr>)
      appends (quantity, delay); quantities below one are skipped.
  QueueService(inventory=<int field>, backlog=<int field>, demand=<sampler>)
      serves backlog first, then sampled demand; unmet demand becomes backlog.
  RecordCountdown(records=<records field>, timer=<int attr>, age=<int attr>,
                  bed=<sym attr>, occupancy={<sym>: <int field>, ...})
      decrements the timer, increments the age, removes records reaching
      zero and frees their bed.
  RecordHazard(records=<records field>, prob=<expr over attrs>,
               bed=<sym attr>, occupancy={<sym>: <int field>, ...})
      removes each record with the evaluated probability, freeing its bed.
  RecordSpawn(records=<records field>, count=<sampler>,
              attrs={<attr>: <expr>|<sampler>|true|false|sym(<name>), ...},
              gate=Gate(bed=<sym attr>, overflow=<int field>,
                        try=[(<sym>, <int field>, <capacity expr>), ...]))
      spawns records and admits them through the first preference with
      spare capacity; rejected records are dropped and counted.
  Assign(field=<scalar field>, expr=<expr>)
      overwrites a scalar field.

Samplers: Binomial(n, p), Poisson(rate), NegBinomial(mean, dispersion),
Normal(mean, stdev, floor=<int>), Deterministic(expr). Probabilities are
clipped to [0, 1], rates and means to >= 0.

Expressions: infix + - * /, unary -, exp(x), log(x), pow(x, y), min(x, y),
max(x, y), clip(x, lo, hi); bare identifiers resolve to parameters, then
state fields, then record attributes; `action` names the exogenous input.
Comments run from # to end of line."#;

/// Environment briefing inserted into proposal prompts.
pub fn env_task_description(env: &EnvSpec) -> String {
    let state_block = match env.kind {
        EnvKind::Sir => {
            "State fields:\n  S : int  (susceptible)\n  I : int  (infectious)\n  R : int  (recovered)\n\nAction: none.".to_string()
        }
        EnvKind::Supply => {
            "State fields:\n  inventory : int            (on-hand units)\n  pipeline : pipeline        (shipments as (quantity, time_remaining))\n  backlog : int              (unfilled demand)\n  t : int                    (time index)\n\nAction: integer >= 0, the order placed with the supplier this step;\nit enters the pipeline with a lead time.".to_string()
        }
        EnvKind::Hospital => {
            "State fields:\n  day : int\n  icu_occupancy : int\n  standard_occupancy : int\n  overflow : int             (cumulative arrivals turned away)\n  patients : records(disease_id: int, bed_type: sym, los_remaining: int,\n                     is_alive: bool, day_in_hospital: int)\n\nAction: none. Arrivals for three diseases are admitted to ICU or\nstandard beds subject to capacity; rejected arrivals are turned away.".to_string()
        }
    };
    format!(
        "Environment `{}`.\n\n{}\n\nEach recorded trajectory lasts {} steps.",
        env.name, state_block, env.horizon
    )
}

/// Deterministic prompt bundle sent to a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub system: String,
    pub task: String,
    pub history_digest: String,
    pub feedback: String,
    pub iteration: usize,
    pub total_iterations: usize,
}

impl PromptContext {
    /// Full user message, assembled deterministically.
    pub fn user_message(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.task);
        out.push_str("\n\n");
        out.push_str(GRAMMAR_REFERENCE);
        out.push_str("\n\nGoals:\n");
        out.push_str(
            "* The configuration's parameters will be calibrated against an observed\n  state-action training set by likelihood-free methods; declare a uniform\n  prior range for every parameter.\n* The training set is small; the model must generalize to unseen\n  state-action data and achieve the lowest possible validation\n  Wasserstein loss.\n* Keep the structure interpretable and decomposed into update rules.\n",
        );
        if !self.history_digest.is_empty() {
            out.push_str("\nHere are the configurations you generated previously, with their parameters calibrated to the training set, sorted with the lowest validation loss last:\n");
            out.push_str(&self.history_digest);
        }
        if !self.feedback.is_empty() {
            out.push_str("\nDiagnostic feedback on the latest candidate:\n");
            out.push_str(&self.feedback);
            out.push('\n');
        }
        out.push_str(&format!(
            "\nThink step by step, then answer with one complete configuration in a fenced code block. You are generating a configuration for iteration {} out of {}.\n",
            self.iteration, self.total_iterations
        ));
        out
    }
}

/// One prior candidate summarized for the prompt history.
#[derive(Debug, Clone)]
pub struct HistoryDigestEntry {
    pub iteration: usize,
    pub wasserstein: f64,
    pub mse_per_dim: Vec<(String, f64)>,
    pub params: Vec<(String, f64)>,
    pub config_text: String,
}

fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Renders a digest entry in the report format used across prompts and
/// feedback files.
pub fn render_digest_entry(entry: &HistoryDigestEntry) -> String {
    let mses: Vec<String> = entry
        .mse_per_dim
        .iter()
        .map(|(name, v)| format!("{name} val MSE loss: {}", sig3(*v)))
        .collect();
    let params: Vec<String> = entry
        .params
        .iter()
        .map(|(name, v)| format!("{name}={v}"))
        .collect();
    format!(
        "Val Wasserstein Loss: {} (Where the val MSE loss per dimension is {}) Iteration: {}\n###\n```\n{}```\noptimized_parameters = [{}]\n###\n",
        sig3(entry.wasserstein),
        mses.join(", "),
        entry.iteration,
        entry.config_text,
        params.join(", ")
    )
}

/// Builds the proposal prompt: task briefing, grammar reference, the top-k
/// prior candidates sorted worst-first (lowest validation loss last), and
/// the latest feedback.
pub fn build_prompt(
    env: &EnvSpec,
    history: &[HistoryDigestEntry],
    feedback: &str,
    top_k: usize,
    iteration: usize,
    total_iterations: usize,
) -> PromptContext {
    let mut ranked: Vec<&HistoryDigestEntry> = history.iter().collect();
    ranked.sort_by(|a, b| a.wasserstein.total_cmp(&b.wasserstein));
    let mut top: Vec<&HistoryDigestEntry> = ranked.into_iter().take(top_k).collect();
    // Worst of the kept candidates first, best last.
    top.reverse();
    let digest = top
        .iter()
        .map(|e| render_digest_entry(e))
        .collect::<Vec<_>>()
        .join("\n");
    PromptContext {
        system: "You are building a discrete-time stochastic simulator as a configuration \
                 in a small rule language. Work autonomously: no human input is available. \
                 Always answer with one complete configuration; never leave placeholders."
            .to_string(),
        task: env_task_description(env),
        history_digest: digest,
        feedback: feedback.to_string(),
        iteration,
        total_iterations,
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("scripted provider queue exhausted")]
    Exhausted,
    #[error("missing {0} environment variable")]
    MissingEnv(&'static str),
    #[error("http status {0}")]
    Status(u16),
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
}

/// Anything that can turn a prompt into raw proposal text.
pub trait ProposalProvider: Send {
    fn propose(&mut self, prompt: &PromptContext) -> Result<String, ProviderError>;
}

/// Deterministic provider replaying a fixed queue of proposals.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    queue: VecDeque<String>,
    pub calls: usize,
}

impl ScriptedProvider {
    pub fn new(proposals: Vec<String>) -> ScriptedProvider {
        ScriptedProvider {
            queue: proposals.into(),
            calls: 0,
        }
    }

    /// Parses a proposals file: entries separated by lines containing only
    /// `---`.
    pub fn from_text(text: &str) -> ScriptedProvider {
        let mut proposals = Vec::new();
        let mut current = String::new();
        for line in text.lines() {
            if line.trim() == "---" {
                proposals.push(std::mem::take(&mut current));
            } else {
                current.push_str(line);
                current.push('\n');
            }
        }
        if !current.trim().is_empty() {
            proposals.push(current);
        }
        ScriptedProvider::new(proposals)
    }
}

impl ProposalProvider for ScriptedProvider {
    fn propose(&mut self, _prompt: &PromptContext) -> Result<String, ProviderError> {
        self.calls += 1;
        self.queue.pop_front().ok_or(ProviderError::Exhausted)
    }
}

/// HTTP chat-completion provider. The credential is read from
/// `GSIM_API_KEY` per request and never stored or logged.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base: String,
    pub model: String,
    pub max_retries: usize,
    pub backoff_ms: u64,
    /// Sampling parameters forwarded verbatim when present.
    pub temperature: Option<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpProvider {
    /// Base URL from an explicit value or `GSIM_API_BASE`.
    pub fn new(
        base: Option<String>,
        model: &str,
        timeout: Duration,
        max_retries: usize,
    ) -> Result<HttpProvider, ProviderError> {
        let base = match base {
            Some(b) => b,
            None => std::env::var(API_BASE_VAR).map_err(|_| ProviderError::MissingEnv(API_BASE_VAR))?,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        Ok(HttpProvider {
            client,
            base: base.trim_end_matches('/').to_string(),
            model: model.to_string(),
            max_retries,
            backoff_ms: 500,
            temperature: None,
        })
    }

    fn request_once(&self, prompt: &PromptContext) -> Result<String, ProviderError> {
        let key = std::env::var(API_KEY_VAR).map_err(|_| ProviderError::MissingEnv(API_KEY_VAR))?;
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user_message()},
            ],
        });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        let response = self
            .client
            .post(format!("{}/chat/completions", self.base))
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ProviderError::Status(status.as_u16()));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| ProviderError::BadResponse("no choices".into()))
    }
}

impl ProposalProvider for HttpProvider {
    fn propose(&mut self, prompt: &PromptContext) -> Result<String, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.request_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    let retryable = matches!(
                        &e,
                        ProviderError::Network(_) | ProviderError::Status(500..=599) | ProviderError::Status(429)
                    );
                    if !retryable || attempt >= self.max_retries {
                        return Err(e);
                    }
                    std::thread::sleep(Duration::from_millis(self.backoff_ms << attempt));
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no config block in the response")]
    NoBlock,
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("validation failed: {0}")]
    Invalid(String),
}

/// Pulls the last fenced code block out of raw model text, then parses and
/// validates it.
pub fn extract_config(raw: &str) -> Result<StructuralConfig, ExtractError> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in raw.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => current = Some(String::new()),
            }
            continue;
        }
        if let Some(block) = current.as_mut() {
            block.push_str(line);
            block.push('\n');
        }
    }
    let block = blocks
        .into_iter()
        .rev()
        .find(|b| !b.trim().is_empty())
        .ok_or(ExtractError::NoBlock)?;
    let config = parse_config(&block)?;
    let report = validate(&config);
    if !report.ok() {
        return Err(ExtractError::Invalid(report.to_string()));
    }
    Ok(config)
}
