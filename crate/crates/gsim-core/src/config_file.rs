//! Flat dotted-key configuration files.
//!
//! Lines are `key = value` pairs; a `[section]` header prefixes the keys
//! that follow it (`[gfo]` + `population = 100` is the same as
//! `gfo.population = 100`). `#` starts a comment. Values are numbers or
//! bare strings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Number(f64),
    Text(String),
}

impl ConfigValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ConfigValue::Number(v) => Some(*v),
            ConfigValue::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            ConfigValue::Number(_) => "",
            ConfigValue::Text(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFileError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigFileError {}

/// Parsed key/value overrides in file order, addressable by dotted key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    values: BTreeMap<String, ConfigValue>,
}

impl Overrides {
    pub fn parse(text: &str) -> Result<Overrides, ConfigFileError> {
        let mut values = BTreeMap::new();
        let mut prefix = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                prefix = format!("{}.", section.trim());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigFileError {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = format!("{prefix}{}", key.trim());
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigFileError {
                    line: idx + 1,
                    message: "empty key or value".into(),
                });
            }
            let parsed = match value.parse::<f64>() {
                Ok(v) => ConfigValue::Number(v),
                Err(_) => ConfigValue::Text(value.to_string()),
            };
            values.insert(key, parsed);
        }
        Ok(Overrides { values })
    }

    pub fn load(path: &Path) -> Result<Overrides, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigFileError {
            line: 0,
            message: e.to_string(),
        })?;
        Overrides::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&ConfigValue> {
        self.values.get(key)
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(ConfigValue::as_f64)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        match self.get(key) {
            Some(ConfigValue::Text(s)) => Some(s),
            _ => None,
        }
    }

    /// All numeric pairs, e.g. for environment parameter overrides.
    pub fn numeric_pairs(&self) -> Vec<(String, f64)> {
        self.values
            .iter()
            .filter_map(|(k, v)| v.as_f64().map(|n| (k.clone(), n)))
            .collect()
    }

    /// Applies `[gfo]` section keys onto GA settings.
    pub fn apply_gfo(&self, settings: &mut crate::gfo::GaSettings) {
        if let Some(v) = self.number("gfo.population") {
            settings.population = v as usize;
        }
        if let Some(v) = self.number("gfo.generations") {
            settings.generations = v as usize;
        }
        if let Some(v) = self.number("gfo.tournament_k") {
            settings.tournament_k = v as usize;
        }
        if let Some(v) = self.number("gfo.crossover_rate") {
            settings.crossover_rate = v;
        }
        if let Some(v) = self.number("gfo.sbx_eta") {
            settings.sbx_eta = v;
        }
        if let Some(v) = self.number("gfo.mutation_stdev") {
            settings.mutation_stdev = v;
        }
        if let Some(v) = self.number("gfo.mc_draws") {
            settings.mc_draws = v as usize;
        }
        if let Some(v) = self.number("gfo.elitism") {
            settings.elitism = v as usize;
        }
    }

    /// Applies `[sbi]` section keys onto rejection-sampler settings.
    pub fn apply_sbi(&self, settings: &mut crate::sbi::SbiSettings) {
        if let Some(v) = self.number("sbi.budget") {
            settings.budget = v as usize;
        }
        if let Some(v) = self.number("sbi.accept_fraction") {
            settings.accept_fraction = v;
        }
    }

    /// Applies `[loop]` section keys onto loop settings (calibrator and
    /// mode are handled by the caller, which owns their enums).
    pub fn apply_loop(&self, settings: &mut crate::refine::LoopSettings) {
        if let Some(v) = self.number("loop.max_iterations") {
            settings.max_iterations = v as usize;
        }
        if let Some(v) = self.number("loop.patience") {
            settings.patience = v as usize;
        }
        if let Some(v) = self.number("loop.top_k") {
            settings.top_k = v as usize;
        }
        if let Some(v) = self.number("loop.corrective_rounds") {
            settings.corrective_rounds = v as usize;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dotted_keys_sections_and_comments() {
        let text = "\
# comment line
hospital.arrival_rate_0 = 2.5
[gfo]
population = 100   # trailing comment
mutation_stdev = 0.05
[loop]
mode = zeroshot
";
        let o = Overrides::parse(text).unwrap();
        assert_eq!(o.number("hospital.arrival_rate_0"), Some(2.5));
        assert_eq!(o.number("gfo.population"), Some(100.0));
        assert_eq!(o.number("gfo.mutation_stdev"), Some(0.05));
        assert_eq!(o.text("loop.mode"), Some("zeroshot"));

        let mut ga = crate::gfo::GaSettings::default();
        o.apply_gfo(&mut ga);
        assert_eq!(ga.population, 100);
        assert_eq!(ga.mutation_stdev, 0.05);
    }

    #[test]
    fn bad_lines_are_errors_with_numbers() {
        let err = Overrides::parse("a = 1\nnot a pair\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn env_override_pairs_flow_through() {
        let o = Overrides::parse("sir.beta = 0.8\nsir.gamma = 0.2\nllm.model = m\n").unwrap();
        let mut env = crate::envs::EnvSpec::preset("sir").unwrap();
        env.apply_overrides(&o.numeric_pairs()).unwrap();
        assert_eq!(env.param("beta"), Some(0.8));
        assert_eq!(env.param("gamma"), Some(0.2));
    }
}
