//! Static checks for parsed configurations.

use std::collections::HashSet;
use std::fmt;

use crate::state::AttrKind;

use super::ast::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
    pub location: String,
}

/// Outcome of validating a config; `ok()` iff no error-severity issues.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        !self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    pub fn errors(&self) -> Vec<&Issue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Error)
            .collect()
    }

    fn error(&mut self, location: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            message: message.into(),
            location: location.to_string(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("ok");
        }
        for issue in &self.issues {
            let tag = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{tag} at {}: {}", issue.location, issue.message)?;
        }
        Ok(())
    }
}

struct Checker<'a> {
    config: &'a StructuralConfig,
    report: ValidationReport,
}

#[derive(Clone, Copy)]
struct ExprScope<'a> {
    /// Record attribute schema when inside a record-scoped template.
    record: Option<&'a [(String, AttrKind)]>,
}

impl<'a> Checker<'a> {
    fn field_kind(&self, name: &str) -> Option<&'a FieldKind> {
        self.config
            .state_schema
            .iter()
            .find(|f| f.name == name)
            .map(|f| &f.kind)
    }

    fn is_param(&self, name: &str) -> bool {
        self.config.param_decls.iter().any(|d| d.name == name)
    }

    fn check_field_is(&mut self, loc: &str, name: &str, want: &str) {
        match self.field_kind(name) {
            None => self
                .report
                .error(loc, format!("undeclared field `{name}`")),
            Some(kind) => {
                let ok = matches!(
                    (want, kind),
                    ("int", FieldKind::Int)
                        | ("float", FieldKind::Float)
                        | ("scalar", FieldKind::Int)
                        | ("scalar", FieldKind::Float)
                        | ("pipeline", FieldKind::Pipeline)
                        | ("records", FieldKind::Records(_))
                );
                if !ok {
                    self.report
                        .error(loc, format!("field `{name}` must have kind {want}"));
                }
            }
        }
    }

    fn check_expr(&mut self, loc: &str, expr: &Expr, scope: ExprScope<'_>) {
        match expr {
            Expr::Lit(v) => {
                if !v.is_finite() {
                    self.report.error(loc, "non-finite literal");
                }
            }
            Expr::ActionRef => {}
            Expr::Ident(name) => {
                if self.is_param(name) {
                    return;
                }
                if let Some(kind) = self.field_kind(name) {
                    if !matches!(kind, FieldKind::Int | FieldKind::Float) {
                        self.report.error(
                            loc,
                            format!("field `{name}` is not scalar and cannot appear in expressions"),
                        );
                    }
                    return;
                }
                if let Some(attrs) = scope.record {
                    if let Some((_, kind)) = attrs.iter().find(|(n, _)| n == name) {
                        if *kind == AttrKind::Sym {
                            self.report.error(
                                loc,
                                format!("symbolic attribute `{name}` cannot appear in expressions"),
                            );
                        }
                        return;
                    }
                } else if self
                    .config
                    .state_schema
                    .iter()
                    .any(|f| matches!(&f.kind, FieldKind::Records(attrs) if attrs.iter().any(|(n, _)| n == name)))
                {
                    self.report.error(
                        loc,
                        format!("attribute `{name}` used outside a record-scoped rule"),
                    );
                    return;
                }
                self.report
                    .error(loc, format!("undeclared identifier `{name}`"));
            }
            Expr::Neg(e) => self.check_expr(loc, e, scope),
            Expr::Bin(_, l, r) => {
                self.check_expr(loc, l, scope);
                self.check_expr(loc, r, scope);
            }
            Expr::Call(_, args) => {
                for a in args {
                    self.check_expr(loc, a, scope);
                }
            }
        }
    }

    fn check_sampler(&mut self, loc: &str, s: &CountSampler, scope: ExprScope<'_>) {
        match s {
            CountSampler::Binomial { n, p } => {
                self.check_expr(loc, n, scope);
                self.check_expr(loc, p, scope);
            }
            CountSampler::Poisson { rate } => self.check_expr(loc, rate, scope),
            CountSampler::NegBinomial { mean, dispersion } => {
                self.check_expr(loc, mean, scope);
                self.check_expr(loc, dispersion, scope);
            }
            CountSampler::Normal { mean, stdev, .. } => {
                self.check_expr(loc, mean, scope);
                self.check_expr(loc, stdev, scope);
            }
            CountSampler::Deterministic(e) => self.check_expr(loc, e, scope),
        }
    }

    fn record_attrs(&mut self, loc: &str, records: &str) -> Option<&'a [(String, AttrKind)]> {
        match self.field_kind(records) {
            Some(FieldKind::Records(attrs)) => Some(attrs),
            Some(_) => {
                self.report
                    .error(loc, format!("field `{records}` must have kind records"));
                None
            }
            None => {
                self.report
                    .error(loc, format!("undeclared field `{records}`"));
                None
            }
        }
    }

    fn check_attr_is(
        &mut self,
        loc: &str,
        attrs: &[(String, AttrKind)],
        name: &str,
        want: AttrKind,
    ) {
        match attrs.iter().find(|(n, _)| n == name) {
            None => self
                .report
                .error(loc, format!("undeclared attribute `{name}`")),
            Some((_, kind)) if *kind != want => self
                .report
                .error(loc, format!("attribute `{name}` must have kind {want}")),
            _ => {}
        }
    }

    fn check_occupancy(&mut self, loc: &str, occupancy: &[(String, String)]) {
        let mut seen = HashSet::new();
        for (sym, field) in occupancy {
            if !seen.insert(sym.clone()) {
                self.report
                    .error(loc, format!("duplicate occupancy symbol `{sym}`"));
            }
            self.check_field_is(loc, field, "int");
        }
    }

    fn run(mut self) -> ValidationReport {
        for (i, d) in self.config.param_decls.iter().enumerate() {
            let loc = format!("params[{i}] {}", d.name);
            if !(d.min.is_finite() && d.max.is_finite() && d.default.is_finite()) {
                self.report.error(&loc, "bounds and default must be finite");
                continue;
            }
            if d.min > d.max {
                self.report
                    .error(&loc, format!("min {} exceeds max {}", d.min, d.max));
            } else if d.default < d.min || d.default > d.max {
                self.report.error(
                    &loc,
                    format!("default {} outside [{}, {}]", d.default, d.min, d.max),
                );
            }
        }

        for (i, f) in self.config.state_schema.iter().enumerate() {
            let loc = format!("state[{i}] {}", f.name);
            if self.is_param(&f.name) {
                self.report
                    .error(&loc, "field name collides with a parameter");
            }
            match (&f.kind, &f.init) {
                (FieldKind::Int | FieldKind::Float, InitRule::Number(v)) => {
                    if !v.is_finite() {
                        self.report.error(&loc, "initial value must be finite");
                    }
                }
                (FieldKind::Int | FieldKind::Float, InitRule::Empty) => {
                    self.report
                        .error(&loc, "scalar fields need a numeric initial value");
                }
                (FieldKind::Pipeline | FieldKind::Records(_), InitRule::Number(_)) => {
                    self.report
                        .error(&loc, "pipeline/records fields initialize to `empty`");
                }
                (FieldKind::Pipeline | FieldKind::Records(_), InitRule::Empty) => {}
            }
        }

        let no_scope = ExprScope { record: None };
        for (k, rule) in self.config.rules.iter().enumerate() {
            let loc = format!("rules[{k}] {}", rule.kind_name());
            match rule {
                UpdateRule::CompartmentFlow { from, to, count } => {
                    self.check_field_is(&loc, from, "int");
                    self.check_field_is(&loc, to, "int");
                    self.check_sampler(&loc, count, no_scope);
                }
                UpdateRule::Accumulate { field, delta, sign } => {
                    self.check_field_is(&loc, field, "int");
                    self.check_sampler(&loc, delta, no_scope);
                    if sign.abs() != 1 {
                        self.report.error(&loc, "sign must be 1 or -1");
                    }
                }
                UpdateRule::PipelineAdvance {
                    pipeline,
                    deliver_to,
                } => {
                    self.check_field_is(&loc, pipeline, "pipeline");
                    self.check_field_is(&loc, deliver_to, "int");
                }
                UpdateRule::PipelineAppend {
                    pipeline,
                    quantity,
                    delay,
                } => {
                    self.check_field_is(&loc, pipeline, "pipeline");
                    self.check_expr(&loc, quantity, no_scope);
                    self.check_expr(&loc, delay, no_scope);
                }
                UpdateRule::QueueService {
                    inventory,
                    backlog,
                    demand,
                } => {
                    self.check_field_is(&loc, inventory, "int");
                    self.check_field_is(&loc, backlog, "int");
                    self.check_sampler(&loc, demand, no_scope);
                }
                UpdateRule::RecordCountdown {
                    records,
                    timer_attr,
                    age_attr,
                    bed_attr,
                    occupancy,
                } => {
                    if let Some(attrs) = self.record_attrs(&loc, records) {
                        self.check_attr_is(&loc, attrs, timer_attr, AttrKind::Int);
                        if let Some(age) = age_attr {
                            self.check_attr_is(&loc, attrs, age, AttrKind::Int);
                        }
                        self.check_attr_is(&loc, attrs, bed_attr, AttrKind::Sym);
                    }
                    self.check_occupancy(&loc, occupancy);
                }
                UpdateRule::RecordHazard {
                    records,
                    prob,
                    bed_attr,
                    occupancy,
                } => {
                    if let Some(attrs) = self.record_attrs(&loc, records) {
                        self.check_attr_is(&loc, attrs, bed_attr, AttrKind::Sym);
                        self.check_expr(&loc, prob, ExprScope {
                            record: Some(attrs),
                        });
                    }
                    self.check_occupancy(&loc, occupancy);
                }
                UpdateRule::RecordSpawn {
                    records,
                    count,
                    attrs: inits,
                    gate,
                } => {
                    self.check_sampler(&loc, count, no_scope);
                    if let Some(attrs) = self.record_attrs(&loc, records) {
                        let mut covered: HashSet<&str> = HashSet::new();
                        for (name, init) in inits {
                            match attrs.iter().find(|(n, _)| n == name) {
                                None => self
                                    .report
                                    .error(&loc, format!("undeclared attribute `{name}`")),
                                Some((_, kind)) => {
                                    let compatible = matches!(
                                        (kind, init),
                                        (AttrKind::Bool, AttrInit::Bool(_))
                                            | (AttrKind::Sym, AttrInit::Sym(_))
                                            | (AttrKind::Int, AttrInit::Expr(_))
                                            | (AttrKind::Int, AttrInit::Sampler(_))
                                            | (AttrKind::Float, AttrInit::Expr(_))
                                            | (AttrKind::Float, AttrInit::Sampler(_))
                                    );
                                    if !compatible {
                                        self.report.error(
                                            &loc,
                                            format!("initializer for `{name}` does not fit kind {kind}"),
                                        );
                                    }
                                }
                            }
                            if !covered.insert(name.as_str()) {
                                self.report
                                    .error(&loc, format!("attribute `{name}` initialized twice"));
                            }
                            match init {
                                AttrInit::Expr(e) => self.check_expr(&loc, e, no_scope),
                                AttrInit::Sampler(s) => self.check_sampler(&loc, s, no_scope),
                                _ => {}
                            }
                        }
                        self.check_attr_is(&loc, attrs, &gate.bed_attr, AttrKind::Sym);
                        if covered.contains(gate.bed_attr.as_str()) {
                            self.report.error(
                                &loc,
                                format!("attribute `{}` is gate-assigned and initialized", gate.bed_attr),
                            );
                        } else {
                            covered.insert(gate.bed_attr.as_str());
                        }
                        for (name, _) in attrs {
                            if !covered.contains(name.as_str()) {
                                self.report
                                    .error(&loc, format!("attribute `{name}` never initialized"));
                            }
                        }
                    }
                    if let Some(of) = &gate.overflow_field {
                        self.check_field_is(&loc, of, "int");
                    }
                    let mut seen = HashSet::new();
                    for pref in &gate.prefs {
                        if !seen.insert(pref.symbol.clone()) {
                            self.report
                                .error(&loc, format!("duplicate gate symbol `{}`", pref.symbol));
                        }
                        self.check_field_is(&loc, &pref.occupancy, "int");
                        self.check_expr(&loc, &pref.capacity, no_scope);
                    }
                }
                UpdateRule::Assign { field, expr } => {
                    self.check_field_is(&loc, field, "scalar");
                    self.check_expr(&loc, expr, no_scope);
                }
            }
        }
        self.report
    }
}

/// Statically validates a parsed configuration.
pub fn validate(config: &StructuralConfig) -> ValidationReport {
    Checker {
        config,
        report: ValidationReport::default(),
    }
    .run()
}

/// Validation against an environment binding: flags `action` use when the
/// environment has no actions.
pub fn validate_for_env(config: &StructuralConfig, has_action: bool) -> ValidationReport {
    let mut report = validate(config);
    if !has_action && uses_action(config) {
        report.issues.push(Issue {
            severity: Severity::Error,
            message: "`action` used but this environment has no actions".into(),
            location: "rules".into(),
        });
    }
    report
}

fn expr_uses_action(e: &Expr) -> bool {
    match e {
        Expr::ActionRef => true,
        Expr::Lit(_) | Expr::Ident(_) => false,
        Expr::Neg(x) => expr_uses_action(x),
        Expr::Bin(_, l, r) => expr_uses_action(l) || expr_uses_action(r),
        Expr::Call(_, args) => args.iter().any(expr_uses_action),
    }
}

fn sampler_uses_action(s: &CountSampler) -> bool {
    match s {
        CountSampler::Binomial { n, p } => expr_uses_action(n) || expr_uses_action(p),
        CountSampler::Poisson { rate } => expr_uses_action(rate),
        CountSampler::NegBinomial { mean, dispersion } => {
            expr_uses_action(mean) || expr_uses_action(dispersion)
        }
        CountSampler::Normal { mean, stdev, .. } => {
            expr_uses_action(mean) || expr_uses_action(stdev)
        }
        CountSampler::Deterministic(e) => expr_uses_action(e),
    }
}

/// Whether any rule reads the exogenous action.
pub fn uses_action(config: &StructuralConfig) -> bool {
    config.rules.iter().any(|rule| match rule {
        UpdateRule::CompartmentFlow { count, .. } => sampler_uses_action(count),
        UpdateRule::Accumulate { delta, .. } => sampler_uses_action(delta),
        UpdateRule::PipelineAdvance { .. } => false,
        UpdateRule::PipelineAppend {
            quantity, delay, ..
        } => expr_uses_action(quantity) || expr_uses_action(delay),
        UpdateRule::QueueService { demand, .. } => sampler_uses_action(demand),
        UpdateRule::RecordCountdown { .. } => false,
        UpdateRule::RecordHazard { prob, .. } => expr_uses_action(prob),
        UpdateRule::RecordSpawn { count, attrs, gate, .. } => {
            sampler_uses_action(count)
                || attrs.iter().any(|(_, init)| match init {
                    AttrInit::Expr(e) => expr_uses_action(e),
                    AttrInit::Sampler(s) => sampler_uses_action(s),
                    _ => false,
                })
                || gate.prefs.iter().any(|p| expr_uses_action(&p.capacity))
        }
        UpdateRule::Assign { expr, .. } => expr_uses_action(expr),
    })
}
