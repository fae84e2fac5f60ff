//! Canonical text rendering of configurations.
//!
//! Printing is a pure function of the AST, so structurally equal configs
//! render byte-identically and `parse(print(ast)) == ast`.

use std::fmt::Write;

use super::ast::*;

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        return "1e308".to_string();
    }
    if v == f64::NEG_INFINITY {
        return "-1e308".to_string();
    }
    if v.is_nan() {
        return "0".to_string();
    }
    format!("{v}")
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, _, _) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, _, _) => 2,
        Expr::Neg(_) => 3,
        _ => 4,
    }
}

fn fmt_expr_prec(e: &Expr, min: u8, out: &mut String) {
    let p = prec(e);
    let parens = p < min;
    if parens {
        out.push('(');
    }
    match e {
        Expr::Lit(v) => out.push_str(&fmt_num(*v)),
        Expr::Ident(name) => out.push_str(name),
        Expr::ActionRef => out.push_str("action"),
        Expr::Neg(inner) => {
            out.push('-');
            fmt_expr_prec(inner, 3, out);
        }
        Expr::Bin(op, l, r) => {
            let sym = match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => " * ",
                BinOp::Div => " / ",
            };
            fmt_expr_prec(l, p, out);
            out.push_str(sym);
            fmt_expr_prec(r, p + 1, out);
        }
        Expr::Call(func, args) => {
            out.push_str(func.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                fmt_expr_prec(a, 0, out);
            }
            out.push(')');
        }
    }
    if parens {
        out.push(')');
    }
}

pub(crate) fn fmt_expr(e: &Expr) -> String {
    let mut s = String::new();
    fmt_expr_prec(e, 0, &mut s);
    s
}

fn fmt_sampler(s: &CountSampler) -> String {
    match s {
        CountSampler::Binomial { n, p } => format!("Binomial({}, {})", fmt_expr(n), fmt_expr(p)),
        CountSampler::Poisson { rate } => format!("Poisson({})", fmt_expr(rate)),
        CountSampler::NegBinomial { mean, dispersion } => {
            format!("NegBinomial({}, {})", fmt_expr(mean), fmt_expr(dispersion))
        }
        CountSampler::Normal { mean, stdev, floor } => {
            if *floor == 0 {
                format!("Normal({}, {})", fmt_expr(mean), fmt_expr(stdev))
            } else {
                format!(
                    "Normal({}, {}, floor={})",
                    fmt_expr(mean),
                    fmt_expr(stdev),
                    floor
                )
            }
        }
        CountSampler::Deterministic(e) => format!("Deterministic({})", fmt_expr(e)),
    }
}

fn fmt_sym_map(map: &[(String, String)]) -> String {
    let inner: Vec<String> = map.iter().map(|(s, f)| format!("{s}: {f}")).collect();
    format!("{{{}}}", inner.join(", "))
}

fn fmt_attr_init(init: &AttrInit) -> String {
    match init {
        AttrInit::Expr(e) => fmt_expr(e),
        AttrInit::Sampler(s) => fmt_sampler(s),
        AttrInit::Bool(true) => "true".to_string(),
        AttrInit::Bool(false) => "false".to_string(),
        AttrInit::Sym(s) => format!("sym({s})"),
    }
}

fn fmt_gate(g: &CapacityGate) -> String {
    let mut s = format!("Gate(bed={}", g.bed_attr);
    if let Some(of) = &g.overflow_field {
        let _ = write!(s, ", overflow={of}");
    }
    let prefs: Vec<String> = g
        .prefs
        .iter()
        .map(|p| format!("({}, {}, {})", p.symbol, p.occupancy, fmt_expr(&p.capacity)))
        .collect();
    let _ = write!(s, ", try=[{}])", prefs.join(", "));
    s
}

fn fmt_rule(rule: &UpdateRule) -> String {
    match rule {
        UpdateRule::CompartmentFlow { from, to, count } => {
            format!("CompartmentFlow(from={from}, to={to}, count={})", fmt_sampler(count))
        }
        UpdateRule::Accumulate { field, delta, sign } => {
            if *sign < 0 {
                format!(
                    "Accumulate(field={field}, delta={}, sign=-1)",
                    fmt_sampler(delta)
                )
            } else {
                format!("Accumulate(field={field}, delta={})", fmt_sampler(delta))
            }
        }
        UpdateRule::PipelineAdvance {
            pipeline,
            deliver_to,
        } => format!("PipelineAdvance(pipeline={pipeline}, deliver_to={deliver_to})"),
        UpdateRule::PipelineAppend {
            pipeline,
            quantity,
            delay,
        } => format!(
            "PipelineAppend(pipeline={pipeline}, quantity={}, delay={})",
            fmt_expr(quantity),
            fmt_expr(delay)
        ),
        UpdateRule::QueueService {
            inventory,
            backlog,
            demand,
        } => format!(
            "QueueService(inventory={inventory}, backlog={backlog}, demand={})",
            fmt_sampler(demand)
        ),
        UpdateRule::RecordCountdown {
            records,
            timer_attr,
            age_attr,
            bed_attr,
            occupancy,
        } => {
            let mut s = format!("RecordCountdown(records={records}, timer={timer_attr}");
            if let Some(age) = age_attr {
                let _ = write!(s, ", age={age}");
            }
            let _ = write!(s, ", bed={bed_attr}, occupancy={}", fmt_sym_map(occupancy));
            s.push(')');
            s
        }
        UpdateRule::RecordHazard {
            records,
            prob,
            bed_attr,
            occupancy,
        } => format!(
            "RecordHazard(records={records}, prob={}, bed={bed_attr}, occupancy={})",
            fmt_expr(prob),
            fmt_sym_map(occupancy)
        ),
        UpdateRule::RecordSpawn {
            records,
            count,
            attrs,
            gate,
        } => {
            let attr_s: Vec<String> = attrs
                .iter()
                .map(|(a, init)| format!("{a}: {}", fmt_attr_init(init)))
                .collect();
            format!(
                "RecordSpawn(records={records}, count={}, attrs={{{}}}, gate={})",
                fmt_sampler(count),
                attr_s.join(", "),
                fmt_gate(gate)
            )
        }
        UpdateRule::Assign { field, expr } => {
            format!("Assign(field={field}, expr={})", fmt_expr(expr))
        }
    }
}

fn fmt_field_kind(kind: &FieldKind) -> String {
    match kind {
        FieldKind::Int => "int".to_string(),
        FieldKind::Float => "float".to_string(),
        FieldKind::Pipeline => "pipeline".to_string(),
        FieldKind::Records(attrs) => {
            let inner: Vec<String> = attrs.iter().map(|(n, k)| format!("{n}: {k}")).collect();
            format!("records({})", inner.join(", "))
        }
    }
}

/// Renders a configuration to its canonical text.
pub fn print_config(config: &StructuralConfig) -> String {
    let mut out = String::new();
    for line in config.description.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            let _ = writeln!(out, "# {line}");
        }
    }
    let _ = writeln!(out, "config {} {{", config.name);
    out.push_str("  params {\n");
    for d in &config.param_decls {
        let _ = writeln!(
            out,
            "    {} = {} in [{}, {}];",
            d.name,
            fmt_num(d.default),
            fmt_num(d.min),
            fmt_num(d.max)
        );
    }
    out.push_str("  }\n  state {\n");
    for f in &config.state_schema {
        let init = match &f.init {
            InitRule::Number(v) => fmt_num(*v),
            InitRule::Empty => "empty".to_string(),
        };
        let _ = writeln!(out, "    {} : {} = {};", f.name, fmt_field_kind(&f.kind), init);
    }
    out.push_str("  }\n  rules {\n");
    for r in &config.rules {
        let _ = writeln!(out, "    {};", fmt_rule(r));
    }
    out.push_str("  }\n}\n");
    out
}
