//! Lexer and recursive-descent parser for the configuration language.
//!
//! Grammar sketch (comments run `#` to end of line):
//!
//! ```text
//! config <name> {
//!   params { <name> = <float> in [<float>, <float>]; ... }
//!   state  { <field> : int|float|pipeline|records(<attr>: <kind>, ...) = <number>|empty; ... }
//!   rules  { <RuleKind>(<named args>); ... }
//! }
//! ```
//!
//! Expressions use infix `+ - * /`, unary `-`, calls `exp log pow min max
//! clip`, bare identifiers (resolved param-then-field-then-attr), and the
//! `action` keyword for the exogenous input.

use crate::error::ParseError;
use crate::state::AttrKind;

use super::ast::*;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Punct(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
    /// `#` comment lines seen before the first token, kept as description.
    leading_comments: Vec<String>,
    seen_token: bool,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
            leading_comments: Vec::new(),
            seen_token: false,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }

    fn next_token(&mut self) -> Result<Token, ParseError> {
        loop {
            match self.peek() {
                Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {
                    self.bump();
                }
                Some(b'#') => {
                    let mut text = String::new();
                    self.bump();
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        text.push(self.bump().unwrap() as char);
                    }
                    if !self.seen_token {
                        self.leading_comments.push(text.trim().to_string());
                    }
                }
                _ => break,
            }
        }
        let line = self.line;
        let col = self.col;
        let tok = match self.peek() {
            None => Tok::Eof,
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == b'_' {
                        s.push(self.bump().unwrap() as char);
                    } else {
                        break;
                    }
                }
                Tok::Ident(s)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_digit() || c == b'.' {
                        s.push(self.bump().unwrap() as char);
                    } else if c == b'e' || c == b'E' {
                        s.push(self.bump().unwrap() as char);
                        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                            s.push(self.bump().unwrap() as char);
                        }
                    } else {
                        break;
                    }
                }
                let v: f64 = s
                    .parse()
                    .map_err(|_| self.error(format!("bad number literal `{s}`")))?;
                Tok::Number(v)
            }
            Some(c) if b"{}()[],;=:+-*/".contains(&c) => {
                self.bump();
                Tok::Punct(c as char)
            }
            Some(c) => return Err(self.error(format!("unexpected character `{}`", c as char))),
        };
        if !matches!(tok, Tok::Eof) {
            self.seen_token = true;
        }
        Ok(Token { tok, line, col })
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    description: String,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat_punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Punct(p) if *p == c => {
                self.bump();
                Ok(())
            }
            other => Err(self.error(format!("expected `{c}`, found {}", show(other)))),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            other => Err(self.error(format!("expected `{kw}`, found {}", show(other)))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.error(format!("expected identifier, found {}", show(&other)))),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        // Allow a leading minus in numeric positions (priors, sign).
        let neg = matches!(self.peek(), Tok::Punct('-'));
        if neg {
            self.bump();
        }
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            Tok::Punct('+') if !neg => {
                self.bump();
                self.number()
            }
            other => Err(self.error(format!("expected number, found {}", show(&other)))),
        }
    }

    fn config(&mut self) -> Result<StructuralConfig, ParseError> {
        if matches!(self.peek(), Tok::Eof) {
            return Err(self.error("no config block"));
        }
        self.eat_keyword("config")?;
        let name = self.ident()?;
        self.eat_punct('{')?;

        self.eat_keyword("params")?;
        self.eat_punct('{')?;
        let mut param_decls = Vec::new();
        while !matches!(self.peek(), Tok::Punct('}')) {
            let decl = self.param_decl()?;
            if param_decls.iter().any(|d: &ParameterDecl| d.name == decl.name) {
                return Err(self.error(format!("duplicate parameter `{}`", decl.name)));
            }
            param_decls.push(decl);
        }
        self.eat_punct('}')?;

        self.eat_keyword("state")?;
        self.eat_punct('{')?;
        let mut state_schema: Vec<FieldDecl> = Vec::new();
        while !matches!(self.peek(), Tok::Punct('}')) {
            let decl = self.field_decl()?;
            if state_schema.iter().any(|d| d.name == decl.name) {
                return Err(self.error(format!("duplicate field `{}`", decl.name)));
            }
            state_schema.push(decl);
        }
        self.eat_punct('}')?;

        self.eat_keyword("rules")?;
        self.eat_punct('{')?;
        let mut rules = Vec::new();
        while !matches!(self.peek(), Tok::Punct('}')) {
            rules.push(self.rule()?);
            self.eat_punct(';')?;
        }
        self.eat_punct('}')?;

        self.eat_punct('}')?;
        Ok(StructuralConfig {
            name,
            description: self.description.clone(),
            param_decls,
            state_schema,
            rules,
        })
    }

    fn param_decl(&mut self) -> Result<ParameterDecl, ParseError> {
        let name = self.ident()?;
        self.eat_punct('=')?;
        let default = self.number()?;
        self.eat_keyword("in")?;
        self.eat_punct('[')?;
        let min = self.number()?;
        self.eat_punct(',')?;
        let max = self.number()?;
        self.eat_punct(']')?;
        self.eat_punct(';')?;
        Ok(ParameterDecl {
            name,
            default,
            min,
            max,
        })
    }

    fn field_decl(&mut self) -> Result<FieldDecl, ParseError> {
        let name = self.ident()?;
        self.eat_punct(':')?;
        let kind_name = self.ident()?;
        let kind = match kind_name.as_str() {
            "int" => FieldKind::Int,
            "float" => FieldKind::Float,
            "pipeline" => FieldKind::Pipeline,
            "records" => {
                self.eat_punct('(')?;
                let mut attrs = Vec::new();
                loop {
                    let attr = self.ident()?;
                    self.eat_punct(':')?;
                    let k = self.attr_kind()?;
                    if attrs.iter().any(|(n, _): &(String, AttrKind)| n == &attr) {
                        return Err(self.error(format!("duplicate attribute `{attr}`")));
                    }
                    attrs.push((attr, k));
                    if matches!(self.peek(), Tok::Punct(',')) {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.eat_punct(')')?;
                FieldKind::Records(attrs)
            }
            other => return Err(self.error(format!("unknown field kind `{other}`"))),
        };
        self.eat_punct('=')?;
        let init = match self.peek() {
            Tok::Ident(s) if s == "empty" => {
                self.bump();
                InitRule::Empty
            }
            _ => InitRule::Number(self.number()?),
        };
        self.eat_punct(';')?;
        Ok(FieldDecl { name, kind, init })
    }

    fn attr_kind(&mut self) -> Result<AttrKind, ParseError> {
        let name = self.ident()?;
        match name.as_str() {
            "int" => Ok(AttrKind::Int),
            "float" => Ok(AttrKind::Float),
            "bool" => Ok(AttrKind::Bool),
            "sym" => Ok(AttrKind::Sym),
            other => Err(self.error(format!("unknown attribute kind `{other}`"))),
        }
    }

    /// Parses `name = <value>` pairs until the closing paren, handing each
    /// value to `take` by argument name.
    fn named_args<F>(&mut self, rule: &str, mut take: F) -> Result<(), ParseError>
    where
        F: FnMut(&mut Self, &str) -> Result<(), ParseError>,
    {
        self.eat_punct('(')?;
        if matches!(self.peek(), Tok::Punct(')')) {
            self.bump();
            return Ok(());
        }
        loop {
            let key = self.ident()?;
            self.eat_punct('=')?;
            take(self, &key).map_err(|e| ParseError {
                line: e.line,
                col: e.col,
                message: format!("{rule}: argument `{key}`: {}", e.message),
            })?;
            if matches!(self.peek(), Tok::Punct(',')) {
                self.bump();
            } else {
                break;
            }
        }
        self.eat_punct(')')?;
        Ok(())
    }

    fn require<T>(&self, rule: &str, arg: &str, v: Option<T>) -> Result<T, ParseError> {
        v.ok_or_else(|| self.error(format!("{rule}: missing argument `{arg}`")))
    }

    fn rule(&mut self) -> Result<UpdateRule, ParseError> {
        let kind = self.ident()?;
        match kind.as_str() {
            "CompartmentFlow" => {
                let (mut from, mut to, mut count) = (None, None, None);
                self.named_args("CompartmentFlow", |p, key| {
                    match key {
                        "from" => from = Some(p.ident()?),
                        "to" => to = Some(p.ident()?),
                        "count" => count = Some(p.sampler()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::CompartmentFlow {
                    from: self.require("CompartmentFlow", "from", from)?,
                    to: self.require("CompartmentFlow", "to", to)?,
                    count: self.require("CompartmentFlow", "count", count)?,
                })
            }
            "Accumulate" => {
                let (mut field, mut delta, mut sign) = (None, None, None);
                self.named_args("Accumulate", |p, key| {
                    match key {
                        "field" => field = Some(p.ident()?),
                        "delta" => delta = Some(p.sampler()?),
                        "sign" => sign = Some(p.number()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                let sign = match sign.unwrap_or(1.0) {
                    v if v == 1.0 => 1,
                    v if v == -1.0 => -1,
                    v => return Err(self.error(format!("sign must be 1 or -1, got {v}"))),
                };
                Ok(UpdateRule::Accumulate {
                    field: self.require("Accumulate", "field", field)?,
                    delta: self.require("Accumulate", "delta", delta)?,
                    sign,
                })
            }
            "PipelineAdvance" => {
                let (mut pipeline, mut deliver_to) = (None, None);
                self.named_args("PipelineAdvance", |p, key| {
                    match key {
                        "pipeline" => pipeline = Some(p.ident()?),
                        "deliver_to" => deliver_to = Some(p.ident()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::PipelineAdvance {
                    pipeline: self.require("PipelineAdvance", "pipeline", pipeline)?,
                    deliver_to: self.require("PipelineAdvance", "deliver_to", deliver_to)?,
                })
            }
            "PipelineAppend" => {
                let (mut pipeline, mut quantity, mut delay) = (None, None, None);
                self.named_args("PipelineAppend", |p, key| {
                    match key {
                        "pipeline" => pipeline = Some(p.ident()?),
                        "quantity" => quantity = Some(p.expr()?),
                        "delay" => delay = Some(p.expr()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::PipelineAppend {
                    pipeline: self.require("PipelineAppend", "pipeline", pipeline)?,
                    quantity: self.require("PipelineAppend", "quantity", quantity)?,
                    delay: self.require("PipelineAppend", "delay", delay)?,
                })
            }
            "QueueService" => {
                let (mut inventory, mut backlog, mut demand) = (None, None, None);
                self.named_args("QueueService", |p, key| {
                    match key {
                        "inventory" => inventory = Some(p.ident()?),
                        "backlog" => backlog = Some(p.ident()?),
                        "demand" => demand = Some(p.sampler()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::QueueService {
                    inventory: self.require("QueueService", "inventory", inventory)?,
                    backlog: self.require("QueueService", "backlog", backlog)?,
                    demand: self.require("QueueService", "demand", demand)?,
                })
            }
            "RecordCountdown" => {
                let (mut records, mut timer, mut age, mut bed, mut occupancy) =
                    (None, None, None, None, None);
                self.named_args("RecordCountdown", |p, key| {
                    match key {
                        "records" => records = Some(p.ident()?),
                        "timer" => timer = Some(p.ident()?),
                        "age" => age = Some(p.ident()?),
                        "bed" => bed = Some(p.ident()?),
                        "occupancy" => occupancy = Some(p.sym_map()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::RecordCountdown {
                    records: self.require("RecordCountdown", "records", records)?,
                    timer_attr: self.require("RecordCountdown", "timer", timer)?,
                    age_attr: age,
                    bed_attr: self.require("RecordCountdown", "bed", bed)?,
                    occupancy: self.require("RecordCountdown", "occupancy", occupancy)?,
                })
            }
            "RecordHazard" => {
                let (mut records, mut prob, mut bed, mut occupancy) = (None, None, None, None);
                self.named_args("RecordHazard", |p, key| {
                    match key {
                        "records" => records = Some(p.ident()?),
                        "prob" => prob = Some(p.expr()?),
                        "bed" => bed = Some(p.ident()?),
                        "occupancy" => occupancy = Some(p.sym_map()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::RecordHazard {
                    records: self.require("RecordHazard", "records", records)?,
                    prob: self.require("RecordHazard", "prob", prob)?,
                    bed_attr: self.require("RecordHazard", "bed", bed)?,
                    occupancy: self.require("RecordHazard", "occupancy", occupancy)?,
                })
            }
            "RecordSpawn" => {
                let (mut records, mut count, mut attrs, mut gate) = (None, None, None, None);
                self.named_args("RecordSpawn", |p, key| {
                    match key {
                        "records" => records = Some(p.ident()?),
                        "count" => count = Some(p.sampler()?),
                        "attrs" => attrs = Some(p.attr_map()?),
                        "gate" => gate = Some(p.gate()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::RecordSpawn {
                    records: self.require("RecordSpawn", "records", records)?,
                    count: self.require("RecordSpawn", "count", count)?,
                    attrs: self.require("RecordSpawn", "attrs", attrs)?,
                    gate: self.require("RecordSpawn", "gate", gate)?,
                })
            }
            "Assign" => {
                let (mut field, mut expr) = (None, None);
                self.named_args("Assign", |p, key| {
                    match key {
                        "field" => field = Some(p.ident()?),
                        "expr" => expr = Some(p.expr()?),
                        other => return Err(p.error(format!("unknown argument `{other}`"))),
                    }
                    Ok(())
                })?;
                Ok(UpdateRule::Assign {
                    field: self.require("Assign", "field", field)?,
                    expr: self.require("Assign", "expr", expr)?,
                })
            }
            other => Err(self.error(format!("unknown rule kind `{other}`"))),
        }
    }

    /// `{sym: field, sym: field}`
    fn sym_map(&mut self) -> Result<Vec<(String, String)>, ParseError> {
        self.eat_punct('{')?;
        let mut out = Vec::new();
        while !matches!(self.peek(), Tok::Punct('}')) {
            let sym = self.ident()?;
            self.eat_punct(':')?;
            let field = self.ident()?;
            if out.iter().any(|(s, _): &(String, String)| s == &sym) {
                return Err(self.error(format!("duplicate symbol `{sym}`")));
            }
            out.push((sym, field));
            if matches!(self.peek(), Tok::Punct(',')) {
                self.bump();
            }
        }
        self.eat_punct('}')?;
        Ok(out)
    }

    /// `{attr: <init>, ...}` where init is `true | false | sym(name) |
    /// <sampler> | <expr>`.
    fn attr_map(&mut self) -> Result<Vec<(String, AttrInit)>, ParseError> {
        self.eat_punct('{')?;
        let mut out = Vec::new();
        while !matches!(self.peek(), Tok::Punct('}')) {
            let attr = self.ident()?;
            self.eat_punct(':')?;
            let init = self.attr_init()?;
            if out.iter().any(|(a, _): &(String, AttrInit)| a == &attr) {
                return Err(self.error(format!("duplicate attribute `{attr}`")));
            }
            out.push((attr, init));
            if matches!(self.peek(), Tok::Punct(',')) {
                self.bump();
            }
        }
        self.eat_punct('}')?;
        Ok(out)
    }

    fn attr_init(&mut self) -> Result<AttrInit, ParseError> {
        if let Tok::Ident(name) = self.peek().clone() {
            match name.as_str() {
                "true" => {
                    self.bump();
                    return Ok(AttrInit::Bool(true));
                }
                "false" => {
                    self.bump();
                    return Ok(AttrInit::Bool(false));
                }
                "sym" => {
                    self.bump();
                    self.eat_punct('(')?;
                    let s = self.ident()?;
                    self.eat_punct(')')?;
                    return Ok(AttrInit::Sym(s));
                }
                _ if is_sampler_name(&name) => {
                    return Ok(AttrInit::Sampler(self.sampler()?));
                }
                _ => {}
            }
        }
        Ok(AttrInit::Expr(self.expr()?))
    }

    /// `Gate(bed=<attr>, overflow=<field>, try=[(sym, occ_field, cap_expr), ...])`
    fn gate(&mut self) -> Result<CapacityGate, ParseError> {
        self.eat_keyword("Gate")?;
        let (mut bed, mut overflow, mut prefs) = (None, None, None);
        self.named_args("Gate", |p, key| {
            match key {
                "bed" => bed = Some(p.ident()?),
                "overflow" => overflow = Some(p.ident()?),
                "try" => {
                    p.eat_punct('[')?;
                    let mut list = Vec::new();
                    while !matches!(p.peek(), Tok::Punct(']')) {
                        p.eat_punct('(')?;
                        let symbol = p.ident()?;
                        p.eat_punct(',')?;
                        let occupancy = p.ident()?;
                        p.eat_punct(',')?;
                        let capacity = p.expr()?;
                        p.eat_punct(')')?;
                        list.push(GatePref {
                            symbol,
                            occupancy,
                            capacity,
                        });
                        if matches!(p.peek(), Tok::Punct(',')) {
                            p.bump();
                        }
                    }
                    p.eat_punct(']')?;
                    prefs = Some(list);
                }
                other => return Err(p.error(format!("unknown argument `{other}`"))),
            }
            Ok(())
        })?;
        Ok(CapacityGate {
            bed_attr: self.require("Gate", "bed", bed)?,
            overflow_field: overflow,
            prefs: self.require("Gate", "try", prefs)?,
        })
    }

    fn sampler(&mut self) -> Result<CountSampler, ParseError> {
        let name = self.ident()?;
        match name.as_str() {
            "Binomial" => {
                self.eat_punct('(')?;
                let n = self.expr()?;
                self.eat_punct(',')?;
                let p = self.expr()?;
                self.eat_punct(')')?;
                Ok(CountSampler::Binomial { n, p })
            }
            "Poisson" => {
                self.eat_punct('(')?;
                let rate = self.expr()?;
                self.eat_punct(')')?;
                Ok(CountSampler::Poisson { rate })
            }
            "NegBinomial" => {
                self.eat_punct('(')?;
                let mean = self.expr()?;
                self.eat_punct(',')?;
                let dispersion = self.expr()?;
                self.eat_punct(')')?;
                Ok(CountSampler::NegBinomial { mean, dispersion })
            }
            "Normal" => {
                self.eat_punct('(')?;
                let mean = self.expr()?;
                self.eat_punct(',')?;
                let stdev = self.expr()?;
                let mut floor = 0i64;
                if matches!(self.peek(), Tok::Punct(',')) {
                    self.bump();
                    self.eat_keyword("floor")?;
                    self.eat_punct('=')?;
                    floor = self.number()? as i64;
                }
                self.eat_punct(')')?;
                Ok(CountSampler::Normal { mean, stdev, floor })
            }
            "Deterministic" => {
                self.eat_punct('(')?;
                let e = self.expr()?;
                self.eat_punct(')')?;
                Ok(CountSampler::Deterministic(e))
            }
            other => Err(self.error(format!("unknown sampler `{other}`"))),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Punct('+') => BinOp::Add,
                Tok::Punct('-') => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct('*') => BinOp::Mul,
                Tok::Punct('/') => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Tok::Punct('-')) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr::Lit(v))
            }
            Tok::Punct('(') => {
                self.bump();
                let e = self.expr()?;
                self.eat_punct(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if name == "action" {
                    return Ok(Expr::ActionRef);
                }
                if matches!(self.peek(), Tok::Punct('(')) {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| self.error(format!("unknown function `{name}`")))?;
                    self.bump();
                    let mut args = Vec::new();
                    while !matches!(self.peek(), Tok::Punct(')')) {
                        args.push(self.expr()?);
                        if matches!(self.peek(), Tok::Punct(',')) {
                            self.bump();
                        }
                    }
                    self.eat_punct(')')?;
                    if args.len() != func.arity() {
                        return Err(self.error(format!(
                            "`{}` takes {} arguments, got {}",
                            func.name(),
                            func.arity(),
                            args.len()
                        )));
                    }
                    return Ok(Expr::Call(func, args));
                }
                Ok(Expr::Ident(name))
            }
            other => Err(self.error(format!("expected expression, found {}", show(&other)))),
        }
    }
}

fn is_sampler_name(name: &str) -> bool {
    matches!(
        name,
        "Binomial" | "Poisson" | "NegBinomial" | "Normal" | "Deterministic"
    )
}

fn show(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(v) => format!("`{v}`"),
        Tok::Punct(c) => format!("`{c}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

/// Parses a configuration from text.
pub fn parse_config(text: &str) -> Result<StructuralConfig, ParseError> {
    let mut lexer = Lexer::new(text);
    let mut tokens = Vec::new();
    loop {
        let t = lexer.next_token()?;
        let eof = matches!(t.tok, Tok::Eof);
        tokens.push(t);
        if eof {
            break;
        }
    }
    let description = lexer.leading_comments.join("\n");
    let mut parser = Parser {
        tokens,
        pos: 0,
        description,
    };
    let config = parser.config()?;
    match parser.peek() {
        Tok::Eof => Ok(config),
        other => Err(parser.error(format!("trailing input: {}", show(other)))),
    }
}
