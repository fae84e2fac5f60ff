//! Read/write dependency structure over state fields.

use std::collections::BTreeSet;

use super::ast::*;

/// Directed graph over state fields: edge `j -> i` iff some rule that
/// writes field `i` reads field `j` (through expressions, sampler
/// arguments, gate capacities, or the rule's own operands).
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    pub nodes: Vec<String>,
    adj: Vec<Vec<bool>>,
}

impl DependencyGraph {
    pub fn empty(nodes: Vec<String>) -> DependencyGraph {
        let n = nodes.len();
        DependencyGraph {
            nodes,
            adj: vec![vec![false; n]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge(&self, src: usize, dst: usize) -> bool {
        self.adj[src][dst]
    }

    pub fn set_edge(&mut self, src: usize, dst: usize) {
        self.adj[src][dst] = true;
    }

    /// Directed edges as (src, dst) index pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (src, row) in self.adj.iter().enumerate() {
            for (dst, &on) in row.iter().enumerate() {
                if on {
                    out.push((src, dst));
                }
            }
        }
        out
    }

    /// Directed edges as (src, dst) field names.
    pub fn named_edges(&self) -> Vec<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(s, d)| (self.nodes[s].clone(), self.nodes[d].clone()))
            .collect()
    }
}

fn expr_fields(expr: &Expr, config: &StructuralConfig, out: &mut BTreeSet<usize>) {
    match expr {
        Expr::Ident(name) => {
            if config.param_index(name).is_none() {
                if let Some(i) = config.field_index(name) {
                    out.insert(i);
                }
            }
        }
        Expr::Neg(e) => expr_fields(e, config, out),
        Expr::Bin(_, l, r) => {
            expr_fields(l, config, out);
            expr_fields(r, config, out);
        }
        Expr::Call(_, args) => {
            for a in args {
                expr_fields(a, config, out);
            }
        }
        Expr::Lit(_) | Expr::ActionRef => {}
    }
}

fn sampler_fields(s: &CountSampler, config: &StructuralConfig, out: &mut BTreeSet<usize>) {
    match s {
        CountSampler::Binomial { n, p } => {
            expr_fields(n, config, out);
            expr_fields(p, config, out);
        }
        CountSampler::Poisson { rate } => expr_fields(rate, config, out),
        CountSampler::NegBinomial { mean, dispersion } => {
            expr_fields(mean, config, out);
            expr_fields(dispersion, config, out);
        }
        CountSampler::Normal { mean, stdev, .. } => {
            expr_fields(mean, config, out);
            expr_fields(stdev, config, out);
        }
        CountSampler::Deterministic(e) => expr_fields(e, config, out),
    }
}

/// Computes the field dependency graph of a validated configuration.
pub fn dependency_graph(config: &StructuralConfig) -> DependencyGraph {
    let nodes: Vec<String> = config.state_schema.iter().map(|f| f.name.clone()).collect();
    let mut graph = DependencyGraph::empty(nodes);
    let field = |name: &str| config.field_index(name);

    for rule in &config.rules {
        let mut reads: BTreeSet<usize> = BTreeSet::new();
        let mut writes: BTreeSet<usize> = BTreeSet::new();
        match rule {
            UpdateRule::CompartmentFlow { from, to, count } => {
                sampler_fields(count, config, &mut reads);
                // The flow cap reads the source field.
                reads.extend(field(from));
                writes.extend(field(from));
                writes.extend(field(to));
            }
            UpdateRule::Accumulate { field: f, delta, .. } => {
                sampler_fields(delta, config, &mut reads);
                reads.extend(field(f));
                writes.extend(field(f));
            }
            UpdateRule::PipelineAdvance {
                pipeline,
                deliver_to,
            } => {
                reads.extend(field(pipeline));
                reads.extend(field(deliver_to));
                writes.extend(field(pipeline));
                writes.extend(field(deliver_to));
            }
            UpdateRule::PipelineAppend {
                pipeline,
                quantity,
                delay,
            } => {
                expr_fields(quantity, config, &mut reads);
                expr_fields(delay, config, &mut reads);
                reads.extend(field(pipeline));
                writes.extend(field(pipeline));
            }
            UpdateRule::QueueService {
                inventory,
                backlog,
                demand,
            } => {
                sampler_fields(demand, config, &mut reads);
                reads.extend(field(inventory));
                reads.extend(field(backlog));
                writes.extend(field(inventory));
                writes.extend(field(backlog));
            }
            UpdateRule::RecordCountdown {
                records, occupancy, ..
            } => {
                reads.extend(field(records));
                writes.extend(field(records));
                for (_, occ) in occupancy {
                    reads.extend(field(occ));
                    writes.extend(field(occ));
                }
            }
            UpdateRule::RecordHazard {
                records,
                prob,
                occupancy,
                ..
            } => {
                expr_fields(prob, config, &mut reads);
                reads.extend(field(records));
                writes.extend(field(records));
                for (_, occ) in occupancy {
                    reads.extend(field(occ));
                    writes.extend(field(occ));
                }
            }
            UpdateRule::RecordSpawn {
                records,
                count,
                attrs,
                gate,
            } => {
                sampler_fields(count, config, &mut reads);
                for (_, init) in attrs {
                    match init {
                        AttrInit::Expr(e) => expr_fields(e, config, &mut reads),
                        AttrInit::Sampler(s) => sampler_fields(s, config, &mut reads),
                        _ => {}
                    }
                }
                reads.extend(field(records));
                writes.extend(field(records));
                for pref in &gate.prefs {
                    expr_fields(&pref.capacity, config, &mut reads);
                    reads.extend(field(&pref.occupancy));
                    writes.extend(field(&pref.occupancy));
                }
                if let Some(of) = &gate.overflow_field {
                    reads.extend(field(of));
                    writes.extend(field(of));
                }
            }
            UpdateRule::Assign { field: f, expr } => {
                expr_fields(expr, config, &mut reads);
                writes.extend(field(f));
            }
        }
        for &w in &writes {
            for &r in &reads {
                graph.set_edge(r, w);
            }
        }
    }
    graph
}
