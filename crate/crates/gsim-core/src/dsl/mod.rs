//! The simulator configuration language: parse, print, validate,
//! interpret, and analyze.

mod ast;
mod graph;
mod interp;
mod parser;
mod printer;
mod validate;

pub use ast::{
    AttrInit, BinOp, CapacityGate, CountSampler, Expr, FieldDecl, FieldKind, Func, GatePref,
    InitRule, ParameterDecl, ParameterVector, StructuralConfig, UpdateRule,
};
pub use graph::{dependency_graph, DependencyGraph};
pub use interp::{eval_expr, Bindings, ConfigError, Interpreter, StepHooks};
pub use parser::parse_config;
pub use printer::print_config;
pub use validate::{validate, validate_for_env, uses_action, Issue, Severity, ValidationReport};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use crate::state::{Action, StateValue, SystemState};

    const SIR_TEXT: &str = r#"
# Stochastic SIR with binomial transitions.
config sir {
  params {
    beta = 0.5 in [0, 2];
    gamma = 0.1 in [0, 1];
  }
  state {
    S : int = 990;
    I : int = 10;
    R : int = 0;
  }
  rules {
    CompartmentFlow(from=S, to=I, count=Binomial(S, 1 - exp(-(beta * I) / (S + I + R))));
    CompartmentFlow(from=I, to=R, count=Binomial(I, gamma));
  }
}
"#;

    fn sir_config() -> StructuralConfig {
        parse_config(SIR_TEXT).unwrap()
    }

    #[test]
    fn sir_parses_to_expected_shape() {
        let c = sir_config();
        assert_eq!(c.name, "sir");
        assert_eq!(c.param_decls.len(), 2);
        assert_eq!(c.state_schema.len(), 3);
        assert_eq!(c.rules.len(), 2);
        assert_eq!(c.description, "Stochastic SIR with binomial transitions.");
    }

    #[test]
    fn empty_input_is_a_parse_error() {
        let err = parse_config("").unwrap_err();
        assert!(err.message.contains("no config block"), "{err}");
        let err = parse_config("   # only a comment\n").unwrap_err();
        assert!(err.message.contains("no config block"), "{err}");
    }

    #[test]
    fn print_parse_is_ast_identity() {
        let c = sir_config();
        let printed = print_config(&c);
        let reparsed = parse_config(&printed).unwrap();
        assert_eq!(reparsed, c);
        // Printing is canonical: printing the reparsed AST is byte-identical.
        assert_eq!(print_config(&reparsed), printed);
    }

    #[test]
    fn config_with_no_rules_prints_and_reparses() {
        let text = "config t { params { } state { x : int = 0; } rules { } }";
        let c = parse_config(text).unwrap();
        assert!(c.rules.is_empty());
        let printed = print_config(&c);
        assert_eq!(parse_config(&printed).unwrap(), c);
    }

    #[test]
    fn duplicate_declarations_are_parse_errors() {
        let text = "config t { params { a = 0 in [0, 1]; a = 0 in [0, 1]; } state { } rules { } }";
        assert!(parse_config(text).unwrap_err().message.contains("duplicate"));
        let text = "config t { params { } state { x : int = 0; x : int = 1; } rules { } }";
        assert!(parse_config(text).unwrap_err().message.contains("duplicate"));
    }

    #[test]
    fn parse_error_reports_position() {
        let err = parse_config("config t {\n  params { a = ; }\n state {} rules {} }").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn validate_flags_undeclared_field() {
        let text = "config t { params { } state { A : int = 0; } rules { Assign(field=A, expr=Q + 1); } }";
        let c = parse_config(text).unwrap();
        let report = validate(&c);
        assert!(!report.ok());
        assert!(report.errors()[0].message.contains('Q'));
    }

    #[test]
    fn validate_flags_bad_bounds() {
        let text = "config t { params { a = 0.5 in [1, 0]; } state { } rules { } }";
        let report = validate(&parse_config(text).unwrap());
        assert!(!report.ok());
    }

    #[test]
    fn validate_flags_attr_outside_record_scope() {
        let text = r#"
config t {
  params { }
  state {
    x : int = 0;
    ps : records(age: int, bed: sym) = empty;
  }
  rules { Assign(field=x, expr=age + 1); }
}
"#;
        let report = validate(&parse_config(text).unwrap());
        assert!(!report.ok());
        assert!(report.errors()[0]
            .message
            .contains("outside a record-scoped rule"));
    }

    #[test]
    fn ground_truth_sir_validates_clean() {
        assert!(validate(&sir_config()).ok());
    }

    #[test]
    fn eval_expr_examples() {
        let clip = Expr::Call(
            Func::Clip,
            vec![Expr::Lit(1.5), Expr::Lit(0.0), Expr::Lit(1.0)],
        );
        let b = Bindings::default();
        assert_eq!(eval_expr(&clip, &b).unwrap(), 1.0);

        // 1 - exp(-beta * I / N): the infection probability form.
        let text = "config t { params { beta = 0.5 in [0, 2]; } state { I : int = 10; N : int = 1000; }
                    rules { } }";
        let _ = parse_config(text).unwrap();
        let expr = Expr::Bin(
            BinOp::Sub,
            Box::new(Expr::Lit(1.0)),
            Box::new(Expr::Call(
                Func::Exp,
                vec![Expr::Neg(Box::new(Expr::Bin(
                    BinOp::Div,
                    Box::new(Expr::Bin(
                        BinOp::Mul,
                        Box::new(Expr::ident("beta")),
                        Box::new(Expr::ident("I")),
                    )),
                    Box::new(Expr::ident("N")),
                )))],
            )),
        );
        let mut b = Bindings::default();
        b.params.insert("beta".into(), 0.5);
        b.fields.insert("I".into(), 10.0);
        b.fields.insert("N".into(), 1000.0);
        let got = eval_expr(&expr, &b).unwrap();
        // Oracle: direct evaluation of the closed form.
        let expected = 1.0 - (-0.5 * 10.0 / 1000.0f64).exp();
        assert_eq!(got, expected);
        assert!((got - 0.004987520807317687).abs() < 1e-15);

        let mut b = Bindings::default();
        b.fields.insert("S".into(), 990.0);
        assert_eq!(eval_expr(&Expr::ident("S"), &b).unwrap(), 990.0);
        assert!(matches!(
            eval_expr(&Expr::ident("missing"), &b),
            Err(crate::error::EvalError::Unbound(_))
        ));
    }

    #[test]
    fn total_function_policy() {
        let b = Bindings::default();
        let div = Expr::Bin(BinOp::Div, Box::new(Expr::Lit(3.0)), Box::new(Expr::Lit(0.0)));
        assert_eq!(eval_expr(&div, &b).unwrap(), 0.0);
        let log = Expr::Call(Func::Log, vec![Expr::Lit(-1.0)]);
        assert_eq!(eval_expr(&log, &b).unwrap(), -1.0e9);
        let pow = Expr::Call(Func::Pow, vec![Expr::Lit(-2.0), Expr::Lit(0.5)]);
        assert_eq!(eval_expr(&pow, &b).unwrap(), 0.0);
    }

    #[test]
    fn sir_step_zero_rates_is_identity() {
        let interp = Interpreter::new(&sir_config()).unwrap();
        let state = interp.init_state();
        let stream = derive_stream(1, &[0]);
        let next = interp.step(&[0.0, 0.0], &state, Action::NONE, &stream).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn sir_step_gamma_one_recovers_everyone() {
        let interp = Interpreter::new(&sir_config()).unwrap();
        let state = SystemState::build(vec![
            ("S", StateValue::Int(900)),
            ("I", StateValue::Int(50)),
            ("R", StateValue::Int(50)),
        ]);
        let stream = derive_stream(1, &[0]);
        let next = interp.step(&[0.0, 1.0], &state, Action::NONE, &stream).unwrap();
        assert_eq!(next.get("S").unwrap().as_int(), Some(900));
        assert_eq!(next.get("I").unwrap().as_int(), Some(0));
        assert_eq!(next.get("R").unwrap().as_int(), Some(100));
    }

    #[test]
    fn sir_rollout_conserves_population() {
        let interp = Interpreter::new(&sir_config()).unwrap();
        let stream = derive_stream(77, &[]);
        let actions = vec![Action::NONE; 60];
        let traj = interp
            .rollout(&[0.5, 0.1], &interp.init_state(), &actions, &stream)
            .unwrap();
        for s in traj.next_states() {
            let total = s.get("S").unwrap().as_int().unwrap()
                + s.get("I").unwrap().as_int().unwrap()
                + s.get("R").unwrap().as_int().unwrap();
            assert_eq!(total, 1000);
        }
    }

    #[test]
    fn rollout_horizon_zero_and_determinism() {
        let interp = Interpreter::new(&sir_config()).unwrap();
        let stream = derive_stream(3, &[]);
        let t0 = interp
            .rollout(&[0.5, 0.1], &interp.init_state(), &[], &stream)
            .unwrap();
        assert!(t0.steps.is_empty());
        let actions = vec![Action::NONE; 10];
        let a = interp
            .rollout(&[0.5, 0.1], &interp.init_state(), &actions, &stream)
            .unwrap();
        let b = interp
            .rollout(&[0.5, 0.1], &interp.init_state(), &actions, &stream)
            .unwrap();
        assert_eq!(a, b);
    }

    const SUPPLY_TEXT: &str = r#"
config supply {
  params {
    demand_rate = 5 in [0, 20];
    hold_cost = 1 in [0, 10];
    back_cost = 2 in [0, 10];
    lead_time = 2 in [1, 10];
  }
  state {
    inventory : int = 20;
    pipeline : pipeline = empty;
    backlog : int = 0;
    t : int = 0;
  }
  rules {
    PipelineAdvance(pipeline=pipeline, deliver_to=inventory);
    QueueService(inventory=inventory, backlog=backlog, demand=Poisson(demand_rate));
    PipelineAppend(pipeline=pipeline, quantity=action, delay=lead_time);
    Assign(field=t, expr=t + 1);
  }
}
"#;

    #[test]
    fn supply_deterministic_trace() {
        use crate::state::PipelineEntry;
        let c = parse_config(SUPPLY_TEXT).unwrap();
        let interp = Interpreter::new(&c).unwrap();
        let state = SystemState::build(vec![
            ("inventory", StateValue::Int(5)),
            (
                "pipeline",
                StateValue::Pipeline(vec![PipelineEntry { qty: 2, timer: 1 }]),
            ),
            ("backlog", StateValue::Int(3)),
            ("t", StateValue::Int(0)),
        ]);
        let stream = derive_stream(9, &[0]);
        // demand rate 0: deliver 2, fill backlog 3, no demand, order 6.
        let next = interp
            .step(&[0.0, 1.0, 2.0, 2.0], &state, Action::some(6), &stream)
            .unwrap();
        assert_eq!(next.get("inventory").unwrap().as_int(), Some(4));
        assert_eq!(next.get("backlog").unwrap().as_int(), Some(0));
        assert_eq!(next.get("t").unwrap().as_int(), Some(1));
        match next.get("pipeline").unwrap() {
            StateValue::Pipeline(entries) => {
                assert_eq!(entries, &vec![PipelineEntry { qty: 6, timer: 2 }]);
            }
            _ => panic!("pipeline kind"),
        }
    }

    #[test]
    fn supply_action_zero_appends_nothing() {
        let c = parse_config(SUPPLY_TEXT).unwrap();
        let interp = Interpreter::new(&c).unwrap();
        let stream = derive_stream(9, &[0]);
        let next = interp
            .step(
                &[0.0, 1.0, 2.0, 2.0],
                &interp.init_state(),
                Action::some(0),
                &stream,
            )
            .unwrap();
        match next.get("pipeline").unwrap() {
            StateValue::Pipeline(entries) => assert!(entries.is_empty()),
            _ => panic!("pipeline kind"),
        }
    }

    #[test]
    fn step_error_names_failing_rule() {
        // `action` used but no action supplied.
        let c = parse_config(SUPPLY_TEXT).unwrap();
        let interp = Interpreter::new(&c).unwrap();
        let stream = derive_stream(9, &[0]);
        let err = interp
            .step(&[0.0, 1.0, 2.0, 2.0], &interp.init_state(), Action::NONE, &stream)
            .unwrap_err();
        assert!(matches!(err, crate::error::StepError::MissingAction));
    }

    #[test]
    fn dependency_graph_assign_single_edge() {
        let text = "config t { params { } state { A : int = 0; B : int = 1; }
                    rules { Assign(field=A, expr=B); } }";
        let g = dependency_graph(&parse_config(text).unwrap());
        assert_eq!(g.named_edges(), vec![("B".to_string(), "A".to_string())]);
    }

    #[test]
    fn dependency_graph_empty_rules_has_no_edges() {
        let text = "config t { params { } state { A : int = 0; } rules { } }";
        let g = dependency_graph(&parse_config(text).unwrap());
        assert!(g.edges().is_empty());
    }

    #[test]
    fn dependency_graph_sir_manual_trace() {
        // Rule 0 writes {S, I}, reads {S, I, R}; rule 1 writes {I, R},
        // reads {I}.
        let g = dependency_graph(&sir_config());
        let mut expected: Vec<(String, String)> = vec![
            ("S", "S"),
            ("I", "S"),
            ("R", "S"),
            ("S", "I"),
            ("I", "I"),
            ("R", "I"),
            ("I", "R"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        expected.sort();
        let mut got = g.named_edges();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn unknown_rule_and_function_are_parse_errors() {
        let text = "config t { params { } state { x : int = 0; } rules { Frobnicate(field=x); } }";
        assert!(parse_config(text).unwrap_err().message.contains("unknown rule"));
        let text = "config t { params { } state { x : int = 0; } rules { Assign(field=x, expr=sqrt(x)); } }";
        assert!(parse_config(text)
            .unwrap_err()
            .message
            .contains("unknown function"));
    }
}
