//! Build a playbook from deltas, replay it, and export it.

use promptscan::context::{
    apply_delta, replay, ContextDelta, DeltaOp, Playbook, PlaybookEntry, Section,
};

fn main() {
    let add = |id: &str, section, text: &str| DeltaOp::Add {
        entry: PlaybookEntry::new(id, section, text),
    };
    let deltas = vec![
        ContextDelta::new(vec![
            add(
                "strat-00001",
                Section::Strategies,
                "Read the whole table before summing a column.",
            ),
            add(
                "calc-00002",
                Section::Formulas,
                "Compound interest: FV = P(1 + r)^n with r as a decimal.",
            ),
        ]),
        ContextDelta::new(vec![
            DeltaOp::IncrementHelpful {
                id: "calc-00002".into(),
            },
            add(
                "err-00003",
                Section::Mistakes,
                "Percent rates are not decimals.",
            ),
        ]),
        ContextDelta::new(vec![
            DeltaOp::AmendText {
                id: "err-00003".into(),
                text: "Divide percent rates by 100 before compounding.".into(),
            },
            DeltaOp::IncrementHarmful {
                id: "strat-00001".into(),
            },
        ]),
    ];

    let mut pb = Playbook::new();
    for d in &deltas {
        pb = apply_delta(&pb, d).expect("delta applies");
        let s = d.summary();
        println!(
            "v{}: +{} ~{} h{} r{} -{} -> {} entries, {} tokens",
            pb.version(),
            s.adds,
            s.amends,
            s.helpful_marks,
            s.harmful_marks,
            s.removes,
            pb.len(),
            pb.token_size()
        );
    }

    // deltas referencing unknown ids are rejected and leave the input alone
    let bad = ContextDelta::new(vec![DeltaOp::Remove {
        id: "misc-99999".into(),
    }]);
    println!("bad delta: {}", apply_delta(&pb, &bad).unwrap_err());

    assert_eq!(replay(&Playbook::new(), &deltas).unwrap(), pb);
    println!("\n{}", pb.to_markdown());
}
