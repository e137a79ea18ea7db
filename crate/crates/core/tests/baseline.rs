//! Reference values recorded in `BASELINE.md`.

use subnet_forge::data::{generate, Split, Target};
use subnet_forge::metrics::token_error_rate;
use subnet_forge::pipelines::{train_dense, RunConfig, Suite};
use subnet_forge::tasks::{TaskKind, TaskRegistry};

/// TER of reading each frame's token straight off its noisy one-hot channel,
/// SEQ eval split, noise 0.5, seed 0.
const ARGMAX_TER_SIGMA_HALF: &str = "0.4081";

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

#[test]
fn argmax_input_baseline_is_pinned() {
    let registry = TaskRegistry::three(0);
    let mut spec = registry.get("SEQ").unwrap().dataset.clone();
    spec.noise = 0.5;
    let ds = generate(&spec, Split::Eval).unwrap();
    let mut refs = Vec::new();
    let mut hyps = Vec::new();
    for ex in ds.iter() {
        let Target::Tokens(t) = &ex.target else { panic!("sequence target") };
        refs.push(t.clone());
        hyps.push((0..ex.len).map(|i| spec.label_offset + argmax(ex.frame(i))).collect::<Vec<_>>());
    }
    let ter = token_error_rate(&refs, &hyps).unwrap();
    assert_eq!(format!("{ter:.4}"), ARGMAX_TER_SIGMA_HALF);
    let file = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../BASELINE.md")).unwrap();
    assert!(file.contains(ARGMAX_TER_SIGMA_HALF));
}

#[test]
fn dense_default_meets_thresholds() {
    for seed in [0, 1, 2] {
        let config = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let suite = Suite::new(config).unwrap();
        let (dense, _) = train_dense(&suite, &suite.init_params::<f64>()).unwrap();
        let scores = suite.score_all(&dense, None).unwrap();
        for (task, s) in suite.tasks().iter().zip(&scores) {
            match task.kind {
                TaskKind::Classification => assert!(*s >= 0.90, "seed {seed} {}: accuracy {s}", task.id),
                TaskKind::Sequence => assert!(*s <= 0.10, "seed {seed} {}: TER {s}", task.id),
            }
        }
    }
}
