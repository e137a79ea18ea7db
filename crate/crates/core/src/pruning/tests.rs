use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{adam_step, OptimizerState, WarmupSchedule};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

fn vector_store(values: &[f64]) -> ParameterStore {
    let mut s = ParameterStore::new();
    s.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap(), true)
        .unwrap();
    s
}

fn flags(m: &PruningMask) -> Vec<u8> {
    m.flags().into_iter().map(u8::from).collect()
}

fn random_store(seed: u64, sizes: &[usize]) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParameterStore::new();
    s.insert("embedding", Tensor::zeros(vec![3]), false).unwrap();
    for (i, &n) in sizes.iter().enumerate() {
        let v = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.insert(format!("layer{i}"), Tensor::new(vec![n], v).unwrap(), true).unwrap();
    }
    s
}

#[test]
fn prune_examples() {
    let s = vector_store(&[0.5, -0.1, 0.3, -0.9]);
    let m0 = PruningMask::all_ones(&s, "t");
    let m1 = global_magnitude_prune(&s, &m0, 0.5).unwrap();
    assert_eq!(flags(&m1), [1, 0, 0, 1]);
    let m2 = global_magnitude_prune(&s, &m1, 0.5).unwrap();
    assert_eq!(flags(&m2), [0, 0, 0, 1]);
}

#[test]
fn equal_magnitudes_prune_lowest_flat_index() {
    let s = vector_store(&[0.2, -0.2, 0.2, -0.2]);
    let m = global_magnitude_prune(&s, &PruningMask::all_ones(&s, "t"), 0.5).unwrap();
    assert_eq!(flags(&m), [0, 0, 1, 1]);
}

#[test]
fn pruning_ranks_across_entries() {
    let mut s = ParameterStore::new();
    s.insert("a", Tensor::new(vec![2], vec![5.0, 6.0]).unwrap(), true).unwrap();
    s.insert("b", Tensor::new(vec![2], vec![0.1, 0.2]).unwrap(), true).unwrap();
    let m = global_magnitude_prune(&s, &PruningMask::all_ones(&s, "t"), 0.5).unwrap();
    assert_eq!(flags(&m), [1, 1, 0, 0]);
}

#[test]
fn prune_rejects_bad_rates_and_exhaustion() {
    let s = vector_store(&[1.0, 2.0]);
    let m = PruningMask::all_ones(&s, "t");
    for p in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(global_magnitude_prune(&s, &m, p).is_err());
    }
    let one = vector_store(&[1.0]);
    let m1 = PruningMask::all_ones(&one, "t");
    // ⌊0.5 · 1⌋ = 0: nothing to prune, still legal.
    assert_eq!(global_magnitude_prune(&one, &m1, 0.5).unwrap(), m1);
    assert!(global_magnitude_prune(&one, &PruningMask::all_zeros(&one, "t"), 0.5).is_err());
}

#[test]
fn expected_sparsity_values() {
    assert!((expected_sparsity(0.2, 2) - 0.36).abs() < 1e-12);
    assert!((expected_sparsity(0.2, 5) - 0.67232).abs() < 1e-12);
    assert_eq!(expected_sparsity(0.3, 0), 0.0);
}

#[test]
fn apply_mask_examples() {
    let s = vector_store(&[2.0, -3.0]);
    let m = PruningMask::from_flags(&s, "t", &[false, true]).unwrap();
    assert_eq!(apply_mask(&s, &m).unwrap().tensor(0).values(), &[0.0, -3.0]);
    assert!(apply_mask(&s, &PruningMask::all_ones(&s, "t")).unwrap().bit_eq(&s));

    let r = random_store(1, &[5, 4]);
    let z = apply_mask(&r, &PruningMask::all_zeros(&r, "t")).unwrap();
    assert!(z.tensor(1).values().iter().chain(z.tensor(2).values()).all(|&v| v == 0.0));
    assert!(z.tensor(0).bit_eq(r.tensor(0)));
}

#[test]
fn layout_mismatch_is_an_error() {
    let a = random_store(1, &[5, 4]);
    let b = random_store(1, &[5, 3]);
    let mb = PruningMask::all_ones(&b, "t");
    assert!(apply_mask(&a, &mb).is_err());
    assert!(mask_gradients(&a.zero_gradients(), &mb, &a).is_err());
    assert!(overlap(&PruningMask::all_ones(&a, "x"), &mb).is_err());
}

#[test]
fn mask_gradient_examples() {
    let s = vector_store(&[1.0, 1.0]);
    let mut g = s.zero_gradients();
    g.entry_mut(0).copy_from_slice(&[5.0, 7.0]);
    let m = PruningMask::from_flags(&s, "t", &[false, true]).unwrap();
    assert_eq!(mask_gradients(&g, &m, &s).unwrap().entry(0), &[0.0, 7.0]);
    assert_eq!(mask_gradients(&g, &PruningMask::all_ones(&s, "t"), &s).unwrap(), g);
}

#[test]
fn masked_scalars_survive_adam() {
    let mut s = random_store(3, &[6]);
    let before = s.clone();
    let m = PruningMask::from_flags(&s, "t", &[true, false, true, false, false, true]).unwrap();
    let mut st = OptimizerState::new(&s);
    let sched = WarmupSchedule::new(0.1, 0);
    for step in 0..5 {
        let mut g = s.zero_gradients();
        g.entry_mut(1).iter_mut().for_each(|v| *v = 1.0 + step as f64);
        let g = mask_gradients(&g, &m, &s).unwrap();
        adam_step(&mut s, &g, &mut st, &sched).unwrap();
    }
    for pos in 0..6 {
        let same = s.tensor(1).values()[pos].to_bits() == before.tensor(1).values()[pos].to_bits();
        assert_eq!(same, !m.keeps("layer0", pos));
    }
}

#[test]
fn overlap_examples() {
    let s = vector_store(&[1.0; 4]);
    let a = PruningMask::from_flags(&s, "i", &[true, true, false, false]).unwrap();
    let b = PruningMask::from_flags(&s, "j", &[false, true, true, false]).unwrap();
    assert_eq!(overlap(&a, &b).unwrap(), 1.0 / 3.0);
    assert_eq!(overlap(&a, &a).unwrap(), 1.0);
    let c = PruningMask::from_flags(&s, "k", &[false, false, true, true]).unwrap();
    assert_eq!(overlap(&a, &c).unwrap(), 0.0);
    let e = PruningMask::all_zeros(&s, "e");
    assert!(overlap(&e, &e).is_err());
}

#[test]
fn param_percent_examples() {
    // 64 of 100 prunable bits, nothing else.
    let s = vector_store(&[1.0; 100]);
    let flags64: Vec<bool> = (0..100).map(|i| i < 64).collect();
    let mut set = MaskSet::new();
    set.insert(PruningMask::from_flags(&s, "a", &flags64).unwrap()).unwrap();
    assert_eq!(param_percent(&set, &ParamMode::One("a".into())).unwrap(), 64.0);

    // Three disjoint 10% masks.
    let mut set = MaskSet::new();
    for t in 0..3 {
        let f: Vec<bool> = (0..100).map(|i| i / 10 == t).collect();
        set.insert(PruningMask::from_flags(&s, t.to_string(), &f).unwrap()).unwrap();
    }
    assert_eq!(param_percent(&set, &ParamMode::AllMultiTask).unwrap(), 30.0);
    assert_eq!(param_percent(&set, &ParamMode::AllSingleTask).unwrap(), 30.0);

    // 641 of 1000 survive in each of three tasks: 64.1 each, 192.3 as separate models.
    let s = vector_store(&[1.0; 1000]);
    let mut set = MaskSet::new();
    for t in 0..3 {
        let f: Vec<bool> = (0..1000).map(|i| (i + 100 * t) % 1000 < 641).collect();
        set.insert(PruningMask::from_flags(&s, format!("t{t}"), &f).unwrap()).unwrap();
    }
    let one = param_percent(&set, &ParamMode::One("t0".into())).unwrap();
    assert_eq!(one, 64.1);
    let all_single = param_percent(&set, &ParamMode::AllSingleTask).unwrap();
    assert!((all_single - 192.3).abs() < 1e-9);
    assert_eq!(all_single, 3.0 * one);
    assert!(param_percent(&set, &ParamMode::AllMultiTask).unwrap() <= 100.0);

    assert!("sideways".parse::<ParamMode>().is_err());
    assert_eq!("one:SEQ".parse::<ParamMode>().unwrap(), ParamMode::One("SEQ".into()));
    assert!(param_percent(&MaskSet::new(), &ParamMode::AllMultiTask).is_err());
}

#[test]
fn non_prunable_scalars_count_as_kept() {
    let r = random_store(0, &[7]);
    let mut set = MaskSet::new();
    set.insert(PruningMask::all_zeros(&r, "z")).unwrap();
    let pct = param_percent(&set, &ParamMode::One("z".into())).unwrap();
    assert_eq!(pct, 100.0 * 3.0 / 10.0);
}

fn iterated(store: &ParameterStore, p: f64, rounds: u32) -> Vec<PruningMask> {
    let mut masks = vec![PruningMask::all_ones(store, "t")];
    for _ in 0..rounds {
        let next = global_magnitude_prune(store, masks.last().unwrap(), p).unwrap();
        masks.push(next);
    }
    masks
}

proptest! {
    #[test]
    fn sparsity_law_and_monotonicity(
        seed in 0u64..500,
        sizes in prop::collection::vec(1usize..200, 1..4),
        p in 0.05f64..0.6,
        rounds in 0u32..6,
    ) {
        let store = random_store(seed, &sizes);
        let n = store.num_prunable_scalars();
        let masks = iterated(&store, p, rounds);
        for w in masks.windows(2) {
            prop_assert!(w[1].is_subset_of(&w[0]));
        }
        let survivors = masks.last().unwrap().surviving();
        prop_assert_eq!(survivors, surviving_after(n, p, rounds));
        let ideal = n as f64 * (1.0 - p).powi(rounds as i32);
        prop_assert!((survivors as f64 - ideal).abs() <= rounds as f64 + 1e-9);
    }

    #[test]
    fn overlap_matrix_properties(seed in 0u64..500, tasks in 1usize..5) {
        let store = random_store(seed, &[40, 25]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = MaskSet::new();
        for t in 0..tasks {
            let mut f: Vec<bool> = (0..65).map(|_| rng.gen_bool(0.5)).collect();
            f[t] = true;
            set.insert(PruningMask::from_flags(&store, t.to_string(), &f).unwrap()).unwrap();
        }
        let m = overlap_matrix(&set).unwrap();
        for i in 0..tasks {
            prop_assert_eq!(m[i][i], 1.0);
            for j in 0..tasks {
                prop_assert_eq!(m[i][j], m[j][i]);
                prop_assert!((0.0..=1.0).contains(&m[i][j]));
            }
        }
        let multi = param_percent(&set, &ParamMode::AllMultiTask).unwrap();
        let single = param_percent(&set, &ParamMode::AllSingleTask).unwrap();
        prop_assert!(multi <= 100.0 && multi <= single + 1e-9);
    }

    #[test]
    fn masking_is_idempotent(seed in 0u64..500) {
        let store = random_store(seed, &[30, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
        let f: Vec<bool> = (0..40).map(|_| rng.gen_bool(0.5)).collect();
        let m = PruningMask::from_flags(&store, "t", &f).unwrap();
        let once = apply_mask(&store, &m).unwrap();
        prop_assert!(apply_mask(&once, &m).unwrap().bit_eq(&once));
        let mut g = store.zero_gradients();
        for e in 0..g.per_entry.len() {
            g.entry_mut(e).iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let g1 = mask_gradients(&g, &m, &store).unwrap();
        prop_assert_eq!(mask_gradients(&g1, &m, &store).unwrap(), g1);
    }
}

#[test]
fn multitask_equals_sum_only_when_disjoint() {
    let s = vector_store(&[1.0; 8]);
    let mut set = MaskSet::new();
    set.insert(PruningMask::from_flags(&s, "a", &[true, true, false, false, false, false, false, false]).unwrap()).unwrap();
    set.insert(PruningMask::from_flags(&s, "b", &[false, true, true, false, false, false, false, false]).unwrap()).unwrap();
    let multi = param_percent(&set, &ParamMode::AllMultiTask).unwrap();
    let single = param_percent(&set, &ParamMode::AllSingleTask).unwrap();
    assert!(multi < single);
}
