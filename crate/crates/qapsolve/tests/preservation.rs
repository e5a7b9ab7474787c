//! Enumeration harness for the dual-state invariants.
//!
//! On instances small enough to enumerate every permutation, the dual
//! evaluation must reproduce the exact objective after any sequence of
//! ascent operations, all stored entries must stay nonnegative, the bound
//! must grow monotonically, and complement transfers must conserve class
//! sums and be idempotent.

#![allow(clippy::needless_range_loop)]

use qapsolve::bnb::{
    branch_children, select_line, BranchMode, LineChoice, LineKind, Node, SolveConfig,
};
use qapsolve::instance::{evaluate, parse_instance, Permutation, QapInstance};
use qapsolve::rlt::{
    dual_ascent_rlt1, dual_ascent_rlt2, init_dual, AscentConfig, DualState, RltLevel, SubQap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, n: usize, hi: i64) -> QapInstance {
    let mut text = format!("{n}");
    for _ in 0..2 * n * n {
        text.push_str(&format!(" {}", rng.gen_range(0..=hi)));
    }
    parse_instance(text.as_bytes()).unwrap()
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    permute(&mut items, 0, &mut |p| out.push(p.to_vec()));
    out
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Checks the preservation invariant over every permutation.
fn assert_preserved(inst: &QapInstance, state: &DualState, perms: &[Vec<usize>], tag: &str) {
    for p in perms {
        let exact = evaluate(inst, &Permutation::new(p.clone()).unwrap()) as f64;
        let dual = state.evaluate_permutation(p);
        let tol = 1e-6 * exact.abs().max(1.0);
        assert!(
            (dual - exact).abs() <= tol,
            "{tag}: dual evaluation {dual} != exact {exact} for {p:?}"
        );
    }
}

/// The seven Algorithm-1 operations in loop order.
fn apply_op(state: &mut DualState, op: usize) {
    match op {
        0 => state.spread_b_to_c(),
        1 => state.spread_c_to_d(),
        2 => state.transfer_complements_d(),
        3 => state.concentrate_d_to_c(),
        4 => state.transfer_complements_c(),
        5 => state.concentrate_c_to_b(),
        6 => {
            state.concentrate_b_to_lb();
        }
        _ => unreachable!(),
    }
}

const OP_NAMES: [&str; 7] = [
    "spread_b_to_c",
    "spread_c_to_d",
    "transfer_complements_d",
    "concentrate_d_to_c",
    "transfer_complements_c",
    "concentrate_c_to_b",
    "concentrate_b_to_lb",
];

#[test]
fn p1_preservation_after_every_prefix_n5() {
    let perms = all_permutations(5);
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 5, 20);
        let sub = SubQap::from_instance(&inst);
        let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
        assert_preserved(&inst, &state, &perms, "init");
        for round in 0..2 {
            for op in 0..7 {
                apply_op(&mut state, op);
                assert_preserved(
                    &inst,
                    &state,
                    &perms,
                    &format!("seed {seed} round {round} after {}", OP_NAMES[op]),
                );
                assert!(
                    state.min_entry() >= 0.0,
                    "negative entry after {}",
                    OP_NAMES[op]
                );
            }
        }
    }
}

#[test]
fn p1_preservation_n4_and_n6() {
    for (seed, n) in [(11u64, 4usize), (12, 6)] {
        let perms = all_permutations(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 15);
        let sub = SubQap::from_instance(&inst);
        let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
        for op in 0..7 {
            apply_op(&mut state, op);
            assert_preserved(
                &inst,
                &state,
                &perms,
                &format!("n={n} after {}", OP_NAMES[op]),
            );
        }
    }
}

#[test]
fn p1_preservation_under_random_op_sequences() {
    let perms = all_permutations(5);
    for seed in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inst = random_instance(&mut rng, 5, 20);
        let sub = SubQap::from_instance(&inst);
        let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
        for step in 0..12 {
            let op = rng.gen_range(0..7);
            apply_op(&mut state, op);
            assert_preserved(
                &inst,
                &state,
                &perms,
                &format!("seed {seed} step {step} op {}", OP_NAMES[op]),
            );
            assert!(state.min_entry() >= 0.0);
        }
    }
}

#[test]
fn p2_rlt1_ascent_keeps_entries_nonnegative_and_preserves() {
    let perms = all_permutations(5);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let inst = random_instance(&mut rng, 5, 20);
        let sub = SubQap::from_instance(&inst);
        let mut state = init_dual(&sub, RltLevel::Rlt1, None).unwrap();
        let cfg = AscentConfig {
            k: 1e-6,
            max_iters: 20,
            ..AscentConfig::default()
        };
        let r = dual_ascent_rlt1(&mut state, 1e12, &cfg);
        assert!(state.min_entry() >= 0.0);
        assert!(r.lb >= 0.0);
        // D-free evaluation: the state has no D tensor, and B/C/lb alone
        // must still preserve costs.
        assert_preserved(&inst, &state, &perms, &format!("rlt1 seed {seed}"));
    }
}

#[test]
fn p3_monotone_bound_and_increment_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    let inst = random_instance(&mut rng, 5, 20);
    let sub = SubQap::from_instance(&inst);
    let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
    let mut lb_prev = state.lb();
    let mut total = 0.0;
    for _ in 0..8 {
        state.spread_b_to_c();
        state.spread_c_to_d();
        state.transfer_complements_d();
        state.concentrate_d_to_c();
        state.transfer_complements_c();
        state.concentrate_c_to_b();
        let inc = state.concentrate_b_to_lb();
        assert!(inc >= 0.0, "negative ascent increment {inc}");
        assert!((state.lb() - lb_prev - inc).abs() <= 1e-9 * state.lb().abs().max(1.0));
        lb_prev = state.lb();
        total += inc;
    }
    assert!((state.lb() - total).abs() <= 1e-9 * total.abs().max(1.0));
}

#[test]
fn p4_terminal_bound_is_valid_against_oracle() {
    for (seed, n) in [(7u64, 5usize), (8, 6)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, n, 25);
        let (opt, _) = qapsolve::bnb::oracle_qap(&inst).unwrap();
        let sub = SubQap::from_instance(&inst);
        let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
        let cfg = AscentConfig {
            k: 1e-6,
            max_iters: 500,
            ..AscentConfig::default()
        };
        let r = dual_ascent_rlt2(&mut state, opt as f64, &cfg);
        assert!(
            r.lb <= opt as f64 + 1e-6 * opt as f64,
            "terminal lb {} exceeds optimum {opt}",
            r.lb
        );
    }
}

#[test]
fn p5_transfers_conserve_class_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let inst = random_instance(&mut rng, 5, 20);
    let n = inst.n;
    let sub = SubQap::from_instance(&inst);
    let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
    // Mix costs into C and D first.
    state.spread_b_to_c();
    state.spread_c_to_d();
    state.concentrate_d_to_c();

    let before = state.clone();
    state.transfer_complements_c();
    for i in 0..n {
        for k in (i + 1)..n {
            for j in 0..n {
                for l in 0..n {
                    if l == j {
                        continue;
                    }
                    let sum_before = before.c(i, j, k, l) + before.c(k, l, i, j);
                    let sum_after = state.c(i, j, k, l) + state.c(k, l, i, j);
                    assert!((sum_before - sum_after).abs() <= 1e-9 * sum_before.abs().max(1.0));
                }
            }
        }
    }

    let before_d = state.clone();
    state.transfer_complements_d();
    for i in 0..n {
        for k in (i + 1)..n {
            for m in (k + 1)..n {
                for j in 0..n {
                    for l in 0..n {
                        if l == j {
                            continue;
                        }
                        for q in 0..n {
                            if q == j || q == l {
                                continue;
                            }
                            let sb = before_d.d(i, j, k, l, m, q)
                                + before_d.d(i, j, m, q, k, l)
                                + before_d.d(k, l, m, q, i, j);
                            let sa = state.d(i, j, k, l, m, q)
                                + state.d(i, j, m, q, k, l)
                                + state.d(k, l, m, q, i, j);
                            assert!((sb - sa).abs() <= 1e-9 * sb.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn p6_transfers_are_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let inst = random_instance(&mut rng, 4, 20);
    let n = inst.n;
    let sub = SubQap::from_instance(&inst);
    let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
    state.spread_b_to_c();
    state.spread_c_to_d();

    state.transfer_complements_c();
    let once = state.clone();
    state.transfer_complements_c();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if k == i {
                    continue;
                }
                for l in 0..n {
                    if l == j {
                        continue;
                    }
                    assert_eq!(once.c(i, j, k, l), state.c(i, j, k, l));
                }
            }
        }
    }

    state.transfer_complements_d();
    let once_d = state.clone();
    state.transfer_complements_d();
    for i in 0..n {
        for k in (i + 1)..n {
            for j in 0..n {
                for l in 0..n {
                    if l == j {
                        continue;
                    }
                    for p in 0..n {
                        if p == i || p == k {
                            continue;
                        }
                        for q in 0..n {
                            if q == j || q == l {
                                continue;
                            }
                            let a = once_d.d(i, j, k, l, p, q);
                            let b = state.d(i, j, k, l, p, q);
                            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }
}

/// Extends a local child permutation to the full index space after fixing
/// `(fac, loc)`.
fn embed(n: usize, fac: usize, loc: usize, local: &[usize]) -> Vec<usize> {
    let keep_fac: Vec<usize> = (0..n).filter(|&x| x != fac).collect();
    let keep_loc: Vec<usize> = (0..n).filter(|&y| y != loc).collect();
    let mut full = vec![usize::MAX; n];
    full[fac] = loc;
    for (x, &y) in local.iter().enumerate() {
        full[keep_fac[x]] = keep_loc[y];
    }
    full
}

#[test]
fn warm_fold_preserves_completion_costs_at_every_stage() {
    let n = 5;
    let child_perms = all_permutations(n - 1);
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let inst = random_instance(&mut rng, n, 20);
        let sub = SubQap::from_instance(&inst);
        let mut state = init_dual(&sub, RltLevel::Rlt2, None).unwrap();
        // Fold after each operation of one full iteration, plus at init.
        for stage in 0..8 {
            if stage > 0 {
                apply_op(&mut state, stage - 1);
            }
            let fac = rng.gen_range(0..n);
            let loc = rng.gen_range(0..n);
            let child = state.fold_child(fac, loc);
            for local in &child_perms {
                let full = embed(n, fac, loc, local);
                let exact = evaluate(&inst, &Permutation::new(full.clone()).unwrap()) as f64;
                let dual = child.evaluate_permutation(local);
                let tol = 1e-6 * exact.abs().max(1.0);
                assert!(
                    (dual - exact).abs() <= tol,
                    "seed {seed} stage {stage} fix ({fac},{loc}): {dual} != {exact}"
                );
            }
            assert!(child.min_entry() >= -1e-9);
        }
    }
}

#[test]
fn warm_and_cold_children_have_identical_completion_costs() {
    for n in [5usize, 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + n as u64);
        let inst = random_instance(&mut rng, n, 15);
        let cfg = SolveConfig::default();
        let mut node = Node::root(&inst);
        let mut state = init_dual(&node.sub, RltLevel::Rlt2, None).unwrap();
        let acfg = AscentConfig {
            k: 1e-5,
            max_iters: 3,
            ..AscentConfig::default()
        };
        dual_ascent_rlt2(&mut state, 1e15, &acfg);
        node.base_lb = state.lb();
        node.dual = Some(state);

        let estimates = qapsolve::bnb::sb_estimates(&node, i64::MAX / 4, &cfg);
        let choice: LineChoice = select_line(&node, &estimates);
        let warm = branch_children(&node, &choice, &estimates, BranchMode::Warm, i64::MAX / 4);
        let cold = branch_children(&node, &choice, &estimates, BranchMode::Cold, i64::MAX / 4);
        assert_eq!(warm.len(), cold.len());
        assert_eq!(warm.len(), n);
        let child_perms = all_permutations(n - 1);
        for (w, c) in warm.iter().zip(cold.iter()) {
            assert_eq!(w.fixed, c.fixed);
            for local in &child_perms {
                let exact_cold = c.shift + c.sub.eval(local);
                let full = w.full_permutation(local);
                assert_eq!(exact_cold, evaluate(&inst, &full), "cold child exact");
                let dual = w
                    .dual
                    .as_ref()
                    .expect("warm child carries tensors")
                    .evaluate_permutation(local);
                let tol = 1e-6 * (exact_cold as f64).abs().max(1.0);
                assert!(
                    (dual - exact_cold as f64).abs() <= tol,
                    "warm child dual {dual} != exact {exact_cold}"
                );
            }
        }
        let _ = LineKind::Row;
    }
}
