//! Initial upper bound: multi-start steepest-descent over 2-swaps.
//!
//! Branch-and-bound correctness never depends on the quality of this bound,
//! only on its feasibility, so the heuristic stays deliberately simple and
//! deterministic: random restarts from a seeded generator, each descended to
//! a 2-swap local optimum, reduced to the lowest value (ties broken by the
//! lexicographically smallest permutation).

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::instance::{evaluate, Permutation, QapInstance};

#[derive(Debug, Clone)]
pub struct HeuristicConfig {
    pub restarts: usize,
    pub rng_seed: u64,
    pub time_cap: Option<Duration>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            restarts: 64,
            rng_seed: 1,
            time_cap: None,
        }
    }
}

/// Exact cost change of swapping the locations of facilities `a` and `b`,
/// computed in O(n) from the flow and distance rows involved.
pub fn swap_delta(inst: &QapInstance, perm: &[usize], a: usize, b: usize) -> i64 {
    debug_assert!(a != b);
    let f = &inst.flow;
    let d = &inst.dist;
    let (pa, pb) = (perm[a], perm[b]);
    let mut delta = f.get(a, a) * (d.get(pb, pb) - d.get(pa, pa))
        + f.get(b, b) * (d.get(pa, pa) - d.get(pb, pb))
        + f.get(a, b) * (d.get(pb, pa) - d.get(pa, pb))
        + f.get(b, a) * (d.get(pa, pb) - d.get(pb, pa));
    for k in 0..inst.n {
        if k == a || k == b {
            continue;
        }
        let pk = perm[k];
        delta += f.get(a, k) * (d.get(pb, pk) - d.get(pa, pk))
            + f.get(k, a) * (d.get(pk, pb) - d.get(pk, pa))
            + f.get(b, k) * (d.get(pa, pk) - d.get(pb, pk))
            + f.get(k, b) * (d.get(pk, pa) - d.get(pk, pb));
    }
    delta
}

/// Steepest 2-swap descent: repeatedly applies the best strictly improving
/// transposition until none exists. The result never evaluates worse than
/// the start.
pub fn local_search_2opt(inst: &QapInstance, start: &Permutation) -> Permutation {
    let n = inst.n;
    let mut perm: Vec<usize> = start.as_slice().to_vec();
    loop {
        let mut best_delta = 0i64;
        let mut best_pair = None;
        for a in 0..n {
            for b in (a + 1)..n {
                let delta = swap_delta(inst, &perm, a, b);
                if delta < best_delta {
                    best_delta = delta;
                    best_pair = Some((a, b));
                }
            }
        }
        match best_pair {
            Some((a, b)) => perm.swap(a, b),
            None => break,
        }
    }
    Permutation::new(perm).expect("swap preserves bijection")
}

/// Feasible permutation and its exact value; value is an upper bound on the
/// optimum by construction. Deterministic for a fixed seed.
pub fn heuristic_ub(inst: &QapInstance, cfg: &HeuristicConfig) -> (Permutation, i64) {
    assert!(cfg.restarts >= 1, "restarts must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut starts: Vec<Vec<usize>> = Vec::with_capacity(cfg.restarts);
    starts.push((0..inst.n).collect());
    for _ in 1..cfg.restarts {
        let mut p: Vec<usize> = (0..inst.n).collect();
        p.shuffle(&mut rng);
        starts.push(p);
    }

    let descend = |p: Vec<usize>| {
        let local = local_search_2opt(inst, &Permutation::new(p).expect("start is a bijection"));
        let value = evaluate(inst, &local);
        (value, local)
    };

    let results: Vec<(i64, Permutation)> = match cfg.time_cap {
        None => starts.into_par_iter().map(descend).collect(),
        Some(cap) => {
            // Sequential so the cap is honored between restarts; at least one
            // restart always runs.
            let t0 = Instant::now();
            let mut out = Vec::new();
            for p in starts {
                out.push(descend(p));
                if t0.elapsed() >= cap {
                    break;
                }
            }
            out
        }
    };

    results
        .into_iter()
        .min_by(|(va, pa), (vb, pb)| va.cmp(vb).then_with(|| pa.as_slice().cmp(pb.as_slice())))
        .map(|(v, p)| (p, v))
        .expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::parse_instance;
    use rand::Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, hi: i64) -> QapInstance {
        let mut text = format!("{n}");
        for _ in 0..2 * n * n {
            text.push_str(&format!(" {}", rng.gen_range(0..=hi)));
        }
        parse_instance(text.as_bytes()).unwrap()
    }

    #[test]
    fn swap_delta_matches_full_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = 3 + rng.gen_range(0..5);
            let inst = random_instance(&mut rng, n, 20);
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n);
            while b == a {
                b = rng.gen_range(0..n);
            }
            let before = evaluate(&inst, &Permutation::new(p.clone()).unwrap());
            let delta = swap_delta(&inst, &p, a, b);
            p.swap(a, b);
            let after = evaluate(&inst, &Permutation::new(p).unwrap());
            assert_eq!(after - before, delta);
        }
    }

    #[test]
    fn descent_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 5, 30);
            let mut p: Vec<usize> = (0..5).collect();
            p.shuffle(&mut rng);
            let start = Permutation::new(p).unwrap();
            let sv = evaluate(&inst, &start);
            let out = local_search_2opt(&inst, &start);
            assert!(evaluate(&inst, &out) <= sv);
        }
    }

    #[test]
    fn local_optimum_is_fixpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let inst = random_instance(&mut rng, 6, 25);
        let first = local_search_2opt(&inst, &Permutation::identity(6));
        let second = local_search_2opt(&inst, &first);
        assert_eq!(first, second);
    }

    #[test]
    fn zero_instance_value_zero() {
        let inst = parse_instance(b"3 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0").unwrap();
        let (_, v) = heuristic_ub(&inst, &HeuristicConfig::default());
        assert_eq!(v, 0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let inst = random_instance(&mut rng, 7, 50);
        let cfg = HeuristicConfig {
            restarts: 16,
            rng_seed: 7,
            time_cap: None,
        };
        let (p1, v1) = heuristic_ub(&inst, &cfg);
        let (p2, v2) = heuristic_ub(&inst, &cfg);
        assert_eq!(v1, v2);
        assert_eq!(p1, p2);
    }
}
