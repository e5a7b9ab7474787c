//! RLT2 reduced-cost tensors and the dual-ascent bound.
//!
//! The dual solution is a scalar lower bound plus three tensors of
//! nonnegative reduced costs:
//!
//! * `B`: one cost per assignment `(i,j)`.
//! * `C`: for each `(i,j)` an `(n-1) x (n-1)` submatrix over `k != i`,
//!   `l != j`.
//! * `D`: for each pair of assignments `(i,j),(k,l)` with `i != k`,
//!   `j != l`, an `(n-2) x (n-2)` submatrix. Complementary submatrices
//!   (`(i,j),(k,l)` and `(k,l),(i,j)`) hold equal values, so only the
//!   `i < k` representative is stored and every stored entry counts twice
//!   in the evaluation below.
//!
//! The defining invariant is cost preservation: for every permutation `p`,
//! `lb + sum_i B[i,p(i)] + sum_{i!=k} C[i,p(i),k,p(k)] + sum d-terms`
//! equals the instance objective. Every operation here maintains it while
//! keeping all stored entries nonnegative, which is what makes `lb` a valid
//! bound at any point.

use rayon::prelude::*;
use thiserror::Error;

use crate::instance::{estimate_memory, MemoryEstimate, QapInstance, SquareMat};
use crate::lap::{concentrate_block, LapScratch};

/// Reduced quadratic assignment problem: flows, distances and an explicit
/// linear cost matrix. The root problem uses the diagonal products
/// `flow[i][i] * dist[j][j]` as linear costs; branching folds the fixed
/// assignment's interaction terms into the child's linear matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubQap {
    pub n: usize,
    pub flow: SquareMat,
    pub dist: SquareMat,
    pub linear: SquareMat,
}

impl SubQap {
    pub fn from_instance(inst: &QapInstance) -> SubQap {
        let n = inst.n;
        let mut linear = SquareMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                linear.set(i, j, inst.flow.get(i, i) * inst.dist.get(j, j));
            }
        }
        SubQap {
            n,
            flow: inst.flow.clone(),
            dist: inst.dist.clone(),
            linear,
        }
    }

    /// Exact cost of a local permutation: linear terms plus off-diagonal
    /// quadratic terms.
    pub fn eval(&self, perm: &[usize]) -> i64 {
        debug_assert_eq!(perm.len(), self.n);
        let mut total = 0i64;
        for i in 0..self.n {
            total += self.linear.get(i, perm[i]);
            for k in 0..self.n {
                if k != i {
                    total += self.flow.get(i, k) * self.dist.get(perm[i], perm[k]);
                }
            }
        }
        total
    }

    /// Reduced child after fixing local facility `fac` at local location
    /// `loc`. Returns the child and the constant absorbed by the fix, so
    /// that `parent.eval(extend(p)) == shift + child.eval(p)`.
    pub fn child(&self, fac: usize, loc: usize) -> (SubQap, i64) {
        let n = self.n;
        debug_assert!(n >= 2 && fac < n && loc < n);
        let keep_fac: Vec<usize> = (0..n).filter(|&x| x != fac).collect();
        let keep_loc: Vec<usize> = (0..n).filter(|&y| y != loc).collect();
        let flow = self.flow.restricted(&keep_fac, &keep_fac);
        let dist = self.dist.restricted(&keep_loc, &keep_loc);
        let m = n - 1;
        let mut linear = SquareMat::zeros(m);
        for (x, &fa) in keep_fac.iter().enumerate() {
            for (y, &lb) in keep_loc.iter().enumerate() {
                let folded = self.linear.get(fa, lb)
                    + self.flow.get(fac, fa) * self.dist.get(loc, lb)
                    + self.flow.get(fa, fac) * self.dist.get(lb, loc);
                linear.set(x, y, folded);
            }
        }
        let shift = self.linear.get(fac, loc);
        (
            SubQap {
                n: m,
                flow,
                dist,
                linear,
            },
            shift,
        )
    }
}

/// Whether a dual state carries the D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RltLevel {
    Rlt1,
    Rlt2,
}

#[derive(Debug, Error)]
#[error(
    "tensor memory estimate {estimate} bytes for n={n} exceeds the configured limit {limit} bytes"
)]
pub struct CapacityError {
    pub n: usize,
    pub estimate: u64,
    pub limit: u64,
    pub detail: MemoryEstimate,
}

/// Outcome of a dual-ascent run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AscentStatus {
    /// Progress fell below the K fraction of the upper bound.
    Converged,
    /// The bound reached the upper bound.
    Pruned,
    /// The iteration cap was hit first.
    IterCapped,
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub lb: f64,
    pub iterations: usize,
    pub status: AscentStatus,
    /// Bound increase contributed by each iteration, in order.
    pub increments: Vec<f64>,
}

/// Stopping parameters for the ascent loop.
#[derive(Debug, Clone, Copy)]
pub struct AscentConfig {
    /// Minimal progress as a fraction of the upper bound.
    pub k: f64,
    pub max_iters: usize,
    /// Nonnegativity tolerance, relative to the cost scale.
    pub tau: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            k: 1e-5,
            max_iters: 1000,
            tau: 1e-9,
        }
    }
}

impl AscentConfig {
    pub fn validate(&self) {
        assert!(
            (1e-7..=1.0).contains(&self.k),
            "K must lie in [1e-7, 1], got {}",
            self.k
        );
        assert!(self.max_iters >= 1, "max_iters must be at least 1");
    }
}

/// The dual solution: accumulated bound plus reduced-cost tensors.
#[derive(Debug, Clone)]
pub struct DualState {
    n: usize,
    lb: f64,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Option<Vec<f64>>,
}

impl DualState {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn lb(&self) -> f64 {
        self.lb
    }

    pub fn has_d(&self) -> bool {
        self.d.is_some()
    }

    /// Adds a constant into the bound; used to reference a reduced state to
    /// the full-problem cost scale.
    pub fn add_to_lb(&mut self, amount: f64) {
        self.lb += amount;
    }

    #[inline]
    fn c_sub_len(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    #[inline]
    fn d_sub_len(&self) -> usize {
        (self.n - 2) * (self.n - 2)
    }

    #[inline]
    fn cidx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        debug_assert!(i != k && j != l);
        let n1 = self.n - 1;
        ((i * self.n + j) * n1 + (k - (k > i) as usize)) * n1 + (l - (l > j) as usize)
    }

    /// Stored submatrix index for the pair `(i,j),(k,l)` with `i < k`.
    #[inline]
    fn d_sub_index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        debug_assert!(i < k && j != l);
        let pair = i * self.n - i * (i + 1) / 2 + (k - i - 1);
        let loc = j * (self.n - 1) + l - (l > j) as usize;
        pair * self.n * (self.n - 1) + loc
    }

    #[inline]
    fn didx(&self, i: usize, j: usize, k: usize, l: usize, p: usize, q: usize) -> usize {
        debug_assert!(p != i && p != k && q != j && q != l);
        let n2 = self.n - 2;
        let row = p - (p > i) as usize - (p > k) as usize;
        let col = q - (q > j) as usize - (q > l) as usize;
        self.d_sub_index(i, j, k, l) * n2 * n2 + row * n2 + col
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.b[i * self.n + j]
    }

    pub fn set_b(&mut self, i: usize, j: usize, v: f64) {
        self.b[i * self.n + j] = v;
    }

    pub fn c(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[self.cidx(i, j, k, l)]
    }

    pub fn set_c(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let idx = self.cidx(i, j, k, l);
        self.c[idx] = v;
    }

    /// Logical D value; complementary submatrices resolve to the stored
    /// `i < k` representative.
    pub fn d(&self, i: usize, j: usize, k: usize, l: usize, p: usize, q: usize) -> f64 {
        let d = self.d.as_ref().expect("state has no D tensor");
        if i < k {
            d[self.didx(i, j, k, l, p, q)]
        } else {
            d[self.didx(k, l, i, j, p, q)]
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn set_d(&mut self, i: usize, j: usize, k: usize, l: usize, p: usize, q: usize, v: f64) {
        let idx = if i < k {
            self.didx(i, j, k, l, p, q)
        } else {
            self.didx(k, l, i, j, p, q)
        };
        self.d.as_mut().expect("state has no D tensor")[idx] = v;
    }

    /// The preservation sum: `lb` plus tensor costs along `perm`. Shared D
    /// entries count twice because both orders of each facility pair appear.
    pub fn evaluate_permutation(&self, perm: &[usize]) -> f64 {
        let n = self.n;
        debug_assert_eq!(perm.len(), n);
        let mut total = self.lb;
        for i in 0..n {
            total += self.b[i * n + perm[i]];
        }
        for i in 0..n {
            for k in 0..n {
                if k != i {
                    total += self.c[self.cidx(i, perm[i], k, perm[k])];
                }
            }
        }
        if let Some(d) = self.d.as_ref() {
            for i in 0..n {
                for k in 0..n {
                    if k == i {
                        continue;
                    }
                    let (a, ja, b, jb) = if i < k {
                        (i, perm[i], k, perm[k])
                    } else {
                        (k, perm[k], i, perm[i])
                    };
                    for m in 0..n {
                        if m != i && m != k {
                            total += d[self.didx(a, ja, b, jb, m, perm[m])];
                        }
                    }
                }
            }
        }
        total
    }

    /// Smallest stored entry across all tensors (for nonnegativity checks).
    pub fn min_entry(&self) -> f64 {
        let mut m = f64::INFINITY;
        for &x in &self.b {
            m = m.min(x);
        }
        for &x in &self.c {
            m = m.min(x);
        }
        if let Some(d) = &self.d {
            for &x in d {
                m = m.min(x);
            }
        }
        m
    }

    /// Spreads every `B[i,j]` uniformly over its C submatrix and zeroes B.
    pub fn spread_b_to_c(&mut self) {
        let n = self.n;
        let share = 1.0 / (n as f64 - 1.0);
        let sub_len = self.c_sub_len();
        let b = &self.b;
        self.c
            .par_chunks_mut(sub_len)
            .enumerate()
            .for_each(|(sub, chunk)| {
                let inc = b[sub] * share;
                if inc != 0.0 {
                    for x in chunk {
                        *x += inc;
                    }
                }
            });
        self.b.fill(0.0);
    }

    /// Spreads every C entry over its D submatrix and zeroes C.
    ///
    /// Each stored D submatrix serves both orders of its assignment pair and
    /// each of its entries counts twice in the evaluation, so it receives the
    /// paired costs' mean divided by `n - 2`.
    pub fn spread_c_to_d(&mut self) {
        let n = self.n;
        let share = 1.0 / (2.0 * (n as f64 - 2.0));
        let sub_len = self.d_sub_len();
        let d = self.d.as_mut().expect("spread_c_to_d needs the D tensor");
        let c = &self.c;
        // Enumerate stored submatrices in index order: facility pairs i < k
        // outer, location pairs j != l inner.
        let subs: Vec<(usize, usize, usize, usize)> = iter_d_subs(n).collect();
        d.par_chunks_mut(sub_len)
            .zip(subs.par_iter())
            .for_each(|(chunk, &(i, j, k, l))| {
                let n1 = n - 1;
                let fwd =
                    c[((i * n + j) * n1 + (k - (k > i) as usize)) * n1 + (l - (l > j) as usize)];
                let bwd =
                    c[((k * n + l) * n1 + (i - (i > k) as usize)) * n1 + (j - (j > l) as usize)];
                let inc = (fwd + bwd) * share;
                if inc != 0.0 {
                    for x in chunk {
                        *x += inc;
                    }
                }
            });
        self.c.fill(0.0);
    }

    /// Sets each complementary C pair to its mean. Idempotent; class sums
    /// and the evaluation are unchanged.
    pub fn transfer_complements_c(&mut self) {
        let n = self.n;
        for i in 0..n {
            for k in (i + 1)..n {
                for j in 0..n {
                    for l in 0..n {
                        if l == j {
                            continue;
                        }
                        let fwd = self.cidx(i, j, k, l);
                        let bwd = self.cidx(k, l, i, j);
                        let mean = 0.5 * (self.c[fwd] + self.c[bwd]);
                        self.c[fwd] = mean;
                        self.c[bwd] = mean;
                    }
                }
            }
        }
    }

    /// Sets the three stored representatives of every six-member D class to
    /// their mean. Idempotent; class sums and the evaluation are unchanged.
    pub fn transfer_complements_d(&mut self) {
        let n = self.n;
        let d = self.d.as_mut().expect("transfer_complements_d needs D");
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
                                let e1 = didx_raw(n, i, j, k, l, m, q);
                                let e2 = didx_raw(n, i, j, m, q, k, l);
                                let e3 = didx_raw(n, k, l, m, q, i, j);
                                let mean = (d[e1] + d[e2] + d[e3]) / 3.0;
                                d[e1] = mean;
                                d[e2] = mean;
                                d[e3] = mean;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Solves a LAP on every stored D submatrix, replaces it by the residuals
    /// and credits the optimum to both complementary C entries.
    pub fn concentrate_d_to_c(&mut self) {
        let n = self.n;
        let sub_len = self.d_sub_len();
        let m = n - 2;
        let d = self.d.as_mut().expect("concentrate_d_to_c needs D");
        let values: Vec<f64> = d
            .par_chunks_mut(sub_len)
            .map_init(LapScratch::default, |scratch, chunk| {
                concentrate_block(chunk, m, scratch)
            })
            .collect();
        for ((i, j, k, l), s) in iter_d_subs(n).zip(values) {
            if s != 0.0 {
                let fwd = self.cidx(i, j, k, l);
                let bwd = self.cidx(k, l, i, j);
                self.c[fwd] += s;
                self.c[bwd] += s;
            }
        }
    }

    /// Solves a LAP on every C submatrix, replaces it by the residuals and
    /// credits the optimum to the owning B entry.
    pub fn concentrate_c_to_b(&mut self) {
        let n = self.n;
        let sub_len = self.c_sub_len();
        let m = n - 1;
        let values: Vec<f64> = self
            .c
            .par_chunks_mut(sub_len)
            .map_init(LapScratch::default, |scratch, chunk| {
                concentrate_block(chunk, m, scratch)
            })
            .collect();
        for (sub, s) in values.into_iter().enumerate() {
            self.b[sub] += s;
        }
    }

    /// Solves one LAP on B, keeps the residuals and moves the optimum into
    /// the accumulated bound. Returns the iteration's progress.
    pub fn concentrate_b_to_lb(&mut self) -> f64 {
        let mut scratch = LapScratch::default();
        let s = concentrate_block(&mut self.b, self.n, &mut scratch);
        self.lb += s;
        s
    }

    /// Child state after fixing `(fac, loc)`, with the fixed assignment's
    /// tensor costs folded into the child so that the child evaluation of a
    /// completion equals the parent evaluation of the extended permutation.
    pub fn fold_child(&self, fac: usize, loc: usize) -> DualState {
        let n = self.n;
        assert!(n >= 4, "warm fold needs a child of size at least 3");
        assert!(self.d.is_some(), "warm fold needs the D tensor");
        let m = n - 1;
        let keep_fac: Vec<usize> = (0..n).filter(|&x| x != fac).collect();
        let keep_loc: Vec<usize> = (0..n).filter(|&y| y != loc).collect();

        let lb = self.lb + self.b(fac, loc);

        let mut b = vec![0.0f64; m * m];
        for (x, &fa) in keep_fac.iter().enumerate() {
            for (y, &la) in keep_loc.iter().enumerate() {
                b[x * m + y] = self.b(fa, la) + self.c(fac, loc, fa, la) + self.c(fa, la, fac, loc);
            }
        }

        let m1 = m - 1;
        let mut c = vec![0.0f64; m * m * m1 * m1];
        for (x, &fa) in keep_fac.iter().enumerate() {
            for (y, &la) in keep_loc.iter().enumerate() {
                for (z, &fb) in keep_fac.iter().enumerate() {
                    if z == x {
                        continue;
                    }
                    for (w, &lw) in keep_loc.iter().enumerate() {
                        if w == y {
                            continue;
                        }
                        let folded = self.c(fa, la, fb, lw)
                            + self.d(fac, loc, fa, la, fb, lw)
                            + self.d(fac, loc, fb, lw, fa, la)
                            + self.d(fa, la, fb, lw, fac, loc);
                        let idx = ((x * m + y) * m1 + (z - (z > x) as usize)) * m1
                            + (w - (w > y) as usize);
                        c[idx] = folded;
                    }
                }
            }
        }

        // D restricted to the free indices; the canonical i < k order is
        // preserved because the index maps are increasing.
        let m2 = m - 2;
        let sub_len = m2 * m2;
        let mut d = vec![0.0f64; m * m * m1 * m1 / 2 * sub_len];
        let child_subs: Vec<(usize, usize, usize, usize)> = iter_d_subs(m).collect();
        let parent = self;
        d.par_chunks_mut(sub_len)
            .zip(child_subs.par_iter())
            .for_each(|(chunk, &(x, y, z, w))| {
                let (fi, lj) = (keep_fac[x], keep_loc[y]);
                let (fk, ll) = (keep_fac[z], keep_loc[w]);
                for (pp, &fp) in keep_fac.iter().enumerate() {
                    if pp == x || pp == z {
                        continue;
                    }
                    for (qq, &lq) in keep_loc.iter().enumerate() {
                        if qq == y || qq == w {
                            continue;
                        }
                        let row = pp - (pp > x) as usize - (pp > z) as usize;
                        let col = qq - (qq > y) as usize - (qq > w) as usize;
                        chunk[row * m2 + col] = parent.d(fi, lj, fk, ll, fp, lq);
                    }
                }
            });

        DualState {
            n: m,
            lb,
            b,
            c,
            d: Some(d),
        }
    }
}

/// Raw stored-entry index shared by methods and loops that hold `d` borrowed.
#[inline]
fn didx_raw(n: usize, i: usize, j: usize, k: usize, l: usize, p: usize, q: usize) -> usize {
    debug_assert!(i < k && j != l && p != i && p != k && q != j && q != l);
    let pair = i * n - i * (i + 1) / 2 + (k - i - 1);
    let loc = j * (n - 1) + l - (l > j) as usize;
    let n2 = n - 2;
    let row = p - (p > i) as usize - (p > k) as usize;
    let col = q - (q > j) as usize - (q > l) as usize;
    (pair * n * (n - 1) + loc) * n2 * n2 + row * n2 + col
}

/// Stored D submatrices in index order.
fn iter_d_subs(n: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..n).flat_map(move |i| {
        ((i + 1)..n).flat_map(move |k| {
            (0..n).flat_map(move |j| (0..n).filter(move |&l| l != j).map(move |l| (i, j, k, l)))
        })
    })
}

/// Initial dual state for a reduced problem: linear costs in B, flow-distance
/// products in C, D at zero (for [`RltLevel::Rlt2`]) or absent.
pub fn init_dual(
    sub: &SubQap,
    level: RltLevel,
    mem_limit: Option<u64>,
) -> Result<DualState, CapacityError> {
    let n = sub.n;
    assert!(n >= 3, "dual state needs n >= 3, got {n}");
    let est = estimate_memory(n).expect("n >= 3");
    if let Some(limit) = mem_limit {
        let bytes = match level {
            RltLevel::Rlt2 => est.bytes_total,
            RltLevel::Rlt1 => (est.entries_b + est.entries_c) * 10,
        };
        if bytes > limit {
            return Err(CapacityError {
                n,
                estimate: bytes,
                limit,
                detail: est,
            });
        }
    }
    let mut b = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = sub.linear.get(i, j) as f64;
        }
    }
    let n1 = n - 1;
    let mut c = vec![0.0f64; n * n * n1 * n1];
    for i in 0..n {
        for j in 0..n {
            let base = (i * n + j) * n1 * n1;
            for k in 0..n {
                if k == i {
                    continue;
                }
                let f = sub.flow.get(i, k) as f64;
                let krow = base + (k - (k > i) as usize) * n1;
                for l in 0..n {
                    if l == j {
                        continue;
                    }
                    c[krow + (l - (l > j) as usize)] = f * sub.dist.get(j, l) as f64;
                }
            }
        }
    }
    let d = match level {
        RltLevel::Rlt2 => Some(vec![0.0f64; (est.entries_d) as usize]),
        RltLevel::Rlt1 => None,
    };
    Ok(DualState {
        n,
        lb: 0.0,
        b,
        c,
        d,
    })
}

fn run_ascent(
    state: &mut DualState,
    ub: f64,
    cfg: &AscentConfig,
    full: bool,
    mut on_iteration: Option<&mut dyn FnMut(usize, f64, f64)>,
) -> AscentResult {
    cfg.validate();
    let mut increments = Vec::new();
    let mut iterations = 0;
    let status = loop {
        if iterations >= cfg.max_iters {
            break AscentStatus::IterCapped;
        }
        state.spread_b_to_c();
        if full {
            state.spread_c_to_d();
            state.transfer_complements_d();
            state.concentrate_d_to_c();
        }
        state.transfer_complements_c();
        state.concentrate_c_to_b();
        let progress_abs = state.concentrate_b_to_lb();
        iterations += 1;
        increments.push(progress_abs);
        if let Some(cb) = on_iteration.as_deref_mut() {
            cb(iterations, progress_abs, state.lb);
        }
        let progress = if ub > 0.0 { progress_abs / ub } else { 0.0 };
        if progress < cfg.k {
            break AscentStatus::Converged;
        }
        if state.lb >= ub {
            break AscentStatus::Pruned;
        }
    };
    AscentResult {
        lb: state.lb,
        iterations,
        status,
        increments,
    }
}

/// Full RLT2 ascent: spread B into C and C into D, rebalance complements,
/// then concentrate D back into C, C into B and B into the bound. Repeats
/// while each iteration gains at least `K * ub`.
pub fn dual_ascent_rlt2(state: &mut DualState, ub: f64, cfg: &AscentConfig) -> AscentResult {
    assert!(state.has_d(), "RLT2 ascent needs the D tensor");
    run_ascent(state, ub, cfg, true, None)
}

/// As [`dual_ascent_rlt2`] with a per-iteration observer
/// `(iteration, increment, lb)`.
pub fn dual_ascent_rlt2_observed(
    state: &mut DualState,
    ub: f64,
    cfg: &AscentConfig,
    on_iteration: &mut dyn FnMut(usize, f64, f64),
) -> AscentResult {
    assert!(state.has_d(), "RLT2 ascent needs the D tensor");
    run_ascent(state, ub, cfg, true, Some(on_iteration))
}

/// Restricted ascent that never touches D: spread B into C, rebalance C,
/// concentrate back. Used for strong branching and deep cold nodes.
pub fn dual_ascent_rlt1(state: &mut DualState, ub: f64, cfg: &AscentConfig) -> AscentResult {
    run_ascent(state, ub, cfg, false, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::parse_instance;

    fn zero_state(n: usize) -> DualState {
        let inst =
            parse_instance(format!("{n} {}", vec!["0"; 2 * n * n].join(" ")).as_bytes()).unwrap();
        init_dual(&SubQap::from_instance(&inst), RltLevel::Rlt2, None).unwrap()
    }

    #[test]
    fn init_zero_instance_is_all_zero() {
        let s = zero_state(3);
        assert_eq!(s.lb(), 0.0);
        assert_eq!(s.min_entry(), 0.0);
        let mut max = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                max = max.max(s.b(i, j));
            }
        }
        assert_eq!(max, 0.0);
    }

    #[test]
    fn spread_b_divides_uniformly() {
        let mut s = zero_state(4);
        s.set_b(0, 1, 6.0);
        s.spread_b_to_c();
        assert_eq!(s.b(0, 1), 0.0);
        for k in 1..4 {
            for l in [0usize, 2, 3] {
                assert_eq!(s.c(0, 1, k, l), 2.0);
            }
        }
        // Other submatrices untouched.
        assert_eq!(s.c(1, 0, 2, 2), 0.0);
    }

    #[test]
    fn spread_b_zero_is_noop() {
        let mut s = zero_state(4);
        s.spread_b_to_c();
        assert_eq!(s.min_entry(), 0.0);
        assert_eq!(s.lb(), 0.0);
    }

    #[test]
    fn spread_c_to_d_uses_paired_half_share() {
        let mut s = zero_state(4);
        s.set_c(0, 1, 2, 3, 4.0);
        s.set_c(2, 3, 0, 1, 2.0);
        s.spread_c_to_d();
        assert_eq!(s.c(0, 1, 2, 3), 0.0);
        assert_eq!(s.c(2, 3, 0, 1), 0.0);
        // (4 + 2) / (2 * (4 - 2)) = 1.5 on each stored entry of D_{(0,1),(2,3)}.
        for p in [1usize, 3] {
            for q in [0usize, 2] {
                assert_eq!(s.d(0, 1, 2, 3, p, q), 1.5);
                // Complementary access reads the same storage.
                assert_eq!(s.d(2, 3, 0, 1, p, q), 1.5);
            }
        }
    }

    #[test]
    fn transfer_c_means_pairs_and_is_idempotent() {
        let mut s = zero_state(4);
        s.set_c(0, 1, 2, 3, 4.0);
        s.set_c(2, 3, 0, 1, 2.0);
        s.transfer_complements_c();
        assert_eq!(s.c(0, 1, 2, 3), 3.0);
        assert_eq!(s.c(2, 3, 0, 1), 3.0);
        s.transfer_complements_c();
        assert_eq!(s.c(0, 1, 2, 3), 3.0);
        assert_eq!(s.c(2, 3, 0, 1), 3.0);
    }

    #[test]
    fn transfer_d_means_triples_and_is_idempotent() {
        let mut s = zero_state(4);
        // Class {(0,0),(1,1),(2,2)}: representatives (0,0,1,1)(2,2),
        // (0,0,2,2)(1,1), (1,1,2,2)(0,0).
        s.set_d(0, 0, 1, 1, 2, 2, 6.0);
        s.transfer_complements_d();
        assert_eq!(s.d(0, 0, 1, 1, 2, 2), 2.0);
        assert_eq!(s.d(0, 0, 2, 2, 1, 1), 2.0);
        assert_eq!(s.d(1, 1, 2, 2, 0, 0), 2.0);
        s.transfer_complements_d();
        assert_eq!(s.d(0, 0, 1, 1, 2, 2), 2.0);
    }

    #[test]
    fn concentrate_d_credits_both_complements() {
        let mut s = zero_state(4);
        // D_{(0,1),(2,3)} = [[1,2],[3,4]] over rows p in {1,3}, cols q in {0,2}.
        s.set_d(0, 1, 2, 3, 1, 0, 1.0);
        s.set_d(0, 1, 2, 3, 1, 2, 2.0);
        s.set_d(0, 1, 2, 3, 3, 0, 3.0);
        s.set_d(0, 1, 2, 3, 3, 2, 4.0);
        s.concentrate_d_to_c();
        assert_eq!(s.c(0, 1, 2, 3), 5.0);
        assert_eq!(s.c(2, 3, 0, 1), 5.0);
        // Residuals solve to zero.
        let vals = [
            s.d(0, 1, 2, 3, 1, 0),
            s.d(0, 1, 2, 3, 1, 2),
            s.d(0, 1, 2, 3, 3, 0),
            s.d(0, 1, 2, 3, 3, 2),
        ];
        let re = crate::lap::lap_hungarian(&vals, 2).unwrap();
        assert_eq!(re.value, 0.0);
    }

    #[test]
    fn concentrate_c_credits_b() {
        let mut s = zero_state(3);
        // C_00 over rows k in {1,2}, cols l in {1,2}.
        s.set_c(0, 0, 1, 1, 1.0);
        s.set_c(0, 0, 1, 2, 2.0);
        s.set_c(0, 0, 2, 1, 3.0);
        s.set_c(0, 0, 2, 2, 4.0);
        s.concentrate_c_to_b();
        assert_eq!(s.b(0, 0), 5.0);
    }

    #[test]
    fn concentrate_b_uniform_matrix() {
        let mut s = zero_state(3);
        for i in 0..3 {
            for j in 0..3 {
                s.set_b(i, j, 1.0);
            }
        }
        let lb_prime = s.concentrate_b_to_lb();
        assert_eq!(lb_prime, 3.0);
        assert_eq!(s.lb(), 3.0);
        let zero = s.concentrate_b_to_lb();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn ascent_zero_instance_converges_immediately() {
        let inst = parse_instance(b"3 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0").unwrap();
        let mut s = init_dual(&SubQap::from_instance(&inst), RltLevel::Rlt2, None).unwrap();
        let r = dual_ascent_rlt2(&mut s, 0.0, &AscentConfig::default());
        assert_eq!(r.lb, 0.0);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.status, AscentStatus::Converged);
    }

    #[test]
    fn ascent_k_one_runs_single_iteration() {
        let inst = parse_instance(b"3  0 1 2 1 0 3 2 3 0  0 4 5 4 0 6 5 6 0").unwrap();
        let mut s = init_dual(&SubQap::from_instance(&inst), RltLevel::Rlt2, None).unwrap();
        let cfg = AscentConfig {
            k: 1.0,
            ..AscentConfig::default()
        };
        let r = dual_ascent_rlt2(&mut s, 1_000_000.0, &cfg);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn capacity_refusal_carries_estimate() {
        let inst = parse_instance(b"3  0 1 2 1 0 3 2 3 0  0 4 5 4 0 6 5 6 0").unwrap();
        let err = init_dual(&SubQap::from_instance(&inst), RltLevel::Rlt2, Some(10)).unwrap_err();
        assert_eq!(err.n, 3);
        assert!(err.estimate > 10);
        assert_eq!(err.detail.entries_d, 18);
    }

    #[test]
    fn subqap_child_preserves_costs() {
        let inst = parse_instance(b"3  0 1 2 1 0 3 2 3 0  0 4 5 4 0 6 5 6 0").unwrap();
        let root = SubQap::from_instance(&inst);
        let (child, shift) = root.child(0, 0);
        // Completions with facility 0 at location 0: local perms of {1,2}
        // on locations {1,2}.
        let full_a = [0usize, 1, 2];
        let full_b = [0usize, 2, 1];
        assert_eq!(shift + child.eval(&[0, 1]), root.eval(&full_a));
        assert_eq!(shift + child.eval(&[1, 0]), root.eval(&full_b));
    }
}
