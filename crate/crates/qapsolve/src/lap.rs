//! Dense linear assignment with dual certificates.
//!
//! Both solvers return the exact optimum together with row duals `u`,
//! column duals `v` and the nonnegative residual matrix
//! `R[r][s] = M[r][s] - u[r] - v[s]`. The residuals are what the
//! cost-concentration step of the dual ascent writes back into a tensor
//! block, so their nonnegativity and the zero residuals on the assignment
//! are load-bearing, not diagnostics.
//!
//! Duals are not unique; callers must only rely on certificate soundness
//! and the optimal value, never on entry-wise dual equality across solvers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LapError {
    #[error("cost matrix entry at ({row},{col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("cost matrix entry at ({row},{col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("oracle refuses matrices larger than {max}, got {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("certificate defect: {0}")]
    CertificateDefect(String),
}

/// Optimal assignment together with a dual proof of optimality.
#[derive(Debug, Clone)]
pub struct LapCertificate {
    /// Optimal total cost.
    pub value: f64,
    /// `assign[r]` is the column assigned to row `r`.
    pub assign: Vec<usize>,
    /// Row duals.
    pub u: Vec<f64>,
    /// Column duals.
    pub v: Vec<f64>,
    /// Residuals `M - u - v`, row-major, clamped to zero within tolerance.
    pub residuals: Vec<f64>,
}

/// Clamping tolerance: residuals in `(-tau, 0)` are set to zero, anything
/// below `-tau` is a certificate failure.
pub fn clamp_tau(max_abs_cost: f64) -> f64 {
    1e-9 * max_abs_cost.max(1.0)
}

impl LapCertificate {
    /// Verifies every certificate invariant against the cost matrix.
    pub fn check(&self, costs: &[f64], m: usize) -> Result<(), LapError> {
        let tau = clamp_tau(max_abs(costs));
        let mut seen = vec![false; m];
        let mut matched_sum = 0.0;
        for r in 0..m {
            let s = self.assign[r];
            if s >= m || seen[s] {
                return Err(LapError::CertificateDefect(format!(
                    "assignment is not a bijection at row {r}"
                )));
            }
            seen[s] = true;
            matched_sum += costs[r * m + s];
            if self.residuals[r * m + s] != 0.0 {
                return Err(LapError::CertificateDefect(format!(
                    "nonzero residual on assigned cell ({r},{s})"
                )));
            }
        }
        for r in 0..m {
            for s in 0..m {
                let res = self.residuals[r * m + s];
                if res < 0.0 {
                    return Err(LapError::CertificateDefect(format!(
                        "negative residual {res} at ({r},{s})"
                    )));
                }
                let direct = costs[r * m + s] - self.u[r] - self.v[s];
                if (res - direct).abs() > tau * (m as f64) && res != 0.0 {
                    return Err(LapError::CertificateDefect(format!(
                        "residual at ({r},{s}) disagrees with duals"
                    )));
                }
            }
        }
        let dual_sum: f64 = self.u.iter().sum::<f64>() + self.v.iter().sum::<f64>();
        let tol = tau * (m as f64 + 1.0);
        if (dual_sum - self.value).abs() > tol || (matched_sum - self.value).abs() > tol {
            return Err(LapError::CertificateDefect(format!(
                "value identity violated: value={} duals={} matched={}",
                self.value, dual_sum, matched_sum
            )));
        }
        Ok(())
    }
}

fn max_abs(costs: &[f64]) -> f64 {
    costs.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn validate(costs: &[f64], m: usize) -> Result<(), LapError> {
    assert!(m >= 1, "empty assignment problem");
    assert_eq!(costs.len(), m * m, "cost matrix length mismatch");
    for r in 0..m {
        for s in 0..m {
            let v = costs[r * m + s];
            if !v.is_finite() {
                return Err(LapError::NonFinite { row: r, col: s });
            }
            if v < 0.0 {
                return Err(LapError::NegativeEntry {
                    row: r,
                    col: s,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Reusable solver workspace; one per thread in parallel loops.
#[derive(Debug, Default, Clone)]
pub struct LapScratch {
    matched_row: Vec<usize>,
    way: Vec<usize>,
    minv: Vec<f64>,
    used: Vec<bool>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl LapScratch {
    fn reset(&mut self, m: usize) {
        self.matched_row.clear();
        self.matched_row.resize(m + 1, 0);
        self.way.clear();
        self.way.resize(m + 1, 0);
        self.minv.clear();
        self.minv.resize(m + 1, 0.0);
        self.used.clear();
        self.used.resize(m + 1, false);
        self.u.clear();
        self.u.resize(m + 1, 0.0);
        self.v.clear();
        self.v.resize(m + 1, 0.0);
    }
}

/// Shortest-augmenting-path assignment (the Hungarian method in its
/// Jonker-Volgenant form). O(m^3). Internally 1-based with slot 0 as the
/// virtual unmatched marker.
///
/// Returns the matching in `scratch.matched_row` (1-based column -> row)
/// and the duals in `scratch.u` / `scratch.v`; `assign`, `u`, `v` are
/// extracted by the callers below.
fn sap_solve(costs: &[f64], m: usize, scratch: &mut LapScratch) {
    scratch.reset(m);
    let p = &mut scratch.matched_row;
    let way = &mut scratch.way;
    let minv = &mut scratch.minv;
    let used = &mut scratch.used;
    let u = &mut scratch.u;
    let v = &mut scratch.v;

    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0usize;
        for j in 0..=m {
            minv[j] = f64::INFINITY;
            used[j] = false;
        }
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = costs[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
}

fn extract_assignment(m: usize, scratch: &LapScratch) -> Vec<usize> {
    let mut assign = vec![usize::MAX; m];
    for j in 1..=m {
        let r = scratch.matched_row[j];
        assign[r - 1] = j - 1;
    }
    assign
}

/// Builds the clamped residual matrix and forces exact zeros on the matching.
fn residuals_from_duals(
    costs: &[f64],
    m: usize,
    assign: &[usize],
    u: &[f64],
    v: &[f64],
) -> Result<Vec<f64>, LapError> {
    let tau = clamp_tau(max_abs(costs));
    let mut res = vec![0.0f64; m * m];
    for r in 0..m {
        for s in 0..m {
            let x = costs[r * m + s] - u[r] - v[s];
            res[r * m + s] = if x < 0.0 {
                if x < -tau {
                    return Err(LapError::CertificateDefect(format!(
                        "residual {x} below -tau at ({r},{s})"
                    )));
                }
                0.0
            } else {
                x
            };
        }
    }
    for r in 0..m {
        let s = assign[r];
        let x = costs[r * m + s] - u[r] - v[s];
        if x.abs() > tau {
            return Err(LapError::CertificateDefect(format!(
                "assigned cell ({r},{s}) has residual {x}"
            )));
        }
        res[r * m + s] = 0.0;
    }
    Ok(res)
}

fn certificate_from_duals(
    costs: &[f64],
    m: usize,
    assign: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
) -> Result<LapCertificate, LapError> {
    let residuals = residuals_from_duals(costs, m, &assign, &u, &v)?;
    let value = (0..m).map(|r| costs[r * m + assign[r]]).sum();
    Ok(LapCertificate {
        value,
        assign,
        u,
        v,
        residuals,
    })
}

/// Exact minimum-cost assignment via shortest augmenting paths.
pub fn lap_hungarian(costs: &[f64], m: usize) -> Result<LapCertificate, LapError> {
    validate(costs, m)?;
    let mut scratch = LapScratch::default();
    sap_solve(costs, m, &mut scratch);
    let assign = extract_assignment(m, &scratch);
    let u = scratch.u[1..=m].to_vec();
    let v = scratch.v[1..=m].to_vec();
    certificate_from_duals(costs, m, assign, u, v)
}

/// In-place concentration step used by the dual ascent: solves the block,
/// replaces it by the certificate residuals and returns the optimal value.
pub fn concentrate_block(block: &mut [f64], m: usize, scratch: &mut LapScratch) -> f64 {
    debug_assert_eq!(block.len(), m * m);
    if m == 1 {
        let s = block[0];
        block[0] = 0.0;
        return s;
    }
    sap_solve(block, m, scratch);
    let tau = clamp_tau(max_abs(block));
    let mut value = 0.0;
    for j in 1..=m {
        let r = scratch.matched_row[j];
        value += block[(r - 1) * m + (j - 1)];
    }
    for r in 0..m {
        let ur = scratch.u[r + 1];
        for s in 0..m {
            let x = block[r * m + s] - ur - scratch.v[s + 1];
            assert!(x > -tau, "residual {x} below -tau in concentration");
            block[r * m + s] = if x < 0.0 { 0.0 } else { x };
        }
    }
    for j in 1..=m {
        let r = scratch.matched_row[j] - 1;
        block[r * m + (j - 1)] = 0.0;
    }
    value
}

/// Exact optimum by enumerating all `m!` assignments. Test oracle only.
pub fn oracle_lap(costs: &[f64], m: usize) -> Result<f64, LapError> {
    const MAX: usize = 10;
    if m > MAX {
        return Err(LapError::OracleTooLarge { max: MAX, got: m });
    }
    validate(costs, m)?;
    let mut cols: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    permute_heap(&mut cols, 0, &mut |perm| {
        let total: f64 = perm
            .iter()
            .enumerate()
            .map(|(r, &s)| costs[r * m + s])
            .sum();
        if total < best {
            best = total;
        }
    });
    Ok(best)
}

/// Heap's algorithm over `items[k..]`, calling `visit` on each arrangement.
fn permute_heap<T: Copy>(items: &mut [T], k: usize, visit: &mut impl FnMut(&[T])) {
    let n = items.len();
    if k == n {
        visit(items);
        return;
    }
    for i in k..n {
        items.swap(k, i);
        permute_heap(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Epsilon-scaling schedule: start at half the largest cost, divide by 4
/// per phase, stop below `granularity / (m + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct EpsSchedule {
    pub start: f64,
    pub divisor: f64,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule {
            start: 0.5,
            divisor: 4.0,
        }
    }
}

/// Bertsekas auction in minimization form with epsilon scaling.
///
/// Costs that are integral multiples of 2^-20 are scaled to integers and the
/// bidding runs exactly; otherwise it runs on doubles with a final epsilon
/// below the smallest distinct-entry gap divided by `m + 1`. Either way the
/// returned certificate is repaired to exact complementary slackness, so it
/// satisfies the same contract as [`lap_hungarian`].
pub fn lap_auction(
    costs: &[f64],
    m: usize,
    schedule: EpsSchedule,
) -> Result<LapCertificate, LapError> {
    validate(costs, m)?;
    if m == 1 {
        return certificate_from_duals(costs, 1, vec![0], vec![costs[0]], vec![0.0]);
    }

    let assign = match integer_scaled(costs) {
        Some(scaled) => auction_assignment_int(&scaled, m, schedule),
        None => auction_assignment_f64(costs, m, schedule),
    };

    // The bidding fixes the optimal assignment; exact duals for it come from
    // the shortest-path repair below.
    let (u, v) = repair_duals(costs, m, &assign)?;
    certificate_from_duals(costs, m, assign, u, v)
}

const AUCTION_SCALE: f64 = (1u64 << 20) as f64;

/// Scaled integer costs when every entry is an integral multiple of 2^-20
/// and the working range (including the m+1 optimality factor) fits i64.
fn integer_scaled(costs: &[f64]) -> Option<Vec<i64>> {
    let mut out = Vec::with_capacity(costs.len());
    for &c in costs {
        let scaled = c * AUCTION_SCALE;
        if scaled.fract() != 0.0 || scaled.abs() >= 1e15 {
            return None;
        }
        out.push(scaled as i64);
    }
    Some(out)
}

/// One Gauss-Seidel bidding pass structure shared by both arithmetic paths.
/// Prices decrease monotonically in the minimization form; the person takes
/// the lowest reduced cost object, with ties won by the lowest column index.
macro_rules! auction_phase {
    ($costs:expr, $m:expr, $eps:expr, $prices:expr, $owner:expr, $assigned:expr, $queue:expr) => {{
        let m = $m;
        for s in 0..m {
            $owner[s] = usize::MAX;
        }
        for r in 0..m {
            $assigned[r] = usize::MAX;
            $queue.push_back(r);
        }
        let mut bids: u64 = 0;
        while let Some(r) = $queue.pop_front() {
            bids += 1;
            assert!(
                bids < 100_000_000,
                "auction phase failed to terminate (defect)"
            );
            let mut best_s = 0usize;
            let mut best = $costs[r * m] - $prices[0];
            let mut second = None;
            for s in 1..m {
                let w = $costs[r * m + s] - $prices[s];
                if w < best {
                    second = Some(best);
                    best = w;
                    best_s = s;
                } else if second.map_or(true, |x| w < x) {
                    second = Some(w);
                }
            }
            let second = second.unwrap_or(best);
            // Lower the price of the chosen object so its margin over the
            // runner-up is exactly eps.
            $prices[best_s] = $costs[r * m + best_s] - second - $eps;
            let evicted = $owner[best_s];
            if evicted != usize::MAX {
                $assigned[evicted] = usize::MAX;
                $queue.push_back(evicted);
            }
            $owner[best_s] = r;
            $assigned[r] = best_s;
        }
    }};
}

fn auction_assignment_int(costs: &[i64], m: usize, schedule: EpsSchedule) -> Vec<usize> {
    // Multiply by (m + 1) so the last phase can run at integer eps = 1 while
    // distinct assignment totals stay at least m + 1 apart.
    let factor = (m + 1) as i64;
    let scaled: Vec<i64> = costs.iter().map(|&c| c * factor).collect();
    let max_c = scaled.iter().copied().max().unwrap_or(0);
    let mut eps = ((max_c as f64 * schedule.start) as i64).max(1);
    let mut prices = vec![0i64; m];
    let mut owner = vec![usize::MAX; m];
    let mut assigned = vec![usize::MAX; m];
    let mut queue = std::collections::VecDeque::with_capacity(m);
    loop {
        auction_phase!(scaled, m, eps, prices, owner, assigned, queue);
        if eps == 1 {
            break;
        }
        eps = (eps / schedule.divisor as i64).max(1);
    }
    assigned
}

fn auction_assignment_f64(costs: &[f64], m: usize, schedule: EpsSchedule) -> Vec<usize> {
    let granularity = smallest_gap(costs);
    let eps_final = granularity / (2.0 * (m as f64 + 1.0));
    let max_c = max_abs(costs);
    let mut eps = (max_c * schedule.start).max(eps_final);
    let mut prices = vec![0.0f64; m];
    let mut owner = vec![usize::MAX; m];
    let mut assigned = vec![usize::MAX; m];
    let mut queue = std::collections::VecDeque::with_capacity(m);
    loop {
        auction_phase!(costs, m, eps, prices, owner, assigned, queue);
        if eps <= eps_final {
            break;
        }
        eps = (eps / schedule.divisor).max(eps_final);
    }
    assigned
}

/// Smallest positive difference between two distinct cost entries.
fn smallest_gap(costs: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = costs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut gap = f64::INFINITY;
    for w in sorted.windows(2) {
        let d = w[1] - w[0];
        if d > 0.0 && d < gap {
            gap = d;
        }
    }
    if gap.is_finite() {
        gap
    } else {
        1.0
    }
}

/// Exact optimal duals for a known optimal assignment, via shortest paths on
/// the column graph (Bellman-Ford over the difference constraints
/// `v[s] - v[assign[r]] <= M[r][s] - M[r][assign[r]]`). A negative cycle
/// means the assignment was not optimal, which is a solver defect.
fn repair_duals(
    costs: &[f64],
    m: usize,
    assign: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), LapError> {
    let mut v = vec![0.0f64; m];
    let mut changed = true;
    for _round in 0..m {
        if !changed {
            break;
        }
        changed = false;
        for r in 0..m {
            let home = assign[r];
            let base = costs[r * m + home];
            for s in 0..m {
                let cand = v[home] + costs[r * m + s] - base;
                if cand < v[s] - 1e-15 {
                    v[s] = cand;
                    changed = true;
                }
            }
        }
    }
    if changed {
        // One more sweep still relaxing: negative cycle.
        let mut still = false;
        for r in 0..m {
            let home = assign[r];
            let base = costs[r * m + home];
            for s in 0..m {
                if v[home] + costs[r * m + s] - base < v[s] - 1e-9 {
                    still = true;
                }
            }
        }
        if still {
            return Err(LapError::CertificateDefect(
                "auction produced a suboptimal assignment (negative repair cycle)".into(),
            ));
        }
    }
    let u: Vec<f64> = (0..m)
        .map(|r| costs[r * m + assign[r]] - v[assign[r]])
        .collect();
    Ok((u, v))
}
