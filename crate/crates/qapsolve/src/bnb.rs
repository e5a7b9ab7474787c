//! Branch-and-bound driver.
//!
//! Workers run depth-first on their own node stacks; an idle worker steals
//! the shallowest open node from the deque that has held it longest. The
//! incumbent is shared and only ever improves, each update re-verified by an
//! exact evaluation. Node bounds come from the RLT2 tensors (warm nodes near
//! the root inherit folded tensors from their parent) or from a fresh RLT1
//! ascent (cold nodes deeper down, where per-node D tensors would not fit in
//! memory). Fathoming uses `lb > ub - 1 + 1e-6`, valid because instance
//! costs are integral.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::heuristic::{heuristic_ub, HeuristicConfig};
use crate::instance::{evaluate, Permutation, QapInstance};
use crate::report::{
    ConfigEcho, SolveReport, SolveStatus, TrajectoryKind, TrajectorySample, REPORT_SCHEMA_VERSION,
};
use crate::rlt::{
    dual_ascent_rlt1, dual_ascent_rlt2, dual_ascent_rlt2_observed, init_dual, AscentConfig,
    CapacityError, DualState, RltLevel, SubQap,
};

/// Epsilon of the integral pruning rule.
pub const PRUNE_EPS: f64 = 1e-6;

/// A node is fathomed when its bound exceeds this threshold.
#[inline]
pub fn prune_threshold(ub: i64) -> f64 {
    ub as f64 - 1.0 + PRUNE_EPS
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("oracle refuses instances larger than {max}, got {got}")]
    OracleTooLarge { max: usize, got: usize },
}

/// Best feasible solution found so far.
#[derive(Debug, Clone)]
pub struct Incumbent {
    pub perm: Permutation,
    pub value: i64,
}

/// A branch-and-bound subproblem.
#[derive(Debug, Clone)]
pub struct Node {
    /// Fixed assignments in original indices, in fix order.
    pub fixed: Vec<(usize, usize)>,
    /// Original facility index of each local row.
    pub free_fac: Vec<usize>,
    /// Original location index of each local column.
    pub free_loc: Vec<usize>,
    /// Reduced problem over the free indices.
    pub sub: SubQap,
    /// Constant absorbed by the fixed assignments:
    /// full cost = shift + sub.eval(local completion).
    pub shift: i64,
    /// Best known valid lower bound on every completion of `fixed`.
    pub base_lb: f64,
    /// Warm reduced-cost tensors, referenced to the full-problem cost.
    pub dual: Option<DualState>,
    pub depth: usize,
}

impl Node {
    pub fn root(inst: &QapInstance) -> Node {
        Node {
            fixed: Vec::new(),
            free_fac: (0..inst.n).collect(),
            free_loc: (0..inst.n).collect(),
            sub: SubQap::from_instance(inst),
            shift: 0,
            base_lb: 0.0,
            dual: None,
            depth: 0,
        }
    }

    pub fn free(&self) -> usize {
        self.free_fac.len()
    }

    /// Child fixing local `(fac, loc)`; tensors are attached by the caller.
    fn child_skeleton(&self, fac: usize, loc: usize) -> Node {
        let (sub, delta) = self.sub.child(fac, loc);
        let mut fixed = self.fixed.clone();
        fixed.push((self.free_fac[fac], self.free_loc[loc]));
        let mut free_fac = self.free_fac.clone();
        free_fac.remove(fac);
        let mut free_loc = self.free_loc.clone();
        free_loc.remove(loc);
        Node {
            fixed,
            free_fac,
            free_loc,
            sub,
            shift: self.shift + delta,
            base_lb: self.base_lb,
            dual: None,
            depth: self.depth + 1,
        }
    }

    /// Completes a local permutation into an original-index permutation.
    pub fn full_permutation(&self, local: &[usize]) -> Permutation {
        debug_assert_eq!(local.len(), self.free());
        let n = self.fixed.len() + self.free();
        let mut p = vec![usize::MAX; n];
        for &(f, l) in &self.fixed {
            p[f] = l;
        }
        for (x, &y) in local.iter().enumerate() {
            p[self.free_fac[x]] = self.free_loc[y];
        }
        Permutation::new(p).expect("completion is a bijection")
    }

    /// Rebuilds a node from its fixed pairs by replaying the folds.
    pub fn rebuild(inst: &QapInstance, fixed: &[(usize, usize)], base_lb: f64) -> Node {
        let mut node = Node::root(inst);
        for &(f, l) in fixed {
            let fac = node
                .free_fac
                .iter()
                .position(|&x| x == f)
                .expect("fixed facility is free");
            let loc = node
                .free_loc
                .iter()
                .position(|&y| y == l)
                .expect("fixed location is free");
            node = node.child_skeleton(fac, loc);
        }
        node.base_lb = base_lb.max(node.shift as f64);
        node
    }
}

/// Root node: full RLT2 state after a dual ascent against `ub`.
pub fn make_root(inst: &QapInstance, ub: i64, cfg: &SolveConfig) -> Result<Node, SolveError> {
    let mut node = Node::root(inst);
    if node.free() <= 2 {
        return Ok(node);
    }
    let mut state = init_dual(&node.sub, RltLevel::Rlt2, cfg.mem_limit)?;
    let acfg = AscentConfig {
        k: cfg.k,
        max_iters: cfg.root_iters,
        ..AscentConfig::default()
    };
    let r = dual_ascent_rlt2(&mut state, ub as f64, &acfg);
    node.base_lb = r.lb;
    node.dual = Some(state);
    Ok(node)
}

/// Which line strong branching picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Row,
    Column,
}

#[derive(Debug, Clone)]
pub struct LineChoice {
    pub kind: LineKind,
    /// Original index of the selected facility row or location column.
    pub index: usize,
    /// Local index within the node's free lists.
    pub local: usize,
    /// The line's min-estimate, itself a valid bound on the node.
    pub score: f64,
}

/// Per-candidate child bounds: a cold child plus a capped RLT1 ascent for
/// every feasible assignment of the node's free indices.
pub fn sb_estimates(node: &Node, ub: i64, cfg: &SolveConfig) -> Vec<f64> {
    let m = node.free();
    debug_assert!(m >= 3);
    let acfg = AscentConfig {
        k: cfg.k,
        max_iters: cfg.sb_iters,
        ..AscentConfig::default()
    };
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|x| (0..m).map(move |y| (x, y))).collect();
    use rayon::prelude::*;
    cells
        .par_iter()
        .map(|&(x, y)| {
            let (child, delta) = node.sub.child(x, y);
            let shifted = (node.shift + delta) as f64;
            if child.n >= 3 {
                let mut state = init_dual(&child, RltLevel::Rlt1, None)
                    .expect("RLT1 state has no capacity gate");
                let local_ub = (ub as f64 - shifted).max(1.0);
                let r = dual_ascent_rlt1(&mut state, local_ub, &acfg);
                shifted + r.lb
            } else {
                // Two free indices left: the exact best completion.
                let best = child.eval(&[0, 1]).min(child.eval(&[1, 0]));
                shifted + best as f64
            }
        })
        .collect()
}

/// Picks the row or column whose weakest candidate bound is largest.
/// Ties break to the lowest original index, rows before columns.
pub fn select_line(node: &Node, estimates: &[f64]) -> LineChoice {
    let m = node.free();
    let mut best = LineChoice {
        kind: LineKind::Row,
        index: node.free_fac[0],
        local: 0,
        score: f64::NEG_INFINITY,
    };
    for x in 0..m {
        let score = (0..m)
            .map(|y| estimates[x * m + y])
            .fold(f64::INFINITY, f64::min);
        if score > best.score {
            best = LineChoice {
                kind: LineKind::Row,
                index: node.free_fac[x],
                local: x,
                score,
            };
        }
    }
    for y in 0..m {
        let score = (0..m)
            .map(|x| estimates[x * m + y])
            .fold(f64::INFINITY, f64::min);
        if score > best.score {
            best = LineChoice {
                kind: LineKind::Column,
                index: node.free_loc[y],
                local: y,
                score,
            };
        }
    }
    best
}

/// Strong branching: evaluate every candidate assignment with a cheap RLT1
/// bound and return the line with the highest guaranteed child bound.
pub fn strong_branch_select(node: &Node, ub: i64, cfg: &SolveConfig) -> (LineKind, usize) {
    let estimates = sb_estimates(node, ub, cfg);
    let choice = select_line(node, &estimates);
    (choice.kind, choice.index)
}

/// Tensor handling for child construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchMode {
    /// Children inherit folded parent tensors (requires a parent D tensor).
    Warm,
    /// Children carry only the reduced problem; bounds are recomputed.
    Cold,
}

/// Children of `node` along the selected line, one per feasible assignment,
/// excluding candidates whose estimate already exceeds the pruning
/// threshold. Children are ordered so the most promising (lowest estimate)
/// is last, ready to be popped first by depth-first search.
pub fn branch_children(
    node: &Node,
    choice: &LineChoice,
    estimates: &[f64],
    mode: BranchMode,
    ub: i64,
) -> Vec<Node> {
    let m = node.free();
    let threshold = prune_threshold(ub);
    let mut children = Vec::with_capacity(m);
    for t in 0..m {
        let (x, y) = match choice.kind {
            LineKind::Row => (choice.local, t),
            LineKind::Column => (t, choice.local),
        };
        let est = estimates[x * m + y];
        if est > threshold {
            continue;
        }
        let mut child = node.child_skeleton(x, y);
        child.base_lb = child.base_lb.max(est).max(child.shift as f64);
        if mode == BranchMode::Warm && child.free() >= 3 {
            if let Some(parent_state) = &node.dual {
                let folded = parent_state.fold_child(x, y);
                child.base_lb = child.base_lb.max(folded.lb());
                child.dual = Some(folded);
            }
        }
        children.push((est, child));
    }
    children.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    children.into_iter().map(|(_, c)| c).collect()
}

/// Exhaustive optimum for small instances; the test oracle for the solver.
pub fn oracle_qap(inst: &QapInstance) -> Result<(i64, Permutation), SolveError> {
    const MAX: usize = 8;
    if inst.n > MAX {
        return Err(SolveError::OracleTooLarge {
            max: MAX,
            got: inst.n,
        });
    }
    let mut perm: Vec<usize> = (0..inst.n).collect();
    let mut best_value = i64::MAX;
    let mut best_perm = perm.clone();
    permute(&mut perm, 0, &mut |p| {
        let v = evaluate_slice(inst, p);
        if v < best_value {
            best_value = v;
            best_perm = p.to_vec();
        }
    });
    Ok((best_value, Permutation::new(best_perm).expect("bijection")))
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

fn evaluate_slice(inst: &QapInstance, perm: &[usize]) -> i64 {
    let n = inst.n;
    let mut total = 0i64;
    for i in 0..n {
        let pi = perm[i];
        for k in 0..n {
            total += inst.flow.get(i, k) * inst.dist.get(pi, perm[k]);
        }
    }
    total
}

/// Checkpoint schema, versioned JSON. Indices are 1-based as in every file
/// format; open nodes are stored cold (fixed pairs and bound only).
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointOpenNode {
    /// Fixed (facility, location) pairs, 1-based, in fix order.
    pub fixed: Vec<(usize, usize)>,
    pub base_lb: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format_version: u32,
    /// Hex SHA-256 of the instance's canonical bytes.
    pub instance_digest: String,
    pub incumbent_value: i64,
    /// 1-based incumbent permutation.
    pub incumbent_perm: Vec<usize>,
    pub open: Vec<CheckpointOpenNode>,
    pub nodes_fathomed: u64,
    pub nodes_expanded: u64,
    pub elapsed_seconds: f64,
}

pub fn instance_digest(inst: &QapInstance) -> String {
    let mut hasher = Sha256::new();
    hasher.update(inst.canonical_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Serializes a checkpoint to JSON bytes. Only the cold form of each open
/// node is written: its fixed pairs and bound.
pub fn checkpoint_save(
    inst: &QapInstance,
    incumbent: &Incumbent,
    open: &[Node],
    nodes_fathomed: u64,
    nodes_expanded: u64,
    elapsed_seconds: f64,
) -> Vec<u8> {
    let entries = open.iter().map(|n| CheckpointOpenNode {
        fixed: n.fixed.iter().map(|&(f, l)| (f + 1, l + 1)).collect(),
        base_lb: n.base_lb,
    });
    checkpoint_bytes(
        inst,
        incumbent,
        entries,
        nodes_fathomed,
        nodes_expanded,
        elapsed_seconds,
    )
}

fn checkpoint_bytes(
    inst: &QapInstance,
    incumbent: &Incumbent,
    open: impl Iterator<Item = CheckpointOpenNode>,
    nodes_fathomed: u64,
    nodes_expanded: u64,
    elapsed_seconds: f64,
) -> Vec<u8> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        instance_digest: instance_digest(inst),
        incumbent_value: incumbent.value,
        incumbent_perm: incumbent.perm.to_one_based(),
        open: open.collect(),
        nodes_fathomed,
        nodes_expanded,
        elapsed_seconds,
    };
    serde_json::to_vec_pretty(&file).expect("checkpoint serialization cannot fail")
}

/// Parsed and validated checkpoint, nodes rebuilt in cold form.
#[derive(Debug)]
pub struct ResumeState {
    pub incumbent: Incumbent,
    pub open: Vec<Node>,
    pub nodes_fathomed: u64,
    pub nodes_expanded: u64,
    pub elapsed_seconds: f64,
}

pub fn checkpoint_load(bytes: &[u8], inst: &QapInstance) -> Result<ResumeState, SolveError> {
    let file: CheckpointFile = serde_json::from_slice(bytes)
        .map_err(|e| SolveError::Checkpoint(format!("malformed checkpoint: {e}")))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(SolveError::Checkpoint(format!(
            "format version mismatch: file has {}, expected {}",
            file.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let digest = instance_digest(inst);
    if file.instance_digest != digest {
        return Err(SolveError::Checkpoint(format!(
            "instance digest mismatch: file has {}, instance is {digest}",
            file.instance_digest
        )));
    }
    let perm_zero: Vec<usize> = file
        .incumbent_perm
        .iter()
        .map(|&x| {
            x.checked_sub(1)
                .ok_or_else(|| SolveError::Checkpoint("permutation index 0 in 1-based data".into()))
        })
        .collect::<Result<_, _>>()?;
    let perm = Permutation::new(perm_zero)
        .map_err(|e| SolveError::Checkpoint(format!("bad incumbent permutation: {e}")))?;
    let value = evaluate(inst, &perm);
    if value != file.incumbent_value {
        return Err(SolveError::Checkpoint(format!(
            "incumbent does not evaluate to its declared value: {} vs {value}",
            file.incumbent_value
        )));
    }
    let open = file
        .open
        .iter()
        .map(|o| {
            let fixed: Vec<(usize, usize)> = o.fixed.iter().map(|&(f, l)| (f - 1, l - 1)).collect();
            Node::rebuild(inst, &fixed, o.base_lb)
        })
        .collect();
    Ok(ResumeState {
        incumbent: Incumbent { perm, value },
        open,
        nodes_fathomed: file.nodes_fathomed,
        nodes_expanded: file.nodes_expanded,
        elapsed_seconds: file.elapsed_seconds,
    })
}

/// Atomic write: new file beside the target, then rename over it.
pub fn write_checkpoint_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone)]
pub struct CheckpointConfig {
    pub path: PathBuf,
    pub interval: Duration,
}

/// Solver configuration; defaults suit the bundled benchmark sizes.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub workers: usize,
    /// Minimal ascent progress as a fraction of the upper bound.
    pub k: f64,
    pub root_iters: usize,
    pub node_iters: usize,
    pub sb_iters: usize,
    /// Children at this depth or shallower inherit warm tensors.
    pub warm_depth: usize,
    pub ub_override: Option<i64>,
    pub seed: u64,
    /// Heuristic restarts; `None` scales with the instance size.
    pub restarts: Option<usize>,
    pub time_cap: Option<Duration>,
    pub node_cap: Option<u64>,
    pub mem_limit: Option<u64>,
    pub checkpoint: Option<CheckpointConfig>,
    pub resume: Option<PathBuf>,
    /// External interrupt flag (wired to a signal handler by the CLI).
    pub stop_flag: Option<Arc<AtomicBool>>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            workers: 1,
            k: 1e-5,
            root_iters: 1000,
            node_iters: 50,
            sb_iters: 1,
            warm_depth: 2,
            ub_override: None,
            seed: 1,
            restarts: None,
            time_cap: None,
            node_cap: None,
            mem_limit: None,
            checkpoint: None,
            resume: None,
            stop_flag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StopCause {
    Finished,
    TimeCap,
    NodeCap,
    Interrupted,
}

struct Coord {
    stop: Option<StopCause>,
    pause: bool,
    parked: usize,
    active: usize,
}

struct Shared<'a> {
    inst: &'a QapInstance,
    cfg: &'a SolveConfig,
    deques: Vec<Mutex<VecDeque<Node>>>,
    open: AtomicUsize,
    busy: AtomicUsize,
    incumbent: Mutex<Incumbent>,
    /// Effective pruning bound: min(incumbent value, user override).
    ub: AtomicI64,
    coord: Mutex<Coord>,
    cv: Condvar,
    fathomed: AtomicU64,
    expanded: AtomicU64,
    max_depth: AtomicUsize,
    tensor_bytes: AtomicU64,
    peak_tensor_bytes: AtomicU64,
    trajectory: Mutex<Vec<TrajectorySample>>,
    t0: Instant,
}

impl<'a> Shared<'a> {
    fn ub(&self) -> i64 {
        self.ub.load(Ordering::SeqCst)
    }

    fn push_sample(&self, kind: TrajectoryKind, value: f64) {
        self.trajectory.lock().unwrap().push(TrajectorySample {
            seconds: self.t0.elapsed().as_secs_f64(),
            kind,
            value,
        });
    }

    /// Improves the incumbent if strictly better; the candidate is always
    /// re-evaluated exactly before acceptance.
    fn offer_incumbent(&self, perm: Permutation, value: i64) {
        let verified = evaluate(self.inst, &perm);
        assert_eq!(verified, value, "incumbent candidate fails re-evaluation");
        let mut inc = self.incumbent.lock().unwrap();
        if value < inc.value {
            inc.value = value;
            inc.perm = perm;
            self.ub.fetch_min(value, Ordering::SeqCst);
            drop(inc);
            self.push_sample(TrajectoryKind::Ub, value as f64);
        }
    }

    fn account_tensor_alloc(&self, n: usize) {
        if let Ok(est) = crate::instance::estimate_memory(n) {
            let now = self
                .tensor_bytes
                .fetch_add(est.bytes_total, Ordering::SeqCst)
                + est.bytes_total;
            self.peak_tensor_bytes.fetch_max(now, Ordering::SeqCst);
        }
    }

    fn account_tensor_free(&self, n: usize) {
        if let Ok(est) = crate::instance::estimate_memory(n) {
            self.tensor_bytes
                .fetch_sub(est.bytes_total, Ordering::SeqCst);
        }
    }

    fn request_stop(&self, cause: StopCause) {
        let mut g = self.coord.lock().unwrap();
        if g.stop.is_none() {
            g.stop = Some(cause);
        }
        self.cv.notify_all();
    }

    fn push_children(&self, me: usize, children: Vec<Node>) {
        let mut q = self.deques[me].lock().unwrap();
        let count = children.len();
        for c in children {
            if c.dual.is_some() {
                self.account_tensor_alloc(c.free());
            }
            q.push_back(c);
        }
        drop(q);
        self.open.fetch_add(count, Ordering::SeqCst);
        self.cv.notify_all();
    }

    fn pop_own(&self, me: usize) -> Option<Node> {
        let node = self.deques[me].lock().unwrap().pop_back();
        if node.is_some() {
            self.open.fetch_sub(1, Ordering::SeqCst);
        }
        node
    }

    /// Steals the shallowest front node across all other deques.
    fn steal(&self, me: usize) -> Option<Node> {
        let mut victim: Option<(usize, usize)> = None;
        for (w, dq) in self.deques.iter().enumerate() {
            if w == me {
                continue;
            }
            if let Some(front) = dq.lock().unwrap().front() {
                let depth = front.depth;
                if victim.is_none_or(|(_, d)| depth < d) {
                    victim = Some((w, depth));
                }
            }
        }
        let (w, _) = victim?;
        let node = self.deques[w].lock().unwrap().pop_front();
        if node.is_some() {
            self.open.fetch_sub(1, Ordering::SeqCst);
        }
        node
    }

    fn drain_open(&self) -> Vec<Node> {
        let mut out = Vec::new();
        for dq in &self.deques {
            let mut q = dq.lock().unwrap();
            while let Some(n) = q.pop_front() {
                self.open.fetch_sub(1, Ordering::SeqCst);
                out.push(n);
            }
        }
        out
    }
}

/// Closes a node whose free count is at most 2 by direct enumeration.
fn enumerate_leaf(shared: &Shared<'_>, node: &Node) {
    let free = node.free();
    let locals: Vec<Vec<usize>> = match free {
        0 => vec![vec![]],
        1 => vec![vec![0]],
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => unreachable!("leaf enumeration called with {free} free indices"),
    };
    for local in locals {
        let value = node.shift + node.sub.eval(&local);
        if (value as f64) <= prune_threshold(shared.ub()) {
            let perm = node.full_permutation(&local);
            shared.offer_incumbent(perm, value);
        }
    }
}

fn node_ascent_bound(shared: &Shared<'_>, node: &mut Node) -> f64 {
    let cfg = shared.cfg;
    let ub = shared.ub();
    match node.dual.take() {
        Some(mut state) => {
            let acfg = AscentConfig {
                k: cfg.k,
                max_iters: cfg.node_iters,
                ..AscentConfig::default()
            };
            let r = dual_ascent_rlt2(&mut state, ub as f64, &acfg);
            node.dual = Some(state);
            r.lb
        }
        None => {
            let mut state = init_dual(&node.sub, RltLevel::Rlt1, None)
                .expect("RLT1 state has no capacity gate");
            state.add_to_lb(node.shift as f64);
            let acfg = AscentConfig {
                k: cfg.k,
                max_iters: cfg.node_iters,
                ..AscentConfig::default()
            };
            let r = dual_ascent_rlt1(&mut state, ub as f64, &acfg);
            r.lb
        }
    }
}

fn process_node(shared: &Shared<'_>, me: usize, mut node: Node) {
    let had_dual = node.dual.is_some();
    let dual_size = node.free();
    shared.max_depth.fetch_max(node.depth, Ordering::SeqCst);

    let finish = |shared: &Shared<'_>| {
        if had_dual {
            shared.account_tensor_free(dual_size);
        }
    };

    if node.base_lb > prune_threshold(shared.ub()) {
        shared.fathomed.fetch_add(1, Ordering::SeqCst);
        finish(shared);
        return;
    }
    if node.free() <= 2 {
        enumerate_leaf(shared, &node);
        shared.fathomed.fetch_add(1, Ordering::SeqCst);
        finish(shared);
        return;
    }

    let bound = node_ascent_bound(shared, &mut node);
    node.base_lb = node.base_lb.max(bound);
    if node.base_lb > prune_threshold(shared.ub()) {
        shared.fathomed.fetch_add(1, Ordering::SeqCst);
        finish(shared);
        return;
    }

    let ub = shared.ub();
    let estimates = sb_estimates(&node, ub, shared.cfg);
    let choice = select_line(&node, &estimates);
    // The line's min-estimate bounds the whole node: every completion
    // assigns the selected line somewhere.
    if choice.score > prune_threshold(ub) {
        shared.fathomed.fetch_add(1, Ordering::SeqCst);
        finish(shared);
        return;
    }
    let mode = if node.depth < shared.cfg.warm_depth && node.dual.is_some() {
        BranchMode::Warm
    } else {
        BranchMode::Cold
    };
    let children = branch_children(&node, &choice, &estimates, mode, ub);
    shared.expanded.fetch_add(1, Ordering::SeqCst);
    finish(shared);
    drop(node);
    shared.push_children(me, children);
}

fn worker_loop(shared: &Shared<'_>, me: usize) {
    loop {
        {
            let mut g = shared.coord.lock().unwrap();
            loop {
                if g.stop.is_some() {
                    g.active -= 1;
                    shared.cv.notify_all();
                    return;
                }
                if g.pause {
                    g.parked += 1;
                    shared.cv.notify_all();
                    g = shared.cv.wait(g).unwrap();
                    g.parked -= 1;
                    continue;
                }
                break;
            }
        }

        shared.busy.fetch_add(1, Ordering::SeqCst);
        let node = shared.pop_own(me).or_else(|| shared.steal(me));
        match node {
            Some(node) => {
                process_node(shared, me, node);
                shared.busy.fetch_sub(1, Ordering::SeqCst);
                if let Some(cap) = shared.cfg.node_cap {
                    let done = shared.fathomed.load(Ordering::SeqCst)
                        + shared.expanded.load(Ordering::SeqCst);
                    if done >= cap {
                        shared.request_stop(StopCause::NodeCap);
                    }
                }
            }
            None => {
                shared.busy.fetch_sub(1, Ordering::SeqCst);
                if shared.open.load(Ordering::SeqCst) == 0
                    && shared.busy.load(Ordering::SeqCst) == 0
                {
                    shared.request_stop(StopCause::Finished);
                } else {
                    std::thread::sleep(Duration::from_micros(200));
                }
            }
        }
    }
}

/// Waits until every worker is parked, with work frozen.
fn pause_workers(shared: &Shared<'_>) {
    let mut g = shared.coord.lock().unwrap();
    g.pause = true;
    while g.stop.is_none() && g.parked < g.active {
        g = shared
            .cv
            .wait_timeout(g, Duration::from_millis(10))
            .unwrap()
            .0;
    }
}

fn resume_workers(shared: &Shared<'_>) {
    let mut g = shared.coord.lock().unwrap();
    g.pause = false;
    drop(g);
    shared.cv.notify_all();
}

fn write_interval_checkpoint(shared: &Shared<'_>, path: &Path, base_elapsed: f64) {
    // Quiescent: workers are parked, every node is in a deque. Only the
    // cold form is serialized, so warm tensors are never copied here.
    let mut entries = Vec::new();
    for dq in &shared.deques {
        let q = dq.lock().unwrap();
        entries.extend(q.iter().map(|n| CheckpointOpenNode {
            fixed: n.fixed.iter().map(|&(f, l)| (f + 1, l + 1)).collect(),
            base_lb: n.base_lb,
        }));
    }
    let incumbent = shared.incumbent.lock().unwrap().clone();
    let bytes = checkpoint_bytes(
        shared.inst,
        &incumbent,
        entries.into_iter(),
        shared.fathomed.load(Ordering::SeqCst),
        shared.expanded.load(Ordering::SeqCst),
        base_elapsed + shared.t0.elapsed().as_secs_f64(),
    );
    if let Err(e) = write_checkpoint_file(path, &bytes) {
        eprintln!("warning: checkpoint write failed: {e}");
    }
}

/// Proven-exact solve: branch-and-bound to exhaustion (or to a configured
/// cap, reported honestly as such).
/// Heuristic restart count when the configuration leaves it automatic.
pub fn default_restarts(n: usize) -> usize {
    (20 * n).max(64)
}

pub fn solve_bnb(inst: &QapInstance, cfg: &SolveConfig) -> Result<SolveReport, SolveError> {
    let t0 = Instant::now();
    assert!(cfg.workers >= 1, "at least one worker required");

    // Initial incumbent from the heuristic; a user bound can tighten pruning
    // but never replaces the feasible witness.
    let hcfg = HeuristicConfig {
        restarts: cfg.restarts.unwrap_or_else(|| default_restarts(inst.n)),
        rng_seed: cfg.seed,
        time_cap: None,
    };
    let (hperm, hvalue) = heuristic_ub(inst, &hcfg);
    let mut incumbent = Incumbent {
        perm: hperm,
        value: hvalue,
    };

    let mut resumed_fathomed = 0u64;
    let mut resumed_expanded = 0u64;
    let mut base_elapsed = 0.0f64;
    let mut initial_nodes: Option<Vec<Node>> = None;
    if let Some(resume_path) = &cfg.resume {
        let bytes = std::fs::read(resume_path)?;
        let state = checkpoint_load(&bytes, inst)?;
        if state.incumbent.value < incumbent.value {
            incumbent = state.incumbent;
        }
        resumed_fathomed = state.nodes_fathomed;
        resumed_expanded = state.nodes_expanded;
        base_elapsed = state.elapsed_seconds;
        initial_nodes = Some(state.open);
    }

    let effective_ub = cfg
        .ub_override
        .map_or(incumbent.value, |u| u.min(incumbent.value));

    // Tiny instances: direct enumeration, no tensors.
    if inst.n <= 2 {
        let (value, perm) = oracle_qap(inst).expect("n <= 2 fits the oracle");
        let status = SolveStatus::Optimal;
        return Ok(assemble_report(
            inst,
            cfg,
            Incumbent { perm, value },
            None,
            status,
            value as f64,
            1,
            0,
            0,
            t0,
            0,
            Vec::new(),
        ));
    }

    let shared = Shared {
        inst,
        cfg,
        deques: (0..cfg.workers)
            .map(|_| Mutex::new(VecDeque::new()))
            .collect(),
        open: AtomicUsize::new(0),
        busy: AtomicUsize::new(0),
        ub: AtomicI64::new(effective_ub),
        incumbent: Mutex::new(incumbent),
        coord: Mutex::new(Coord {
            stop: None,
            pause: false,
            parked: 0,
            active: cfg.workers,
        }),
        cv: Condvar::new(),
        fathomed: AtomicU64::new(resumed_fathomed),
        expanded: AtomicU64::new(resumed_expanded),
        max_depth: AtomicUsize::new(0),
        tensor_bytes: AtomicU64::new(0),
        peak_tensor_bytes: AtomicU64::new(0),
        trajectory: Mutex::new(Vec::new()),
        t0,
    };

    shared.push_sample(TrajectoryKind::Ub, shared.ub() as f64);

    // Root bound (fresh runs) or rebuilt open set (resumed runs).
    let root_lb;
    let start_nodes = match initial_nodes {
        Some(nodes) => {
            let min = nodes
                .iter()
                .map(|n| n.base_lb)
                .fold(f64::INFINITY, f64::min);
            root_lb = if min.is_finite() {
                min
            } else {
                shared.ub() as f64
            };
            nodes
        }
        None => {
            let mut node = Node::root(inst);
            if node.free() > 2 {
                let mut state = init_dual(&node.sub, RltLevel::Rlt2, cfg.mem_limit)?;
                shared.account_tensor_alloc(inst.n);
                let acfg = AscentConfig {
                    k: cfg.k,
                    max_iters: cfg.root_iters,
                    ..AscentConfig::default()
                };
                let ub_now = shared.ub();
                let r =
                    dual_ascent_rlt2_observed(&mut state, ub_now as f64, &acfg, &mut |_, _, lb| {
                        shared.push_sample(TrajectoryKind::Lb, lb)
                    });
                node.base_lb = r.lb;
                node.dual = Some(state);
            }
            root_lb = node.base_lb;
            vec![node]
        }
    };

    for (idx, node) in start_nodes.into_iter().enumerate() {
        let w = idx % cfg.workers;
        let mut q = shared.deques[w].lock().unwrap();
        q.push_back(node);
        shared.open.fetch_add(1, Ordering::SeqCst);
    }

    std::thread::scope(|scope| {
        for w in 0..cfg.workers {
            let shared_ref = &shared;
            scope.spawn(move || worker_loop(shared_ref, w));
        }

        // Coordinator: interval checkpoints, caps and interrupts.
        let mut last_checkpoint = Instant::now();
        loop {
            {
                let g = shared.coord.lock().unwrap();
                if g.stop.is_some() && g.active == 0 {
                    break;
                }
            }
            if let Some(cap) = cfg.time_cap {
                if t0.elapsed() >= cap {
                    shared.request_stop(StopCause::TimeCap);
                }
            }
            if let Some(flag) = &cfg.stop_flag {
                if flag.load(Ordering::SeqCst) {
                    shared.request_stop(StopCause::Interrupted);
                }
            }
            if let Some(ck) = &cfg.checkpoint {
                if last_checkpoint.elapsed() >= ck.interval {
                    pause_workers(&shared);
                    let stopped = shared.coord.lock().unwrap().stop.is_some();
                    if !stopped {
                        write_interval_checkpoint(&shared, &ck.path, base_elapsed);
                    }
                    resume_workers(&shared);
                    last_checkpoint = Instant::now();
                }
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    });

    let cause = shared
        .coord
        .lock()
        .unwrap()
        .stop
        .expect("workers stopped without a cause");

    let leftovers = shared.drain_open();
    let incumbent = shared.incumbent.lock().unwrap().clone();

    // A final checkpoint preserves interrupted work.
    if let Some(ck) = &cfg.checkpoint {
        if cause != StopCause::Finished {
            let bytes = checkpoint_save(
                inst,
                &incumbent,
                &leftovers,
                shared.fathomed.load(Ordering::SeqCst),
                shared.expanded.load(Ordering::SeqCst),
                base_elapsed + t0.elapsed().as_secs_f64(),
            );
            write_checkpoint_file(&ck.path, &bytes)?;
        }
    }

    let status = match cause {
        StopCause::Finished => match cfg.ub_override {
            Some(floor) if incumbent.value > floor => SolveStatus::UbOnly,
            _ => SolveStatus::Optimal,
        },
        _ => SolveStatus::Capped,
    };
    let proven_floor = match (status, cfg.ub_override) {
        (SolveStatus::UbOnly, Some(floor)) => Some(floor),
        _ => None,
    };

    let trajectory = shared.trajectory.lock().unwrap().clone();
    Ok(assemble_report(
        inst,
        cfg,
        incumbent,
        proven_floor,
        status,
        root_lb,
        shared.fathomed.load(Ordering::SeqCst),
        shared.expanded.load(Ordering::SeqCst),
        shared.max_depth.load(Ordering::SeqCst),
        t0,
        shared.peak_tensor_bytes.load(Ordering::SeqCst),
        trajectory,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble_report(
    inst: &QapInstance,
    cfg: &SolveConfig,
    incumbent: Incumbent,
    proven_floor: Option<i64>,
    status: SolveStatus,
    root_lb: f64,
    fathomed: u64,
    expanded: u64,
    max_depth: usize,
    t0: Instant,
    peak_tensor_bytes: u64,
    trajectory: Vec<TrajectorySample>,
) -> SolveReport {
    SolveReport {
        schema_version: REPORT_SCHEMA_VERSION,
        instance: inst.name.clone(),
        n: inst.n,
        status,
        value: incumbent.value,
        permutation: incumbent.perm.to_one_based(),
        proven_floor,
        root_lb,
        nodes_fathomed: fathomed,
        nodes_expanded: expanded,
        max_depth,
        wall_seconds: t0.elapsed().as_secs_f64(),
        peak_tensor_bytes,
        trajectory,
        config: ConfigEcho {
            k: cfg.k,
            workers: cfg.workers,
            sb_iters: cfg.sb_iters,
            warm_depth: cfg.warm_depth,
            seed: cfg.seed,
            restarts: cfg.restarts.unwrap_or_else(|| default_restarts(inst.n)),
        },
    }
}
