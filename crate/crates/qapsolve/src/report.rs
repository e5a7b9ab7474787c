//! Machine-readable solve and bound reports.
//!
//! The JSON form is the interface for scripts and acceptance tooling; the
//! text form prints the same numbers. A reported incumbent permutation
//! always re-evaluates to the reported value, so reports are self-certifying.

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// The incumbent value is the proven optimum.
    Optimal,
    /// The search completed against a user-supplied upper bound that no
    /// found solution beat: nothing better than `proven_floor` exists.
    UbOnly,
    /// Stopped early (time cap, node cap or interrupt); best known values.
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Lb,
    Ub,
}

/// One bound-trajectory sample: when it happened and the new bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub seconds: f64,
    pub kind: TrajectoryKind,
    pub value: f64,
}

/// Configuration echo so a report identifies the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k: f64,
    pub workers: usize,
    pub sb_iters: usize,
    pub warm_depth: usize,
    pub seed: u64,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub instance: String,
    pub n: usize,
    pub status: SolveStatus,
    /// Incumbent value; the proven optimum when `status` is `optimal`.
    pub value: i64,
    /// Incumbent permutation, 1-based.
    pub permutation: Vec<usize>,
    /// Largest value proven unbeatable when a user bound drove pruning.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[serde(default)]
    pub proven_floor: Option<i64>,
    pub root_lb: f64,
    pub nodes_fathomed: u64,
    pub nodes_expanded: u64,
    pub max_depth: usize,
    pub wall_seconds: f64,
    pub peak_tensor_bytes: u64,
    pub trajectory: Vec<TrajectorySample>,
    pub config: ConfigEcho,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        let status = match self.status {
            SolveStatus::Optimal => "optimal",
            SolveStatus::UbOnly => "ub_only",
            SolveStatus::Capped => "capped",
        };
        let perm = self
            .permutation
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let mut out = String::new();
        out.push_str(&format!(
            "instance:        {} (n={})\n",
            self.instance, self.n
        ));
        out.push_str(&format!("status:          {status}\n"));
        out.push_str(&format!("value:           {}\n", self.value));
        out.push_str(&format!("permutation:     {perm}\n"));
        if let Some(floor) = self.proven_floor {
            out.push_str(&format!("proven floor:    {floor}\n"));
        }
        out.push_str(&format!("root lb:         {}\n", self.root_lb));
        out.push_str(&format!(
            "nodes:           {} fathomed, {} expanded, max depth {}\n",
            self.nodes_fathomed, self.nodes_expanded, self.max_depth
        ));
        out.push_str(&format!("wall seconds:    {}\n", self.wall_seconds));
        out.push_str(&format!("tensor bytes:    {}\n", self.peak_tensor_bytes));
        out.push_str(&format!(
            "config:          k={} workers={} sb_iters={} warm_depth={} seed={} restarts={}\n",
            self.config.k,
            self.config.workers,
            self.config.sb_iters,
            self.config.warm_depth,
            self.config.seed,
            self.config.restarts
        ));
        for s in &self.trajectory {
            let kind = match s.kind {
                TrajectoryKind::Lb => "lb",
                TrajectoryKind::Ub => "ub",
            };
            out.push_str(&format!("  t={:.3}s {} {}\n", s.seconds, kind, s.value));
        }
        out
    }
}

/// Root-bound report for the `bound` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema_version: u32,
    pub instance: String,
    pub n: usize,
    pub level: u8,
    pub lb: f64,
    pub ub: i64,
    /// `(ub - lb) / ub`.
    pub gap: f64,
    pub iterations: usize,
    pub status: String,
    pub wall_seconds: f64,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_text(&self) -> String {
        format!(
            "instance:     {} (n={})\nlevel:        RLT{}\nlb:           {}\nub:           {}\ngap:          {:.6}%\niterations:   {}\nstatus:       {}\nwall seconds: {}\n",
            self.instance,
            self.n,
            self.level,
            self.lb,
            self.ub,
            self.gap * 100.0,
            self.iterations,
            self.status,
            self.wall_seconds
        )
    }
}
