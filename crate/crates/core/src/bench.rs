//! Benchmark harness: random unit-square instances per graph size, each
//! solver evaluated under common random numbers, emitted as an aligned text
//! table and as JSON.
//!
//! The JSON carries no wall times so identical configs give byte-identical
//! output; the text table shows them.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sop::{
    evaluate, paired_t_test, random_unit_instance, solve_exact, solve_greedy_offline, Metrics, OnlinePolicy, Route,
    SopError, SopInstance, Strategy, DEFAULT_DELTA,
};

/// Instance streams sit far above the trial streams used by `evaluate`.
const INSTANCE_STREAM: u64 = 1 << 63;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("bench config: {0}")]
    Config(String),
    #[error("bench config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Sop(#[from] SopError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[serde(alias = "greedy")]
    GreedyOffline,
    Online,
    Exact,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GreedyOffline => "greedy_offline",
            Self::Online => "online",
            Self::Exact => "exact",
        }
    }
}

fn default_trials() -> usize {
    100
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_solvers() -> Vec<Solver> {
    vec![Solver::GreedyOffline, Solver::Online]
}

/// Sizes count targets; start and end are two extra nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub budget: f64,
    pub variance: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_solvers")]
    pub solvers: Vec<Solver>,
    /// Risk level of the online policy.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Monte Carlo trials per candidate route inside the exact solver.
    #[serde(default = "default_trials")]
    pub exact_trials: usize,
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.into()));
        if self.sizes.is_empty() {
            return bad("sizes must not be empty");
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return bad("every size must be at least 2");
        }
        if self.trials == 0 || self.exact_trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.solvers.is_empty() {
            return bad("solvers must not be empty");
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return bad("budget must be finite and nonnegative");
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return bad("variance must be finite and nonnegative");
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1]");
        }
        Ok(())
    }
}

/// `n` targets uniform in the unit square with rewards on (0, 1], plus a
/// start at (0,0) and an end at (1,1) with reward 0, diagonal-normalized.
pub fn gen_instance(n: usize, seed: u64, budget: f64, variance: f64) -> Result<SopInstance, BenchError> {
    if n < 2 {
        return Err(BenchError::Config(format!("instance size {n} is below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INSTANCE_STREAM | n as u64);
    Ok(random_unit_instance(&mut rng, n, budget, variance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub graph: String,
    pub size: usize,
    pub solver: Solver,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Planned route for offline solvers, as node ids.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<String>>,
    #[serde(skip)]
    pub wall: Duration,
}

/// One-sided paired test of online over greedy on the same trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub graph: String,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub online_vs_greedy: Vec<Comparison>,
}

pub fn run_benchmark(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config.check()?;
    let mut rows = Vec::new();
    let mut online_vs_greedy = Vec::new();
    for &n in &config.sizes {
        let inst = gen_instance(n, config.seed, config.budget, config.variance)?;
        let graph = format!("graph{n}");
        let first = rows.len();
        for &solver in &config.solvers {
            let started = Instant::now();
            let (strategy, route) = match solver {
                Solver::GreedyOffline => route_strategy(&inst, solve_greedy_offline(&inst)?),
                Solver::Exact => route_strategy(&inst, solve_exact(&inst, config.exact_trials, config.seed)?),
                Solver::Online => {
                    (Strategy::Online(OnlinePolicy { delta: config.delta, ..OnlinePolicy::default() }), None)
                }
            };
            let metrics = evaluate(&strategy, &inst, config.trials, config.seed);
            rows.push(BenchRow { graph: graph.clone(), size: n, solver, metrics, route, wall: started.elapsed() });
        }
        let find = |s: Solver| rows[first..].iter().find(|r| r.solver == s);
        if let (Some(g), Some(o)) = (find(Solver::GreedyOffline), find(Solver::Online)) {
            if config.trials > 1 {
                let t = paired_t_test(&o.metrics.rewards, &g.metrics.rewards);
                online_vs_greedy.push(Comparison { graph, mean_diff: t.mean_diff, t: t.t, p_value: t.p_value });
            }
        }
    }
    Ok(BenchReport { config: config.clone(), rows, online_vs_greedy })
}

fn route_strategy(inst: &SopInstance, route: Route) -> (Strategy, Option<Vec<String>>) {
    let ids = inst.route_ids(&route);
    (Strategy::Route(route), Some(ids))
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned table with measured wall times.
    pub fn to_text(&self) -> String {
        let head = ["graph", "solver", "R", "R_stderr", "F", "trials", "wall_ms"];
        let mut cells: Vec<[String; 7]> = vec![head.map(String::from)];
        for r in &self.rows {
            let m = &r.metrics;
            cells.push([
                r.graph.clone(),
                r.solver.as_str().into(),
                format!("{:.3}", m.r),
                m.r_stderr.map_or_else(|| "undefined".into(), |s| format!("{s:.3}")),
                format!("{:.2}", m.f),
                m.trials.to_string(),
                format!("{:.1}", r.wall.as_secs_f64() * 1e3),
            ]);
        }
        let widths: Vec<usize> = (0..7).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, v)| if c < 2 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        }
        for c in &self.online_vs_greedy {
            writeln!(out, "{}: online - greedy = {:.3} (t = {:.2}, one-sided p = {:.2e})", c.graph, c.mean_diff, c.t, c.p_value)
                .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rules() {
        let cfg = BenchConfig::from_toml("sizes = [20]\nbudget = 2.0\nvariance = 0.1\nseed = 3").unwrap();
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.solvers, [Solver::GreedyOffline, Solver::Online]);
        assert!(BenchConfig::from_toml("sizes = [1]\nbudget = 2.0\nvariance = 0.1\nseed = 3").is_err());
        assert!(BenchConfig::from_toml("sizes = [5]\nbudget = 2.0\nvariance = 0.1\nseed = 3\ntrials = 0").is_err());
        assert!(BenchConfig::from_toml("sizes = [5]\nbudget = 2.0\nvariance = 0.1\nseed = 3\nlimit = 4").is_err());
        let cfg = BenchConfig::from_toml("sizes = [5]\nbudget = 2.0\nvariance = 0.1\nseed = 3\nsolvers = [\"greedy\"]");
        assert_eq!(cfg.unwrap().solvers, [Solver::GreedyOffline]);
    }
}
