//! Stochastic orienteering: instances, an offline greedy route, an online
//! risk-aware policy, a brute-force oracle and Monte Carlo evaluation.
//!
//! Evaluation semantics: rewards are collected on arrival and kept when the
//! budget is later exceeded; a trial fails when its total travel cost
//! exceeds `B`, and ends at the violating leg.

mod guard;
mod stats;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

pub use guard::SopGuard;
pub use stats::{paired_t_test, PairedTest};

use crate::geo::{FarmMap, LocalXY};
use crate::sim::StochasticEdgeModel;

pub const EXACT_MAX_NODES: usize = 10;
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SopError {
    #[error("unknown tree id {0}")]
    UnknownTree(String),
    #[error("unknown node id {0}")]
    UnknownNode(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("INFEASIBLE: start to end needs {needed}, budget is {budget}")]
    Infeasible { needed: f64, budget: f64 },
    #[error("TOO_LARGE: exact solver handles at most {max} nodes, instance has {nodes}")]
    TooLarge { nodes: usize, max: usize },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SopNode {
    pub id: String,
    pub position: LocalXY,
    pub reward: f64,
}

/// File form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub nodes: Vec<SopNode>,
    pub start: String,
    pub end: String,
    pub budget: f64,
    #[serde(default)]
    pub variance: f64,
}

/// Diagonal-normalized orienteering instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SopInstance {
    nodes: Vec<SopNode>,
    start: usize,
    end: usize,
    budget: f64,
    model: StochasticEdgeModel,
    /// Length of one normalized unit in the input's units.
    scale: f64,
    dist: Vec<f64>,
}

impl SopInstance {
    /// Normalizes positions so their bounding box has unit diagonal and its
    /// lower-left corner at the origin.
    pub fn new(nodes: Vec<SopNode>, start: &str, end: &str, budget: f64, variance: f64) -> Result<Self, SopError> {
        if nodes.is_empty() {
            return Err(SopError::Invalid("no nodes".into()));
        }
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(SopError::Invalid("budget must be finite and nonnegative".into()));
        }
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(SopError::Invalid("variance must be finite and nonnegative".into()));
        }
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(SopError::DuplicateNode(n.id.clone()));
            }
            if !(n.reward >= 0.0 && n.reward.is_finite()) {
                return Err(SopError::Invalid(format!("node {}: reward must be finite and nonnegative", n.id)));
            }
            if !(n.position.x.is_finite() && n.position.y.is_finite()) {
                return Err(SopError::Invalid(format!("node {}: position must be finite", n.id)));
            }
        }
        let start = *index.get(start).ok_or_else(|| SopError::UnknownNode(start.into()))?;
        let end = *index.get(end).ok_or_else(|| SopError::UnknownNode(end.into()))?;
        let (mut lo, mut hi) = (nodes[0].position, nodes[0].position);
        for n in &nodes {
            lo = LocalXY::new(lo.x.min(n.position.x), lo.y.min(n.position.y));
            hi = LocalXY::new(hi.x.max(n.position.x), hi.y.max(n.position.y));
        }
        let scale = lo.distance(hi);
        if scale <= 0.0 {
            return Err(SopError::Invalid("all nodes coincide".into()));
        }
        let nodes: Vec<SopNode> = nodes
            .into_iter()
            .map(|n| SopNode {
                position: LocalXY::new((n.position.x - lo.x) / scale, (n.position.y - lo.y) / scale),
                ..n
            })
            .collect();
        let n = nodes.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = nodes[i].position.distance(nodes[j].position);
            }
        }
        Ok(Self { nodes, start, end, budget, model: StochasticEdgeModel::new(variance), scale, dist })
    }

    pub fn from_spec(spec: &InstanceSpec) -> Result<Self, SopError> {
        Self::new(spec.nodes.clone(), &spec.start, &spec.end, spec.budget, spec.variance)
    }

    pub fn to_spec(&self) -> InstanceSpec {
        InstanceSpec {
            nodes: self.nodes.clone(),
            start: self.nodes[self.start].id.clone(),
            end: self.nodes[self.end].id.clone(),
            budget: self.budget,
            variance: self.model.variance,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SopNode] {
        &self.nodes
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn model(&self) -> StochasticEdgeModel {
        self.model
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        Self { budget, ..self.clone() }
    }

    pub fn with_variance(&self, variance: f64) -> Self {
        Self { model: StochasticEdgeModel::new(variance), ..self.clone() }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.nodes.len() + j]
    }

    pub fn total_reward(&self) -> f64 {
        self.nodes.iter().map(|n| n.reward).sum()
    }

    /// Indices of nodes that can be visited between start and end.
    fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| i != self.start && i != self.end)
    }

    pub fn route_ids(&self, route: &Route) -> Vec<String> {
        route.0.iter().map(|&i| self.nodes[i].id.clone()).collect()
    }

    /// Mean length of a route.
    pub fn route_length(&self, route: &Route) -> f64 {
        route.0.windows(2).fold(0.0, |acc, w| acc + self.d(w[0], w[1]))
    }

    pub fn route_reward(&self, route: &Route) -> f64 {
        let mut seen = vec![false; self.len()];
        route.0.iter().fold(0.0, |acc, &i| {
            if std::mem::replace(&mut seen[i], true) { acc } else { acc + self.nodes[i].reward }
        })
    }

    fn check_feasible(&self) -> Result<(), SopError> {
        let needed = self.d(self.start, self.end);
        if needed > self.budget {
            return Err(SopError::Infeasible { needed, budget: self.budget });
        }
        Ok(())
    }
}

/// Where a farm mission starts or ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Deploy,
    Tree(String),
}

impl Endpoint {
    fn id(&self) -> String {
        match self {
            Self::Deploy => "deploy".into(),
            Self::Tree(id) => id.clone(),
        }
    }
}

/// Orienteering instance over farm trees. Targets get reward 1 unless listed
/// in `rewards`; endpoints get reward 0 unless they are also targets.
pub fn build_instance(
    farm: &FarmMap,
    targets: &[String],
    rewards: Option<&BTreeMap<String, f64>>,
    budget: f64,
    start: &Endpoint,
    end: &Endpoint,
    variance: f64,
) -> Result<SopInstance, SopError> {
    let mut nodes: Vec<SopNode> = Vec::new();
    let mut push = |id: String, position: LocalXY, reward: f64| {
        if let Some(n) = nodes.iter_mut().find(|n| n.id == id) {
            n.reward = n.reward.max(reward);
        } else {
            nodes.push(SopNode { id, position, reward });
        }
    };
    for ep in [start, end] {
        match ep {
            Endpoint::Deploy => push("deploy".into(), farm.deploy_local(), 0.0),
            Endpoint::Tree(id) => {
                let p = farm.tree_local(id).ok_or_else(|| SopError::UnknownTree(id.clone()))?;
                push(id.clone(), p, 0.0);
            }
        }
    }
    for id in targets {
        let p = farm.tree_local(id).ok_or_else(|| SopError::UnknownTree(id.clone()))?;
        let r = rewards.and_then(|m| m.get(id)).copied().unwrap_or(1.0);
        push(id.clone(), p, r);
    }
    SopInstance::new(nodes, &start.id(), &end.id(), budget, variance)
}

/// Node indices from start to end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route(pub Vec<usize>);

/// Offline baseline: repeatedly take the affordable node with the best
/// reward-to-distance ratio, judged on mean costs, then go to the end.
pub fn solve_greedy_offline(inst: &SopInstance) -> Result<Route, SopError> {
    inst.check_feasible()?;
    let open = vec![true; inst.len()];
    let mut route = vec![inst.start];
    route.extend(greedy_route_from(inst, inst.start, 0.0, &open));
    route.push(inst.end);
    Ok(Route(route))
}

fn ratio(reward: f64, d: f64) -> f64 {
    if d > 0.0 { reward / d } else if reward > 0.0 { f64::INFINITY } else { 0.0 }
}

/// How the online policy judges whether a next leg is safe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feasibility {
    /// Only the next leg is random; the way to the end is taken at its mean.
    SingleLeg,
    /// Both the next leg and the direct way to the end are sampled.
    Rollout { samples: usize },
}

/// How the online policy ranks the safe candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Best reward per unit of distance from the current node.
    Ratio,
    /// Re-plan the rest of the mission from the current node for the best
    /// expected reward and head for the first safe node of that plan.
    Lookahead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlinePolicy {
    pub delta: f64,
    pub feasibility: Feasibility,
    pub scoring: Scoring,
}

impl Default for OnlinePolicy {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, feasibility: Feasibility::SingleLeg, scoring: Scoring::Lookahead }
    }
}

impl OnlinePolicy {
    pub fn ratio(delta: f64) -> Self {
        Self { delta, feasibility: Feasibility::SingleLeg, scoring: Scoring::Ratio }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineState<'a> {
    pub current: usize,
    /// Realized cost so far.
    pub spent: f64,
    pub unvisited: &'a [bool],
}

impl OnlineState<'_> {
    pub fn remaining_budget(&self, inst: &SopInstance) -> f64 {
        inst.budget - self.spent
    }
}

/// Probability that a leg of mean length `leg` followed by `rest` (at its
/// mean) fits into `budget - spent`.
pub fn leg_success_probability(model: &StochasticEdgeModel, leg: f64, rest: f64, spent: f64, budget: f64) -> f64 {
    let slack = budget - spent - rest;
    if model.variance == 0.0 || leg == 0.0 {
        // Same summation order as the evaluator.
        return if spent + leg + rest <= budget { 1.0 } else { 0.0 };
    }
    if slack <= 0.0 {
        return 0.0;
    }
    let v = model.variance;
    GammaDist::new(1.0 / v, 1.0 / v).expect("valid gamma").cdf(slack / leg)
}

fn rollout_probability(inst: &SopInstance, leg: f64, rest: f64, spent: f64, samples: usize, key: u64) -> f64 {
    if inst.model.variance == 0.0 {
        return leg_success_probability(&inst.model, leg, rest, spent, inst.budget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let ok = (0..samples.max(1))
        .filter(|_| {
            let a = leg * inst.model.sample_multiplier(&mut rng);
            let b = rest * inst.model.sample_multiplier(&mut rng);
            spent + a + b <= inst.budget
        })
        .count();
    ok as f64 / samples.max(1) as f64
}

/// Next node for the online policy. Candidates are unvisited nodes whose
/// leg keeps the way to the end within budget with probability at least
/// `1 - delta`; the end is returned when none qualifies. Among candidates,
/// [`Scoring::Ratio`] takes the best reward-to-distance ratio (ties by id)
/// and [`Scoring::Lookahead`] the first candidate on a re-planned route.
pub fn solve_online_step(state: &OnlineState<'_>, inst: &SopInstance, policy: &OnlinePolicy) -> usize {
    let cur = state.current;
    let safe: Vec<bool> = (0..inst.len())
        .map(|c| {
            if c == inst.start || c == inst.end || !state.unvisited[c] {
                return false;
            }
            let (leg, rest) = (inst.d(cur, c), inst.d(c, inst.end));
            let p = match policy.feasibility {
                Feasibility::SingleLeg => leg_success_probability(&inst.model, leg, rest, state.spent, inst.budget),
                Feasibility::Rollout { samples } => {
                    let key = (cur as u64) << 32 ^ (c as u64) ^ state.spent.to_bits().rotate_left(17);
                    rollout_probability(inst, leg, rest, state.spent, samples, key)
                }
            };
            p >= 1.0 - policy.delta
        })
        .collect();
    match policy.scoring {
        Scoring::Ratio => best_ratio(inst, cur, &safe).unwrap_or(inst.end),
        Scoring::Lookahead => {
            let plan = lookahead_route(inst, cur, state.spent, state.unvisited, policy.delta);
            plan.iter()
                .copied()
                .find(|&c| safe[c])
                .or_else(|| best_ratio(inst, cur, &safe))
                .unwrap_or(inst.end)
        }
    }
}

fn best_ratio(inst: &SopInstance, cur: usize, candidates: &[bool]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for c in (0..inst.len()).filter(|&c| candidates[c]) {
        let score = ratio(inst.nodes[c].reward, inst.d(cur, c));
        let better = match best {
            None => true,
            Some((s, b)) => score > s || (score == s && inst.nodes[c].id < inst.nodes[b].id),
        };
        if better {
            best = Some((score, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Re-planned remainder of the mission from `cur`: candidate routes from
/// cheapest insertion and the greedy ratio rule, each pruned while dropping
/// a node raises its expected reward, ranked by [`expected_route_reward`].
pub fn lookahead_route(inst: &SopInstance, cur: usize, spent: f64, open: &[bool], delta: f64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    let room = inst.budget - spent;
    let candidates = [
        insertion_route(inst, cur, room, open, 1.0),
        insertion_route(inst, cur, 0.85 * room, open, 1.0),
        insertion_route(inst, cur, 0.7 * room, open, 1.0),
        insertion_route(inst, cur, room, open, 2.0),
        greedy_route_from(inst, cur, spent, open),
    ];
    for route in candidates {
        let (value, route) = prune(inst, cur, spent, route, delta);
        if best.as_ref().map_or(true, |b| value > b.0) {
            best = Some((value, route));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// Expected reward collected along `route` from `cur` with `spent` used,
/// when rewards count only if the cost so far is within budget. The cost
/// of a prefix is approximated by a Gamma with its exact mean and variance.
/// The route is cut at the first leg the `delta` safety test would refuse
/// at mean spending, since the policy would head for the end there.
pub fn expected_route_reward(inst: &SopInstance, cur: usize, spent: f64, route: &[usize], delta: f64) -> f64 {
    let v = inst.model.variance;
    let room = inst.budget - spent;
    let (mut at, mut mean, mut sq, mut total) = (cur, 0.0, 0.0, 0.0);
    for &c in route {
        let leg = inst.d(at, c);
        if leg_success_probability(&inst.model, leg, inst.d(c, inst.end), spent + mean, inst.budget) < 1.0 - delta {
            break;
        }
        mean += leg;
        sq += leg * leg;
        at = c;
        let p = if v == 0.0 || sq == 0.0 {
            if mean <= room { 1.0 } else { 0.0 }
        } else if room <= 0.0 {
            0.0
        } else {
            let var = v * sq;
            GammaDist::new(mean * mean / var, mean / var).expect("valid gamma").cdf(room)
        };
        total += inst.nodes[c].reward * p;
    }
    total
}

/// Drops nodes one at a time, best gain first, while that raises the
/// expected reward.
fn prune(inst: &SopInstance, cur: usize, spent: f64, mut route: Vec<usize>, delta: f64) -> (f64, Vec<usize>) {
    let mut value = expected_route_reward(inst, cur, spent, &route, delta);
    loop {
        let mut best: Option<(f64, usize)> = None;
        for k in 0..route.len() {
            let mut r = route.clone();
            r.remove(k);
            let e = expected_route_reward(inst, cur, spent, &r, delta);
            if e > value + 1e-12 && best.map_or(true, |b| e > b.0) {
                best = Some((e, k));
            }
        }
        let Some((e, k)) = best else { return (value, route) };
        route.remove(k);
        value = e;
    }
}

/// Intermediate nodes chosen by the offline greedy rule starting at `cur`
/// with `spent` already used.
fn greedy_route_from(inst: &SopInstance, cur: usize, spent: f64, open: &[bool]) -> Vec<usize> {
    let mut taken = vec![false; inst.len()];
    let (mut at, mut used) = (cur, spent);
    let mut out = Vec::new();
    loop {
        let best = inst
            .targets()
            .filter(|&c| open[c] && !taken[c] && c != cur && used + inst.d(at, c) + inst.d(c, inst.end) <= inst.budget)
            .map(|c| (ratio(inst.nodes[c].reward, inst.d(at, c)), c))
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| inst.nodes[b.1].id.cmp(&inst.nodes[a.1].id)));
        let Some((_, c)) = best else { break };
        used += inst.d(at, c);
        taken[c] = true;
        out.push(c);
        at = c;
    }
    out
}

/// Intermediate nodes of a route from `cur` to the end of mean length at
/// most `limit`, built by cheapest insertion (best `reward^exponent` per
/// added length) and shortened by 2-opt after each insertion.
pub fn insertion_route(inst: &SopInstance, cur: usize, limit: f64, open: &[bool], exponent: f64) -> Vec<usize> {
    let mut route = vec![cur, inst.end];
    let mut length = inst.d(cur, inst.end);
    let mut free: Vec<usize> = inst.targets().filter(|&c| open[c] && c != cur).collect();
    loop {
        let mut best: Option<(f64, usize, usize, f64)> = None;
        for (k, &c) in free.iter().enumerate() {
            for i in 0..route.len() - 1 {
                let (a, b) = (route[i], route[i + 1]);
                let added = inst.d(a, c) + inst.d(c, b) - inst.d(a, b);
                if length + added > limit {
                    continue;
                }
                let score = ratio(inst.nodes[c].reward.powf(exponent), added.max(0.0));
                let better = match best {
                    None => true,
                    Some((s, bk, _, _)) => {
                        score > s || (score == s && inst.nodes[c].id < inst.nodes[free[bk]].id)
                    }
                };
                if better {
                    best = Some((score, k, i + 1, added));
                }
            }
        }
        let Some((_, k, pos, added)) = best else { break };
        route.insert(pos, free.swap_remove(k));
        length += added;
        length = two_opt(inst, &mut route, length);
    }
    route[1..route.len() - 1].to_vec()
}

/// Reverses segments while that shortens the path; endpoints stay fixed.
fn two_opt(inst: &SopInstance, route: &mut [usize], mut length: f64) -> f64 {
    let n = route.len();
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n.saturating_sub(3) {
            for j in i + 2..n - 1 {
                let (a, b, c, d) = (route[i], route[i + 1], route[j], route[j + 1]);
                let delta = inst.d(a, c) + inst.d(b, d) - inst.d(a, b) - inst.d(c, d);
                if delta < -1e-12 {
                    route[i + 1..=j].reverse();
                    length += delta;
                    improved = true;
                }
            }
        }
    }
    length
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Route(Route),
    Online(OnlinePolicy),
}

/// Sampled cost multipliers for one trial, one per directed edge.
pub struct TrialCosts {
    n: usize,
    m: Vec<f64>,
}

impl TrialCosts {
    /// Trial `t` of `seed`: ChaCha8 stream `t`, edges drawn row-major.
    pub fn draw(inst: &SopInstance, seed: u64, trial: usize) -> Self {
        let n = inst.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let m = (0..n * n).map(|_| inst.model.sample_multiplier(&mut rng)).collect();
        Self { n, m }
    }

    #[inline]
    pub fn cost(&self, inst: &SopInstance, i: usize, j: usize) -> f64 {
        inst.d(i, j) * self.m[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub reward: f64,
    pub cost: f64,
    pub failed: bool,
    pub path: Vec<usize>,
}

fn run_route(inst: &SopInstance, route: &Route, costs: &TrialCosts) -> TrialResult {
    let mut seen = vec![false; inst.len()];
    let (mut reward, mut spent) = (0.0, 0.0);
    let mut path = vec![route.0[0]];
    seen[route.0[0]] = true;
    for w in route.0.windows(2) {
        spent += costs.cost(inst, w[0], w[1]);
        path.push(w[1]);
        if spent > inst.budget {
            return TrialResult { reward, cost: spent, failed: true, path };
        }
        if !std::mem::replace(&mut seen[w[1]], true) {
            reward += inst.nodes[w[1]].reward;
        }
    }
    TrialResult { reward, cost: spent, failed: false, path }
}

fn run_online(inst: &SopInstance, policy: &OnlinePolicy, costs: &TrialCosts) -> TrialResult {
    let mut unvisited = vec![true; inst.len()];
    unvisited[inst.start] = false;
    unvisited[inst.end] = false;
    let (mut cur, mut reward, mut spent) = (inst.start, 0.0, 0.0);
    let mut path = vec![cur];
    loop {
        let next = solve_online_step(&OnlineState { current: cur, spent, unvisited: &unvisited }, inst, policy);
        spent += costs.cost(inst, cur, next);
        path.push(next);
        if spent > inst.budget {
            return TrialResult { reward, cost: spent, failed: true, path };
        }
        if next == inst.end {
            return TrialResult { reward, cost: spent, failed: false, path };
        }
        unvisited[next] = false;
        reward += inst.nodes[next].reward;
        cur = next;
    }
}

pub fn run_trial(inst: &SopInstance, strategy: &Strategy, costs: &TrialCosts) -> TrialResult {
    match strategy {
        Strategy::Route(r) => run_route(inst, r, costs),
        Strategy::Online(p) => run_online(inst, p, costs),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean collected reward.
    #[serde(rename = "R")]
    pub r: f64,
    /// Fraction of trials over budget.
    #[serde(rename = "F")]
    pub f: f64,
    pub trials: usize,
    /// Standard error of R; undefined for a single trial.
    #[serde(rename = "R_stderr")]
    pub r_stderr: Option<f64>,
    #[serde(skip)]
    pub rewards: Vec<f64>,
    #[serde(skip)]
    pub failures: Vec<bool>,
}

impl Metrics {
    pub fn from_trials(results: &[TrialResult]) -> Self {
        let n = results.len();
        let rewards: Vec<f64> = results.iter().map(|t| t.reward).collect();
        let failures: Vec<bool> = results.iter().map(|t| t.failed).collect();
        let r = rewards.iter().sum::<f64>() / n as f64;
        let f = failures.iter().filter(|&&x| x).count() as f64 / n as f64;
        let r_stderr = (n > 1).then(|| {
            let var = rewards.iter().map(|x| (x - r).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self { r, f, trials: n, r_stderr, rewards, failures }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.r_stderr {
            Some(se) => write!(f, "R={:.3}±{:.3} F={:.1}% ({} trials)", self.r, se, 100.0 * self.f, self.trials),
            None => write!(f, "R={:.3} (stderr undefined) F={:.1}% ({} trials)", self.r, 100.0 * self.f, self.trials),
        }
    }
}

/// Monte Carlo evaluation. Trial `t` uses the same cost draws for every
/// strategy given the same `seed`.
pub fn evaluate(strategy: &Strategy, inst: &SopInstance, trials: usize, seed: u64) -> Metrics {
    assert!(trials >= 1, "at least one trial");
    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(inst, strategy, &TrialCosts::draw(inst, seed, t)))
        .collect();
    Metrics::from_trials(&results)
}

/// Brute force over every ordered subset of targets whose mean length fits
/// the budget, scored by Monte Carlo reward on `trials` common draws. Ties go
/// to the shorter route.
pub fn solve_exact(inst: &SopInstance, trials: usize, seed: u64) -> Result<Route, SopError> {
    if inst.len() > EXACT_MAX_NODES {
        return Err(SopError::TooLarge { nodes: inst.len(), max: EXACT_MAX_NODES });
    }
    inst.check_feasible()?;
    assert!(trials >= 1, "at least one trial");
    let costs: Vec<TrialCosts> = (0..trials).map(|t| TrialCosts::draw(inst, seed, t)).collect();
    let targets: Vec<usize> = inst.targets().collect();
    let mut search = Exact {
        inst,
        costs: &costs,
        targets: &targets,
        used: vec![false; inst.len()],
        prefix: vec![inst.start],
        best: (f64::NEG_INFINITY, f64::INFINITY, Vec::new()),
    };
    let state = vec![(0.0, 0.0, true); trials];
    search.dfs(inst.start, 0.0, &state);
    let mut route = search.best.2;
    route.push(inst.end);
    Ok(Route(route))
}

struct Exact<'a> {
    inst: &'a SopInstance,
    costs: &'a [TrialCosts],
    targets: &'a [usize],
    used: Vec<bool>,
    prefix: Vec<usize>,
    /// (score, mean length, prefix)
    best: (f64, f64, Vec<usize>),
}

impl Exact<'_> {
    /// `state[t]` = (spent, reward, still within budget) for trial t.
    fn dfs(&mut self, cur: usize, mean: f64, state: &[(f64, f64, bool)]) {
        let inst = self.inst;
        let score = state.iter().map(|s| s.1).sum::<f64>() / state.len() as f64;
        let length = mean + inst.d(cur, inst.end);
        let (bs, bl, _) = &self.best;
        if score > *bs || (score == *bs && length < *bl) {
            self.best = (score, length, self.prefix.clone());
        }
        for &c in self.targets {
            if self.used[c] || mean + inst.d(cur, c) + inst.d(c, inst.end) > inst.budget {
                continue;
            }
            let next: Vec<(f64, f64, bool)> = state
                .iter()
                .zip(self.costs)
                .map(|(&(spent, reward, alive), tc)| {
                    if !alive {
                        return (spent, reward, false);
                    }
                    let s = spent + tc.cost(inst, cur, c);
                    if s > inst.budget { (s, reward, false) } else { (s, reward + inst.nodes[c].reward, true) }
                })
                .collect();
            self.used[c] = true;
            self.prefix.push(c);
            self.dfs(c, mean + inst.d(cur, c), &next);
            self.prefix.pop();
            self.used[c] = false;
        }
    }
}

/// Uniform random instance in the unit square with start (0,0), end (1,1).
pub fn random_unit_instance<R: Rng>(rng: &mut R, n: usize, budget: f64, variance: f64) -> SopInstance {
    let mut nodes = vec![
        SopNode { id: "start".into(), position: LocalXY::new(0.0, 0.0), reward: 0.0 },
        SopNode { id: "end".into(), position: LocalXY::new(1.0, 1.0), reward: 0.0 },
    ];
    for i in 0..n {
        nodes.push(SopNode {
            id: format!("n{i:03}"),
            position: LocalXY::new(rng.gen(), rng.gen()),
            reward: 1.0 - rng.gen::<f64>(),
        });
    }
    SopInstance::new(nodes, "start", "end", budget, variance).expect("valid generated instance")
}

/// Trap for fixed routes: a chain of cheap nodes climbs away from the
/// start while a cluster of three high-reward nodes sits next to the end.
/// The chain wins every ratio comparison, so the greedy route spends the
/// slack on it and reaches the cluster with almost none left. The budget is
/// 1.45 times the direct start to cluster distance, enough to go straight
/// there safely at the default risk level.
pub fn adversarial_instance(variance: f64) -> SopInstance {
    let mut nodes = vec![
        SopNode { id: "start".into(), position: LocalXY::new(0.0, 0.0), reward: 0.0 },
        SopNode { id: "end".into(), position: LocalXY::new(1.0, 0.0), reward: 0.0 },
    ];
    for k in 1..=20 {
        nodes.push(SopNode { id: format!("c{k:02}"), position: LocalXY::new(0.0, 0.03 * k as f64), reward: 0.2 });
    }
    for (i, (x, y)) in [(0.99, 0.01), (1.0, 0.015), (0.995, 0.02)].into_iter().enumerate() {
        nodes.push(SopNode { id: format!("h{i}"), position: LocalXY::new(x, y), reward: 5.0 });
    }
    let inst = SopInstance::new(nodes, "start", "end", 0.0, variance).expect("valid construction");
    let to_cluster = inst.d(inst.start, inst.index_of("h0").expect("cluster node"));
    inst.with_budget(1.45 * to_cluster)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(budget: f64, variance: f64) -> SopInstance {
        let nodes = [("s", 0.0, 1.0), ("a", 1.0, 1.0), ("b", 2.0, 1.0), ("e", 3.0, 1.0)]
            .iter()
            .map(|&(id, x, r)| SopNode { id: id.into(), position: LocalXY::new(x, 0.0), reward: r })
            .collect();
        SopInstance::new(nodes, "s", "e", budget, variance).unwrap()
    }

    #[test]
    fn normalization_uses_bbox_diagonal() {
        let inst = line(2.0, 0.0);
        assert_eq!(inst.d(0, 3), 1.0);
        assert!((inst.scale() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_visits_collinear_nodes() {
        let inst = line(1.0, 0.0);
        assert_eq!(inst.route_ids(&solve_greedy_offline(&inst).unwrap()), ["s", "a", "b", "e"]);
        let tight = line(inst.d(0, 3), 0.0);
        assert_eq!(solve_greedy_offline(&tight).unwrap().0.len(), 4, "collinear detours are free");
        assert!(matches!(solve_greedy_offline(&line(0.5, 0.0)), Err(SopError::Infeasible { .. })));
    }

    #[test]
    fn online_step_rules() {
        let inst = line(1.0, 0.0);
        let unvisited = [false, true, true, false];
        let state = OnlineState { current: 0, spent: 0.0, unvisited: &unvisited };
        for policy in [OnlinePolicy::default(), OnlinePolicy::ratio(0.1)] {
            assert_eq!(solve_online_step(&state, &inst, &policy), 1);
            let broke = OnlineState { current: 0, spent: 0.5, unvisited: &unvisited };
            assert_eq!(solve_online_step(&broke, &inst, &policy), 3);
        }
    }

    #[test]
    fn gamma_probability_matches_sampling() {
        let m = StochasticEdgeModel::new(0.2);
        let p = leg_success_probability(&m, 0.5, 0.3, 0.1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let hits = (0..n).filter(|_| 0.1 + 0.5 * m.sample_multiplier(&mut rng) + 0.3 <= 1.0).count();
        assert!((p - hits as f64 / n as f64).abs() < 0.005, "{p}");
    }

    #[test]
    fn metrics_stderr() {
        let mk = |r: f64, f: bool| TrialResult { reward: r, cost: 0.0, failed: f, path: vec![] };
        let m = Metrics::from_trials(&[mk(1.0, false), mk(3.0, true)]);
        assert_eq!((m.r, m.f), (2.0, 0.5));
        assert!((m.r_stderr.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(Metrics::from_trials(&[mk(1.0, false)]).r_stderr, None);
    }
}
