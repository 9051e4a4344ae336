//! Simulated execution of L2 plans with stochastic travel costs.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::decoder::{ExecNode, ExecTask, ExecutablePlan};
use crate::geo::LocalXY;
use crate::schema::TaskType;

/// Edge cost = Euclidean length × a Gamma multiplier with mean 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticEdgeModel {
    pub variance: f64,
}

impl StochasticEdgeModel {
    pub fn new(variance: f64) -> Self {
        assert!(variance >= 0.0 && variance.is_finite(), "variance must be finite and nonnegative");
        Self { variance }
    }

    pub fn deterministic() -> Self {
        Self { variance: 0.0 }
    }

    /// Gamma(shape 1/v, scale v); exactly 1 when v = 0.
    pub fn gamma(&self) -> Option<Gamma<f64>> {
        (self.variance > 0.0).then(|| Gamma::new(1.0 / self.variance, self.variance).expect("valid gamma"))
    }

    pub fn sample_multiplier<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.gamma() {
            None => 1.0,
            Some(g) => {
                // Guard the (measure-zero) underflow to keep costs strictly positive.
                let m = g.sample(rng);
                if m > 0.0 { m } else { f64::MIN_POSITIVE }
            }
        }
    }
}

pub fn sample_travel_cost<R: Rng + ?Sized>(from: LocalXY, to: LocalXY, model: &StochasticEdgeModel, rng: &mut R) -> f64 {
    from.distance(to) * model.sample_multiplier(rng)
}

/// Scripted sensor readings keyed by (tree id, sensor task type).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorOutcomeTable {
    #[serde(default)]
    pub default_reading: f64,
    #[serde(default)]
    pub readings: Vec<SensorReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub tree_id: String,
    pub sensor: String,
    pub value: f64,
}

impl SensorOutcomeTable {
    pub fn new(default_reading: f64) -> Self {
        Self { default_reading, readings: Vec::new() }
    }

    pub fn with(mut self, tree_id: &str, sensor: &str, value: f64) -> Self {
        self.set(tree_id, sensor, value);
        self
    }

    pub fn set(&mut self, tree_id: &str, sensor: &str, value: f64) {
        self.readings.retain(|r| !(r.tree_id == tree_id && r.sensor == sensor));
        self.readings.push(SensorReading { tree_id: tree_id.into(), sensor: sensor.into(), value });
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let t: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if !t.default_reading.is_finite() || t.readings.iter().any(|r| !r.value.is_finite()) {
            return Err("sensor readings must be finite".into());
        }
        Ok(t)
    }

    /// Reading at the given tree, or the default away from trees.
    pub fn reading(&self, tree_id: Option<&str>, sensor: &str) -> f64 {
        tree_id
            .and_then(|id| self.readings.iter().rev().find(|r| r.tree_id == id && r.sensor == sensor))
            .map_or(self.default_reading, |r| r.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    BudgetViolated,
    AbortedByGuard,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::BudgetViolated => "budget_violated",
            Self::AbortedByGuard => "aborted_by_guard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Then,
    Else,
    /// Condition failed and there is no else branch.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: usize,
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_id: Option<String>,
    pub location: LocalXY,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reading: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
    /// Guard intervention that produced this event, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    /// Seconds since deployment.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    /// Meters.
    pub total_cost: f64,
    /// Meters.
    pub budget: f64,
    pub outcome: Outcome,
    pub rng_seed: u64,
    /// Distinct trees reached, in first-arrival order.
    pub trees_reached: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub plan: String,
    pub outcome: Outcome,
    pub total_cost: f64,
    pub budget: f64,
    /// Collected utility: one per distinct tree reached.
    pub reward: f64,
    pub events: usize,
    pub rng_seed: u64,
}

impl ExecutionTrace {
    pub fn reward(&self) -> f64 {
        self.trees_reached.len() as f64
    }

    pub fn summary(&self, plan_name: &str) -> TraceSummary {
        TraceSummary {
            plan: plan_name.to_string(),
            outcome: self.outcome,
            total_cost: self.total_cost,
            budget: self.budget,
            reward: self.reward(),
            events: self.events.len(),
            rng_seed: self.rng_seed,
        }
    }

    /// One JSON object per event, then `{"summary": ...}`.
    pub fn write_jsonl<W: Write>(&self, plan_name: &str, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &serde_json::json!({ "summary": self.summary(plan_name) }))?;
        out.write_all(b"\n")
    }

    pub fn to_jsonl(&self, plan_name: &str) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(plan_name, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

/// What a guard sees before each navigation.
#[derive(Debug, Clone)]
pub struct GuardContext<'a> {
    pub position: LocalXY,
    pub current_tree: Option<&'a str>,
    pub target: LocalXY,
    pub target_tree: Option<&'a str>,
    /// Whether the pending navigation is the plan's own return_home.
    pub returning: bool,
    pub home: LocalXY,
    /// Meters spent so far.
    pub spent: f64,
    /// Meters.
    pub budget: f64,
    pub visited: &'a BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuardDecision {
    Proceed,
    Redirect { target: LocalXY, tree_id: Option<String> },
    ReturnHome,
}

/// Run-time monitor consulted before every navigation.
pub trait StepGuard {
    fn before_navigation(&mut self, ctx: &GuardContext<'_>) -> GuardDecision;
}

struct Run<'a> {
    model: StochasticEdgeModel,
    sensors: &'a SensorOutcomeTable,
    rng: ChaCha8Rng,
    guard: Option<&'a mut dyn StepGuard>,
    home: LocalXY,
    position: LocalXY,
    at_tree: Option<String>,
    spent: f64,
    budget: f64,
    speed: f64,
    events: Vec<TraceEvent>,
    visited: BTreeSet<String>,
    reached: Vec<String>,
    outcome: Option<Outcome>,
}

impl Run<'_> {
    fn push(&mut self, task: &str, cost: Option<f64>, reading: Option<f64>, branch: Option<Branch>, guard: Option<&str>) {
        self.events.push(TraceEvent {
            index: self.events.len(),
            task: task.to_string(),
            tree_id: self.at_tree.clone(),
            location: self.position,
            sampled_cost: cost,
            reading,
            branch,
            guard: guard.map(str::to_string),
            timestamp: self.spent / self.speed,
        });
    }

    fn travel(&mut self, task: &str, target: LocalXY, tree: Option<String>, guard_note: Option<&str>) {
        let cost = sample_travel_cost(self.position, target, &self.model, &mut self.rng);
        self.spent += cost;
        self.position = target;
        if self.spent > self.budget {
            // The robot does not arrive; nothing at the target is collected.
            self.at_tree = None;
            self.push(task, Some(cost), None, None, guard_note);
            self.outcome = Some(Outcome::BudgetViolated);
            return;
        }
        self.at_tree = tree;
        if let Some(id) = &self.at_tree {
            if self.visited.insert(id.clone()) {
                self.reached.push(id.clone());
            }
        }
        self.push(task, Some(cost), None, None, guard_note);
    }

    fn navigate(&mut self, t: &ExecTask) {
        let target = t.target.expect("decoded navigation has a target");
        let returning = t.task.task_type.as_str() == TaskType::RETURN_HOME;
        let decision = match self.guard.as_deref_mut() {
            None => GuardDecision::Proceed,
            Some(g) => g.before_navigation(&GuardContext {
                position: self.position,
                current_tree: self.at_tree.as_deref(),
                target,
                target_tree: t.tree_id.as_deref(),
                returning,
                home: self.home,
                spent: self.spent,
                budget: self.budget,
                visited: &self.visited,
            }),
        };
        let task = t.task.task_type.as_str();
        match decision {
            GuardDecision::Proceed => self.travel(task, target, t.tree_id.clone(), None),
            GuardDecision::Redirect { target, tree_id } => {
                let task = if tree_id.is_some() { TaskType::NAVIGATE_TO_TREE } else { TaskType::NAVIGATE_TO_POINT };
                self.travel(task, target, tree_id, Some("redirect"));
            }
            GuardDecision::ReturnHome => {
                let home = self.home;
                self.travel(TaskType::RETURN_HOME, home, None, Some("return_home"));
                if self.outcome.is_none() {
                    self.outcome = Some(Outcome::AbortedByGuard);
                }
            }
        }
    }

    fn exec(&mut self, node: &ExecNode) {
        if self.outcome.is_some() {
            return;
        }
        match node {
            ExecNode::Sequence { children } => {
                for c in children {
                    self.exec(c);
                    if self.outcome.is_some() {
                        return;
                    }
                }
            }
            ExecNode::Task(t) => {
                if t.task.task_type.is_navigation() {
                    self.navigate(t);
                } else if t.task.task_type.is_measurement() {
                    let r = self.sensors.reading(self.at_tree.as_deref(), t.task.task_type.as_str());
                    self.push(t.task.task_type.as_str(), None, Some(r), None, None);
                } else {
                    self.push(t.task.task_type.as_str(), None, None, None, None);
                }
            }
            ExecNode::Condition { sensor, operator, threshold, then_branch, else_branch } => {
                let r = self.sensors.reading(self.at_tree.as_deref(), sensor.as_str());
                let holds = operator.holds(r, *threshold);
                let branch = match (holds, else_branch) {
                    (true, _) => Branch::Then,
                    (false, Some(_)) => Branch::Else,
                    (false, None) => Branch::Skipped,
                };
                self.push(sensor.as_str(), None, Some(r), Some(branch), None);
                match branch {
                    Branch::Then => self.exec(then_branch),
                    Branch::Else => self.exec(else_branch.as_ref().expect("else branch")),
                    Branch::Skipped => {}
                }
            }
        }
    }
}

/// Runs the plan from the deploy point. Each navigation leg draws one cost
/// multiplier from a ChaCha8 stream seeded with `seed`.
pub fn execute<'a>(
    plan: &ExecutablePlan,
    model: &StochasticEdgeModel,
    sensors: &'a SensorOutcomeTable,
    seed: u64,
    guard: Option<&'a mut dyn StepGuard>,
) -> ExecutionTrace {
    let home = plan.origin_task.target.expect("origin has a target");
    let mut run = Run {
        model: *model,
        sensors,
        rng: ChaCha8Rng::seed_from_u64(seed),
        guard,
        home,
        position: home,
        at_tree: None,
        spent: 0.0,
        budget: plan.budget_m(),
        speed: plan.speed,
        events: Vec::new(),
        visited: BTreeSet::new(),
        reached: Vec::new(),
        outcome: None,
    };
    run.push("deploy", Some(0.0), None, None, None);
    run.exec(&plan.nodes);
    ExecutionTrace {
        events: run.events,
        total_cost: run.spent,
        budget: run.budget,
        outcome: run.outcome.unwrap_or(Outcome::Completed),
        rng_seed: seed,
        trees_reached: run.reached,
    }
}

/// Deterministic path length in meters, following `sensors` at conditions.
pub fn planned_length(plan: &ExecutablePlan, sensors: &SensorOutcomeTable) -> f64 {
    let mut unlimited = plan.clone();
    unlimited.effective_budget = f64::INFINITY;
    execute(&unlimited, &StochasticEdgeModel::deterministic(), sensors, 0, None).total_cost
}
