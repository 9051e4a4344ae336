//! L1 to L2: bind a plan to a farm and a robot profile.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geo::{FarmMap, GeoPoint, LocalXY};
use crate::schema::{AtomicTask, BtNode, MissionPlan, Operator, PlanStats, TaskType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotProfile {
    pub capabilities: BTreeSet<String>,
    /// Normalized units: multiples of the farm's bounding-box diagonal.
    pub distance_budget: f64,
    /// Meters per second, used for trace timestamps.
    #[serde(default = "default_speed")]
    pub speed: f64,
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

impl RobotProfile {
    pub fn new(capabilities: impl IntoIterator<Item = impl Into<String>>, distance_budget: f64, speed: f64) -> Result<Self, ProfileError> {
        let p = Self { capabilities: capabilities.into_iter().map(Into::into).collect(), distance_budget, speed };
        p.check()?;
        Ok(p)
    }

    /// Every task type in the shipped pool.
    pub fn full(distance_budget: f64) -> Self {
        Self::new(
            [
                TaskType::NAVIGATE_TO_TREE,
                TaskType::NAVIGATE_TO_POINT,
                TaskType::TAKE_PICTURE,
                TaskType::MEASURE_CO2,
                TaskType::MEASURE_TEMPERATURE,
                TaskType::MEASURE_MOISTURE,
                TaskType::RETURN_HOME,
            ],
            distance_budget,
            1.0,
        )
        .expect("valid profile")
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileError> {
        let p: Self = toml::from_str(text)?;
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<(), ProfileError> {
        if !self.capabilities.contains(TaskType::RETURN_HOME) {
            return Err(ProfileError::Invalid("capabilities must include return_home".into()));
        }
        if !(self.distance_budget > 0.0 && self.distance_budget.is_finite()) {
            return Err(ProfileError::Invalid("distance_budget must be positive".into()));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(ProfileError::Invalid("speed must be positive".into()));
        }
        Ok(())
    }
}

/// A task with its navigation target resolved to the local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecTask {
    pub task: AtomicTask,
    pub target: Option<LocalXY>,
    pub tree_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExecNode {
    Sequence { children: Vec<ExecNode> },
    Task(ExecTask),
    Condition {
        sensor: TaskType,
        operator: Operator,
        threshold: f64,
        then_branch: Box<ExecNode>,
        else_branch: Option<Box<ExecNode>>,
    },
}

impl ExecNode {
    pub fn stats(&self) -> PlanStats {
        match self {
            Self::Sequence { children } => children.iter().map(Self::stats).fold(
                PlanStats { task_count: 0, conditional_count: 0 },
                |a, b| PlanStats {
                    task_count: a.task_count + b.task_count,
                    conditional_count: a.conditional_count + b.conditional_count,
                },
            ),
            Self::Task(_) => PlanStats { task_count: 1, conditional_count: 0 },
            Self::Condition { then_branch, else_branch, .. } => {
                let t = then_branch.stats();
                let e = else_branch.as_ref().map(|e| e.stats()).unwrap_or(PlanStats { task_count: 0, conditional_count: 0 });
                PlanStats {
                    task_count: t.task_count + e.task_count,
                    conditional_count: t.conditional_count + e.conditional_count + 1,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutablePlan {
    pub name: String,
    pub nodes: ExecNode,
    /// min(plan constraint, profile budget), normalized units.
    pub effective_budget: f64,
    /// Meters per normalized unit (the farm's bounding-box diagonal).
    pub scale_m: f64,
    /// Where the robot is deployed before the first task.
    pub origin_task: ExecTask,
    pub speed: f64,
}

impl ExecutablePlan {
    pub fn budget_m(&self) -> f64 {
        self.effective_budget * self.scale_m
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodeError {
    pub unknown_trees: Vec<String>,
    pub missing_capabilities: Vec<String>,
    pub invalid_params: Vec<String>,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lines = Vec::new();
        lines.extend(self.unknown_trees.iter().map(|t| format!("UNKNOWN_TREE({t})")));
        lines.extend(self.missing_capabilities.iter().map(|c| format!("MISSING_CAPABILITY({c})")));
        lines.extend(self.invalid_params.iter().map(|p| format!("INVALID_PARAM({p})")));
        f.write_str(&lines.join("\n"))
    }
}

impl std::error::Error for DecodeError {}

#[derive(Default)]
struct Problems {
    trees: BTreeSet<String>,
    caps: BTreeSet<String>,
    params: BTreeSet<String>,
}

struct Binder<'a> {
    farm: &'a FarmMap,
    profile: &'a RobotProfile,
    problems: Problems,
}

impl Binder<'_> {
    fn need(&mut self, cap: &str) {
        if !self.profile.capabilities.contains(cap) {
            self.problems.caps.insert(cap.to_string());
        }
    }

    fn coordinate(&mut self, task: &AtomicTask, key: &str) -> Option<f64> {
        let v = task.params.get(key).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite());
        if v.is_none() {
            self.problems.params.insert(format!("{} {key}", task.task_type));
        }
        v
    }

    fn task(&mut self, task: &AtomicTask) -> ExecTask {
        self.need(task.task_type.as_str());
        let mut out = ExecTask { task: task.clone(), target: None, tree_id: None };
        match task.task_type.as_str() {
            TaskType::NAVIGATE_TO_TREE => match task.tree_id() {
                Some(id) => match self.farm.tree_local(id) {
                    Some(p) => {
                        out.target = Some(p);
                        out.tree_id = Some(id.to_string());
                    }
                    None => {
                        self.problems.trees.insert(id.to_string());
                    }
                },
                None => {
                    self.problems.params.insert(format!("{} tree_id", task.task_type));
                }
            },
            TaskType::NAVIGATE_TO_POINT => {
                let lat = self.coordinate(task, "lat");
                let lon = self.coordinate(task, "lon");
                if let (Some(lat), Some(lon)) = (lat, lon) {
                    match GeoPoint::new(lat, lon) {
                        Ok(p) => out.target = Some(self.farm.to_local(p)),
                        Err(_) => {
                            self.problems.params.insert(format!("{} lat/lon out of range", task.task_type));
                        }
                    }
                }
            }
            TaskType::RETURN_HOME => out.target = Some(self.farm.deploy_local()),
            _ => {}
        }
        out
    }

    fn node(&mut self, node: &BtNode) -> ExecNode {
        match node {
            BtNode::Sequence { children } => ExecNode::Sequence { children: children.iter().map(|c| self.node(c)).collect() },
            BtNode::Task { task } => ExecNode::Task(self.task(task)),
            BtNode::Condition(c) => {
                self.need(c.sensor.as_str());
                ExecNode::Condition {
                    sensor: c.sensor.clone(),
                    operator: c.operator,
                    threshold: c.threshold,
                    then_branch: Box::new(self.node(&c.then_branch)),
                    else_branch: c.else_branch.as_ref().map(|e| Box::new(self.node(e))),
                }
            }
        }
    }
}

/// Resolves every tree id and checks every required capability, reporting
/// all offenders at once.
pub fn decode(plan: &MissionPlan, profile: &RobotProfile, farm: &FarmMap) -> Result<ExecutablePlan, DecodeError> {
    let mut binder = Binder { farm, profile, problems: Problems::default() };
    for cap in &plan.preconditions {
        binder.need(cap);
    }
    let nodes = binder.node(&plan.root);
    let p = binder.problems;
    if !(p.trees.is_empty() && p.caps.is_empty() && p.params.is_empty()) {
        return Err(DecodeError {
            unknown_trees: p.trees.into_iter().collect(),
            missing_capabilities: p.caps.into_iter().collect(),
            invalid_params: p.params.into_iter().collect(),
        });
    }
    let plan_budget = plan.constraints.as_ref().and_then(|c| c.distance_budget);
    let effective_budget = plan_budget.map_or(profile.distance_budget, |b| b.min(profile.distance_budget));
    let deploy = farm.deploy_point();
    Ok(ExecutablePlan {
        name: plan.name.clone(),
        nodes,
        effective_budget,
        scale_m: farm.extent_m(),
        origin_task: ExecTask {
            task: AtomicTask::navigate_to_point(deploy.lat, deploy.lon),
            target: Some(farm.deploy_local()),
            tree_id: None,
        },
        speed: profile.speed,
    })
}
