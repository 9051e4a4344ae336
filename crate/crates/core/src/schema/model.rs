//! Typed L1 mission plans and their canonical XML form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use super::validate::{child_paths, parse_options, validate_document, ValidationReport};
use super::xsd::SchemaDoc;

/// Name of an atomic action from the schema's task pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskType(pub String);

impl TaskType {
    pub const NAVIGATE_TO_TREE: &'static str = "navigate_to_tree";
    pub const NAVIGATE_TO_POINT: &'static str = "navigate_to_point";
    pub const TAKE_PICTURE: &'static str = "take_picture";
    pub const MEASURE_CO2: &'static str = "measure_co2";
    pub const MEASURE_TEMPERATURE: &'static str = "measure_temperature";
    pub const MEASURE_MOISTURE: &'static str = "measure_moisture";
    pub const RETURN_HOME: &'static str = "return_home";

    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Tasks that move the robot.
    pub fn is_navigation(&self) -> bool {
        matches!(self.0.as_str(), Self::NAVIGATE_TO_TREE | Self::NAVIGATE_TO_POINT | Self::RETURN_HOME)
    }

    /// Tasks that return a scalar sensor reading.
    pub fn is_measurement(&self) -> bool {
        self.0.starts_with("measure_")
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskType {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicTask {
    pub task_type: TaskType,
    pub params: BTreeMap<String, String>,
}

impl AtomicTask {
    pub fn new(task_type: &str) -> Self {
        Self { task_type: TaskType::from(task_type), params: BTreeMap::new() }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn navigate_to_tree(tree_id: &str) -> Self {
        Self::new(TaskType::NAVIGATE_TO_TREE).with_param("tree_id", tree_id)
    }

    pub fn navigate_to_point(lat: f64, lon: f64) -> Self {
        Self::new(TaskType::NAVIGATE_TO_POINT)
            .with_param("lat", format!("{lat}"))
            .with_param("lon", format!("{lon}"))
    }

    pub fn tree_id(&self) -> Option<&str> {
        self.params.get("tree_id").map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Operator {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lt => "lt",
            Self::Le => "le",
            Self::Gt => "gt",
            Self::Ge => "ge",
        }
    }

    /// Whether `reading <op> threshold` holds.
    pub fn holds(self, reading: f64, threshold: f64) -> bool {
        match self {
            Self::Lt => reading < threshold,
            Self::Le => reading <= threshold,
            Self::Gt => reading > threshold,
            Self::Ge => reading >= threshold,
        }
    }
}

impl FromStr for Operator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lt" => Ok(Self::Lt),
            "le" => Ok(Self::Le),
            "gt" => Ok(Self::Gt),
            "ge" => Ok(Self::Ge),
            other => Err(format!("unknown operator \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionNode {
    pub sensor: TaskType,
    pub operator: Operator,
    pub threshold: f64,
    pub then_branch: Box<BtNode>,
    pub else_branch: Option<Box<BtNode>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BtNode {
    Sequence { children: Vec<BtNode> },
    Task { task: AtomicTask },
    Condition(ConditionNode),
}

impl BtNode {
    pub fn task(task: AtomicTask) -> Self {
        Self::Task { task }
    }

    pub fn sequence(children: Vec<BtNode>) -> Self {
        Self::Sequence { children }
    }

    /// Visits every task leaf in document order, across all branches.
    pub fn for_each_task<'a>(&'a self, f: &mut impl FnMut(&'a AtomicTask)) {
        match self {
            Self::Sequence { children } => children.iter().for_each(|c| c.for_each_task(f)),
            Self::Task { task } => f(task),
            Self::Condition(c) => {
                c.then_branch.for_each_task(f);
                if let Some(e) = &c.else_branch {
                    e.for_each_task(f);
                }
            }
        }
    }

    pub fn for_each_condition<'a>(&'a self, f: &mut impl FnMut(&'a ConditionNode)) {
        match self {
            Self::Sequence { children } => children.iter().for_each(|c| c.for_each_condition(f)),
            Self::Task { .. } => {}
            Self::Condition(c) => {
                f(c);
                c.then_branch.for_each_condition(f);
                if let Some(e) = &c.else_branch {
                    e.for_each_condition(f);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Constraints {
    /// Distance bound in units of the farm's bounding-box diagonal.
    pub distance_budget: Option<f64>,
}

/// An L1 plan: what to do, independent of the robot that will do it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub name: String,
    pub rationale: String,
    pub preconditions: Vec<String>,
    pub constraints: Option<Constraints>,
    pub root: BtNode,
}

impl MissionPlan {
    /// Tree ids referenced by navigation tasks, deduplicated.
    pub fn tree_ids(&self) -> BTreeSet<String> {
        let mut ids = BTreeSet::new();
        self.root.for_each_task(&mut |t| {
            if let Some(id) = t.tree_id() {
                ids.insert(id.to_string());
            }
        });
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub task_count: usize,
    pub conditional_count: usize,
}

/// Counts every task leaf (both branches of each condition) and every
/// condition node.
pub fn plan_stats(plan: &MissionPlan) -> PlanStats {
    let mut stats = PlanStats { task_count: 0, conditional_count: 0 };
    plan.root.for_each_task(&mut |_| stats.task_count += 1);
    plan.root.for_each_condition(&mut |_| stats.conditional_count += 1);
    stats
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PlanParseError {
    #[error("input is not valid UTF-8 (at byte {0})")]
    NotUtf8(usize),
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Malformed { line: u32, column: u32, message: String },
    #[error("plan is not schema-valid:\n{0}")]
    Invalid(ValidationReport),
    #[error("{path}: {message}")]
    Unsupported { path: String, message: String },
}

/// Parses and validates a plan against the shipped schema.
pub fn parse_l1(xml_text: &str) -> Result<MissionPlan, PlanParseError> {
    parse_l1_with(xml_text, SchemaDoc::builtin())
}

pub fn parse_l1_bytes(bytes: &[u8]) -> Result<MissionPlan, PlanParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| PlanParseError::NotUtf8(e.valid_up_to()))?;
    parse_l1(text)
}

pub fn parse_l1_with(xml_text: &str, schema: &SchemaDoc) -> Result<MissionPlan, PlanParseError> {
    let doc = Document::parse_with_options(xml_text, parse_options()).map_err(|e| {
        let pos = e.pos();
        PlanParseError::Malformed { line: pos.row, column: pos.col, message: e.to_string() }
    })?;
    let report = validate_document(&doc, schema);
    if !report.is_valid() {
        return Err(PlanParseError::Invalid(report));
    }
    let root = doc.root_element();
    build_plan(root, &format!("/{}", root.tag_name().name()))
}

fn unsupported(path: &str, message: impl Into<String>) -> PlanParseError {
    PlanParseError::Unsupported { path: path.to_string(), message: message.into() }
}

fn elements<'a, 'i>(node: Node<'a, 'i>) -> Vec<Node<'a, 'i>> {
    node.children().filter(|c| c.is_element()).collect()
}

fn text_of(node: Node) -> String {
    node.children().filter(|c| c.is_text()).filter_map(|c| c.text()).collect()
}

fn number(node: Node, attr: &str, path: &str) -> Result<f64, PlanParseError> {
    let raw = node.attribute(attr).ok_or_else(|| unsupported(path, format!("missing {attr}")))?;
    raw.trim().parse().map_err(|_| unsupported(path, format!("{attr} is not a number")))
}

fn build_plan(root: Node, path: &str) -> Result<MissionPlan, PlanParseError> {
    if root.tag_name().name() != "MissionPlan" {
        return Err(unsupported(path, "root element must be MissionPlan"));
    }
    let mut plan = MissionPlan {
        name: root.attribute("name").unwrap_or_default().to_string(),
        rationale: String::new(),
        preconditions: Vec::new(),
        constraints: None,
        root: BtNode::sequence(Vec::new()),
    };
    let mut saw_tree = false;
    let children = elements(root);
    for (child, child_path) in children.iter().zip(child_paths(path, &children)) {
        match child.tag_name().name() {
            "Metadata" => {
                if let Some(r) = elements(*child).into_iter().find(|n| n.has_tag_name("Rationale")) {
                    plan.rationale = text_of(r);
                }
            }
            "Preconditions" => {
                plan.preconditions = elements(*child)
                    .into_iter()
                    .filter(|n| n.has_tag_name("Capability"))
                    .map(|n| n.attribute("name").unwrap_or_default().to_string())
                    .collect();
            }
            "Constraints" => {
                let distance_budget = match child.attribute("distance_budget") {
                    Some(_) => Some(number(*child, "distance_budget", &child_path)?),
                    None => None,
                };
                plan.constraints = Some(Constraints { distance_budget });
            }
            "BehaviorTree" => {
                plan.root = single_child(*child, &child_path, 0)?;
                saw_tree = true;
            }
            other => return Err(unsupported(&child_path, format!("unexpected element <{other}>"))),
        }
    }
    if !saw_tree {
        return Err(unsupported(path, "missing BehaviorTree"));
    }
    Ok(plan)
}

fn single_child(node: Node, path: &str, depth: usize) -> Result<BtNode, PlanParseError> {
    let children = elements(node);
    let paths = child_paths(path, &children);
    match children.as_slice() {
        [only] => build_node(*only, &paths[0], depth + 1),
        _ => Err(unsupported(path, "branch must hold exactly one node")),
    }
}

fn build_node(node: Node, path: &str, depth: usize) -> Result<BtNode, PlanParseError> {
    if depth > super::MAX_DEPTH {
        return Err(unsupported(path, "nesting too deep"));
    }
    match node.tag_name().name() {
        "Sequence" => {
            let children = elements(node);
            let paths = child_paths(path, &children);
            let nodes = children
                .iter()
                .zip(&paths)
                .map(|(c, p)| build_node(*c, p, depth + 1))
                .collect::<Result<Vec<_>, _>>()?;
            if nodes.is_empty() {
                return Err(unsupported(path, "empty Sequence"));
            }
            Ok(BtNode::sequence(nodes))
        }
        "Task" => {
            let task_type = node.attribute("type").ok_or_else(|| unsupported(path, "Task without type"))?;
            let params = node
                .attributes()
                .filter(|a| a.name() != "type")
                .map(|a| (a.name().to_string(), a.value().to_string()))
                .collect();
            Ok(BtNode::task(AtomicTask { task_type: TaskType::from(task_type), params }))
        }
        "Condition" => {
            let sensor = node.attribute("sensor").ok_or_else(|| unsupported(path, "Condition without sensor"))?;
            let operator = node
                .attribute("operator")
                .unwrap_or_default()
                .parse::<Operator>()
                .map_err(|m| unsupported(path, m))?;
            let threshold = number(node, "threshold", path)?;
            let children = elements(node);
            let paths = child_paths(path, &children);
            let mut then_branch = None;
            let mut else_branch = None;
            for (c, p) in children.iter().zip(&paths) {
                let branch = Box::new(single_child(*c, p, depth + 1)?);
                match c.tag_name().name() {
                    "Then" => then_branch = Some(branch),
                    "Else" => else_branch = Some(branch),
                    other => return Err(unsupported(p, format!("unexpected <{other}> in Condition"))),
                }
            }
            Ok(BtNode::Condition(ConditionNode {
                sensor: TaskType::from(sensor),
                operator,
                threshold,
                then_branch: then_branch.ok_or_else(|| unsupported(path, "Condition without Then"))?,
                else_branch,
            }))
        }
        other => Err(unsupported(path, format!("<{other}> is not a behavior tree node"))),
    }
}

fn escape(s: &str, attr: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            '\n' if attr => out.push_str("&#10;"),
            '\t' if attr => out.push_str("&#9;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

/// Canonical XML: fixed element and attribute order, two-space indent,
/// trailing newline.
pub fn serialize_l1(plan: &MissionPlan) -> String {
    let mut w = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    w.push_str(&format!("<MissionPlan name=\"{}\">\n", escape(&plan.name, true)));
    w.push_str("  <Metadata>\n");
    if plan.rationale.is_empty() {
        w.push_str("    <Rationale/>\n");
    } else {
        w.push_str(&format!("    <Rationale>{}</Rationale>\n", escape(&plan.rationale, false)));
    }
    w.push_str("  </Metadata>\n");
    if !plan.preconditions.is_empty() {
        w.push_str("  <Preconditions>\n");
        for cap in &plan.preconditions {
            w.push_str(&format!("    <Capability name=\"{}\"/>\n", escape(cap, true)));
        }
        w.push_str("  </Preconditions>\n");
    }
    if let Some(c) = &plan.constraints {
        match c.distance_budget {
            Some(b) => w.push_str(&format!("  <Constraints distance_budget=\"{b}\"/>\n")),
            None => w.push_str("  <Constraints/>\n"),
        }
    }
    w.push_str("  <BehaviorTree>\n");
    write_node(&mut w, &plan.root, 2);
    w.push_str("  </BehaviorTree>\n");
    w.push_str("</MissionPlan>\n");
    w
}

fn write_node(w: &mut String, node: &BtNode, level: usize) {
    let pad = "  ".repeat(level);
    match node {
        BtNode::Sequence { children } => {
            w.push_str(&format!("{pad}<Sequence>\n"));
            for c in children {
                write_node(w, c, level + 1);
            }
            w.push_str(&format!("{pad}</Sequence>\n"));
        }
        BtNode::Task { task } => {
            w.push_str(&format!("{pad}<Task type=\"{}\"", escape(task.task_type.as_str(), true)));
            for (k, v) in &task.params {
                w.push_str(&format!(" {k}=\"{}\"", escape(v, true)));
            }
            w.push_str("/>\n");
        }
        BtNode::Condition(c) => {
            w.push_str(&format!(
                "{pad}<Condition sensor=\"{}\" operator=\"{}\" threshold=\"{}\">\n",
                escape(c.sensor.as_str(), true),
                c.operator.as_str(),
                c.threshold
            ));
            w.push_str(&format!("{pad}  <Then>\n"));
            write_node(w, &c.then_branch, level + 2);
            w.push_str(&format!("{pad}  </Then>\n"));
            if let Some(e) = &c.else_branch {
                w.push_str(&format!("{pad}  <Else>\n"));
                write_node(w, e, level + 2);
                w.push_str(&format!("{pad}  </Else>\n"));
            }
            w.push_str(&format!("{pad}</Condition>\n"));
        }
    }
}
