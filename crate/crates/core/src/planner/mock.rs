//! Deterministic rule-based planner covering a small mission grammar:
//!
//! * `take N pictures in a row of M trees`
//! * `take [N] pictures of [<filter>] trees [in the <direction>[ern] half]`
//! * `measure <co2|temperature|moisture> at K trees[; if low take a picture]`
//!
//! Every plan starts by navigating to the deploy point and ends with
//! `return_home`; each target contributes a navigation and an action.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use super::backend::{BackendError, ChatRequest, PlanBackend};
use crate::geo::{Direction, FarmMap, LocalXY};
use crate::schema::{serialize_l1, AtomicTask, BtNode, ConditionNode, MissionPlan, Operator, TaskType};

/// Reading below which a sensor counts as "low".
pub fn low_threshold(sensor: &str) -> f64 {
    match sensor {
        TaskType::MEASURE_CO2 => 400.0,
        TaskType::MEASURE_TEMPERATURE => 10.0,
        _ => 0.2,
    }
}

struct Grammar {
    row: Regex,
    pictures: Regex,
    measure: Regex,
}

fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar {
        row: Regex::new(r"^take (\d+) pictures? in a row of (\d+) trees?$").unwrap(),
        pictures: Regex::new(
            r"^take (?:(\d+) )?pictures? of (?:the |all )?(?:([a-z0-9_-]+) )?trees?(?: in the (north|south|east|west)(?:ern)? half(?: of the farm)?)?$",
        )
        .unwrap(),
        measure: Regex::new(
            r"^measure (co2|temperature|moisture) at (\d+) trees?(?:\s*[;,]?\s*(?:and )?if (?:it is )?low,? (?:then )?take a picture)?$",
        )
        .unwrap(),
    })
}

fn normalize(query: &str) -> String {
    let lower = query.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    words.join(" ").trim_end_matches(['.', '!']).to_string()
}

fn count(s: &str) -> Result<usize, BackendError> {
    s.parse().map_err(|_| BackendError::UnparseableQuery(format!("bad count \"{s}\"")))
}

/// Greedy nearest-neighbour order from `from`, ties by id.
fn tour(farm: &FarmMap, from: LocalXY, ids: &BTreeSet<String>) -> Vec<String> {
    let mut left: Vec<(String, LocalXY)> =
        ids.iter().map(|id| (id.clone(), farm.tree_local(id).expect("id from farm"))).collect();
    let mut here = from;
    let mut out = Vec::with_capacity(left.len());
    while !left.is_empty() {
        let (i, _) = left
            .iter()
            .enumerate()
            .min_by(|a, b| here.distance(a.1 .1).total_cmp(&here.distance(b.1 .1)).then_with(|| a.1 .0.cmp(&b.1 .0)))
            .unwrap();
        let (id, pos) = left.remove(i);
        here = pos;
        out.push(id);
    }
    out
}

fn wrap(farm: &FarmMap, name: &str, rationale: String, body: Vec<BtNode>, caps: &[&str]) -> MissionPlan {
    let deploy = farm.deploy_point();
    let mut children = vec![BtNode::task(AtomicTask::navigate_to_point(deploy.lat, deploy.lon))];
    children.extend(body);
    children.push(BtNode::task(AtomicTask::new(TaskType::RETURN_HOME)));
    let preconditions: BTreeSet<String> = caps.iter().map(|c| c.to_string()).collect();
    MissionPlan {
        name: name.to_string(),
        rationale,
        preconditions: preconditions.into_iter().collect(),
        constraints: None,
        root: BtNode::sequence(children),
    }
}

fn visit(ids: &[String], action: &str) -> Vec<BtNode> {
    ids.iter()
        .flat_map(|id| [BtNode::task(AtomicTask::navigate_to_tree(id)), BtNode::task(AtomicTask::new(action))])
        .collect()
}

fn row_plan(farm: &FarmMap, n: usize, m: usize) -> Result<MissionPlan, BackendError> {
    if n == 0 || n > m {
        return Err(BackendError::Unsatisfiable(format!("{n} pictures among {m} trees")));
    }
    let mut rows: BTreeMap<&str, Vec<(&str, LocalXY)>> = BTreeMap::new();
    for t in farm.trees() {
        if let Some(row) = t.attributes.get("row") {
            rows.entry(row.as_str()).or_default().push((&t.id, farm.to_local(t.position)));
        }
    }
    let (row, mut trees) = rows
        .into_iter()
        .find(|(_, ts)| ts.len() >= m)
        .ok_or_else(|| BackendError::Unsatisfiable(format!("no row with {m} trees")))?;
    trees.sort_by(|a, b| a.1.x.total_cmp(&b.1.x).then_with(|| a.0.cmp(b.0)));
    let picks: Vec<String> = (0..n)
        .map(|i| if n == 1 { 0 } else { (i * (m - 1) + (n - 1) / 2) / (n - 1) })
        .map(|i| trees[i].0.to_string())
        .collect();
    let rationale = format!(
        "Row {row} is the first row with at least {m} trees; its {m} westernmost trees are spread evenly by photographing {}.",
        picks.join(", ")
    );
    Ok(wrap(farm, "row pictures", rationale, visit(&picks, TaskType::TAKE_PICTURE), &[TaskType::TAKE_PICTURE]))
}

fn picture_plan(
    farm: &FarmMap,
    n: Option<usize>,
    filter: Option<&str>,
    half: Option<&str>,
) -> Result<MissionPlan, BackendError> {
    let mut ids: BTreeSet<String> = farm
        .trees()
        .iter()
        .filter(|t| match filter {
            None => true,
            Some(f) => t.id.eq_ignore_ascii_case(f) || t.attributes.values().any(|v| v.eq_ignore_ascii_case(f)),
        })
        .map(|t| t.id.clone())
        .collect();
    if let Some(h) = half {
        let dir: Direction = h.parse().map_err(|_| BackendError::UnparseableQuery(h.to_string()))?;
        let inside = farm.trees_in_half(dir);
        ids.retain(|id| inside.contains(id));
    }
    let want = n.unwrap_or(ids.len());
    if want == 0 || want > ids.len() {
        return Err(BackendError::Unsatisfiable(format!("{want} trees requested, {} match", ids.len())));
    }
    let mut order = tour(farm, farm.deploy_local(), &ids);
    order.truncate(want);
    let mut rationale = format!("{} matching trees", ids.len());
    if let Some(f) = filter {
        rationale = format!("{rationale} have the attribute \"{f}\"");
    }
    if let Some(h) = half {
        rationale.push_str(&format!(" in the {h} half"));
    }
    rationale.push_str(&format!("; visiting {} nearest-first from the deploy point: {}.", want, order.join(", ")));
    Ok(wrap(farm, "tree pictures", rationale, visit(&order, TaskType::TAKE_PICTURE), &[TaskType::TAKE_PICTURE]))
}

fn measure_plan(farm: &FarmMap, sensor: &str, k: usize, conditional: bool) -> Result<MissionPlan, BackendError> {
    let all: BTreeSet<String> = farm.trees().iter().map(|t| t.id.clone()).collect();
    if k == 0 || k > all.len() {
        return Err(BackendError::Unsatisfiable(format!("{k} trees requested, farm has {}", all.len())));
    }
    let mut order = tour(farm, farm.deploy_local(), &all);
    order.truncate(k);
    let sensor_task = format!("measure_{sensor}");
    let (body, caps): (Vec<BtNode>, Vec<&str>) = if conditional {
        let threshold = low_threshold(&sensor_task);
        let body = order
            .iter()
            .flat_map(|id| {
                [
                    BtNode::task(AtomicTask::navigate_to_tree(id)),
                    BtNode::Condition(ConditionNode {
                        sensor: TaskType::new(sensor_task.clone()),
                        operator: Operator::Lt,
                        threshold,
                        then_branch: Box::new(BtNode::task(AtomicTask::new(TaskType::TAKE_PICTURE))),
                        else_branch: None,
                    }),
                ]
            })
            .collect();
        (body, vec![sensor_task.as_str(), TaskType::TAKE_PICTURE])
    } else {
        (visit(&order, &sensor_task), vec![sensor_task.as_str()])
    };
    let mut rationale = format!("The {k} trees nearest the deploy point in walking order are {}.", order.join(", "));
    if conditional {
        rationale.push_str(&format!(
            " A {sensor} reading below {} counts as low and triggers a picture.",
            low_threshold(&sensor_task)
        ));
    }
    Ok(wrap(farm, &format!("{sensor} survey"), rationale, body, &caps))
}

/// Plans a query from the mock grammar.
pub fn mock_plan(query: &str, farm: &FarmMap) -> Result<MissionPlan, BackendError> {
    let q = normalize(query);
    let g = grammar();
    if let Some(c) = g.row.captures(&q) {
        return row_plan(farm, count(&c[1])?, count(&c[2])?);
    }
    if let Some(c) = g.pictures.captures(&q) {
        let n = c.get(1).map(|m| count(m.as_str())).transpose()?;
        return picture_plan(farm, n, c.get(2).map(|m| m.as_str()), c.get(3).map(|m| m.as_str()));
    }
    if let Some(c) = g.measure.captures(&q) {
        return measure_plan(farm, &c[1], count(&c[2])?, q.contains("if"));
    }
    Err(BackendError::UnparseableQuery(query.to_string()))
}

/// Formats a plan the way a chat model is asked to reply: rationale first,
/// then one fenced XML block.
pub fn render_reply(plan: &MissionPlan) -> String {
    format!("{}\n\n```xml\n{}```\n", plan.rationale, serialize_l1(plan))
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    farm: FarmMap,
}

impl MockBackend {
    pub fn new(farm: FarmMap) -> Self {
        Self { farm }
    }
}

impl PlanBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let query = request.query().ok_or_else(|| BackendError::BadResponse("request has no user message".into()))?;
        mock_plan(query, &self.farm).map(|p| render_reply(&p))
    }
}
