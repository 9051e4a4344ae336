//! Random generators shared by property tests and the acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::schema::{AtomicTask, BtNode, ConditionNode, Constraints, MissionPlan, Operator, TaskType};

pub const SENSORS: [&str; 3] = [TaskType::MEASURE_CO2, TaskType::MEASURE_TEMPERATURE, TaskType::MEASURE_MOISTURE];

const TEXT_ALPHABET: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', ' ', ' ', '\n', '\t', '\r', '&', '<', '>', '"', '\'', ';', ']', 'é', '√', '🌳',
];

pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| *TEXT_ALPHABET.choose(rng).unwrap()).collect()
}

/// A finite decimal that survives a display/parse round trip.
pub fn random_decimal<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(lo..=hi).round(),
        1 => (rng.gen_range(lo..=hi) * 100.0).round() / 100.0,
        _ => rng.gen_range(lo..=hi),
    }
}

pub fn random_task<R: Rng>(rng: &mut R, tree_ids: &[String]) -> AtomicTask {
    match rng.gen_range(0..7) {
        0 | 1 => AtomicTask::navigate_to_tree(tree_ids.choose(rng).expect("at least one tree id")),
        2 => AtomicTask::navigate_to_point(random_decimal(rng, -90.0, 90.0), random_decimal(rng, -180.0, 180.0)),
        3 => AtomicTask::new(TaskType::TAKE_PICTURE),
        4 => AtomicTask::new(SENSORS.choose(rng).unwrap()),
        5 => AtomicTask::new(TaskType::RETURN_HOME),
        _ => AtomicTask::new(TaskType::TAKE_PICTURE),
    }
}

pub fn random_node<R: Rng>(rng: &mut R, tree_ids: &[String], depth: usize) -> BtNode {
    let kind = if depth == 0 { 0 } else { rng.gen_range(0..6) };
    match kind {
        0..=2 => BtNode::task(random_task(rng, tree_ids)),
        3 | 4 => {
            let n = rng.gen_range(1..=4);
            BtNode::sequence((0..n).map(|_| random_node(rng, tree_ids, depth - 1)).collect())
        }
        _ => {
            let operator = *[Operator::Lt, Operator::Le, Operator::Gt, Operator::Ge].choose(rng).unwrap();
            let else_branch = rng.gen_bool(0.5).then(|| Box::new(random_node(rng, tree_ids, depth - 1)));
            BtNode::Condition(ConditionNode {
                sensor: TaskType::from(*SENSORS.choose(rng).unwrap()),
                operator,
                threshold: random_decimal(rng, -1000.0, 1000.0),
                then_branch: Box::new(random_node(rng, tree_ids, depth - 1)),
                else_branch,
            })
        }
    }
}

/// A schema-valid plan over the given tree ids.
pub fn random_plan<R: Rng>(rng: &mut R, tree_ids: &[String]) -> MissionPlan {
    let caps = rng.gen_range(0..3);
    let depth = rng.gen_range(0..5);
    MissionPlan {
        name: random_text(rng, 12),
        rationale: random_text(rng, 40),
        preconditions: (0..caps).map(|_| format!("cap{}", rng.gen_range(0..100))).collect(),
        constraints: match rng.gen_range(0..3) {
            0 => None,
            1 => Some(Constraints { distance_budget: None }),
            _ => Some(Constraints { distance_budget: Some(random_decimal(rng, 0.0, 10.0)) }),
        },
        root: random_node(rng, tree_ids, depth),
    }
}
