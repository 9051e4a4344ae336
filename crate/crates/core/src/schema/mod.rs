//! The L1 plan format: behavior-tree model, canonical XML and schema
//! validation with element-path diagnostics.

mod model;
mod validate;
mod xsd;

pub use model::{
    parse_l1, parse_l1_bytes, parse_l1_with, plan_stats, serialize_l1, AtomicTask, BtNode, ConditionNode,
    Constraints, MissionPlan, Operator, PlanParseError, PlanStats, TaskType,
};
pub use validate::{validate, ErrorCode, ValidationError, ValidationReport, MAX_DEPTH};
pub use xsd::{SchemaDoc, SchemaError};
