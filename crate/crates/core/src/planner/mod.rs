//! Natural-language mission to validated L1 plan: prompt assembly, a
//! pluggable backend, and the validate-and-repair loop.

mod backend;
mod mock;

use serde::{Deserialize, Serialize};

pub use backend::{
    BackendConfig, BackendError, ChatMessage, ChatRequest, ConfigError, LiveBackend, PlanBackend, ReplayBackend,
    ScriptedBackend,
};
pub use mock::{low_threshold, mock_plan, render_reply, MockBackend};

use crate::schema::{
    parse_l1_with, ErrorCode, MissionPlan, PlanParseError, SchemaDoc, SchemaError, ValidationError, ValidationReport,
};

pub const DEFAULT_MAX_REPAIRS: usize = 1;

pub const DEFAULT_INSTRUCTIONS: &str = "\
You are a mission planner for an agricultural field robot. Translate the \
user's mission into an L1 mission plan: one XML document that validates \
against the schema below, using only the listed robot capabilities and only \
tree ids that appear in the farm description. Start with a short rationale \
explaining how you chose the trees and the order of tasks, then give the plan \
in a single ```xml fenced block. Do not emit any other XML.";

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("planner context: {0}")]
    Context(String),
    #[error("schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("query is empty")]
    EmptyQuery,
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("UNREPAIRABLE after {rounds} repair round(s):\n{report}")]
    Unrepairable { rounds: usize, report: ValidationReport, transcript: Vec<Exchange> },
}

/// Everything the model needs besides the query.
#[derive(Debug, Clone)]
pub struct PlannerContext {
    schema_text: String,
    schema: SchemaDoc,
    farm_geojson: String,
    robot_capabilities: Vec<String>,
    instructions: String,
}

impl PlannerContext {
    pub fn new(
        schema_text: impl Into<String>,
        farm_geojson: impl Into<String>,
        robot_capabilities: Vec<String>,
    ) -> Result<Self, PlannerError> {
        Self::with_instructions(schema_text, farm_geojson, robot_capabilities, DEFAULT_INSTRUCTIONS)
    }

    pub fn with_instructions(
        schema_text: impl Into<String>,
        farm_geojson: impl Into<String>,
        robot_capabilities: Vec<String>,
        instructions: impl Into<String>,
    ) -> Result<Self, PlannerError> {
        let schema_text = schema_text.into();
        let farm_geojson = farm_geojson.into();
        let instructions = instructions.into();
        if schema_text.trim().is_empty() || farm_geojson.trim().is_empty() || instructions.trim().is_empty() {
            return Err(PlannerError::Context("schema, farm and instructions must be nonempty".into()));
        }
        if robot_capabilities.is_empty() || robot_capabilities.iter().any(|c| c.trim().is_empty()) {
            return Err(PlannerError::Context("capability list must be nonempty".into()));
        }
        let schema = SchemaDoc::parse(&schema_text)?;
        Ok(Self { schema_text, schema, farm_geojson, robot_capabilities, instructions })
    }

    pub fn schema_text(&self) -> &str {
        &self.schema_text
    }

    pub fn schema(&self) -> &SchemaDoc {
        &self.schema
    }

    pub fn farm_geojson(&self) -> &str {
        &self.farm_geojson
    }

    pub fn robot_capabilities(&self) -> &[String] {
        &self.robot_capabilities
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

pub fn compose_prompt(ctx: &PlannerContext, query: &str) -> Result<Prompt, PlannerError> {
    if query.trim().is_empty() {
        return Err(PlannerError::EmptyQuery);
    }
    let caps: String = ctx.robot_capabilities.iter().map(|c| format!("- {c}\n")).collect();
    let system = format!(
        "{}\n\n## Robot capabilities\n{}\n## L1 mission plan schema (XSD)\n{}\n\n## Farm (GeoJSON)\n{}\n",
        ctx.instructions,
        caps,
        ctx.schema_text.trim_end(),
        ctx.farm_geojson.trim_end()
    );
    Ok(Prompt { system, user: query.to_string() })
}

/// One request/response pair sent to the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub plan: MissionPlan,
    pub raw_xml: String,
    pub rationale: String,
    pub repair_rounds: usize,
    pub transcript: Vec<Exchange>,
}

/// Splits a model reply into its XML document and the surrounding prose.
/// Prefers the first fenced block holding a `MissionPlan`, then the first
/// bare `<MissionPlan` ... `</MissionPlan>` span.
pub fn extract_xml(reply: &str) -> Option<(String, String)> {
    let mut search = 0;
    while let Some(open) = reply[search..].find("```") {
        let start = search + open;
        let body_start = match reply[start..].find('\n') {
            Some(nl) => start + nl + 1,
            None => break,
        };
        let Some(close) = reply[body_start..].find("```") else { break };
        let end = body_start + close;
        let body = &reply[body_start..end];
        if body.contains("<MissionPlan") {
            let rationale = format!("{}{}", &reply[..start], &reply[end + 3..]);
            return Some((body.trim().to_string(), rationale.trim().to_string()));
        }
        search = end + 3;
    }
    let start = reply.find("<MissionPlan")?;
    let start = reply[..start]
        .rfind("<?xml")
        .filter(|&d| {
            let decl = reply[d..start].trim_end();
            decl.ends_with("?>") && decl.matches('<').count() == 1
        })
        .unwrap_or(start);
    let close = "</MissionPlan>";
    let end = reply[start..].rfind(close).map(|e| start + e + close.len())?;
    let rationale = format!("{}{}", &reply[..start], &reply[end..]);
    Some((reply[start..end].to_string(), rationale.trim().to_string()))
}

fn single_error(code: ErrorCode, message: String) -> ValidationReport {
    ValidationReport { errors: vec![ValidationError { path: "/".into(), code, message }] }
}

/// Validates one reply; the error side is the report fed back for repair.
fn check_reply(reply: &str, schema: &SchemaDoc) -> Result<(MissionPlan, String, String), ValidationReport> {
    let Some((xml, rationale)) = extract_xml(reply) else {
        return Err(single_error(ErrorCode::MalformedXml, "reply contains no MissionPlan XML document".into()));
    };
    match parse_l1_with(&xml, schema) {
        Ok(plan) => Ok((plan, xml, rationale)),
        Err(PlanParseError::Invalid(report)) => Err(report),
        Err(e) => Err(single_error(ErrorCode::MalformedXml, e.to_string())),
    }
}

pub fn repair_message(report: &ValidationReport) -> String {
    format!(
        "The mission plan you returned does not validate against the schema. Validator output:\n{report}\n\
         Return the corrected plan, keeping everything that was valid, as one ```xml fenced block."
    )
}

/// Sends the query, validates the reply, and asks for repairs until it
/// validates or `max_repairs` rounds are spent.
pub fn generate_plan(
    query: &str,
    ctx: &PlannerContext,
    backend: &dyn PlanBackend,
    config: &BackendConfig,
    max_repairs: usize,
) -> Result<PlanResult, PlannerError> {
    let prompt = compose_prompt(ctx, query)?;
    let mut messages = vec![ChatMessage::system(prompt.system), ChatMessage::user(prompt.user)];
    let mut transcript = Vec::new();
    let mut round = 0;
    loop {
        let request = ChatRequest {
            model: config.model_name.clone(),
            messages: messages.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        let response = backend.complete(&request)?;
        transcript.push(Exchange { request, response: response.clone() });
        match check_reply(&response, ctx.schema()) {
            Ok((plan, raw_xml, rationale)) => {
                return Ok(PlanResult { plan, raw_xml, rationale, repair_rounds: round, transcript });
            }
            Err(report) if round >= max_repairs => {
                return Err(PlannerError::Unrepairable { rounds: round, report, transcript });
            }
            Err(report) => {
                messages.push(ChatMessage::assistant(response));
                messages.push(ChatMessage::user(repair_message(&report)));
                round += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_prefers_fenced_block() {
        let reply = "Because.\n```xml\n<MissionPlan name=\"a\"/>\n```\ntrailer";
        let (xml, why) = extract_xml(reply).unwrap();
        assert_eq!(xml, "<MissionPlan name=\"a\"/>");
        assert_eq!(why, "Because.\n\ntrailer");
    }

    #[test]
    fn extraction_falls_back_to_root_span() {
        let reply = "Here: <?xml version=\"1.0\"?><MissionPlan name=\"a\"></MissionPlan> done";
        let (xml, why) = extract_xml(reply).unwrap();
        assert_eq!(xml, "<?xml version=\"1.0\"?><MissionPlan name=\"a\"></MissionPlan>");
        assert_eq!(why, "Here:  done");
        assert!(extract_xml("no plan today").is_none());
    }

    #[test]
    fn extraction_skips_unrelated_fences() {
        let reply = "```json\n{}\n```\n```\n<MissionPlan name=\"b\"/>\n```";
        assert_eq!(extract_xml(reply).unwrap().0, "<MissionPlan name=\"b\"/>");
    }
}
