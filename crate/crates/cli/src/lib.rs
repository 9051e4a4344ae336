//! Command line front end. Every command is a thin composition of
//! `agmp-core` operations; this crate only reads files, picks a backend and
//! maps failures to exit codes.
//!
//! Exit codes: 0 success, 1 validation or plan failure, 2 I/O, usage or
//! configuration error, 3 backend or network failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use agmp_core::bench::{run_benchmark, BenchConfig};
use agmp_core::decoder::{decode, RobotProfile};
use agmp_core::geo::{load_farm, Direction, FarmMap, GeoPoint};
use agmp_core::planner::{
    generate_plan, BackendConfig, BackendError, LiveBackend, MockBackend, PlanBackend, PlannerContext, PlannerError,
    ReplayBackend, DEFAULT_MAX_REPAIRS,
};
use agmp_core::schema::{parse_l1_with, plan_stats, validate, SchemaDoc};
use agmp_core::sim::{execute, SensorOutcomeTable, StochasticEdgeModel};
use agmp_core::sop::{OnlinePolicy, SopGuard};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "agmp", version, about = "Mission planning pipeline for orchard robots")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a natural language mission into a validated plan.
    Plan(PlanArgs),
    /// Check a plan file against the schema; silent when valid.
    Validate(ValidateArgs),
    /// Bind a plan to a farm and robot profile.
    Decode(DecodeArgs),
    /// Execute a plan in the stochastic simulator.
    Simulate(SimulateArgs),
    /// Run the orienteering benchmark.
    Bench(BenchArgs),
    /// Plan statistics and spatial queries.
    Inspect {
        #[command(subcommand)]
        query: InspectQuery,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Live,
    Mock,
    Replay,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Mission text; read from stdin when absent.
    pub query: Option<String>,
    #[arg(long)]
    pub farm: PathBuf,
    /// XSD file; the shipped schema when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    /// Backend TOML config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Robot profile whose capabilities are offered to the model.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Directory of recorded exchanges for the replay backend.
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    /// Record every exchange of the chosen backend into this directory.
    #[arg(long, conflicts_with = "replay_dir")]
    pub record: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_REPAIRS)]
    pub max_repairs: usize,
    /// Write the plan XML here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub plan: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub plan: PathBuf,
    #[arg(long)]
    pub farm: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Write the decoded plan JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub plan: PathBuf,
    #[arg(long)]
    pub farm: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Variance of the travel cost multiplier.
    #[arg(long, default_value_t = 0.0)]
    pub variance: f64,
    /// Distance budget in multiples of the farm diagonal, replacing the
    /// profile and plan limits.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Sensor outcome table (JSON).
    #[arg(long)]
    pub sensors: Option<PathBuf>,
    /// Guard each leg with the online budget policy.
    #[arg(long)]
    pub guard: bool,
    /// Risk level of the guard.
    #[arg(long, requires = "guard")]
    pub delta: Option<f64>,
    /// Trace file (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bench TOML config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub variance: Option<f64>,
    #[arg(long)]
    pub budget: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum InspectQuery {
    /// Task and conditional counts of a plan.
    Stats {
        plan: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Trees in one half of the farm.
    Half {
        #[arg(value_enum)]
        direction: HalfArg,
        #[arg(long)]
        farm: PathBuf,
    },
    /// Corners of the farm's minimum-area bounding rectangle.
    Corners {
        #[arg(long)]
        farm: PathBuf,
    },
    /// The k trees closest to a point.
    Nearest {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        #[arg(short, long, default_value_t = 1)]
        k: usize,
        /// Tree ids to skip, comma separated.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        #[arg(long)]
        farm: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HalfArg {
    North,
    South,
    East,
    West,
}

impl From<HalfArg> for Direction {
    fn from(h: HalfArg) -> Self {
        match h {
            HalfArg::North => Direction::North,
            HalfArg::South => Direction::South,
            HalfArg::East => Direction::East,
            HalfArg::West => Direction::West,
        }
    }
}

/// Failure carrying its exit code and the text for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Display) -> Self {
        Self { code, message: message.to_string() }
    }

    fn usage(message: impl Display) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

/// Standard streams handed to a command.
pub struct Io<'a> {
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { io.stderr } else { io.stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(&cli, io) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(io.stderr, "{}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, io: &mut Io<'_>) -> Result<i32, Failure> {
    match &cli.command {
        Command::Plan(a) => plan(a, cli.json, io),
        Command::Validate(a) => validate_cmd(a, cli.json, io),
        Command::Decode(a) => decode_cmd(a, cli.json, io),
        Command::Simulate(a) => simulate(a, cli.json, io),
        Command::Bench(a) => bench(a, cli.json, io),
        Command::Inspect { query } => inspect(query, cli.json, io),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|e| Failure::usage(format!("stdout: {e}")))
}

fn emit_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), Failure> {
    emit(out, &format!("{}\n", serde_json::to_string_pretty(value).expect("json value")))
}

fn load_farm_file(path: &Path) -> Result<(String, FarmMap), Failure> {
    let text = read(path)?;
    let farm = load_farm(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok((text, farm))
}

fn schema_text(path: &Option<PathBuf>) -> Result<String, Failure> {
    match path {
        Some(p) => read(p),
        None => Ok(SchemaDoc::builtin_text().to_string()),
    }
}

fn load_schema(path: &Option<PathBuf>) -> Result<SchemaDoc, Failure> {
    match path {
        Some(p) => SchemaDoc::parse(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => Ok(SchemaDoc::builtin().clone()),
    }
}

fn load_profile(path: &Path) -> Result<RobotProfile, Failure> {
    RobotProfile::from_toml(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_plan(path: &Path, schema: &SchemaDoc) -> Result<agmp_core::schema::MissionPlan, Failure> {
    parse_l1_with(&read(path)?, schema).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn backend_failure(e: BackendError) -> Failure {
    match e {
        // The query itself is at fault, not the backend.
        BackendError::UnparseableQuery(_) | BackendError::Unsatisfiable(_) => Failure::new(EXIT_FAILURE, e),
        other => Failure::new(EXIT_BACKEND, other),
    }
}

fn plan(a: &PlanArgs, json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    let query = match &a.query {
        Some(q) => q.clone(),
        None => {
            let mut q = String::new();
            io.stdin.read_to_string(&mut q).map_err(|e| Failure::usage(format!("stdin: {e}")))?;
            q
        }
    };
    let (farm_text, farm) = load_farm_file(&a.farm)?;
    let schema = schema_text(&a.schema)?;
    let caps: Vec<String> = match &a.profile {
        Some(p) => load_profile(p)?.capabilities.into_iter().collect(),
        None => SchemaDoc::parse(&schema)
            .map_err(|e| Failure::usage(format!("schema: {e}")))?
            .task_pool()
            .into_iter()
            .map(String::from)
            .collect(),
    };
    let config = match &a.config {
        Some(p) => BackendConfig::from_toml(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => BackendConfig::default(),
    };
    let ctx = PlannerContext::new(schema, farm_text, caps).map_err(|e| Failure::usage(e))?;
    let inner: Box<dyn PlanBackend> = match a.backend {
        BackendKind::Mock => Box::new(MockBackend::new(farm)),
        BackendKind::Live => Box::new(LiveBackend::new(config.clone()).map_err(backend_failure)?),
        BackendKind::Replay => {
            let dir = a.replay_dir.as_ref().ok_or_else(|| Failure::usage("--backend replay needs --replay-dir"))?;
            Box::new(ReplayBackend::replay(dir))
        }
    };
    let backend: Box<dyn PlanBackend> = match &a.record {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
            Box::new(ReplayBackend::record(dir, inner))
        }
        None => inner,
    };
    let result = match generate_plan(&query, &ctx, backend.as_ref(), &config, a.max_repairs) {
        Ok(r) => r,
        Err(PlannerError::Backend(e)) => return Err(backend_failure(e)),
        Err(e @ (PlannerError::Context(_) | PlannerError::Schema(_))) => return Err(Failure::usage(e)),
        Err(e) => return Err(Failure::new(EXIT_FAILURE, e)),
    };
    if let Some(out) = &a.out {
        write_file(out, &result.raw_xml)?;
    }
    let stats = plan_stats(&result.plan);
    if json {
        emit_json(
            io.stdout,
            &json!({
                "xml": result.raw_xml,
                "rationale": result.rationale,
                "repair_rounds": result.repair_rounds,
                "task_count": stats.task_count,
                "conditional_count": stats.conditional_count,
            }),
        )?;
    } else {
        let _ = writeln!(io.stderr, "{}", result.rationale.trim());
        if a.out.is_none() {
            emit(io.stdout, &result.raw_xml)?;
            if !result.raw_xml.ends_with('\n') {
                emit(io.stdout, "\n")?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn validate_cmd(a: &ValidateArgs, json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    let schema = load_schema(&a.schema)?;
    let report = validate(&read(&a.plan)?, &schema);
    if json {
        emit_json(io.stdout, &json!({ "valid": report.is_valid(), "errors": report.errors }))?;
    }
    if report.is_valid() {
        return Ok(EXIT_OK);
    }
    Err(Failure::new(EXIT_FAILURE, report))
}

fn decode_cmd(a: &DecodeArgs, _json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    let schema = load_schema(&a.schema)?;
    let plan = load_plan(&a.plan, &schema)?;
    let (_, farm) = load_farm_file(&a.farm)?;
    let exec = decode(&plan, &load_profile(&a.profile)?, &farm).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    // The decoded plan has no text form; both modes print JSON.
    let text = format!("{}\n", serde_json::to_string_pretty(&exec).expect("plan serializes"));
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => emit(io.stdout, &text)?,
    }
    Ok(EXIT_OK)
}

fn simulate(a: &SimulateArgs, json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    if !(a.variance >= 0.0 && a.variance.is_finite()) {
        return Err(Failure::usage("--variance must be finite and nonnegative"));
    }
    let schema = load_schema(&a.schema)?;
    let plan = load_plan(&a.plan, &schema)?;
    let (_, farm) = load_farm_file(&a.farm)?;
    let mut exec = decode(&plan, &load_profile(&a.profile)?, &farm).map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    if let Some(b) = a.budget {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Failure::usage("--budget must be positive"));
        }
        exec.effective_budget = b;
    }
    let sensors = match &a.sensors {
        Some(p) => SensorOutcomeTable::from_json(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => SensorOutcomeTable::default(),
    };
    let model = StochasticEdgeModel::new(a.variance);
    let delta = a.delta.unwrap_or(OnlinePolicy::default().delta);
    if !(0.0..=1.0).contains(&delta) {
        return Err(Failure::usage("--delta must lie in [0, 1]"));
    }
    let mut guard = a.guard.then(|| SopGuard::for_plan(&exec, model, delta));
    let trace = execute(&exec, &model, &sensors, a.seed, guard.as_mut().map(|g| g as _));
    if let Some(out) = &a.out {
        write_file(out, &trace.to_jsonl(&plan.name))?;
    }
    let s = trace.summary(&plan.name);
    if json {
        emit_json(io.stdout, &serde_json::to_value(&s).expect("summary serializes"))?;
    } else {
        emit(
            io.stdout,
            &format!(
                "outcome={} total_cost={:.3} budget={:.3} R={} events={} seed={}\n",
                s.outcome.as_str(),
                s.total_cost,
                s.budget,
                s.reward,
                s.events,
                s.rng_seed
            ),
        )?;
    }
    Ok(EXIT_OK)
}

fn bench(a: &BenchArgs, json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    let mut cfg = BenchConfig::from_toml(&read(&a.config)?).map_err(|e| Failure::usage(format!("{}: {e}", a.config.display())))?;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    cfg.variance = a.variance.unwrap_or(cfg.variance);
    cfg.budget = a.budget.unwrap_or(cfg.budget);
    let report = run_benchmark(&cfg).map_err(|e| match e {
        agmp_core::bench::BenchError::Sop(s) => Failure::new(EXIT_FAILURE, s),
        other => Failure::usage(other),
    })?;
    let text = report.to_json();
    if let Some(out) = &a.out {
        write_file(out, &format!("{text}\n"))?;
    }
    if json {
        emit(io.stdout, &format!("{text}\n"))?;
    } else {
        emit(io.stdout, &report.to_text())?;
    }
    Ok(EXIT_OK)
}

fn inspect(q: &InspectQuery, json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    let geo_err = |e: agmp_core::geo::GeoError| Failure::new(EXIT_FAILURE, e);
    match q {
        InspectQuery::Stats { plan, schema } => {
            let p = load_plan(plan, &load_schema(schema)?)?;
            let s = plan_stats(&p);
            if json {
                emit_json(io.stdout, &serde_json::to_value(s).expect("stats serialize"))?;
            } else {
                emit(io.stdout, &format!("tasks={} conditionals={}\n", s.task_count, s.conditional_count))?;
            }
        }
        InspectQuery::Half { direction, farm } => {
            let (_, farm) = load_farm_file(farm)?;
            let ids: Vec<String> = farm.trees_in_half((*direction).into()).into_iter().collect();
            if json {
                emit_json(io.stdout, &json!({ "trees": ids }))?;
            } else {
                emit(io.stdout, &format!("{}\n", ids.join(" ")))?;
            }
        }
        InspectQuery::Corners { farm } => {
            let (_, farm) = load_farm_file(farm)?;
            let corners = farm.boundary_corners().map_err(geo_err)?;
            let names = ["nw", "ne", "se", "sw"];
            if json {
                let v: serde_json::Map<String, serde_json::Value> = names
                    .iter()
                    .zip(corners)
                    .map(|(n, c)| (n.to_string(), json!({ "lat": c.lat, "lon": c.lon })))
                    .collect();
                emit_json(io.stdout, &serde_json::Value::Object(v))?;
            } else {
                for (n, c) in names.iter().zip(corners) {
                    emit(io.stdout, &format!("{n} {:.8} {:.8}\n", c.lat, c.lon))?;
                }
            }
        }
        InspectQuery::Nearest { lat, lon, k, exclude, farm } => {
            let (_, farm) = load_farm_file(farm)?;
            let from = GeoPoint::new(*lat, *lon).map_err(Failure::usage)?;
            let exclude: BTreeSet<String> = exclude.iter().cloned().collect();
            let ids = farm.nearest_trees(from, *k, &exclude).map_err(geo_err)?;
            if json {
                emit_json(io.stdout, &json!({ "trees": ids }))?;
            } else {
                emit(io.stdout, &format!("{}\n", ids.join(" ")))?;
            }
        }
    }
    Ok(EXIT_OK)
}
