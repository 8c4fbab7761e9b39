//! `sentmap`: build, check, edit, plan over and evaluate semantic
//! topological maps.
//!
//! Exit codes: 0 success, 1 validation or operation failure, 2 usage error,
//! 3 transport failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sentmap_core::builder::{self, DescribeError, Describer, FixtureDescriber, RemoteDescriber, TraceEvent};
use sentmap_core::endpoint::{EndpointConfig, HttpTransport};
use sentmap_core::eval::{self, Condition, ReportFormat, SuiteOptions, TaskSpec};
use sentmap_core::planning::{
    assemble_prompt, default_skill_api, oracle_plan, plan_with_endpoint, EndpointPlanError, GoalSpec, ModelSettings,
    Plan,
};
use sentmap_core::sim::{self, SimVerifier};
use sentmap_core::{parse_map, serialize_map, validate_map, EditCommand, SentMap};

#[derive(Parser)]
#[command(
    name = "sentmap",
    version,
    about = "Semantic topological maps for robot task planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map validation, construction and editing.
    #[command(subcommand)]
    Map(MapCommand),
    /// Produce a skill plan for a task.
    Plan(PlanArgs),
    /// Execute a plan in the simulator.
    Simulate(SimulateArgs),
    /// Run a task suite under a set of conditions.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum MapCommand {
    /// Check a Scene JSON document and print every issue.
    Validate {
        file: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Build a map from a walkthrough trace.
    Build(BuildArgs),
    /// Apply a batch of edit commands.
    Edit {
        file: PathBuf,
        #[arg(long)]
        ops: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a map to locations and labels only.
    Strip {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Directory of recorded describer payloads, keyed by image file stem.
    #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
    fixtures: Option<PathBuf>,
    /// Endpoint configuration for a multimodal model.
    #[arg(long)]
    endpoint: Option<PathBuf>,
    /// Directory image references are resolved against (default: the
    /// trace's directory).
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write the raw describer outputs here for review.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("planner").required(true).args(["oracle", "endpoint"]))]
struct PlanArgs {
    #[arg(long)]
    map: PathBuf,
    /// Natural-language task; required with --endpoint.
    #[arg(long)]
    query: Option<String>,
    /// Use the symbolic planner with an explicit goal.
    #[arg(long, requires = "goal", conflicts_with = "endpoint")]
    oracle: bool,
    #[arg(long)]
    goal: Option<PathBuf>,
    #[arg(long, requires = "query")]
    endpoint: Option<PathBuf>,
    #[arg(long)]
    start: String,
    /// Verifier-driven repair rounds (default from the endpoint config).
    #[arg(long)]
    repair_budget: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the request/response transcript here.
    #[arg(long)]
    transcript_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    start: String,
    /// Also report whether this goal holds at the end.
    #[arg(long)]
    goal: Option<PathBuf>,
    /// Write one JSON line per executed step.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    conditions: PathBuf,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Directory of `<label>.json` transcripts for fixture planners.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Write per-cell transcripts and simulator traces into this directory.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn op(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn transport(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::op(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::op(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::op(format!("{}: {e}", path.display())))
}

fn load_map(path: &Path) -> Result<SentMap, Failure> {
    parse_map(&read(path)?).map_err(|e| Failure::op(format!("{}: {e}", path.display())))
}

fn load_endpoint(path: &Path) -> Result<EndpointConfig, Failure> {
    EndpointConfig::from_file(path).map_err(|e| Failure::op(e.to_string()))
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn validate(file: &Path, json: bool) -> Outcome {
    let bytes = fs::read(file).map_err(|e| Failure::op(format!("{}: {e}", file.display())))?;
    let report = validate_map(&bytes);
    if json {
        let v = serde_json::json!({
            "errors": report.error_count(),
            "warnings": report.warning_count(),
            "issues": report.issues,
        });
        print!("{}", pretty(&v));
    } else {
        println!("{report}");
    }
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::op(""))
    }
}

fn build(args: &BuildArgs) -> Outcome {
    let events: Vec<TraceEvent> = read_json(&args.trace)?;
    let describer: Box<dyn Describer> = match (&args.fixtures, &args.endpoint) {
        (Some(dir), _) => {
            Box::new(FixtureDescriber::from_dir(dir).map_err(|e| Failure::op(format!("{}: {e}", dir.display())))?)
        }
        (None, Some(cfg)) => {
            let config = load_endpoint(cfg)?;
            let transport = HttpTransport::new(&config).map_err(|e| Failure::op(e.to_string()))?;
            let image_root = args
                .images
                .clone()
                .or_else(|| args.trace.parent().map(Path::to_path_buf))
                .unwrap_or_default();
            Box::new(RemoteDescriber {
                transport,
                settings: ModelSettings {
                    model: config.model.clone(),
                    temperature: config.temperature,
                },
                repair_attempts: config.repair_attempts,
                image_root,
            })
        }
        (None, None) => unreachable!("clap requires one describer"),
    };
    let out = builder::build_map(&events, describer.as_ref()).map_err(|e| match &e {
        builder::BuildError::DescriberFailure {
            cause: DescribeError::Transport(_),
            ..
        } => Failure::transport(e.to_string()),
        _ => Failure::op(e.to_string()),
    })?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write(&args.out, &serialize_map(&out.map))?;
    if let Some(audit) = &args.audit {
        write(audit, &pretty(&out.results))?;
    }
    eprintln!(
        "built {} nodes, {} semantic, {} objects",
        out.map.len(),
        out.map.semantic_nodes().count(),
        out.map.object_count()
    );
    Ok(())
}

fn edit(file: &Path, ops: &Path, out: &Path) -> Outcome {
    let map = load_map(file)?;
    let edits: Vec<EditCommand> = read_json(ops)?;
    let patched = builder::review_and_patch(&map, &edits).map_err(|e| Failure::op(e.to_string()))?;
    write(out, &serialize_map(&patched))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => write(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn plan(args: &PlanArgs) -> Outcome {
    let map = load_map(&args.map)?;
    let api = default_skill_api();
    if !map.contains(&args.start) {
        return Err(Failure::op(format!("unknown start node {}", args.start)));
    }
    let plan: Plan = if args.oracle {
        let goal: GoalSpec = read_json(args.goal.as_deref().expect("clap requires --goal"))?;
        oracle_plan(&map, &goal, &args.start, &api).map_err(|e| Failure::op(e.to_string()))?
    } else {
        let config = load_endpoint(args.endpoint.as_deref().expect("clap requires --endpoint"))?;
        let query = args.query.as_deref().expect("clap requires --query");
        let prompt = assemble_prompt(&map, &api, query).map_err(|e| Failure::op(e.to_string()))?;
        let transport = HttpTransport::new(&config).map_err(|e| Failure::op(e.to_string()))?;
        let settings = ModelSettings {
            model: config.model.clone(),
            temperature: config.temperature,
        };
        let verifier = SimVerifier {
            map: &map,
            start: map
                .node_ids()
                .find(|n| n.as_str() == args.start)
                .cloned()
                .expect("checked"),
            api: api.clone(),
        };
        let budget = args.repair_budget.unwrap_or(config.repair_attempts);
        let result = plan_with_endpoint(&prompt, &transport, &settings, &api, &verifier, budget);
        let transcript = match &result {
            Ok(r) => &r.transcript,
            Err(e) => e.transcript(),
        };
        if let Some(path) = &args.transcript_out {
            write(path, &transcript.to_json())?;
        }
        match result {
            Ok(r) => r.plan,
            Err(e @ EndpointPlanError::Transport { .. }) => return Err(Failure::transport(e.to_string())),
            Err(e) => return Err(Failure::op(e.to_string())),
        }
    };
    emit(args.out.as_deref(), &pretty(&plan))
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let map = load_map(&args.map)?;
    let plan: Plan = read_json(&args.plan)?;
    let api = default_skill_api();
    let result = sim::verify_plan(&map, &args.start, &plan, &api).map_err(|e| Failure::op(e.to_string()))?;
    if let Some(path) = &args.trace_out {
        write(path, &sim::trace_to_jsonl(&result.trace))?;
    }
    let mut summary = serde_json::json!({
        "verdict": result.verdict,
        "steps_executed": result.trace.len(),
        "final_state": result.final_state,
    });
    let mut goal_ok = true;
    if let Some(goal_path) = &args.goal {
        let goal: GoalSpec = read_json(goal_path)?;
        goal_ok = sim::check_goal(&result.final_state, &goal, &map).map_err(|e| Failure::op(e.to_string()))?;
        summary["goal_reached"] = goal_ok.into();
    }
    print!("{}", pretty(&summary));
    match result.error() {
        Some((i, e)) => Err(Failure::op(format!("step {i} ({}) rejected: {e}", plan.steps[i]))),
        None if !goal_ok => Err(Failure::op("plan executed but the goal does not hold")),
        None => Ok(()),
    }
}

fn run_eval(args: &EvalArgs) -> Outcome {
    let map = load_map(&args.map)?;
    let tasks: Vec<TaskSpec> = read_json(&args.tasks)?;
    let conditions: Vec<Condition> = read_json(&args.conditions)?;
    let options = SuiteOptions {
        fixtures_dir: args.fixtures.clone(),
    };
    let run = eval::run_suite(&tasks, &conditions, &map, &options).map_err(|e| match e {
        eval::EvalError::Transport { .. } => Failure::transport(e.to_string()),
        _ => Failure::op(e.to_string()),
    })?;
    let format = match args.format {
        Format::Markdown => ReportFormat::Markdown,
        Format::Json => ReportFormat::Json,
    };
    let text = run.report.render(format);
    if let Some(path) = &args.report {
        write(path, &text)?;
    }
    print!("{text}");
    if let Some(dir) = &args.artifacts {
        fs::create_dir_all(dir).map_err(|e| Failure::op(format!("{}: {e}", dir.display())))?;
        for a in &run.artifacts {
            let stem = format!(
                "c{}-{}",
                a.condition,
                a.task.replace(|c: char| !c.is_ascii_alphanumeric(), "_")
            );
            if let Some(t) = &a.transcript {
                write(&dir.join(format!("{stem}.transcript.json")), &t.to_json())?;
            }
            write(&dir.join(format!("{stem}.trace.jsonl")), &sim::trace_to_jsonl(&a.trace))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Map(MapCommand::Validate { file, json }) => validate(file, *json),
        Command::Map(MapCommand::Build(args)) => build(args),
        Command::Map(MapCommand::Edit { file, ops, out }) => edit(file, ops, out),
        Command::Map(MapCommand::Strip { file, out }) => {
            load_map(file).and_then(|m| write(out, &serialize_map(&m.strip_semantics())))
        }
        Command::Plan(args) => plan(args),
        Command::Simulate(args) => simulate(args),
        Command::Eval(args) => run_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
