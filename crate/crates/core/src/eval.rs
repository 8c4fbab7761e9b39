//! Evaluation harness: runs task suites under map ablations and planners,
//! scores every plan in the simulator against the full map, and renders
//! success tables.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::endpoint::{ChatTransport, EndpointConfig, HttpTransport, ReplayTransport, Transcript, TransportError};
use crate::map::{NodeId, SentMap};
use crate::map_io::{parse_map, to_canonical_string};
use crate::planning::{
    assemble_prompt, default_skill_api, oracle_plan, plan_with_endpoint, EndpointPlanError, GoalSpec, ModelSettings,
    Plan, SkillApi,
};
use crate::sim::{self, SimVerifier, StepOutcome};

const REFERENCE_JSON: &str = include_str!("../fixtures/reference.json");
const TASKS_TABLE1: &str = include_str!("../fixtures/tasks_table1.json");
const TASKS_TABLE2: &str = include_str!("../fixtures/tasks_table2.json");

/// The bundled three-zone reference environment.
pub fn reference_environment() -> SentMap {
    parse_map(REFERENCE_JSON).expect("bundled reference map is valid")
}

/// Get-Sponge, Get-Coffee and Get-Tissue.
pub fn tasks_table1() -> Vec<TaskSpec> {
    serde_json::from_str(TASKS_TABLE1).expect("bundled task suite parses")
}

/// Direct/indirect query tasks followed by the ownership tasks.
pub fn tasks_table2() -> Vec<TaskSpec> {
    serde_json::from_str(TASKS_TABLE2).expect("bundled task suite parses")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub query_direct: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_indirect: Option<String>,
    pub goal: GoalSpec,
    pub start: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapVariant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "enhanced")]
    Enhanced,
    #[serde(rename = "enhanced+ownership")]
    EnhancedOwnership,
}

impl MapVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            MapVariant::Baseline => "baseline",
            MapVariant::Enhanced => "enhanced",
            MapVariant::EnhancedOwnership => "enhanced+ownership",
        }
    }

    /// What the planner sees. Baseline keeps only locations and labels;
    /// enhanced drops owner tags; enhanced+ownership is the full map.
    pub fn derive(self, truth: &SentMap) -> SentMap {
        match self {
            MapVariant::Baseline => truth.strip_semantics(),
            MapVariant::Enhanced => truth.strip_ownership(),
            MapVariant::EnhancedOwnership => truth.clone(),
        }
    }
}

impl fmt::Display for MapVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryForm {
    Direct,
    Indirect,
}

impl QueryForm {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryForm::Direct => "direct",
            QueryForm::Indirect => "indirect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerSpec {
    Oracle,
    /// Replay of `<fixtures dir>/<label>.json`.
    Fixture(String),
    Live(EndpointConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub map_variant: MapVariant,
    pub planner: PlannerSpec,
    #[serde(default = "direct")]
    pub query_form: QueryForm,
    /// Row label in reports; defaults to the planner's own name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Verifier-driven repair rounds for model planners.
    #[serde(default)]
    pub repair_budget: u32,
    /// Restricts the condition to these task names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<String>>,
}

fn direct() -> QueryForm {
    QueryForm::Direct
}

impl Condition {
    pub fn planner_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.planner {
            PlannerSpec::Oracle => "oracle".into(),
            PlannerSpec::Fixture(label) => label.clone(),
            PlannerSpec::Live(c) => c.model.clone(),
        }
    }

    fn includes(&self, task: &str) -> bool {
        self.tasks.as_ref().is_none_or(|t| t.iter().any(|n| n == task))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "success")]
    Success,
    #[serde(rename = "failure")]
    Failure,
    #[serde(rename = "refusal")]
    Refusal,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Outcome {
    /// 1 for success, 0 for failure or refusal; not-applicable is unscored.
    pub fn score(self) -> Option<u64> {
        match self {
            Outcome::Success => Some(1),
            Outcome::Failure | Outcome::Refusal => Some(0),
            Outcome::NotApplicable => None,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Outcome::Success => "✓",
            Outcome::Failure => "✗",
            Outcome::Refusal => "∅",
            Outcome::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionInfo {
    pub planner: String,
    pub map_variant: MapVariant,
    pub query_form: QueryForm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellResult {
    /// Index into [`EvalReport::conditions`].
    pub condition: usize,
    pub task: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
}

/// Exact success ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ratio {
    pub successes: u64,
    pub total: u64,
}

impl Ratio {
    fn add(&mut self, outcome: Outcome) {
        if let Some(s) = outcome.score() {
            self.successes += s;
            self.total += 1;
        }
    }

    /// "100%" when perfect, otherwise one decimal rounded half up; "n/a"
    /// when nothing was scored.
    pub fn percent(&self) -> String {
        if self.total == 0 {
            return "n/a".into();
        }
        if self.successes == self.total {
            return "100%".into();
        }
        let tenths = (2000 * self.successes + self.total) / (2 * self.total);
        format!("{}.{}%", tenths / 10, tenths % 10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<String>,
    pub conditions: Vec<ConditionInfo>,
    /// Ordered by condition, then task order.
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct AverageEntry {
    condition: usize,
    successes: u64,
    total: u64,
    percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct GroupAverageEntry {
    map_variant: MapVariant,
    query_form: QueryForm,
    successes: u64,
    total: u64,
    percent: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("report JSON is malformed: {0}")]
    Malformed(String),
    #[error("stored averages do not match the rows: {0}")]
    AverageMismatch(String),
}

impl EvalReport {
    pub fn cell(&self, condition: usize, task: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.condition == condition && c.task == task)
    }

    pub fn condition_average(&self, condition: usize) -> Ratio {
        let mut r = Ratio::default();
        for c in self.cells.iter().filter(|c| c.condition == condition) {
            r.add(c.outcome);
        }
        r
    }

    /// Average over every planner run with this map variant and query form.
    pub fn group_average(&self, variant: MapVariant, form: QueryForm) -> Ratio {
        let mut r = Ratio::default();
        for c in &self.cells {
            let info = &self.conditions[c.condition];
            if info.map_variant == variant && info.query_form == form {
                r.add(c.outcome);
            }
        }
        r
    }

    fn groups(&self) -> Vec<(MapVariant, QueryForm)> {
        let mut seen = Vec::new();
        for c in &self.conditions {
            let g = (c.map_variant, c.query_form);
            if !seen.contains(&g) {
                seen.push(g);
            }
        }
        seen
    }

    fn averages_value(&self) -> (Vec<AverageEntry>, Vec<GroupAverageEntry>) {
        let per_condition = (0..self.conditions.len())
            .map(|i| {
                let r = self.condition_average(i);
                AverageEntry {
                    condition: i,
                    successes: r.successes,
                    total: r.total,
                    percent: r.percent(),
                }
            })
            .collect();
        let per_group = self
            .groups()
            .into_iter()
            .map(|(v, f)| {
                let r = self.group_average(v, f);
                GroupAverageEntry {
                    map_variant: v,
                    query_form: f,
                    successes: r.successes,
                    total: r.total,
                    percent: r.percent(),
                }
            })
            .collect();
        (per_condition, per_group)
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let (per_condition, per_group) = self.averages_value();
        let obj = v.as_object_mut().expect("report is an object");
        obj.insert(
            "averages".into(),
            serde_json::to_value(per_condition).expect("serializes"),
        );
        obj.insert(
            "group_averages".into(),
            serde_json::to_value(per_group).expect("serializes"),
        );
        to_canonical_string(&v)
    }

    /// Parses [`EvalReport::to_json`] output, rejecting documents whose
    /// stored averages disagree with their rows.
    pub fn from_json(text: &str) -> Result<EvalReport, ReportError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
        let report: EvalReport =
            serde_json::from_value(v.clone()).map_err(|e| ReportError::Malformed(e.to_string()))?;
        let (per_condition, per_group) = report.averages_value();
        if let Some(stored) = v.get("averages") {
            let stored: Vec<AverageEntry> =
                serde_json::from_value(stored.clone()).map_err(|e| ReportError::Malformed(e.to_string()))?;
            if stored != per_condition {
                return Err(ReportError::AverageMismatch("per-condition averages".into()));
            }
        }
        if let Some(stored) = v.get("group_averages") {
            let stored: Vec<GroupAverageEntry> =
                serde_json::from_value(stored.clone()).map_err(|e| ReportError::Malformed(e.to_string()))?;
            if stored != per_group {
                return Err(ReportError::AverageMismatch("group averages".into()));
            }
        }
        Ok(report)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }

    fn planners(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for c in &self.conditions {
            if !seen.contains(&c.planner.as_str()) {
                seen.push(&c.planner);
            }
        }
        seen
    }

    /// With several planners: one table per (map variant, query form), a row
    /// per planner. With a single planner: one table, a row per task and a
    /// column per condition.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if self.planners().len() > 1 {
            self.markdown_by_planner(&mut out);
        } else {
            self.markdown_by_task(&mut out);
        }
        out.push_str("✓ success, ✗ failure, ∅ refusal, n/a not applicable.\n");
        let notes: Vec<String> = self
            .cells
            .iter()
            .filter(|c| c.outcome != Outcome::Success)
            .filter_map(|c| {
                let detail = c.detail.as_deref()?.lines().next()?;
                let info = &self.conditions[c.condition];
                Some(format!(
                    "- {} / {} / {} / {}: {}\n",
                    info.planner,
                    info.map_variant,
                    info.query_form.as_str(),
                    c.task,
                    detail
                ))
            })
            .collect();
        if !notes.is_empty() {
            out.push_str("\n#### Notes\n\n");
            out.extend(notes);
        }
        out
    }

    fn symbol(&self, condition: usize, task: &str) -> &'static str {
        self.cell(condition, task).map_or("", |c| c.outcome.symbol())
    }

    fn markdown_by_planner(&self, out: &mut String) {
        for (variant, form) in self.groups() {
            let conds: Vec<usize> = (0..self.conditions.len())
                .filter(|&i| self.conditions[i].map_variant == variant && self.conditions[i].query_form == form)
                .collect();
            let tasks: Vec<&String> = self
                .tasks
                .iter()
                .filter(|t| conds.iter().any(|&i| self.cell(i, t).is_some()))
                .collect();
            out.push_str(&format!("### {variant} / {}\n\n", form.as_str()));
            out.push_str("| Planner |");
            for t in &tasks {
                out.push_str(&format!(" {t} |"));
            }
            out.push_str(" Average |\n|---|");
            out.push_str(&":-:|".repeat(tasks.len()));
            out.push_str("--:|\n");
            for &i in &conds {
                out.push_str(&format!("| {} |", self.conditions[i].planner));
                for t in &tasks {
                    out.push_str(&format!(" {} |", self.symbol(i, t)));
                }
                out.push_str(&format!(" {} |\n", self.condition_average(i).percent()));
            }
            out.push_str("| **Average** |");
            out.push_str(&" |".repeat(tasks.len()));
            out.push_str(&format!(" **{}** |\n\n", self.group_average(variant, form).percent()));
        }
    }

    fn markdown_by_task(&self, out: &mut String) {
        let planner = self.planners().first().copied().unwrap_or("");
        out.push_str(&format!("### {planner}\n\n| Task |"));
        for c in &self.conditions {
            out.push_str(&format!(" {} / {} |", c.map_variant, c.query_form.as_str()));
        }
        out.push_str("\n|---|");
        out.push_str(&":-:|".repeat(self.conditions.len()));
        out.push('\n');
        let run: BTreeSet<&str> = self.cells.iter().map(|c| c.task.as_str()).collect();
        for t in self.tasks.iter().filter(|t| run.contains(t.as_str())) {
            out.push_str(&format!("| {t} |"));
            for i in 0..self.conditions.len() {
                out.push_str(&format!(" {} |", self.symbol(i, t)));
            }
            out.push('\n');
        }
        out.push_str("| **Average** |");
        for i in 0..self.conditions.len() {
            out.push_str(&format!(" **{}** |", self.condition_average(i).percent()));
        }
        out.push_str("\n\n");
    }
}

/// Transcript and simulator trace behind one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellArtifacts {
    pub condition: usize,
    pub task: String,
    pub transcript: Option<Transcript>,
    pub trace: Vec<StepOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub artifacts: Vec<CellArtifacts>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Directory holding `<label>.json` transcripts for fixture planners.
    pub fixtures_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("task {task} under condition {condition}: {error}")]
    Transport {
        condition: usize,
        task: String,
        error: TransportError,
    },
}

enum Planner {
    Oracle,
    Model {
        transport: Box<dyn ChatTransport>,
        settings: ModelSettings,
    },
}

fn instantiate(cond: &Condition, options: &SuiteOptions) -> Result<Planner, EvalError> {
    match &cond.planner {
        PlannerSpec::Oracle => Ok(Planner::Oracle),
        PlannerSpec::Fixture(label) => {
            let dir = options
                .fixtures_dir
                .as_ref()
                .ok_or_else(|| EvalError::Config(format!("planner fixture {label:?} needs a fixtures directory")))?;
            let path = dir.join(format!("{label}.json"));
            let transport = ReplayTransport::from_file(&path).map_err(|e| EvalError::Config(e.to_string()))?;
            Ok(Planner::Model {
                transport: Box::new(transport),
                settings: ModelSettings {
                    model: label.clone(),
                    temperature: 0.0,
                },
            })
        }
        PlannerSpec::Live(config) => {
            let transport = HttpTransport::new(config).map_err(|e| EvalError::Config(e.to_string()))?;
            Ok(Planner::Model {
                transport: Box::new(transport),
                settings: ModelSettings {
                    model: config.model.clone(),
                    temperature: config.temperature,
                },
            })
        }
    }
}

/// Request the evaluation sends for a model planner on one cell. Recording
/// tools use this to produce fixtures that replay byte-exactly.
pub fn cell_prompt(
    truth: &SentMap,
    variant: MapVariant,
    task: &TaskSpec,
    form: QueryForm,
    api: &SkillApi,
) -> Option<crate::planning::PlannerPrompt> {
    let query = match form {
        QueryForm::Direct => Some(task.query_direct.as_str()),
        QueryForm::Indirect => task.query_indirect.as_deref(),
    }?;
    assemble_prompt(&variant.derive(truth), api, query).ok()
}

struct Scored {
    outcome: Outcome,
    detail: Option<String>,
    trace: Vec<StepOutcome>,
}

/// Executes `plan` on the full map and checks the goal.
fn score(truth: &SentMap, task: &TaskSpec, plan: &Plan, api: &SkillApi) -> Scored {
    let result = match sim::verify_plan(truth, task.start.as_str(), plan, api) {
        Ok(r) => r,
        Err(e) => {
            return Scored {
                outcome: Outcome::Failure,
                detail: Some(e.to_string()),
                trace: Vec::new(),
            }
        }
    };
    let (outcome, detail) = match result.error() {
        Some((i, e)) => (Outcome::Failure, Some(format!("step {i} ({}): {e}", plan.steps[i]))),
        None => match sim::check_goal(&result.final_state, &task.goal, truth) {
            Ok(true) => (Outcome::Success, None),
            Ok(false) => (
                Outcome::Failure,
                Some(format!("plan executed but goal not reached ({})", task.goal)),
            ),
            Err(e) => (Outcome::Failure, Some(e.to_string())),
        },
    };
    Scored {
        outcome,
        detail,
        trace: result.trace,
    }
}

struct CellRun {
    result: CellResult,
    artifacts: CellArtifacts,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    truth: &SentMap,
    variants: &[(MapVariant, SentMap)],
    ci: usize,
    cond: &Condition,
    planner: &Planner,
    task: &TaskSpec,
    api: &SkillApi,
) -> Result<CellRun, EvalError> {
    let seen = &variants
        .iter()
        .find(|(v, _)| *v == cond.map_variant)
        .expect("variant prepared")
        .1;
    let query = match cond.query_form {
        QueryForm::Direct => Some(&task.query_direct),
        QueryForm::Indirect => task.query_indirect.as_ref(),
    };
    let mut cell = CellResult {
        condition: ci,
        task: task.name.clone(),
        outcome: Outcome::NotApplicable,
        detail: None,
        plan: None,
    };
    let mut artifacts = CellArtifacts {
        condition: ci,
        task: task.name.clone(),
        transcript: None,
        trace: Vec::new(),
    };
    let plan = match (planner, query) {
        (_, None) => {
            cell.detail = Some("task has no indirect phrasing".into());
            None
        }
        (Planner::Oracle, Some(_)) if cond.query_form == QueryForm::Indirect => {
            cell.detail = Some("the oracle planner takes explicit goals only".into());
            None
        }
        (Planner::Oracle, Some(_)) => match oracle_plan(seen, &task.goal, task.start.as_str(), api) {
            Ok(plan) => Some(plan),
            Err(e) => {
                cell.outcome = Outcome::Failure;
                cell.detail = Some(e.to_string());
                None
            }
        },
        (Planner::Model { transport, settings }, Some(query)) => {
            let prompt = assemble_prompt(seen, api, query).map_err(|e| EvalError::Config(e.to_string()))?;
            let verifier = SimVerifier {
                map: truth,
                start: task.start.clone(),
                api: api.clone(),
            };
            match plan_with_endpoint(
                &prompt,
                transport.as_ref(),
                settings,
                api,
                &verifier,
                cond.repair_budget,
            ) {
                Ok(out) => {
                    artifacts.transcript = Some(out.transcript);
                    Some(out.plan)
                }
                Err(EndpointPlanError::Transport { error, .. }) => {
                    return Err(EvalError::Transport {
                        condition: ci,
                        task: task.name.clone(),
                        error,
                    })
                }
                Err(e) => {
                    cell.outcome = match e {
                        EndpointPlanError::ModelRefusal { .. } => Outcome::Refusal,
                        _ => Outcome::Failure,
                    };
                    cell.detail = Some(e.to_string());
                    artifacts.transcript = Some(e.transcript().clone());
                    None
                }
            }
        }
    };
    if let Some(plan) = plan {
        let scored = score(truth, task, &plan, api);
        cell.outcome = scored.outcome;
        cell.detail = scored.detail;
        cell.plan = Some(plan);
        artifacts.trace = scored.trace;
    }
    Ok(CellRun {
        result: cell,
        artifacts,
    })
}

/// Runs every (condition, task) cell. Cells run in parallel; results are
/// ordered by condition, then by task order, regardless of scheduling.
pub fn run_suite(
    tasks: &[TaskSpec],
    conditions: &[Condition],
    truth: &SentMap,
    options: &SuiteOptions,
) -> Result<EvalRun, EvalError> {
    if conditions.is_empty() {
        return Err(EvalError::Config("no conditions given".into()));
    }
    if tasks.is_empty() {
        return Err(EvalError::Config("no tasks given".into()));
    }
    let api = default_skill_api();
    for t in tasks {
        let state = sim::initial_state(truth, t.start.as_str())
            .map_err(|e| EvalError::Config(format!("task {}: {e}", t.name)))?;
        sim::check_goal(&state, &t.goal, truth).map_err(|e| EvalError::Config(format!("task {}: {e}", t.name)))?;
    }
    let planners = conditions
        .iter()
        .map(|c| instantiate(c, options))
        .collect::<Result<Vec<_>, _>>()?;
    let variant_set: BTreeSet<MapVariant> = conditions.iter().map(|c| c.map_variant).collect();
    let variants: Vec<(MapVariant, SentMap)> = variant_set.into_iter().map(|v| (v, v.derive(truth))).collect();
    let jobs: Vec<(usize, &TaskSpec)> = conditions
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| tasks.iter().filter(|t| c.includes(&t.name)).map(move |t| (ci, t)))
        .collect();
    let runs: Vec<CellRun> = jobs
        .par_iter()
        .map(|&(ci, task)| run_cell(truth, &variants, ci, &conditions[ci], &planners[ci], task, &api))
        .collect::<Result<Vec<_>, _>>()?;
    let (cells, artifacts) = runs.into_iter().map(|r| (r.result, r.artifacts)).unzip();
    Ok(EvalRun {
        report: EvalReport {
            tasks: tasks.iter().map(|t| t.name.clone()).collect(),
            conditions: conditions
                .iter()
                .map(|c| ConditionInfo {
                    planner: c.planner_label(),
                    map_variant: c.map_variant,
                    query_form: c.query_form,
                })
                .collect(),
            cells,
        },
        artifacts,
    })
}
