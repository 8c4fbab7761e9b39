//! Regenerates the scripted planner transcripts under `fixtures/transcripts`
//! and the golden reports under `fixtures/golden`.
//!
//! Each scripted planner answers every evaluation request with a fixed
//! behavior per cell: the correct plan, a plausible wrong guess, or a
//! refusal. Requests are built exactly as the evaluation builds them, so the
//! transcripts replay byte-for-byte.
//!
//!     cargo run -p sentmap-core --example record_fixtures

use std::path::{Path, PathBuf};

use sentmap_core::endpoint::{ChatMessage, ChatRequest, Transcript, TranscriptEntry};
use sentmap_core::eval::{
    cell_prompt, reference_environment, run_suite, tasks_table1, tasks_table2, Condition, MapVariant, ReportFormat,
    SuiteOptions, TaskSpec,
};
use sentmap_core::planning::{default_skill_api, oracle_plan, resolve_target, GoalSpec, Plan, SkillCall};
use sentmap_core::{ObjectQuery, SentMap};

#[derive(Clone, Copy)]
enum Act {
    Solve,
    Guess,
    Refuse,
}

use Act::*;

/// Baseline behavior per task for each retrieval-suite planner; every planner
/// solves all three tasks on the enhanced map.
const TABLE1: [(&str, [Act; 3]); 6] = [
    ("scripted-a", [Solve, Guess, Solve]),
    ("scripted-b", [Refuse, Refuse, Refuse]),
    ("scripted-c", [Guess, Guess, Solve]),
    ("scripted-d", [Guess, Guess, Solve]),
    ("scripted-e", [Guess, Guess, Solve]),
    ("scripted-f", [Solve, Solve, Guess]),
];

/// (task, [first-variant direct, first-variant indirect, second direct,
/// second indirect]) for the single ownership-suite planner. The first six tasks
/// compare baseline with enhanced, the ownership tasks compare enhanced with
/// enhanced+ownership.
const TABLE2: [(&str, [Act; 4]); 9] = [
    ("Watch TV", [Guess, Guess, Solve, Solve]),
    ("Runny Nose", [Solve, Guess, Solve, Solve]),
    ("Private listening", [Guess, Guess, Solve, Solve]),
    ("Sanitization", [Guess, Guess, Solve, Solve]),
    ("Call a friend", [Guess, Guess, Solve, Solve]),
    ("Flavor Coffee", [Solve, Guess, Solve, Solve]),
    ("Store Bob's leftovers", [Solve, Solve, Solve, Solve]),
    ("Get Bob his drink", [Solve, Guess, Solve, Solve]),
    ("Bob's things to Alice", [Solve, Guess, Solve, Solve]),
];

fn solve(truth: &SentMap, task: &TaskSpec) -> Plan {
    let mut plan = oracle_plan(truth, &task.goal, task.start.as_str(), &default_skill_api()).expect("task solvable");
    plan.rationale = Some("Here is the plan.".into());
    plan
}

/// A confident but wrong plan: another object of the same category when one
/// exists, otherwise the right category at the wrong table.
fn guess(truth: &SentMap, task: &TaskSpec) -> Plan {
    let query = task.goal.object().expect("object goal");
    let target = resolve_target(truth, query).expect("target resolves");
    let category = truth
        .entity(target.node.as_str(), &target.entity)
        .and_then(|e| e.object(&target.name))
        .map(|o| o.category.clone())
        .expect("target exists");
    let decoy = truth
        .find_object(&ObjectQuery::category(&category))
        .into_iter()
        .find(|h| h.object.name != target.name);
    if let Some(decoy) = decoy {
        let mut goal = task.goal.clone();
        let q = ObjectQuery::name(&decoy.object.name);
        match &mut goal {
            GoalSpec::ObjectHeld { object }
            | GoalSpec::ObjectAtNode { object, .. }
            | GoalSpec::ObjectGiven { object, .. } => *object = q,
            GoalSpec::EntityState { .. } => unreachable!(),
        }
        let mut plan = oracle_plan(truth, &goal, task.start.as_str(), &default_skill_api()).expect("decoy solvable");
        plan.rationale = Some(format!("The {} is probably the one meant.", decoy.object.name));
        return plan;
    }
    let wrong = truth
        .semantic_nodes()
        .find(|n| {
            n.id != target.node
                && n.semantic
                    .as_ref()
                    .is_some_and(|p| p.entities.iter().any(|e| e.kind == "table"))
        })
        .expect("another table exists");
    Plan {
        steps: vec![
            SkillCall::new("goto", [wrong.id.as_str()]),
            SkillCall::new("pick", [category.as_str()]),
        ],
        rationale: Some(format!("A {category} is most likely on the table at {}.", wrong.id)),
    }
}

const REFUSAL: &str = "REFUSE: the scene only lists locations, not what is at them. \
I need more context to decide where to go.";

fn reply(act: Act, truth: &SentMap, task: &TaskSpec) -> String {
    match act {
        Solve => solve(truth, task).render(),
        Guess => guess(truth, task).render(),
        Refuse => REFUSAL.to_string(),
    }
}

fn record(
    transcript: &mut Transcript,
    label: &str,
    truth: &SentMap,
    variant: MapVariant,
    task: &TaskSpec,
    form: sentmap_core::eval::QueryForm,
    act: Act,
) {
    let prompt = cell_prompt(truth, variant, task, form, &default_skill_api()).expect("prompt for cell");
    let request = ChatRequest {
        model: label.to_string(),
        temperature: 0.0,
        messages: vec![ChatMessage::user(prompt.render())],
    };
    transcript.push(TranscriptEntry::new(request, reply(act, truth, task)));
}

fn write(path: &Path, text: &str) {
    std::fs::create_dir_all(path.parent().expect("has parent")).expect("create dir");
    std::fs::write(path, text).expect("write file");
    println!("wrote {}", path.display());
}

fn golden(fixtures: &Path, truth: &SentMap, tasks: &[TaskSpec], conditions: &str, out: &str) {
    let text = std::fs::read_to_string(fixtures.join("conditions").join(conditions)).expect("conditions file");
    let conds: Vec<Condition> = serde_json::from_str(&text).expect("conditions parse");
    let options = SuiteOptions {
        fixtures_dir: Some(fixtures.join("transcripts")),
    };
    let run = run_suite(tasks, &conds, truth, &options).expect("suite runs");
    write(
        &fixtures.join("golden").join(out),
        &run.report.render(ReportFormat::Markdown),
    );
}

fn main() {
    let fixtures: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    use sentmap_core::eval::QueryForm::{Direct, Indirect};
    let truth = reference_environment();

    let t1 = tasks_table1();
    for (label, baseline) in TABLE1 {
        let mut transcript = Transcript::default();
        for (task, act) in t1.iter().zip(baseline) {
            record(&mut transcript, label, &truth, MapVariant::Baseline, task, Direct, act);
            record(
                &mut transcript,
                label,
                &truth,
                MapVariant::Enhanced,
                task,
                Direct,
                Solve,
            );
        }
        write(
            &fixtures.join("transcripts").join(format!("{label}.json")),
            &transcript.to_json(),
        );
    }

    let t2 = tasks_table2();
    let mut transcript = Transcript::default();
    for (name, acts) in TABLE2 {
        let task = t2.iter().find(|t| t.name == name).expect("task in suite");
        let ownership = matches!(task.goal, GoalSpec::ObjectAtNode { .. } | GoalSpec::ObjectGiven { .. });
        let (first, second) = if ownership {
            (MapVariant::Enhanced, MapVariant::EnhancedOwnership)
        } else {
            (MapVariant::Baseline, MapVariant::Enhanced)
        };
        let cells = [(first, Direct), (first, Indirect), (second, Direct), (second, Indirect)];
        for ((variant, form), act) in cells.into_iter().zip(acts) {
            record(&mut transcript, "scripted-g", &truth, variant, task, form, act);
        }
    }
    write(
        &fixtures.join("transcripts").join("scripted-g.json"),
        &transcript.to_json(),
    );

    golden(&fixtures, &truth, &t1, "table1_fixtures.json", "table1.md");
    golden(&fixtures, &truth, &t2, "table2_fixtures.json", "table2.md");
}
