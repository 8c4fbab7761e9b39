//! Plan perturbation and random-step generators for the verifier checks.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use sentmap_core::eval::{reference_environment, tasks_table1, tasks_table2};
use sentmap_core::planning::{default_skill_api, oracle_plan, GoalSpec, Plan, SkillCall};
use sentmap_core::sim::{initial_state, step, verify_plan, StepErrorKind, Verdict};
use sentmap_core::{ObjectQuery, SentMap};

use super::{map_vocabulary, random_map, rng, MapShape, Reference};

/// A solvable (map, start, plan) triple.
pub struct Case {
    pub map: SentMap,
    pub start: String,
    pub plan: Plan,
}

fn random_goal(r: &mut StdRng, map: &SentMap) -> Option<GoalSpec> {
    let objects: Vec<String> = map.objects().map(|h| h.object.name.clone()).collect();
    let object = ObjectQuery::name(objects.choose(r)?);
    let nodes: Vec<_> = map.node_ids().cloned().collect();
    Some(match r.random_range(0..3) {
        0 => GoalSpec::ObjectHeld { object },
        1 => GoalSpec::ObjectAtNode {
            object,
            node: nodes.choose(r).unwrap().clone(),
        },
        _ => GoalSpec::ObjectGiven {
            object,
            person: map.people().choose(r)?.name.clone(),
        },
    })
}

pub fn base_cases(count: usize) -> Vec<Case> {
    let api = default_skill_api();
    let mut cases = Vec::new();
    let truth = reference_environment();
    for task in tasks_table1().into_iter().chain(tasks_table2()) {
        let plan = oracle_plan(&truth, &task.goal, task.start.as_str(), &api).unwrap();
        cases.push(Case {
            map: truth.clone(),
            start: task.start.as_str().to_string(),
            plan,
        });
    }
    let mut r = rng(7);
    while cases.len() < count {
        let map = random_map(&mut r, MapShape::WORLD);
        let Some(goal) = random_goal(&mut r, &map) else {
            continue;
        };
        let start = map
            .node_ids()
            .collect::<Vec<_>>()
            .choose(&mut r)
            .unwrap()
            .as_str()
            .to_string();
        if let Ok(plan) = oracle_plan(&map, &goal, &start, &api) {
            if !plan.is_empty() {
                cases.push(Case { map, start, plan });
            }
        }
    }
    cases
}

#[derive(Debug, Clone, Copy)]
pub enum Perturbation {
    Node,
    Object,
    Skill,
    Entity,
    Person,
    DropOpen,
    Shuffle,
}

pub const ALL: [Perturbation; 7] = [
    Perturbation::Node,
    Perturbation::Object,
    Perturbation::Skill,
    Perturbation::Entity,
    Perturbation::Person,
    Perturbation::DropOpen,
    Perturbation::Shuffle,
];

fn fresh(r: &mut StdRng, vocabulary: &std::collections::BTreeSet<String>, stem: &str) -> String {
    loop {
        let name = format!("{stem}{}", r.random_range(0..1000));
        if !vocabulary.contains(&name.to_lowercase()) {
            return name;
        }
    }
}

/// Applies `p` to a copy of `plan`; returns the edited plan and, for
/// renames, the step index and the error kind the verifier must report.
pub fn perturb(r: &mut StdRng, case: &Case, p: Perturbation) -> Option<(Plan, Option<(usize, StepErrorKind)>)> {
    let vocabulary = map_vocabulary(&case.map);
    let mut plan = case.plan.clone();
    let positions = |pred: &dyn Fn(&SkillCall) -> bool| -> Vec<usize> {
        plan.steps
            .iter()
            .enumerate()
            .filter(|(_, c)| pred(c))
            .map(|(i, _)| i)
            .collect()
    };
    let expect = match p {
        Perturbation::Node => {
            let i = *positions(&|c| c.skill == "goto").choose(r)?;
            plan.steps[i].args[0] = fresh(r, &vocabulary, "pantry");
            Some((i, StepErrorKind::UnknownNode))
        }
        Perturbation::Object => {
            let i = *positions(&|c| matches!(c.skill.as_str(), "pick" | "place" | "give")).choose(r)?;
            plan.steps[i].args[0] = fresh(r, &vocabulary, "gizmo");
            Some((i, StepErrorKind::UnknownObject))
        }
        Perturbation::Skill => {
            let i = r.random_range(0..plan.steps.len());
            plan.steps[i].skill = ["teleport", "grab", "fly", "wave"].choose(r).unwrap().to_string();
            Some((i, StepErrorKind::UnknownSkill))
        }
        Perturbation::Entity => {
            let i = *positions(&|c| matches!(c.skill.as_str(), "place" | "open" | "close")).choose(r)?;
            let slot = plan.steps[i].args.len() - 1;
            let node = plan.steps[i].args[slot].rsplit_once('@').map(|(_, n)| n.to_string());
            let entity = fresh(r, &vocabulary, "cupboard");
            plan.steps[i].args[slot] = match node {
                Some(n) => format!("{entity}@{n}"),
                None => entity,
            };
            Some((i, StepErrorKind::UnknownEntity))
        }
        Perturbation::Person => {
            let i = *positions(&|c| c.skill == "give").choose(r)?;
            plan.steps[i].args[1] = fresh(r, &vocabulary, "Zed");
            Some((i, StepErrorKind::UnknownPerson))
        }
        Perturbation::DropOpen => {
            let i = *positions(&|c| c.skill == "open").choose(r)?;
            plan.steps.remove(i);
            None
        }
        Perturbation::Shuffle => {
            if plan.steps.len() < 2 {
                return None;
            }
            plan.steps.shuffle(r);
            None
        }
    };
    Some((plan, expect))
}

/// A random grounded call: every identifier exists in the map.
pub fn random_call(r: &mut StdRng, map: &SentMap, here: &str) -> SkillCall {
    let nodes: Vec<String> = map.node_ids().map(|n| n.as_str().to_string()).collect();
    let objects: Vec<String> = map.objects().map(|h| h.object.name.clone()).collect();
    let local: Vec<String> = map
        .objects()
        .filter(|h| h.node.as_str() == here)
        .map(|h| h.object.name.clone())
        .collect();
    let entities: Vec<String> = map
        .nodes()
        .flat_map(|n| {
            n.semantic
                .iter()
                .flat_map(|p| p.entities.iter())
                .map(move |e| format!("{}@{}", e.name, n.id))
        })
        .collect();
    let here_entities: Vec<String> = entities
        .iter()
        .filter(|e| e.ends_with(&format!("@{here}")))
        .cloned()
        .collect();
    let people: Vec<String> = map.people().iter().map(|p| p.name.clone()).collect();
    let object = |r: &mut StdRng| {
        if !local.is_empty() && r.random_bool(0.6) {
            local.choose(r).unwrap().clone()
        } else {
            objects.choose(r).unwrap().clone()
        }
    };
    let entity = |r: &mut StdRng| {
        if !here_entities.is_empty() && r.random_bool(0.7) {
            here_entities.choose(r).unwrap().clone()
        } else {
            entities.choose(r).unwrap().clone()
        }
    };
    loop {
        let call = match r.random_range(0..6) {
            0 => SkillCall::new("goto", [nodes.choose(r).unwrap().as_str()]),
            1 if !objects.is_empty() => SkillCall::new("pick", [object(r)]),
            2 if !objects.is_empty() && !entities.is_empty() => SkillCall::new("place", [object(r), entity(r)]),
            3 if !entities.is_empty() => SkillCall::new("open", [entity(r)]),
            4 if !entities.is_empty() => SkillCall::new("close", [entity(r)]),
            5 if !objects.is_empty() && !people.is_empty() => {
                SkillCall::new("give", [object(r), people.choose(r).unwrap().clone()])
            }
            _ => continue,
        };
        return call;
    }
}

#[derive(Debug)]
pub struct FuzzStats {
    pub plans: usize,
    pub rejected: usize,
    pub by_perturbation: BTreeMap<String, usize>,
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Perturbs oracle plans `count` times and checks every verdict against the
/// reference interpreter and the expected error kind.
pub fn soundness(count: usize, seed: u64) -> Result<FuzzStats, String> {
    let api = default_skill_api();
    let cases = base_cases(300);
    let mut r = rng(seed);
    let mut stats = FuzzStats {
        plans: 0,
        rejected: 0,
        by_perturbation: BTreeMap::new(),
    };
    while stats.plans < count {
        let case = cases.choose(&mut r).unwrap();
        let p = *ALL.choose(&mut r).unwrap();
        let Some((plan, expect)) = perturb(&mut r, case, p) else {
            continue;
        };
        stats.plans += 1;
        *stats.by_perturbation.entry(format!("{p:?}")).or_insert(0) += 1;
        let result = verify_plan(&case.map, &case.start, &plan, &api).map_err(|e| e.to_string())?;
        let reference = Reference::accepts(&case.map, &case.start, &plan);
        ensure!(
            result.is_ok() == reference,
            "{p:?}: verifier {:?}, reference accepts={reference}, plan {plan:?}",
            result.verdict
        );
        if !result.is_ok() {
            stats.rejected += 1;
        }
        match (expect, &result.verdict) {
            (Some((index, kind)), Verdict::Rejected { index: at, error }) => {
                ensure!(
                    (*at, error.kind) == (index, kind),
                    "{p:?}: expected {kind} at {index}, got {error} at {at}"
                );
                ensure!(result.trace.is_empty(), "{p:?}: unknown identifier executed steps");
            }
            (Some(_), Verdict::Ok) => return Err(format!("{p:?} accepted: {plan:?}")),
            (None, Verdict::Rejected { error, .. }) => {
                ensure!(
                    !error.kind.is_unknown(),
                    "{p:?} only reorders known steps but got {error}"
                );
                if matches!(p, Perturbation::DropOpen) {
                    ensure!(
                        error.kind == StepErrorKind::ContainerClosed,
                        "dropped open gave {error}"
                    );
                }
            }
            (None, Verdict::Ok) => ensure!(!matches!(p, Perturbation::DropOpen), "dropped open accepted: {plan:?}"),
        }
    }
    Ok(stats)
}

#[derive(Debug)]
pub struct StepStats {
    pub steps: usize,
    pub failures: usize,
}

/// Runs `count` random grounded steps over random worlds, checking object
/// conservation, the gripper bound and that failed steps change nothing.
pub fn conservation(count: usize, seed: u64) -> Result<StepStats, String> {
    let api = default_skill_api();
    let mut r = rng(seed);
    let mut stats = StepStats { steps: 0, failures: 0 };
    while stats.steps < count {
        let map = random_map(&mut r, MapShape::WORLD);
        if map.object_count() == 0 {
            continue;
        }
        let start = map.node_ids().next().unwrap().as_str().to_string();
        let mut state = initial_state(&map, &start).map_err(|e| e.to_string())?;
        let keys: Vec<_> = state.objects.keys().cloned().collect();
        let mut reference = Reference::new(&map, &start);
        for _ in 0..100 {
            let call = random_call(&mut r, &map, state.robot_at.as_str());
            let outcome = step(&map, &state, &call, &api);
            stats.steps += 1;
            ensure!(
                outcome.ok == reference.step(&call),
                "{call}: verifier ok={}, {:?}",
                outcome.ok,
                outcome.error
            );
            if !outcome.ok {
                stats.failures += 1;
                ensure!(outcome.state_after == state, "failed {call} changed the state");
            }
            state = outcome.state_after;
            ensure!(state.objects.keys().eq(keys.iter()), "object set changed after {call}");
            ensure!(
                state.is_consistent(api.constraints.gripper_capacity),
                "gripper inconsistent after {call}"
            );
        }
    }
    Ok(stats)
}
