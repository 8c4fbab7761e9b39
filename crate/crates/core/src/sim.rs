//! Discrete world model and skill semantics. Plans are executed step by
//! step against a world derived from a map; any step the map does not
//! license is rejected with a typed error and leaves the world untouched.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{AffordanceTag, EntityState, NodeId, ObjectItem, SentMap};
use crate::planning::{GoalSpec, ParamKind, Plan, PlanVerifier, SkillApi, SkillCall};

/// An entity addressed as `entity@node`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityRef {
    pub node: NodeId,
    pub entity: String,
}

impl EntityRef {
    pub fn new(node: NodeId, entity: impl Into<String>) -> Self {
        EntityRef {
            node,
            entity: entity.into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (entity, node) = s.rsplit_once('@')?;
        if entity.is_empty() {
            return None;
        }
        Some(EntityRef::new(NodeId::new(node).ok()?, entity))
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.entity, self.node)
    }
}

impl TryFrom<String> for EntityRef {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        EntityRef::parse(&s).ok_or_else(|| format!("bad entity reference {s:?}"))
    }
}

impl From<EntityRef> for String {
    fn from(r: EntityRef) -> String {
        r.to_string()
    }
}

/// Identity of an object: where the map first put it and its name there.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectKey {
    pub node: NodeId,
    pub entity: String,
    pub name: String,
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}@{}", self.name, self.entity, self.node)
    }
}

impl TryFrom<String> for ObjectKey {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        let mut parts = s.rsplitn(3, '@');
        let (Some(node), Some(entity), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!("bad object key {s:?}"));
        };
        Ok(ObjectKey {
            node: NodeId::new(node).map_err(|e| e.to_string())?,
            entity: entity.to_string(),
            name: name.to_string(),
        })
    }
}

impl From<ObjectKey> for String {
    fn from(k: ObjectKey) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Placement {
    At { node: NodeId, entity: String },
    Held,
    GivenTo { person: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot_at: NodeId,
    /// Always equal to the objects whose placement is `Held`.
    pub holding: Vec<ObjectKey>,
    pub entity_states: BTreeMap<EntityRef, EntityState>,
    pub objects: BTreeMap<ObjectKey, Placement>,
}

impl WorldState {
    pub fn placement(&self, key: &ObjectKey) -> Option<&Placement> {
        self.objects.get(key)
    }

    pub fn entity_state(&self, r: &EntityRef) -> Option<EntityState> {
        self.entity_states.get(r).copied()
    }

    fn is_closed(&self, node: &NodeId, entity: &str) -> bool {
        self.entity_states.get(&EntityRef::new(node.clone(), entity)) == Some(&EntityState::Closed)
    }

    /// Holding list matches the held placements and respects capacity.
    pub fn is_consistent(&self, capacity: u32) -> bool {
        let held: Vec<&ObjectKey> = self
            .objects
            .iter()
            .filter(|(_, p)| **p == Placement::Held)
            .map(|(k, _)| k)
            .collect();
        let mut holding: Vec<&ObjectKey> = self.holding.iter().collect();
        holding.sort();
        holding == held && held.len() <= capacity as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepErrorKind {
    UnknownSkill,
    BadArity,
    UnknownNode,
    UnknownObject,
    UnknownEntity,
    UnknownPerson,
    NotAdjacentPath,
    EntityNotHere,
    ObjectNotHere,
    ContainerClosed,
    GripperOccupied,
    GripperEmpty,
    NoAffordance,
    PersonNotHere,
}

impl StepErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepErrorKind::UnknownSkill => "unknown-skill",
            StepErrorKind::BadArity => "bad-arity",
            StepErrorKind::UnknownNode => "unknown-node",
            StepErrorKind::UnknownObject => "unknown-object",
            StepErrorKind::UnknownEntity => "unknown-entity",
            StepErrorKind::UnknownPerson => "unknown-person",
            StepErrorKind::NotAdjacentPath => "not-adjacent-path",
            StepErrorKind::EntityNotHere => "entity-not-here",
            StepErrorKind::ObjectNotHere => "object-not-here",
            StepErrorKind::ContainerClosed => "container-closed",
            StepErrorKind::GripperOccupied => "gripper-occupied",
            StepErrorKind::GripperEmpty => "gripper-empty",
            StepErrorKind::NoAffordance => "no-affordance",
            StepErrorKind::PersonNotHere => "person-not-here",
        }
    }

    /// The kinds that mean "this identifier is not in the map".
    pub fn is_unknown(self) -> bool {
        matches!(
            self,
            StepErrorKind::UnknownSkill
                | StepErrorKind::UnknownNode
                | StepErrorKind::UnknownObject
                | StepErrorKind::UnknownEntity
                | StepErrorKind::UnknownPerson
        )
    }
}

impl fmt::Display for StepErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{kind}: {detail}")]
pub struct StepError {
    pub kind: StepErrorKind,
    pub detail: String,
}

fn fail<T>(kind: StepErrorKind, detail: impl Into<String>) -> Result<T, StepError> {
    Err(StepError {
        kind,
        detail: detail.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub call: SkillCall,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepError>,
    /// Expanded route for a successful goto.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<NodeId>>,
    pub state_after: WorldState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Ok,
    Rejected { index: usize, error: StepError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub verdict: Verdict,
    pub final_state: WorldState,
    pub trace: Vec<StepOutcome>,
}

impl VerifyResult {
    pub fn is_ok(&self) -> bool {
        self.verdict == Verdict::Ok
    }

    pub fn error(&self) -> Option<(usize, &StepError)> {
        match &self.verdict {
            Verdict::Ok => None,
            Verdict::Rejected { index, error } => Some((*index, error)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("goal cannot be resolved: {0}")]
    UnresolvableGoal(String),
}

/// Robot at `start`, gripper empty, entity states and object placements
/// copied from the map.
pub fn initial_state(map: &SentMap, start: &str) -> Result<WorldState, SimError> {
    let robot_at = map
        .node_ids()
        .find(|id| id.as_str() == start)
        .cloned()
        .ok_or_else(|| SimError::UnknownNode(start.to_string()))?;
    let mut entity_states = BTreeMap::new();
    for node in map.semantic_nodes() {
        for e in &node.semantic.as_ref().expect("semantic node").entities {
            if let Some(s) = e.state {
                entity_states.insert(EntityRef::new(node.id.clone(), &e.name), s);
            }
        }
    }
    let objects = map
        .objects()
        .map(|h| {
            (
                ObjectKey {
                    node: h.node.clone(),
                    entity: h.entity.name.clone(),
                    name: h.object.name.clone(),
                },
                Placement::At {
                    node: h.node.clone(),
                    entity: h.entity.name.clone(),
                },
            )
        })
        .collect();
    Ok(WorldState {
        robot_at,
        holding: Vec::new(),
        entity_states,
        objects,
    })
}

fn text_eq(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

fn map_object<'m>(map: &'m SentMap, key: &ObjectKey) -> Option<&'m ObjectItem> {
    map.entity(key.node.as_str(), &key.entity)?.object(&key.name)
}

/// Object arguments match by name first, then by category.
fn arg_matches_any(map: &SentMap, arg: &str) -> bool {
    map.objects()
        .any(|h| text_eq(&h.object.name, arg) || text_eq(&h.object.category, arg))
}

fn pick_by_arg<'a>(
    map: &SentMap,
    keys: impl Iterator<Item = &'a ObjectKey> + Clone,
    arg: &str,
) -> Option<&'a ObjectKey> {
    keys.clone().find(|k| text_eq(&k.name, arg)).or_else(|| {
        keys.into_iter()
            .find(|k| map_object(map, k).is_some_and(|o| text_eq(&o.category, arg)))
    })
}

fn person_known(map: &SentMap, name: &str) -> bool {
    map.people().iter().any(|p| text_eq(&p.name, name))
}

/// Checks that the skill exists, the arity matches, and every argument
/// names something in the map. Among several failures the one whose kind
/// comes first wins.
pub fn ground_call(map: &SentMap, call: &SkillCall, api: &SkillApi) -> Result<(), StepError> {
    let Some(spec) = api.skill(&call.skill) else {
        return fail(StepErrorKind::UnknownSkill, format!("no skill named {:?}", call.skill));
    };
    if spec.arity() != call.args.len() {
        return fail(
            StepErrorKind::BadArity,
            format!(
                "{} takes {} argument(s), got {}",
                spec.name,
                spec.arity(),
                call.args.len()
            ),
        );
    }
    let mut problems = Vec::new();
    for ((_, kind), arg) in spec.params.iter().zip(&call.args) {
        match kind {
            ParamKind::Node => {
                if !map.contains(arg) {
                    problems.push((StepErrorKind::UnknownNode, format!("no node {arg:?} in the map")));
                }
            }
            ParamKind::Object => {
                if !arg_matches_any(map, arg) {
                    problems.push((
                        StepErrorKind::UnknownObject,
                        format!("no object named or categorized {arg:?}"),
                    ));
                }
            }
            ParamKind::Person => {
                if !person_known(map, arg) {
                    problems.push((StepErrorKind::UnknownPerson, format!("no person {arg:?} in the map")));
                }
            }
            ParamKind::Entity => match EntityRef::parse(arg) {
                Some(r) if !map.contains(r.node.as_str()) => problems.push((
                    StepErrorKind::UnknownNode,
                    format!("no node {:?} in the map", r.node.as_str()),
                )),
                Some(r) if map.entity(r.node.as_str(), &r.entity).is_none() => problems.push((
                    StepErrorKind::UnknownEntity,
                    format!("no entity {:?} at node {}", r.entity, r.node),
                )),
                Some(_) => {}
                // Bare entity names are resolved against the current node later;
                // here they only need to exist somewhere.
                None => {
                    let exists = map.semantic_nodes().any(|n| {
                        n.semantic
                            .as_ref()
                            .is_some_and(|p| p.entities.iter().any(|e| e.name == *arg))
                    });
                    if !exists {
                        problems.push((StepErrorKind::UnknownEntity, format!("no entity {arg:?} in the map")));
                    }
                }
            },
        }
    }
    match problems.into_iter().min_by_key(|(k, _)| *k) {
        Some((kind, detail)) => fail(kind, detail),
        None => Ok(()),
    }
}

fn resolve_entity(state: &WorldState, arg: &str) -> EntityRef {
    EntityRef::parse(arg).unwrap_or_else(|| EntityRef::new(state.robot_at.clone(), arg))
}

fn apply(
    map: &SentMap,
    state: &WorldState,
    call: &SkillCall,
    api: &SkillApi,
) -> Result<(WorldState, Option<Vec<NodeId>>), StepError> {
    use StepErrorKind::*;
    ground_call(map, call, api)?;
    let here = &state.robot_at;
    let mut next = state.clone();
    let a = &call.args;
    match call.skill.as_str() {
        "goto" => {
            let path = map
                .shortest_path(here.as_str(), &a[0])
                .or_else(|_| fail(NotAdjacentPath, format!("no path from {here} to {}", a[0])))?;
            next.robot_at = path.last().expect("path has endpoints").clone();
            return Ok((next, Some(path)));
        }
        "pick" => {
            let local = state.objects.iter().filter_map(|(k, p)| match p {
                Placement::At { node, .. } if node == here => Some(k),
                _ => None,
            });
            let Some(key) = pick_by_arg(map, local, &a[0]) else {
                return fail(ObjectNotHere, format!("no {:?} at {here}", a[0]));
            };
            let Placement::At { node, entity } = &state.objects[key] else {
                unreachable!()
            };
            if state.is_closed(node, entity) {
                return fail(ContainerClosed, format!("{entity}@{node} is closed"));
            }
            if state.holding.len() >= api.constraints.gripper_capacity as usize {
                return fail(GripperOccupied, format!("already holding {}", state.holding[0].name));
            }
            let e = map.entity(node.as_str(), entity).expect("placement entity exists");
            if !e.affords(AffordanceTag::SupportsPick) {
                return fail(NoAffordance, format!("{entity}@{node} does not support picking"));
            }
            next.objects.insert(key.clone(), Placement::Held);
            next.holding.push(key.clone());
        }
        "place" => {
            let target = resolve_entity(state, &a[1]);
            let Some(e) = map.entity(target.node.as_str(), &target.entity) else {
                return fail(UnknownEntity, format!("no entity {:?} at {here}", target.entity));
            };
            if &target.node != here {
                return fail(EntityNotHere, format!("{target} is not at {here}"));
            }
            let held = pick_by_arg(map, state.holding.iter(), &a[0]);
            if held.is_none() && !state.holding.is_empty() {
                return fail(ObjectNotHere, format!("not holding {:?}", a[0]));
            }
            if state.is_closed(&target.node, &target.entity) {
                return fail(ContainerClosed, format!("{target} is closed"));
            }
            let Some(key) = held else {
                return fail(GripperEmpty, format!("cannot place {:?}: gripper is empty", a[0]));
            };
            if !e.affords(AffordanceTag::SupportsPlace) {
                return fail(NoAffordance, format!("{target} does not support placing"));
            }
            next.objects.insert(
                key.clone(),
                Placement::At {
                    node: target.node.clone(),
                    entity: target.entity.clone(),
                },
            );
            next.holding.retain(|k| k != key);
        }
        "open" | "close" => {
            let target = resolve_entity(state, &a[0]);
            let Some(e) = map.entity(target.node.as_str(), &target.entity) else {
                return fail(UnknownEntity, format!("no entity {:?} at {here}", target.entity));
            };
            if &target.node != here {
                return fail(EntityNotHere, format!("{target} is not at {here}"));
            }
            let (tag, new_state) = if call.skill == "open" {
                (AffordanceTag::Openable, EntityState::Open)
            } else {
                (AffordanceTag::Closable, EntityState::Closed)
            };
            if !e.affords(tag) {
                return fail(NoAffordance, format!("{target} is not {}", tag.as_str()));
            }
            next.entity_states.insert(target, new_state);
        }
        "give" => {
            let held = pick_by_arg(map, state.holding.iter(), &a[0]);
            if held.is_none() && !state.holding.is_empty() {
                return fail(ObjectNotHere, format!("not holding {:?}", a[0]));
            }
            let Some(key) = held else {
                return fail(GripperEmpty, format!("cannot give {:?}: gripper is empty", a[0]));
            };
            let person = map
                .people()
                .iter()
                .find(|p| text_eq(&p.name, &a[1]))
                .expect("grounded person");
            if person.location.as_ref() != Some(here) {
                let location = person
                    .location
                    .as_ref()
                    .map_or("an unknown location".to_string(), |l| l.to_string());
                return fail(
                    PersonNotHere,
                    format!("{} is at {location}, robot is at {here}", person.name),
                );
            }
            next.objects.insert(
                key.clone(),
                Placement::GivenTo {
                    person: person.name.clone(),
                },
            );
            next.holding.retain(|k| k != key);
        }
        other => return fail(UnknownSkill, format!("no semantics for skill {other:?}")),
    }
    Ok((next, None))
}

/// Executes one call. A failed step leaves the state exactly as it was.
pub fn step(map: &SentMap, state: &WorldState, call: &SkillCall, api: &SkillApi) -> StepOutcome {
    match apply(map, state, call, api) {
        Ok((next, path)) => StepOutcome {
            call: call.clone(),
            ok: true,
            error: None,
            path,
            state_after: next,
        },
        Err(e) => StepOutcome {
            call: call.clone(),
            ok: false,
            error: Some(e),
            path: None,
            state_after: state.clone(),
        },
    }
}

/// Grounds every step first, so that any identifier absent from the map is
/// reported as an unknown-* error even if an earlier step would fail, then
/// executes steps in order and stops at the first failure.
pub fn verify_plan(map: &SentMap, start: &str, plan: &Plan, api: &SkillApi) -> Result<VerifyResult, SimError> {
    let initial = initial_state(map, start)?;
    for (index, call) in plan.steps.iter().enumerate() {
        if let Err(error) = ground_call(map, call, api) {
            return Ok(VerifyResult {
                verdict: Verdict::Rejected { index, error },
                final_state: initial,
                trace: Vec::new(),
            });
        }
    }
    let mut state = initial;
    let mut trace = Vec::with_capacity(plan.steps.len());
    for (index, call) in plan.steps.iter().enumerate() {
        let outcome = step(map, &state, call, api);
        state = outcome.state_after.clone();
        let error = outcome.error.clone();
        trace.push(outcome);
        if let Some(error) = error {
            return Ok(VerifyResult {
                verdict: Verdict::Rejected { index, error },
                final_state: state,
                trace,
            });
        }
    }
    Ok(VerifyResult {
        verdict: Verdict::Ok,
        final_state: state,
        trace,
    })
}

/// True iff some object matching the goal's query satisfies it.
pub fn check_goal(state: &WorldState, goal: &GoalSpec, map: &SentMap) -> Result<bool, SimError> {
    if let GoalSpec::EntityState {
        node,
        entity,
        state: want,
    } = goal
    {
        if map.entity(node.as_str(), entity).is_none() {
            return Err(SimError::UnresolvableGoal(format!("no entity {entity:?} at {node}")));
        }
        return Ok(state.entity_state(&EntityRef::new(node.clone(), entity)) == Some(*want));
    }
    let query = goal.object().expect("object goal");
    let matching: Vec<&Placement> = state
        .objects
        .iter()
        .filter(|(k, _)| map_object(map, k).is_some_and(|o| query.matches(o)))
        .map(|(_, p)| p)
        .collect();
    if matching.is_empty() {
        return Err(SimError::UnresolvableGoal(format!("no object matches {query}")));
    }
    Ok(match goal {
        GoalSpec::ObjectHeld { .. } => matching.iter().any(|p| **p == Placement::Held),
        GoalSpec::ObjectAtNode { node: want, .. } => {
            if !map.contains(want.as_str()) {
                return Err(SimError::UnresolvableGoal(format!("unknown node {want}")));
            }
            matching
                .iter()
                .any(|p| matches!(p, Placement::At { node, .. } if node == want))
        }
        GoalSpec::ObjectGiven { person: want, .. } => {
            if !person_known(map, want) {
                return Err(SimError::UnresolvableGoal(format!("unknown person {want}")));
            }
            matching
                .iter()
                .any(|p| matches!(p, Placement::GivenTo { person } if text_eq(person, want)))
        }
        GoalSpec::EntityState { .. } => unreachable!(),
    })
}

/// One JSON object per line, with the step index added.
pub fn trace_to_jsonl(trace: &[StepOutcome]) -> String {
    let mut out = String::new();
    for (index, outcome) in trace.iter().enumerate() {
        let mut v = serde_json::to_value(outcome).expect("outcome serializes");
        v.as_object_mut()
            .expect("outcome is an object")
            .insert("index".into(), index.into());
        out.push_str(&serde_json::to_string(&crate::map_io::sort_keys(&v)).expect("value serializes"));
        out.push('\n');
    }
    out
}

/// Plan verifier backed by the simulator, for the model repair loop.
#[derive(Debug, Clone)]
pub struct SimVerifier<'m> {
    pub map: &'m SentMap,
    pub start: NodeId,
    pub api: SkillApi,
}

impl PlanVerifier for SimVerifier<'_> {
    fn verify(&self, plan: &Plan) -> Result<(), String> {
        let result = verify_plan(self.map, self.start.as_str(), plan, &self.api).map_err(|e| e.to_string())?;
        match result.error() {
            None => Ok(()),
            Some((index, error)) => Err(format!("step {index} ({}) failed: {error}", plan.steps[index])),
        }
    }
}
