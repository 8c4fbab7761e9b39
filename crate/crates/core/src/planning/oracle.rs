//! Deterministic symbolic planner used as ground truth. It never guesses:
//! a query with several plausible targets is reported as ambiguous.

use thiserror::Error;

use super::api::{Plan, SkillApi, SkillCall};
use super::goal::GoalSpec;
use crate::map::{AffordanceTag, EntityState, NodeId, ObjectQuery, SentMap};
use crate::sim::{self, EntityRef, ObjectKey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("ambiguous target: {} candidates ({})", .0.len(), .0.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", "))]
    AmbiguousTarget(Vec<ObjectKey>),
    #[error("no object matches {0}")]
    TargetNotFound(String),
    #[error("no path from {0} to {1}")]
    Unreachable(NodeId, NodeId),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown person {0}")]
    UnknownPerson(String),
    #[error("location of {0} is not known")]
    PersonNotLocated(String),
    #[error("nothing at {0} supports placing")]
    NoPlacementSurface(NodeId),
    #[error("{0}")]
    NotActionable(String),
    #[error("generated plan failed its own check: {0}")]
    SelfCheckFailed(String),
}

fn key_of(h: &crate::map::ObjectHit<'_>) -> ObjectKey {
    ObjectKey {
        node: h.node.clone(),
        entity: h.entity.name.clone(),
        name: h.object.name.clone(),
    }
}

/// Picks the single object a query refers to.
///
/// Without an owner constraint exactly one match is required. With one,
/// exactly one object tagged with that owner is required; when no object
/// carries the tag but untagged candidates exist, ownership cannot be
/// confirmed and the query is ambiguous over all candidates.
pub fn resolve_target(map: &SentMap, query: &ObjectQuery) -> Result<ObjectKey, OracleError> {
    let base: Vec<ObjectKey> = map.find_object(&query.without_owner()).iter().map(key_of).collect();
    let Some(owner) = &query.owner else {
        return match base.len() {
            0 => Err(OracleError::TargetNotFound(query.to_string())),
            1 => Ok(base.into_iter().next().expect("one candidate")),
            _ => Err(OracleError::AmbiguousTarget(base)),
        };
    };
    if base.is_empty() && query.without_owner().is_empty() {
        // Owner-only query.
        let owned: Vec<ObjectKey> = map.find_object(query).iter().map(key_of).collect();
        return match owned.len() {
            0 => Err(OracleError::TargetNotFound(query.to_string())),
            1 => Ok(owned.into_iter().next().expect("one candidate")),
            _ => Err(OracleError::AmbiguousTarget(owned)),
        };
    }
    let owned: Vec<ObjectKey> = map.find_object(query).iter().map(key_of).collect();
    match owned.len() {
        1 => Ok(owned.into_iter().next().expect("one candidate")),
        n if n > 1 => Err(OracleError::AmbiguousTarget(owned)),
        _ => {
            let untagged = map
                .find_object(&query.without_owner())
                .iter()
                .filter(|h| h.object.owner.is_none())
                .count();
            if untagged == 0 {
                Err(OracleError::TargetNotFound(format!(
                    "{query} (no object owned by {owner})"
                )))
            } else {
                Err(OracleError::AmbiguousTarget(base))
            }
        }
    }
}

struct Builder<'m> {
    map: &'m SentMap,
    at: NodeId,
    steps: Vec<SkillCall>,
}

impl Builder<'_> {
    fn goto(&mut self, to: &NodeId) -> Result<(), OracleError> {
        if &self.at == to {
            return Ok(());
        }
        self.map
            .shortest_path(self.at.as_str(), to.as_str())
            .map_err(|_| OracleError::Unreachable(self.at.clone(), to.clone()))?;
        self.steps.push(SkillCall::new("goto", [to.as_str()]));
        self.at = to.clone();
        Ok(())
    }

    fn push(&mut self, skill: &str, args: &[String]) {
        self.steps.push(SkillCall::new(skill, args.iter().cloned()));
    }

    /// Runs `inner` with the entity open, re-closing it afterwards if it was
    /// closed to begin with.
    fn with_open(&mut self, target: &EntityRef, closed: bool, inner: impl FnOnce(&mut Self)) {
        if closed {
            self.push("open", &[target.to_string()]);
        }
        inner(self);
        if closed {
            self.push("close", &[target.to_string()]);
        }
    }

    fn fetch(&mut self, key: &ObjectKey, initial: &sim::WorldState) -> Result<(), OracleError> {
        self.goto(&key.node)?;
        let target = EntityRef::new(key.node.clone(), &key.entity);
        let closed = initial.entity_state(&target) == Some(EntityState::Closed);
        let name = key.name.clone();
        self.with_open(&target, closed, |b| b.push("pick", &[name]));
        Ok(())
    }
}

/// Ground-truth plan for `goal` from `start`. The result is checked in the
/// simulator before it is returned.
pub fn oracle_plan(map: &SentMap, goal: &GoalSpec, start: &str, api: &SkillApi) -> Result<Plan, OracleError> {
    let initial = sim::initial_state(map, start).map_err(|_| OracleError::UnknownNode(start.to_string()))?;
    let target = goal.object().map(|q| resolve_target(map, q)).transpose()?;
    let mut b = Builder {
        map,
        at: initial.robot_at.clone(),
        steps: Vec::new(),
    };
    match goal {
        GoalSpec::ObjectHeld { .. } => {
            b.fetch(target.as_ref().expect("object goal"), &initial)?;
        }
        GoalSpec::ObjectAtNode { node, .. } => {
            let key = target.as_ref().expect("object goal");
            if !map.contains(node.as_str()) {
                return Err(OracleError::UnknownNode(node.to_string()));
            }
            if &key.node != node {
                let surface = map
                    .node(node.as_str())
                    .and_then(|n| n.semantic.as_ref())
                    .and_then(|p| p.entities.iter().find(|e| e.affords(AffordanceTag::SupportsPlace)))
                    .ok_or_else(|| OracleError::NoPlacementSurface(node.clone()))?;
                b.fetch(key, &initial)?;
                b.goto(node)?;
                let dest = EntityRef::new(node.clone(), &surface.name);
                let closed = initial.entity_state(&dest) == Some(EntityState::Closed);
                let args = [key.name.clone(), dest.to_string()];
                b.with_open(&dest, closed, |b| b.push("place", &args));
            }
        }
        GoalSpec::ObjectGiven { person, .. } => {
            let key = target.as_ref().expect("object goal");
            let p = map
                .people()
                .iter()
                .find(|p| p.name.eq_ignore_ascii_case(person))
                .ok_or_else(|| OracleError::UnknownPerson(person.clone()))?;
            let location = p
                .location
                .clone()
                .ok_or_else(|| OracleError::PersonNotLocated(p.name.clone()))?;
            b.fetch(key, &initial)?;
            b.goto(&location)?;
            b.push("give", &[key.name.clone(), p.name.clone()]);
        }
        GoalSpec::EntityState { node, entity, state } => {
            if !map.contains(node.as_str()) {
                return Err(OracleError::UnknownNode(node.to_string()));
            }
            let e = map
                .entity(node.as_str(), entity)
                .ok_or_else(|| OracleError::NotActionable(format!("no entity {entity:?} at {node}")))?;
            let r = EntityRef::new(node.clone(), entity);
            if initial.entity_state(&r) != Some(*state) {
                let (tag, skill) = match state {
                    EntityState::Open => (AffordanceTag::Openable, "open"),
                    EntityState::Closed => (AffordanceTag::Closable, "close"),
                };
                if !e.affords(tag) {
                    return Err(OracleError::NotActionable(format!("{r} is not {}", tag.as_str())));
                }
                b.goto(node)?;
                b.push(skill, &[r.to_string()]);
            }
        }
    }
    let plan = Plan::new(b.steps);
    let result = sim::verify_plan(map, start, &plan, api).map_err(|e| OracleError::SelfCheckFailed(e.to_string()))?;
    if let Some((i, e)) = result.error() {
        return Err(OracleError::SelfCheckFailed(format!("step {i}: {e}")));
    }
    match sim::check_goal(&result.final_state, goal, map) {
        Ok(true) => Ok(plan),
        Ok(false) => Err(OracleError::SelfCheckFailed(format!("goal {goal} not reached"))),
        Err(e) => Err(OracleError::SelfCheckFailed(e.to_string())),
    }
}
