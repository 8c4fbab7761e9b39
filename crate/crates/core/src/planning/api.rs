//! The closed skill API a plan may use, and the plan wire form.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Node,
    Object,
    Entity,
    Person,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [ParamKind::Node, ParamKind::Object, ParamKind::Entity, ParamKind::Person];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Node => "node",
            ParamKind::Object => "object",
            ParamKind::Entity => "entity",
            ParamKind::Person => "person",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillSpec {
    pub name: String,
    pub params: Vec<(String, ParamKind)>,
    pub description: String,
    pub preconditions: String,
}

const PRE_MARK: &str = " Requires: ";

impl SkillSpec {
    pub fn new(name: &str, params: &[(&str, ParamKind)], description: &str, preconditions: &str) -> Self {
        SkillSpec {
            name: name.to_string(),
            params: params.iter().map(|(p, k)| (p.to_string(), *k)).collect(),
            description: description.to_string(),
            preconditions: preconditions.to_string(),
        }
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    /// One-line rendering, e.g. `goto(node: node) - Drive to ... Requires: ...`.
    pub fn render(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|(p, k)| format!("{p}: {}", k.as_str()))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "{}({params}) - {}{PRE_MARK}{}",
            self.name, self.description, self.preconditions
        )
    }

    /// Inverse of [`SkillSpec::render`].
    pub fn parse_line(line: &str) -> Option<SkillSpec> {
        let (name, rest) = line.split_once('(')?;
        let (params, rest) = rest.split_once(") - ")?;
        let (description, preconditions) = rest.rsplit_once(PRE_MARK)?;
        let params = if params.trim().is_empty() {
            Vec::new()
        } else {
            params
                .split(", ")
                .map(|p| {
                    let (n, k) = p.split_once(": ")?;
                    Some((n.to_string(), ParamKind::parse(k)?))
                })
                .collect::<Option<Vec<_>>>()?
        };
        Some(SkillSpec {
            name: name.to_string(),
            params,
            description: description.to_string(),
            preconditions: preconditions.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotConstraints {
    pub arm_count: u32,
    pub gripper_capacity: u32,
}

impl Default for RobotConstraints {
    fn default() -> Self {
        RobotConstraints {
            arm_count: 1,
            gripper_capacity: 1,
        }
    }
}

impl RobotConstraints {
    pub fn render(&self) -> String {
        let arms = if self.arm_count == 1 {
            "a single arm".to_string()
        } else {
            format!("{} arms", self.arm_count)
        };
        let items = if self.gripper_capacity == 1 {
            "one item".to_string()
        } else {
            format!("{} items", self.gripper_capacity)
        };
        format!(
            "- The robot has {arms} and can hold at most {items} at a time.\n\
             - Closed entities must be opened before anything inside them can be picked or placed.\n\
             - Only entities listing the matching affordance can be opened, closed, picked from or placed on.\n\
             - People stay where the scene says they are."
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillApi {
    pub skills: Vec<SkillSpec>,
    pub constraints: RobotConstraints,
}

impl SkillApi {
    pub fn skill(&self, name: &str) -> Option<&SkillSpec> {
        self.skills.iter().find(|s| s.name == name)
    }

    pub fn render(&self) -> String {
        self.skills.iter().map(SkillSpec::render).collect::<Vec<_>>().join("\n")
    }

    /// Checks a call against the API.
    pub fn check(&self, call: &SkillCall) -> Result<&SkillSpec, CallError> {
        let spec = self
            .skill(&call.skill)
            .ok_or_else(|| CallError::UnknownSkill(call.skill.clone()))?;
        if spec.arity() != call.args.len() {
            return Err(CallError::Arity {
                skill: spec.name.clone(),
                expected: spec.arity(),
                found: call.args.len(),
            });
        }
        Ok(spec)
    }
}

impl Default for SkillApi {
    fn default() -> Self {
        default_skill_api()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("{skill} takes {expected} argument(s), got {found}")]
    Arity {
        skill: String,
        expected: usize,
        found: usize,
    },
}

/// goto, pick, place, open, close and give for a single-arm robot.
pub fn default_skill_api() -> SkillApi {
    use ParamKind::*;
    SkillApi {
        skills: vec![
            SkillSpec::new(
                "goto",
                &[("node", Node)],
                "Drive to a navigation node; the route is planned automatically.",
                "a directed path to the node exists.",
            ),
            SkillSpec::new(
                "pick",
                &[("object", Object)],
                "Grasp an object at the current node, named or by category.",
                "object is at the current node, its entity is not closed and allows picking, the gripper has room.",
            ),
            SkillSpec::new(
                "place",
                &[("object", Object), ("target", Entity)],
                "Put the held object onto or into an entity, written entity@node.",
                "holding the object, entity is at the current node, not closed and allows placing.",
            ),
            SkillSpec::new(
                "open",
                &[("target", Entity)],
                "Open an entity such as a fridge, written entity@node.",
                "entity is at the current node and is openable.",
            ),
            SkillSpec::new(
                "close",
                &[("target", Entity)],
                "Close an entity, written entity@node.",
                "entity is at the current node and is closable.",
            ),
            SkillSpec::new(
                "give",
                &[("object", Object), ("person", Person)],
                "Hand the held object to a person.",
                "holding the object and the person is at the current node.",
            ),
        ],
        constraints: RobotConstraints::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkillCall {
    pub skill: String,
    pub args: Vec<String>,
}

impl SkillCall {
    pub fn new<I, S>(skill: &str, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SkillCall {
            skill: skill.to_string(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

impl fmt::Display for SkillCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.skill, self.args.join(", "))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<SkillCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl Plan {
    pub fn new(steps: Vec<SkillCall>) -> Self {
        Plan { steps, rationale: None }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Canonical reply form: rationale prose (if any) followed by a fenced
    /// JSON array of steps.
    pub fn render(&self) -> String {
        let steps = serde_json::to_string_pretty(&self.steps).expect("steps serialize");
        match &self.rationale {
            Some(r) => format!("{r}\n\n```json\n{steps}\n```\n"),
            None => format!("```json\n{steps}\n```\n"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanParseError {
    #[error("no plan found in reply")]
    NoPlanFound,
    #[error("step {1}: unknown skill {0:?}")]
    UnknownSkill(String, usize),
    #[error("step {index}: {skill} takes {expected} argument(s), got {found}")]
    ArityMismatch {
        index: usize,
        skill: String,
        expected: usize,
        found: usize,
    },
}

fn looks_like_steps(v: &serde_json::Value) -> bool {
    v.as_array()
        .is_some_and(|a| a.iter().all(|s| s.get("skill").is_some_and(|k| k.is_string())))
}

fn arg_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Extracts and validates the skill sequence in a model reply. Prose around
/// the block becomes the rationale.
pub fn parse_plan(reply: &str, api: &SkillApi) -> Result<Plan, PlanParseError> {
    let found = extract::find_json(reply, b'[', looks_like_steps).ok_or(PlanParseError::NoPlanFound)?;
    let mut steps = Vec::new();
    for (index, raw) in found.value.as_array().expect("accepted as array").iter().enumerate() {
        let skill = raw["skill"].as_str().expect("accepted with skill").to_string();
        let args: Vec<String> = match raw.get("args") {
            Some(serde_json::Value::Array(a)) => a.iter().map(arg_text).collect(),
            Some(serde_json::Value::Null) | None => Vec::new(),
            Some(other) => vec![arg_text(other)],
        };
        let call = SkillCall { skill, args };
        match api.check(&call) {
            Ok(_) => {}
            Err(CallError::UnknownSkill(name)) => return Err(PlanParseError::UnknownSkill(name, index)),
            Err(CallError::Arity { skill, expected, found }) => {
                return Err(PlanParseError::ArityMismatch {
                    index,
                    skill,
                    expected,
                    found,
                })
            }
        }
        steps.push(call);
    }
    let rationale = found.surrounding_text(reply);
    Ok(Plan {
        steps,
        rationale: (!rationale.is_empty()).then_some(rationale),
    })
}
