use std::fmt;

use serde::{Deserialize, Serialize};

use crate::map::{EntityState, NodeId, ObjectQuery};

/// Machine-checkable success criterion behind a natural-language task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSpec {
    ObjectHeld {
        object: ObjectQuery,
    },
    ObjectAtNode {
        object: ObjectQuery,
        node: NodeId,
    },
    ObjectGiven {
        object: ObjectQuery,
        person: String,
    },
    EntityState {
        node: NodeId,
        entity: String,
        state: EntityState,
    },
}

impl GoalSpec {
    pub fn object(&self) -> Option<&ObjectQuery> {
        match self {
            GoalSpec::ObjectHeld { object }
            | GoalSpec::ObjectAtNode { object, .. }
            | GoalSpec::ObjectGiven { object, .. } => Some(object),
            GoalSpec::EntityState { .. } => None,
        }
    }
}

impl fmt::Display for GoalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoalSpec::ObjectHeld { object } => write!(f, "holding {object}"),
            GoalSpec::ObjectAtNode { object, node } => write!(f, "{object} at {node}"),
            GoalSpec::ObjectGiven { object, person } => write!(f, "{object} given to {person}"),
            GoalSpec::EntityState { node, entity, state } => write!(f, "{entity}@{node} {state}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn wire_form() {
        let g: GoalSpec = serde_json::from_value(json!({
            "kind": "object_given",
            "object": {"category": "drink", "owner": "Bob"},
            "person": "Bob"
        }))
        .unwrap();
        assert_eq!(
            g,
            GoalSpec::ObjectGiven {
                object: ObjectQuery::category("drink").owned_by("Bob"),
                person: "Bob".into()
            }
        );
        let e = json!({"kind": "entity_state", "node": "n", "entity": "fridge", "state": "closed"});
        let g: GoalSpec = serde_json::from_value(e.clone()).unwrap();
        assert_eq!(serde_json::to_value(&g).unwrap(), e);
    }
}
