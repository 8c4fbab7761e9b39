use thiserror::Error;

use super::api::SkillApi;
use crate::map::SentMap;
use crate::map_io::serialize_map;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
}

/// The four parts handed to the planning model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerPrompt {
    pub scene: String,
    pub skill_api_text: String,
    pub constraints_text: String,
    pub query: String,
}

const PREAMBLE: &str = "You plan tasks for a mobile robot. The scene below is a topological map: \
navigation nodes with directed neighbor edges, some carrying a semantic payload that lists entities, \
their state and affordances, and the objects they hold.";

const RESPONSE_FORMAT: &str = "Reply with the skill sequence most likely to solve the task, as a JSON array \
inside a ```json fenced block. Each step is {\"skill\": <name>, \"args\": [<string>, ...]}. \
Use node ids exactly as written in the scene, entities as entity@node, and objects by name. \
If the task cannot be planned from the scene, reply with a line starting with REFUSE: followed by the reason.";

impl PlannerPrompt {
    pub fn render(&self) -> String {
        format!(
            "{PREAMBLE}\n\n## Scene\n\n```json\n{}```\n\n## Skill API\n\n{}\n\n## Robot constraints\n\n{}\n\n## Task\n\n{}\n\n## Response format\n\n{RESPONSE_FORMAT}\n",
            self.scene,
            self.skill_api_text,
            self.constraints_text,
            self.query.trim()
        )
    }
}

pub fn assemble_prompt(map: &SentMap, api: &SkillApi, query: &str) -> Result<PlannerPrompt, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    Ok(PlannerPrompt {
        scene: serialize_map(map),
        skill_api_text: api.render(),
        constraints_text: api.constraints.render(),
        query: query.to_string(),
    })
}
