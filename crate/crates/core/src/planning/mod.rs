//! Skill API, prompt assembly, plan parsing, the model-backed planner and
//! the symbolic oracle.

mod api;
mod goal;
mod llm;
mod oracle;
mod prompt;

pub use api::{
    default_skill_api, parse_plan, CallError, ParamKind, Plan, PlanParseError, RobotConstraints, SkillApi, SkillCall,
    SkillSpec,
};
pub use goal::GoalSpec;
pub use llm::{
    is_refusal, plan_with_endpoint, repair_message, AcceptAll, EndpointPlan, EndpointPlanError, ModelSettings,
    PlanVerifier,
};
pub use oracle::{oracle_plan, resolve_target, OracleError};
pub use prompt::{assemble_prompt, PlannerPrompt, PromptError};
