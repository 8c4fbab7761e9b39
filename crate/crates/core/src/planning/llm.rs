//! Endpoint-backed planner with a parse, verify and repair loop.

use thiserror::Error;

use super::api::{parse_plan, Plan, PlanParseError, SkillApi};
use super::prompt::PlannerPrompt;
use crate::endpoint::{ChatMessage, ChatRequest, ChatTransport, Transcript, TranscriptEntry, TransportError};

/// Checks a candidate plan; the error text is shown to the model verbatim.
pub trait PlanVerifier {
    fn verify(&self, plan: &Plan) -> Result<(), String>;
}

/// Accepts anything. Useful when only parsing is wanted.
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl PlanVerifier for AcceptAll {
    fn verify(&self, _plan: &Plan) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPlan {
    pub plan: Plan,
    pub transcript: Transcript,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndpointPlanError {
    #[error("{error}")]
    Transport {
        error: TransportError,
        transcript: Transcript,
    },
    #[error("plan rejected: {last_error}")]
    PlanRejected { last_error: String, transcript: Transcript },
    #[error("model declined to plan: {raw}")]
    ModelRefusal { raw: String, transcript: Transcript },
}

impl EndpointPlanError {
    pub fn transcript(&self) -> &Transcript {
        match self {
            EndpointPlanError::Transport { transcript, .. }
            | EndpointPlanError::PlanRejected { transcript, .. }
            | EndpointPlanError::ModelRefusal { transcript, .. } => transcript,
        }
    }
}

const REFUSAL_PHRASES: [&str; 8] = [
    "i cannot",
    "i can't",
    "i can not",
    "unable to",
    "need more context",
    "more information",
    "not enough information",
    "insufficient",
];

/// A reply with no plan in it that declines the task.
pub fn is_refusal(reply: &str) -> bool {
    let t = reply.trim_start().to_lowercase();
    t.starts_with("refuse") || REFUSAL_PHRASES.iter().any(|p| t.contains(p))
}

pub fn repair_message(error: &str) -> String {
    format!("The previous plan was rejected: {error}\nReply with a corrected plan in the same format.")
}

/// Sends the prompt, then verifies each parsed plan and re-prompts with the
/// verifier's error up to `repair_budget` times. Never returns an
/// unverified plan.
pub fn plan_with_endpoint(
    prompt: &PlannerPrompt,
    transport: &dyn ChatTransport,
    settings: &ModelSettings,
    api: &SkillApi,
    verifier: &dyn PlanVerifier,
    repair_budget: u32,
) -> Result<EndpointPlan, EndpointPlanError> {
    let mut messages = vec![ChatMessage::user(prompt.render())];
    let mut transcript = Transcript::default();
    let mut round = 0;
    loop {
        let request = ChatRequest {
            model: settings.model.clone(),
            temperature: settings.temperature,
            messages: messages.clone(),
        };
        let reply = match transport.complete(&request) {
            Ok(r) => r,
            Err(error) => return Err(EndpointPlanError::Transport { error, transcript }),
        };
        transcript.push(TranscriptEntry::new(request, reply.clone()));
        let problem = match parse_plan(&reply, api) {
            Err(PlanParseError::NoPlanFound) if is_refusal(&reply) => {
                return Err(EndpointPlanError::ModelRefusal { raw: reply, transcript });
            }
            Err(e) => e.to_string(),
            Ok(plan) => match verifier.verify(&plan) {
                Ok(()) => return Ok(EndpointPlan { plan, transcript }),
                Err(e) => e,
            },
        };
        if round == repair_budget {
            return Err(EndpointPlanError::PlanRejected {
                last_error: problem,
                transcript,
            });
        }
        round += 1;
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(repair_message(&problem)));
    }
}
