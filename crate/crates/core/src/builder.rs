//! Building a map from an operator walkthrough. Moves create navigation
//! nodes; snapshots at points of interest are turned into semantic payloads
//! by a describer (a vision model, or recorded fixtures).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::{
    ChatMessage, ChatRequest, ChatTransport, ContentPart, ImageUrl, MessageContent, Role, TransportError,
};
use crate::extract;
use crate::map::{MapError, NavNode, NodeId, SemanticPayload, SentMap};
use crate::map_io::{apply_edit, decode_payload, EditCommand, EditError, ValidationReport};
use crate::planning::ModelSettings;
use crate::pointer::JsonPath;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    MoveTo {
        node: NodeId,
        zone: String,
    },
    Snapshot {
        node: NodeId,
        image: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hint: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("trace must start with a move_to event")]
    FirstNotMove,
    #[error("event {index}: snapshot at {node}, which has not been visited")]
    SnapshotUnvisited { index: usize, node: NodeId },
    #[error("event {index}: snapshot has an empty image reference")]
    EmptyImage { index: usize },
    #[error("event {index}: node {node} was first recorded in zone {first:?}, now {second:?}")]
    ZoneConflict {
        index: usize,
        node: NodeId,
        first: String,
        second: String,
    },
}

/// Checks the structural rules of a trace without building anything.
pub fn validate_trace(events: &[TraceEvent]) -> Result<(), TraceError> {
    match events.first() {
        None => return Err(TraceError::Empty),
        Some(TraceEvent::Snapshot { .. }) => return Err(TraceError::FirstNotMove),
        Some(TraceEvent::MoveTo { .. }) => {}
    }
    let mut zones: BTreeMap<&NodeId, &String> = BTreeMap::new();
    for (index, event) in events.iter().enumerate() {
        match event {
            TraceEvent::MoveTo { node, zone } => {
                if let Some(first) = zones.insert(node, zone) {
                    if first != zone {
                        return Err(TraceError::ZoneConflict {
                            index,
                            node: node.clone(),
                            first: first.clone(),
                            second: zone.clone(),
                        });
                    }
                }
            }
            TraceEvent::Snapshot { node, image, .. } => {
                if image.trim().is_empty() {
                    return Err(TraceError::EmptyImage { index });
                }
                if !zones.contains_key(node) {
                    return Err(TraceError::SnapshotUnvisited {
                        index,
                        node: node.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriberRequest {
    pub snapshot: Snapshot,
    pub template: String,
}

impl DescriberRequest {
    pub fn new(snapshot: Snapshot) -> Self {
        DescriberRequest {
            snapshot,
            template: PAYLOAD_TEMPLATE.to_string(),
        }
    }

    pub fn hint(&self) -> Option<&str> {
        self.snapshot.hint.as_deref()
    }

    /// Template followed by the operator hint, if any.
    pub fn prompt_text(&self) -> String {
        match self.hint() {
            Some(h) => format!("{}\n\nOperator hint: {h}", self.template),
            None => self.template.clone(),
        }
    }
}

/// Prompt describing the semantic payload a describer must return.
pub const PAYLOAD_TEMPLATE: &str = r#"Describe this point of interest for a robot's map. Reply with one JSON object:
{
  "label": "<short place name>",
  "description": "<optional one-sentence description>",
  "entities": [
    {
      "name": "<entity name, unique at this place>",
      "kind": "<fridge, drawer, table, ...>",
      "state": "<open or closed; only for entities that open and close>",
      "affordances": ["openable", "closable", "supports-place", "supports-pick"],
      "objects": [
        {"name": "<object name>", "category": "<object category>", "owner": "<optional person>", "attributes": {}}
      ]
    }
  ]
}
Required fields: label, entities, and for each entity name, kind, affordances, objects; for each object name and category."#;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriberResult {
    pub payload: SemanticPayload,
    /// Verbatim describer output.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescribeError {
    #[error("no fixture for image {0:?}")]
    FixtureMissing(String),
    #[error("cannot load image {image:?}: {message}")]
    Image { image: String, message: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("reply contains no JSON object: {0:?}")]
    NoJsonInReply(String),
    #[error("payload is invalid: {report}")]
    PayloadInvalid { report: ValidationReport, raw: String },
}

/// Converts a snapshot into a semantic payload.
pub trait Describer {
    fn describe(&self, request: &DescriberRequest) -> Result<DescriberResult, DescribeError>;
}

fn parse_payload(raw: &str) -> Result<DescriberResult, DescribeError> {
    let found = extract::first_object(raw).ok_or_else(|| DescribeError::NoJsonInReply(raw.to_string()))?;
    match decode_payload(&found.value, &JsonPath::root()) {
        Ok(payload) => Ok(DescriberResult {
            payload,
            raw: raw.to_string(),
        }),
        Err(report) => Err(DescribeError::PayloadInvalid {
            report,
            raw: raw.to_string(),
        }),
    }
}

/// Stored payloads keyed by the file stem of the image reference, so
/// `kitchen_sink.png` is answered by `kitchen_sink.json`.
#[derive(Debug, Clone, Default)]
pub struct FixtureDescriber {
    entries: BTreeMap<String, String>,
}

impl FixtureDescriber {
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut entries = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    entries.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(FixtureDescriber { entries })
    }

    pub fn insert(&mut self, key: impl Into<String>, raw: impl Into<String>) {
        self.entries.insert(key.into(), raw.into());
    }

    fn key(image: &str) -> &str {
        Path::new(image).file_stem().and_then(|s| s.to_str()).unwrap_or(image)
    }
}

impl Describer for FixtureDescriber {
    fn describe(&self, request: &DescriberRequest) -> Result<DescriberResult, DescribeError> {
        let image = &request.snapshot.image;
        let raw = self
            .entries
            .get(Self::key(image))
            .ok_or_else(|| DescribeError::FixtureMissing(image.clone()))?;
        parse_payload(raw)
    }
}

/// Multimodal chat endpoint as describer. Replies that carry no JSON or an
/// invalid payload are sent back with the problem, up to `repair_attempts`
/// times.
pub struct RemoteDescriber<T> {
    pub transport: T,
    pub settings: ModelSettings,
    pub repair_attempts: u32,
    /// Directory that relative image references are resolved against.
    pub image_root: PathBuf,
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

impl<T: ChatTransport> RemoteDescriber<T> {
    fn image_url(&self, image: &str) -> Result<String, DescribeError> {
        let path = self.image_root.join(image);
        let bytes = std::fs::read(&path).map_err(|e| DescribeError::Image {
            image: image.to_string(),
            message: e.to_string(),
        })?;
        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{};base64,{data}", mime_for(&path)))
    }
}

impl<T: ChatTransport> Describer for RemoteDescriber<T> {
    fn describe(&self, request: &DescriberRequest) -> Result<DescriberResult, DescribeError> {
        let url = self.image_url(&request.snapshot.image)?;
        let mut messages = vec![ChatMessage {
            role: Role::User,
            content: MessageContent::Parts(vec![
                ContentPart::Text {
                    text: request.prompt_text(),
                },
                ContentPart::ImageUrl {
                    image_url: ImageUrl { url },
                },
            ]),
        }];
        let mut attempt = 0;
        loop {
            let reply = self.transport.complete(&ChatRequest {
                model: self.settings.model.clone(),
                temperature: self.settings.temperature,
                messages: messages.clone(),
            })?;
            let err = match parse_payload(&reply) {
                Ok(result) => return Ok(result),
                Err(e) => e,
            };
            if attempt == self.repair_attempts {
                return Err(err);
            }
            attempt += 1;
            let problem = match &err {
                DescribeError::PayloadInvalid { report, .. } => format!("The JSON object failed validation:\n{report}"),
                _ => "The reply did not contain a JSON object.".to_string(),
            };
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(format!(
                "{problem}\nReply with the corrected JSON object only."
            )));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("event {index}: describer failed: {cause}")]
    DescriberFailure { index: usize, cause: DescribeError },
    #[error("event {index}: payload invalid: {report}")]
    PayloadInvalid { index: usize, report: ValidationReport },
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub event_index: usize,
    pub node: NodeId,
    pub image: String,
    #[serde(flatten)]
    pub result: DescriberResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub map: SentMap,
    /// One entry per snapshot, in trace order, for operator audit.
    pub results: Vec<AuditEntry>,
    pub warnings: Vec<String>,
}

/// Walks the trace in order. Consecutive moves are linked both ways; a
/// repeated snapshot at a node replaces the earlier payload.
pub fn build_map(events: &[TraceEvent], describer: &dyn Describer) -> Result<BuildOutput, BuildError> {
    validate_trace(events)?;
    let mut map = SentMap::new();
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    let mut prev: Option<&NodeId> = None;
    for (index, event) in events.iter().enumerate() {
        match event {
            TraceEvent::MoveTo { node, zone } => {
                if !map.contains(node.as_str()) {
                    map.add_nav_node(NavNode::new(node.clone(), zone.clone()))?;
                }
                if let Some(p) = prev.filter(|p| *p != node) {
                    map.add_edge(p.as_str(), node.as_str(), true)?;
                }
                prev = Some(node);
            }
            TraceEvent::Snapshot { node, image, hint } => {
                let request = DescriberRequest::new(Snapshot {
                    image: image.clone(),
                    hint: hint.clone(),
                });
                let result = match describer.describe(&request) {
                    Ok(r) => r,
                    Err(DescribeError::PayloadInvalid { report, .. }) => {
                        return Err(BuildError::PayloadInvalid { index, report })
                    }
                    Err(cause) => return Err(BuildError::DescriberFailure { index, cause }),
                };
                if map.node(node.as_str()).is_some_and(|n| n.semantic.is_some()) {
                    warnings.push(format!(
                        "event {index}: snapshot replaces the earlier payload at {node}"
                    ));
                }
                match map.set_semantic(node.as_str(), Some(result.payload.clone())) {
                    Ok(()) => {}
                    Err(MapError::Invariant(v)) => {
                        return Err(BuildError::PayloadInvalid {
                            index,
                            report: ValidationReport::from_violations(&v),
                        })
                    }
                    Err(e) => return Err(e.into()),
                }
                results.push(AuditEntry {
                    event_index: index,
                    node: node.clone(),
                    image: image.clone(),
                    result,
                });
            }
        }
    }
    Ok(BuildOutput { map, results, warnings })
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("edit {index} failed: {cause}")]
pub struct BatchFailed {
    /// 1-based position of the failing edit.
    pub index: usize,
    pub cause: EditError,
}

/// Applies edits in order; any failure rejects the whole batch.
pub fn review_and_patch(map: &SentMap, edits: &[EditCommand]) -> Result<SentMap, BatchFailed> {
    let mut current = map.clone();
    for (i, edit) in edits.iter().enumerate() {
        current = apply_edit(&current, edit).map_err(|cause| BatchFailed { index: i + 1, cause })?;
    }
    Ok(current)
}
