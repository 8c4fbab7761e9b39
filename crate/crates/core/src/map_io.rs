//! Scene JSON: the canonical, human-editable wire form of a [`SentMap`].
//!
//! Documents are decoded by an explicit walker rather than serde derive so
//! that every problem is reported with a JSON pointer an operator can follow.
//! Output is canonical: keys sorted, two-space indent, `\n` line endings and a
//! trailing newline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::map::{
    AffordanceTag, Entity, EntityState, Extra, NavNode, NodeId, ObjectItem, Person, SemanticPayload, SentMap,
    Violation, FORMAT_VERSION,
};
use crate::pointer::JsonPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, path: &JsonPath, message: impl Into<String>) {
        self.issues.push(Issue {
            severity,
            path: path.as_str().to_string(),
            message: message.into(),
        });
    }

    fn error(&mut self, path: &JsonPath, message: impl Into<String>) {
        self.push(Severity::Error, path, message);
    }

    fn warning(&mut self, path: &JsonPath, message: impl Into<String>) {
        self.push(Severity::Warning, path, message);
    }

    pub fn from_violations(violations: &[Violation]) -> Self {
        let mut r = ValidationReport::default();
        for v in violations {
            r.error(&v.path, v.message.clone());
        }
        r
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn warning_count(&self) -> usize {
        self.warnings().count()
    }

    pub fn is_valid(&self) -> bool {
        self.error_count() == 0
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            let sev = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            let path = if issue.path.is_empty() { "/" } else { &issue.path };
            writeln!(f, "{sev}: {path}: {}", issue.message)?;
        }
        write!(f, "{} errors, {} warnings", self.error_count(), self.warning_count())
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    MalformedJson {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation:\n{0}")]
    SchemaViolation(ValidationReport),
}

impl ParseError {
    fn from_serde(e: &serde_json::Error) -> Self {
        ParseError::MalformedJson {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Parses and fully validates a Scene JSON document.
pub fn parse_map(doc: &str) -> Result<SentMap, ParseError> {
    let value: Value = serde_json::from_str(doc).map_err(|e| ParseError::from_serde(&e))?;
    let (map, report) = decode_and_check(&value);
    match map {
        Some(map) if report.is_valid() => Ok(map),
        _ => Err(ParseError::SchemaViolation(report)),
    }
}

/// Canonical Scene JSON for `map`.
pub fn serialize_map(map: &SentMap) -> String {
    let value = serde_json::to_value(map).expect("map serializes to JSON");
    to_canonical_string(&value)
}

/// Pretty-prints any JSON value in canonical form.
pub fn to_canonical_string(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&sort_keys(value)).expect("JSON value serializes");
    s.push('\n');
    s
}

pub(crate) fn sort_keys(value: &Value) -> Value {
    match value {
        Value::Object(m) => {
            let sorted: BTreeMap<&String, Value> = m.iter().map(|(k, v)| (k, sort_keys(v))).collect();
            let mut out = Map::new();
            for (k, v) in sorted {
                out.insert(k.clone(), v);
            }
            Value::Object(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

/// Reports every schema and invariant violation in `doc`, plus warnings for
/// suspicious but loadable content. Accepts arbitrary bytes.
pub fn validate_map(doc: &[u8]) -> ValidationReport {
    let text = match std::str::from_utf8(doc) {
        Ok(t) => t,
        Err(e) => {
            let mut r = ValidationReport::default();
            r.error(&JsonPath::root(), format!("document is not UTF-8: {e}"));
            return r;
        }
    };
    match serde_json::from_str::<Value>(text) {
        Ok(value) => decode_and_check(&value).1,
        Err(e) => {
            let mut r = ValidationReport::default();
            r.error(
                &JsonPath::root(),
                format!("malformed JSON at line {}, column {}: {e}", e.line(), e.column()),
            );
            r
        }
    }
}

fn decode_and_check(value: &Value) -> (Option<SentMap>, ValidationReport) {
    let mut dec = Decoder::default();
    let map = dec.map(value);
    let mut report = dec.report;
    if let Some(map) = &map {
        if report.is_valid() {
            for v in map.violations() {
                report.error(&v.path, v.message);
            }
            if report.is_valid() {
                lint(map, &mut report);
            }
        }
    }
    (map, report)
}

/// Decodes a single semantic payload (the describer output sub-schema).
/// Ownership references cannot be resolved here; callers check them against
/// the map the payload is attached to.
pub fn decode_payload(value: &Value, path: &JsonPath) -> Result<SemanticPayload, ValidationReport> {
    let mut dec = Decoder::default();
    let payload = dec.payload(value, path);
    match payload {
        Some(p) if dec.report.is_valid() => {
            let mut report = ValidationReport::default();
            check_payload_local(&p, path, &mut report);
            if report.is_valid() {
                Ok(p)
            } else {
                Err(report)
            }
        }
        _ => Err(dec.report),
    }
}

fn check_payload_local(payload: &SemanticPayload, path: &JsonPath, report: &mut ValidationReport) {
    // Reuse the map-level checks by hosting the payload on a scratch node.
    let probe = NodeId::new("probe").expect("valid id");
    let mut scratch = SentMap::new();
    scratch.nodes.insert(
        probe.clone(),
        NavNode::new(probe, "probe").with_semantic(payload.clone()),
    );
    let prefix = JsonPath::root().key("nodes").key("probe").key("semantic");
    for v in scratch.violations() {
        if v.path.as_str().ends_with("/owner") {
            continue;
        }
        let rel = v.path.as_str().strip_prefix(prefix.as_str()).unwrap_or("");
        report.issues.push(Issue {
            severity: Severity::Error,
            path: format!("{}{}", path.as_str(), rel),
            message: v.message,
        });
    }
}

fn lint(map: &SentMap, report: &mut ValidationReport) {
    let nodes = JsonPath::root().key("nodes");
    if map.len() > 1 {
        let reach: Vec<(&NodeId, BTreeSet<&NodeId>)> =
            map.node_ids().map(|id| (id, map.reachable_from(id.as_str()))).collect();
        for id in map.node_ids() {
            let reached_by_other = reach.iter().any(|(src, set)| *src != id && set.contains(id));
            if !reached_by_other {
                report.warning(
                    &nodes.key(id.as_str()),
                    format!("node {id} is unreachable from every other node"),
                );
            }
        }
    }
    for node in map.nodes() {
        let Some(payload) = &node.semantic else { continue };
        let sp = nodes.key(node.id.as_str()).key("semantic");
        if payload.entities.is_empty() {
            report.warning(&sp, format!("semantic payload of {} lists no entities", node.id));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for (ei, entity) in payload.entities.iter().enumerate() {
            let mut local = HashSet::new();
            for (oi, object) in entity.objects.iter().enumerate() {
                if local.insert(object.name.as_str()) && !seen.insert(object.name.as_str()) {
                    report.warning(
                        &sp.key("entities").index(ei).key("objects").index(oi).key("name"),
                        format!(
                            "object name {:?} appears more than once at node {}",
                            object.name, node.id
                        ),
                    );
                }
            }
            // Names repeated inside one entity are already errors.
            seen.extend(local);
        }
    }
}

#[derive(Default)]
struct Decoder {
    report: ValidationReport,
}

impl Decoder {
    fn object<'v>(&mut self, v: &'v Value, path: &JsonPath) -> Option<&'v Map<String, Value>> {
        match v {
            Value::Object(m) => Some(m),
            _ => {
                self.report
                    .error(path, format!("expected an object, found {}", kind_of(v)));
                None
            }
        }
    }

    fn required<'v>(&mut self, m: &'v Map<String, Value>, key: &str, path: &JsonPath) -> Option<&'v Value> {
        let v = m.get(key);
        if v.is_none() {
            self.report.error(path, format!("missing required field {key:?}"));
        }
        v
    }

    fn string(&mut self, v: &Value, path: &JsonPath) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.report
                    .error(path, format!("expected a string, found {}", kind_of(v)));
                None
            }
        }
    }

    fn required_string(&mut self, m: &Map<String, Value>, key: &str, path: &JsonPath) -> Option<String> {
        let v = self.required(m, key, path)?;
        self.string(v, &path.key(key))
    }

    fn optional_string(&mut self, m: &Map<String, Value>, key: &str, path: &JsonPath) -> Option<Option<String>> {
        match m.get(key) {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.string(v, &path.key(key)).map(Some),
        }
    }

    fn node_id(&mut self, v: &Value, path: &JsonPath) -> Option<NodeId> {
        let s = self.string(v, path)?;
        match NodeId::new(s) {
            Ok(id) => Some(id),
            Err(e) => {
                self.report.error(path, e.to_string());
                None
            }
        }
    }

    fn array<'v>(&mut self, v: &'v Value, path: &JsonPath) -> Option<&'v Vec<Value>> {
        match v {
            Value::Array(a) => Some(a),
            _ => {
                self.report
                    .error(path, format!("expected an array, found {}", kind_of(v)));
                None
            }
        }
    }

    fn extras(m: &Map<String, Value>, known: &[&str]) -> Extra {
        m.iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn map(&mut self, v: &Value) -> Option<SentMap> {
        let root = JsonPath::root();
        let m = self.object(v, &root)?;
        let version = self.required_string(m, "version", &root);
        if let Some(ver) = &version {
            if ver != FORMAT_VERSION {
                self.report.warning(
                    &root.key("version"),
                    format!("unrecognised format version {ver:?}; expected {FORMAT_VERSION:?}"),
                );
            }
        }

        let mut nodes = BTreeMap::new();
        let mut ok = true;
        if let Some(nv) = self.required(m, "nodes", &root) {
            let np = root.key("nodes");
            if let Some(nm) = self.object(nv, &np) {
                for (key, value) in nm {
                    let p = np.key(key);
                    let id = match NodeId::new(key.clone()) {
                        Ok(id) => Some(id),
                        Err(e) => {
                            self.report.error(&p, e.to_string());
                            None
                        }
                    };
                    let node = self.node(value, &p);
                    match (id, node) {
                        (Some(id), Some(mut node)) => {
                            node.id = id.clone();
                            nodes.insert(id, node);
                        }
                        _ => ok = false,
                    }
                }
            } else {
                ok = false;
            }
        } else {
            ok = false;
        }

        let mut people = Vec::new();
        if let Some(pv) = self.required(m, "people", &root) {
            let pp = root.key("people");
            if let Some(items) = self.array(pv, &pp) {
                for (i, item) in items.iter().enumerate() {
                    match self.person(item, &pp.index(i)) {
                        Some(p) => people.push(p),
                        None => ok = false,
                    }
                }
            } else {
                ok = false;
            }
        } else {
            ok = false;
        }

        let version = version?;
        if !ok {
            return None;
        }
        Some(SentMap {
            version,
            nodes,
            people,
            extra: Self::extras(m, &["version", "nodes", "people"]),
        })
    }

    fn person(&mut self, v: &Value, path: &JsonPath) -> Option<Person> {
        let m = self.object(v, path)?;
        let name = self.required_string(m, "name", path);
        let location = match m.get("location") {
            None | Some(Value::Null) => Some(None),
            Some(l) => self.node_id(l, &path.key("location")).map(Some),
        };
        Some(Person {
            name: name?,
            location: location?,
            extra: Self::extras(m, &["name", "location"]),
        })
    }

    fn node(&mut self, v: &Value, path: &JsonPath) -> Option<NavNode> {
        let m = self.object(v, path)?;
        let zone = self.required_string(m, "zone", path);
        let neighbors = self.required(m, "neighbors", path).and_then(|nv| {
            let np = path.key("neighbors");
            let items = self.array(nv, &np)?;
            let ids: Vec<Option<NodeId>> = items
                .iter()
                .enumerate()
                .map(|(i, x)| self.node_id(x, &np.index(i)))
                .collect();
            ids.into_iter().collect::<Option<Vec<_>>>()
        });
        let semantic = match m.get("semantic") {
            None | Some(Value::Null) => Some(None),
            Some(s) => self.payload(s, &path.key("semantic")).map(Some),
        };
        Some(NavNode {
            id: NodeId::new("pending").expect("valid id"),
            zone: zone?,
            neighbors: neighbors?,
            semantic: semantic?,
            extra: Self::extras(m, &["zone", "neighbors", "semantic"]),
        })
    }

    fn payload(&mut self, v: &Value, path: &JsonPath) -> Option<SemanticPayload> {
        let m = self.object(v, path)?;
        let label = self.required_string(m, "label", path);
        let description = self.optional_string(m, "description", path);
        let entities = self.required(m, "entities", path).and_then(|ev| {
            let ep = path.key("entities");
            let items = self.array(ev, &ep)?;
            let decoded: Vec<Option<Entity>> = items
                .iter()
                .enumerate()
                .map(|(i, x)| self.entity(x, &ep.index(i)))
                .collect();
            decoded.into_iter().collect::<Option<Vec<_>>>()
        });
        Some(SemanticPayload {
            label: label?,
            description: description?,
            entities: entities?,
            extra: Self::extras(m, &["label", "description", "entities"]),
        })
    }

    fn entity(&mut self, v: &Value, path: &JsonPath) -> Option<Entity> {
        let m = self.object(v, path)?;
        let name = self.required_string(m, "name", path);
        let kind = self.required_string(m, "kind", path);
        let state = match m.get("state") {
            None | Some(Value::Null) => Some(None),
            Some(sv) => {
                let sp = path.key("state");
                self.string(sv, &sp).and_then(|s| match EntityState::parse(&s) {
                    Some(st) => Some(Some(st)),
                    None => {
                        self.report
                            .error(&sp, format!("state must be \"open\" or \"closed\", found {s:?}"));
                        None
                    }
                })
            }
        };
        let affordances = self.required(m, "affordances", path).and_then(|av| {
            let ap = path.key("affordances");
            let items = self.array(av, &ap)?;
            let mut set = BTreeSet::new();
            let mut ok = true;
            for (i, x) in items.iter().enumerate() {
                let p = ap.index(i);
                match self.string(x, &p) {
                    Some(s) => match AffordanceTag::parse(&s) {
                        Some(tag) => {
                            if !set.insert(tag) {
                                self.report.warning(&p, format!("affordance {s:?} listed twice"));
                            }
                        }
                        None => {
                            self.report.error(&p, format!("unknown affordance {s:?}"));
                            ok = false;
                        }
                    },
                    None => ok = false,
                }
            }
            ok.then_some(set)
        });
        let objects = self.required(m, "objects", path).and_then(|ov| {
            let op = path.key("objects");
            let items = self.array(ov, &op)?;
            let decoded: Vec<Option<ObjectItem>> = items
                .iter()
                .enumerate()
                .map(|(i, x)| self.item(x, &op.index(i)))
                .collect();
            decoded.into_iter().collect::<Option<Vec<_>>>()
        });
        Some(Entity {
            name: name?,
            kind: kind?,
            state: state?,
            affordances: affordances?,
            objects: objects?,
            extra: Self::extras(m, &["name", "kind", "state", "affordances", "objects"]),
        })
    }

    fn item(&mut self, v: &Value, path: &JsonPath) -> Option<ObjectItem> {
        let m = self.object(v, path)?;
        let name = self.required_string(m, "name", path);
        let category = self.required_string(m, "category", path);
        let owner = self.optional_string(m, "owner", path);
        let attributes = match m.get("attributes") {
            None | Some(Value::Null) => Some(BTreeMap::new()),
            Some(av) => {
                let ap = path.key("attributes");
                self.object(av, &ap).and_then(|am| {
                    let mut out = BTreeMap::new();
                    let mut ok = true;
                    for (k, x) in am {
                        match self.string(x, &ap.key(k)) {
                            Some(s) => {
                                out.insert(k.clone(), s);
                            }
                            None => ok = false,
                        }
                    }
                    ok.then_some(out)
                })
            }
        };
        Some(ObjectItem {
            name: name?,
            category: category?,
            owner: owner?,
            attributes: attributes?,
            extra: Self::extras(m, &["name", "category", "owner", "attributes"]),
        })
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Operator edit. Objects and entities are addressed by
/// `(node, entity, object)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum EditCommand {
    AddObject {
        node: String,
        entity: String,
        object: ObjectItem,
    },
    RemoveObject {
        node: String,
        entity: String,
        object: String,
    },
    SetOwner {
        node: String,
        entity: String,
        object: String,
        owner: Option<String>,
    },
    SetEntityState {
        node: String,
        entity: String,
        state: Option<EntityState>,
    },
    RenameLabel {
        node: String,
        label: String,
    },
    AddPerson {
        name: String,
        #[serde(default)]
        location: Option<NodeId>,
    },
    SetPersonLocation {
        name: String,
        location: Option<NodeId>,
    },
    SetDescription {
        node: String,
        description: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EditError {
    #[error("edit target {0} does not exist")]
    UnknownTarget(String),
    #[error("edit breaks map invariants:\n{0}")]
    InvariantBroken(ValidationReport),
}

impl EditCommand {
    /// JSON pointer to the subtree this edit may change, resolved against
    /// `map` before the edit is applied.
    pub fn scope(&self, map: &SentMap) -> Result<JsonPath, EditError> {
        let node_path = |node: &str| JsonPath::root().key("nodes").key(node);
        match self {
            EditCommand::AddObject { node, entity, .. } | EditCommand::RemoveObject { node, entity, .. } => {
                let (p, _) = locate_entity(map, node, entity)?;
                Ok(p.key("objects"))
            }
            EditCommand::SetOwner {
                node, entity, object, ..
            } => {
                let (p, e) = locate_entity(map, node, entity)?;
                let oi = e
                    .objects
                    .iter()
                    .position(|o| &o.name == object)
                    .ok_or_else(|| EditError::UnknownTarget(p.key("objects").key(object).to_string()))?;
                Ok(p.key("objects").index(oi).key("owner"))
            }
            EditCommand::SetEntityState { node, entity, .. } => Ok(locate_entity(map, node, entity)?.0.key("state")),
            EditCommand::RenameLabel { node, .. } => {
                locate_payload(map, node)?;
                Ok(node_path(node).key("semantic").key("label"))
            }
            EditCommand::SetDescription { node, .. } => {
                locate_payload(map, node)?;
                Ok(node_path(node).key("semantic").key("description"))
            }
            EditCommand::AddPerson { .. } => Ok(JsonPath::root().key("people")),
            EditCommand::SetPersonLocation { name, .. } => {
                let i = map
                    .people()
                    .iter()
                    .position(|p| &p.name == name)
                    .ok_or_else(|| EditError::UnknownTarget(format!("/people/{name}")))?;
                Ok(JsonPath::root().key("people").index(i).key("location"))
            }
        }
    }
}

fn locate_payload<'m>(map: &'m SentMap, node: &str) -> Result<&'m SemanticPayload, EditError> {
    let np = JsonPath::root().key("nodes").key(node);
    let n = map.node(node).ok_or_else(|| EditError::UnknownTarget(np.to_string()))?;
    n.semantic
        .as_ref()
        .ok_or_else(|| EditError::UnknownTarget(np.key("semantic").to_string()))
}

fn locate_entity<'m>(map: &'m SentMap, node: &str, entity: &str) -> Result<(JsonPath, &'m Entity), EditError> {
    let payload = locate_payload(map, node)?;
    let ep = JsonPath::root().key("nodes").key(node).key("semantic").key("entities");
    let i = payload
        .entities
        .iter()
        .position(|e| e.name == entity)
        .ok_or_else(|| EditError::UnknownTarget(ep.key(entity).to_string()))?;
    Ok((ep.index(i), &payload.entities[i]))
}

/// Applies one edit, returning the edited map. The input is untouched and the
/// result satisfies every map invariant.
pub fn apply_edit(map: &SentMap, cmd: &EditCommand) -> Result<SentMap, EditError> {
    cmd.scope(map)?;
    let mut out = map.clone();
    match cmd {
        EditCommand::AddObject { node, entity, object } => {
            entity_mut(&mut out, node, entity).objects.push(object.clone());
        }
        EditCommand::RemoveObject { node, entity, object } => {
            let e = entity_mut(&mut out, node, entity);
            let before = e.objects.len();
            e.objects.retain(|o| &o.name != object);
            if e.objects.len() == before {
                return Err(EditError::UnknownTarget(format!(
                    "/nodes/{node}/semantic/entities/{entity}/objects/{object}"
                )));
            }
        }
        EditCommand::SetOwner {
            node,
            entity,
            object,
            owner,
        } => {
            let e = entity_mut(&mut out, node, entity);
            let o = e
                .objects
                .iter_mut()
                .find(|o| &o.name == object)
                .expect("scope resolved");
            o.owner = owner.clone();
        }
        EditCommand::SetEntityState { node, entity, state } => {
            entity_mut(&mut out, node, entity).state = *state;
        }
        EditCommand::RenameLabel { node, label } => {
            payload_mut(&mut out, node).label = label.clone();
        }
        EditCommand::SetDescription { node, description } => {
            payload_mut(&mut out, node).description = description.clone();
        }
        EditCommand::AddPerson { name, location } => {
            out.people.push(Person::new(name.clone(), location.clone()));
        }
        EditCommand::SetPersonLocation { name, location } => {
            out.person_mut(name).expect("scope resolved").location = location.clone();
        }
    }
    let violations = out.violations();
    if violations.is_empty() {
        Ok(out)
    } else {
        Err(EditError::InvariantBroken(ValidationReport::from_violations(
            &violations,
        )))
    }
}

fn payload_mut<'m>(map: &'m mut SentMap, node: &str) -> &'m mut SemanticPayload {
    map.node_mut(node)
        .and_then(|n| n.semantic.as_mut())
        .expect("scope resolved")
}

fn entity_mut<'m>(map: &'m mut SentMap, node: &str, entity: &str) -> &'m mut Entity {
    payload_mut(map, node)
        .entities
        .iter_mut()
        .find(|e| e.name == entity)
        .expect("scope resolved")
}
