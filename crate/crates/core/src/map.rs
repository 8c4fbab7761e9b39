//! In-memory model of a semantic topological map.
//!
//! A [`SentMap`] is a directed graph of navigation nodes. Any node may carry a
//! [`SemanticPayload`] describing the stationary entities nearby (fridges,
//! tables, desks), the movable objects they hold and free-form metadata such
//! as ownership. Edges are unit-cost hops.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pointer::JsonPath;

/// Format version written by this crate.
pub const FORMAT_VERSION: &str = "1";

/// Unknown JSON members kept verbatim so operator enrichments survive a
/// load/save cycle.
pub type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self, MapError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(MapError::InvalidNodeId(id));
        }
        Ok(NodeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeId {
    type Error = MapError;
    fn try_from(s: String) -> Result<Self, MapError> {
        NodeId::new(s)
    }
}

impl TryFrom<&str> for NodeId {
    type Error = MapError;
    fn try_from(s: &str) -> Result<Self, MapError> {
        NodeId::new(s)
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityState {
    Open,
    Closed,
}

impl EntityState {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityState::Open => "open",
            EntityState::Closed => "closed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(EntityState::Open),
            "closed" => Some(EntityState::Closed),
            _ => None,
        }
    }
}

impl fmt::Display for EntityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffordanceTag {
    Openable,
    Closable,
    SupportsPlace,
    SupportsPick,
}

impl AffordanceTag {
    pub const ALL: [AffordanceTag; 4] = [
        AffordanceTag::Openable,
        AffordanceTag::Closable,
        AffordanceTag::SupportsPlace,
        AffordanceTag::SupportsPick,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AffordanceTag::Openable => "openable",
            AffordanceTag::Closable => "closable",
            AffordanceTag::SupportsPlace => "supports-place",
            AffordanceTag::SupportsPick => "supports-pick",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectItem {
    pub name: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl ObjectItem {
    pub fn new(name: impl Into<String>, category: impl Into<String>) -> Self {
        ObjectItem {
            name: name.into(),
            category: category.into(),
            owner: None,
            attributes: BTreeMap::new(),
            extra: Extra::new(),
        }
    }

    pub fn with_owner(mut self, owner: impl Into<String>) -> Self {
        self.owner = Some(owner.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entity {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<EntityState>,
    pub affordances: BTreeSet<AffordanceTag>,
    pub objects: Vec<ObjectItem>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Entity {
    pub fn new(name: impl Into<String>, kind: impl Into<String>) -> Self {
        Entity {
            name: name.into(),
            kind: kind.into(),
            state: None,
            affordances: BTreeSet::new(),
            objects: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn with_affordances(mut self, tags: impl IntoIterator<Item = AffordanceTag>) -> Self {
        self.affordances.extend(tags);
        self
    }

    pub fn with_state(mut self, state: EntityState) -> Self {
        self.state = Some(state);
        self
    }

    pub fn with_object(mut self, object: ObjectItem) -> Self {
        self.objects.push(object);
        self
    }

    pub fn affords(&self, tag: AffordanceTag) -> bool {
        self.affordances.contains(&tag)
    }

    pub fn object(&self, name: &str) -> Option<&ObjectItem> {
        self.objects.iter().find(|o| o.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticPayload {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub entities: Vec<Entity>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl SemanticPayload {
    pub fn new(label: impl Into<String>) -> Self {
        SemanticPayload {
            label: label.into(),
            description: None,
            entities: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn with_entity(mut self, entity: Entity) -> Self {
        self.entities.push(entity);
        self
    }

    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.name == name)
    }

    pub fn object_count(&self) -> usize {
        self.entities.iter().map(|e| e.objects.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NavNode {
    #[serde(skip)]
    pub id: NodeId,
    pub zone: String,
    pub neighbors: Vec<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic: Option<SemanticPayload>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl NavNode {
    pub fn new(id: NodeId, zone: impl Into<String>) -> Self {
        NavNode {
            id,
            zone: zone.into(),
            neighbors: Vec::new(),
            semantic: None,
            extra: Extra::new(),
        }
    }

    pub fn with_neighbor(mut self, id: NodeId) -> Self {
        self.neighbors.push(id);
        self
    }

    pub fn with_semantic(mut self, payload: SemanticPayload) -> Self {
        self.semantic = Some(payload);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Person {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<NodeId>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Person {
    pub fn new(name: impl Into<String>, location: Option<NodeId>) -> Self {
        Person {
            name: name.into(),
            location,
            extra: Extra::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("invalid node id {0:?}: must be non-empty and contain no whitespace")]
    InvalidNodeId(String),
    #[error("duplicate node id {0}")]
    DuplicateNodeId(NodeId),
    #[error("edge to unknown node {0}")]
    DanglingEdge(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("no path from {0} to {1}")]
    Unreachable(NodeId, NodeId),
    #[error("map invariant violated: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invariant(Vec<Violation>),
}

/// A broken map invariant, located by a JSON pointer into the Scene JSON form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: JsonPath,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Filter over objects. Each present field must match; text fields compare
/// case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl ObjectQuery {
    pub fn category(category: impl Into<String>) -> Self {
        ObjectQuery {
            category: Some(category.into()),
            ..Default::default()
        }
    }

    pub fn name(name: impl Into<String>) -> Self {
        ObjectQuery {
            name: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn owner(owner: impl Into<String>) -> Self {
        ObjectQuery {
            owner: Some(owner.into()),
            ..Default::default()
        }
    }

    pub fn owned_by(mut self, owner: impl Into<String>) -> Self {
        self.owner = Some(owner.into());
        self
    }

    /// True when no field constrains the match. Such a query matches nothing.
    pub fn is_empty(&self) -> bool {
        self.name.is_none() && self.category.is_none() && self.owner.is_none() && self.attributes.is_empty()
    }

    /// Same query with the owner constraint dropped.
    pub fn without_owner(&self) -> ObjectQuery {
        ObjectQuery {
            owner: None,
            ..self.clone()
        }
    }

    pub fn matches(&self, object: &ObjectItem) -> bool {
        if self.is_empty() {
            return false;
        }
        let eq = |a: &str, b: &str| a.eq_ignore_ascii_case(b);
        self.name.as_deref().is_none_or(|n| eq(n, &object.name))
            && self.category.as_deref().is_none_or(|c| eq(c, &object.category))
            && self.owner.as_deref().is_none_or(|o| object.owner.as_deref() == Some(o))
            && self
                .attributes
                .iter()
                .all(|(k, v)| object.attributes.get(k).is_some_and(|x| eq(x, v)))
    }
}

impl fmt::Display for ObjectQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(n) = &self.name {
            parts.push(format!("name={n}"));
        }
        if let Some(c) = &self.category {
            parts.push(format!("category={c}"));
        }
        if let Some(o) = &self.owner {
            parts.push(format!("owner={o}"));
        }
        for (k, v) in &self.attributes {
            parts.push(format!("{k}={v}"));
        }
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectHit<'a> {
    pub node: &'a NodeId,
    pub entity: &'a Entity,
    pub object: &'a ObjectItem,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentMap {
    pub(crate) version: String,
    pub(crate) nodes: BTreeMap<NodeId, NavNode>,
    pub(crate) people: Vec<Person>,
    #[serde(flatten)]
    pub(crate) extra: Extra,
}

impl Default for SentMap {
    fn default() -> Self {
        SentMap::new()
    }
}

impl SentMap {
    pub fn new() -> Self {
        SentMap {
            version: FORMAT_VERSION.to_string(),
            nodes: BTreeMap::new(),
            people: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NavNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    pub fn node(&self, id: &str) -> Option<&NavNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.values().map(|n| n.neighbors.len()).sum()
    }

    pub fn people(&self) -> &[Person] {
        &self.people
    }

    pub fn person(&self, name: &str) -> Option<&Person> {
        self.people.iter().find(|p| p.name == name)
    }

    pub fn extra(&self) -> &Extra {
        &self.extra
    }

    /// Nodes that carry a semantic payload.
    pub fn semantic_nodes(&self) -> impl Iterator<Item = &NavNode> {
        self.nodes.values().filter(|n| n.semantic.is_some())
    }

    pub fn zones(&self) -> BTreeSet<&str> {
        self.nodes.values().map(|n| n.zone.as_str()).collect()
    }

    pub fn object_count(&self) -> usize {
        self.semantic_nodes()
            .filter_map(|n| n.semantic.as_ref())
            .map(SemanticPayload::object_count)
            .sum()
    }

    pub fn entity(&self, node: &str, entity: &str) -> Option<&Entity> {
        self.node(node)?.semantic.as_ref()?.entity(entity)
    }

    /// Every object in deterministic order: node id, then entity order, then
    /// object order.
    pub fn objects(&self) -> impl Iterator<Item = ObjectHit<'_>> {
        self.nodes.iter().flat_map(|(id, node)| {
            node.semantic.iter().flat_map(move |payload| {
                payload.entities.iter().flat_map(move |entity| {
                    entity.objects.iter().map(move |object| ObjectHit {
                        node: id,
                        entity,
                        object,
                    })
                })
            })
        })
    }

    /// Inserts a single node. See [`SentMap::add_nav_nodes`].
    pub fn add_nav_node(&mut self, node: NavNode) -> Result<(), MapError> {
        self.add_nav_nodes(vec![node])
    }

    /// Inserts a batch of nodes atomically. Neighbors may reference nodes
    /// already in the map or nodes in the same batch.
    pub fn add_nav_nodes(&mut self, batch: Vec<NavNode>) -> Result<(), MapError> {
        let mut fresh = HashSet::new();
        for node in &batch {
            if self.nodes.contains_key(&node.id) || !fresh.insert(node.id.clone()) {
                return Err(MapError::DuplicateNodeId(node.id.clone()));
            }
        }
        for node in &batch {
            for t in &node.neighbors {
                if t == &node.id {
                    return Err(MapError::SelfLoop(t.clone()));
                }
                if !self.nodes.contains_key(t) && !fresh.contains(t) {
                    return Err(MapError::DanglingEdge(t.clone()));
                }
            }
        }
        let mut next = self.clone();
        for node in batch {
            next.nodes.insert(node.id.clone(), node);
        }
        next.commit_into(self)
    }

    /// Adds `from -> to` (and `to -> from` when `bidirectional`). Repeats are
    /// no-ops.
    pub fn add_edge(&mut self, from: &str, to: &str, bidirectional: bool) -> Result<(), MapError> {
        let from_id = self.require(from)?.clone();
        let to_id = self.require(to)?.clone();
        if from_id == to_id {
            return Err(MapError::SelfLoop(from_id));
        }
        self.link(&from_id, &to_id);
        if bidirectional {
            self.link(&to_id, &from_id);
        }
        Ok(())
    }

    fn link(&mut self, from: &NodeId, to: &NodeId) {
        let node = self.nodes.get_mut(from).expect("endpoint checked");
        if !node.neighbors.contains(to) {
            node.neighbors.push(to.clone());
        }
    }

    /// Replaces the semantic payload of an existing node.
    pub fn set_semantic(&mut self, id: &str, payload: Option<SemanticPayload>) -> Result<(), MapError> {
        self.require(id)?;
        let mut next = self.clone();
        next.nodes.get_mut(id).expect("checked").semantic = payload;
        next.commit_into(self)
    }

    pub fn add_person(&mut self, person: Person) -> Result<(), MapError> {
        let mut next = self.clone();
        next.people.push(person);
        next.commit_into(self)
    }

    pub(crate) fn node_mut(&mut self, id: &str) -> Option<&mut NavNode> {
        self.nodes.get_mut(id)
    }

    pub(crate) fn person_mut(&mut self, name: &str) -> Option<&mut Person> {
        self.people.iter_mut().find(|p| p.name == name)
    }

    fn require(&self, id: &str) -> Result<&NodeId, MapError> {
        self.nodes
            .get_key_value(id)
            .map(|(k, _)| k)
            .ok_or_else(|| MapError::UnknownNode(id.to_string()))
    }

    fn commit_into(self, target: &mut SentMap) -> Result<(), MapError> {
        let violations = self.violations();
        if violations.is_empty() {
            *target = self;
            Ok(())
        } else {
            Err(MapError::Invariant(violations))
        }
    }

    /// Minimal-hop directed path from `current` to `target`, both endpoints
    /// included. Among equally short paths the one whose node-id sequence is
    /// lexicographically smallest is returned.
    pub fn shortest_path(&self, current: &str, target: &str) -> Result<Vec<NodeId>, MapError> {
        let start = self.require(current)?;
        let goal = self.require(target)?;
        // Hop distance to `goal` over reversed edges.
        let mut reverse: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
        for (id, node) in &self.nodes {
            for t in &node.neighbors {
                reverse.entry(t).or_default().push(id);
            }
        }
        let mut dist: BTreeMap<&NodeId, usize> = BTreeMap::new();
        dist.insert(goal, 0);
        let mut queue = VecDeque::from([goal]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u];
            for &p in reverse.get(u).into_iter().flatten() {
                if !dist.contains_key(p) {
                    dist.insert(p, d + 1);
                    queue.push_back(p);
                }
            }
        }
        let Some(&total) = dist.get(start) else {
            return Err(MapError::Unreachable(start.clone(), goal.clone()));
        };
        let mut path = Vec::with_capacity(total + 1);
        let mut at = start;
        path.push(at.clone());
        while at != goal {
            let want = dist[at] - 1;
            at = self.nodes[at]
                .neighbors
                .iter()
                .filter(|n| dist.get(n) == Some(&want))
                .min()
                .expect("a predecessor on a shortest path exists");
            path.push(at.clone());
        }
        Ok(path)
    }

    /// All objects matching `query`, in node-id order. An empty query matches
    /// nothing.
    pub fn find_object(&self, query: &ObjectQuery) -> Vec<ObjectHit<'_>> {
        self.objects().filter(|h| query.matches(h.object)).collect()
    }

    /// Baseline ablation: keeps node ids, zones, edges, semantic labels and
    /// the entities themselves, drops everything that describes what the
    /// entities hold or what state they are in.
    pub fn strip_semantics(&self) -> SentMap {
        let mut out = self.clone();
        for node in out.nodes.values_mut() {
            if let Some(payload) = node.semantic.as_mut() {
                payload.description = None;
                payload.extra.clear();
                for entity in &mut payload.entities {
                    entity.objects.clear();
                    entity.state = None;
                    entity.extra.clear();
                }
            }
        }
        for person in &mut out.people {
            person.location = None;
        }
        out
    }

    /// Removes every object owner tag, leaving the rest of the map intact.
    pub fn strip_ownership(&self) -> SentMap {
        let mut out = self.clone();
        for node in out.nodes.values_mut() {
            for entity in node.semantic.iter_mut().flat_map(|p| p.entities.iter_mut()) {
                for object in &mut entity.objects {
                    object.owner = None;
                }
            }
        }
        out
    }

    /// Set of nodes reachable from `from` (including itself).
    pub fn reachable_from(&self, from: &str) -> BTreeSet<&NodeId> {
        let mut seen = BTreeSet::new();
        let Some((start, _)) = self.nodes.get_key_value(from) else {
            return seen;
        };
        seen.insert(start);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for t in &self.nodes[u].neighbors {
                if let Some((k, _)) = self.nodes.get_key_value(t) {
                    if seen.insert(k) {
                        queue.push_back(k);
                    }
                }
            }
        }
        seen
    }

    /// Checks every structural invariant. Paths point into the Scene JSON
    /// form of the map.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: JsonPath, message: String| out.push(Violation { path, message });
        let nodes_path = JsonPath::root().key("nodes");
        let person_names: HashSet<&str> = self.people.iter().map(|p| p.name.as_str()).collect();

        for (id, node) in &self.nodes {
            let np = nodes_path.key(id.as_str());
            if &node.id != id {
                push(np.clone(), format!("node keyed {id} carries id {}", node.id));
            }
            let mut seen = HashSet::new();
            for (i, t) in node.neighbors.iter().enumerate() {
                let p = np.key("neighbors").index(i);
                if t == id {
                    push(p, format!("self-loop on {id}"));
                } else if !self.nodes.contains_key(t) {
                    push(p, format!("dangling edge to unknown node {t:?}"));
                } else if !seen.insert(t) {
                    push(p, format!("duplicate edge to {t}"));
                }
            }
            let Some(payload) = &node.semantic else { continue };
            let sp = np.key("semantic");
            let mut entity_names = HashSet::new();
            for (ei, entity) in payload.entities.iter().enumerate() {
                let ep = sp.key("entities").index(ei);
                if !entity_names.insert(entity.name.as_str()) {
                    push(ep.key("name"), format!("duplicate entity name {:?}", entity.name));
                }
                if entity.state.is_some()
                    && !(entity.affords(AffordanceTag::Openable) && entity.affords(AffordanceTag::Closable))
                {
                    push(
                        ep.key("state"),
                        format!(
                            "entity {:?} has a state but lacks the openable/closable affordances",
                            entity.name
                        ),
                    );
                }
                let mut object_names = HashSet::new();
                for (oi, object) in entity.objects.iter().enumerate() {
                    let op = ep.key("objects").index(oi);
                    if !object_names.insert(object.name.as_str()) {
                        push(op.key("name"), format!("duplicate object name {:?}", object.name));
                    }
                    if let Some(owner) = &object.owner {
                        if !person_names.contains(owner.as_str()) {
                            push(op.key("owner"), format!("owner {owner:?} is not a declared person"));
                        }
                    }
                }
            }
        }

        let mut names = HashSet::new();
        for (i, person) in self.people.iter().enumerate() {
            let pp = JsonPath::root().key("people").index(i);
            if person.name.is_empty() {
                push(pp.key("name"), "person name is empty".to_string());
            } else if !names.insert(person.name.as_str()) {
                push(pp.key("name"), format!("duplicate person {:?}", person.name));
            }
            if let Some(loc) = &person.location {
                if !self.nodes.contains_key(loc) {
                    push(pp.key("location"), format!("location {loc:?} is not a node"));
                }
            }
        }
        out
    }
}
