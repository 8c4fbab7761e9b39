//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod fuzz;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use sentmap_core::map::{AffordanceTag, Entity, EntityState, NavNode, NodeId, ObjectItem, Person, SemanticPayload};
use sentmap_core::planning::{Plan, SkillCall};
use sentmap_core::SentMap;
use serde_json::Value;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Knobs for [`random_map`].
#[derive(Clone, Copy)]
pub struct MapShape {
    pub max_nodes: usize,
    pub edge_p: f64,
    /// Every edge is two-way and the nodes form a connected chain.
    pub connected: bool,
    /// Throw in ids and names that need JSON-pointer escaping, plus unknown
    /// fields.
    pub awkward: bool,
}

impl MapShape {
    pub const ROUND_TRIP: MapShape = MapShape {
        max_nodes: 8,
        edge_p: 0.3,
        connected: false,
        awkward: true,
    };

    pub const WORLD: MapShape = MapShape {
        max_nodes: 8,
        edge_p: 0.2,
        connected: true,
        awkward: false,
    };
}

const ZONES: [&str; 3] = ["office", "lounge", "kitchen"];
const ENTITY_KINDS: [&str; 5] = ["table", "fridge", "drawer", "shelf", "sofa"];
const CATEGORIES: [&str; 6] = ["cup", "sponge", "drink", "tissue", "book", "remote"];
const PEOPLE: [&str; 3] = ["Bob", "Alice", "Carol"];

fn node_name(i: usize, rng: &mut StdRng, awkward: bool) -> String {
    if awkward && rng.random_bool(0.2) {
        ["a/b", "t~1", "x\"q", "üml", "n.0"][rng.random_range(0..5)].to_string() + &i.to_string()
    } else {
        format!("n{i}")
    }
}

fn extra(rng: &mut StdRng) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    if rng.random_bool(0.5) {
        m.insert(
            "x_note".to_string(),
            Value::from(format!("note {}", rng.random_range(0..100))),
        );
    }
    if rng.random_bool(0.2) {
        m.insert(
            "x_tags".to_string(),
            serde_json::json!(["a", {"k": [1, 2.5, null, true]}]),
        );
    }
    m
}

/// A valid map built from a seed. Object names are unique across the map so
/// the reference interpreter can track objects by name alone.
pub fn random_map(rng: &mut StdRng, shape: MapShape) -> SentMap {
    let n = rng.random_range(1..=shape.max_nodes);
    let mut ids = Vec::new();
    for i in 0..n {
        ids.push(NodeId::new(node_name(i, rng, shape.awkward)).unwrap());
    }
    let mut map = SentMap::new();
    for id in &ids {
        let mut node = NavNode::new(id.clone(), *ZONES.choose(rng).unwrap());
        if shape.awkward {
            node.extra = extra(rng);
        }
        map.add_nav_node(node).unwrap();
    }
    if shape.connected {
        for w in ids.windows(2) {
            map.add_edge(w[0].as_str(), w[1].as_str(), true).unwrap();
        }
    }
    for a in &ids {
        for b in &ids {
            if a != b && rng.random_bool(shape.edge_p) {
                let both = shape.connected || rng.random_bool(0.5);
                map.add_edge(a.as_str(), b.as_str(), both).unwrap();
            }
        }
    }
    let people: Vec<&str> = PEOPLE.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
    for p in &people {
        let location = rng.random_bool(0.8).then(|| ids.choose(rng).unwrap().clone());
        let mut person = Person::new(*p, location);
        if shape.awkward && rng.random_bool(0.3) {
            person.extra = extra(rng);
        }
        map.add_person(person).unwrap();
    }
    let mut object_serial = 0;
    for id in &ids {
        if !rng.random_bool(0.7) {
            continue;
        }
        let mut payload = SemanticPayload::new(format!("{} spot", id.as_str()));
        if rng.random_bool(0.4) {
            payload.description = Some("Somewhere to put things.".into());
        }
        for ei in 0..rng.random_range(0..=3) {
            let kind = *ENTITY_KINDS.choose(rng).unwrap();
            let mut entity = Entity::new(format!("{kind}{ei}"), kind);
            for tag in AffordanceTag::ALL {
                if rng.random_bool(0.6) {
                    entity.affordances.insert(tag);
                }
            }
            if entity.affords(AffordanceTag::Openable)
                && entity.affords(AffordanceTag::Closable)
                && rng.random_bool(0.7)
            {
                entity.state = Some(if rng.random_bool(0.6) {
                    EntityState::Closed
                } else {
                    EntityState::Open
                });
            }
            for _ in 0..rng.random_range(0..=3) {
                let category = *CATEGORIES.choose(rng).unwrap();
                let mut object = ObjectItem::new(format!("{category} {object_serial}"), category);
                object_serial += 1;
                if !people.is_empty() && rng.random_bool(0.3) {
                    object.owner = Some(people.choose(rng).unwrap().to_string());
                }
                if rng.random_bool(0.2) {
                    object.attributes.insert("color".into(), "red".into());
                }
                if shape.awkward {
                    object.extra = extra(rng);
                }
                entity.objects.push(object);
            }
            if shape.awkward {
                entity.extra = extra(rng);
            }
            payload.entities.push(entity);
        }
        if shape.awkward {
            payload.extra = extra(rng);
        }
        map.set_semantic(id.as_str(), Some(payload)).unwrap();
    }
    map
}

/// Random directed graph on up to `max` nodes, as an adjacency list keyed by
/// id. Neighbour lists are in insertion order.
pub fn random_digraph(rng: &mut StdRng, max: usize) -> Vec<(String, Vec<String>)> {
    let n = rng.random_range(1..=max);
    let ids: Vec<String> = (0..n).map(|i| format!("v{}", (b'a' + i as u8) as char)).collect();
    let p = rng.random_range(0.1..0.6);
    ids.iter()
        .map(|a| {
            let out = ids.iter().filter(|b| *b != a && rng.random_bool(p)).cloned().collect();
            (a.clone(), out)
        })
        .collect()
}

pub fn map_from_digraph(graph: &[(String, Vec<String>)]) -> SentMap {
    let mut map = SentMap::new();
    for (id, _) in graph {
        map.add_nav_node(NavNode::new(NodeId::new(id.as_str()).unwrap(), "z"))
            .unwrap();
    }
    for (id, out) in graph {
        for t in out {
            map.add_edge(id, t, false).unwrap();
        }
    }
    map
}

/// Fewest edges over every simple path from `s` to `t`, by exhaustive
/// depth-first enumeration.
pub fn brute_force_hops(graph: &[(String, Vec<String>)], s: &str, t: &str) -> Option<usize> {
    fn dfs(
        adj: &BTreeMap<&str, &[String]>,
        at: &str,
        t: &str,
        seen: &mut BTreeSet<String>,
        len: usize,
        best: &mut Option<usize>,
    ) {
        if at == t {
            *best = Some(best.map_or(len, |b| b.min(len)));
            return;
        }
        for next in adj[at].iter() {
            if seen.insert(next.clone()) {
                dfs(adj, next, t, seen, len + 1, best);
                seen.remove(next);
            }
        }
    }
    let adj: BTreeMap<&str, &[String]> = graph.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    let mut best = None;
    let mut seen = BTreeSet::from([s.to_string()]);
    dfs(&adj, s, t, &mut seen, 0, &mut best);
    best
}

pub fn adjacency(map: &SentMap) -> Vec<(String, Vec<String>)> {
    map.nodes()
        .map(|n| {
            (
                n.id.as_str().to_string(),
                n.neighbors.iter().map(|x| x.as_str().to_string()).collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Spot {
    On(String, String),
    Held,
    Given,
}

/// Step-by-step plan checker written against the skill descriptions only.
/// Objects are tracked by name, so it assumes names are unique in the map
/// and plans refer to objects by name.
pub struct Reference<'m> {
    map: &'m SentMap,
    robot: String,
    spots: BTreeMap<String, Spot>,
    closed: BTreeSet<(String, String)>,
}

impl<'m> Reference<'m> {
    pub fn new(map: &'m SentMap, start: &str) -> Self {
        let mut spots = BTreeMap::new();
        let mut closed = BTreeSet::new();
        for node in map.nodes() {
            for e in node.semantic.iter().flat_map(|p| p.entities.iter()) {
                if e.state == Some(EntityState::Closed) {
                    closed.insert((node.id.as_str().to_string(), e.name.clone()));
                }
                for o in &e.objects {
                    spots.insert(o.name.clone(), Spot::On(node.id.as_str().to_string(), e.name.clone()));
                }
            }
        }
        Reference {
            map,
            robot: start.to_string(),
            spots,
            closed,
        }
    }

    fn reachable(&self, to: &str) -> bool {
        let mut seen = BTreeSet::from([self.robot.clone()]);
        let mut queue = VecDeque::from([self.robot.clone()]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                return true;
            }
            for v in &self.map.node(&u).unwrap().neighbors {
                if seen.insert(v.as_str().to_string()) {
                    queue.push_back(v.as_str().to_string());
                }
            }
        }
        false
    }

    fn entity_here(&self, arg: &str) -> Option<&'m Entity> {
        let (name, node) = match arg.rsplit_once('@') {
            Some((e, n)) => (e, n),
            None => (arg, self.robot.as_str()),
        };
        if node != self.robot {
            return None;
        }
        self.map.entity(node, name)
    }

    fn held(&self) -> Option<&String> {
        self.spots.iter().find(|(_, s)| **s == Spot::Held).map(|(k, _)| k)
    }

    /// Applies one call; false means the step is illegal.
    pub fn step(&mut self, call: &SkillCall) -> bool {
        let a = &call.args;
        match (call.skill.as_str(), a.len()) {
            ("goto", 1) => {
                if !self.map.contains(&a[0]) || !self.reachable(&a[0]) {
                    return false;
                }
                self.robot = a[0].clone();
                true
            }
            ("pick", 1) => {
                let Some(Spot::On(node, entity)) = self.spots.get(&a[0]).cloned() else {
                    return false;
                };
                if node != self.robot || self.held().is_some() || self.closed.contains(&(node.clone(), entity.clone()))
                {
                    return false;
                }
                if !self
                    .map
                    .entity(&node, &entity)
                    .unwrap()
                    .affords(AffordanceTag::SupportsPick)
                {
                    return false;
                }
                self.spots.insert(a[0].clone(), Spot::Held);
                true
            }
            ("place", 2) => {
                let Some(e) = self.entity_here(&a[1]) else { return false };
                if self.held() != Some(&a[0])
                    || self.closed.contains(&(self.robot.clone(), e.name.clone()))
                    || !e.affords(AffordanceTag::SupportsPlace)
                {
                    return false;
                }
                self.spots
                    .insert(a[0].clone(), Spot::On(self.robot.clone(), e.name.clone()));
                true
            }
            (verb @ ("open" | "close"), 1) => {
                let Some(e) = self.entity_here(&a[0]) else { return false };
                let key = (self.robot.clone(), e.name.clone());
                if verb == "open" {
                    if !e.affords(AffordanceTag::Openable) {
                        return false;
                    }
                    self.closed.remove(&key);
                } else {
                    if !e.affords(AffordanceTag::Closable) {
                        return false;
                    }
                    self.closed.insert(key);
                }
                true
            }
            ("give", 2) => {
                let Some(p) = self.map.person(&a[1]) else { return false };
                if self.held() != Some(&a[0]) || p.location.as_ref().map(|l| l.as_str()) != Some(self.robot.as_str()) {
                    return false;
                }
                self.spots.insert(a[0].clone(), Spot::Given);
                true
            }
            _ => false,
        }
    }

    pub fn accepts(map: &SentMap, start: &str, plan: &Plan) -> bool {
        let mut r = Reference::new(map, start);
        plan.steps.iter().all(|c| r.step(c))
    }
}

/// Every identifier a plan could mention: node ids, entity names, object
/// names and categories, people.
pub fn map_vocabulary(map: &SentMap) -> BTreeSet<String> {
    let mut v = BTreeSet::new();
    for node in map.nodes() {
        v.insert(node.id.as_str().to_lowercase());
        for e in node.semantic.iter().flat_map(|p| p.entities.iter()) {
            v.insert(e.name.to_lowercase());
            for o in &e.objects {
                v.insert(o.name.to_lowercase());
                v.insert(o.category.to_lowercase());
            }
        }
    }
    for p in map.people() {
        v.insert(p.name.to_lowercase());
    }
    v
}
