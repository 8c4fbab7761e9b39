//! Semantically enhanced topological maps for robot task planning.
//!
//! The crate covers the whole pipeline: the map model ([`map`]), its JSON
//! wire form ([`map_io`]), building maps from operator walkthroughs
//! ([`builder`]), skill-level planning with language models or a symbolic
//! oracle ([`planning`]), plan grounding against a discrete world
//! ([`sim`]) and the evaluation harness ([`eval`]).

pub mod builder;
pub mod endpoint;
pub mod eval;
pub mod extract;
pub mod map;
pub mod map_io;
pub mod planning;
pub mod pointer;
pub mod sim;

pub use map::{
    AffordanceTag, Entity, EntityState, MapError, NavNode, NodeId, ObjectHit, ObjectItem, ObjectQuery, Person,
    SemanticPayload, SentMap,
};
pub use map_io::{parse_map, serialize_map, validate_map, EditCommand, ValidationReport};
