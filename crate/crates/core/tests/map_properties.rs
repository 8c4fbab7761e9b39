mod support;

use proptest::prelude::*;
use sentmap_core::eval::reference_environment;
use sentmap_core::map::EntityState;
use sentmap_core::map_io::apply_edit;
use sentmap_core::{parse_map, serialize_map, validate_map, EditCommand, ObjectQuery};
use serde_json::Value;
use support::{adjacency, brute_force_hops, map_from_digraph, random_digraph, random_map, rng, MapShape};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn generated_maps_round_trip(seed in any::<u64>()) {
        let map = random_map(&mut rng(seed), MapShape::ROUND_TRIP);
        let text = serialize_map(&map);
        let back = parse_map(&text).unwrap();
        prop_assert_eq!(&back, &map);
        prop_assert_eq!(serialize_map(&back), text.clone());
        let report = validate_map(text.as_bytes());
        prop_assert_eq!(report.error_count(), 0, "{}", report);
    }

    #[test]
    fn reordered_documents_reach_the_same_canonical_form(seed in any::<u64>()) {
        let map = random_map(&mut rng(seed), MapShape::ROUND_TRIP);
        let canonical = serialize_map(&map);
        // serde_json without preserve_order sorts keys anyway, so scramble
        // by emitting compact text with keys reversed by hand.
        fn reversed(v: &Value) -> String {
            match v {
                Value::Object(m) => {
                    let parts: Vec<String> = m
                        .iter()
                        .rev()
                        .map(|(k, v)| format!("{}:{}", Value::from(k.as_str()), reversed(v)))
                        .collect();
                    format!("{{{}}}", parts.join(","))
                }
                Value::Array(a) => format!("[{}]", a.iter().map(reversed).collect::<Vec<_>>().join(",")),
                other => other.to_string(),
            }
        }
        let scrambled = reversed(&serde_json::from_str(&canonical).unwrap());
        prop_assert_eq!(serialize_map(&parse_map(&scrambled).unwrap()), canonical);
    }

    #[test]
    fn stripping_keeps_graph_and_is_idempotent(seed in any::<u64>()) {
        let map = random_map(&mut rng(seed), MapShape::ROUND_TRIP);
        let stripped = map.strip_semantics();
        prop_assert_eq!(adjacency(&stripped), adjacency(&map));
        prop_assert_eq!(stripped.object_count(), 0);
        prop_assert_eq!(stripped.strip_semantics(), stripped.clone());
        let labels = |m: &sentmap_core::SentMap| {
            m.semantic_nodes().map(|n| n.semantic.as_ref().unwrap().label.clone()).collect::<Vec<_>>()
        };
        prop_assert_eq!(labels(&stripped), labels(&map));
    }

    #[test]
    fn category_queries_partition_objects(seed in any::<u64>()) {
        let map = random_map(&mut rng(seed), MapShape::ROUND_TRIP);
        let categories: std::collections::BTreeSet<String> =
            map.objects().map(|h| h.object.category.to_lowercase()).collect();
        let mut seen = Vec::new();
        for c in &categories {
            for h in map.find_object(&ObjectQuery::category(c)) {
                seen.push((h.node.clone(), h.entity.name.clone(), h.object.name.clone()));
            }
        }
        let mut all: Vec<_> = map
            .objects()
            .map(|h| (h.node.clone(), h.entity.name.clone(), h.object.name.clone()))
            .collect();
        seen.sort();
        all.sort();
        prop_assert_eq!(seen, all);
    }
}

#[test]
fn reference_map_round_trips_byte_for_byte() {
    let text = support::read_fixture("reference.json");
    let map = parse_map(&text).unwrap();
    assert_eq!(serialize_map(&map), text);
    assert_eq!(parse_map(&serialize_map(&map)).unwrap(), map);
}

#[test]
fn hop_counts_match_brute_force_on_random_digraphs() {
    let mut r = rng(0x5eed);
    for _ in 0..100 {
        let graph = random_digraph(&mut r, 8);
        let map = map_from_digraph(&graph);
        for (s, _) in &graph {
            for (t, _) in &graph {
                let expected = brute_force_hops(&graph, s, t);
                match map.shortest_path(s, t) {
                    Ok(path) => {
                        assert_eq!(Some(path.len() - 1), expected, "{s}->{t} in {graph:?}");
                        assert_eq!(path.first().unwrap().as_str(), s);
                        assert_eq!(path.last().unwrap().as_str(), t);
                        for w in path.windows(2) {
                            assert!(map.node(w[0].as_str()).unwrap().neighbors.contains(&w[1]));
                        }
                        assert_eq!(map.shortest_path(s, t).unwrap(), path);
                    }
                    Err(_) => assert_eq!(expected, None, "{s}->{t} in {graph:?}"),
                }
            }
        }
    }
}

/// JSON pointers of every leaf or subtree that differs between `a` and `b`.
fn diff_paths(a: &Value, b: &Value, at: String, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = format!("{at}/{}", k.replace('~', "~0").replace('/', "~1"));
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_paths(u, v, p, out),
                    _ => out.push(p),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                diff_paths(u, v, format!("{at}/{i}"), out);
            }
        }
        _ if a != b => out.push(at),
        _ => {}
    }
}

fn reference_edits() -> Vec<EditCommand> {
    let map = reference_environment();
    let mut edits = Vec::new();
    for node in map.semantic_nodes() {
        let id = node.id.as_str().to_string();
        let payload = node.semantic.as_ref().unwrap();
        edits.push(EditCommand::RenameLabel {
            node: id.clone(),
            label: format!("{} (checked)", payload.label),
        });
        edits.push(EditCommand::SetDescription {
            node: id.clone(),
            description: None,
        });
        for e in &payload.entities {
            if e.state.is_some() {
                edits.push(EditCommand::SetEntityState {
                    node: id.clone(),
                    entity: e.name.clone(),
                    state: Some(EntityState::Open),
                });
            }
            for o in &e.objects {
                edits.push(EditCommand::SetOwner {
                    node: id.clone(),
                    entity: e.name.clone(),
                    object: o.name.clone(),
                    owner: if o.owner.is_some() { None } else { Some("Alice".into()) },
                });
            }
            edits.push(EditCommand::RemoveObject {
                node: id.clone(),
                entity: e.name.clone(),
                object: e.objects.first().map(|o| o.name.clone()).unwrap_or_default(),
            });
        }
    }
    edits.push(EditCommand::SetPersonLocation {
        name: "Bob".into(),
        location: None,
    });
    edits
}

#[test]
fn edits_only_touch_their_scope() {
    let map = reference_environment();
    let before: Value = serde_json::from_str(&serialize_map(&map)).unwrap();
    let mut applied = 0;
    for cmd in reference_edits() {
        let Ok(scope) = cmd.scope(&map) else { continue };
        let Ok(edited) = apply_edit(&map, &cmd) else { continue };
        applied += 1;
        let after: Value = serde_json::from_str(&serialize_map(&edited)).unwrap();
        let mut diffs = Vec::new();
        diff_paths(&before, &after, String::new(), &mut diffs);
        let scope = scope.to_string();
        for d in &diffs {
            assert!(d.starts_with(&scope), "{cmd:?} changed {d}, outside {scope}");
        }
    }
    assert!(applied > 30, "only {applied} edits applied");
}

#[test]
fn opening_then_closing_restores_the_map() {
    let map = reference_environment();
    let set = |state| EditCommand::SetEntityState {
        node: "kitchen_fridge".into(),
        entity: "fridge".into(),
        state: Some(state),
    };
    let opened = apply_edit(&map, &set(EntityState::Open)).unwrap();
    assert_ne!(opened, map);
    assert_eq!(apply_edit(&opened, &set(EntityState::Closed)).unwrap(), map);
}
