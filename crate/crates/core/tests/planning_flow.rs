mod support;

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::Rng;
use sentmap_core::endpoint::ScriptedTransport;
use sentmap_core::eval::{reference_environment, tasks_table1, tasks_table2};
use sentmap_core::planning::{
    assemble_prompt, default_skill_api, oracle_plan, parse_plan, plan_with_endpoint, EndpointPlanError, GoalSpec,
    ModelSettings, OracleError, Plan, SkillCall,
};
use sentmap_core::sim::SimVerifier;
use sentmap_core::{serialize_map, NodeId, ObjectQuery, SentMap};
use support::{adjacency, brute_force_hops, random_map, rng, MapShape};

fn settings() -> ModelSettings {
    ModelSettings {
        model: "planner".into(),
        temperature: 0.0,
    }
}

#[test]
fn ownership_tags_decide_whose_item_is_meant() {
    let truth = reference_environment();
    let api = default_skill_api();
    let ownership: Vec<_> = tasks_table2()
        .into_iter()
        .filter(|t| t.goal.object().is_some_and(|q| q.owner.is_some()))
        .collect();
    assert_eq!(ownership.len(), 3);
    let untagged = truth.strip_ownership();
    for task in &ownership {
        let plan = oracle_plan(&truth, &task.goal, task.start.as_str(), &api).unwrap();
        let picked = &plan.steps.iter().find(|c| c.skill == "pick").unwrap().args[0];
        let owned = truth.find_object(&ObjectQuery::name(picked));
        assert_eq!(owned[0].object.owner.as_deref(), Some("Bob"), "{}", task.name);
        match oracle_plan(&untagged, &task.goal, task.start.as_str(), &api) {
            // Without tags the owner cannot be confirmed even for a lone
            // candidate; the drinks are also genuinely several.
            Err(OracleError::AmbiguousTarget(candidates)) => {
                let drink = task.goal.object().unwrap().category.as_deref() == Some("drink");
                assert!(
                    !candidates.is_empty() && (!drink || candidates.len() >= 2),
                    "{}",
                    task.name
                );
            }
            other => panic!("{}: {other:?}", task.name),
        }
    }
}

#[test]
fn baseline_map_surfaces_missing_information() {
    let baseline = reference_environment().strip_semantics();
    for task in tasks_table1() {
        let err = oracle_plan(&baseline, &task.goal, task.start.as_str(), &default_skill_api()).unwrap_err();
        assert!(
            matches!(err, OracleError::TargetNotFound(_) | OracleError::AmbiguousTarget(_)),
            "{}: {err:?}",
            task.name
        );
    }
}

#[test]
fn oracle_takes_the_fewest_hops() {
    let api = default_skill_api();
    let mut r = rng(41);
    let mut checked = 0;
    while checked < 200 {
        let map = random_map(&mut r, MapShape::WORLD);
        let hits: Vec<_> = map.objects().map(|h| (h.node.clone(), h.object.name.clone())).collect();
        let Some((object_node, name)) = hits.choose(&mut r).cloned() else {
            continue;
        };
        let ids: Vec<NodeId> = map.node_ids().cloned().collect();
        let start = ids.choose(&mut r).unwrap().clone();
        let object = ObjectQuery::name(&name);
        let (goal, dest) = match r.random_range(0..3) {
            0 => (GoalSpec::ObjectHeld { object }, None),
            1 => {
                let node = ids.choose(&mut r).unwrap().clone();
                let dest = (node != object_node).then(|| node.clone());
                (GoalSpec::ObjectAtNode { object, node }, dest)
            }
            _ => {
                let Some(p) = map
                    .people()
                    .iter()
                    .filter(|p| p.location.is_some())
                    .collect::<Vec<_>>()
                    .choose(&mut r)
                    .copied()
                else {
                    continue;
                };
                let goal = GoalSpec::ObjectGiven {
                    object,
                    person: p.name.clone(),
                };
                (goal, p.location.clone())
            }
        };
        let Ok(plan) = oracle_plan(&map, &goal, start.as_str(), &api) else {
            continue;
        };
        checked += 1;
        let graph = adjacency(&map);
        let mut at = start.as_str().to_string();
        let mut hops = 0;
        for call in plan.steps.iter().filter(|c| c.skill == "goto") {
            hops += brute_force_hops(&graph, &at, &call.args[0]).unwrap();
            at = call.args[0].clone();
        }
        let satisfied = matches!(&goal, GoalSpec::ObjectAtNode { node, .. } if *node == object_node);
        let mut expected = brute_force_hops(&graph, start.as_str(), object_node.as_str()).unwrap();
        if satisfied {
            expected = 0;
        } else if let Some(d) = dest {
            expected += brute_force_hops(&graph, object_node.as_str(), d.as_str()).unwrap();
        }
        assert_eq!(hops, expected, "{goal} from {start}: {plan:?}");
    }
}

#[test]
fn stripping_never_changes_a_successful_answer() {
    let api = default_skill_api();
    let mut cases: Vec<(SentMap, GoalSpec, String)> = Vec::new();
    let truth = reference_environment();
    for t in tasks_table1().into_iter().chain(tasks_table2()) {
        cases.push((truth.clone(), t.goal, t.start.as_str().to_string()));
    }
    let mut r = rng(43);
    while cases.len() < 300 {
        let map = random_map(&mut r, MapShape::WORLD);
        let categories: Vec<String> = map.objects().map(|h| h.object.category.clone()).collect();
        let Some(c) = categories.choose(&mut r).cloned() else {
            continue;
        };
        let start = map.node_ids().next().unwrap().as_str().to_string();
        cases.push((
            map,
            GoalSpec::ObjectHeld {
                object: ObjectQuery::category(c),
            },
            start,
        ));
    }
    for (map, goal, start) in cases {
        let full = oracle_plan(&map, &goal, &start, &api);
        match oracle_plan(&map.strip_semantics(), &goal, &start, &api) {
            Ok(plan) => assert_eq!(full.as_ref().ok(), Some(&plan), "{goal}"),
            Err(e) => assert!(
                matches!(e, OracleError::TargetNotFound(_) | OracleError::AmbiguousTarget(_)),
                "{goal}: {e:?}"
            ),
        }
    }
}

#[test]
fn prompt_embeds_scene_verbatim_and_stripped_prompt_hides_objects() {
    let truth = reference_environment();
    let api = default_skill_api();
    let prompt = assemble_prompt(&truth, &api, "get me a sponge").unwrap();
    assert_eq!(prompt.scene, serialize_map(&truth));
    assert!(prompt.render().contains(&prompt.scene));
    assert_eq!(
        prompt.render(),
        assemble_prompt(&truth, &api, "get me a sponge").unwrap().render()
    );

    let stripped = assemble_prompt(&truth.strip_semantics(), &api, "Please help me out.")
        .unwrap()
        .render();
    for hit in truth.objects() {
        for word in [&hit.object.category, &hit.object.name] {
            assert!(
                !stripped.contains(word.as_str()),
                "{word:?} leaks into the baseline prompt"
            );
        }
    }
}

fn plan_wrappers(json: &str) -> Vec<String> {
    vec![
        json.to_string(),
        format!("```json\n{json}\n```"),
        format!("```\n{json}\n```"),
        format!("Plan:\n{json}"),
        format!("{json}\n\nThis should do it."),
        format!("First I go to the sink, then pick.\n```json\n{json}\n```\nDone."),
        format!("  {json}  "),
        format!("Steps [in order]:\n{json}"),
        format!("```json\n{json}\n```\n\nAlternative: [maybe] not needed."),
        format!("Reasoning: the sponge is {{likely}} at the sink.\n\n{json}"),
        format!("<plan>{json}</plan>"),
        format!("**Plan**\n```JSON\n{json}\n```"),
        format!("Here is a list [1, 2] of thoughts, and the plan:\n{json}"),
        format!("```python\nprint('x')\n```\n```json\n{json}\n```"),
        format!("Answer:\r\n{json}\r\n"),
        format!("{json}\n[note] kept it short."),
        format!("> quoted context\n\n{json}\n\n-- planner"),
        format!("The robot should: {json} (verified mentally)."),
        format!("I considered [\"goto\"] alone but chose:\n```json\n{json}\n```"),
        format!("\n\n\n{json}\n\n\n"),
    ]
}

#[test]
fn plans_survive_twenty_reply_wrappers() {
    let api = default_skill_api();
    let expected = Plan::new(vec![
        SkillCall::new("goto", ["kitchen_sink"]),
        SkillCall::new("pick", ["sponge"]),
    ]);
    let json = serde_json::to_string_pretty(&expected.steps).unwrap();
    let compact = serde_json::to_string(&expected.steps).unwrap();
    let variants = plan_wrappers(&json);
    assert_eq!(variants.len(), 20);
    for reply in variants.into_iter().chain(plan_wrappers(&compact)) {
        let plan = parse_plan(&reply, &api).unwrap_or_else(|e| panic!("{reply:?}: {e}"));
        assert_eq!(plan.steps, expected.steps, "{reply:?}");
    }
}

fn arb_call() -> impl Strategy<Value = SkillCall> {
    let word = "[a-z][a-z_ ]{0,10}";
    prop_oneof![
        word.prop_map(|a| SkillCall::new("goto", [a])),
        word.prop_map(|a| SkillCall::new("pick", [a])),
        (word, word).prop_map(|(a, b)| SkillCall::new("place", [a, b])),
        word.prop_map(|a| SkillCall::new("open", [a])),
        word.prop_map(|a| SkillCall::new("close", [a])),
        (word, word).prop_map(|(a, b)| SkillCall::new("give", [a, b])),
    ]
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(
        steps in prop::collection::vec(arb_call(), 0..8),
        rationale in proptest::option::of("[A-Za-z ,.]{1,40}"),
    ) {
        let plan = Plan { steps, rationale: rationale.map(|r| r.trim().to_string()).filter(|r| !r.is_empty()) };
        let parsed = parse_plan(&plan.render(), &default_skill_api()).unwrap();
        prop_assert_eq!(parsed, plan);
    }
}

fn verifier<'m>(map: &'m SentMap, start: &str) -> SimVerifier<'m> {
    SimVerifier {
        map,
        start: NodeId::new(start).unwrap(),
        api: default_skill_api(),
    }
}

#[test]
fn hallucinated_node_is_repaired_in_one_extra_round() {
    let truth = reference_environment();
    let api = default_skill_api();
    let prompt = assemble_prompt(&truth, &api, "get me a sponge").unwrap();
    let wrong = Plan::new(vec![
        SkillCall::new("goto", ["pantry"]),
        SkillCall::new("pick", ["sponge"]),
    ])
    .render();
    let right = Plan::new(vec![
        SkillCall::new("goto", ["kitchen_sink"]),
        SkillCall::new("pick", ["sponge"]),
    ])
    .render();
    let transport = ScriptedTransport::new(vec![wrong.as_str(), right.as_str()]);
    let out = plan_with_endpoint(
        &prompt,
        &transport,
        &settings(),
        &api,
        &verifier(&truth, "office_desk"),
        2,
    )
    .unwrap();
    assert_eq!(out.plan.steps[0].args[0], "kitchen_sink");
    assert_eq!(out.transcript.len(), 2);
    let repair = serde_json::to_string(&out.transcript.0[1].request).unwrap();
    assert!(repair.contains("unknown-node") && repair.contains("pantry"), "{repair}");
}

#[test]
fn refusal_and_exhausted_budget() {
    let truth = reference_environment();
    let api = default_skill_api();
    let prompt = assemble_prompt(&truth, &api, "get me a sponge").unwrap();
    let refuse = ScriptedTransport::new(vec!["REFUSE: I need more context about where things are."]);
    assert!(matches!(
        plan_with_endpoint(&prompt, &refuse, &settings(), &api, &verifier(&truth, "office_desk"), 2),
        Err(EndpointPlanError::ModelRefusal { .. })
    ));

    let wrong = Plan::new(vec![SkillCall::new("goto", ["pantry"])]).render();
    let stubborn = ScriptedTransport::new(vec![wrong.as_str(); 3]);
    match plan_with_endpoint(
        &prompt,
        &stubborn,
        &settings(),
        &api,
        &verifier(&truth, "office_desk"),
        2,
    ) {
        Err(e @ EndpointPlanError::PlanRejected { .. }) => assert_eq!(e.transcript().len(), 3),
        other => panic!("{other:?}"),
    }
}
