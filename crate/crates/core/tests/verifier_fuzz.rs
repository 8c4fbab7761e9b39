mod support;

use support::fuzz::{conservation, soundness, ALL};

#[test]
fn perturbed_plans_are_never_falsely_accepted() {
    let stats = soundness(1500, 11).unwrap();
    assert!(stats.rejected > stats.plans / 2, "{stats:?}");
    assert_eq!(stats.by_perturbation.len(), ALL.len(), "{stats:?}");
}

#[test]
fn random_steps_conserve_objects_and_failures_are_no_ops() {
    let stats = conservation(10_000, 23).unwrap();
    assert!(stats.failures > 0 && stats.failures < stats.steps, "{stats:?}");
}
