//! Reduced-size runs of the verification suites.

use roiattn_core::checks;

fn assert_suite(r: checks::SuiteResult) {
    println!("{}: {}", r.name, r.summary);
    assert!(r.passed, "{}: {}", r.name, r.summary);
}

#[test]
fn gradients() {
    assert_suite(checks::gradient_suite(3, 11));
}

#[test]
fn double_normalization() {
    assert_suite(checks::dnorm_suite(1000, 12));
}

#[test]
fn oracles() {
    assert_suite(checks::oracle_suite(100, 13));
}

#[test]
fn identities() {
    assert_suite(checks::identity_suite(50, 14));
}

#[test]
fn tape() {
    assert_suite(checks::tape_suite(20, 15));
}

#[test]
fn permutation() {
    assert_suite(checks::permutation_suite(5, 16));
}

#[test]
fn roi_align_properties() {
    assert_suite(checks::roi_align_property_suite(100, 17));
}

#[test]
fn delta_round_trip() {
    assert_suite(checks::delta_round_trip_suite(10_000, 18));
}

#[test]
fn proposals() {
    assert_suite(checks::proposal_suite(10_000, 19));
}

#[test]
fn scene_census() {
    assert_suite(checks::scene_census_suite(300, 20));
}

#[test]
fn shared_attention() {
    assert_suite(checks::shared_attention_suite(3, 21));
}

#[test]
fn regression_only_encoding() {
    assert_suite(checks::regression_only_encoding_suite(22));
}

#[test]
fn loss() {
    assert_suite(checks::loss_suite(50, 23));
}
