//! Analytic gradients of every training loss against central finite
//! differences in double precision, through the full miniature model on
//! random 4x4x3 inputs.

mod common;

use common::{LossKind, Scaffold, REL_TOL};

fn check(kind: LossKind) {
    let scaffold = Scaffold::new(1234);
    let err = scaffold.max_relative_error(kind);
    assert!(
        err < REL_TOL,
        "{}: max relative gradient error {err:.3e} exceeds {REL_TOL:.0e}",
        kind.name()
    );
}

#[test]
fn pixel_loss_gradients_match_central_differences() {
    check(LossKind::Pixel);
}

#[test]
fn feature_loss_gradients_match_central_differences() {
    check(LossKind::Feature);
}

#[test]
fn gan_generator_loss_gradients_match_central_differences() {
    check(LossKind::GanGenerator);
}

#[test]
fn transitive_predicted_gradients_match_central_differences() {
    check(LossKind::TransitivePredicted);
}

#[test]
fn transitive_observed_gradients_match_central_differences() {
    check(LossKind::TransitiveObserved);
}

#[test]
fn tv_loss_gradients_match_central_differences() {
    check(LossKind::Tv);
}

#[test]
fn weighted_tv_loss_gradients_match_central_differences() {
    check(LossKind::WeightedTv);
}

#[test]
fn critic_loss_gradients_match_central_differences() {
    let scaffold = Scaffold::new(1234);
    let err = scaffold.critic_max_relative_error();
    assert!(
        err < REL_TOL,
        "critic: max relative gradient error {err:.3e} exceeds {REL_TOL:.0e}"
    );
}
