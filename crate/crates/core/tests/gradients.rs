mod common;

use common::{
    check_gradient_penalty, check_network, layer_cases, small_critic, small_generator, FD_TOL,
};
use csilab::netcore::Mode;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, net, mode) in layer_cases() {
        let r = check_network(&net, mode, 3, 11);
        assert!(
            r.params < FD_TOL,
            "{name}: parameter gradient error {}",
            r.params
        );
        assert!(
            r.inputs < FD_TOL,
            "{name}: input gradient error {}",
            r.inputs
        );
    }
}

#[test]
fn generator_gradients_match_finite_differences() {
    let r = check_network(&small_generator(), Mode::Train, 3, 5);
    assert!(
        r.params < FD_TOL && r.inputs < FD_TOL,
        "{} {} {:?}",
        r.params,
        r.inputs,
        r.worst
    );
}

#[test]
fn critic_gradients_match_finite_differences() {
    for mode in [Mode::Train, Mode::Eval] {
        let r = check_network(&small_critic(), mode, 3, 6);
        assert!(
            r.params < FD_TOL && r.inputs < FD_TOL,
            "{mode:?}: {} {}",
            r.params,
            r.inputs
        );
    }
}

#[test]
fn gradient_penalty_double_backprop_matches_finite_differences() {
    let err = check_gradient_penalty(9);
    assert!(err < FD_TOL, "{err}");
}
