//! Tape gradients against central finite differences.

mod common;

use common::checks::{worst_relative_error, Term, TOL};
use common::{tiny_batches, tiny_config};
use mhtn::network::StarNetwork;

fn check(t: Term) {
    for (lambda, seed) in [(0.1, 1), (0.7, 2)] {
        let (worst, n) = worst_relative_error(t, lambda, seed);
        assert!(worst < TOL, "{t:?} λ={lambda}: worst relative error {worst:e} over {n} entries");
    }
}

#[test]
fn single_modal_transfer_gradients() {
    check(Term::St);
}

#[test]
fn source_supervision_gradients() {
    check(Term::Sds);
}

#[test]
fn cross_modal_transfer_gradients() {
    check(Term::Ct);
}

#[test]
fn semantic_consistency_gradients() {
    check(Term::Sc);
}

#[test]
fn modal_adversarial_gradients_are_reversed_for_the_generator() {
    check(Term::Mc);
}

#[test]
fn combined_objective_gradients() {
    check(Term::Total);
}

#[test]
fn reversal_scales_generator_gradient_by_minus_lambda() {
    // same parameters, two reversal strengths: generator gradients scale with -λ,
    // discriminator gradients do not change
    let grads = |lambda: f64| {
        let cfg = tiny_config(lambda);
        let net = StarNetwork::build(cfg.clone(), 4).unwrap();
        let (docs, src) = tiny_batches(&cfg, 9, 5, 4);
        let (tape, terms, _) = net.objective(&docs, Some(&src)).unwrap();
        let g = net.group_gradients(&tape.backward(terms.mc.unwrap()).unwrap());
        (g, net.layout().clone())
    };
    let (a, layout) = grads(0.25);
    let (b, _) = grads(1.0);
    let disc = layout.discriminator.unwrap();
    for gi in 0..a.len() {
        for (ma, mb) in a[gi].iter().zip(&b[gi]) {
            for (&x, &y) in ma.values().iter().zip(mb.values()) {
                if gi == disc {
                    assert_eq!(x, y);
                } else {
                    assert!((x - 0.25 * y).abs() <= 1e-12 * y.abs().max(1e-300), "{x} vs 0.25·{y}");
                }
            }
        }
    }
}
