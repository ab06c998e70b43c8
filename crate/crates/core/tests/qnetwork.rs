#![cfg(not(feature = "f32"))]

mod common;

use common::{random_tensor, rel_err, rng};
use rand::Rng;
use spikeq::autodiff::Graph;
use spikeq::qnetwork::{ArchSpec, ForwardOptions, Profile, QNetwork, Variant};
use spikeq::spiking::ContextSignal;
use spikeq::{Error, Tensor};

const RELAXED_TRAIN: ForwardOptions = ForwardOptions {
    bn: spikeq::qnetwork::BnMode::Train,
    relaxed: true,
};

fn loss_of(net: &QNetwork, x: &Tensor, ctx: &ContextSignal, actions: &[usize], y: &[f64]) -> f64 {
    let mut g = Graph::new();
    let fwd = net.forward(&mut g, x, ctx, RELAXED_TRAIN).unwrap();
    let l = g.mse_gather(fwd.q, actions, y).unwrap();
    g.value(l).item()
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let mut net = QNetwork::build(ArchSpec::toy(Variant::Add), seed).unwrap();
        let x = random_tensor(&mut r, &[3, 2, 12, 12], 1.0).data().iter().map(|v| v.abs()).collect();
        let x = Tensor::new(vec![3, 2, 12, 12], x).unwrap();
        let ctx = ContextSignal::one_hot(r.random_range(0..3), 3).unwrap();
        let actions: Vec<usize> = (0..3).map(|_| r.random_range(0..4)).collect();
        let targets: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let fwd = net.forward(&mut g, &x, &ctx, RELAXED_TRAIN).unwrap();
        let l = g.mse_gather(fwd.q, &actions, &targets).unwrap();
        let grads = g.backward(l, net.params()).unwrap();

        let h = 1e-6;
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        let ids: Vec<_> = net.params().ids().collect();
        for id in ids {
            let n = net.params().get(id).len();
            for _ in 0..n.min(12) {
                let i = r.random_range(0..n);
                let orig = net.params().get(id).data()[i];
                net.params_mut().get_mut(id).data_mut()[i] = orig + h;
                let plus = loss_of(&net, &x, &ctx, &actions, &targets);
                net.params_mut().get_mut(id).data_mut()[i] = orig - h;
                let minus = loss_of(&net, &x, &ctx, &actions, &targets);
                net.params_mut().get_mut(id).data_mut()[i] = orig;
                numeric.push((plus - minus) / (2.0 * h));
                analytic.push(grads.param(id).data()[i]);
            }
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn output_shape_and_param_counts() {
    let expected = [
        (Variant::Dqn, 1_693_682),
        (Variant::Dsqn, 1_693_682),
        (Variant::DqnD, 3_300_339),
        (Variant::DsqnD, 3_300_339),
        (Variant::Add, 3_300_357),
    ];
    for (v, n) in expected {
        let net = QNetwork::build(ArchSpec::for_profile(Profile::Paper, v), 0).unwrap();
        assert_eq!(net.count_trainable(), n, "{v:?}");
    }
    for v in Variant::ALL {
        let net = QNetwork::build(ArchSpec::toy(v), 0).unwrap();
        let ctx = ContextSignal::one_hot(0, 3).unwrap();
        let x = random_tensor(&mut rng(1), &[5, 2, 12, 12], 1.0);
        assert_eq!(net.q_batch(&x, &ctx).unwrap().shape(), &[5, 4]);
    }
}

#[test]
fn context_changes_q_values() {
    let net = QNetwork::build(ArchSpec::toy(Variant::Add), 3).unwrap();
    let x = random_tensor(&mut rng(2), &[2, 12, 12], 1.0);
    let a = net.q_forward(&x, &ContextSignal::one_hot(0, 3).unwrap()).unwrap();
    let b = net.q_forward(&x, &ContextSignal::one_hot(2, 3).unwrap()).unwrap();
    let diff = a.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    assert!(diff > 0.0);
}

#[test]
fn context_is_ignored_without_dendrites() {
    let net = QNetwork::build(ArchSpec::toy(Variant::Dsqn), 3).unwrap();
    let x = random_tensor(&mut rng(2), &[2, 12, 12], 1.0);
    let a = net.q_forward(&x, &ContextSignal::one_hot(0, 3).unwrap()).unwrap();
    let b = net.q_forward(&x, &ContextSignal::one_hot(1, 3).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_shapes_are_rejected() {
    let net = QNetwork::build(ArchSpec::toy(Variant::Add), 0).unwrap();
    let ctx = ContextSignal::one_hot(0, 3).unwrap();
    assert!(matches!(net.q_batch(&Tensor::zeros(&[1, 2, 10, 12]), &ctx), Err(Error::Shape { .. })));
    let short = ContextSignal::one_hot(0, 2).unwrap();
    assert!(matches!(
        net.q_batch(&Tensor::zeros(&[1, 2, 12, 12]), &short),
        Err(Error::ContextLength { .. })
    ));
}

#[test]
fn running_stats_follow_batch_statistics() {
    let mut net = QNetwork::build(ArchSpec::toy(Variant::Dqn), 0).unwrap();
    let ctx = ContextSignal::one_hot(0, 1).unwrap();
    let x = random_tensor(&mut rng(4), &[8, 2, 12, 12], 1.0);
    let mut g = Graph::new();
    let fwd = net.forward(&mut g, &x, &ctx, ForwardOptions::TRAIN).unwrap();
    let stats = g.batch_stats(fwd.bn_nodes[0]).unwrap().clone();
    net.absorb_batch_stats(&g, &fwd);
    let r = &net.running_stats()[0];
    for c in 0..r.mean.len() {
        assert!((r.mean[c] - 0.1 * stats.mean[c]).abs() < 1e-15);
        assert!((r.var[c] - (0.9 + 0.1 * stats.var[c])).abs() < 1e-15);
    }
}

#[test]
fn construction_is_deterministic() {
    let a = QNetwork::build(ArchSpec::toy(Variant::Add), 9).unwrap();
    let b = QNetwork::build(ArchSpec::toy(Variant::Add), 9).unwrap();
    let c = QNetwork::build(ArchSpec::toy(Variant::Add), 10).unwrap();
    assert_eq!(a.theta(), b.theta());
    assert_ne!(a.theta(), c.theta());
}
