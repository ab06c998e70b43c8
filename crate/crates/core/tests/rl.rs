#![cfg(not(feature = "f32"))]

mod common;

use common::{random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;
use spikeq::autodiff::{Adam, AdamConfig, Graph};
use spikeq::qnetwork::{ArchSpec, ForwardOptions, QNetwork, Variant};
use spikeq::rl::{double_q_target, epsilon_greedy, sync_target, EpsilonSchedule, ReplayBuffer, Transition};
use spikeq::spiking::ContextSignal;
use spikeq::{Error, Tensor};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn transition(tag: usize) -> Transition {
    Transition {
        phi: Tensor::full(&[1], tag as f64),
        action: 0,
        reward: tag as f64,
        phi_next: Tensor::full(&[1], tag as f64 + 1.0),
        terminal: false,
    }
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn fifo_eviction_keeps_newest() {
    let mut buf = ReplayBuffer::new(2);
    for t in 1..=3 {
        buf.push(transition(t));
    }
    let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, vec![2.0, 3.0]);
}

#[test]
fn sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(16);
    for t in 0..16 {
        buf.push(transition(t));
    }
    let mut r = rng(11);
    let mut counts = [0u64; 16];
    for _ in 0..100_000 {
        let s = buf.sample(1, &mut r).unwrap();
        counts[s[0].reward as usize] += 1;
    }
    let p = chi_square_p(&counts);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn batches_have_distinct_members() {
    let mut buf = ReplayBuffer::new(64);
    for t in 0..40 {
        buf.push(transition(t));
    }
    let mut r = rng(2);
    for _ in 0..100 {
        let mut idx = buf.sample_indices(40, &mut r).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..40).collect::<Vec<_>>());
    }
    assert!(matches!(buf.sample(41, &mut r), Err(Error::InsufficientSamples { .. })));
}

#[test]
fn epsilon_schedule_values() {
    let s = EpsilonSchedule::default();
    assert_eq!(s.value(0), 1.0);
    assert_eq!(s.value(1_000_000), 0.1);
    assert_eq!(s.value(5_000_000), 0.1);
    assert_eq!(s.value(500_000), 0.55);
}

/// Per-sample Double-DQN target with an explicit argmax loop.
fn brute_force_target(r: f64, terminal: bool, q: &[f64], q_star: &[f64], gamma: f64) -> f64 {
    if terminal {
        return r;
    }
    let mut best = 0;
    for a in 1..q.len() {
        if q[a] > q[best] {
            best = a;
        }
    }
    r + gamma * q_star[best]
}

#[test]
fn double_q_target_matches_brute_force() {
    let mut r = rng(3);
    for _ in 0..10_000 {
        let b = r.random_range(1..9);
        let a = r.random_range(1..6);
        let q = random_tensor(&mut r, &[b, a], 5.0);
        let qs = random_tensor(&mut r, &[b, a], 5.0);
        let rewards: Vec<f64> = (0..b).map(|_| r.random_range(-1.0..1.0)).collect();
        let terminals: Vec<bool> = (0..b).map(|_| r.random_bool(0.3)).collect();
        let gamma = r.random_range(0.0..0.999);
        let y = double_q_target(&rewards, &terminals, &q, &qs, gamma).unwrap();
        for i in 0..b {
            let want = brute_force_target(rewards[i], terminals[i], q.row(i), qs.row(i), gamma);
            if terminals[i] {
                assert_eq!(y[i], rewards[i]);
            }
            assert!((y[i] - want).abs() <= 1e-12 * want.abs().max(1e-300), "{} vs {want}", y[i]);
        }
    }
}

#[test]
fn double_q_uses_online_argmax() {
    let q = Tensor::new(vec![1, 2], vec![1.0, 5.0]).unwrap();
    let qs = Tensor::new(vec![1, 2], vec![10.0, 2.0]).unwrap();
    let y = double_q_target(&[1.0], &[false], &q, &qs, 0.99).unwrap();
    assert!((y[0] - 2.98).abs() < 1e-12);
}

#[test]
fn epsilon_greedy_contract() {
    let mut r = rng(4);
    let q = vec![0.0, 2.0, 2.0, 1.0];
    let mut counts = [0u64; 4];
    for _ in 0..40_000 {
        counts[epsilon_greedy(&mut r, 1.0, 4, || Ok(q.clone())).unwrap()] += 1;
    }
    assert!(chi_square_p(&counts) > 0.01, "{counts:?}");
    for _ in 0..100 {
        assert_eq!(epsilon_greedy(&mut r, 0.0, 4, || Ok(q.clone())).unwrap(), 1);
    }
}

#[test]
fn sync_copies_and_isolates() {
    let ctx = ContextSignal::one_hot(1, 3).unwrap();
    let mut online = QNetwork::build(ArchSpec::toy(Variant::Add), 1).unwrap();
    let mut target = QNetwork::build(ArchSpec::toy(Variant::Add), 2).unwrap();
    let x = random_tensor(&mut rng(5), &[3, 2, 12, 12], 1.0);
    sync_target(&online, &mut target).unwrap();
    assert_eq!(online.q_batch(&x, &ctx).unwrap(), target.q_batch(&x, &ctx).unwrap());
    let before = target.theta();
    let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() }, online.params()).unwrap();
    let mut g = Graph::new();
    let fwd = online.forward(&mut g, &x, &ctx, ForwardOptions::TRAIN).unwrap();
    let loss = g.mse_gather(fwd.q, &[0, 1, 2], &[1.0, -1.0, 0.5]).unwrap();
    let grads = g.backward(loss, online.params()).unwrap();
    adam.step(online.params_mut(), &grads).unwrap();
    online.absorb_batch_stats(&g, &fwd);
    assert_ne!(online.theta(), before);
    assert_eq!(target.theta(), before);
    let other = QNetwork::build(ArchSpec::toy(Variant::Dqn), 1).unwrap();
    assert!(matches!(sync_target(&other, &mut target), Err(Error::StructureMismatch(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn target_bound(seed in 0u64..10_000, gamma in 0.0f64..0.999) {
        let mut r = rng(seed);
        let q = random_tensor(&mut r, &[4, 3], 10.0);
        let qs = random_tensor(&mut r, &[4, 3], 10.0);
        let rewards: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let terminals: Vec<bool> = (0..4).map(|_| r.random_bool(0.5)).collect();
        let y = double_q_target(&rewards, &terminals, &q, &qs, gamma).unwrap();
        for i in 0..4 {
            let bound = rewards[i].abs() + gamma * qs.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(y[i].abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn replay_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap);
        for t in 0..pushes {
            buf.push(transition(t));
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        let first = buf.iter().next().map(|t| t.reward as usize);
        prop_assert_eq!(first, (pushes > 0).then(|| pushes.saturating_sub(cap)));
    }

    #[test]
    fn epsilon_is_monotone_and_clamped(a in 0u64..3_000_000, b in 0u64..3_000_000) {
        let s = EpsilonSchedule::default();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.value(lo) >= s.value(hi));
        prop_assert!(s.value(hi) >= 0.1 && s.value(lo) <= 1.0);
    }
}
