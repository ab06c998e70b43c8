#![cfg(not(feature = "f32"))]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::Command;

use spikeq::checkpoint;
use spikeq::envs::{random_policy_baseline, run_episodes, stddev, EnvKind};
use spikeq::qnetwork::{ArchSpec, QNetwork, Variant};
use spikeq::trainer::{
    compare_policies, evaluate, evaluate_checkpoint, read_metrics, train, PolicyKind, RunConfig, Trainer,
    DECISIONS_FILE, FINAL_CHECKPOINT, METRICS_FILE,
};
use spikeq::Error;

fn small(frames: u64) -> RunConfig {
    let mut c = RunConfig::toy();
    c.run.total_frames = frames;
    c.replay.batch_size = 8;
    c.exploration.decay_frames = 1_000;
    c.target.sync_every = 250;
    c
}

fn hash_theta(net: &QNetwork) -> u64 {
    let mut h = DefaultHasher::new();
    for v in net.theta() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[test]
fn empty_run_writes_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&small(0), Some(dir.path())).unwrap();
    assert_eq!(out.frames, 0);
    assert!(out.episodes.is_empty());
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("frame,env,episode,return,loss_mean,epsilon,delta_theta,switched"));
    let (net, header) = checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(header.frame, 0);
    assert_eq!(net.theta(), QNetwork::build(small(0).arch().unwrap(), 0).unwrap().theta());
}

#[test]
fn single_environment_switches_in_place() {
    let mut c = small(600);
    c.run.envs = vec![EnvKind::Avoid];
    c.switching.window = 2;
    c.switching.threshold = 1e6;
    let out = train(&c, None).unwrap();
    assert!(out.episodes.iter().any(|r| r.switched));
    assert!(out.episodes.iter().all(|r| r.env == "avoid"));
}

#[test]
fn smoke_run_covers_every_branch() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(2_000);
    c.switching.window = 2;
    c.switching.threshold = 5.0;
    let out = train(&c, Some(dir.path())).unwrap();
    assert_eq!(out.frames, 2_000);
    assert_eq!(out.syncs, vec![250, 500, 750, 1000, 1250, 1500, 1750, 2000]);
    assert!(!out.episodes.is_empty());
    assert!(out.episodes.iter().all(|r| r.loss_mean.is_none_or(f64::is_finite)));
    assert!(out.episodes.iter().any(|r| r.delta_theta.is_none()));
    assert!(out.episodes.iter().any(|r| r.delta_theta.is_some()));
    assert!(out.episodes.iter().any(|r| r.switched));
    assert!(out.episodes.iter().any(|r| !r.switched));
    assert!(out.gradient_steps > 0 && out.gradient_steps < 2_000);
    let last = out.episodes.last().unwrap().frame;
    assert!(last <= 2_000);
    let log = std::fs::read_to_string(dir.path().join(DECISIONS_FILE)).unwrap();
    assert_eq!(log.lines().count(), out.episodes.len() + 1);
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), out.episodes.len());
}

#[test]
fn frame_budget_is_exact() {
    for frames in [1, 37, 500] {
        let mut t = Trainer::new(small(frames), None).unwrap();
        let mut steps = 0;
        while !t.is_done() {
            t.step().unwrap();
            steps += 1;
        }
        assert_eq!(steps, frames);
        assert_eq!(t.frame(), frames);
        assert!(t.step().unwrap().is_none());
    }
}

#[test]
fn target_changes_only_at_sync_frames() {
    let mut c = small(600);
    c.target.sync_every = 100;
    let mut t = Trainer::new(c, None).unwrap();
    let mut last = hash_theta(t.target());
    let mut changes = Vec::new();
    while !t.is_done() {
        t.step().unwrap();
        let h = hash_theta(t.target());
        if h != last {
            changes.push(t.frame());
            last = h;
        }
        if t.frame() % 100 == 0 {
            assert_eq!(t.target().theta(), t.online().theta());
        }
    }
    assert!(!changes.is_empty());
    assert!(changes.iter().all(|f| f % 100 == 0), "{changes:?}");
}

#[test]
fn sync_cadence_without_learning() {
    let mut c = RunConfig::toy();
    c.run.total_frames = 25_000;
    c.replay.capacity = 1 << 16;
    c.replay.batch_size = 30_000;
    c.exploration.epsilon_end = 1.0;
    c.target.sync_every = 10_000;
    let out = train(&c, None).unwrap();
    assert_eq!(out.syncs, vec![10_000, 20_000]);
    assert_eq!(out.gradient_steps, 0);
}

#[test]
fn same_seed_same_bytes() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train(&small(700), Some(d.path())).unwrap();
    }
    for file in [METRICS_FILE, DECISIONS_FILE, FINAL_CHECKPOINT] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn evaluation_is_deterministic_and_degenerates_to_random() {
    let dir = tempfile::tempdir().unwrap();
    train(&small(0), Some(dir.path())).unwrap();
    let path = dir.path().join(FINAL_CHECKPOINT);
    let a = evaluate_checkpoint(&path, EnvKind::Catch, 5, 0.01, 77).unwrap();
    let b = evaluate_checkpoint(&path, EnvKind::Catch, 5, 0.01, 77).unwrap();
    assert_eq!(a.returns, b.returns);
    for kind in EnvKind::SUITE {
        let r = evaluate_checkpoint(&path, kind, 20, 1.0, 5).unwrap();
        assert_eq!(r.mean, random_policy_baseline(kind, 20, 5).unwrap());
    }
}

#[test]
fn untrained_network_is_near_random() {
    let c = small(0);
    let net = QNetwork::build(c.arch().unwrap(), 3).unwrap();
    for (i, kind) in EnvKind::SUITE.into_iter().enumerate() {
        let mut random = |_: &spikeq::Tensor, rng: &mut rand_chacha::ChaCha8Rng| {
            spikeq::rl::epsilon_greedy(rng, 1.0, 4, || unreachable!())
        };
        let baseline = run_episodes(kind, 30, 8, &mut random, None).unwrap();
        let base_mean = baseline.iter().sum::<f64>() / 30.0;
        let r = evaluate(&net, kind, i, 3, 30, 0.01, 8).unwrap();
        assert!(
            (r.mean - base_mean).abs() <= 2.0 * stddev(&baseline) + 1e-9,
            "{kind}: {} vs {base_mean}",
            r.mean
        );
    }
}

#[test]
fn architecture_mismatch_is_rejected() {
    let mut spec = ArchSpec::toy(Variant::Add);
    spec.input = [2, 16, 16];
    let net = QNetwork::build(spec, 0).unwrap();
    assert!(matches!(evaluate(&net, EnvKind::Pong, 0, 3, 1, 0.0, 0), Err(Error::StructureMismatch(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &net, &["pong".into()], 0).unwrap();
    assert!(evaluate_checkpoint(&path, EnvKind::Pong, 1, 0.0, 0).is_err());
}

#[test]
fn compare_needs_three_seeds() {
    assert!(compare_policies(&small(10), &[1, 2]).is_err());
}

#[test]
fn compare_reports_every_task() {
    let mut c = small(300);
    c.switching.policy = PolicyKind::Adaptive;
    let s = compare_policies(&c, &[1, 2, 3]).unwrap();
    assert_eq!(s.envs.len(), 3);
    assert_eq!(s.adaptive.task_means().len(), 3);
    assert_eq!(s.fixed.task_means().len(), 3);
    assert_eq!(s.to_string(), compare_policies(&c, &[1, 2, 3]).unwrap().to_string());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikeq"))
}

#[test]
fn cli_count_params() {
    for (variant, n) in [("dqn", "1693682"), ("dsqn_d", "3300339"), ("add", "3300357")] {
        let out = cli().args(["count-params", "--variant", variant]).output().unwrap();
        assert!(out.status.success());
        assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), n);
    }
}

#[test]
fn cli_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let mut c = small(200);
    c.run.eval_episodes = 1;
    std::fs::write(&cfg, c.to_toml().unwrap()).unwrap();
    let run = dir.path().join("run");
    let status = cli()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--seed", "4", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let eval = cli()
        .args(["eval", "--checkpoint"])
        .arg(run.join(FINAL_CHECKPOINT))
        .args(["--env", "catch", "--episodes", "2"])
        .output()
        .unwrap();
    assert!(eval.status.success());
    assert!(String::from_utf8(eval.stdout).unwrap().contains("catch"));
}

#[test]
fn cli_reports_errors() {
    let out = cli().args(["eval", "--checkpoint", "/nonexistent.ckpt", "--env", "pong"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    let out = cli().args(["count-params", "--variant", "resnet"]).output().unwrap();
    assert!(!out.status.success());
}
