use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::envs::{mean, EnvKind};
use crate::error::{Error, Result};
use crate::tensor::Float;

use super::{evaluate, train, EpisodeRecord, PolicyKind, RunConfig};

/// Aggregates of one switching policy across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub policy: PolicyKind,
    /// Per task, the mean evaluation return of each seed.
    pub task_returns: Vec<Vec<Float>>,
    /// Per task, lengths (in episodes) of every completed stint on that task.
    pub stints: Vec<Vec<usize>>,
    /// Per seed, the global frame of the first switch.
    pub first_switch: Vec<Option<u64>>,
}

impl PolicyRow {
    pub fn task_means(&self) -> Vec<Float> {
        self.task_returns.iter().map(|r| mean(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub envs: Vec<EnvKind>,
    pub seeds: Vec<u64>,
    pub adaptive: PolicyRow,
    pub fixed: PolicyRow,
}

/// Episodes per stint on each task, counting only stints that ended in a switch.
pub fn stint_lengths(records: &[EpisodeRecord], tasks: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); tasks];
    let mut run = 0;
    for r in records {
        run += 1;
        if r.switched {
            out[r.env_index].push(run);
            run = 0;
        }
    }
    out
}

fn run_policy(config: &RunConfig, policy: PolicyKind, seeds: &[u64]) -> Result<PolicyRow> {
    let tasks = config.run.envs.len();
    let mut row = PolicyRow {
        policy,
        task_returns: vec![Vec::new(); tasks],
        stints: vec![Vec::new(); tasks],
        first_switch: Vec::new(),
    };
    for &seed in seeds {
        let mut c = config.clone();
        c.switching.policy = policy;
        c.run.seed = seed;
        let outcome = train(&c, None)?;
        for (i, env) in c.run.envs.iter().enumerate() {
            let e = evaluate(
                &outcome.network,
                *env,
                i,
                tasks,
                c.run.eval_episodes,
                c.run.eval_epsilon,
                c.run.eval_seed,
            )?;
            row.task_returns[i].push(e.mean);
        }
        for (i, s) in stint_lengths(&outcome.episodes, tasks).into_iter().enumerate() {
            row.stints[i].extend(s);
        }
        row.first_switch
            .push(outcome.episodes.iter().find(|r| r.switched).map(|r| r.frame));
    }
    Ok(row)
}

/// Trains the adaptive and fixed-interval policies on every seed with
/// identical budgets and evaluates each task.
pub fn compare_policies(config: &RunConfig, seeds: &[u64]) -> Result<CompareSummary> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!("comparison needs at least 3 seeds, got {}", seeds.len())));
    }
    config.validate()?;
    Ok(CompareSummary {
        envs: config.run.envs.clone(),
        seeds: seeds.to_vec(),
        adaptive: run_policy(config, PolicyKind::Adaptive, seeds)?,
        fixed: run_policy(config, PolicyKind::Fixed, seeds)?,
    })
}

fn histogram(lengths: &[usize]) -> String {
    if lengths.is_empty() {
        return "-".into();
    }
    let mut h = BTreeMap::new();
    for l in lengths {
        *h.entry(*l).or_insert(0usize) += 1;
    }
    h.iter().map(|(k, v)| format!("{k}x{v}")).collect::<Vec<_>>().join(" ")
}

impl std::fmt::Display for CompareSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        let _ = writeln!(s, "seeds: {:?}", self.seeds);
        let _ = write!(s, "{:<10}", "policy");
        for e in &self.envs {
            let _ = write!(s, "{:>12}", e.name());
        }
        let _ = writeln!(s);
        for row in [&self.adaptive, &self.fixed] {
            let name = match row.policy {
                PolicyKind::Adaptive => "adaptive",
                PolicyKind::Fixed => "fixed",
            };
            let _ = write!(s, "{name:<10}");
            for m in row.task_means() {
                let _ = write!(s, "{m:>12.3}");
            }
            let _ = writeln!(s);
        }
        for row in [&self.adaptive, &self.fixed] {
            let _ = writeln!(s, "episodes per stint ({:?}):", row.policy);
            for (e, l) in self.envs.iter().zip(&row.stints) {
                let _ = writeln!(s, "  {:<8} {}", e.name(), histogram(l));
            }
            let firsts: Vec<String> = row
                .first_switch
                .iter()
                .map(|f| f.map_or("-".into(), |x| x.to_string()))
                .collect();
            let _ = writeln!(s, "  frames to first switch: {}", firsts.join(", "));
        }
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(env_index: usize, switched: bool) -> EpisodeRecord {
        EpisodeRecord {
            frame: 0,
            env: String::new(),
            env_index,
            episode: 0,
            episode_return: 0.0,
            loss_mean: None,
            epsilon: 1.0,
            delta_theta: None,
            switched,
        }
    }

    #[test]
    fn stints_split_at_switches() {
        let r = vec![rec(0, false), rec(0, true), rec(1, true), rec(2, false)];
        assert_eq!(stint_lengths(&r, 3), vec![vec![2], vec![1], vec![]]);
    }

    #[test]
    fn histogram_formatting() {
        assert_eq!(histogram(&[5, 5, 7]), "5x2 7x1");
        assert_eq!(histogram(&[]), "-");
    }

    #[test]
    fn needs_three_seeds() {
        assert!(compare_policies(&RunConfig::toy(), &[1, 2]).is_err());
    }
}
