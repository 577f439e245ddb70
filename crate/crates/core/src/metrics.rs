//! Navigation error, oracle success, success and SPL over greedy rollouts.

use serde::{Deserialize, Serialize};

use crate::data::{EpisodePair, WorldLookup};
use crate::error::{invalid_arg, Result};
use crate::navigator::{NavModel, RolloutMode, Trajectory, STEP_CAP};
use crate::world::{teacher_action, NavAction, NavGraph};

/// Success radius in meters.
pub const SUCCESS_RADIUS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub ne: f64,
    pub oracle_success: bool,
    pub success: bool,
    pub spl: f64,
}

/// Scores one trajectory against `goal`; `shortest` is the ground-truth shortest length.
pub fn episode_metrics(g: &NavGraph, traj: &Trajectory, goal: usize, shortest: f64) -> Result<EpisodeMetrics> {
    if traj.nodes.is_empty() {
        return Err(invalid_arg("empty trajectory"));
    }
    if !(shortest > 0.0) {
        return Err(invalid_arg("shortest length must be positive"));
    }
    g.check_node(goal)?;
    for w in traj.nodes.windows(2) {
        if g.action_to(w[0], w[1]).is_none() {
            return Err(invalid_arg(format!("trajectory step {} -> {} is not an edge", w[0], w[1])));
        }
    }
    let ne = g.distance(traj.final_node(), goal);
    let closest = traj.nodes.iter().map(|&n| g.distance(n, goal)).fold(f64::INFINITY, f64::min);
    let success = ne <= SUCCESS_RADIUS;
    let travelled = traj.length(g);
    let spl = if success { shortest / shortest.max(travelled) } else { 0.0 };
    Ok(EpisodeMetrics { ne, oracle_success: closest <= SUCCESS_RADIUS, success, spl })
}

/// Aggregate over one episode set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub split: String,
    pub episodes: usize,
    pub ne: f64,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
}

impl MetricsRecord {
    pub fn from_episodes(model: &str, split: &str, per: &[EpisodeMetrics]) -> Result<Self> {
        if per.is_empty() {
            return Err(invalid_arg("no episodes to aggregate"));
        }
        let n = per.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            model: model.to_string(),
            split: split.to_string(),
            episodes: per.len(),
            ne: mean(&|m| m.ne),
            osr: mean(&|m| m.oracle_success as u8 as f64),
            sr: mean(&|m| m.success as u8 as f64),
            spl: mean(&|m| m.spl),
        })
    }
}

/// A policy that can be evaluated episode by episode.
pub trait Policy {
    fn run(&self, g: &NavGraph, episode: &EpisodePair) -> Result<Trajectory>;
}

impl Policy for NavModel {
    fn run(&self, g: &NavGraph, episode: &EpisodePair) -> Result<Trajectory> {
        self.rollout(g, episode.path.start(), &episode.instruction, RolloutMode::Greedy, STEP_CAP)
    }
}

/// Follows teacher actions to the goal and stops there. Queries the planner.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn run(&self, g: &NavGraph, episode: &EpisodePair) -> Result<Trajectory> {
        let goal = episode.path.end();
        let mut traj = Trajectory {
            env: g.id().to_string(),
            nodes: vec![episode.path.start()],
            actions: Vec::new(),
            losses: Vec::new(),
            terminated_by: crate::navigator::Termination::StepCap,
        };
        let mut node = episode.path.start();
        for _ in 0..g.node_count() + 1 {
            let a = teacher_action(g, node, goal)?;
            traj.actions.push(a);
            match a {
                NavAction::Stop => {
                    traj.terminated_by = crate::navigator::Termination::Stop;
                    break;
                }
                NavAction::Move(e) => {
                    node = g.step(node, e)?;
                    traj.nodes.push(node);
                }
            }
        }
        Ok(traj)
    }
}

/// Never moves.
pub struct StayPolicy;

impl Policy for StayPolicy {
    fn run(&self, g: &NavGraph, episode: &EpisodePair) -> Result<Trajectory> {
        Ok(Trajectory {
            env: g.id().to_string(),
            nodes: vec![episode.path.start()],
            actions: vec![NavAction::Stop],
            losses: Vec::new(),
            terminated_by: crate::navigator::Termination::Stop,
        })
    }
}

/// Per-episode metrics, one rollout per instruction.
pub fn evaluate_episodes<P: Policy + ?Sized, W: WorldLookup + ?Sized>(
    policy: &P,
    episodes: &[EpisodePair],
    worlds: &W,
) -> Result<Vec<(Trajectory, EpisodeMetrics)>> {
    episodes
        .iter()
        .map(|e| {
            let g = worlds.world(e.env())?;
            let traj = policy.run(g, e)?;
            let m = episode_metrics(g, &traj, e.path.end(), e.path.length)?;
            Ok((traj, m))
        })
        .collect()
}

pub fn evaluate<P: Policy + ?Sized, W: WorldLookup + ?Sized>(
    policy: &P,
    episodes: &[EpisodePair],
    worlds: &W,
    model: &str,
    split: &str,
) -> Result<MetricsRecord> {
    if episodes.is_empty() {
        return Err(invalid_arg("evaluation needs at least one episode"));
    }
    let per: Vec<EpisodeMetrics> = evaluate_episodes(policy, episodes, worlds)?.into_iter().map(|(_, m)| m).collect();
    MetricsRecord::from_episodes(model, split, &per)
}

/// SR of every navigator on every dataset: `out[i][j]` is navigator `i` on dataset `j`.
pub fn cross_evaluate<P: Policy>(navs: &[P], datasets: &[(&[EpisodePair], &dyn WorldLookup)]) -> Result<Vec<Vec<f64>>> {
    navs.iter()
        .map(|nav| {
            datasets
                .iter()
                .map(|(eps, worlds)| Ok(evaluate(nav, eps, *worlds, "", "")?.sr))
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navigator::Termination;
    use crate::world::{Landmark, Split};

    fn line() -> NavGraph {
        // Five nodes 2.5 m apart on a line, plus a spur.
        let positions = vec![[0.0, 0.0], [2.5, 0.0], [5.0, 0.0], [7.5, 0.0], [10.0, 0.0], [5.0, 2.0]];
        let lm = vec![Landmark { color: 0, noun: 0 }; 6];
        NavGraph::from_parts("line", 0, Split::TrainSeen, positions, lm, &[(0, 1), (1, 2), (2, 3), (3, 4), (2, 5)])
            .unwrap()
    }

    fn traj(nodes: Vec<usize>) -> Trajectory {
        Trajectory {
            env: "line".into(),
            nodes,
            actions: Vec::new(),
            losses: Vec::new(),
            terminated_by: Termination::Stop,
        }
    }

    #[test]
    fn exact_shortest_path_scores_one() {
        let g = line();
        let m = episode_metrics(&g, &traj(vec![0, 1, 2]), 2, 5.0).unwrap();
        assert_eq!(m, EpisodeMetrics { ne: 0.0, oracle_success: true, success: true, spl: 1.0 });
    }

    #[test]
    fn detour_halves_spl() {
        let g = line();
        // 0 -> 1 -> 2 -> 1 -> 2 travels 10 m against a 5 m optimum.
        let m = episode_metrics(&g, &traj(vec![0, 1, 2, 1, 2]), 2, 5.0).unwrap();
        assert!(m.success);
        assert!((m.spl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn passing_near_goal_is_oracle_success_only() {
        let g = line();
        // Goal is the spur node; the walk passes 2 m from it and stops at the far end.
        let m = episode_metrics(&g, &traj(vec![0, 1, 2, 3, 4]), 5, 7.0).unwrap();
        assert!(m.oracle_success && !m.success);
        assert_eq!(m.spl, 0.0);
        assert!((m.ne - 29f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let g = line();
        assert!(episode_metrics(&g, &traj(vec![]), 2, 5.0).is_err());
        assert!(episode_metrics(&g, &traj(vec![0]), 2, 0.0).is_err());
        assert!(episode_metrics(&g, &traj(vec![0, 2]), 2, 5.0).is_err());
    }
}
