//! Playing episodes with a pair of policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{snapshot, DecPomdp, Transition, NUM_AGENTS};
use crate::error::{EqcError, Result};
use crate::symmetrizer::RecurrentPolicy;

/// Relative tolerance under which two action values count as tied.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Highest value, ties broken by lowest index.
    Greedy,
    /// With probability `epsilon` explore, otherwise act greedily with ties
    /// broken uniformly at random. Exploration first draws a class of tied
    /// values uniformly and then an action within it.
    Explore { epsilon: f64 },
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Legal actions whose value ties with the best legal value.
pub fn best_actions(q: &[f64], legal: &[bool]) -> Vec<usize> {
    let best = (0..q.len())
        .filter(|&a| legal[a])
        .map(|a| q[a])
        .fold(f64::NEG_INFINITY, f64::max);
    (0..q.len()).filter(|&a| legal[a] && close(q[a], best)).collect()
}

/// Legal actions grouped into runs of tied values, best first.
pub fn tie_classes(q: &[f64], legal: &[bool]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..q.len()).filter(|&a| legal[a]).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for a in order {
        match classes.last_mut() {
            Some(c) if close(q[c[0]], q[a]) => c.push(a),
            _ => classes.push(vec![a]),
        }
    }
    classes
}

/// Choose an action; the flag reports whether the greedy choice was a tie.
pub fn select_action(q: &[f64], legal: &[bool], selection: Selection, rng: &mut ChaCha8Rng) -> (usize, bool) {
    let best = best_actions(q, legal);
    let tied = best.len() > 1;
    match selection {
        Selection::Greedy => (best[0], tied),
        Selection::Explore { epsilon } => {
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                let classes = tie_classes(q, legal);
                let class = &classes[rng.random_range(0..classes.len())];
                (class[rng.random_range(0..class.len())], tied)
            } else {
                (best[rng.random_range(0..best.len())], tied)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
    pub failed: Option<bool>,
    /// Decisions whose greedy choice was tied.
    pub ties: usize,
    pub decisions: usize,
}

/// Play one episode; `policies[i]` controls seat `i`. Every agent advances
/// its recurrent state on every step, acting or not.
pub fn play_episode(
    env: &mut dyn DecPomdp,
    policies: [&dyn RecurrentPolicy; NUM_AGENTS],
    seed: u64,
    selection: Selection,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult> {
    let contract = env.contract().clone();
    for p in policies {
        if p.obs_width() != contract.obs_width() || p.action_width() != contract.action_count() {
            return Err(EqcError::WidthMismatch {
                context: "policy versus environment",
                expected: contract.obs_width(),
                got: p.obs_width(),
            });
        }
    }
    env.reset(seed);
    let mut states = [policies[0].initial_state(), policies[1].initial_state()];
    let mut transitions = Vec::new();
    let mut ties = 0;
    let mut decisions = 0;
    while !env.is_terminal() {
        if transitions.len() >= contract.horizon {
            return Err(EqcError::InvalidConfig("episode exceeded declared horizon".into()));
        }
        let (observations, legal) = snapshot(env);
        let mut actions = [None; NUM_AGENTS];
        for i in 0..NUM_AGENTS {
            let (q, s) = policies[i].step(&states[i], &observations[i])?;
            states[i] = s;
            if let Some(l) = &legal[i] {
                let (a, tied) = select_action(&q, l, selection, rng);
                ties += usize::from(tied);
                decisions += 1;
                actions[i] = Some(a);
            }
        }
        let o = env.step(&actions)?;
        transitions.push(Transition {
            observations,
            legal,
            actions,
            reward: o.reward,
            terminal: o.terminal,
        });
    }
    Ok(EpisodeResult {
        transitions,
        episode_return: env.episode_return(),
        failed: env.failed(),
        ties,
        decisions,
    })
}

/// Deterministic 64-bit seed derived from a list of parts (SplitMix64 chain).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Mean with standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl MeanSem {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSem {
                mean: 0.0,
                sem: 0.0,
                n,
            };
        }
        // incremental form: exact when every sample is equal
        let mut mean = 0.0;
        for (k, x) in xs.iter().enumerate() {
            mean += (x - mean) / (k + 1) as f64;
        }
        let sem = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanSem { mean, sem, n }
    }
}
