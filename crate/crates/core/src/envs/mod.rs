//! Two-player cooperative environments with declared symmetries.
//!
//! Every environment exposes the same step protocol: at each time step both
//! agents receive an observation, the agents returned by
//! [`DecPomdp::acting_agents`] choose an action, and the shared reward for the
//! joint action is returned. Internal state can be relabelled by a symmetry
//! so that [`verify_symmetry`] can compare rollouts under relabelling.

mod hanabi;
mod lever;
mod referential;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EqcError, Result};
use crate::group::{FeatureLayout, Perm, PermGroup, SymmetryRep};

pub use hanabi::{Card, MiniHanabi, MiniHanabiConfig};
pub use lever::{lever_expected_return, lever_symmetry_generators, LeverConfig, LeverGame};
pub use referential::{referential_expected_return, ReferentialConfig, ReferentialGame};

pub const NUM_AGENTS: usize = 2;

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvContract {
    pub num_agents: usize,
    pub obs_layout: FeatureLayout,
    pub act_layout: FeatureLayout,
    pub horizon: usize,
    /// Number of points the symmetries act on.
    pub degree: usize,
    /// Points of the largest non-trivial orbit, used to embed named groups.
    pub orbit: Vec<usize>,
    pub symmetry_generators: Vec<Perm>,
}

impl EnvContract {
    pub fn obs_width(&self) -> usize {
        self.obs_layout.total_width()
    }

    pub fn action_count(&self) -> usize {
        self.act_layout.total_width()
    }

    /// Lifted representation of `group` on this environment's layouts.
    pub fn rep(&self, group: PermGroup) -> Result<SymmetryRep> {
        if group.degree() != self.degree {
            return Err(EqcError::DegreeMismatch {
                expected: self.degree,
                got: group.degree(),
            });
        }
        SymmetryRep::new(group, self.obs_layout.clone(), self.act_layout.clone())
    }
}

/// One time step: what each agent saw, which actions were legal for the
/// acting agents, the joint action and its shared reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observations: [Vec<f64>; NUM_AGENTS],
    pub legal: [Option<Vec<bool>>; NUM_AGENTS],
    pub actions: [Option<usize>; NUM_AGENTS],
    pub reward: f64,
    pub terminal: bool,
}

impl Transition {
    pub fn acting(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_AGENTS).filter(|&i| self.actions[i].is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
}

pub trait DecPomdp {
    fn contract(&self) -> &EnvContract;
    /// Start a new episode; all randomness of the episode derives from `seed`.
    fn reset(&mut self, seed: u64);
    fn observation(&self, agent: usize) -> Vec<f64>;
    fn acting_agents(&self) -> Vec<usize>;
    fn legal_actions(&self, agent: usize) -> Vec<bool>;
    fn step(&mut self, actions: &[Option<usize>; NUM_AGENTS]) -> Result<StepOutcome>;
    fn is_terminal(&self) -> bool;
    /// Sum of rewards so far.
    fn episode_return(&self) -> f64;
    /// `Some(true)` if the episode ended in the failure terminal, `None` for
    /// environments without one.
    fn failed(&self) -> Option<bool>;
    /// Apply a symmetry (a permutation of `contract().degree` points) to the
    /// internal state.
    fn relabel(&mut self, g: &Perm) -> Result<()>;
}

/// Serializable environment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Lever(LeverConfig),
    Referential(ReferentialConfig),
    MiniHanabi(MiniHanabiConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        Ok(match self {
            EnvConfig::Lever(c) => Env::Lever(LeverGame::new(c.clone())?),
            EnvConfig::Referential(c) => Env::Referential(ReferentialGame::new(c.clone())?),
            EnvConfig::MiniHanabi(c) => Env::MiniHanabi(MiniHanabi::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Lever(_) => "lever",
            EnvConfig::Referential(_) => "referential",
            EnvConfig::MiniHanabi(_) => "mini_hanabi",
        }
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Env {
    Lever(LeverGame),
    Referential(ReferentialGame),
    MiniHanabi(MiniHanabi),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Env::Lever($e) => $body,
            Env::Referential($e) => $body,
            Env::MiniHanabi($e) => $body,
        }
    };
}

impl DecPomdp for Env {
    fn contract(&self) -> &EnvContract {
        dispatch!(self, e => e.contract())
    }
    fn reset(&mut self, seed: u64) {
        dispatch!(self, e => e.reset(seed))
    }
    fn observation(&self, agent: usize) -> Vec<f64> {
        dispatch!(self, e => e.observation(agent))
    }
    fn acting_agents(&self) -> Vec<usize> {
        dispatch!(self, e => e.acting_agents())
    }
    fn legal_actions(&self, agent: usize) -> Vec<bool> {
        dispatch!(self, e => e.legal_actions(agent))
    }
    fn step(&mut self, actions: &[Option<usize>; NUM_AGENTS]) -> Result<StepOutcome> {
        dispatch!(self, e => e.step(actions))
    }
    fn is_terminal(&self) -> bool {
        dispatch!(self, e => e.is_terminal())
    }
    fn episode_return(&self) -> f64 {
        dispatch!(self, e => e.episode_return())
    }
    fn failed(&self) -> Option<bool> {
        dispatch!(self, e => e.failed())
    }
    fn relabel(&mut self, g: &Perm) -> Result<()> {
        dispatch!(self, e => e.relabel(g))
    }
}

pub(crate) fn check_actions(
    env: &dyn DecPomdp,
    actions: &[Option<usize>; NUM_AGENTS],
) -> Result<()> {
    if env.is_terminal() {
        return Err(EqcError::EpisodeOver);
    }
    let acting = env.acting_agents();
    for (agent, a) in actions.iter().enumerate() {
        match (a, acting.contains(&agent)) {
            (Some(a), true) => {
                let legal = env.legal_actions(agent);
                if *a >= legal.len() {
                    return Err(EqcError::IllegalAction {
                        agent,
                        action: *a,
                        reason: "out of range".into(),
                    });
                }
                if !legal[*a] {
                    return Err(EqcError::IllegalAction {
                        agent,
                        action: *a,
                        reason: "not legal in this state".into(),
                    });
                }
            }
            (None, true) => {
                return Err(EqcError::IllegalAction {
                    agent,
                    action: usize::MAX,
                    reason: "acting agent gave no action".into(),
                })
            }
            (Some(a), false) => {
                return Err(EqcError::IllegalAction {
                    agent,
                    action: *a,
                    reason: "agent is not acting".into(),
                })
            }
            (None, false) => {}
        }
    }
    Ok(())
}

/// Capture the current observations and legal sets before a step.
pub fn snapshot(env: &dyn DecPomdp) -> ([Vec<f64>; NUM_AGENTS], [Option<Vec<bool>>; NUM_AGENTS]) {
    let acting = env.acting_agents();
    let obs = [env.observation(0), env.observation(1)];
    let legal = [0, 1].map(|i| acting.contains(&i).then(|| env.legal_actions(i)));
    (obs, legal)
}

/// Play uniformly random legal actions until the episode ends.
pub fn random_rollout(env: &mut dyn DecPomdp, seed: u64, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>> {
    env.reset(seed);
    let mut out = Vec::new();
    while !env.is_terminal() {
        let (observations, legal) = snapshot(env);
        let actions = [0, 1].map(|i| legal[i].as_ref().map(|l| pick_legal(l, rng)));
        let o = env.step(&actions)?;
        out.push(Transition {
            observations,
            legal,
            actions,
            reward: o.reward,
            terminal: o.terminal,
        });
        if out.len() > env.contract().horizon {
            return Err(EqcError::InvalidConfig("episode exceeded declared horizon".into()));
        }
    }
    Ok(out)
}

fn pick_legal(legal: &[bool], rng: &mut ChaCha8Rng) -> usize {
    let choices: Vec<usize> = (0..legal.len()).filter(|&a| legal[a]).collect();
    choices[rng.random_range(0..choices.len())]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryViolation {
    /// Canonical index of the group element.
    pub element: usize,
    pub rollout: usize,
    pub step: usize,
    pub what: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub elements: usize,
    pub rollouts: usize,
    pub steps_checked: usize,
    pub violations: Vec<SymmetryViolation>,
}

impl SymmetryReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For every element g and every seeded rollout, replay the `K_g`-permuted
/// joint actions from the relabelled initial state and require exactly
/// `L_g`-permuted observations, `K_g`-permuted legal sets and identical
/// rewards and terminal flags.
pub fn verify_symmetry(
    config: &EnvConfig,
    group: &PermGroup,
    num_rollouts: usize,
    seed: u64,
) -> Result<SymmetryReport> {
    let probe = config.build()?;
    let rep = probe.contract().rep(group.clone())?;
    let mut report = SymmetryReport {
        elements: group.order(),
        rollouts: num_rollouts,
        steps_checked: 0,
        violations: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..num_rollouts {
        let episode_seed: u64 = rng.random();
        let action_seed: u64 = rng.random();
        for (gi, g) in group.elements().iter().enumerate() {
            let l = rep.obs_perm(gi);
            let k = rep.act_perm(gi);
            let mut plain = config.build()?;
            let mut moved = config.build()?;
            plain.reset(episode_seed);
            moved.reset(episode_seed);
            moved.relabel(g)?;
            let mut act_rng = ChaCha8Rng::seed_from_u64(action_seed);
            let mut step = 0;
            let fail = |what: String, step: usize| SymmetryViolation {
                element: gi,
                rollout: r,
                step,
                what,
            };
            loop {
                report.steps_checked += 1;
                if plain.is_terminal() != moved.is_terminal() {
                    report.violations.push(fail("terminal flags differ".into(), step));
                    break;
                }
                if plain.is_terminal() {
                    break;
                }
                let (obs_a, legal_a) = snapshot(&plain);
                let (obs_b, legal_b) = snapshot(&moved);
                if (0..NUM_AGENTS).any(|i| l.apply(&obs_a[i]) != obs_b[i]) {
                    report.violations.push(fail("observations differ".into(), step));
                    break;
                }
                let legal_ok = (0..NUM_AGENTS).all(|i| match (&legal_a[i], &legal_b[i]) {
                    (Some(a), Some(b)) => k.apply(a) == *b,
                    (None, None) => true,
                    _ => false,
                });
                if !legal_ok {
                    report.violations.push(fail("legal actions differ".into(), step));
                    break;
                }
                let actions = [0, 1].map(|i| legal_a[i].as_ref().map(|l| pick_legal(l, &mut act_rng)));
                let mapped = actions.map(|a| a.map(|a| k.image(a)));
                let oa = plain.step(&actions)?;
                let ob = moved.step(&mapped);
                match ob {
                    Ok(ob) if ob.reward == oa.reward && ob.terminal == oa.terminal => {}
                    Ok(_) => {
                        report.violations.push(fail("rewards differ".into(), step));
                        break;
                    }
                    Err(e) => {
                        report.violations.push(fail(format!("relabelled step failed: {e}"), step));
                        break;
                    }
                }
                step += 1;
            }
        }
    }
    Ok(report)
}

pub fn write_trace(path: &Path, transitions: &[Transition]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| EqcError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for t in transitions {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| EqcError::io(path, e))?;
    }
    w.flush().map_err(|e| EqcError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<Transition>> {
    let f = std::fs::File::open(path).map_err(|e| EqcError::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| EqcError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{generate_group, symmetric_group, GroupSpec, DEFAULT_MAX_ORDER};

    #[test]
    fn config_json_round_trip() {
        for cfg in [
            EnvConfig::Lever(LeverConfig::default()),
            EnvConfig::Referential(ReferentialConfig::default()),
            EnvConfig::MiniHanabi(MiniHanabiConfig::default()),
        ] {
            let s = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<EnvConfig>(&s).unwrap(), cfg);
        }
        let parsed: EnvConfig = serde_json::from_str(r#"{"kind":"referential","items":4}"#).unwrap();
        assert_eq!(
            parsed,
            EnvConfig::Referential(ReferentialConfig { items: 4, rounds: 1 })
        );
    }

    #[test]
    fn declared_groups_pass_the_oracle() {
        for cfg in [
            EnvConfig::Lever(LeverConfig::default()),
            EnvConfig::Referential(ReferentialConfig::default()),
            EnvConfig::MiniHanabi(MiniHanabiConfig::default()),
        ] {
            let c = cfg.build().unwrap().contract().clone();
            // The lever game declares S_9, which is over the cap; use C_9.
            let group = match generate_group(c.degree, &c.symmetry_generators, DEFAULT_MAX_ORDER) {
                Ok(g) => g,
                Err(_) => GroupSpec::named("C9")
                    .resolve(c.degree, &c.orbit, &[], DEFAULT_MAX_ORDER)
                    .unwrap(),
            };
            let rep = verify_symmetry(&cfg, &group, 20, 3).unwrap();
            assert!(rep.passed(), "{}: {:?}", cfg.name(), rep.violations.first());
        }
    }

    #[test]
    fn value_breaking_lever_permutation_is_caught() {
        let cfg = EnvConfig::Lever(LeverConfig::default());
        let group = symmetric_group(10, DEFAULT_MAX_ORDER);
        assert!(group.is_err());
        let swap = crate::group::transposition(10, 0, 9);
        let group = generate_group(10, &[swap], 10).unwrap();
        let rep = verify_symmetry(&cfg, &group, 50, 1).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn random_rollouts_respect_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            EnvConfig::Lever(LeverConfig::default()),
            EnvConfig::Referential(ReferentialConfig { items: 4, rounds: 2 }),
            EnvConfig::MiniHanabi(MiniHanabiConfig::default()),
        ] {
            let mut env = cfg.build().unwrap();
            for s in 0..200 {
                let tr = random_rollout(&mut env, s, &mut rng).unwrap();
                assert!(tr.len() <= env.contract().horizon);
                assert!(tr.last().unwrap().terminal);
                for t in &tr {
                    for o in &t.observations {
                        assert_eq!(o.len(), env.contract().obs_width());
                    }
                }
            }
        }
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mut env = EnvConfig::MiniHanabi(MiniHanabiConfig::default()).build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tr = random_rollout(&mut env, 9, &mut rng).unwrap();
        write_trace(&path, &tr).unwrap();
        assert_eq!(read_trace(&path).unwrap(), tr);
    }

    #[test]
    fn stepping_after_terminal_fails() {
        let mut env = EnvConfig::Lever(LeverConfig::default()).build().unwrap();
        env.reset(0);
        env.step(&[Some(0), Some(0)]).unwrap();
        assert!(matches!(env.step(&[Some(0), Some(0)]), Err(EqcError::EpisodeOver)));
    }
}
