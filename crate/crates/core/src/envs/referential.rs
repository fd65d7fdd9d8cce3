//! Referential signalling game.
//!
//! The speaker (agent 0) privately sees a target among `items` symmetric
//! items and sends one message per round; then the listener (agent 1) picks
//! an item and both are paid 1 if it is the target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, DecPomdp, EnvContract, StepOutcome, NUM_AGENTS};
use crate::error::{EqcError, Result};
use crate::group::{cycle, transposition, Block, FeatureLayout, Perm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferentialConfig {
    pub items: usize,
    pub rounds: usize,
}

impl Default for ReferentialConfig {
    fn default() -> Self {
        ReferentialConfig { items: 3, rounds: 1 }
    }
}

/// Expected payoff of a single-round convention pair: `speaker[t]` is the
/// message for target `t`, `listener[m]` the pick for message `m`.
pub fn referential_expected_return(speaker: &[usize], listener: &[usize]) -> f64 {
    let hits = (0..speaker.len()).filter(|&t| listener[speaker[t]] == t).count();
    hits as f64 / speaker.len() as f64
}

#[derive(Clone, Debug)]
pub struct ReferentialGame {
    config: ReferentialConfig,
    contract: EnvContract,
    target: usize,
    last_message: Option<usize>,
    t: usize,
    done: bool,
    total: f64,
}

impl ReferentialGame {
    pub fn new(config: ReferentialConfig) -> Result<Self> {
        let m = config.items;
        if m == 0 || config.rounds == 0 {
            return Err(EqcError::InvalidConfig(
                "referential game needs at least one item and one round".into(),
            ));
        }
        let mut gens = Vec::new();
        if m >= 2 {
            gens.push(transposition(m, 0, 1));
            if m > 2 {
                gens.push(cycle(m));
            }
        } else {
            gens.push(Perm::identity(m));
        }
        let contract = EnvContract {
            num_agents: NUM_AGENTS,
            obs_layout: FeatureLayout::new(vec![
                Block::Fixed { width: 2 },
                Block::Symmetric { slabs: m, width: 1 },
                Block::Symmetric { slabs: m, width: 1 },
            ]),
            act_layout: FeatureLayout::new(vec![Block::Symmetric { slabs: m, width: 1 }]),
            horizon: config.rounds + 1,
            degree: m,
            orbit: (0..m).collect(),
            symmetry_generators: gens,
        };
        Ok(ReferentialGame {
            config,
            contract,
            target: 0,
            last_message: None,
            t: 0,
            done: false,
            total: 0.0,
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    fn speaking(&self) -> bool {
        self.t < self.config.rounds
    }
}

impl DecPomdp for ReferentialGame {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.target = rng.random_range(0..self.config.items);
        self.last_message = None;
        self.t = 0;
        self.done = false;
        self.total = 0.0;
    }

    fn observation(&self, agent: usize) -> Vec<f64> {
        let m = self.config.items;
        let mut obs = vec![0.0; 2 + 2 * m];
        let speaker = agent == 0;
        obs[0] = if speaker { 1.0 } else { 0.0 };
        if !self.done && self.acting_agents().contains(&agent) {
            obs[1] = 1.0;
        }
        if speaker {
            obs[2 + self.target] = 1.0;
        }
        if let Some(msg) = self.last_message {
            obs[2 + m + msg] = 1.0;
        }
        obs
    }

    fn acting_agents(&self) -> Vec<usize> {
        if self.done {
            vec![]
        } else if self.speaking() {
            vec![0]
        } else {
            vec![1]
        }
    }

    fn legal_actions(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.config.items]
    }

    fn step(&mut self, actions: &[Option<usize>; NUM_AGENTS]) -> Result<StepOutcome> {
        check_actions(self, actions)?;
        let reward = if self.speaking() {
            self.last_message = actions[0];
            0.0
        } else {
            self.done = true;
            if actions[1] == Some(self.target) {
                1.0
            } else {
                0.0
            }
        };
        self.t += 1;
        self.total += reward;
        Ok(StepOutcome {
            reward,
            terminal: self.done,
        })
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn episode_return(&self) -> f64 {
        self.total
    }

    fn failed(&self) -> Option<bool> {
        None
    }

    fn relabel(&mut self, g: &Perm) -> Result<()> {
        if g.degree() != self.config.items {
            return Err(EqcError::DegreeMismatch {
                expected: self.config.items,
                got: g.degree(),
            });
        }
        self.target = g.image(self.target);
        self.last_message = self.last_message.map(|m| g.image(m));
        Ok(())
    }
}
