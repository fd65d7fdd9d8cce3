//! One-shot lever coordination game.
//!
//! Both agents pick one of the levers at the same time. If they pick the same
//! lever they are paid its value, otherwise nothing.

use serde::{Deserialize, Serialize};

use super::{check_actions, DecPomdp, EnvContract, StepOutcome, NUM_AGENTS};
use crate::error::{EqcError, Result};
use crate::group::{cycle, transposition, Block, FeatureLayout, Perm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeverConfig {
    pub values: Vec<f64>,
}

impl Default for LeverConfig {
    fn default() -> Self {
        let mut values = vec![1.0; 9];
        values.push(0.9);
        LeverConfig { values }
    }
}

/// Groups of indices holding bitwise-equal values, in first-occurrence order.
fn equal_value_classes(values: &[f64]) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match classes.iter_mut().find(|c| values[c[0]] == *v) {
            Some(c) => c.push(i),
            None => classes.push(vec![i]),
        }
    }
    classes
}

/// Generators of the product of full symmetric groups on each set of
/// equal-valued levers: a transposition and a full cycle per set (one
/// transposition for a pair). All-distinct values give only the identity.
pub fn lever_symmetry_generators(values: &[f64]) -> Vec<Perm> {
    let n = values.len();
    let mut gens = Vec::new();
    for class in equal_value_classes(values) {
        if class.len() < 2 {
            continue;
        }
        gens.push(transposition(n, class[0], class[1]));
        if class.len() > 2 {
            gens.push(cycle(class.len()).embed(&class, n).expect("valid orbit"));
        }
    }
    if gens.is_empty() {
        gens.push(Perm::identity(n));
    }
    gens
}

/// Expected payoff when the two agents deterministically pick `a` and `b`.
pub fn lever_expected_return(values: &[f64], a: usize, b: usize) -> f64 {
    if a == b {
        values[a]
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct LeverGame {
    config: LeverConfig,
    contract: EnvContract,
    done: bool,
    total: f64,
}

impl LeverGame {
    pub fn new(config: LeverConfig) -> Result<Self> {
        let n = config.values.len();
        if n == 0 {
            return Err(EqcError::InvalidConfig("lever game needs at least one lever".into()));
        }
        if config.values.iter().any(|v| !v.is_finite()) {
            return Err(EqcError::NonFinite("lever values"));
        }
        let orbit = equal_value_classes(&config.values)
            .into_iter()
            .max_by_key(|c| c.len())
            .unwrap_or_default();
        let contract = EnvContract {
            num_agents: NUM_AGENTS,
            obs_layout: FeatureLayout::new(vec![Block::Fixed { width: 1 }]),
            act_layout: FeatureLayout::new(vec![Block::Symmetric { slabs: n, width: 1 }]),
            horizon: 1,
            degree: n,
            orbit,
            symmetry_generators: lever_symmetry_generators(&config.values),
        };
        Ok(LeverGame {
            config,
            contract,
            done: false,
            total: 0.0,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.config.values
    }
}

impl DecPomdp for LeverGame {
    fn contract(&self) -> &EnvContract {
        &self.contract
    }

    fn reset(&mut self, _seed: u64) {
        self.done = false;
        self.total = 0.0;
    }

    fn observation(&self, _agent: usize) -> Vec<f64> {
        vec![1.0]
    }

    fn acting_agents(&self) -> Vec<usize> {
        if self.done {
            vec![]
        } else {
            vec![0, 1]
        }
    }

    fn legal_actions(&self, _agent: usize) -> Vec<bool> {
        vec![true; self.config.values.len()]
    }

    fn step(&mut self, actions: &[Option<usize>; NUM_AGENTS]) -> Result<StepOutcome> {
        check_actions(self, actions)?;
        let (a, b) = (actions[0].expect("checked"), actions[1].expect("checked"));
        let reward = lever_expected_return(&self.config.values, a, b);
        self.done = true;
        self.total += reward;
        Ok(StepOutcome {
            reward,
            terminal: true,
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

    /// The game carries no state a lever relabelling could touch; symmetries
    /// that do not preserve values show up as reward mismatches.
    fn relabel(&mut self, g: &Perm) -> Result<()> {
        if g.degree() != self.config.values.len() {
            return Err(EqcError::DegreeMismatch {
                expected: self.config.values.len(),
                got: g.degree(),
            });
        }
        Ok(())
    }
}
