//! Shared-parameter recurrent Q-learning for both seats.
//!
//! Agents act through one network. For a step where the agents in `A_t` act,
//! the n-step TD target sums rewards and then the acting agents' values:
//! `y_t = Σ_{k<n} γ^k r_{t+k} + γ^n Σ_{j ∈ A_{t+n}} max_a Q̄_j(t+n, a)` and
//! the loss is `(Σ_{i ∈ A_t} Q_i(t, a_i) − y_t)²`, with Q̄ a periodically
//! synced copy.
//! Turn-based games have one actor per step, so this reduces to ordinary
//! per-turn Q-learning.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{DecPomdp, EnvConfig, EnvContract, Transition, NUM_AGENTS};
use crate::error::{EqcError, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::group::{GroupDocument, GroupSpec, PermGroup, SymmetryRep, DEFAULT_MAX_ORDER};
use crate::nn::{Activation, Checkpoint, Gradients, LayerSpec, Network, NetworkSpec, OptimizerConfig, OptimizerState};
use crate::rollout::{mix_seed, play_episode, MeanSem, Selection};
use crate::symmetrizer::{RecurrentPolicy, StateCombineMode, Symmetrized};

/// Network shape; input and output widths come from the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub lstm: bool,
    pub dueling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            lstm: true,
            dueling: false,
        }
    }
}

impl ModelConfig {
    pub fn network_spec(&self, contract: &EnvContract, seed: u64) -> NetworkSpec {
        let mut layers = vec![
            LayerSpec::Linear { out: self.hidden },
            LayerSpec::Activation {
                function: Activation::Relu,
            },
        ];
        if self.lstm {
            layers.push(LayerSpec::Lstm { hidden: self.hidden });
        }
        let actions = contract.action_count();
        layers.push(if self.dueling {
            LayerSpec::DuelingHead { actions }
        } else {
            LayerSpec::Linear { out: actions }
        });
        NetworkSpec {
            input_width: contract.obs_width(),
            layers,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    Selfplay,
    /// Train on episodes relabelled by a random group element each.
    GOp { group: GroupSpec },
    /// Train the symmetrized network end to end.
    NaiveSymmetrized {
        group: GroupSpec,
        #[serde(default)]
        combine: StateCombineMode,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    /// Linear decay from `start` to `end`, then constant.
    pub fn value(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let f = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * f
    }
}

fn default_gamma() -> f64 {
    1.0
}
fn default_n_step() -> usize {
    1
}
fn default_batch() -> usize {
    32
}
fn default_capacity() -> usize {
    2000
}
fn default_sync() -> usize {
    50
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-3)
}
fn default_updates() -> usize {
    1
}
fn default_epoch() -> usize {
    100
}
fn default_eval() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub mode: TrainMode,
    pub episodes: usize,
    pub epsilon: EpsilonSchedule,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Rewards summed before bootstrapping from the target network.
    #[serde(default = "default_n_step")]
    pub n_step: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    /// Gradient updates between target-network syncs.
    #[serde(default = "default_sync")]
    pub target_sync: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_updates")]
    pub updates_per_episode: usize,
    /// Episodes per training-curve entry.
    #[serde(default = "default_epoch")]
    pub epoch_episodes: usize,
    /// Greedy self-play episodes evaluated at the end of each epoch.
    #[serde(default = "default_eval")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EqcError::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return bad("epsilon schedule must be nonincreasing within [0, 1]");
        }
        if self.n_step == 0 {
            return bad("n_step must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync == 0 {
            return bad("batch size, replay capacity and target sync must be positive");
        }
        if self.epoch_episodes == 0 {
            return bad("epoch_episodes must be positive");
        }
        if self.model.hidden == 0 {
            return bad("hidden width must be positive");
        }
        self.env.build()?;
        Ok(())
    }
}

/// Resolve a group spec against an environment's symmetries.
pub fn resolve_group(spec: &GroupSpec, contract: &EnvContract) -> Result<PermGroup> {
    spec.resolve(
        contract.degree,
        &contract.orbit,
        &contract.symmetry_generators,
        DEFAULT_MAX_ORDER,
    )
}

/// Ring buffer of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: Vec<Vec<Transition>>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            episodes: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, episode: Vec<Transition>) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(episode);
        } else {
            self.episodes[self.next] = episode;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&[Transition]> {
        (0..n)
            .map(|_| self.episodes[rng.random_range(0..self.episodes.len())].as_slice())
            .collect()
    }
}

/// A batch relabelled by one group element per episode.
#[derive(Clone, Debug)]
pub struct AugmentedBatch {
    pub episodes: Vec<Vec<Transition>>,
    /// Canonical index of the element applied to each episode.
    pub elements: Vec<usize>,
}

/// Relabel a whole episode by element `g`: observations by `L_g`, actions
/// and legal sets by `K_g`.
pub fn permute_episode(episode: &[Transition], g: usize, rep: &SymmetryRep) -> Vec<Transition> {
    let l = rep.obs_perm(g);
    let k = rep.act_perm(g);
    episode
        .iter()
        .map(|t| Transition {
            observations: [l.apply(&t.observations[0]), l.apply(&t.observations[1])],
            legal: [0, 1].map(|i| t.legal[i].as_ref().map(|m| k.apply(m))),
            actions: t.actions.map(|a| a.map(|a| k.image(a))),
            reward: t.reward,
            terminal: t.terminal,
        })
        .collect()
}

/// Draw one group element uniformly per episode and apply it throughout.
pub fn g_op_augment(batch: &[&[Transition]], rep: &SymmetryRep, rng: &mut ChaCha8Rng) -> AugmentedBatch {
    let mut episodes = Vec::with_capacity(batch.len());
    let mut elements = Vec::with_capacity(batch.len());
    for ep in batch {
        let g = rng.random_range(0..rep.order());
        episodes.push(permute_episode(ep, g, rep));
        elements.push(g);
    }
    AugmentedBatch { episodes, elements }
}

/// Q-function used for learning: the bare network or its symmetrization.
#[derive(Clone)]
enum QView<'a> {
    Plain(&'a Network),
    Sym(Symmetrized<&'a Network>),
}

enum QTrace {
    Plain(crate::nn::SequenceTrace),
    Sym(Vec<crate::symmetrizer::SymStepCache>),
}

impl<'a> QView<'a> {
    fn new(net: &'a Network, sym: Option<(&Arc<SymmetryRep>, StateCombineMode, Exec)>) -> Result<Self> {
        Ok(match sym {
            None => QView::Plain(net),
            Some((rep, combine, exec)) => {
                QView::Sym(Symmetrized::new(net, rep.clone(), combine)?.with_exec(exec))
            }
        })
    }

    fn run(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            QView::Plain(n) => n.forward_sequence(xs),
            QView::Sym(s) => s.run_sequence(xs),
        }
    }

    fn trace(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, QTrace)> {
        Ok(match self {
            QView::Plain(n) => {
                let t = n.forward_trace(xs)?;
                (t.outputs.clone(), QTrace::Plain(t))
            }
            QView::Sym(s) => {
                let (o, c) = s.forward_trace(xs)?;
                (o, QTrace::Sym(c))
            }
        })
    }

    fn backward(&self, trace: &QTrace, d: &[Vec<f64>]) -> Result<Gradients> {
        match (self, trace) {
            (QView::Plain(n), QTrace::Plain(t)) => n.backward(t, d),
            (QView::Sym(s), QTrace::Sym(c)) => Ok(s.backward(c, d)),
            _ => unreachable!("trace from a different view"),
        }
    }
}

fn max_legal(q: &[f64], legal: &[bool]) -> f64 {
    q.iter()
        .zip(legal)
        .filter(|(_, &l)| l)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Summed squared TD error of one episode, its step count and gradient.
fn episode_loss(
    online: &QView,
    target: &QView,
    episode: &[Transition],
    gamma: f64,
    n_step: usize,
) -> Result<(f64, usize, Gradients)> {
    let mut outs = Vec::with_capacity(NUM_AGENTS);
    let mut traces = Vec::with_capacity(NUM_AGENTS);
    let mut targets = Vec::with_capacity(NUM_AGENTS);
    for i in 0..NUM_AGENTS {
        let xs: Vec<Vec<f64>> = episode.iter().map(|t| t.observations[i].clone()).collect();
        let (o, tr) = online.trace(&xs)?;
        outs.push(o);
        traces.push(tr);
        targets.push(target.run(&xs)?);
    }
    let mut d: Vec<Vec<Vec<f64>>> = outs
        .iter()
        .map(|o| o.iter().map(|q| vec![0.0; q.len()]).collect())
        .collect();
    let mut loss = 0.0;
    for (t, tr) in episode.iter().enumerate() {
        let q: f64 = tr.acting().map(|i| outs[i][t][tr.actions[i].expect("acting")]).sum();
        // n-step return, bootstrapped from the target net where it does not end
        let mut y = 0.0;
        let mut discount = 1.0;
        let mut end = t;
        let mut ended = false;
        while end < episode.len() && end < t + n_step {
            y += discount * episode[end].reward;
            discount *= gamma;
            ended = episode[end].terminal;
            end += 1;
            if ended {
                break;
            }
        }
        if !ended && end < episode.len() {
            let next = &episode[end];
            let bootstrap: f64 = next
                .acting()
                .map(|j| max_legal(&targets[j][end], next.legal[j].as_ref().expect("acting")))
                .sum();
            y += discount * bootstrap;
        }
        let delta = q - y;
        loss += delta * delta;
        for i in tr.acting() {
            d[i][t][tr.actions[i].expect("acting")] += 2.0 * delta;
        }
    }
    let mut grads = online.backward(&traces[0], &d[0])?;
    grads.add_assign(&online.backward(&traces[1], &d[1])?);
    Ok((loss, episode.len(), grads))
}

/// One entry of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub episodes: usize,
    pub epsilon: f64,
    /// Mean return of the exploring behaviour policy over the epoch.
    pub behaviour_return: f64,
    pub mean_loss: f64,
    /// Greedy self-play return of the deployed policy at the epoch's end.
    pub greedy_return: f64,
}

/// Symmetrizer wrapped around a trained network when it is deployed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizerMeta {
    pub group: GroupDocument,
    pub combine: StateCombineMode,
}

impl SymmetrizerMeta {
    pub fn rep(&self, contract: &EnvContract) -> Result<Arc<SymmetryRep>> {
        let group = PermGroup::try_from(self.group.clone())?;
        Ok(Arc::new(contract.rep(group)?))
    }
}

/// A network plus how to deploy it.
#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub network: Network,
    pub symmetrizer: Option<SymmetrizerMeta>,
}

impl TrainedPolicy {
    pub fn plain(network: Network) -> Self {
        TrainedPolicy {
            network,
            symmetrizer: None,
        }
    }

    /// The policy that acts: the network, or its symmetrization.
    pub fn deploy(&self, contract: &EnvContract, exec: Exec) -> Result<Arc<dyn RecurrentPolicy>> {
        Ok(match &self.symmetrizer {
            None => Arc::new(self.network.clone()),
            Some(meta) => Arc::new(
                Symmetrized::new(self.network.clone(), meta.rep(contract)?, meta.combine)?.with_exec(exec),
            ),
        })
    }
}

/// Self-describing policy file: environment, weights and deployment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub env: EnvConfig,
    pub checkpoint: Checkpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetrizer: Option<SymmetrizerMeta>,
}

impl PolicyBundle {
    pub fn new(env: EnvConfig, policy: &TrainedPolicy) -> Self {
        PolicyBundle {
            env,
            checkpoint: policy.network.to_checkpoint(),
            symmetrizer: policy.symmetrizer.clone(),
        }
    }

    pub fn policy(&self) -> Result<TrainedPolicy> {
        Ok(TrainedPolicy {
            network: Network::from_checkpoint(self.checkpoint.clone())?,
            symmetrizer: self.symmetrizer.clone(),
        })
    }

    pub fn deploy(&self, exec: Exec) -> Result<Arc<dyn RecurrentPolicy>> {
        let env = self.env.build()?;
        self.policy()?.deploy(env.contract(), exec)
    }

    /// Wrap the network in the symmetrizer of `group`. Re-wrapping with the
    /// group already in place is a no-op; any other nesting is rejected.
    pub fn symmetrized(&self, group: &GroupSpec, combine: StateCombineMode) -> Result<Self> {
        let env = self.env.build()?;
        let contract = env.contract();
        let group = resolve_group(group, contract)?;
        let meta = SymmetrizerMeta {
            group: group.to_document(),
            combine,
        };
        // validates widths against the environment
        self.policy()?;
        meta.rep(contract)?;
        if let Some(existing) = &self.symmetrizer {
            let sorted = |d: &GroupDocument| {
                let mut e = d.elements.clone();
                e.sort();
                e
            };
            if sorted(&existing.group) != sorted(&meta.group) || existing.combine != combine {
                return Err(EqcError::Unsupported(
                    "policy is already symmetrized with a different group or combine mode".into(),
                ));
            }
            return Ok(self.clone());
        }
        Ok(PolicyBundle {
            symmetrizer: Some(meta),
            ..self.clone()
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| EqcError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| EqcError::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub policy: TrainedPolicy,
    pub curve: Vec<EpochStats>,
    pub updates: usize,
}

/// Greedy paired self-play of one policy; SEM over episodes.
pub fn evaluate_selfplay(
    policy: &dyn RecurrentPolicy,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<MeanSem> {
    let mut e = env.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let r = play_episode(&mut e, [policy, policy], mix_seed(&[seed, k as u64]), Selection::Greedy, &mut rng)?;
        returns.push(r.episode_return);
    }
    Ok(MeanSem::from_samples(&returns))
}

pub fn train(config: &TrainConfig, exec: Exec) -> Result<TrainOutput> {
    config.validate()?;
    let mut env = config.env.build()?;
    let contract = env.contract().clone();
    let (sym, gop) = match &config.mode {
        TrainMode::Selfplay => (None, None),
        TrainMode::GOp { group } => {
            let rep = Arc::new(contract.rep(resolve_group(group, &contract)?)?);
            (None, Some(rep))
        }
        TrainMode::NaiveSymmetrized { group, combine } => {
            let rep = Arc::new(contract.rep(resolve_group(group, &contract)?)?);
            (Some((rep, *combine)), None)
        }
    };
    let mut net = Network::new(config.model.network_spec(&contract, mix_seed(&[config.seed, 1])))?;
    let mut target = net.clone();
    let mut opt = OptimizerState::new(config.optimizer, net.param_count());
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 2]));
    let view_args = sym.as_ref().map(|(r, c)| (r, *c, exec));

    let mut curve = Vec::new();
    let mut updates = 0usize;
    let mut epoch_returns = Vec::new();
    let mut epoch_losses = Vec::new();
    for ep in 0..config.episodes {
        let epsilon = config.epsilon.value(ep);
        let episode_seed: u64 = rng.random();
        let result = {
            let behaviour = QView::new(&net, view_args)?;
            let policy: &dyn RecurrentPolicy = match &behaviour {
                QView::Plain(n) => *n,
                QView::Sym(s) => s,
            };
            play_episode(&mut env, [policy, policy], episode_seed, Selection::Explore { epsilon }, &mut rng)?
        };
        epoch_returns.push(result.episode_return);
        replay.push(result.transitions);

        if replay.len() >= config.batch_size {
            for _ in 0..config.updates_per_episode {
                let sampled = replay.sample(config.batch_size, &mut rng);
                let augmented;
                let batch: Vec<&[Transition]> = match &gop {
                    Some(rep) => {
                        augmented = g_op_augment(&sampled, rep, &mut rng);
                        augmented.episodes.iter().map(|e| e.as_slice()).collect()
                    }
                    None => sampled,
                };
                let (loss, grads) = {
                    let online = QView::new(&net, view_args)?;
                    let tgt = QView::new(&target, view_args)?;
                    let parts = try_map_indexed(exec, batch.len(), |b| {
                        episode_loss(&online, &tgt, batch[b], config.gamma, config.n_step)
                    })?;
                    let mut grads = Gradients::zeros(net.param_count());
                    let mut loss = 0.0;
                    let mut steps = 0;
                    for (l, n, g) in &parts {
                        loss += l;
                        steps += n;
                        grads.add_assign(g);
                    }
                    let steps = steps.max(1) as f64;
                    grads.scale(1.0 / steps);
                    (loss / steps, grads)
                };
                if !loss.is_finite() {
                    return Err(EqcError::NonFinite("training loss"));
                }
                epoch_losses.push(loss);
                opt.step(&mut net, &grads)?;
                updates += 1;
                if updates.is_multiple_of(config.target_sync) {
                    target = net.clone();
                }
            }
        }

        if (ep + 1) % config.epoch_episodes == 0 || ep + 1 == config.episodes {
            let greedy_return = if config.eval_episodes > 0 {
                let view = QView::new(&net, view_args)?;
                let policy: &dyn RecurrentPolicy = match &view {
                    QView::Plain(n) => *n,
                    QView::Sym(s) => s,
                };
                evaluate_selfplay(policy, &config.env, config.eval_episodes, mix_seed(&[config.seed, 3, ep as u64]))?.mean
            } else {
                f64::NAN
            };
            let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
            curve.push(EpochStats {
                epoch: curve.len(),
                episodes: ep + 1,
                epsilon,
                behaviour_return: mean(&epoch_returns),
                mean_loss: mean(&epoch_losses),
                greedy_return,
            });
            epoch_returns.clear();
            epoch_losses.clear();
        }
    }
    let symmetrizer = sym.map(|(rep, combine)| SymmetrizerMeta {
        group: rep.group().to_document(),
        combine,
    });
    Ok(TrainOutput {
        policy: TrainedPolicy {
            network: net,
            symmetrizer,
        },
        curve,
        updates,
    })
}
