//! Group-averaging wrapper that turns any recurrent Q-network into an
//! equivariant one, plus the checks that go with it.
//!
//! For a group G acting on observations by `L_g` and on actions by `K_g`,
//! one step of the wrapped policy evaluates the base network once per
//! element on `L_g x` from a single shared recurrent state, pulls each output
//! back through `K_g⁻¹` and averages. Branch recurrent states are combined
//! into the next shared state either by averaging or by keeping the branch
//! of the identity element.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{EqcError, Result};
use crate::exec::{map_indexed, try_map_indexed, Exec};
use crate::group::SymmetryRep;
use crate::nn::{Gradients, Network, RecurrentState, StepCache};

/// Anything that maps (state, observation) to (action values, state).
pub trait RecurrentPolicy: Send + Sync {
    fn obs_width(&self) -> usize;
    fn action_width(&self) -> usize;
    fn initial_state(&self) -> RecurrentState;
    fn step(&self, state: &RecurrentState, obs: &[f64]) -> Result<(Vec<f64>, RecurrentState)>;
    fn is_recurrent(&self) -> bool;

    /// Outputs over a whole sequence from the initial state.
    fn run_sequence(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, s) = self.step(&state, x)?;
            state = s;
            out.push(y);
        }
        Ok(out)
    }
}

impl RecurrentPolicy for Network {
    fn obs_width(&self) -> usize {
        self.input_width()
    }
    fn action_width(&self) -> usize {
        self.output_width()
    }
    fn initial_state(&self) -> RecurrentState {
        self.zero_state()
    }
    fn step(&self, state: &RecurrentState, obs: &[f64]) -> Result<(Vec<f64>, RecurrentState)> {
        self.forward(obs, state)
    }
    fn is_recurrent(&self) -> bool {
        Network::is_recurrent(self)
    }
}

impl<T: RecurrentPolicy + ?Sized> RecurrentPolicy for &T {
    fn obs_width(&self) -> usize {
        (**self).obs_width()
    }
    fn action_width(&self) -> usize {
        (**self).action_width()
    }
    fn initial_state(&self) -> RecurrentState {
        (**self).initial_state()
    }
    fn step(&self, state: &RecurrentState, obs: &[f64]) -> Result<(Vec<f64>, RecurrentState)> {
        (**self).step(state, obs)
    }
    fn is_recurrent(&self) -> bool {
        (**self).is_recurrent()
    }
}

impl<T: RecurrentPolicy + ?Sized> RecurrentPolicy for Arc<T> {
    fn obs_width(&self) -> usize {
        (**self).obs_width()
    }
    fn action_width(&self) -> usize {
        (**self).action_width()
    }
    fn initial_state(&self) -> RecurrentState {
        (**self).initial_state()
    }
    fn step(&self, state: &RecurrentState, obs: &[f64]) -> Result<(Vec<f64>, RecurrentState)> {
        (**self).step(state, obs)
    }
    fn is_recurrent(&self) -> bool {
        (**self).is_recurrent()
    }
}

impl<T: RecurrentPolicy + ?Sized> RecurrentPolicy for Box<T> {
    fn obs_width(&self) -> usize {
        (**self).obs_width()
    }
    fn action_width(&self) -> usize {
        (**self).action_width()
    }
    fn initial_state(&self) -> RecurrentState {
        (**self).initial_state()
    }
    fn step(&self, state: &RecurrentState, obs: &[f64]) -> Result<(Vec<f64>, RecurrentState)> {
        (**self).step(state, obs)
    }
    fn is_recurrent(&self) -> bool {
        (**self).is_recurrent()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCombineMode {
    #[default]
    Average,
    Identity,
}

/// Counters recording how much work the symmetrizer did.
#[derive(Debug, Default)]
pub struct StepStats {
    steps: AtomicU64,
    base_forwards: AtomicU64,
    peak_branch_floats: AtomicU64,
}

impl StepStats {
    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::Relaxed)
    }
    pub fn base_forwards(&self) -> u64 {
        self.base_forwards.load(Ordering::Relaxed)
    }
    /// Largest number of branch-state floats held at once.
    pub fn peak_branch_floats(&self) -> u64 {
        self.peak_branch_floats.load(Ordering::Relaxed)
    }
    pub fn reset(&self) {
        self.steps.store(0, Ordering::Relaxed);
        self.base_forwards.store(0, Ordering::Relaxed);
        self.peak_branch_floats.store(0, Ordering::Relaxed);
    }
    fn record(&self, branches: usize, floats: usize) {
        self.steps.fetch_add(1, Ordering::Relaxed);
        self.base_forwards.fetch_add(branches as u64, Ordering::Relaxed);
        self.peak_branch_floats.fetch_max(floats as u64, Ordering::Relaxed);
    }
}

fn check_widths(obs: usize, act: usize, rep: &SymmetryRep) -> Result<()> {
    if obs != rep.obs_layout().total_width() {
        return Err(EqcError::WidthMismatch {
            context: "symmetrizer observation layout",
            expected: rep.obs_layout().total_width(),
            got: obs,
        });
    }
    if act != rep.act_layout().total_width() {
        return Err(EqcError::WidthMismatch {
            context: "symmetrizer action layout",
            expected: rep.act_layout().total_width(),
            got: act,
        });
    }
    Ok(())
}

/// `out[a] = 1/|G| Σ_g ys[g][K_g(a)]`, summed in canonical element order.
fn pull_back_mean(rep: &SymmetryRep, ys: &[Vec<f64>]) -> Vec<f64> {
    let width = ys[0].len();
    let mut out = vec![0.0; width];
    for (g, y) in ys.iter().enumerate() {
        let k = rep.act_perm(g).as_slice();
        for (a, o) in out.iter_mut().enumerate() {
            *o += y[k[a]];
        }
    }
    let n = ys.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn combine_states(
    rep: &SymmetryRep,
    combine: StateCombineMode,
    states: Vec<RecurrentState>,
) -> RecurrentState {
    match combine {
        StateCombineMode::Average => RecurrentState::mean(&states),
        StateCombineMode::Identity => states
            .into_iter()
            .nth(rep.identity_index())
            .expect("identity branch"),
    }
}

/// `S(ψ)` over a base policy `P`. The base is held by value, so a
/// `Symmetrized<&Network>` is a live view over parameters that keep
/// changing, while `Symmetrized<Network>` is a frozen snapshot.
pub struct Symmetrized<P> {
    base: P,
    rep: Arc<SymmetryRep>,
    combine: StateCombineMode,
    exec: Exec,
    stats: Arc<StepStats>,
}

impl<P: Clone> Clone for Symmetrized<P> {
    fn clone(&self) -> Self {
        Symmetrized {
            base: self.base.clone(),
            rep: self.rep.clone(),
            combine: self.combine,
            exec: self.exec,
            stats: Arc::new(StepStats::default()),
        }
    }
}

impl<P: RecurrentPolicy> Symmetrized<P> {
    pub fn new(base: P, rep: Arc<SymmetryRep>, combine: StateCombineMode) -> Result<Self> {
        check_widths(base.obs_width(), base.action_width(), &rep)?;
        Ok(Symmetrized {
            base,
            rep,
            combine,
            exec: Exec::Serial,
            stats: Arc::new(StepStats::default()),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn rep(&self) -> &Arc<SymmetryRep> {
        &self.rep
    }

    pub fn combine(&self) -> StateCombineMode {
        self.combine
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn stats(&self) -> &StepStats {
        &self.stats
    }

    pub fn into_base(self) -> P {
        self.base
    }
}

impl<P: RecurrentPolicy> RecurrentPolicy for Symmetrized<P> {
    fn obs_width(&self) -> usize {
        self.base.obs_width()
    }
    fn action_width(&self) -> usize {
        self.base.action_width()
    }
    fn initial_state(&self) -> RecurrentState {
        self.base.initial_state()
    }
    fn is_recurrent(&self) -> bool {
        self.base.is_recurrent()
    }

    fn step(&self, state: &RecurrentState, obs: &[f64]) -> Result<(Vec<f64>, RecurrentState)> {
        if obs.len() != self.obs_width() {
            return Err(EqcError::WidthMismatch {
                context: "symmetrized observation",
                expected: self.obs_width(),
                got: obs.len(),
            });
        }
        let rep = &*self.rep;
        let branches = try_map_indexed(self.exec, rep.order(), |g| {
            let x = rep.obs_perm(g).apply(obs);
            self.base.step(state, &x)
        })?;
        let floats: usize = branches.iter().map(|(_, s)| s.len()).sum();
        self.stats.record(branches.len(), floats);
        let (ys, states): (Vec<_>, Vec<_>) = branches.into_iter().unzip();
        Ok((pull_back_mean(rep, &ys), combine_states(rep, self.combine, states)))
    }
}

/// Per-branch intermediates of one symmetrized step over a [`Network`].
#[derive(Clone, Debug)]
pub struct SymStepCache {
    branches: Vec<StepCache>,
}

impl Symmetrized<&Network> {
    /// Forward step keeping every branch's intermediates.
    pub fn step_cached(
        &self,
        state: &RecurrentState,
        obs: &[f64],
    ) -> Result<(Vec<f64>, RecurrentState, SymStepCache)> {
        let rep = &*self.rep;
        let net = self.base;
        let branches = try_map_indexed(self.exec, rep.order(), |g| {
            let x = rep.obs_perm(g).apply(obs);
            net.forward_cached(&x, state)
        })?;
        let floats: usize = branches.iter().map(|(_, s, _)| s.len()).sum();
        self.stats.record(branches.len(), floats);
        let mut ys = Vec::with_capacity(branches.len());
        let mut states = Vec::with_capacity(branches.len());
        let mut caches = Vec::with_capacity(branches.len());
        for (y, s, c) in branches {
            ys.push(y);
            states.push(s);
            caches.push(c);
        }
        Ok((
            pull_back_mean(rep, &ys),
            combine_states(rep, self.combine, states),
            SymStepCache { branches: caches },
        ))
    }

    /// Backward counterpart of [`Self::step_cached`]. Accumulates parameter
    /// gradients into `grads` and returns the gradient w.r.t. the incoming
    /// shared state.
    pub fn step_backward(
        &self,
        cache: &SymStepCache,
        d_out: &[f64],
        d_next: &RecurrentState,
        grads: &mut Gradients,
    ) -> RecurrentState {
        let rep = &*self.rep;
        let net = self.base;
        let n = rep.order();
        let scale = 1.0 / n as f64;
        let scaled: Vec<f64> = d_out.iter().map(|d| d * scale).collect();
        let d_state_branch = |g: usize| match self.combine {
            StateCombineMode::Average => {
                let mut s = d_next.clone();
                s.scale(scale);
                s
            }
            StateCombineMode::Identity if g == rep.identity_index() => d_next.clone(),
            StateCombineMode::Identity => d_next.zeros_like(),
        };
        let parts = map_indexed(self.exec, n, |g| {
            let dy = rep.act_perm(g).apply(&scaled);
            let mut local = Gradients::zeros(net.param_count());
            let (_, ds) = net.step_backward(&cache.branches[g], &dy, &d_state_branch(g), &mut local);
            (local, ds)
        });
        let mut d_prev = d_next.zeros_like();
        for (local, ds) in &parts {
            grads.add_assign(local);
            d_prev.add_assign(ds);
        }
        d_prev
    }

    /// Sequence forward keeping what [`Self::backward`] needs.
    pub fn forward_trace(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<SymStepCache>)> {
        let mut state = self.initial_state();
        let mut outs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (y, s, c) = self.step_cached(&state, x)?;
            state = s;
            outs.push(y);
            caches.push(c);
        }
        Ok((outs, caches))
    }

    /// Backpropagation through time through the symmetrizer.
    pub fn backward(&self, caches: &[SymStepCache], d_outputs: &[Vec<f64>]) -> Gradients {
        let mut grads = Gradients::zeros(self.base.param_count());
        let mut d_state = self.initial_state();
        for (c, d) in caches.iter().zip(d_outputs).rev() {
            d_state = self.step_backward(c, d, &d_state, &mut grads);
        }
        grads
    }
}

/// Wrap `net` as a frozen snapshot.
pub fn symmetrize(net: Network, rep: Arc<SymmetryRep>, combine: StateCombineMode) -> Result<SymmetrizedPolicy> {
    SymmetrizedPolicy::new(net, rep, combine)
}

/// Stateful deployment form of `S(ψ)`: owns a snapshot of the base network
/// and the single shared recurrent state.
#[derive(Clone)]
pub struct SymmetrizedPolicy {
    inner: Symmetrized<Network>,
    shared_state: RecurrentState,
}

impl SymmetrizedPolicy {
    pub fn new(net: Network, rep: Arc<SymmetryRep>, combine: StateCombineMode) -> Result<Self> {
        let inner = Symmetrized::new(net, rep, combine)?;
        let shared_state = inner.initial_state();
        Ok(SymmetrizedPolicy { inner, shared_state })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.inner.exec = exec;
        self
    }

    pub fn policy(&self) -> &Symmetrized<Network> {
        &self.inner
    }

    pub fn shared_state(&self) -> &RecurrentState {
        &self.shared_state
    }

    pub fn reset(&mut self) {
        self.shared_state = self.inner.initial_state();
    }

    pub fn policy_step(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        let (y, s) = self.inner.step(&self.shared_state, obs)?;
        self.shared_state = s;
        Ok(y)
    }
}

/// Outcome of a sampled property check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub max_violation: f64,
    pub tol: f64,
    pub samples: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tol
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, width: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sequence-wise equivariance check: for sampled observation sequences τ and
/// every g, compares `Q_{K_g(a)}(L_g τ)` against `Q_a(τ)`.
pub fn check_equivariance<P: RecurrentPolicy>(
    policy: &P,
    rep: &SymmetryRep,
    num_samples: usize,
    seq_len: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    check_widths(policy.obs_width(), policy.action_width(), rep)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..num_samples {
        let tau = random_sequence(&mut rng, seq_len, policy.obs_width());
        let base = policy.run_sequence(&tau)?;
        for g in 0..rep.order() {
            let l = rep.obs_perm(g);
            let k = rep.act_perm(g);
            let moved: Vec<Vec<f64>> = tau.iter().map(|x| l.apply(x)).collect();
            let out = policy.run_sequence(&moved)?;
            for (q, qg) in base.iter().zip(&out) {
                worst = worst.max(max_abs_diff(&k.apply(q), qg));
            }
        }
    }
    Ok(CheckReport {
        max_violation: worst,
        tol,
        samples: num_samples,
    })
}

/// `max ‖S(S(ψ)) − S(ψ)‖∞` over sampled sequences.
pub fn check_fixing(
    net: &Network,
    rep: Arc<SymmetryRep>,
    combine: StateCombineMode,
    num_samples: usize,
    seq_len: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    let once = Symmetrized::new(net, rep.clone(), combine)?;
    let twice = Symmetrized::new(&once, rep, combine)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..num_samples {
        let tau = random_sequence(&mut rng, seq_len, net.input_width());
        let a = once.run_sequence(&tau)?;
        let b = twice.run_sequence(&tau)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max(max_abs_diff(x, y));
        }
    }
    Ok(CheckReport {
        max_violation: worst,
        tol,
        samples: num_samples,
    })
}

/// Observations with the action taken after each one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Option<usize>>,
}

/// Apply group element `g` (canonical index) to a history: observations by
/// `L_g`, action indices by `K_g`.
pub fn permute_history(tau: &History, g: usize, rep: &SymmetryRep) -> Result<History> {
    if g >= rep.order() {
        return Err(EqcError::InvalidGroup(format!("element index {g} out of range")));
    }
    if tau.actions.len() != tau.observations.len() {
        return Err(EqcError::WidthMismatch {
            context: "history actions",
            expected: tau.observations.len(),
            got: tau.actions.len(),
        });
    }
    let l = rep.obs_perm(g);
    let k = rep.act_perm(g);
    let observations = tau
        .observations
        .iter()
        .map(|x| {
            if x.len() != l.degree() {
                return Err(EqcError::WidthMismatch {
                    context: "history observation",
                    expected: l.degree(),
                    got: x.len(),
                });
            }
            Ok(l.apply(x))
        })
        .collect::<Result<Vec<_>>>()?;
    let actions = tau
        .actions
        .iter()
        .map(|a| match *a {
            Some(a) if a >= k.degree() => Err(EqcError::IllegalAction {
                agent: 0,
                action: a,
                reason: "outside action layout".into(),
            }),
            Some(a) => Ok(Some(k.image(a))),
            None => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(History {
        observations,
        actions,
    })
}

/// Whether `pi_hat` on the `g`-permuted history assigns to each permuted
/// action what `pi` assigns to the original, at every step.
pub fn symmetry_equivalent_check(
    pi_hat_values: &[Vec<f64>],
    pi_values: &[Vec<f64>],
    g: usize,
    rep: &SymmetryRep,
    tol: f64,
) -> bool {
    let k = rep.act_perm(g);
    pi_hat_values.len() == pi_values.len()
        && pi_hat_values.iter().zip(pi_values).all(|(hat, pi)| {
            hat.len() == pi.len() && pi.iter().enumerate().all(|(a, v)| (hat[k.image(a)] - v).abs() <= tol)
        })
}

/// Mean total-variation distance between the average of `l` simplex-uniform
/// categorical distributions over `k` outcomes and the uniform distribution.
pub fn averaging_tv_to_uniform(k: usize, l: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut draw = vec![0.0; k];
    for _ in 0..trials {
        let mut acc = vec![0.0; k];
        for _ in 0..l {
            let mut s = 0.0;
            for d in draw.iter_mut() {
                *d = rng.sample::<f64, _>(Exp1);
                s += *d;
            }
            for (a, d) in acc.iter_mut().zip(&draw) {
                *a += d / s;
            }
        }
        let u = 1.0 / k as f64;
        total += 0.5 * acc.iter().map(|a| (a / l as f64 - u).abs()).sum::<f64>();
    }
    total / trials as f64
}
