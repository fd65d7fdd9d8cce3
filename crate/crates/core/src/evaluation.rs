//! Cross-play, test-time symmetrization, behavioural diagnostics and
//! significance tests.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::envs::{DecPomdp, EnvConfig, NUM_AGENTS};
use crate::error::{EqcError, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::group::GroupSpec;
use crate::nn::Network;
use crate::rollout::{mix_seed, play_episode, EpisodeResult, MeanSem, Selection};
use crate::symmetrizer::{RecurrentPolicy, StateCombineMode, Symmetrized};
use crate::training::resolve_group;

pub type SharedPolicy = Arc<dyn RecurrentPolicy>;

/// Seed of episode `k` between seats `i` (first) and `j` (second).
pub fn episode_seed(seed: u64, i: usize, j: usize, k: usize) -> u64 {
    mix_seed(&[seed, i as u64, j as u64, k as u64])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Episodes lost to the environment's failure terminal.
    Bombout,
    /// Environments without one: episodes with zero return.
    ZeroReward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossPlayReport {
    pub policy_ids: Vec<String>,
    pub episodes_per_pair: usize,
    pub seed: u64,
    /// `mean[i][j]`: mean return of policies i and j over both seat orders.
    pub mean: Vec<Vec<f64>>,
    pub sem: Vec<Vec<f64>>,
    /// Over distinct pairs, SEM over pair means.
    pub xp: MeanSem,
    /// Over the diagonal, SEM over policies.
    pub sp: MeanSem,
    /// Distinct-pair means in `(i, j), i < j` order.
    pub pair_means: Vec<f64>,
    pub failure_kind: FailureKind,
    /// Cross-play failure rate, SEM over episodes.
    pub failure_rate: MeanSem,
    pub ties: usize,
    pub decisions: usize,
}

impl CrossPlayReport {
    pub fn matrix_csv(&self) -> String {
        let mut s = String::from("policy");
        for id in &self.policy_ids {
            let _ = write!(s, ",{id}");
        }
        s.push('\n');
        for (i, id) in self.policy_ids.iter().enumerate() {
            s.push_str(id);
            for j in 0..self.policy_ids.len() {
                let _ = write!(s, ",{}", self.mean[i][j]);
            }
            s.push('\n');
        }
        s
    }
}

struct Cell {
    returns: Vec<f64>,
    failures: Vec<f64>,
    ties: usize,
    decisions: usize,
}

fn failure_value(r: &EpisodeResult) -> (f64, FailureKind) {
    match r.failed {
        Some(f) => (f64::from(u8::from(f)), FailureKind::Bombout),
        None => (f64::from(u8::from(r.episode_return == 0.0)), FailureKind::ZeroReward),
    }
}

fn play_cell(
    env: &EnvConfig,
    a: &dyn RecurrentPolicy,
    b: &dyn RecurrentPolicy,
    seats: (usize, usize),
    episodes: usize,
    seed: u64,
) -> Result<(Cell, FailureKind)> {
    let mut e = env.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, seats.0 as u64, seats.1 as u64]));
    let mut cell = Cell {
        returns: Vec::with_capacity(2 * episodes),
        failures: Vec::with_capacity(2 * episodes),
        ties: 0,
        decisions: 0,
    };
    let mut kind = FailureKind::ZeroReward;
    let (i, j) = seats;
    for (first, second, si, sj) in [(a, b, i, j), (b, a, j, i)] {
        for k in 0..episodes {
            let r = play_episode(&mut e, [first, second], episode_seed(seed, si, sj, k), Selection::Greedy, &mut rng)?;
            let (f, fk) = failure_value(&r);
            kind = fk;
            cell.returns.push(r.episode_return);
            cell.failures.push(f);
            cell.ties += r.ties;
            cell.decisions += r.decisions;
        }
    }
    Ok((cell, kind))
}

/// Greedy pairings of every policy with every other one (and itself), in
/// both seat orders.
pub fn cross_play(
    policies: &[SharedPolicy],
    ids: &[String],
    env: &EnvConfig,
    episodes_per_pair: usize,
    seed: u64,
    exec: Exec,
) -> Result<CrossPlayReport> {
    let n = policies.len();
    if n < 2 {
        return Err(EqcError::InvalidConfig("cross-play needs at least two policies".into()));
    }
    if ids.len() != n {
        return Err(EqcError::InvalidConfig("one id per policy is required".into()));
    }
    if episodes_per_pair == 0 {
        return Err(EqcError::InvalidConfig("episodes per pair must be positive".into()));
    }
    let probe = env.build()?;
    let c = probe.contract();
    for p in policies {
        if p.obs_width() != c.obs_width() || p.action_width() != c.action_count() {
            return Err(EqcError::WidthMismatch {
                context: "policy versus environment",
                expected: c.obs_width(),
                got: p.obs_width(),
            });
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let cells = try_map_indexed(exec, pairs.len(), |p| {
        let (i, j) = pairs[p];
        play_cell(env, &*policies[i], &*policies[j], (i, j), episodes_per_pair, seed)
    })?;
    let mut mean = vec![vec![0.0; n]; n];
    let mut sem = vec![vec![0.0; n]; n];
    let mut pair_means = Vec::new();
    let mut diag = Vec::new();
    let mut xp_failures = Vec::new();
    let mut ties = 0;
    let mut decisions = 0;
    let mut kind = FailureKind::ZeroReward;
    for (&(i, j), (cell, k)) in pairs.iter().zip(&cells) {
        kind = *k;
        let m = MeanSem::from_samples(&cell.returns);
        mean[i][j] = m.mean;
        mean[j][i] = m.mean;
        sem[i][j] = m.sem;
        sem[j][i] = m.sem;
        if i == j {
            diag.push(m.mean);
        } else {
            pair_means.push(m.mean);
            xp_failures.extend_from_slice(&cell.failures);
            ties += cell.ties;
            decisions += cell.decisions;
        }
    }
    Ok(CrossPlayReport {
        policy_ids: ids.to_vec(),
        episodes_per_pair,
        seed,
        mean,
        sem,
        xp: MeanSem::from_samples(&pair_means),
        sp: MeanSem::from_samples(&diag),
        pair_means,
        failure_kind: kind,
        failure_rate: MeanSem::from_samples(&xp_failures),
        ties,
        decisions,
    })
}

/// Test-time symmetrizer applied to a pool: `None` means no wrapper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub group: Option<GroupSpec>,
    pub group_order: usize,
    pub report: CrossPlayReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub combine: StateCombineMode,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,group_order,xp_mean,xp_sem,sp_mean,sp_sem,failure_rate,failure_sem,ties,decisions\n");
        for r in &self.rows {
            let p = &r.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.label,
                r.group_order,
                p.xp.mean,
                p.xp.sem,
                p.sp.mean,
                p.sp.sem,
                p.failure_rate.mean,
                p.failure_rate.sem,
                p.ties,
                p.decisions
            );
        }
        s
    }
}

/// Symmetrize every network in the pool with each group and compare
/// cross-play; the first row is always the unwrapped pool.
#[allow(clippy::too_many_arguments)]
pub fn symmetrize_and_compare(
    networks: &[Network],
    ids: &[String],
    env: &EnvConfig,
    groups: &[GroupSpec],
    combine: StateCombineMode,
    episodes_per_pair: usize,
    seed: u64,
    exec: Exec,
) -> Result<ComparisonTable> {
    let probe = env.build()?;
    let contract = probe.contract();
    let raw: Vec<SharedPolicy> = networks.iter().map(|n| Arc::new(n.clone()) as SharedPolicy).collect();
    let mut rows = vec![ComparisonRow {
        label: "unsymmetrized".into(),
        group: None,
        group_order: 1,
        report: cross_play(&raw, ids, env, episodes_per_pair, seed, exec)?,
    }];
    for g in groups {
        let rep = Arc::new(contract.rep(resolve_group(g, contract)?)?);
        let pool = networks
            .iter()
            .map(|n| {
                Ok(Arc::new(Symmetrized::new(n.clone(), rep.clone(), combine)?.with_exec(Exec::Serial))
                    as SharedPolicy)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ComparisonRow {
            label: format!("{g}-symmetrized"),
            group: Some(g.clone()),
            group_order: rep.order(),
            report: cross_play(&pool, ids, env, episodes_per_pair, seed, exec)?,
        });
    }
    Ok(ComparisonTable { combine, rows })
}

/// Empirical `P(a_t = row | a_{t-1} = column)` from greedy self-play.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalActionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    /// Column totals; zero marks a column with no support.
    pub support: Vec<usize>,
    /// `None` for unsupported columns.
    pub probabilities: Vec<Vec<Option<f64>>>,
    pub episodes: usize,
}

impl ConditionalActionMatrix {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("action");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (r, l) in self.labels.iter().enumerate() {
            s.push_str(l);
            for c in 0..self.labels.len() {
                match self.probabilities[r][c] {
                    Some(p) => {
                        let _ = write!(s, ",{p}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Count consecutive actions by alternating agents in greedy self-play of a
/// turn-based environment.
pub fn conditional_action_matrix(
    policy: &dyn RecurrentPolicy,
    env: &EnvConfig,
    labels: Option<Vec<String>>,
    episodes: usize,
    seed: u64,
) -> Result<ConditionalActionMatrix> {
    let mut e = env.build()?;
    e.reset(0);
    if e.acting_agents().len() != 1 {
        return Err(EqcError::Unsupported(format!(
            "{} is not turn-based",
            env.name()
        )));
    }
    let n = e.contract().action_count();
    let labels = labels.unwrap_or_else(|| (0..n).map(|a| format!("a{a}")).collect());
    let mut counts = vec![vec![0usize; n]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..episodes {
        let r = play_episode(&mut e, [policy, policy], mix_seed(&[seed, k as u64]), Selection::Greedy, &mut rng)?;
        let acts: Vec<(usize, usize)> = r
            .transitions
            .iter()
            .filter_map(|t| (0..NUM_AGENTS).find_map(|i| t.actions[i].map(|a| (i, a))))
            .collect();
        for w in acts.windows(2) {
            if w[0].0 != w[1].0 {
                counts[w[1].1][w[0].1] += 1;
            }
        }
    }
    let support: Vec<usize> = (0..n).map(|c| (0..n).map(|r| counts[r][c]).sum()).collect();
    let probabilities = (0..n)
        .map(|r| {
            (0..n)
                .map(|c| (support[c] > 0).then(|| counts[r][c] as f64 / support[c] as f64))
                .collect()
        })
        .collect();
    Ok(ConditionalActionMatrix {
        labels,
        counts,
        support,
        probabilities,
        episodes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed_difference: f64,
    pub iterations: usize,
    pub exceed: usize,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Two-sided Clopper-Pearson interval for `x` successes in `n` trials.
pub fn clopper_pearson(x: usize, n: usize, confidence: f64) -> (f64, f64) {
    let alpha = 1.0 - confidence;
    let lo = if x == 0 {
        0.0
    } else {
        Beta::new(x as f64, (n - x + 1) as f64)
            .expect("positive shape")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if x == n {
        1.0
    } else {
        Beta::new((x + 1) as f64, (n - x) as f64)
            .expect("positive shape")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

const SHUFFLE_CHUNK: usize = 1000;

/// One-tailed Monte Carlo test of `mean(b) > mean(a)` by label shuffling,
/// with a 99% interval on the estimated p-value.
pub fn permutation_test(a: &[f64], b: &[f64], iterations: usize, seed: u64, exec: Exec) -> Result<PermutationTest> {
    if a.is_empty() || b.is_empty() || iterations == 0 {
        return Err(EqcError::InvalidConfig(
            "permutation test needs nonempty samples and iterations".into(),
        ));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let observed = mean(b) - mean(a);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let chunks = iterations.div_ceil(SHUFFLE_CHUNK);
    let slack = 1e-12 * observed.abs().max(1.0);
    let counts = crate::exec::map_indexed(exec, chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, c as u64]));
        let mut buf = pooled.clone();
        let todo = SHUFFLE_CHUNK.min(iterations - c * SHUFFLE_CHUNK);
        let mut hits = 0usize;
        for _ in 0..todo {
            buf.shuffle(&mut rng);
            let (x, y) = buf.split_at(a.len());
            if mean(y) - mean(x) >= observed - slack {
                hits += 1;
            }
        }
        hits
    });
    let exceed: usize = counts.iter().sum();
    let (ci_low, ci_high) = clopper_pearson(exceed, iterations, 0.99);
    Ok(PermutationTest {
        observed_difference: observed,
        iterations,
        exceed,
        p_value: exceed as f64 / iterations as f64,
        ci_low,
        ci_high,
    })
}

/// Fraction of episodes that end in the failure terminal.
pub fn failure_rate(
    pair: [&dyn RecurrentPolicy; NUM_AGENTS],
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<MeanSem> {
    let mut e = env.build()?;
    e.reset(0);
    if e.failed().is_none() {
        return Err(EqcError::Unsupported(format!(
            "{} has no failure terminal",
            env.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let r = play_episode(&mut e, pair, mix_seed(&[seed, k as u64]), Selection::Greedy, &mut rng)?;
        xs.push(f64::from(u8::from(r.failed == Some(true))));
    }
    Ok(MeanSem::from_samples(&xs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{lever_expected_return, LeverConfig, MiniHanabiConfig, ReferentialConfig};
    use crate::nn::{LayerSpec, NetworkSpec};

    /// Bias-only network with a single preferred action.
    fn constant_policy(input: usize, actions: usize, preferred: usize) -> Network {
        let mut params = vec![0.0; input * actions + actions];
        params[input * actions + preferred] = 1.0;
        Network::from_params(
            NetworkSpec {
                input_width: input,
                layers: vec![LayerSpec::Linear { out: actions }],
                seed: 0,
            },
            params,
        )
        .unwrap()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn lever() -> EnvConfig {
        EnvConfig::Lever(LeverConfig::default())
    }

    #[test]
    fn cross_play_needs_two_policies() {
        let p: Vec<SharedPolicy> = vec![Arc::new(constant_policy(1, 10, 0))];
        assert!(cross_play(&p, &ids(1), &lever(), 5, 0, Exec::Serial).is_err());
    }

    #[test]
    fn copies_of_one_policy_cross_play_at_self_play() {
        let p: Vec<SharedPolicy> = vec![Arc::new(constant_policy(1, 10, 4)), Arc::new(constant_policy(1, 10, 4))];
        let r = cross_play(&p, &ids(2), &lever(), 5, 0, Exec::Serial).unwrap();
        assert_eq!(r.xp.mean, r.sp.mean);
        assert_eq!(r.xp.mean, 1.0);
    }

    #[test]
    fn monte_carlo_cross_play_matches_enumeration() {
        let values = LeverConfig::default().values;
        let picks = [0usize, 3, 3, 7, 9, 1];
        let p: Vec<SharedPolicy> = picks
            .iter()
            .map(|&a| Arc::new(constant_policy(1, 10, a)) as SharedPolicy)
            .collect();
        let r = cross_play(&p, &ids(picks.len()), &lever(), 3, 1, Exec::Parallel).unwrap();
        let mut exact = Vec::new();
        for i in 0..picks.len() {
            for j in i + 1..picks.len() {
                exact.push(lever_expected_return(&values, picks[i], picks[j]));
            }
        }
        assert_eq!(r.pair_means, exact);
        assert_eq!(r.failure_kind, FailureKind::ZeroReward);
        let s = cross_play(&p, &ids(picks.len()), &lever(), 3, 1, Exec::Serial).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn referential_cross_play_matches_enumeration() {
        // speaker maps target t to message pi(t); listener inverts sigma
        let env = EnvConfig::Referential(ReferentialConfig::default());
        let conventions = [[0usize, 1, 2], [1, 2, 0], [2, 1, 0]];
        let build = |perm: [usize; 3]| {
            // obs: [speaker, my turn, target(3), last message(3)], 3 actions
            let mut w = vec![0.0; 8 * 3];
            for t in 0..3 {
                w[perm[t] * 8 + 2 + t] = 1.0;
                w[t * 8 + 5 + perm[t]] = 1.0;
            }
            w.extend([0.0; 3]);
            Network::from_params(
                NetworkSpec {
                    input_width: 8,
                    layers: vec![LayerSpec::Linear { out: 3 }],
                    seed: 0,
                },
                w,
            )
            .unwrap()
        };
        let p: Vec<SharedPolicy> = conventions.iter().map(|&c| Arc::new(build(c)) as SharedPolicy).collect();
        let r = cross_play(&p, &ids(3), &env, 400, 2, Exec::Serial).unwrap();
        assert!(r.sp.mean == 1.0);
        for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            let inv = |c: [usize; 3]| {
                let mut q = vec![0; 3];
                for (t, &m) in c.iter().enumerate() {
                    q[m] = t;
                }
                q
            };
            let exact = 0.5
                * (crate::envs::referential_expected_return(&conventions[i], &inv(conventions[j]))
                    + crate::envs::referential_expected_return(&conventions[j], &inv(conventions[i])));
            let sem = r.sem[i][j].max(1e-12);
            assert!((r.pair_means[k] - exact).abs() <= 3.0 * sem + 1e-12, "{k} {} {exact}", r.pair_means[k]);
        }
    }

    #[test]
    fn trivial_group_row_equals_unsymmetrized_row() {
        let env = EnvConfig::MiniHanabi(MiniHanabiConfig::default());
        let c = env.build().unwrap().contract().clone();
        let nets: Vec<Network> = (0..3)
            .map(|s| Network::new(crate::nn::mlp_spec(c.obs_width(), 8, c.action_count(), true, s)).unwrap())
            .collect();
        let t = symmetrize_and_compare(
            &nets,
            &ids(3),
            &env,
            &[GroupSpec::named("trivial"), GroupSpec::named("S3")],
            StateCombineMode::Average,
            5,
            3,
            Exec::Serial,
        )
        .unwrap();
        assert_eq!(t.rows[0].report, t.rows[1].report);
        assert_eq!(t.rows[2].group_order, 6);
        assert!(t.to_csv().lines().count() == 4);
    }

    #[test]
    fn permutation_test_examples() {
        let zeros = vec![0.0; 1000];
        let ones = vec![1.0; 1000];
        let r = permutation_test(&zeros, &ones, 10_000, 0, Exec::Serial).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.ci_high < 0.01);
        let same = vec![0.3; 50];
        let r = permutation_test(&same, &same, 2000, 0, Exec::Serial).unwrap();
        assert!(r.p_value > 0.5 && r.ci_high > 0.5);
    }

    #[test]
    fn permutation_test_is_calibrated_under_the_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = Vec::new();
        for run in 0..40 {
            let mut xs: Vec<f64> = (0..40).map(|i| ((i * 7919 + run) % 13) as f64).collect();
            xs.shuffle(&mut rng);
            let (a, b) = xs.split_at(20);
            ps.push(permutation_test(a, b, 500, run as u64, Exec::Serial).unwrap().p_value);
        }
        let low = ps.iter().filter(|&&p| p < 0.5).count();
        assert!((10..=30).contains(&low), "{ps:?}");
        assert!(ps.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn permutation_test_serial_equals_parallel() {
        let a: Vec<f64> = (0..30).map(|i| (i % 5) as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        assert_eq!(
            permutation_test(&a, &b, 5500, 4, Exec::Serial).unwrap(),
            permutation_test(&a, &b, 5500, 4, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn clopper_pearson_known_values() {
        let (lo, hi) = clopper_pearson(0, 10_000, 0.99);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.005f64.powf(1.0 / 10_000.0))).abs() < 1e-9);
        let (lo, hi) = clopper_pearson(50, 100, 0.99);
        assert!(lo < 0.5 && hi > 0.5);
    }

    fn hanabi_slot_player(cfg: &MiniHanabiConfig, action: usize) -> Network {
        let env = EnvConfig::MiniHanabi(cfg.clone());
        let c = env.build().unwrap().contract().clone();
        constant_policy(c.obs_width(), c.action_count(), action)
    }

    #[test]
    fn failure_rates() {
        let cfg = MiniHanabiConfig::default();
        let env = EnvConfig::MiniHanabi(cfg.clone());
        let h = cfg.hand_size;
        let discarder = hanabi_slot_player(&cfg, h);
        let r = failure_rate([&discarder, &discarder], &env, 200, 0).unwrap();
        assert_eq!(r.mean, 0.0);
        let blind = hanabi_slot_player(&cfg, 0);
        let r = failure_rate([&blind, &blind], &env, 1000, 0).unwrap();
        assert!(r.mean >= 0.5 && r.mean <= 1.0, "{r:?}");
        assert!(failure_rate([&blind, &blind], &lever(), 10, 0).is_err());
    }

    #[test]
    fn conditional_matrix_columns_sum_to_one() {
        let cfg = MiniHanabiConfig::default();
        let env = EnvConfig::MiniHanabi(cfg.clone());
        let c = env.build().unwrap().contract().clone();
        let net = Network::new(crate::nn::mlp_spec(c.obs_width(), 16, c.action_count(), true, 3)).unwrap();
        let m = conditional_action_matrix(&net, &env, None, 200, 0).unwrap();
        for col in 0..m.labels.len() {
            if m.support[col] > 0 {
                let s: f64 = (0..m.labels.len()).map(|r| m.probabilities[r][col].unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            } else {
                assert!((0..m.labels.len()).all(|r| m.probabilities[r][col].is_none()));
            }
        }
        let always = hanabi_slot_player(&cfg, 0);
        let m = conditional_action_matrix(&always, &env, None, 50, 0).unwrap();
        let nonzero = m.counts.iter().flatten().filter(|&&x| x > 0).count();
        assert_eq!(nonzero, 1);
        assert!(conditional_action_matrix(&always, &lever(), None, 5, 0).is_err());
    }
}
