//! One PASS/FAIL line per acceptance criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use eqc::envs::{verify_symmetry, DecPomdp};
use eqc::evaluation::{cross_play, permutation_test, symmetrize_and_compare, ComparisonTable, CrossPlayReport, SharedPolicy};
use eqc::group::{cyclic_group, dihedral_group, symmetric_group, Block, FeatureLayout, GroupSpec, PermGroup, SymmetryRep, DEFAULT_MAX_ORDER};
use eqc::nn::{grad_check, max_relative_error, mlp_spec, numerical_gradient, probe_loss, Activation, GradCheckLoss, LayerSpec, Network, NetworkSpec};
use eqc::rollout::best_actions;
use eqc::symmetrizer::{averaging_tv_to_uniform, check_equivariance, check_fixing, RecurrentPolicy, StateCombineMode, Symmetrized};
use eqc::training::{resolve_group, train, TrainConfig, TrainOutput};
use eqc::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> TrainConfig {
    let s = std::fs::read_to_string(configs().join(name)).expect("shipped config");
    serde_json::from_str(&s).expect("valid config")
}

fn train_pool(cfg: &TrainConfig, seeds: u64) -> Vec<TrainOutput> {
    (0..seeds)
        .map(|s| {
            let mut c = cfg.clone();
            c.seed = s;
            train(&c, Exec::Serial).expect("training")
        })
        .collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("seed{i}")).collect()
}

/// Layouts for a group acting on `n` points: a fixed prefix and `n` slabs
/// of three features in, `n` actions plus one fixed action out.
fn rep_for(group: PermGroup, n: usize) -> Arc<SymmetryRep> {
    let obs = FeatureLayout::new(vec![Block::Fixed { width: 2 }, Block::Symmetric { slabs: n, width: 3 }]);
    let act = FeatureLayout::new(vec![Block::Symmetric { slabs: n, width: 1 }, Block::Fixed { width: 1 }]);
    Arc::new(SymmetryRep::new(group, obs, act).unwrap())
}

fn sweep_net(i: u64, input: usize, actions: usize) -> Network {
    let spec = match i % 4 {
        0 => mlp_spec(input, 12, actions, true, i),
        1 => NetworkSpec {
            input_width: input,
            layers: vec![
                LayerSpec::Linear { out: 10 },
                LayerSpec::Activation { function: Activation::Tanh },
                LayerSpec::Lstm { hidden: 8 },
                LayerSpec::DuelingHead { actions },
            ],
            seed: i,
        },
        2 => NetworkSpec {
            input_width: input,
            layers: vec![
                LayerSpec::Linear { out: 10 },
                LayerSpec::Activation { function: Activation::Relu },
                LayerSpec::Lstm { hidden: 6 },
                LayerSpec::Lstm { hidden: 6 },
                LayerSpec::Linear { out: actions },
            ],
            seed: i,
        },
        _ => mlp_spec(input, 12, actions, false, i),
    };
    Network::new(spec).unwrap()
}

fn sweep_groups() -> Vec<(&'static str, PermGroup, usize)> {
    vec![
        ("C5", cyclic_group(5).unwrap(), 5),
        ("D10", dihedral_group(5).unwrap(), 5),
        ("S4", symmetric_group(4, DEFAULT_MAX_ORDER).unwrap(), 4),
    ]
}

fn ac1() -> Check {
    let mut worst = 0.0f64;
    for (name, group, n) in sweep_groups() {
        let rep = rep_for(group, n);
        for i in 0..20 {
            let net = sweep_net(i, 2 + 3 * n, n + 1);
            let s = Symmetrized::new(&net, rep.clone(), StateCombineMode::Average).unwrap();
            let r = check_equivariance(&s, &rep, 100, 8, 1000 + i, 1e-9).unwrap();
            if !r.passed() {
                return Err(format!("{name} network {i}: violation {:e}", r.max_violation));
            }
            worst = worst.max(r.max_violation);
        }
    }
    Ok(format!("60 networks, 100 sequences of length 8 each; max violation {worst:e}"))
}

fn ac2() -> Check {
    let mut worst = 0.0f64;
    for (name, group, n) in sweep_groups() {
        let rep = rep_for(group, n);
        for i in 0..20 {
            let net = sweep_net(i, 2 + 3 * n, n + 1);
            let r = check_fixing(&net, rep.clone(), StateCombineMode::Average, 100, 8, 2000 + i, 1e-9).unwrap();
            if !r.passed() {
                return Err(format!("{name} network {i}: ‖S(S(ψ)) − S(ψ)‖∞ = {:e}", r.max_violation));
            }
            worst = worst.max(r.max_violation);
        }
    }
    // W = a·I + b·11ᵀ with a constant bias commutes with every permutation
    let n = 5;
    let (a, b, c) = (0.7, -0.2, 0.3);
    let mut params = Vec::new();
    for r in 0..n {
        for col in 0..n {
            params.push(if r == col { a + b } else { b });
        }
    }
    params.extend(std::iter::repeat_n(c, n));
    let lin = Network::from_params(
        NetworkSpec {
            input_width: n,
            layers: vec![LayerSpec::Linear { out: n }],
            seed: 0,
        },
        params,
    )
    .unwrap();
    let layout = FeatureLayout::new(vec![Block::Symmetric { slabs: n, width: 1 }]);
    let rep = Arc::new(SymmetryRep::new(dihedral_group(n).unwrap(), layout.clone(), layout).unwrap());
    let s = Symmetrized::new(&lin, rep, StateCombineMode::Average).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lin_diff = 0.0f64;
    for _ in 0..100 {
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let p = lin.run_sequence(&xs).unwrap();
        let q = s.run_sequence(&xs).unwrap();
        for (u, v) in p.iter().zip(&q) {
            for (x, y) in u.iter().zip(v) {
                lin_diff = lin_diff.max((x - y).abs());
            }
        }
    }
    if lin_diff > 1e-12 {
        return Err(format!("equivariant linear network moved by {lin_diff:e}"));
    }
    Ok(format!("sweep max {worst:e}; equivariant linear network reproduced within {lin_diff:e}"))
}

fn xp_pool(cfg: &TrainConfig, outs: &[TrainOutput], episodes: usize) -> CrossPlayReport {
    let env = cfg.env.build().unwrap();
    let pool: Vec<SharedPolicy> = outs
        .iter()
        .map(|o| o.policy.deploy(env.contract(), Exec::Serial).unwrap())
        .collect();
    cross_play(&pool, &ids(pool.len()), &cfg.env, episodes, 0, Exec::Serial).unwrap()
}

fn ac3() -> Check {
    let sp_cfg = load("lever_selfplay.json");
    let sp = xp_pool(&sp_cfg, &train_pool(&sp_cfg, 20), 1);
    let sym_cfg = load("lever_symmetrized.json");
    let sym_outs = train_pool(&sym_cfg, 20);
    let env = sym_cfg.env.build().unwrap();
    for (s, o) in sym_outs.iter().enumerate() {
        let p = o.policy.deploy(env.contract(), Exec::Serial).unwrap();
        let (q, _) = p.step(&p.initial_state(), &[1.0]).unwrap();
        if best_actions(&q, &[true; 10]) != vec![9] {
            return Err(format!("symmetrized seed {s} does not single out the 0.9 lever: {q:?}"));
        }
    }
    let sym = xp_pool(&sym_cfg, &sym_outs, 1);
    let detail = format!(
        "self-play XP {:.4} ± {:.4} (SP {:.3}); C9-symmetrized XP {} ± {:.1e}",
        sp.xp.mean, sp.xp.sem, sp.sp.mean, sym.xp.mean, sym.xp.sem
    );
    let a_ok = (0.03..=0.35).contains(&sp.xp.mean) && sp.xp.mean < 0.9;
    let b_ok = sym.xp.mean == 0.9;
    if a_ok && b_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac4() -> Check {
    let sp_cfg = load("referential_selfplay.json");
    let gop_cfg = load("referential_gop.json");
    let sp_nets: Vec<Network> = train_pool(&sp_cfg, 10).into_iter().map(|o| o.policy.network).collect();
    let gop_nets: Vec<Network> = train_pool(&gop_cfg, 10).into_iter().map(|o| o.policy.network).collect();
    let s3 = [GroupSpec::named("S3")];
    let sp = symmetrize_and_compare(&sp_nets, &ids(10), &sp_cfg.env, &[], StateCombineMode::Average, 100, 0, Exec::Serial).unwrap();
    let gop = symmetrize_and_compare(&gop_nets, &ids(10), &gop_cfg.env, &s3, StateCombineMode::Average, 100, 0, Exec::Serial).unwrap();
    let a = &sp.rows[0].report;
    let b = &gop.rows[1].report;
    let t = permutation_test(&a.pair_means, &b.pair_means, 10_000, 7, Exec::Serial).unwrap();
    let detail = format!(
        "self-play XP {:.4} ± {:.4}; G-OP + S3 XP {:.4} ± {:.4}; p = {} (99% CI [{:.2e}, {:.2e}], {} shuffles)",
        a.xp.mean, a.xp.sem, b.xp.mean, b.xp.sem, t.p_value, t.ci_low, t.ci_high, t.iterations
    );
    if b.xp.mean > a.xp.mean && t.p_value < 0.05 && t.ci_high < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac5() -> Check {
    let cfg = load("minihanabi_selfplay.json");
    let env = cfg.env.build().unwrap();
    let s3 = resolve_group(&GroupSpec::named("S3"), env.contract()).unwrap();
    let oracle = verify_symmetry(&cfg.env, &s3, 100, 0).unwrap();
    if !oracle.passed() {
        return Err(format!("{} symmetry violations, first {:?}", oracle.violations.len(), oracle.violations[0]));
    }
    let nets: Vec<Network> = train_pool(&cfg, 6).into_iter().map(|o| o.policy.network).collect();
    let groups = [GroupSpec::named("C3"), GroupSpec::named("S3")];
    let table = symmetrize_and_compare(&nets, &ids(6), &cfg.env, &groups, StateCombineMode::Average, 100, 0, Exec::Serial).unwrap();
    let raw = table.rows[0].report.failure_rate;
    let mut detail = format!(
        "oracle clean over {} steps; bombout rate unsymmetrized {:.4} ± {:.4}",
        oracle.steps_checked, raw.mean, raw.sem
    );
    let mut ok = true;
    for r in &table.rows[1..] {
        let f = r.report.failure_rate;
        detail.push_str(&format!(", {} {:.4} ± {:.4}", r.label, f.mean, f.sem));
        ok &= f.mean <= raw.mean;
    }
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac6() -> Check {
    let far = averaging_tv_to_uniform(20, 10_000, 100, 0);
    let near = averaging_tv_to_uniform(20, 10, 100, 0);
    let detail = format!("mean TV {near:.4} at l = 10, {far:.4} at l = 10000");
    if far < 0.05 && far < near {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac7() -> Check {
    let kinds: Vec<(&str, NetworkSpec)> = vec![
        (
            "linear",
            NetworkSpec {
                input_width: 4,
                layers: vec![LayerSpec::Linear { out: 3 }],
                seed: 1,
            },
        ),
        (
            "tanh",
            NetworkSpec {
                input_width: 4,
                layers: vec![
                    LayerSpec::Linear { out: 5 },
                    LayerSpec::Activation { function: Activation::Tanh },
                    LayerSpec::Linear { out: 3 },
                ],
                seed: 2,
            },
        ),
        (
            "relu",
            NetworkSpec {
                input_width: 4,
                layers: vec![
                    LayerSpec::Linear { out: 5 },
                    LayerSpec::Activation { function: Activation::Relu },
                    LayerSpec::Linear { out: 3 },
                ],
                seed: 3,
            },
        ),
        (
            "lstm",
            NetworkSpec {
                input_width: 4,
                layers: vec![LayerSpec::Linear { out: 5 }, LayerSpec::Lstm { hidden: 4 }, LayerSpec::Linear { out: 3 }],
                seed: 4,
            },
        ),
        (
            "dueling",
            NetworkSpec {
                input_width: 4,
                layers: vec![LayerSpec::Linear { out: 5 }, LayerSpec::DuelingHead { actions: 3 }],
                seed: 5,
            },
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut parts = Vec::new();
    for (name, spec) in kinds {
        let net = Network::new(spec).unwrap();
        let err = grad_check(&net, &xs, 1e-6).unwrap();
        if err >= 1e-4 {
            return Err(format!("{name}: relative error {err:e}"));
        }
        parts.push(format!("{name} {err:.1e}"));
    }
    let net = Network::new(mlp_spec(4, 5, 3, true, 6)).unwrap();
    let loss = GradCheckLoss::new(xs.len(), 3, 1);
    let (_, mut analytic) = probe_loss(&net, &xs, &loss).unwrap();
    analytic.0[0] = analytic.0[0] * 1.5 + 0.1;
    let numeric = numerical_gradient(&net, &xs, &loss, 1e-6).unwrap();
    let corrupted = max_relative_error(&analytic, &numeric);
    if corrupted <= 1e-2 {
        return Err(format!("corrupted gradient not detected: {corrupted:e}"));
    }
    Ok(format!("{}; corrupted gradient error {corrupted:.2}", parts.join(", ")))
}

fn ac8() -> Check {
    let c5 = cyclic_group(5).unwrap();
    let d10 = dihedral_group(5).unwrap();
    let s5 = symmetric_group(5, DEFAULT_MAX_ORDER).unwrap();
    let detail = format!(
        "|C5| = {}, |D10| = {}, |S5| = {}; C5 ≤ D10: {}, D10 ≤ S5: {}, C5 ≤ S5: {}",
        c5.order(),
        d10.order(),
        s5.order(),
        c5.is_subgroup_of(&d10),
        d10.is_subgroup_of(&s5),
        c5.is_subgroup_of(&s5)
    );
    let ok = (c5.order(), d10.order(), s5.order()) == (5, 10, 120)
        && c5.is_subgroup_of(&d10)
        && d10.is_subgroup_of(&s5)
        && c5.is_subgroup_of(&s5);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn eqc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eqc")).args(args).output().expect("run eqc")
}

fn eqc_ok(args: &[&str]) -> Result<(), String> {
    let out = eqc(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("eqc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn read<T: for<'de> serde::Deserialize<'de>>(p: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn ac9() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).display().to_string();
    let mut cfg = load("minihanabi_selfplay.json");
    cfg.episodes = 60;
    cfg.epoch_episodes = 60;
    std::fs::write(d("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    for s in ["1", "2"] {
        eqc_ok(&["train", "--serial", "--config", &d("cfg.json"), "--seed", s, "--out", &d(&format!("r{s}"))])?;
        eqc_ok(&["symmetrize", "--serial", "--checkpoint", &d(&format!("r{s}")), "--group", "trivial", "--out", &d(&format!("t{s}"))])?;
    }
    eqc_ok(&["crossplay", "--serial", "--bundle", &d("r1"), "--bundle", &d("r2"), "--episodes", "200", "--groups", "trivial", "--out", &d("xr")])?;
    eqc_ok(&["crossplay", "--serial", "--bundle", &d("t1"), "--bundle", &d("t2"), "--episodes", "200", "--out", &d("xt")])?;
    let table: ComparisonTable = read(&dir.path().join("xr/comparison.json"));
    if table.rows[0].report != table.rows[1].report {
        return Err("trivial-group row differs from the unsymmetrized row".into());
    }
    let raw: CrossPlayReport = read(&dir.path().join("xr/crossplay.json"));
    let mut wrapped: CrossPlayReport = read(&dir.path().join("xt/crossplay.json"));
    wrapped.policy_ids = raw.policy_ids.clone();
    if raw != wrapped {
        return Err("trivially symmetrized bundles cross-play differently".into());
    }
    Ok(format!(
        "identical reports over {} episodes per pair (XP {:.4}, bombout rate {:.4}, {} decisions)",
        2 * raw.episodes_per_pair,
        raw.xp.mean,
        raw.failure_rate.mean,
        raw.decisions
    ))
}

fn ac10() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut shipped: Vec<PathBuf> = std::fs::read_dir(configs())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    shipped.sort();
    for cfg in &shipped {
        let stem = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        let mut manifests = Vec::new();
        for run in ["a", "b"] {
            let out = dir.path().join(format!("{stem}_{run}"));
            eqc_ok(&["train", "--serial", "--config", &cfg.display().to_string(), "--out", &out.display().to_string()])?;
            let m: serde_json::Value = read(&out.join("manifest.json"));
            manifests.push((m["config_hash"].clone(), m["artifacts"].clone()));
        }
        if manifests[0] != manifests[1] {
            return Err(format!("{stem}: artifact hashes differ between runs"));
        }
    }
    Ok(format!("{} shipped configs, two serial runs each, identical artifact hashes", shipped.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 equivariance", ac1),
        ("2 fixing", ac2),
        ("3 lever game", ac3),
        ("4 referential game", ac4),
        ("5 mini-hanabi", ac5),
        ("6 averaging to uniform", ac6),
        ("7 gradient check", ac7),
        ("8 group facts", ac8),
        ("9 trivial group identity", ac9),
        ("10 determinism", ac10),
    ];
    // libtest-style filtering, so `cargo test <name>` skips this target
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("AC {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("AC {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
