use std::path::{Path, PathBuf};

use eqc::envs::{verify_symmetry, DecPomdp, EnvConfig};
use eqc::evaluation::{conditional_action_matrix, cross_play, symmetrize_and_compare, ComparisonTable, CrossPlayReport};
use eqc::group::GroupSpec;
use eqc::symmetrizer::{check_equivariance, check_fixing, CheckReport, StateCombineMode};
use eqc::training::{evaluate_selfplay, resolve_group, train as run_training, PolicyBundle, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::manifest::{hash_input, read_manifest, sha256_hex, unix_now, Artifact, RunDir, RunManifest};
use crate::{CliError, Global};

pub const POLICY: &str = "policy.json";
const CROSSPLAY: &str = "crossplay.json";
const COMPARISON: &str = "comparison.json";

fn manifest(g: &Global, subcommand: &str, config: &impl Serialize, seed: u64, inputs: Vec<Artifact>) -> RunManifest {
    let config_json = serde_json::to_string(config).unwrap_or_default();
    RunManifest {
        subcommand: subcommand.into(),
        config_hash: sha256_hex(config_json.as_bytes()),
        seed,
        started_unix: unix_now(),
        finished_unix: 0,
        code_version: env!("CARGO_PKG_VERSION").into(),
        serial: g.serial,
        threads: if g.serial { 1 } else { eqc::exec::worker_threads() },
        inputs,
        artifacts: Vec::new(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let s = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_bundle(path: &Path) -> Result<PolicyBundle, CliError> {
    // accept a run directory as well as the file itself
    let file = if path.is_dir() { path.join(POLICY) } else { path.to_path_buf() };
    read_json(&file)
}

fn bundle_input(path: &Path) -> Result<Artifact, CliError> {
    hash_input(&if path.is_dir() { path.join(POLICY) } else { path.to_path_buf() })
}

pub fn parse_group(s: &str) -> Result<GroupSpec, CliError> {
    if s.trim_start().starts_with('{') {
        serde_json::from_str(s).map_err(|e| CliError::Validation(format!("group {s:?}: {e}")))
    } else {
        Ok(GroupSpec::named(s.trim()))
    }
}

pub fn train(g: &Global, config: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg: TrainConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let m = manifest(g, "train", &cfg, cfg.seed, vec![hash_input(config)?]);
    let mut dir = RunDir::create(out)?;
    let result = run_training(&cfg, g.exec())?;
    dir.write_json(POLICY, &PolicyBundle::new(cfg.env.clone(), &result.policy))?;
    let mut curve = String::new();
    for e in &result.curve {
        curve.push_str(&serde_json::to_string(e).map_err(|e| CliError::Runtime(e.to_string()))?);
        curve.push('\n');
    }
    dir.write("curve.jsonl", curve.as_bytes())?;
    if let Some(last) = result.curve.last() {
        println!(
            "trained {} episodes, {} updates, greedy self-play return {:.4}",
            last.episodes, result.updates, last.greedy_return
        );
    }
    dir.finish(m)
}

#[derive(Serialize)]
struct SymmetrizeArgs<'a> {
    group: &'a GroupSpec,
    combine: StateCombineMode,
}

pub fn symmetrize(g: &Global, checkpoint: &Path, group: &str, combine: StateCombineMode, out: &Path) -> Result<(), CliError> {
    let spec = parse_group(group)?;
    let bundle = load_bundle(checkpoint)?;
    let sym = bundle.symmetrized(&spec, combine)?;
    let order = sym.symmetrizer.as_ref().map_or(1, |s| s.group.elements.len());
    let m = manifest(
        g,
        "symmetrize",
        &SymmetrizeArgs { group: &spec, combine },
        0,
        vec![bundle_input(checkpoint)?],
    );
    let mut dir = RunDir::create(out)?;
    dir.write_json(POLICY, &sym)?;
    println!("symmetrized over a group of order {order}");
    dir.finish(m)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VerifyParams {
    pub samples: usize,
    pub seq_len: usize,
    pub tol: f64,
    pub rollouts: usize,
    pub seed: u64,
}

#[derive(Serialize)]
struct VerifyArgs<'a> {
    group: &'a GroupSpec,
    params: VerifyParams,
}

#[derive(Serialize, Deserialize)]
struct VerifyReport {
    group_order: usize,
    equivariance: CheckReport,
    fixing: CheckReport,
    environment_violations: usize,
    environment_steps: usize,
}

pub fn verify(g: &Global, checkpoint: &Path, group: Option<&str>, p: VerifyParams, out: &Path) -> Result<(), CliError> {
    let bundle = load_bundle(checkpoint)?;
    let env = bundle.env.build()?;
    let contract = env.contract();
    let (spec, combine) = match (group, &bundle.symmetrizer) {
        (Some(s), meta) => (parse_group(s)?, meta.as_ref().map_or(StateCombineMode::Average, |m| m.combine)),
        (None, Some(meta)) => (
            GroupSpec::Generators {
                generators: eqc::group::PermGroup::try_from(meta.group.clone())?.elements().to_vec(),
            },
            meta.combine,
        ),
        (None, None) => {
            return Err(CliError::Validation(
                "policy has no symmetrizer; pass --group".into(),
            ))
        }
    };
    let group = resolve_group(&spec, contract)?;
    let rep = std::sync::Arc::new(contract.rep(group.clone())?);
    let m = manifest(g, "verify", &VerifyArgs { group: &spec, params: p }, p.seed, vec![bundle_input(checkpoint)?]);
    let policy = bundle.deploy(g.exec())?;
    let equivariance = check_equivariance(&policy, &rep, p.samples, p.seq_len, p.seed, p.tol)?;
    let network = bundle.policy()?.network;
    let fixing = check_fixing(&network, rep.clone(), combine, p.samples, p.seq_len, p.seed, p.tol)?;
    let env_report = verify_symmetry(&bundle.env, &group, p.rollouts, p.seed)?;
    let report = VerifyReport {
        group_order: group.order(),
        equivariance,
        fixing,
        environment_violations: env_report.violations.len(),
        environment_steps: env_report.steps_checked,
    };
    println!("group order {}", report.group_order);
    println!("equivariance max violation {:e}", equivariance.max_violation);
    println!("fixing max violation {:e}", fixing.max_violation);
    println!(
        "environment violations {} over {} steps",
        report.environment_violations, report.environment_steps
    );
    let mut dir = RunDir::create(out)?;
    dir.write_json("verify.json", &report)?;
    dir.finish(m)?;
    let mut failed = Vec::new();
    if !equivariance.passed() {
        failed.push("equivariance");
    }
    if !fixing.passed() {
        failed.push("fixing");
    }
    if !env_report.passed() {
        failed.push("environment symmetry");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Violation(failed.join(", ")))
    }
}

fn load_env_config(path: &Path) -> Result<EnvConfig, CliError> {
    let v: serde_json::Value = read_json(path)?;
    if v.get("env").is_some() {
        let cfg: TrainConfig =
            serde_json::from_value(v).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Ok(cfg.env)
    } else {
        serde_json::from_value(v).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct CrossplayArgs<'a> {
    env: &'a EnvConfig,
    episodes: usize,
    groups: &'a [GroupSpec],
    combine: StateCombineMode,
}

#[allow(clippy::too_many_arguments)]
pub fn crossplay(
    g: &Global,
    bundles: &[PathBuf],
    config: Option<&Path>,
    episodes: usize,
    groups: &[String],
    combine: StateCombineMode,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    if bundles.len() < 2 {
        return Err(CliError::Validation("cross-play needs at least two policies".into()));
    }
    let loaded = bundles.iter().map(|b| load_bundle(b)).collect::<Result<Vec<_>, _>>()?;
    let env = match config {
        Some(p) => load_env_config(p)?,
        None => loaded[0].env.clone(),
    };
    if let Some((i, _)) = loaded.iter().enumerate().find(|(_, b)| b.env != env) {
        return Err(CliError::Validation(format!(
            "{} was trained on a different environment",
            bundles[i].display()
        )));
    }
    let specs = groups.iter().map(|s| parse_group(s)).collect::<Result<Vec<_>, _>>()?;
    if !specs.is_empty() && loaded.iter().any(|b| b.symmetrizer.is_some()) {
        return Err(CliError::Validation(
            "symmetrizer comparison needs unsymmetrized policies".into(),
        ));
    }
    let mut inputs = bundles.iter().map(|b| bundle_input(b)).collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = config {
        inputs.push(hash_input(p)?);
    }
    let m = manifest(
        g,
        "crossplay",
        &CrossplayArgs {
            env: &env,
            episodes,
            groups: &specs,
            combine,
        },
        seed,
        inputs,
    );
    let ids: Vec<String> = bundles.iter().map(|b| b.display().to_string()).collect();
    let policies = loaded.iter().map(|b| b.deploy(eqc::Exec::Serial)).collect::<Result<Vec<_>, _>>()?;
    let report = cross_play(&policies, &ids, &env, episodes, seed, g.exec())?;
    let mut dir = RunDir::create(out)?;
    dir.write_json(CROSSPLAY, &report)?;
    dir.write("crossplay_matrix.csv", report.matrix_csv().as_bytes())?;
    println!(
        "cross-play {:.4} ± {:.4}, self-play {:.4} ± {:.4}, failure rate {:.4}",
        report.xp.mean, report.xp.sem, report.sp.mean, report.sp.sem, report.failure_rate.mean
    );
    if !specs.is_empty() {
        let networks = loaded
            .iter()
            .map(|b| b.policy().map(|p| p.network))
            .collect::<Result<Vec<_>, _>>()?;
        let table = symmetrize_and_compare(&networks, &ids, &env, &specs, combine, episodes, seed, g.exec())?;
        dir.write_json(COMPARISON, &table)?;
        let csv = table.to_csv();
        dir.write("comparison.csv", csv.as_bytes())?;
        print!("{csv}");
    }
    dir.finish(m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub subcommand: String,
    pub row: String,
    pub group_order: usize,
    pub xp_mean: Option<f64>,
    pub xp_sem: Option<f64>,
    pub sp_mean: f64,
    pub sp_sem: f64,
    pub failure_rate: Option<f64>,
    pub failure_sem: Option<f64>,
}

fn crossplay_row(run: &str, row: &str, order: usize, r: &CrossPlayReport) -> SummaryRow {
    SummaryRow {
        run: run.into(),
        subcommand: "crossplay".into(),
        row: row.into(),
        group_order: order,
        xp_mean: Some(r.xp.mean),
        xp_sem: Some(r.xp.sem),
        sp_mean: r.sp.mean,
        sp_sem: r.sp.sem,
        failure_rate: Some(r.failure_rate.mean),
        failure_sem: Some(r.failure_rate.sem),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct ReportArgs<'a> {
    runs: &'a [String],
    episodes: usize,
}

pub fn report(g: &Global, runs: &[PathBuf], episodes: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let names: Vec<String> = runs.iter().map(|r| r.display().to_string()).collect();
    let manifests = runs.iter().map(|r| read_manifest(r)).collect::<Result<Vec<_>, _>>()?;
    let inputs = runs
        .iter()
        .map(|r| hash_input(&r.join(crate::manifest::MANIFEST)))
        .collect::<Result<Vec<_>, _>>()?;
    let m = manifest(g, "report", &ReportArgs { runs: &names, episodes }, seed, inputs);
    let mut dir = RunDir::create(out)?;
    let mut rows = Vec::new();
    for (k, (run, man)) in runs.iter().zip(&manifests).enumerate() {
        let name = &names[k];
        if run.join(CROSSPLAY).exists() {
            let r: CrossPlayReport = read_json(&run.join(CROSSPLAY))?;
            rows.push(crossplay_row(name, "pool", 1, &r));
        }
        if run.join(COMPARISON).exists() {
            let t: ComparisonTable = read_json(&run.join(COMPARISON))?;
            for r in &t.rows {
                rows.push(crossplay_row(name, &r.label, r.group_order, &r.report));
            }
        }
        if run.join(POLICY).exists() {
            let bundle = load_bundle(run)?;
            let policy = bundle.deploy(g.exec())?;
            let sp = evaluate_selfplay(&policy, &bundle.env, episodes, seed)?;
            let order = bundle.symmetrizer.as_ref().map_or(1, |s| s.group.elements.len());
            rows.push(SummaryRow {
                run: name.clone(),
                subcommand: man.subcommand.clone(),
                row: "self-play".into(),
                group_order: order,
                xp_mean: None,
                xp_sem: None,
                sp_mean: sp.mean,
                sp_sem: sp.sem,
                failure_rate: None,
                failure_sem: None,
            });
            let mut probe = bundle.env.build()?;
            probe.reset(seed);
            if probe.acting_agents().len() == 1 {
                let cam = conditional_action_matrix(&policy, &bundle.env, None, episodes, seed)?;
                let stem = run.file_name().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                dir.write(&format!("cam_{k}_{stem}.csv"), cam.to_csv().as_bytes())?;
            }
        }
    }
    let mut csv = String::from("run,subcommand,row,group_order,xp_mean,xp_sem,sp_mean,sp_sem,failure_rate,failure_sem\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.run,
            r.subcommand,
            r.row,
            r.group_order,
            opt(r.xp_mean),
            opt(r.xp_sem),
            r.sp_mean,
            r.sp_sem,
            opt(r.failure_rate),
            opt(r.failure_sem)
        ));
    }
    dir.write("summary.csv", csv.as_bytes())?;
    dir.write_json("summary.json", &rows)?;
    print!("{csv}");
    dir.finish(m)
}
