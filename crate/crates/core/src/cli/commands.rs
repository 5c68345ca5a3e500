use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::experiment::{prepare, Data, MethodOutcome, Normalization, Prepared};
use crate::diagnostics::{
    concentrability, effective_dimension, empirical_effective_dimension, err_e, err_o_from_mean, expected_min_sigma,
    relative_condition_number, sample_min_sigma, second_moment, CoverageReport, ErrOForm,
};
use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::mdp::Environment;
use crate::models::{KnrModel, TabularModel};
use crate::solver::DiscriminatorSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub environment: String,
    pub created_unix_secs: u64,
    pub seeds: Vec<u64>,
    pub behavior_score: f64,
    /// Paths relative to the output directory, sorted.
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub final_values: Vec<f64>,
    pub scores: Vec<f64>,
    pub mean_value: f64,
    pub std_value: f64,
    pub mean_score: f64,
    pub std_score: f64,
    pub median_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub environment: String,
    pub n_e: usize,
    pub n_o: usize,
    pub normalization: Normalization,
    pub methods: Vec<MethodSummary>,
}

pub fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

fn data_paths(out: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let d = out.join("data").join(format!("seed-{seed}"));
    (d.join("expert.jsonl"), d.join("offline.jsonl"))
}

fn relative(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Writes datasets for every seed and a manifest listing them.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let prep = prepare(cfg)?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let data = prep.generate(cfg, seed)?;
        let (e, o) = data_paths(out, seed);
        fs::create_dir_all(e.parent().expect("nested path"))?;
        prep.save(&data, &e, &o)?;
        files.push(relative(out, &e));
        files.push(relative(out, &o));
    }
    files.sort();
    let manifest = Manifest {
        name: cfg.name.clone(),
        environment: cfg.environment.id(),
        created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        seeds: cfg.seeds.clone(),
        behavior_score: prep.norm().behavior_score,
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Generated datasets when present, otherwise fresh ones (same seeds).
fn datasets(prep: &Prepared, cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<Data> {
    let (e, o) = data_paths(out, seed);
    if e.exists() && o.exists() {
        prep.load(&e, &o)
    } else {
        prep.generate(cfg, seed)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every method on every seed (seeds in parallel), writes per-seed
/// learning curves and a summary.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, methods: &[Method]) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    let outcomes: Vec<Vec<MethodOutcome>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = datasets(&prep, cfg, out, seed)?;
            methods
                .iter()
                .map(|&m| prep.run_method(m, &data, &cfg.solver, seed))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for per_seed in &outcomes {
        for o in per_seed {
            let dir = out.join("runs").join(o.method.as_str());
            fs::create_dir_all(&dir)?;
            o.report.write_csv(fs::File::create(dir.join(format!("seed-{}.csv", o.seed)))?)?;
        }
    }
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let rows: Vec<&MethodOutcome> = outcomes.iter().map(|s| &s[i]).collect();
            let final_values: Vec<f64> = rows.iter().map(|o| o.final_value).collect();
            let scores: Vec<f64> = rows.iter().map(|o| o.score).collect();
            let (mean_value, std_value) = mean_std(&final_values);
            let (mean_score, std_score) = mean_std(&scores);
            MethodSummary {
                method,
                seeds: rows.iter().map(|o| o.seed).collect(),
                median_score: median(&scores),
                final_values,
                scores,
                mean_value,
                std_value,
                mean_score,
                std_score,
            }
        })
        .collect();
    let summary = RunSummary {
        name: cfg.name.clone(),
        environment: cfg.environment.id(),
        n_e: cfg.n_e,
        n_o: cfg.n_o,
        normalization: *prep.norm(),
        methods: summaries,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Coverage diagnostics for the dataset of each seed.
pub fn cmd_diagnose(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<CoverageReport>> {
    let prep = prepare(cfg)?;
    let dir = out.join("coverage");
    fs::create_dir_all(&dir)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let data = datasets(&prep, cfg, out, seed)?;
        let report = coverage(&prep, &data, cfg)?;
        write_json(&dir.join(format!("seed-{seed}.json")), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

pub fn coverage(prep: &Prepared, data: &Data, cfg: &ExperimentConfig) -> Result<CoverageReport> {
    let delta = cfg.solver.delta;
    match (prep, data) {
        (Prepared::Tabular { env, expert, .. }, Data::Tabular(e, o)) => {
            let (ns, na, h) = (env.n_states(), env.n_actions(), env.horizon());
            let d_e = env.occupancy(expert)?;
            let rho = o.distribution(ns, na);
            let model = TabularModel::fit(o, ns, na, cfg.solver.model_lambda)?;
            let m = expected_min_sigma(&d_e, &model.sigma_table(delta))?;
            let class = cfg.class_size.unwrap_or(ns * na);
            Ok(CoverageReport {
                concentrability: Some(concentrability(&d_e, &rho)?),
                relative_condition_number: Some(relative_condition_number(
                    &DMatrix::from_diagonal(&DVector::from_vec(d_e.clone())),
                    &DMatrix::from_diagonal(&DVector::from_vec(rho)),
                )?),
                information_gain_bar: None,
                information_gain: None,
                d_star: None,
                d_hat: None,
                err_o: err_o_from_mean(m, h, ErrOForm::Statement),
                err_e: err_e(h, class, e.len(), delta)?,
                err_o_proof_form: err_o_from_mean(m, h, ErrOForm::Proof),
            })
        }
        (Prepared::Continuous { env, .. }, Data::Continuous(e, o)) => {
            let fm = env.feature_map();
            let h = env.horizon();
            let phi_e: Vec<DVector<f64>> = e.pairs.iter().map(|p| fm.features(&p.s, &env.clip_action(&p.a))).collect();
            let phi_o: Vec<DVector<f64>> = o.triples.iter().map(|t| fm.features(&t.s, &env.clip_action(&t.a))).collect();
            let targets: Vec<DVector<f64>> = o.triples.iter().map(|t| DVector::from_column_slice(&t.sp)).collect();
            let d = fm.dim();
            let sigma_e = second_moment(&phi_e, d);
            let sigma_rho = second_moment(&phi_o, d);
            let zeta = cfg.solver.zeta.unwrap_or_else(|| env.noise_std());
            let model = KnrModel::fit_features(&phi_o, &targets, fm, cfg.solver.model_lambda, zeta, cfg.solver.w_norm_bound)?;
            // Nonzero Gram eigenvalues equal those of Phi^T Phi.
            let mut gram_mu = sym_eigenvalues(&(sigma_rho.clone() * phi_o.len() as f64));
            gram_mu.sort_by(|a, b| b.total_cmp(a));
            let mut mu = sym_eigenvalues(&sigma_rho);
            mu.sort_by(|a, b| b.total_cmp(a));
            let m = sample_min_sigma(phi_e.iter().map(|p| model.sigma_features(p, delta)));
            let class = cfg.class_size.unwrap_or(match cfg.solver.discriminator {
                DiscriminatorSpec::Rff { features, .. } => 2 * features,
                _ => 2 * d,
            });
            Ok(CoverageReport {
                concentrability: None,
                relative_condition_number: Some(relative_condition_number(&sigma_e, &sigma_rho)?),
                information_gain_bar: Some(model.information_gain_bar()),
                information_gain: None,
                d_star: Some(effective_dimension(&clamp_nonneg(mu), o.len(), zeta)?),
                d_hat: Some(empirical_effective_dimension(&clamp_nonneg(gram_mu), zeta)?),
                err_o: err_o_from_mean(m, h, ErrOForm::Statement),
                err_e: err_e(h, class, e.len(), delta)?,
                err_o_proof_form: err_o_from_mean(m, h, ErrOForm::Proof),
            })
        }
        _ => Err(crate::error::invalid("datasets do not match the environment")),
    }
}

/// Drops round-off negatives and enforces the nonincreasing order.
fn clamp_nonneg(mut v: Vec<f64>) -> Vec<f64> {
    for x in &mut v {
        *x = x.max(0.0);
    }
    for i in 1..v.len() {
        if v[i] > v[i - 1] {
            v[i] = v[i - 1];
        }
    }
    v
}

/// Every `summary.json` under `dir`, sorted by path.
pub fn find_summaries(dir: &Path) -> Result<Vec<(PathBuf, RunSummary)>> {
    fn walk(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, acc)?;
            } else if p.file_name().is_some_and(|n| n == "summary.json") {
                acc.push(p);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let s: RunSummary = serde_json::from_str(&fs::read_to_string(&p)?)?;
            Ok((p, s))
        })
        .collect()
}

pub fn no_runs(dir: &Path) -> Error {
    Error::Config(format!("no runs found under {}", dir.display()))
}
