//! Staged orchestration: validate → correctors → effective → simulate →
//! clt → spde → verify. Every stage persists its artifacts plus a summary
//! JSON and is skipped on rerun when the manifest shows it completed under
//! the same config hash.

use crate::config::{config_hash, Config};
use crate::corrector::{solve_cell_problems, CellProblemOptions, PipelineMode};
use crate::effective::assemble_effective;
use crate::environment::validate_hypotheses;
use crate::error::{Error, Result};
use crate::fullscale::{
    gaussian_bump, kappa_sample, PhysicalGrid, HomogenizedSolution,
};
use crate::output::{
    write_csv, write_json, RunManifest, SnapshotHeader,
};
use crate::spde::{
    project, projection_moments, sample_limit_solution, BrownianDriver, LimitProblem,
};
use crate::torus::CellOperator;
use crate::verify::{
    clt_report, homogenization_error, order_fit, CheckResult, VerificationReport, SLOPE_PASS,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const STAGES: [&str; 7] =
    ["validate", "correctors", "effective", "simulate", "clt", "spde", "verify"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectorSummary {
    pub mode: String,
    pub gamma0: f64,
    pub beta_bar: f64,
    pub h6_satisfied: bool,
    pub max_residual: f64,
    pub max_normalization_drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveSummary {
    pub theta_eff: f64,
    pub theta_eff_se: f64,
    pub beta_bar: f64,
    pub h_eff: f64,
    pub h_eff_se: f64,
    pub covariance: f64,
    pub covariance_se: Option<f64>,
    pub a_eff: f64,
    pub gk_r_max: f64,
    pub gamma0: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub epsilons: Vec<f64>,
    pub errors: Vec<f64>,
    /// Present only when the ladder has at least 3 points.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CltSummary {
    pub epsilon: f64,
    pub t_horizon: f64,
    pub n_paths: usize,
    pub sample_variance: f64,
    pub target_variance: f64,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BumpMoments {
    pub center: f64,
    pub width: f64,
    pub mean: f64,
    pub variance: f64,
    pub sample_mean: f64,
    pub sample_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpdeSummary {
    pub n_paths: usize,
    pub bumps: Vec<BumpMoments>,
}

pub struct PipelineOutcome {
    pub report: VerificationReport,
    pub skipped: Vec<String>,
    pub ran: Vec<String>,
}

fn load_summary<T: for<'de> Deserialize<'de>>(out_dir: &Path, file: &str) -> Result<T> {
    let bytes = std::fs::read(out_dir.join(file))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{file}: {e}")))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    builder.build().map_err(|e| Error::Dependency(e.to_string()))
}

/// Runs all stages up to and including `last_stage` ("verify" for the full
/// pipeline), skipping stages already completed under this config hash.
pub fn run_pipeline(cfg: &Config, out_dir: &Path, last_stage: &str) -> Result<PipelineOutcome> {
    if !STAGES.contains(&last_stage) {
        return Err(Error::Config(format!("unknown stage '{last_stage}'")));
    }
    std::fs::create_dir_all(out_dir)?;
    let hash = config_hash(cfg);
    let manifest_path = out_dir.join("manifest.json");
    let mut manifest = match RunManifest::load(&manifest_path) {
        Ok(m) if m.config_sha256 == hash && m.seed == cfg.seed => m,
        _ => RunManifest { config_sha256: hash.clone(), seed: cfg.seed, stages: Default::default() },
    };
    let mut skipped = Vec::new();
    let mut ran = Vec::new();
    let mut report = VerificationReport::default();

    let env = cfg.build_environment()?;
    let op = CellOperator::new(&env)?;

    for stage in STAGES {
        if manifest.stage_done(stage, out_dir) && stage != "verify" {
            skipped.push(stage.to_string());
        } else {
            let outputs = match stage {
                "validate" => stage_validate(cfg, &env, out_dir)?,
                "correctors" => stage_correctors(cfg, &env, &op, out_dir)?,
                "effective" => stage_effective(cfg, &env, &op, out_dir)?,
                "simulate" => stage_simulate(cfg, &env, &op, out_dir)?,
                "clt" => stage_clt(cfg, &env, &op, out_dir)?,
                "spde" => stage_spde(cfg, &env, out_dir)?,
                "verify" => {
                    report = stage_verify(cfg, out_dir)?;
                    vec!["verify.json".into()]
                }
                _ => unreachable!(),
            };
            manifest.mark_done(stage, outputs);
            manifest.save(&manifest_path)?;
            ran.push(stage.to_string());
        }
        if stage == last_stage {
            break;
        }
    }
    Ok(PipelineOutcome { report, skipped, ran })
}

fn stage_validate(
    cfg: &Config,
    env: &crate::environment::EnvironmentModel,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let hyp = validate_hypotheses(env);
    write_json(&out_dir.join("hypotheses.json"), &hyp)?;
    if cfg.strict && !hyp.all_passed() {
        return Err(Error::Validation("hypothesis validation failed in strict mode".into()));
    }
    Ok(vec!["hypotheses.json".into()])
}

fn stage_correctors(
    cfg: &Config,
    env: &crate::environment::EnvironmentModel,
    op: &CellOperator,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let cell = solve_cell_problems(
        env,
        op,
        &CellProblemOptions {
            s_prod: cfg.correctors.s_prod,
            seed: cfg.seed,
            stream: cfg.correctors.stream,
            ..Default::default()
        },
    )?;
    let summary = CorrectorSummary {
        mode: format!("{:?}", cell.mode),
        gamma0: cell.gamma0,
        beta_bar: if cell.mode == PipelineMode::NonSymmetric { cell.beta.mean } else { 0.0 },
        h6_satisfied: cell.beta.h6_satisfied,
        max_residual: [&cell.chi1, &cell.chi2, &cell.chi3, &cell.chi4]
            .iter()
            .map(|c| c.max_residual)
            .fold(0.0, f64::max),
        max_normalization_drift: [&cell.chi1, &cell.chi2, &cell.chi3, &cell.chi4]
            .iter()
            .map(|c| c.normalization_drift)
            .fold(0.0, f64::max),
    };
    write_json(&out_dir.join("correctors.json"), &summary)?;
    let mut outputs = vec!["correctors.json".to_string()];
    let last = cell.window.prod_end;
    for (name, field) in [
        ("chi1", &cell.chi1.values[last]),
        ("chi2", &cell.chi2.values[last]),
        ("chi3", &cell.chi3.values[last]),
        ("chi4", &cell.chi4.values[last]),
        ("invariant_density", &cell.p.values[last]),
    ] {
        let file = format!("{name}.snap");
        let header = SnapshotHeader {
            field: name.into(),
            epsilon: 0.0,
            time: cell.window.grid.time(last),
            n_nodes: field.len(),
            dx: 1.0 / field.len() as f64,
            seed: cfg.seed,
        };
        crate::output::write_snapshot(&out_dir.join(&file), &header, field)?;
        outputs.push(file);
    }
    Ok(outputs)
}

fn stage_effective(
    cfg: &Config,
    env: &crate::environment::EnvironmentModel,
    op: &CellOperator,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let cell = solve_cell_problems(
        env,
        op,
        &CellProblemOptions {
            s_prod: cfg.correctors.s_prod,
            seed: cfg.seed,
            stream: cfg.correctors.stream,
            ..Default::default()
        },
    )?;
    let eff = assemble_effective(env, op, &cell, cfg.strict)?;
    let summary = EffectiveSummary {
        theta_eff: eff.theta_eff,
        theta_eff_se: eff.theta_eff_se,
        beta_bar: eff.beta_bar,
        h_eff: eff.h_eff,
        h_eff_se: eff.h_eff_se,
        covariance: eff.covariance,
        covariance_se: eff.covariance_se,
        a_eff: eff.a_eff,
        gk_r_max: eff.gk_r_max,
        gamma0: cell.gamma0,
        warnings: eff.warnings.clone(),
    };
    write_json(&out_dir.join("effective.json"), &summary)?;
    let rows: Vec<Vec<f64>> = eff
        .theta_tilde
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i as f64 * cell.window.grid.ds, *v])
        .collect();
    write_csv(&out_dir.join("theta_tilde.csv"), &["s", "theta_tilde"], &rows)?;
    Ok(vec!["effective.json".into(), "theta_tilde.csv".into()])
}

fn stage_simulate(
    cfg: &Config,
    env: &crate::environment::EnvironmentModel,
    op: &CellOperator,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let eff: EffectiveSummary = load_summary(out_dir, "effective.json")?;
    let pool = thread_pool(cfg.workers)?;
    let errors: Result<Vec<f64>> = pool.install(|| {
        cfg.simulate
            .epsilons
            .par_iter()
            .map(|eps| {
                homogenization_error(
                    env,
                    op,
                    *eps,
                    cfg.simulate.t_horizon,
                    eff.theta_eff,
                    cfg.seed,
                    1,
                )
            })
            .collect()
    });
    let errors = errors?;
    let rows: Vec<Vec<f64>> = cfg
        .simulate
        .epsilons
        .iter()
        .zip(&errors)
        .map(|(e, v)| vec![*e, *v])
        .collect();
    write_csv(&out_dir.join("simulate.csv"), &["epsilon", "ansatz_error"], &rows)?;
    let (slope, r_squared) = if errors.len() >= 3 {
        let (s, r2) = order_fit(&cfg.simulate.epsilons, &errors)?;
        (Some(s), Some(r2))
    } else {
        (None, None)
    };
    let summary = SimulateSummary {
        epsilons: cfg.simulate.epsilons.clone(),
        errors,
        slope,
        r_squared,
    };
    write_json(&out_dir.join("simulate.json"), &summary)?;
    Ok(vec!["simulate.csv".into(), "simulate.json".into()])
}

fn stage_clt(
    cfg: &Config,
    env: &crate::environment::EnvironmentModel,
    op: &CellOperator,
    out_dir: &Path,
) -> Result<Vec<String>> {
    let eff: EffectiveSummary = load_summary(out_dir, "effective.json")?;
    let pool = thread_pool(cfg.workers)?;
    let samples: Result<Vec<f64>> = pool.install(|| {
        (0..cfg.clt.n_paths)
            .into_par_iter()
            .map(|i| {
                kappa_sample(
                    env,
                    op,
                    cfg.clt.epsilon,
                    cfg.clt.t_horizon,
                    eff.theta_eff,
                    eff.gamma0,
                    cfg.seed,
                    // Streams 0 and 1 are reserved for correctors/simulate.
                    100 + i as u64,
                )
            })
            .collect()
    });
    let samples = samples?;
    let rows: Vec<Vec<f64>> = samples.iter().map(|v| vec![*v]).collect();
    write_csv(&out_dir.join("clt_samples.csv"), &["kappa"], &rows)?;
    let checks = clt_report(&samples, eff.covariance, cfg.clt.t_horizon, cfg.seed)?;
    let summary = CltSummary {
        epsilon: cfg.clt.epsilon,
        t_horizon: cfg.clt.t_horizon,
        n_paths: cfg.clt.n_paths,
        sample_variance: crate::stats::variance(&samples),
        target_variance: cfg.clt.t_horizon * eff.covariance,
        checks,
    };
    write_json(&out_dir.join("clt.json"), &summary)?;
    Ok(vec!["clt_samples.csv".into(), "clt.json".into()])
}

fn stage_spde(cfg: &Config, env: &crate::environment::EnvironmentModel, out_dir: &Path) -> Result<Vec<String>> {
    let eff: EffectiveSummary = load_summary(out_dir, "effective.json")?;
    let eps_ref = *cfg
        .simulate
        .epsilons
        .last()
        .ok_or_else(|| Error::Config("simulate.epsilons empty".into()))?;
    let grid = PhysicalGrid::build(env.n_torus, eps_ref, eff.theta_eff, cfg.spde.t_horizon)?;
    let init = gaussian_bump(&grid);
    let u0 = HomogenizedSolution::new(&init, grid.length(), eff.theta_eff)?;
    let problem = LimitProblem::new(
        eff.theta_eff,
        eff.a_eff,
        eff.h_eff,
        u0,
        cfg.spde.t_horizon,
        cfg.spde.n_steps,
    )?;
    let phis: Vec<Vec<f64>> = cfg
        .verify
        .bump_centers
        .iter()
        .zip(&cfg.verify.bump_widths)
        .map(|(c, w)| {
            (0..grid.n_nodes)
                .map(|i| (-(grid.x(i) - c).powi(2) / (2.0 * w * w)).exp())
                .collect()
        })
        .collect();
    let pool = thread_pool(cfg.workers)?;
    let rows: Result<Vec<Vec<f64>>> = pool.install(|| {
        (0..cfg.spde.n_paths)
            .into_par_iter()
            .map(|i| {
                let w = BrownianDriver::sample(problem.n_steps, problem.dt(), cfg.seed, i as u64);
                let v = sample_limit_solution(&problem, &w)?;
                Ok(phis.iter().map(|phi| project(&problem, &v, phi)).collect())
            })
            .collect()
    });
    let rows = rows?;
    let headers: Vec<String> = (0..phis.len()).map(|i| format!("bump{i}")).collect();
    let header_refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
    write_csv(&out_dir.join("spde_projections.csv"), &header_refs, &rows)?;
    let bumps: Result<Vec<BumpMoments>> = phis
        .iter()
        .enumerate()
        .map(|(j, phi)| {
            let (mean, variance) = projection_moments(&problem, phi)?;
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            Ok(BumpMoments {
                center: cfg.verify.bump_centers[j],
                width: cfg.verify.bump_widths[j],
                mean,
                variance,
                sample_mean: crate::stats::mean(&col),
                sample_variance: crate::stats::variance(&col),
            })
        })
        .collect();
    let summary = SpdeSummary { n_paths: cfg.spde.n_paths, bumps: bumps? };
    write_json(&out_dir.join("spde.json"), &summary)?;
    Ok(vec!["spde_projections.csv".into(), "spde.json".into()])
}

fn stage_verify(cfg: &Config, out_dir: &Path) -> Result<VerificationReport> {
    let eff: EffectiveSummary = load_summary(out_dir, "effective.json")?;
    let sim: SimulateSummary = load_summary(out_dir, "simulate.json")?;
    let clt: CltSummary = load_summary(out_dir, "clt.json")?;
    let spde: SpdeSummary = load_summary(out_dir, "spde.json")?;
    let (_, clt_rows) = crate::output::read_csv(&out_dir.join("clt_samples.csv"))?;
    let samples: Vec<f64> = clt_rows.iter().map(|r| r[0]).collect();

    let mut report = VerificationReport::default();
    if let Some(slope) = sim.slope {
        report.push(CheckResult {
            name: "homogenization-order".into(),
            statistic: slope,
            tolerance: SLOPE_PASS,
            passed: slope >= SLOPE_PASS,
            detail: format!("R² {:?}, errors {:?}", sim.r_squared, sim.errors),
            n_samples: sim.epsilons.len(),
            seeds: vec![cfg.seed],
        });
    }
    report.extend(clt_report(&samples, eff.covariance, clt.t_horizon, cfg.seed)?);
    // The SPDE stage is its own oracle: Monte Carlo moments against the
    // exact Gaussian moments of each projection.
    for (j, b) in spde.bumps.iter().enumerate() {
        let checks = crate::verify::distribution_match(
            &{
                let (_, rows) = crate::output::read_csv(&out_dir.join("spde_projections.csv"))?;
                rows.iter().map(|r| r[j]).collect::<Vec<f64>>()
            },
            b.mean,
            b.variance,
            &format!("spde-bump{j}"),
        )?;
        report.extend(checks);
    }
    write_json(&out_dir.join("verify.json"), &report)?;
    Ok(report)
}
