//! Replicated simulation comparisons of the penalized estimators.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::fixtures::Fixture;
use crate::graph::LaplacianView;
use crate::optimizer::{fit, FitResult, PenaltyConfig, Variant};
use crate::seed::{derive_seed, rng_for, tag};
use crate::sim::{
    calibrate_phi_scale, deviance_ratio, generate_pattern, reference_phi_range, simulate_with_effects, sse,
    Allocation, PatternKind, PatternSpec, SimConfig,
};
use crate::tuning::{cross_validate, CvReport, GridAxis, GridSpec};

/// Penalty grids for the two tuned variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningPlan {
    pub gl_lambda1: GridAxis,
    pub gl_lambda2: GridAxis,
    pub ridge_lambda1: GridAxis,
    pub folds: usize,
    pub penalty: PenaltyConfig,
}

impl Default for TuningPlan {
    fn default() -> Self {
        Self {
            gl_lambda1: GridAxis::Log10 { lo: -5.0, hi: 0.0, n: 10 },
            gl_lambda2: GridAxis::Log10 { lo: -3.0, hi: 2.0, n: 10 },
            ridge_lambda1: GridAxis::Log10 { lo: -5.0, hi: 0.0, n: 10 },
            folds: 5,
            penalty: PenaltyConfig::default(),
        }
    }
}

impl TuningPlan {
    pub fn grid(&self, variant: Variant, seed: u64) -> Option<GridSpec> {
        let mut g = match variant {
            Variant::Gl => GridSpec::new(self.gl_lambda1, self.gl_lambda2, seed),
            Variant::Ridge => GridSpec::ridge(self.ridge_lambda1, seed),
            Variant::Unpenalized => return None,
        };
        g.folds = self.folds;
        Some(g)
    }
}

/// A variant fitted at its cross-validated penalties.
#[derive(Debug, Clone)]
pub struct TunedFit {
    pub fit: FitResult,
    pub cv: Option<CvReport>,
    pub seconds: f64,
}

/// Cross-validates (unless unpenalized) on `train` and refits on all of it
/// at the chosen penalties.
pub fn tune_and_fit(
    train: &ObservationTable,
    w: &LaplacianView,
    variant: Variant,
    plan: &TuningPlan,
    p: f64,
    fold_seed: u64,
) -> Result<TunedFit> {
    let start = Instant::now();
    let (cv, cfg) = match plan.grid(variant, fold_seed) {
        Some(grid) => {
            let cv = cross_validate(train, w, &grid, &plan.penalty, p, variant)?;
            let (l1, l2) = cv.chosen_lambdas();
            (Some(cv), plan.penalty.with_penalties(l1, l2))
        }
        None => (None, plan.penalty.with_penalties(0.0, 0.0)),
    };
    let fit = fit(train, w, &cfg, p, variant)?;
    Ok(TunedFit { fit, cv, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub patterns: Vec<PatternKind>,
    pub zero_targets: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub p: f64,
    pub train_frac: f64,
    pub variants: Vec<Variant>,
    pub approximate: bool,
    /// Always calibrate dispersion by bisection instead of using the
    /// reference ranges.
    pub calibrate: bool,
    /// Record wall-clock seconds per fit (makes outputs run-dependent).
    pub timing: bool,
    pub plan: TuningPlan,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            patterns: PatternKind::ALL.to_vec(),
            zero_targets: vec![0.15],
            n: 10_000,
            reps: 10,
            seed: 1,
            p: 1.5,
            train_frac: 0.6,
            variants: Variant::ALL.to_vec(),
            approximate: false,
            calibrate: false,
            timing: false,
            plan: TuningPlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub pattern: PatternKind,
    pub n: usize,
    pub zero_target: f64,
    pub variant: Variant,
    pub seed: u64,
    pub sse: f64,
    pub train_dr: f64,
    pub valid_dr: f64,
    pub wall_time_s: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub zero_fraction: f64,
}

/// Study table with columns pattern, n, zero_target, variant, seed, sse,
/// train_dr, valid_dr, wall_time_s, lambda1, lambda2, zero_fraction.
/// Missing wall times are written as `NA`.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "pattern",
        "n",
        "zero_target",
        "variant",
        "seed",
        "sse",
        "train_dr",
        "valid_dr",
        "wall_time_s",
        "lambda1",
        "lambda2",
        "zero_fraction",
    ])?;
    for r in rows {
        w.write_record([
            r.pattern.to_string(),
            r.n.to_string(),
            r.zero_target.to_string(),
            r.variant.to_string(),
            r.seed.to_string(),
            r.sse.to_string(),
            r.train_dr.to_string(),
            r.valid_dr.to_string(),
            r.wall_time_s.map_or_else(|| "NA".to_string(), |t| t.to_string()),
            r.lambda1.to_string(),
            r.lambda2.to_string(),
            r.zero_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn pattern_index(kind: PatternKind) -> u64 {
    PatternKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64
}

/// True effects for `kind` on the fixture. Random patterns are drawn once per
/// master seed and reused across every setting of a study.
pub fn study_effects(fixture: &Fixture, kind: PatternKind, seed: u64) -> Result<Vec<f64>> {
    let spec = PatternSpec::default_for(kind, fixture.coords.clone());
    generate_pattern(&spec, derive_seed(seed, &[tag::PATTERN, pattern_index(kind)]))
}

/// Simulation settings for one pattern and zero target: the reference
/// dispersion range when available (and `calibrate` is off), otherwise the
/// nearest reference range rescaled by bisection.
pub fn study_sim_config(
    alpha: &[f64],
    kind: PatternKind,
    zero_target: f64,
    n: usize,
    p: f64,
    calibrate: bool,
    seed: u64,
) -> Result<SimConfig> {
    let reference = reference_phi_range(kind, zero_target);
    let base = reference.unwrap_or_else(|| {
        let nearest = [0.15, 0.30, 0.60, 0.80]
            .into_iter()
            .min_by(|a: &f64, b: &f64| (a - zero_target).abs().total_cmp(&(b - zero_target).abs()))
            .expect("non-empty");
        reference_phi_range(kind, nearest).expect("tabulated target")
    });
    let mut sim = SimConfig {
        n,
        zero_target,
        theta_mean: -0.16,
        theta_sd: 0.02,
        phi_range: base,
        phi_scale: 1.0,
        p,
        seed,
        pattern_seed: 0,
    };
    if calibrate || reference.is_none() || p != 1.5 {
        sim.phi_scale = calibrate_phi_scale(alpha, &sim, &Allocation::Uniform)?;
    }
    Ok(sim)
}

/// Runs every (pattern, zero target, replication, variant) combination.
pub fn run_study(cfg: &StudyConfig, fixture: &Fixture) -> Result<Vec<StudyRow>> {
    if cfg.reps == 0 {
        return Err(Error::Invalid("study needs at least one replication".into()));
    }
    let w = fixture.graph.laplacian(cfg.approximate)?;
    let mut rows = Vec::new();
    for &kind in &cfg.patterns {
        let alpha = study_effects(fixture, kind, cfg.seed)?;
        for (ti, &target) in cfg.zero_targets.iter().enumerate() {
            let calib_seed = derive_seed(cfg.seed, &[tag::CALIBRATE, pattern_index(kind), ti as u64]);
            let base = study_sim_config(&alpha, kind, target, cfg.n, cfg.p, cfg.calibrate, calib_seed)?;
            let per_rep: Vec<Result<Vec<StudyRow>>> = (0..cfg.reps)
                .into_par_iter()
                .map(|r| {
                    let tags = [pattern_index(kind), ti as u64, r as u64];
                    let data_seed = derive_seed(cfg.seed, &[&[tag::DATA][..], &tags].concat());
                    let sim = SimConfig { seed: data_seed, ..base.clone() };
                    let data = simulate_with_effects(&alpha, &sim, &Allocation::Uniform)?;
                    let mut rng = rng_for(cfg.seed, &[&[tag::SPLIT][..], &tags].concat());
                    let (ti_rows, vi_rows) = data.stratified_split(cfg.train_frac, &mut rng)?;
                    let train = data.subset(&ti_rows);
                    let valid = data.subset(&vi_rows);
                    let fold_seed = derive_seed(cfg.seed, &[&[tag::FOLDS][..], &tags].concat());
                    cfg.variants
                        .iter()
                        .map(|&variant| {
                            let tuned = tune_and_fit(&train, &w, variant, &cfg.plan, cfg.p, fold_seed)?;
                            let f = &tuned.fit;
                            Ok(StudyRow {
                                pattern: kind,
                                n: cfg.n,
                                zero_target: target,
                                variant,
                                seed: data_seed,
                                sse: sse(&alpha, &f.alpha)?,
                                train_dr: deviance_ratio(&train, &alpha, &f.alpha, 0.0, 0.0, cfg.p)?,
                                valid_dr: deviance_ratio(&valid, &alpha, &f.alpha, 0.0, 0.0, cfg.p)?,
                                wall_time_s: cfg.timing.then_some(tuned.seconds),
                                lambda1: f.lambda1,
                                lambda2: f.lambda2,
                                zero_fraction: data.zero_fraction(),
                            })
                        })
                        .collect()
                })
                .collect();
            for r in per_rep {
                rows.extend(r?);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub patterns: Vec<PatternKind>,
    pub ns: Vec<usize>,
    pub true_ps: Vec<f64>,
    pub fit_p: f64,
    pub reps: usize,
    pub seed: u64,
    pub zero_target: f64,
    pub plan: TuningPlan,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            patterns: PatternKind::ALL.to_vec(),
            ns: vec![10_000],
            true_ps: vec![1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9],
            fit_p: 1.5,
            reps: 5,
            seed: 1,
            zero_target: 0.30,
            plan: TuningPlan::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub pattern: PatternKind,
    pub n: usize,
    pub true_p: f64,
    pub rep: usize,
    pub sse: f64,
    pub norm_hat: f64,
    pub norm_true: f64,
    pub phi_scale: f64,
}

pub fn write_sensitivity_csv<W: Write>(rows: &[SensitivityRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pattern", "n", "true_p", "rep", "sse", "norm_hat", "norm_true", "phi_scale"])?;
    for r in rows {
        w.write_record([
            r.pattern.to_string(),
            r.n.to_string(),
            r.true_p.to_string(),
            r.rep.to_string(),
            r.sse.to_string(),
            r.norm_hat.to_string(),
            r.norm_true.to_string(),
            r.phi_scale.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits the graph-Laplacian variant at `fit_p` to data generated at each
/// true index, with dispersion rescaled so every setting has the same zero
/// fraction. Responses share their random stream across indices.
pub fn sensitivity_study(cfg: &SensitivityConfig, fixture: &Fixture) -> Result<Vec<SensitivityRow>> {
    let w = fixture.graph.laplacian(false)?;
    let mut rows = Vec::new();
    for &kind in &cfg.patterns {
        let alpha = study_effects(fixture, kind, cfg.seed)?;
        let norm_true = l2(&alpha);
        for &n in &cfg.ns {
            for &true_p in &cfg.true_ps {
                let calib_seed = derive_seed(cfg.seed, &[tag::CALIBRATE, pattern_index(kind), n as u64]);
                let base = study_sim_config(&alpha, kind, cfg.zero_target, n, true_p, true, calib_seed)?;
                let per_rep: Vec<Result<SensitivityRow>> = (0..cfg.reps)
                    .into_par_iter()
                    .map(|r| {
                        let tags = [pattern_index(kind), n as u64, r as u64];
                        let sim = SimConfig {
                            seed: derive_seed(cfg.seed, &[&[tag::DATA][..], &tags].concat()),
                            ..base.clone()
                        };
                        let data = simulate_with_effects(&alpha, &sim, &Allocation::Uniform)?;
                        let fold_seed = derive_seed(cfg.seed, &[&[tag::FOLDS][..], &tags].concat());
                        let tuned = tune_and_fit(&data, &w, Variant::Gl, &cfg.plan, cfg.fit_p, fold_seed)?;
                        Ok(SensitivityRow {
                            pattern: kind,
                            n,
                            true_p,
                            rep: r,
                            sse: sse(&alpha, &tuned.fit.alpha)?,
                            norm_hat: l2(&tuned.fit.alpha),
                            norm_true,
                            phi_scale: base.phi_scale,
                        })
                    })
                    .collect();
                for r in per_rep {
                    rows.push(r?);
                }
            }
        }
    }
    Ok(rows)
}
