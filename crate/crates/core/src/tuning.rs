//! Penalty selection by k-fold cross-validation over log10 grids, and
//! regularization paths.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::graph::LaplacianView;
use crate::optimizer::{fit_from, FitResult, PenaltyConfig, Variant};
use crate::seed::{rng_for, tag};
use crate::tweedie::{check_index, deviance_kernel};

/// Fold re-draws allowed before giving up on an empty fold.
const FOLD_ATTEMPTS: u64 = 5;

/// Sum of `2/φ [−y e^{(1−p)lp}/(1−p) + e^{(2−p)lp}/(2−p)]` over all rows,
/// with `lp = lp_mean + intercept + α[loc]`.
pub fn predictive_deviance(data: &ObservationTable, alpha: &[f64], intercept: f64, p: f64) -> Result<f64> {
    check_index(p)?;
    if alpha.len() != data.n_locations() {
        return Err(Error::Dimension { expected: data.n_locations(), got: alpha.len() });
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let lp = data.lp_mean[i] + intercept + alpha[data.location[i]];
        total += deviance_kernel(data.y[i], lp, data.phi[i], p)?;
    }
    Ok(total)
}

/// One axis of the penalty grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridAxis {
    /// The single value λ = 0.
    Zero,
    /// `n` points evenly spaced in log10 between `lo` and `hi` inclusive.
    Log10 { lo: f64, hi: f64, n: usize },
}

impl GridAxis {
    pub fn log10(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let axis = GridAxis::Log10 { lo, hi, n };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if let GridAxis::Log10 { lo, hi, n } = *self {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Invalid(format!("grid range [{lo}, {hi}] is empty or not finite")));
            }
            if n == 0 {
                return Err(Error::Invalid("grid needs at least one point".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match *self {
            GridAxis::Zero => 1,
            GridAxis::Log10 { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// log10 values in descending order (`-inf` for [`GridAxis::Zero`]).
    pub fn log_values(&self) -> Vec<f64> {
        match *self {
            GridAxis::Zero => vec![f64::NEG_INFINITY],
            GridAxis::Log10 { hi, n: 1, .. } => vec![hi],
            GridAxis::Log10 { lo, hi, n } => {
                let step = (hi - lo) / (n - 1) as f64;
                (0..n).map(|i| if i == n - 1 { lo } else { hi - step * i as f64 }).collect()
            }
        }
    }

    /// Penalty values in descending order.
    pub fn values(&self) -> Vec<f64> {
        self.log_values().into_iter().map(|l| 10f64.powf(l)).collect()
    }
}

impl fmt::Display for GridAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridAxis::Zero => f.write_str("zero"),
            GridAxis::Log10 { lo, hi, n } => write!(f, "{lo}:{hi}:{n}"),
        }
    }
}

impl FromStr for GridAxis {
    type Err = Error;

    /// `"lo:hi:n"` in log10 units, or `"zero"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("zero") || s.eq_ignore_ascii_case("none") {
            return Ok(GridAxis::Zero);
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Invalid(format!("grid `{s}` is not of the form lo:hi:n"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        GridAxis::log10(lo, hi, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub log_lambda1: GridAxis,
    pub log_lambda2: GridAxis,
    pub folds: usize,
    pub seed: u64,
    /// Keep the fitted effects of every fold at every grid point.
    pub retain_paths: bool,
}

impl GridSpec {
    pub fn new(log_lambda1: GridAxis, log_lambda2: GridAxis, seed: u64) -> Self {
        Self { log_lambda1, log_lambda2, folds: 5, seed, retain_paths: false }
    }

    /// Line search over λ1 with λ2 = 0.
    pub fn ridge(log_lambda1: GridAxis, seed: u64) -> Self {
        Self::new(log_lambda1, GridAxis::Zero, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.log_lambda1.validate()?;
        self.log_lambda2.validate()?;
        if self.folds < 2 {
            return Err(Error::Invalid(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }

    /// `(λ1, λ2, log10 λ1, log10 λ2)` in traversal order: λ2 descending in
    /// the outer loop, λ1 descending in the inner loop.
    pub fn points(&self) -> Vec<(f64, f64, f64, f64)> {
        let l1 = self.log_lambda1.log_values();
        let l2 = self.log_lambda2.log_values();
        let mut out = Vec::with_capacity(l1.len() * l2.len());
        for &b in &l2 {
            for &a in &l1 {
                out.push((10f64.powf(a), 10f64.powf(b), a, b));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda1: f64,
    pub lambda2: f64,
    pub log_lambda1: f64,
    pub log_lambda2: f64,
    pub mean_deviance: f64,
    pub sd_deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub variant: Variant,
    pub points: Vec<CvPoint>,
    /// Index into `points` of the selected penalties.
    pub chosen: usize,
    /// Holdout deviance, `[fold][point]`.
    pub fold_deviance: Vec<Vec<f64>>,
    /// Fitted effects `[fold][point]`, when retained.
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
    /// Fold seed actually used (after any re-draws).
    pub fold_seed: u64,
}

impl CvReport {
    pub fn chosen_point(&self) -> &CvPoint {
        &self.points[self.chosen]
    }

    pub fn chosen_lambdas(&self) -> (f64, f64) {
        let c = self.chosen_point();
        (c.lambda1, c.lambda2)
    }

    /// Columns: log_lambda1, log_lambda2, mean_holdout_deviance,
    /// sd_holdout_deviance, chosen.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["log_lambda1", "log_lambda2", "mean_holdout_deviance", "sd_holdout_deviance", "chosen"])?;
        for (i, pt) in self.points.iter().enumerate() {
            w.write_record([
                pt.log_lambda1.to_string(),
                pt.log_lambda2.to_string(),
                pt.mean_deviance.to_string(),
                pt.sd_deviance.to_string(),
                (i == self.chosen).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fold label per row. Within each location the rows are shuffled and dealt
/// round-robin from a random starting fold, so every location is spread as
/// evenly as possible over the folds.
pub fn stratified_folds<R: Rng + ?Sized>(data: &ObservationTable, k: usize, rng: &mut R) -> Vec<usize> {
    let mut fold = vec![0; data.len()];
    for mut rows in data.rows_by_location() {
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(rng);
        let start = rng.random_range(0..k);
        for (pos, &r) in rows.iter().enumerate() {
            fold[r] = (start + pos) % k;
        }
    }
    fold
}

fn draw_folds(data: &ObservationTable, k: usize, seed: u64) -> Result<(Vec<usize>, u64)> {
    for attempt in 0..FOLD_ATTEMPTS {
        let mut rng = rng_for(seed, &[tag::FOLDS, attempt]);
        let folds = stratified_folds(data, k, &mut rng);
        let mut sizes = vec![0usize; k];
        for &f in &folds {
            sizes[f] += 1;
        }
        if sizes.iter().all(|&s| s > 0 && s < data.len()) {
            return Ok((folds, attempt));
        }
        log::debug!("fold draw {attempt} left an empty fold; redrawing");
    }
    Err(Error::Invalid(format!(
        "could not form {k} non-empty folds from {} observations in {FOLD_ATTEMPTS} attempts",
        data.len()
    )))
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Order used to pick the CV winner: smaller mean deviance, then larger λ1,
/// then larger λ2.
fn selection_order(a: &CvPoint, b: &CvPoint) -> Ordering {
    a.mean_deviance
        .total_cmp(&b.mean_deviance)
        .then(b.lambda1.total_cmp(&a.lambda1))
        .then(b.lambda2.total_cmp(&a.lambda2))
}

/// Fits every grid point in traversal order with warm starts along each λ1
/// line; each line starts from the first solution of the previous line.
fn fit_grid(
    train: &ObservationTable,
    w: &LaplacianView,
    points: &[(f64, f64, f64, f64)],
    n1: usize,
    cfg: &PenaltyConfig,
    p: f64,
    variant: Variant,
) -> Result<Vec<FitResult>> {
    let l = train.n_locations();
    let mut fits: Vec<FitResult> = Vec::with_capacity(points.len());
    let mut line_start = (vec![0.0; l], 0.0);
    for (i, &(l1, l2, _, _)) in points.iter().enumerate() {
        let (a0, b0) = if i % n1 == 0 {
            line_start.clone()
        } else {
            let prev = &fits[i - 1];
            (prev.alpha.clone(), prev.intercept_or_zero())
        };
        let fit = fit_from(train, w, &cfg.with_penalties(l1, l2), p, variant, &a0, b0)?;
        if i % n1 == 0 {
            line_start = (fit.alpha.clone(), fit.intercept_or_zero());
        }
        fits.push(fit);
    }
    Ok(fits)
}

/// k-fold cross-validation of the penalties over `grid`.
///
/// Folds run in parallel; within a fold the grid is traversed sequentially
/// with warm starts. The selected point minimizes the mean holdout
/// [`predictive_deviance`], ties going to larger λ1 and then larger λ2.
pub fn cross_validate(
    data: &ObservationTable,
    w: &LaplacianView,
    grid: &GridSpec,
    cfg: &PenaltyConfig,
    p: f64,
    variant: Variant,
) -> Result<CvReport> {
    grid.validate()?;
    check_index(p)?;
    match variant {
        Variant::Ridge if grid.log_lambda2 != GridAxis::Zero => {
            return Err(Error::Invalid("ridge tuning takes a zero λ2 axis".into()));
        }
        Variant::Unpenalized => {
            return Err(Error::Invalid("the unpenalized fit has no penalties to tune".into()));
        }
        _ => {}
    }
    if data.counts_by_location().contains(&0) {
        log::warn!("some locations have no observations; their effects are set by the penalty alone");
    }
    let (folds, attempt) = draw_folds(data, grid.folds, grid.seed)?;
    let points = grid.points();
    let n1 = grid.log_lambda1.len();

    let per_fold: Vec<Result<(Vec<f64>, Vec<Vec<f64>>)>> = (0..grid.folds)
        .into_par_iter()
        .map(|k| {
            let (hold, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| folds[i] == k);
            let train = data.subset(&train);
            let hold = data.subset(&hold);
            let fits = fit_grid(&train, w, &points, n1, cfg, p, variant)?;
            let devs = fits
                .iter()
                .map(|f| predictive_deviance(&hold, &f.alpha, f.intercept_or_zero(), p))
                .collect::<Result<Vec<_>>>()?;
            let alphas = if grid.retain_paths { fits.into_iter().map(|f| f.alpha).collect() } else { Vec::new() };
            Ok((devs, alphas))
        })
        .collect();
    let mut fold_deviance = Vec::with_capacity(grid.folds);
    let mut paths = Vec::new();
    for r in per_fold {
        let (d, a) = r?;
        fold_deviance.push(d);
        paths.push(a);
    }

    let cv_points: Vec<CvPoint> = points
        .iter()
        .enumerate()
        .map(|(j, &(lambda1, lambda2, log_lambda1, log_lambda2))| {
            let col: Vec<f64> = fold_deviance.iter().map(|f| f[j]).collect();
            CvPoint {
                lambda1,
                lambda2,
                log_lambda1,
                log_lambda2,
                mean_deviance: col.iter().sum::<f64>() / col.len() as f64,
                sd_deviance: sample_sd(&col),
            }
        })
        .collect();
    let chosen = (0..cv_points.len())
        .min_by(|&a, &b| selection_order(&cv_points[a], &cv_points[b]))
        .expect("grid is non-empty");
    Ok(CvReport {
        variant,
        points: cv_points,
        chosen,
        fold_deviance,
        paths: grid.retain_paths.then_some(paths),
        fold_seed: crate::seed::derive_seed(grid.seed, &[tag::FOLDS, attempt]),
    })
}

/// Effects along a descending penalty sequence with `λ1 = mix·λ`,
/// `λ2 = (1 − mix)·λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub lambdas: Vec<f64>,
    pub mix: f64,
    pub alphas: Vec<Vec<f64>>,
    pub intercepts: Vec<Option<f64>>,
    pub iterations: Vec<usize>,
}

impl SolutionPath {
    /// Long format: log10_lambda, label, alpha.
    pub fn write_csv<W: Write>(&self, labels: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["log10_lambda", "label", "alpha"])?;
        for (lam, alpha) in self.lambdas.iter().zip(&self.alphas) {
            for (label, a) in labels.iter().zip(alpha) {
                w.write_record([lam.log10().to_string(), label.clone(), a.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Traces the regularization path down `lambdas` (strictly decreasing,
/// positive), warm-starting each fit at the previous solution. `mix = 1`
/// gives the ridge path.
pub fn solution_path(
    data: &ObservationTable,
    w: &LaplacianView,
    lambdas: &[f64],
    mix: f64,
    cfg: &PenaltyConfig,
    p: f64,
) -> Result<SolutionPath> {
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(Error::Invalid(format!("mix = {mix} must lie in (0, 1]")));
    }
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::Invalid("penalty sequence must be non-empty and positive".into()));
    }
    if lambdas.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Invalid("penalty sequence must be strictly decreasing".into()));
    }
    let variant = if mix == 1.0 { Variant::Ridge } else { Variant::Gl };
    let mut alpha = vec![0.0; data.n_locations()];
    let mut intercept = 0.0;
    let mut path = SolutionPath {
        lambdas: lambdas.to_vec(),
        mix,
        alphas: Vec::with_capacity(lambdas.len()),
        intercepts: Vec::with_capacity(lambdas.len()),
        iterations: Vec::with_capacity(lambdas.len()),
    };
    for &lam in lambdas {
        let c = cfg.with_penalties(mix * lam, (1.0 - mix) * lam);
        let fit = fit_from(data, w, &c, p, variant, &alpha, intercept)?;
        alpha = fit.alpha.clone();
        intercept = fit.intercept_or_zero();
        path.alphas.push(fit.alpha);
        path.intercepts.push(fit.intercept);
        path.iterations.push(fit.iterations);
    }
    Ok(path)
}
