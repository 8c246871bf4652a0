//! Repeated train/validation analyses of one data set and the per-location
//! summaries built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::optimizer::{FitResult, Variant};
use crate::seed::{derive_seed, rng_for, tag};
use crate::study::{tune_and_fit, TuningPlan};
use crate::tweedie::{check_index, cp_deviance, MAX_EXPONENT};

/// `ŷ = exp(lp_mean + α̂0 + α̂[loc])` per observation.
pub fn predict_with(data: &ObservationTable, alpha: &[f64], intercept: f64) -> Result<Vec<f64>> {
    if alpha.len() != data.n_locations() {
        return Err(Error::Dimension { expected: data.n_locations(), got: alpha.len() });
    }
    (0..data.len())
        .map(|i| {
            let lp = data.lp_mean[i] + intercept + alpha[data.location[i]];
            if lp > MAX_EXPONENT || !lp.is_finite() {
                return Err(Error::NumericRange(format!("prediction overflows at linear predictor {lp}")));
            }
            Ok(lp.exp())
        })
        .collect()
}

pub fn predict(data: &ObservationTable, fit: &FitResult) -> Result<Vec<f64>> {
    predict_with(data, &fit.alpha, fit.intercept_or_zero())
}

/// `Σ_i (Σ_j w_ij (y_ij − ŷ_ij))² / L` over the table's `L` locations.
pub fn aggregated_mse(data: &ObservationTable, pred: &[f64]) -> Result<f64> {
    if pred.len() != data.len() {
        return Err(Error::Dimension { expected: data.len(), got: pred.len() });
    }
    let mut resid = vec![0.0; data.n_locations()];
    for i in 0..data.len() {
        resid[data.location[i]] += data.weight[i] * (data.y[i] - pred[i]);
    }
    Ok(resid.iter().map(|r| r * r).sum::<f64>() / data.n_locations() as f64)
}

/// `Σ d(y, ŷ)/φ`: the scaled unit deviance summed over rows.
pub fn scaled_deviance(data: &ObservationTable, pred: &[f64], p: f64) -> Result<f64> {
    check_index(p)?;
    if pred.len() != data.len() {
        return Err(Error::Dimension { expected: data.len(), got: pred.len() });
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        total += cp_deviance(data.y[i], pred[i], p)? / data.phi[i];
    }
    Ok(total)
}

/// `100·(baseline − adjusted)/baseline`.
pub fn improvement_pct(baseline: f64, adjusted: f64) -> f64 {
    100.0 * (baseline - adjusted) / baseline
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// The interval contains zero.
    A,
    /// Both limits negative.
    B,
    /// Both limits positive.
    C,
}

impl Category {
    pub fn from_interval(lo: f64, hi: f64) -> Self {
        if hi < 0.0 {
            Category::B
        } else if lo > 0.0 {
            Category::C
        } else {
            Category::A
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::A => "A",
            Category::B => "B",
            Category::C => "C",
        })
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" => Ok(Category::A),
            "B" => Ok(Category::B),
            "C" => Ok(Category::C),
            other => Err(Error::Invalid(format!("unknown category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub q25: f64,
    pub q75: f64,
    pub category: Category,
    /// `Σ w·y` over the location's observations.
    pub observed_loss: f64,
    /// `Σ w·ŷ` at the mean effect.
    pub predicted_loss: f64,
}

/// Summaries across replications; `estimates[r][j]` is replication `r`'s
/// effect at location `j`. Loss columns are left at zero.
pub fn summarize_estimates(labels: &[String], estimates: &[Vec<f64>]) -> Result<Vec<LocationSummary>> {
    if estimates.is_empty() {
        return Err(Error::Invalid("no replication estimates to summarize".into()));
    }
    if let Some(bad) = estimates.iter().find(|e| e.len() != labels.len()) {
        return Err(Error::Dimension { expected: labels.len(), got: bad.len() });
    }
    let r = estimates.len() as f64;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let mut col: Vec<f64> = estimates.iter().map(|e| e[j]).collect();
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / r;
            let sd = if col.len() > 1 {
                (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            let q025 = quantile_sorted(&col, 0.025);
            let q975 = quantile_sorted(&col, 0.975);
            LocationSummary {
                label: label.clone(),
                mean,
                sd,
                q025,
                q975,
                q25: quantile_sorted(&col, 0.25),
                q75: quantile_sorted(&col, 0.75),
                category: Category::from_interval(q025, q975),
                observed_loss: 0.0,
                predicted_loss: 0.0,
            }
        })
        .collect())
}

/// Fills the loss columns from `data` at the summaries' mean effects.
pub fn attach_losses(summaries: &mut [LocationSummary], data: &ObservationTable, intercept: f64) -> Result<()> {
    let alpha: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let pred = predict_with(data, &alpha, intercept)?;
    for s in summaries.iter_mut() {
        s.observed_loss = 0.0;
        s.predicted_loss = 0.0;
    }
    for i in 0..data.len() {
        let s = &mut summaries[data.location[i]];
        s.observed_loss += data.weight[i] * data.y[i];
        s.predicted_loss += data.weight[i] * pred[i];
    }
    Ok(())
}

/// Mean percentage by which `proposed` has a smaller sd than `baseline`,
/// over locations whose proposed category is not A. `None` when there are
/// no such locations.
pub fn sd_reduction_pct(proposed: &[LocationSummary], baseline: &[LocationSummary]) -> Option<f64> {
    let diffs: Vec<f64> = proposed
        .iter()
        .zip(baseline)
        .filter(|(p, b)| p.category != Category::A && b.sd > 0.0)
        .map(|(p, b)| improvement_pct(b.sd, p.sd))
        .collect();
    (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_frac: f64,
    pub reps: usize,
    pub seed: u64,
    pub p: f64,
    pub variants: Vec<Variant>,
    pub approximate: bool,
    pub plan: TuningPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            reps: 20,
            seed: 1,
            p: 1.5,
            variants: Variant::ALL.to_vec(),
            approximate: false,
            plan: TuningPlan::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check_index(self.p)?;
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Invalid(format!("train fraction {} outside (0, 1)", self.train_frac)));
        }
        if self.reps == 0 {
            return Err(Error::Invalid("replication count must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Invalid("no variants requested".into()));
        }
        self.plan.penalty.validate()
    }
}

/// Out-of-sample results of one variant in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub variant: Variant,
    pub fit: FitResult,
    pub baseline_deviance: f64,
    pub deviance: f64,
    pub baseline_mse: f64,
    pub mse: f64,
}

/// Mean validation metrics of one variant against the unadjusted baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub variant: Variant,
    pub baseline_deviance: f64,
    pub deviance: f64,
    pub deviance_improvement_pct: f64,
    pub baseline_mse: f64,
    pub mse: f64,
    pub mse_improvement_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutput {
    pub records: Vec<ReplicationRecord>,
    pub summaries: BTreeMap<Variant, Vec<LocationSummary>>,
    pub improvements: Vec<Improvement>,
}

/// Repeats: stratified split, tuning on the training part, refit at the
/// chosen penalties, and scoring on the validation part.
pub fn replicate(run: &RunConfig, data: &ObservationTable, graph: &SpatialGraph) -> Result<ReplicationOutput> {
    run.validate()?;
    if graph.len() != data.n_locations() {
        return Err(Error::Dimension { expected: graph.len(), got: data.n_locations() });
    }
    let w = graph.laplacian(run.approximate)?;
    let per_rep: Vec<Result<Vec<ReplicationRecord>>> = (0..run.reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(run.seed, &[tag::REPLICATE, tag::SPLIT, r as u64]);
            let (tr, va) = data.stratified_split(run.train_frac, &mut rng)?;
            let train = data.subset(&tr);
            let valid = data.subset(&va);
            let base_pred = predict_with(&valid, &vec![0.0; valid.n_locations()], 0.0)?;
            let baseline_deviance = scaled_deviance(&valid, &base_pred, run.p)?;
            let baseline_mse = aggregated_mse(&valid, &base_pred)?;
            let fold_seed = derive_seed(run.seed, &[tag::REPLICATE, tag::FOLDS, r as u64]);
            run.variants
                .iter()
                .map(|&variant| {
                    let tuned = tune_and_fit(&train, &w, variant, &run.plan, run.p, fold_seed)?;
                    let pred = predict(&valid, &tuned.fit)?;
                    Ok(ReplicationRecord {
                        rep: r,
                        variant,
                        baseline_deviance,
                        deviance: scaled_deviance(&valid, &pred, run.p)?,
                        baseline_mse,
                        mse: aggregated_mse(&valid, &pred)?,
                        fit: tuned.fit,
                    })
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }

    let mut summaries = BTreeMap::new();
    let mut improvements = Vec::new();
    for &variant in &run.variants {
        let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.variant == variant).collect();
        let estimates: Vec<Vec<f64>> = recs.iter().map(|r| r.fit.alpha.clone()).collect();
        let mut s = summarize_estimates(graph.labels(), &estimates)?;
        let mean_intercept = recs.iter().map(|r| r.fit.intercept_or_zero()).sum::<f64>() / recs.len() as f64;
        attach_losses(&mut s, data, mean_intercept)?;
        summaries.insert(variant, s);

        let k = recs.len() as f64;
        let mean = |f: &dyn Fn(&ReplicationRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / k;
        let (bd, d) = (mean(&|r| r.baseline_deviance), mean(&|r| r.deviance));
        let (bm, m) = (mean(&|r| r.baseline_mse), mean(&|r| r.mse));
        improvements.push(Improvement {
            variant,
            baseline_deviance: bd,
            deviance: d,
            deviance_improvement_pct: improvement_pct(bd, d),
            baseline_mse: bm,
            mse: m,
            mse_improvement_pct: improvement_pct(bm, m),
        });
    }
    Ok(ReplicationOutput { records, summaries, improvements })
}
