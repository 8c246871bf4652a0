//! Simulated spatial effects and responses.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Observation, ObservationTable};
use crate::error::{Error, Result};
use crate::seed::{rng_for, tag};
use crate::tuning::predictive_deviance;
use crate::tweedie::{check_index, convert_params, sample_cp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Block,
    Smooth,
    Hotspot,
    Structured,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] =
        [PatternKind::Block, PatternKind::Smooth, PatternKind::Hotspot, PatternKind::Structured];
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::Block => "block",
            PatternKind::Smooth => "smooth",
            PatternKind::Hotspot => "hotspot",
            PatternKind::Structured => "structured",
        })
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "block" => Ok(PatternKind::Block),
            "smooth" => Ok(PatternKind::Smooth),
            "hotspot" => Ok(PatternKind::Hotspot),
            "structured" => Ok(PatternKind::Structured),
            other => Err(Error::Invalid(format!("unknown pattern `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pattern {
    /// Longitude-quantile regions, west to east, each at one level.
    Block { levels: Vec<f64> },
    /// `regions` longitude-quantile regions mapped linearly onto `[lo, hi]`.
    Smooth { regions: usize, lo: f64, hi: f64 },
    /// `max_k peak·exp(−decay·‖s − s_k‖)` over hotspot vertices `s_k`; when
    /// `centers` is `None` the north-east and south-west extreme vertices are
    /// used.
    Hotspot { centers: Option<Vec<usize>>, peak: f64, decay: f64 },
    /// One draw from `N(0, Σ)` with `Σ_ij = σ² exp(−φ_cov ‖s_i − s_j‖)`.
    Structured { sigma2: f64, phi_cov: f64 },
}

impl Pattern {
    pub fn default_for(kind: PatternKind) -> Self {
        match kind {
            PatternKind::Block => Pattern::Block { levels: vec![-3.0, -1.0, 1.0, 3.0] },
            PatternKind::Smooth => Pattern::Smooth { regions: 10, lo: -3.0, hi: 3.0 },
            PatternKind::Hotspot => Pattern::Hotspot { centers: None, peak: 3.0, decay: 2.0 },
            PatternKind::Structured => Pattern::Structured { sigma2: 1.0, phi_cov: 1.0 },
        }
    }

    pub fn kind(&self) -> PatternKind {
        match self {
            Pattern::Block { .. } => PatternKind::Block,
            Pattern::Smooth { .. } => PatternKind::Smooth,
            Pattern::Hotspot { .. } => PatternKind::Hotspot,
            Pattern::Structured { .. } => PatternKind::Structured,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern: Pattern,
    /// `(longitude, latitude)` per vertex.
    pub coords: Vec<(f64, f64)>,
}

impl PatternSpec {
    pub fn new(pattern: Pattern, coords: Vec<(f64, f64)>) -> Self {
        Self { pattern, coords }
    }

    pub fn default_for(kind: PatternKind, coords: Vec<(f64, f64)>) -> Self {
        Self::new(Pattern::default_for(kind), coords)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.is_empty() {
            return Err(Error::Invalid("pattern needs at least one vertex".into()));
        }
        if self.coords.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Invalid("non-finite coordinate".into()));
        }
        match &self.pattern {
            Pattern::Block { levels } if levels.is_empty() => {
                Err(Error::Invalid("block pattern needs at least one level".into()))
            }
            Pattern::Smooth { regions: 0, .. } => Err(Error::Invalid("smooth pattern needs regions".into())),
            Pattern::Hotspot { decay, .. } if !(*decay > 0.0) => {
                Err(Error::Invalid(format!("hotspot decay {decay} must be > 0")))
            }
            Pattern::Hotspot { centers: Some(c), .. } if c.is_empty() || c.iter().any(|&v| v >= self.coords.len()) => {
                Err(Error::Invalid("hotspot centers must be non-empty valid vertices".into()))
            }
            Pattern::Structured { sigma2, phi_cov } if !(*sigma2 > 0.0 && *phi_cov > 0.0) => {
                Err(Error::Invalid("structured pattern needs positive σ² and φ".into()))
            }
            _ => Ok(()),
        }
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Region index in `0..regions` per vertex: vertices sorted by longitude (ties
/// by index) are cut into groups of equal size.
pub fn longitude_regions(coords: &[(f64, f64)], regions: usize) -> Result<Vec<usize>> {
    let mut lons: Vec<f64> = coords.iter().map(|c| c.0).collect();
    lons.sort_by(f64::total_cmp);
    lons.dedup();
    if lons.len() < regions {
        return Err(Error::Invalid(format!(
            "{} distinct longitudes cannot form {regions} regions",
            lons.len()
        )));
    }
    let mut order: Vec<usize> = (0..coords.len()).collect();
    order.sort_by(|&a, &b| coords[a].0.total_cmp(&coords[b].0).then(a.cmp(&b)));
    let l = coords.len();
    let mut region = vec![0; l];
    for (rank, &v) in order.iter().enumerate() {
        region[v] = rank * regions / l;
    }
    Ok(region)
}

/// North-east and south-west extreme vertices.
pub fn corner_hotspots(coords: &[(f64, f64)]) -> Vec<usize> {
    let key = |v: &usize| coords[*v].0 + coords[*v].1;
    let ne = (0..coords.len()).max_by(|a, b| key(a).total_cmp(&key(b))).unwrap_or(0);
    let sw = (0..coords.len()).min_by(|a, b| key(a).total_cmp(&key(b))).unwrap_or(0);
    if ne == sw { vec![ne] } else { vec![ne, sw] }
}

/// Draws (or, for deterministic patterns, computes) the true effects.
pub fn generate_pattern(spec: &PatternSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let coords = &spec.coords;
    match &spec.pattern {
        Pattern::Block { levels } => {
            let region = longitude_regions(coords, levels.len())?;
            Ok(region.into_iter().map(|r| levels[r]).collect())
        }
        Pattern::Smooth { regions, lo, hi } => {
            let region = longitude_regions(coords, *regions)?;
            let value = |r: usize| {
                if *regions == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * r as f64 / (*regions - 1) as f64
                }
            };
            Ok(region.into_iter().map(value).collect())
        }
        Pattern::Hotspot { centers, peak, decay } => {
            let centers = centers.clone().unwrap_or_else(|| corner_hotspots(coords));
            Ok(coords
                .iter()
                .map(|&c| {
                    centers
                        .iter()
                        .map(|&k| peak * (-decay * distance(c, coords[k])).exp())
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect())
        }
        Pattern::Structured { sigma2, phi_cov } => {
            let l = coords.len();
            let cov = DMatrix::from_fn(l, l, |i, j| sigma2 * (-phi_cov * distance(coords[i], coords[j])).exp());
            let chol = match cov.clone().cholesky() {
                Some(c) => c,
                None => (cov + DMatrix::identity(l, l) * (1e-10 * sigma2))
                    .cholesky()
                    .ok_or_else(|| Error::NumericRange("covariance matrix is not positive definite".into()))?,
            };
            let mut rng = rng_for(seed, &[tag::PATTERN]);
            let z = DVector::from_iterator(l, (0..l).map(|_| StandardNormal.sample(&mut rng)));
            Ok((chol.l() * z).iter().copied().collect())
        }
    }
}

/// How observations are spread over locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Allocation {
    /// Each observation picks a location uniformly at random.
    Uniform,
    /// Fixed count per location; must sum to `n`.
    Counts(Vec<usize>),
}

/// Reference dispersion ranges indexed by pattern and zero fraction
/// (0.15, 0.30, 0.60, 0.80), calibrated on a Connecticut-scale map.
pub fn reference_phi_range(kind: PatternKind, zero_target: f64) -> Option<(f64, f64)> {
    const TARGETS: [f64; 4] = [0.15, 0.30, 0.60, 0.80];
    let col = TARGETS.iter().position(|t| (t - zero_target).abs() < 1e-9)?;
    let table: [(f64, f64); 4] = match kind {
        PatternKind::Block => [(7.0, 12.0), (12.0, 30.0), (30.0, 140.0), (140.0, 400.0)],
        PatternKind::Smooth => [(7.0, 11.0), (11.0, 24.0), (24.0, 100.0), (100.0, 200.0)],
        PatternKind::Hotspot => [(25.0, 40.0), (40.0, 70.0), (70.0, 200.0), (200.0, 500.0)],
        PatternKind::Structured => [(5.0, 7.0), (6.0, 14.0), (16.0, 35.0), (40.0, 80.0)],
    };
    Some(table[col])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub zero_target: f64,
    pub theta_mean: f64,
    pub theta_sd: f64,
    /// Dispersion is drawn from `U(phi_range)` and multiplied by `phi_scale`.
    pub phi_range: (f64, f64),
    pub phi_scale: f64,
    pub p: f64,
    /// Seed of the response draws.
    pub seed: u64,
    /// Seed of the effect pattern (only the structured pattern is random).
    pub pattern_seed: u64,
}

impl SimConfig {
    /// Configuration with the reference dispersion range for `kind` at one of
    /// the four tabulated zero fractions.
    pub fn reference(kind: PatternKind, zero_target: f64, n: usize, seed: u64) -> Result<Self> {
        let phi_range = reference_phi_range(kind, zero_target).ok_or_else(|| {
            Error::Invalid(format!(
                "no reference dispersion for zero fraction {zero_target}; use calibration"
            ))
        })?;
        Ok(Self {
            n,
            zero_target,
            theta_mean: -0.16,
            theta_sd: 0.02,
            phi_range,
            phi_scale: 1.0,
            p: 1.5,
            seed,
            pattern_seed: 0,
        })
    }

    pub fn validate(&self, n_locations: usize) -> Result<()> {
        check_index(self.p)?;
        if self.n < n_locations {
            return Err(Error::Invalid(format!("n = {} is below the {n_locations} locations", self.n)));
        }
        if !(self.zero_target > 0.0 && self.zero_target < 1.0) {
            return Err(Error::Invalid(format!("zero target {} outside (0, 1)", self.zero_target)));
        }
        let (a, b) = self.phi_range;
        if !(a > 0.0 && b >= a && b.is_finite() && self.phi_scale > 0.0 && self.phi_scale.is_finite()) {
            return Err(Error::Invalid(format!("invalid dispersion range ({a}, {b}) × {}", self.phi_scale)));
        }
        if !(self.theta_mean < 0.0 && self.theta_sd >= 0.0) {
            return Err(Error::Invalid("theta distribution must have negative mean".into()));
        }
        Ok(())
    }
}

/// One draw of the covariates shared by simulation and calibration.
struct Draw {
    location: usize,
    base_lp: f64,
    phi_unit: f64,
}

fn draw_design<R: Rng>(sim: &SimConfig, l: usize, allocation: &Allocation, rng: &mut R) -> Result<Vec<Draw>> {
    let locations: Vec<usize> = match allocation {
        Allocation::Uniform => (0..sim.n).map(|_| rng.random_range(0..l)).collect(),
        Allocation::Counts(c) => {
            if c.len() != l {
                return Err(Error::Dimension { expected: l, got: c.len() });
            }
            if c.iter().sum::<usize>() != sim.n {
                return Err(Error::Invalid("allocation counts must sum to n".into()));
            }
            c.iter().enumerate().flat_map(|(loc, &k)| std::iter::repeat_n(loc, k)).collect()
        }
    };
    let theta = Normal::new(sim.theta_mean, sim.theta_sd)
        .map_err(|e| Error::Invalid(format!("theta distribution: {e}")))?;
    let unit = Uniform::new_inclusive(sim.phi_range.0, sim.phi_range.1)
        .map_err(|e| Error::Invalid(format!("dispersion range: {e}")))?;
    let mut out = Vec::with_capacity(sim.n);
    for location in locations {
        let mut t: f64 = theta.sample(rng);
        while t >= 0.0 {
            t = theta.sample(rng);
        }
        out.push(Draw { location, base_lp: (4.0 / (t * t)).ln(), phi_unit: unit.sample(rng) });
    }
    Ok(out)
}

/// Simulates responses around the given true effects. The returned table's
/// `lp_mean` holds the effect-free base predictor.
pub fn simulate_with_effects(alpha: &[f64], sim: &SimConfig, allocation: &Allocation) -> Result<ObservationTable> {
    let l = alpha.len();
    sim.validate(l)?;
    let mut rng = rng_for(sim.seed, &[tag::DATA]);
    let design = draw_design(sim, l, allocation, &mut rng)?;
    let mut table = ObservationTable::new(l);
    for d in design {
        let phi = d.phi_unit * sim.phi_scale;
        let mu = (d.base_lp + alpha[d.location]).exp();
        let (y, _) = sample_cp(mu, phi, sim.p, &mut rng)?;
        table.push(Observation { location: d.location, y, lp_mean: d.base_lp, phi, weight: 1.0 })?;
    }
    Ok(table)
}

/// Generates the pattern and simulates responses; returns the table and the
/// true effects.
pub fn simulate_dataset(
    spec: &PatternSpec,
    sim: &SimConfig,
    allocation: &Allocation,
) -> Result<(ObservationTable, Vec<f64>)> {
    let alpha = generate_pattern(spec, sim.pattern_seed)?;
    let table = simulate_with_effects(&alpha, sim, allocation)?;
    Ok((table, alpha))
}

/// Expected zero fraction of [`simulate_with_effects`] averaged over a
/// fixed set of covariate draws.
fn expected_zero_fraction(alpha: &[f64], sim: &SimConfig, design: &[Draw], scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for d in design {
        let mu = (d.base_lp + alpha[d.location]).exp();
        total += convert_params(mu, d.phi_unit * scale, sim.p)?.zero_probability();
    }
    Ok(total / design.len() as f64)
}

/// Dispersion multiplier that makes the expected zero fraction equal
/// `sim.zero_target`, found by bisection in log scale.
pub fn calibrate_phi_scale(alpha: &[f64], sim: &SimConfig, allocation: &Allocation) -> Result<f64> {
    sim.validate(alpha.len())?;
    let mut rng = rng_for(sim.seed, &[tag::CALIBRATE]);
    let design = draw_design(sim, alpha.len(), allocation, &mut rng)?;
    let at = |log_s: f64| expected_zero_fraction(alpha, sim, &design, log_s.exp());
    let (mut lo, mut hi) = (-12.0f64, 12.0f64);
    let target = sim.zero_target;
    if at(lo)? > target || at(hi)? < target {
        return Err(Error::NumericRange(format!("zero fraction {target} unreachable by rescaling dispersion")));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// `‖a − b‖²`.
pub fn sse(alpha_true: &[f64], alpha_hat: &[f64]) -> Result<f64> {
    if alpha_true.len() != alpha_hat.len() {
        return Err(Error::Dimension { expected: alpha_true.len(), got: alpha_hat.len() });
    }
    Ok(alpha_true.iter().zip(alpha_hat).map(|(a, b)| (a - b).powi(2)).sum())
}

/// Predictive deviance at the estimate over predictive deviance at the
/// truth.
pub fn deviance_ratio(
    data: &ObservationTable,
    alpha_true: &[f64],
    alpha_hat: &[f64],
    intercept_true: f64,
    intercept_hat: f64,
    p: f64,
) -> Result<f64> {
    let num = predictive_deviance(data, alpha_hat, intercept_hat, p)?;
    let den = predictive_deviance(data, alpha_true, intercept_true, p)?;
    if !(den > 0.0) {
        return Err(Error::NumericRange(format!("reference deviance {den} is not positive")));
    }
    Ok(num / den)
}
