//! Majorization-descent estimation of penalized location effects.
//!
//! The objective is
//!
//! ```text
//! F(α) = ℓ(α) + ½ [λ1 ‖α‖² + λ2 α'Wα]
//! ```
//!
//! where `ℓ` is the offset negative log-likelihood of the compound
//! Poisson-gamma model (up to a term free of `α`) and `W` is a graph
//! Laplacian. Each iteration minimizes the quadratic surrogate built from the
//! gradient and the diagonal Hessian plus an identity, which has the
//! closed-form solution
//!
//! ```text
//! α⁺ = [(λ1+1) I + λ2 W + ∇₂(α)]⁻¹ {(I + ∇₂(α)) α − ∇₁(α)}.
//! ```
//!
//! With a block-diagonal `W` the solve splits into independent per-block
//! systems.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::graph::LaplacianView;
use crate::solver::SolverKind;
use crate::tweedie::{check_index, KernelTerms};

/// Observation count above which likelihood sums are chunked across threads.
const PARALLEL_ROWS: usize = 50_000;
const CHUNK_ROWS: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Ridge plus graph-Laplacian penalty.
    Gl,
    /// Ridge penalty only (`λ2 = 0`).
    Ridge,
    /// No penalty (`λ1 = λ2 = 0`).
    #[serde(rename = "mle")]
    Unpenalized,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Gl, Variant::Ridge, Variant::Unpenalized];

    /// Effective `(λ1, λ2)` for this variant.
    pub fn penalties(self, lambda1: f64, lambda2: f64) -> (f64, f64) {
        match self {
            Variant::Gl => (lambda1, lambda2),
            Variant::Ridge => (lambda1, 0.0),
            Variant::Unpenalized => (0.0, 0.0),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Gl => "gl",
            Variant::Ridge => "ridge",
            Variant::Unpenalized => "mle",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gl" => Ok(Variant::Gl),
            "ridge" => Ok(Variant::Ridge),
            "mle" | "unpenalized" => Ok(Variant::Unpenalized),
            other => Err(Error::Invalid(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Objective-decrease threshold ε.
    pub tol: f64,
    pub max_iter: usize,
    pub fit_intercept: bool,
    pub solver: SolverKind,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            tol: 1e-8,
            max_iter: 500,
            fit_intercept: false,
            solver: SolverKind::Direct,
        }
    }
}

impl PenaltyConfig {
    pub fn with_penalties(mut self, lambda1: f64, lambda2: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::Invalid(format!("lambda1 = {} must be >= 0", self.lambda1)));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Invalid(format!("lambda2 = {} must be >= 0", self.lambda2)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Invalid(format!("tol = {} must be > 0", self.tol)));
        }
        if let SolverKind::ConjugateGradient { rtol } = self.solver {
            if !(rtol > 0.0 && rtol < 1.0) {
                return Err(Error::Invalid(format!("CG rtol = {rtol} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: Vec<f64>,
    pub intercept: Option<f64>,
    /// `F` at the starting point and after every update, excluding the
    /// normalizing term of the likelihood.
    pub objective_trace: Vec<f64>,
    /// `‖α^{(t)} − α^{(t+1)}‖²` for every update.
    pub step_sq: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub variant: Variant,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl FitResult {
    pub fn intercept_or_zero(&self) -> f64 {
        self.intercept.unwrap_or(0.0)
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting value")
    }

    /// Descent inequality at every recorded step.
    pub fn certificate(&self) -> bool {
        descent_certificate_steps(&self.objective_trace, &self.step_sq, self.lambda1)
    }
}

fn check_dims(data: &ObservationTable, alpha: &[f64]) -> Result<()> {
    if alpha.len() != data.n_locations() {
        return Err(Error::Dimension { expected: data.n_locations(), got: alpha.len() });
    }
    Ok(())
}

/// Likelihood value, gradient and Hessian diagonal in one pass.
pub(crate) struct LocalTerms {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

fn accumulate_range(
    data: &ObservationTable,
    alpha: &[f64],
    intercept: f64,
    p: f64,
    rows: std::ops::Range<usize>,
) -> Result<LocalTerms> {
    let l = alpha.len();
    let mut out = LocalTerms { value: 0.0, grad: vec![0.0; l], hess: vec![0.0; l] };
    for i in rows {
        let loc = data.location[i];
        let lp = data.lp_mean[i] + intercept + alpha[loc];
        let k = KernelTerms::at(data.y[i], lp, data.phi[i], p)?;
        out.value += k.value;
        out.grad[loc] += k.d1;
        out.hess[loc] += k.d2;
    }
    Ok(out)
}

pub(crate) fn local_terms(
    data: &ObservationTable,
    alpha: &[f64],
    intercept: f64,
    p: f64,
) -> Result<LocalTerms> {
    check_dims(data, alpha)?;
    let n = data.len();
    if n < PARALLEL_ROWS {
        return accumulate_range(data, alpha, intercept, p, 0..n);
    }
    // Fixed chunk boundaries and an ordered reduction keep the sums
    // independent of the thread schedule.
    let chunks: Vec<_> = (0..n).step_by(CHUNK_ROWS).map(|s| s..(s + CHUNK_ROWS).min(n)).collect();
    let parts: Vec<Result<LocalTerms>> = chunks
        .into_par_iter()
        .map(|r| accumulate_range(data, alpha, intercept, p, r))
        .collect();
    let l = alpha.len();
    let mut total = LocalTerms { value: 0.0, grad: vec![0.0; l], hess: vec![0.0; l] };
    for part in parts {
        let part = part?;
        total.value += part.value;
        for j in 0..l {
            total.grad[j] += part.grad[j];
            total.hess[j] += part.hess[j];
        }
    }
    Ok(total)
}

/// `ℓ(α)` without its normalizing term.
pub fn likelihood(data: &ObservationTable, alpha: &[f64], intercept: f64, p: f64) -> Result<f64> {
    check_index(p)?;
    Ok(local_terms(data, alpha, intercept, p)?.value)
}

/// `∇₁(α)`: per-location sums of the kernel derivative. Locations without
/// observations get exactly zero.
pub fn gradient(data: &ObservationTable, alpha: &[f64], intercept: f64, p: f64) -> Result<Vec<f64>> {
    check_index(p)?;
    Ok(local_terms(data, alpha, intercept, p)?.grad)
}

/// Diagonal of `∇₂(α)`; nonnegative, zero exactly at locations without data.
pub fn hessian_diag(data: &ObservationTable, alpha: &[f64], intercept: f64, p: f64) -> Result<Vec<f64>> {
    check_index(p)?;
    Ok(local_terms(data, alpha, intercept, p)?.hess)
}

/// `½[λ1‖α‖² + λ2 α'Wα]`.
pub fn penalty(w: &LaplacianView, lambda1: f64, lambda2: f64, alpha: &[f64]) -> Result<f64> {
    let ridge: f64 = alpha.iter().map(|a| a * a).sum();
    let lap = if lambda2 != 0.0 { w.quad_form(alpha)? } else { 0.0 };
    Ok(0.5 * (lambda1 * ridge + lambda2 * lap))
}

/// `F(α) = ℓ(α) + P(α; λ1, λ2)`; the intercept is not penalized.
pub fn objective(
    data: &ObservationTable,
    w: &LaplacianView,
    cfg: &PenaltyConfig,
    alpha: &[f64],
    intercept: f64,
    p: f64,
) -> Result<f64> {
    cfg.validate()?;
    check_dims(data, alpha)?;
    if w.len() != alpha.len() {
        return Err(Error::Dimension { expected: w.len(), got: alpha.len() });
    }
    Ok(likelihood(data, alpha, intercept, p)? + penalty(w, cfg.lambda1, cfg.lambda2, alpha)?)
}

fn solve_update(
    w: &LaplacianView,
    lambda1: f64,
    lambda2: f64,
    solver: SolverKind,
    alpha: &[f64],
    terms: &LocalTerms,
) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = alpha
        .iter()
        .zip(&terms.grad)
        .zip(&terms.hess)
        .map(|((a, g), h)| (1.0 + h) * a - g)
        .collect();
    if lambda2 == 0.0 {
        // The system is diagonal; ridge and unpenalized updates take this path.
        return Ok(rhs
            .iter()
            .zip(&terms.hess)
            .map(|(b, h)| b / (lambda1 + 1.0 + h))
            .collect());
    }
    let deg = w.degree();
    let diag: Vec<f64> = terms
        .hess
        .iter()
        .zip(deg)
        .map(|(h, d)| lambda1 + 1.0 + lambda2 * d + h)
        .collect();
    w.structure.solve(&diag, lambda2, &rhs, solver)
}

/// One majorization-descent update from `alpha` (intercept held fixed).
pub fn md_update(
    data: &ObservationTable,
    w: &LaplacianView,
    cfg: &PenaltyConfig,
    alpha: &[f64],
    intercept: f64,
    p: f64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_index(p)?;
    if w.len() != alpha.len() {
        return Err(Error::Dimension { expected: w.len(), got: alpha.len() });
    }
    let terms = local_terms(data, alpha, intercept, p)?;
    solve_update(w, cfg.lambda1, cfg.lambda2, cfg.solver, alpha, &terms)
}

/// Surrogate value `ℓ(α) + δ'∇₁ + ½ δ'(I+∇₂)δ` at `next = α + δ`, minus
/// `ℓ(next)`. Nonnegative whenever the quadratic majorizes the likelihood
/// along the step.
pub fn surrogate_gap(
    data: &ObservationTable,
    alpha: &[f64],
    next: &[f64],
    intercept: f64,
    p: f64,
) -> Result<f64> {
    let t = local_terms(data, alpha, intercept, p)?;
    let mut surrogate = t.value;
    for j in 0..alpha.len() {
        let d = next[j] - alpha[j];
        surrogate += d * t.grad[j] + 0.5 * (1.0 + t.hess[j]) * d * d;
    }
    Ok(surrogate - likelihood(data, next, intercept, p)?)
}

/// Minimizes `a ↦ ℓ(α + a·1)` by Newton steps with step halving.
pub(crate) fn refit_intercept(data: &ObservationTable, alpha: &[f64], start: f64, p: f64) -> Result<f64> {
    if data.is_empty() {
        return Ok(start);
    }
    let eval = |a: f64| -> Result<(f64, f64, f64)> {
        let (mut v, mut g, mut h) = (0.0, 0.0, 0.0);
        for i in 0..data.len() {
            let lp = data.lp_mean[i] + a + alpha[data.location[i]];
            let k = KernelTerms::at(data.y[i], lp, data.phi[i], p)?;
            v += k.value;
            g += k.d1;
            h += k.d2;
        }
        Ok((v, g, h))
    };
    let mut a = start;
    let (mut v, mut g, mut h) = eval(a)?;
    for _ in 0..30 {
        if h <= 0.0 {
            break;
        }
        let mut step = -g / h;
        if step.abs() <= 1e-12 * (1.0 + a.abs()) {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            match eval(a + step) {
                Ok((v2, g2, h2)) if v2 <= v => {
                    a += step;
                    (v, g, h) = (v2, g2, h2);
                    accepted = true;
                    break;
                }
                Ok(_) | Err(Error::NumericRange(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(a)
}

/// Runs the majorization-descent iterations from `α = 0` (and intercept 0).
pub fn fit(
    data: &ObservationTable,
    w: &LaplacianView,
    cfg: &PenaltyConfig,
    p: f64,
    variant: Variant,
) -> Result<FitResult> {
    let zeros = vec![0.0; data.n_locations()];
    fit_from(data, w, cfg, p, variant, &zeros, 0.0)
}

/// Same as [`fit`], warm-started at `(alpha0, intercept0)`.
pub fn fit_from(
    data: &ObservationTable,
    w: &LaplacianView,
    cfg: &PenaltyConfig,
    p: f64,
    variant: Variant,
    alpha0: &[f64],
    intercept0: f64,
) -> Result<FitResult> {
    cfg.validate()?;
    check_index(p)?;
    check_dims(data, alpha0)?;
    if w.len() != alpha0.len() {
        return Err(Error::Dimension { expected: w.len(), got: alpha0.len() });
    }
    let (lambda1, lambda2) = variant.penalties(cfg.lambda1, cfg.lambda2);
    let threshold = 2.0 * cfg.tol / (lambda1 + 1.0);
    let mut alpha = alpha0.to_vec();
    let mut intercept = if cfg.fit_intercept { intercept0 } else { 0.0 };
    let mut trace = Vec::new();
    let mut step_sq = Vec::new();
    let mut converged = false;
    let monitor = log::log_enabled!(log::Level::Trace);

    let mut terms = local_terms(data, &alpha, intercept, p)?;
    trace.push(terms.value + penalty(w, lambda1, lambda2, &alpha)?);
    while step_sq.len() < cfg.max_iter {
        let next = solve_update(w, lambda1, lambda2, cfg.solver, &alpha, &terms)?;
        if monitor {
            let gap = surrogate_gap(data, &alpha, &next, intercept, p)?;
            if gap < -1e-9 * (1.0 + gap.abs()) {
                log::trace!("surrogate bound violated by {:e} at iteration {}", -gap, step_sq.len());
            }
        }
        let ds: f64 = next.iter().zip(&alpha).map(|(a, b)| (a - b).powi(2)).sum();
        let mut d0 = 0.0;
        if cfg.fit_intercept {
            let refit = refit_intercept(data, &next, intercept, p)?;
            d0 = (refit - intercept).powi(2);
            intercept = refit;
        }
        alpha = next;
        terms = local_terms(data, &alpha, intercept, p)?;
        trace.push(terms.value + penalty(w, lambda1, lambda2, &alpha)?);
        step_sq.push(ds);
        if ds + d0 < threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!(
            "{variant} fit stopped at max_iter = {} (last step² = {:e})",
            cfg.max_iter,
            step_sq.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(FitResult {
        alpha,
        intercept: cfg.fit_intercept.then_some(intercept),
        iterations: step_sq.len(),
        objective_trace: trace,
        step_sq,
        converged,
        variant,
        lambda1,
        lambda2,
    })
}

fn certificate_holds(f_prev: f64, f_next: f64, step_sq: f64, lambda1: f64) -> bool {
    let slack = 1e-9 * (1.0 + f_prev.abs());
    f_prev - f_next + slack >= 0.5 * (1.0 + lambda1) * step_sq
}

/// Checks `F(α^{(t)}) − F(α^{(t+1)}) ≥ (1+λ1)/2 ‖α^{(t)} − α^{(t+1)}‖²` over
/// a recorded trace and its iterates (`iterates.len() == trace.len()`).
pub fn descent_certificate(trace: &[f64], iterates: &[Vec<f64>], lambda1: f64) -> bool {
    if trace.len() != iterates.len() {
        return false;
    }
    let steps: Vec<f64> = iterates
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    descent_certificate_steps(trace, &steps, lambda1)
}

/// As [`descent_certificate`] with precomputed squared step lengths.
pub fn descent_certificate_steps(trace: &[f64], step_sq: &[f64], lambda1: f64) -> bool {
    if trace.len() != step_sq.len() + 1 {
        return step_sq.is_empty() && trace.len() <= 1;
    }
    trace
        .windows(2)
        .zip(step_sq)
        .all(|(f, &s)| certificate_holds(f[0], f[1], s, lambda1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::graph::SpatialGraph;
    use approx::assert_relative_eq;

    fn no_edges(n: usize) -> LaplacianView {
        let labels: Vec<String> = (0..n).map(|i| format!("{i:03}")).collect();
        SpatialGraph::from_indices(labels, &[]).unwrap().laplacian(false).unwrap()
    }

    fn table(n_loc: usize, rows: &[(usize, f64, f64, f64)]) -> ObservationTable {
        let recs: Vec<Observation> = rows
            .iter()
            .map(|&(location, y, lp_mean, phi)| Observation { location, y, lp_mean, phi, weight: 1.0 })
            .collect();
        ObservationTable::from_records(n_loc, &recs).unwrap()
    }

    #[test]
    fn objective_examples() {
        let data = table(1, &[(0, 1.0, 0.0, 1.0)]);
        let w = no_edges(1);
        let cfg = PenaltyConfig::default().with_penalties(2.0, 0.0);
        let f = objective(&data, &w, &cfg, &[1.0], 0.0, 1.5).unwrap();
        let expected = (-0.5f64).exp() / 0.5 + 0.5f64.exp() / 0.5 + 1.0;
        assert_relative_eq!(f, expected, max_relative = 1e-14);
        assert_relative_eq!(f, 5.51050, epsilon = 1e-5);

        let f0 = objective(&data, &w, &cfg, &[0.0], 0.0, 1.5).unwrap();
        assert_relative_eq!(f0, likelihood(&data, &[0.0], 0.0, 1.5).unwrap());

        let doubled = PenaltyConfig::default().with_penalties(4.0, 0.0);
        let f2 = objective(&data, &w, &doubled, &[1.0], 0.0, 1.5).unwrap();
        assert_relative_eq!(f2 - f, 0.5 * 2.0 * 1.0, max_relative = 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let data = table(2, &[(0, 0.0, 0.0, 1.0)]);
        assert_eq!(gradient(&data, &[0.0, 0.0], 0.0, 1.5).unwrap(), vec![1.0, 0.0]);

        // y equal to the fitted mean gives a zero gradient.
        let rows: Vec<_> = [0.5, 2.0, 7.0].iter().map(|&y: &f64| (0, y, y.ln(), 1.3)).collect();
        let data = table(1, &rows);
        assert!(gradient(&data, &[0.0], 0.0, 1.5).unwrap()[0].abs() < 1e-14);
    }

    #[test]
    fn hessian_examples() {
        let data = table(3, &[(0, 0.0, 0.0, 1.0), (1, 1.0, 0.0, 1.0)]);
        let h = hessian_diag(&data, &[0.0; 3], 0.0, 1.5).unwrap();
        assert_relative_eq!(h[0], 0.5);
        assert_relative_eq!(h[1], 1.0);
        assert_eq!(h[2], 0.0);
    }

    #[test]
    fn update_examples() {
        let data = table(1, &[]);
        let w = no_edges(1);
        let cfg = PenaltyConfig::default().with_penalties(1.0, 0.0);
        let next = md_update(&data, &w, &cfg, &[0.5], 0.0, 1.5).unwrap();
        assert_relative_eq!(next[0], 0.25);

        let rows: Vec<_> = [0.5, 2.0].iter().map(|&y: &f64| (0, y, y.ln(), 1.0)).collect();
        let data = table(1, &rows);
        let cfg = PenaltyConfig::default();
        let next = md_update(&data, &w, &cfg, &[0.0], 0.0, 1.5).unwrap();
        assert!(next[0].abs() < 1e-14);
    }

    #[test]
    fn certificate_edge_cases() {
        assert!(descent_certificate(&[3.0], &[vec![0.0]], 1.0));
        assert!(descent_certificate_steps(&[3.0], &[], 1.0));
        let trace = [10.0, 8.0, 7.5];
        let its = vec![vec![0.0], vec![1.0], vec![1.5]];
        assert!(descent_certificate(&trace, &its, 1.0));
        let raised = [10.0, 9.5, 7.5];
        assert!(!descent_certificate(&raised, &its, 1.0));
    }

    #[test]
    fn zero_iteration_fit() {
        let data = table(2, &[(0, 1.0, 0.0, 1.0)]);
        let w = no_edges(2);
        let cfg = PenaltyConfig { max_iter: 0, ..PenaltyConfig::default() };
        let fit = fit(&data, &w, &cfg, 1.5, Variant::Gl).unwrap();
        assert_eq!(fit.iterations, 0);
        assert!(!fit.converged);
        assert!(fit.certificate());
    }

    #[test]
    fn intercept_absorbs_a_common_shift() {
        let rows: Vec<_> = (0..40)
            .map(|i| (i % 2, if i % 3 == 0 { 0.0 } else { 2.0 }, 0.0, 1.0))
            .collect();
        let data = table(2, &rows);
        let w = no_edges(2);
        let cfg = PenaltyConfig { fit_intercept: true, ..PenaltyConfig::default() }.with_penalties(1e6, 0.0);
        let res = fit(&data, &w, &cfg, 1.5, Variant::Ridge).unwrap();
        assert!(res.converged);
        let a0 = res.intercept.unwrap();
        // The intercept alone must zero the total score.
        let g: f64 = gradient(&data, &res.alpha, a0, 1.5).unwrap().iter().sum();
        assert!(g.abs() < 1e-6, "score {g}");
        assert!(res.certificate());
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("lasso".parse::<Variant>().is_err());
    }
}
