//! Cutoff families, charge integrands and the mass functionals.
//!
//! Every integrand is evaluated in the orthonormal frame of the ball chart.
//! Cutoffs are radial, `chi_k(r) = chi(r - k)`, so their support is the
//! annulus `k <= r <= k + 1`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigenfunctions::{BoundaryFunction, Eigenfunction, KernelQuadratureSpec};
use crate::fd::FdStep;
use crate::geometry::LapseFunction;
use crate::quad::{self, compensated_sum};
use crate::tensorcalc::{
    conformal_killing, einstein_linear_from_jet, perturbation_jet, scal_deviation_from_jet, scal_linear_from_jet,
    MetricPerturbation, Tensor,
};
use crate::geometry::Point;
use crate::{Error, Result};

/// Largest admissible cutoff position; beyond it the `sinh^(n-1) r` weights
/// and the `rho^n` decay of `e` cancel badly in double precision.
pub const MAX_SCHEDULE: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffProfile {
    /// `1 - (6t^5 - 15t^4 + 10t^3)`
    Quintic,
    /// `1 - (-20t^7 + 70t^6 - 84t^5 + 35t^4)`
    Septic,
}

impl CutoffProfile {
    /// `(chi, chi', chi'')` at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        if t <= 0.0 {
            return (1.0, 0.0, 0.0);
        }
        if t >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let (t2, t3) = (t * t, t * t * t);
        match self {
            CutoffProfile::Quintic => {
                let s = t3 * (10.0 - 15.0 * t + 6.0 * t2);
                let ds = 30.0 * t2 * (1.0 - t) * (1.0 - t);
                let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
                (1.0 - s, -ds, -dds)
            }
            CutoffProfile::Septic => {
                let t4 = t2 * t2;
                let s = t4 * (35.0 - 84.0 * t + 70.0 * t2 - 20.0 * t3);
                let ds = 140.0 * t3 * (1.0 - t).powi(3);
                let dds = 420.0 * t2 * (1.0 - t).powi(2) * (1.0 - 2.0 * t);
                (1.0 - s, -ds, -dds)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily {
    pub profile: CutoffProfile,
    pub schedule: Vec<f64>,
}

impl Default for CutoffFamily {
    fn default() -> Self {
        CutoffFamily { profile: CutoffProfile::Quintic, schedule: (4..=10).map(f64::from).collect() }
    }
}

impl CutoffFamily {
    pub fn new(profile: CutoffProfile, schedule: Vec<f64>) -> Result<Self> {
        if schedule.len() < 2 {
            return Err(Error::Invalid("cutoff schedule needs at least two entries".into()));
        }
        if schedule.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("cutoff schedule must be increasing".into()));
        }
        if schedule.iter().any(|k| !(*k >= 1.0 && *k <= MAX_SCHEDULE)) {
            return Err(Error::Invalid(format!("cutoff schedule must lie in [1, {MAX_SCHEDULE}]")));
        }
        Ok(CutoffFamily { profile, schedule })
    }

    pub fn range(profile: CutoffProfile, k_min: u32, k_max: u32) -> Result<Self> {
        CutoffFamily::new(profile, (k_min..=k_max).map(f64::from).collect())
    }

    /// `(chi, chi', chi'')` of `chi_k` at radius `r`.
    pub fn eval(&self, k: f64, r: f64) -> (f64, f64, f64) {
        self.profile.eval(r - k)
    }

    /// `\int (-n chi' + chi'') dr` by Gauss quadrature; equals `n`.
    pub fn radial_identity(&self, n: usize) -> f64 {
        let (t, w) = quad::gauss_legendre_interval(16, 0.0, 1.0);
        compensated_sum(t.iter().zip(&w).map(|(t, w)| {
            let (_, d1, d2) = self.profile.eval(*t);
            w * (-(n as f64) * d1 + d2)
        }))
    }
}

/// Derivatives of a radial cutoff in the orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffJet {
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub laplacian: f64,
}

impl CutoffJet {
    pub fn radial(r: f64, theta: &[f64], d1: f64, d2: f64) -> Self {
        let n = theta.len();
        let th = DVector::from_column_slice(theta);
        let coth = 1.0 / r.tanh();
        let proj = DMatrix::identity(n, n) - &th * th.transpose();
        CutoffJet {
            gradient: &th * d1,
            hessian: &th * th.transpose() * d2 + proj * (coth * d1),
            laplacian: d2 + (n as f64 - 1.0) * coth * d1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    pub n: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub monte_carlo: bool,
}

pub const SPHERE_RULE_SEED: u64 = 0x5eed_0001;

/// Product Gauss rule on the unit sphere of `R^n` for `n <= 6`, seeded
/// antipodal Monte Carlo beyond.
pub fn sphere_rule(n: usize, order: usize) -> Result<SphereRule> {
    sphere_rule_seeded(n, order, SPHERE_RULE_SEED)
}

pub fn sphere_rule_seeded(n: usize, order: usize, seed: u64) -> Result<SphereRule> {
    if n < 2 {
        return Err(Error::Invalid("sphere rule needs n >= 2".into()));
    }
    if order < 4 {
        return Err(Error::Invalid("sphere rule order must be at least 4".into()));
    }
    if n <= 6 {
        let (nodes, weights) = quad::product_sphere(n, order);
        return Ok(SphereRule { n, nodes, weights, monte_carlo: false });
    }
    let count = (order * order * order).max(512);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let u: Vec<f64> = v.iter().map(|c| c / s).collect();
        nodes.push(u.iter().map(|c| -c).collect());
        nodes.push(u);
    }
    let w = quad::sphere_area(n) / nodes.len() as f64;
    let weights = vec![w; nodes.len()];
    Ok(SphereRule { n, nodes, weights, monte_carlo: true })
}

impl SphereRule {
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        compensated_sum(self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)))
    }
}

/// Test functions accepted by the charges.
#[derive(Debug, Clone)]
pub enum TestFunction {
    Lapse(LapseFunction),
    Eigen(Eigenfunction),
    /// `V = exp(-lambda r)`.
    Decaying { lambda: f64 },
}

impl TestFunction {
    /// Value and orthonormal-frame gradient at a ball point.
    pub fn jet(&self, x: &[f64]) -> (f64, DVector<f64>) {
        match self {
            TestFunction::Lapse(l) => {
                let rho = 0.5 * (1.0 - x.iter().map(|c| c * c).sum::<f64>());
                let (v, g) = l.value_grad_ball(x);
                (v, g * rho)
            }
            TestFunction::Eigen(e) => {
                let j = e.jet_ball(x, false);
                (j.value, j.gradient)
            }
            TestFunction::Decaying { lambda } => {
                let s = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                let r = 2.0 * s.atanh();
                let v = (-lambda * r).exp();
                let g = if s > 0.0 {
                    DVector::from_iterator(x.len(), x.iter().map(|c| -lambda * v * c / s))
                } else {
                    DVector::zeros(x.len())
                };
                (v, g)
            }
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            TestFunction::Lapse(l) => Some(l.dim()),
            TestFunction::Eigen(e) => Some(e.n),
            TestFunction::Decaying { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrandForm {
    /// `V (div e - d tr e)(X) + tr e dV(X) - e(DV, X)`, `X = -D chi`.
    Standard,
    /// `V b(e, Hess chi) + 2 e(DV, D chi) - tr e (2 b(DV, D chi) + V Laplacian chi)`.
    Hessian,
}

/// The standard integrand against `x = -D chi`; `de[k][i][j] = D_k e_ij`.
pub fn integrand_standard(v: f64, dv: &DVector<f64>, e: &DMatrix<f64>, de: &Tensor, x: &DVector<f64>) -> f64 {
    let n = dv.len();
    let mut s = 0.0;
    for j in 0..n {
        let mut div = 0.0;
        let mut dtr = 0.0;
        for k in 0..n {
            div += de.get(&[k, k, j]);
            dtr += de.get(&[j, k, k]);
        }
        s += (div - dtr) * x[j];
    }
    v * s + e.trace() * dv.dot(x) - (dv.transpose() * e * x)[0]
}

pub fn integrand_hessian(v: f64, dv: &DVector<f64>, e: &DMatrix<f64>, cut: &CutoffJet) -> f64 {
    let be_h = e.component_mul(&cut.hessian).sum();
    let edvdchi = (dv.transpose() * e * &cut.gradient)[0];
    v * be_h + 2.0 * edvdchi - e.trace() * (2.0 * dv.dot(&cut.gradient) + v * cut.laplacian)
}

/// `U(b, V, e, chi)`. The standard form needs `De`.
pub fn charge_integrand_u(
    form: IntegrandForm,
    v: f64,
    dv: &DVector<f64>,
    e: &DMatrix<f64>,
    de: Option<&Tensor>,
    cut: &CutoffJet,
) -> Result<f64> {
    match form {
        IntegrandForm::Standard => {
            let de = de.ok_or_else(|| Error::Invalid("standard integrand needs De".into()))?;
            Ok(integrand_standard(v, dv, e, de, &(-&cut.gradient)))
        }
        IntegrandForm::Hessian => Ok(integrand_hessian(v, dv, e, cut)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeOptions {
    /// `None` selects the Hessian form for eigenfunctions and the standard
    /// form otherwise.
    pub form: Option<IntegrandForm>,
    pub radial_order: usize,
    pub step: FdStep,
    /// Relative gate deciding `converged`.
    pub rel_tol: f64,
}

impl Default for ChargeOptions {
    fn default() -> Self {
        ChargeOptions { form: None, radial_order: 16, step: FdStep::default(), rel_tol: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeResult {
    /// `(k or r, value)`
    pub samples: Vec<(f64, f64)>,
    pub extrapolated: f64,
    pub error_estimate: f64,
    pub converged: bool,
    /// Fitted decay rate, absent when the fit fell back to the last sample.
    pub rate: Option<f64>,
}

/// Fits `p_k = p_inf + a exp(-gamma k)` to the last (at most seven) samples.
pub fn extrapolate(samples: &[(f64, f64)], rel_tol: f64) -> ChargeResult {
    let m = samples.len();
    let last = samples.last().map(|s| s.1).unwrap_or(0.0);
    let prev = if m >= 2 { samples[m - 2].1 } else { last };
    let fallback = |samples: &[(f64, f64)]| {
        let err = (last - prev).abs();
        ChargeResult {
            samples: samples.to_vec(),
            extrapolated: last,
            error_estimate: err,
            converged: err <= rel_tol * last.abs().max(1.0),
            rate: None,
        }
    };
    if m < 4 {
        return fallback(samples);
    }
    let tail = &samples[m.saturating_sub(7)..];
    let fit = |g: f64| -> (f64, f64, f64) {
        // linear least squares for (c, a) with basis (1, exp(-g (k - k_last)))
        let k0 = tail.last().unwrap().0;
        let (mut s1, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, p) in tail {
            let x = (-g * (k - k0)).exp();
            s1 += 1.0;
            sx += x;
            sxx += x * x;
            sy += p;
            sxy += x * p;
        }
        let det = s1 * sxx - sx * sx;
        if det.abs() < 1e-300 {
            return (last, 0.0, f64::INFINITY);
        }
        let c = (sxx * sy - sx * sxy) / det;
        let a = (s1 * sxy - sx * sy) / det;
        let res: f64 = tail
            .iter()
            .map(|(k, p)| {
                let r = p - c - a * (-g * (k - k0)).exp();
                r * r
            })
            .sum();
        (c, a, res)
    };
    let (mut lo, mut hi) = (0.05f64, 8.0f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (fit(x1).2, fit(x2).2);
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = fit(x1).2;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = fit(x2).2;
        }
    }
    let g = 0.5 * (lo + hi);
    let (c, a, res) = fit(g);
    let spread = tail.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    // a rate pinned at the lower bound means no visible decay; a jump
    // beyond the sample spread means the fit is ill-conditioned
    if !c.is_finite() || !a.is_finite() || g < 0.06 || (c - last).abs() > 2.0 * spread.max(1e-300) {
        return fallback(samples);
    }
    let rms = (res / tail.len() as f64).sqrt();
    let err = (last - c).abs().max(rms);
    ChargeResult {
        samples: samples.to_vec(),
        extrapolated: c,
        error_estimate: err,
        converged: err <= rel_tol * c.abs().max(1.0),
        rate: Some(g),
    }
}

fn check_compat(e: &MetricPerturbation, dim: Option<usize>, cutoffs: &CutoffFamily, rule: &SphereRule) -> Result<()> {
    if let Some(d) = dim {
        if d != e.n {
            return Err(Error::Invalid(format!("test function dimension {d} vs metric dimension {}", e.n)));
        }
    }
    if rule.n != e.n {
        return Err(Error::Invalid("sphere rule dimension mismatch".into()));
    }
    if let Some(k) = cutoffs.schedule.first() {
        if *k < e.meta.inner_radius + 1.0 {
            return Err(Error::Domain(format!(
                "schedule starts at {k}, below inner radius {} + 1",
                e.meta.inner_radius
            )));
        }
    }
    Ok(())
}

/// Integral of `f(r, theta, x)` times `sinh^(n-1) r` over `[k, k + 1] x S`.
fn annulus_integral<F>(n: usize, k: f64, radial_order: usize, rule: &SphereRule, f: F) -> Result<f64>
where
    F: Fn(f64, &[f64], &[f64]) -> Result<f64> + Sync,
{
    let (rs, wr) = quad::gauss_legendre_interval(radial_order, k, k + 1.0);
    let ns = rule.nodes.len();
    let vals: Vec<Result<f64>> = (0..rs.len() * ns)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / ns, idx % ns);
            let r = rs[i];
            let th = &rule.nodes[j];
            let s = (0.5 * r).tanh();
            let x: Vec<f64> = th.iter().map(|c| s * c).collect();
            let w = wr[i] * rule.weights[j] * r.sinh().powi(n as i32 - 1);
            Ok(w * f(r, th, &x)?)
        })
        .collect();
    let mut terms = Vec::with_capacity(vals.len());
    for v in vals {
        terms.push(v?);
    }
    let total = compensated_sum(terms);
    if !total.is_finite() {
        return Err(Error::Divergence(format!("non-finite annulus integral at k = {k}")));
    }
    Ok(total)
}

/// One cutoff sample of the charge `p(e, V)` at cutoff position `k`.
pub fn charge_sample(
    e: &MetricPerturbation,
    v: &TestFunction,
    cutoffs: &CutoffFamily,
    k: f64,
    rule: &SphereRule,
    opts: &ChargeOptions,
) -> Result<f64> {
    let n = e.n;
    let form = opts.form.unwrap_or(match v {
        TestFunction::Eigen(_) => IntegrandForm::Hessian,
        _ => IntegrandForm::Standard,
    });
    annulus_integral(n, k, opts.radial_order, rule, |r, th, x| {
        let (_, d1, d2) = cutoffs.eval(k, r);
        if d1 == 0.0 && d2 == 0.0 {
            return Ok(0.0);
        }
        let cut = CutoffJet::radial(r, th, d1, d2);
        let (val, grad) = v.jet(x);
        match form {
            IntegrandForm::Standard => {
                let jet = perturbation_jet(e, x, false, opts.step);
                charge_integrand_u(form, val, &grad, &jet.e, Some(&jet.de), &cut)
            }
            IntegrandForm::Hessian => charge_integrand_u(form, val, &grad, &e.eval_on(x), None, &cut),
        }
    })
}

/// The mass functional `p(e, V)` (or `P(e, v)` for eigenfunctions) through
/// the cutoff schedule and extrapolation.
pub fn charge_adm(
    e: &MetricPerturbation,
    v: &TestFunction,
    cutoffs: &CutoffFamily,
    rule: &SphereRule,
    opts: &ChargeOptions,
) -> Result<ChargeResult> {
    check_compat(e, v.dim(), cutoffs, rule)?;
    let mut samples = Vec::with_capacity(cutoffs.schedule.len());
    for &k in &cutoffs.schedule {
        samples.push((k, charge_sample(e, v, cutoffs, k, rule, opts)?));
    }
    Ok(extrapolate(&samples, opts.rel_tol))
}

/// The flux `\int_{S_r} [V (div e - d tr e)(nu) + tr e dV(nu) - e(DV, nu)]`.
pub fn charge_surface(e: &MetricPerturbation, v: &TestFunction, r: f64, rule: &SphereRule, step: FdStep) -> Result<f64> {
    check_compat(e, v.dim(), &CutoffFamily { profile: CutoffProfile::Quintic, schedule: vec![] }, rule)?;
    if r > MAX_SCHEDULE + 1.0 || r <= e.meta.inner_radius {
        return Err(Error::Domain(format!("surface radius {r} outside the working range")));
    }
    let n = e.n;
    let s = (0.5 * r).tanh();
    let area = r.sinh().powi(n as i32 - 1);
    let vals: Vec<f64> = rule
        .nodes
        .par_iter()
        .zip(&rule.weights)
        .map(|(th, w)| {
            let x: Vec<f64> = th.iter().map(|c| s * c).collect();
            let (val, grad) = v.jet(&x);
            let jet = perturbation_jet(e, &x, false, step);
            w * integrand_standard(val, &grad, &jet.e, &jet.de, &DVector::from_column_slice(th))
        })
        .collect();
    let total = area * compensated_sum(vals);
    if !total.is_finite() {
        return Err(Error::Divergence(format!("non-finite surface charge at r = {r}")));
    }
    Ok(total)
}

/// Pointwise surface integrand at `r theta`, times `sinh(r)^(n-1)`.
pub fn charge_surface_density(e: &MetricPerturbation, v: &TestFunction, r: f64, theta: &[f64], step: FdStep) -> Result<f64> {
    if r > MAX_SCHEDULE + 1.0 || r <= e.meta.inner_radius {
        return Err(Error::Domain(format!("surface radius {r} outside the working range")));
    }
    let s = (0.5 * r).tanh();
    let x: Vec<f64> = theta.iter().map(|c| s * c).collect();
    let (val, grad) = v.jet(&x);
    let jet = perturbation_jet(e, &x, false, step);
    let d = r.sinh().powi(e.n as i32 - 1) * integrand_standard(val, &grad, &jet.e, &jet.de, &DVector::from_column_slice(theta));
    if !d.is_finite() {
        return Err(Error::Divergence(format!("non-finite surface density at r = {r}")));
    }
    Ok(d)
}

/// Vector fields paired with the linearised Einstein tensor.
#[derive(Debug, Clone)]
pub enum RicciField {
    /// `X^mu = D V^mu`, index `0..=n`.
    ConformalKilling(usize),
    /// `D V` for a test function `V`.
    Gradient(TestFunction),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RicciOptions {
    pub charge: ChargeOptions,
    /// Adds `-(1/2)(Scal + n(n-1) - Scal_lin) b` to the linear tensor.
    pub exact_scalar: bool,
}

/// `\int G(X, -D chi_k)` through the cutoff schedule.
pub fn charge_ricci(
    e: &MetricPerturbation,
    field: &RicciField,
    cutoffs: &CutoffFamily,
    rule: &SphereRule,
    opts: &RicciOptions,
) -> Result<ChargeResult> {
    let dim = match field {
        RicciField::ConformalKilling(mu) => {
            if *mu > e.n {
                return Err(Error::Invalid(format!("conformal Killing index {mu} out of range")));
            }
            None
        }
        RicciField::Gradient(v) => v.dim(),
    };
    check_compat(e, dim, cutoffs, rule)?;
    let n = e.n;
    let mut samples = Vec::new();
    for &k in &cutoffs.schedule {
        let val = annulus_integral(n, k, opts.charge.radial_order, rule, |r, th, x| {
            let (_, d1, _) = cutoffs.eval(k, r);
            if d1 == 0.0 {
                return Ok(0.0);
            }
            let xv = match field {
                RicciField::ConformalKilling(mu) => conformal_killing(*mu, &Point::ball(x)?)?.vector,
                RicciField::Gradient(v) => v.jet(x).1,
            };
            let jet = perturbation_jet(e, x, true, opts.charge.step);
            let mut g = einstein_linear_from_jet(&jet);
            if opts.exact_scalar {
                let corr = scal_deviation_from_jet(&jet)? - scal_linear_from_jet(&jet);
                for i in 0..n {
                    g[(i, i)] -= 0.5 * corr;
                }
            }
            let th = DVector::from_column_slice(th);
            Ok((xv.transpose() * g * th)[0] * (-d1))
        })?;
        samples.push((k, val));
    }
    Ok(extrapolate(&samples, opts.charge.rel_tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassVector {
    /// `(p^0, p^1, ..., p^n)`
    pub p: Vec<f64>,
    pub results: Vec<ChargeResult>,
}

impl MassVector {
    /// `(p^0)^2 - |p|^2`.
    pub fn minkowski_square(&self) -> f64 {
        self.p[0] * self.p[0] - self.p[1..].iter().map(|c| c * c).sum::<f64>()
    }

    pub fn is_future_timelike(&self) -> bool {
        self.p[0] > 0.0 && self.minkowski_square() > 0.0
    }

    pub fn converged(&self) -> bool {
        self.results.iter().all(|r| r.converged)
    }
}

/// `p^mu = p(e, V^mu) / n`.
pub fn mass_vector(
    e: &MetricPerturbation,
    cutoffs: &CutoffFamily,
    rule: &SphereRule,
    opts: &ChargeOptions,
) -> Result<MassVector> {
    let n = e.n;
    let mut p = Vec::with_capacity(n + 1);
    let mut results = Vec::with_capacity(n + 1);
    for mu in 0..=n {
        let res = charge_adm(e, &TestFunction::Lapse(LapseFunction::basis(n, mu)), cutoffs, rule, opts)?;
        p.push(res.extrapolated / n as f64);
        results.push(res);
    }
    Ok(MassVector { p, results })
}

/// `P(e, v_a) / n` for each boundary function, which recovers `\int m v_a`.
pub fn mass_aspect_project(
    e: &MetricPerturbation,
    vs: &[BoundaryFunction],
    kernel: KernelQuadratureSpec,
    cutoffs: &CutoffFamily,
    rule: &SphereRule,
    opts: &ChargeOptions,
) -> Result<Vec<ChargeResult>> {
    let n = e.n as f64;
    vs.iter()
        .map(|v0| {
            if !v0.is_smooth() {
                return Err(Error::Unsupported("projection needs smooth boundary functions".into()));
            }
            let v = Eigenfunction::new(e.n, v0.clone(), kernel)?;
            let mut res = charge_adm(e, &TestFunction::Eigen(v), cutoffs, rule, opts)?;
            res.extrapolated /= n;
            res.error_estimate /= n;
            for s in &mut res.samples {
                s.1 /= n;
            }
            Ok(res)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_c2_and_monotone() {
        for p in [CutoffProfile::Quintic, CutoffProfile::Septic] {
            assert_eq!(p.eval(0.0), (1.0, 0.0, 0.0));
            let (a, b, c) = p.eval(1e-9);
            assert!((a - 1.0).abs() < 1e-12 && b.abs() < 1e-12 && c.abs() < 1e-6);
            let (a, b, c) = p.eval(1.0 - 1e-9);
            assert!(a.abs() < 1e-12 && b.abs() < 1e-12 && c.abs() < 1e-6);
            let mut last = 1.0;
            for i in 1..100 {
                let (v, d, _) = p.eval(i as f64 / 100.0);
                assert!(v <= last && d <= 0.0);
                last = v;
            }
        }
    }

    #[test]
    fn radial_identity_is_n() {
        for p in [CutoffProfile::Quintic, CutoffProfile::Septic] {
            let c = CutoffFamily { profile: p, schedule: vec![4.0, 5.0] };
            for n in 3..6 {
                assert!((c.radial_identity(n) - n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_rule_moments() {
        let r = sphere_rule(3, 8).unwrap();
        let pi = std::f64::consts::PI;
        assert!((r.integrate(|_| 1.0) - 4.0 * pi).abs() < 1e-12);
        assert!((r.integrate(|x| x[0] * x[0]) - 4.0 * pi / 3.0).abs() < 1e-12);
        assert!((r.integrate(|x| x[0].powi(4)) - 4.0 * pi / 5.0).abs() < 1e-12);
        assert!(r.integrate(|x| x[1]).abs() < 1e-12);
        assert!(sphere_rule(3, 3).is_err());
    }

    #[test]
    fn monte_carlo_rule_is_seeded() {
        let a = sphere_rule(7, 4).unwrap();
        let b = sphere_rule(7, 4).unwrap();
        assert!(a.monte_carlo);
        assert_eq!(a, b);
        assert!((a.weights.iter().sum::<f64>() - quad::sphere_area(7)).abs() < 1e-10);
    }

    #[test]
    fn integrand_vanishes_trivially() {
        let n = 3;
        let e = DMatrix::zeros(n, n);
        let de = Tensor::zeros(n, 3);
        let cut = CutoffJet::radial(5.0, &[1.0, 0.0, 0.0], -0.3, 1.2);
        let dv = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        for form in [IntegrandForm::Standard, IntegrandForm::Hessian] {
            assert_eq!(charge_integrand_u(form, 2.0, &dv, &e, Some(&de), &cut).unwrap(), 0.0);
        }
        let e = DMatrix::from_fn(n, n, |i, j| (i + j) as f64);
        let flat = CutoffJet { gradient: DVector::zeros(n), hessian: DMatrix::zeros(n, n), laplacian: 0.0 };
        assert_eq!(charge_integrand_u(IntegrandForm::Hessian, 2.0, &dv, &e, None, &flat).unwrap(), 0.0);
    }

    #[test]
    fn extrapolation_recovers_exponential() {
        let s: Vec<(f64, f64)> = (4..=10).map(|k| (k as f64, 3.0 + 2.0 * (-0.9 * k as f64).exp())).collect();
        let r = extrapolate(&s, 1e-3);
        assert!((r.extrapolated - 3.0).abs() < 1e-9, "{r:?}");
        // the error estimate is the distance from the last sample
        let gap = 2.0 * (-9.0f64).exp();
        assert!((r.error_estimate - gap).abs() < 1e-9);
        assert!(r.converged);
        assert!(!extrapolate(&s, 1e-6).converged);
        assert!((r.rate.unwrap() - 0.9).abs() < 1e-4);
    }

    #[test]
    fn zero_perturbation_has_zero_charge() {
        let e = MetricPerturbation::zero(3);
        let rule = sphere_rule(3, 6).unwrap();
        let c = CutoffFamily::range(CutoffProfile::Quintic, 4, 7).unwrap();
        let v = TestFunction::Lapse(LapseFunction::basis(3, 0));
        let r = charge_adm(&e, &v, &c, &rule, &ChargeOptions::default()).unwrap();
        assert!(r.extrapolated.abs() < 1e-10);
    }
}
