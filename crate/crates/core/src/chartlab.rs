//! Benchmark metrics, chart changes and the covariance experiments.
//!
//! A chart change is a map `Psi(x) = B(exp_x zeta(x))` of the ball. Applying
//! it to a perturbation returns `e2 = Psi^*(b + e1) - b`, evaluated pointwise
//! from the closed-form pullback of `b` and the Jacobian of `Psi`. With this
//! convention `p(e2, V) = p(e1, V o B^-1)`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::charges::{charge_adm, charge_integrand_u, ChargeOptions, CutoffFamily, CutoffJet, IntegrandForm, SphereRule, TestFunction};
use crate::eigenfunctions::BoundaryFunction;
use crate::fd::{self, FdStep};
use crate::geometry::{exp_ball, pullback_metric, Chart, LapseFunction, LorentzMap, Point, PULLBACK_GUARD};
use crate::quad;
use crate::tensorcalc::{perturbation_jet, vector_derivative, DecayMeta, MetricPerturbation, VectorField};
use crate::{Error, Result};

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum()
}

fn rho_of(x: &[f64]) -> f64 {
    0.5 * (1.0 - norm2(x))
}

/// `ebar_ij(x) = m(x/|x|) / (n - 1) (delta_ij - x_i x_j / |x|^2)`.
pub fn wang_ebar(m: &BoundaryFunction, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let s = norm2(x).sqrt();
    let th: Vec<f64> = x.iter().map(|c| c / s).collect();
    let c = m.eval(&th) / (n as f64 - 1.0);
    DMatrix::from_fn(n, n, |i, j| c * (if i == j { 1.0 } else { 0.0 } - th[i] * th[j]))
}

/// `e = rho^(n-2) ebar` in ball coordinates, so `|e|_b = O(rho^n)`.
pub fn make_wang_metric(n: usize, m: BoundaryFunction) -> Result<MetricPerturbation> {
    m.check_dim(n)?;
    let e = Arc::new(move |x: &[f64]| wang_ebar(&m, x) * rho_of(x).powi(n as i32 - 2));
    MetricPerturbation::new(n, Chart::Ball, e, DecayMeta { decay_order: n as f64, wang: true, inner_radius: 1.0 })
}

/// Radial profile of the Kottler benchmark. The metric
/// `ds^2 / (1 + s^2 - 2 m0 s^(2-n)) + s^2 sigma` is written as
/// `dr^2 + s(r)^2 sigma` with `r = arsinh(s) - delta(s)`, where
/// `delta(s) = \int_0^(1/s) [(u^2 + 1 - 2 m0 u^n)^(-1/2) - (u^2 + 1)^(-1/2)] du / u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kottler {
    pub n: usize,
    pub m0: f64,
    pub inner_radius: f64,
}

const KOTTLER_ORDER: usize = 32;

impl Kottler {
    pub fn new(n: usize, m0: f64) -> Result<Self> {
        crate::geometry::Dimension::new(n)?;
        if !(m0 >= 0.0) || !m0.is_finite() {
            return Err(Error::Invalid(format!("Kottler mass must be finite and non-negative, got {m0}")));
        }
        let k = Kottler { n, m0, inner_radius: 1.0 };
        // positivity of 1 + u^2 - 2 m0 u^n up to the inner sphere
        let umax = 1.0 / (0.5 * k.inner_radius).sinh();
        for i in 0..=200 {
            let u = umax * i as f64 / 200.0;
            if 1.0 + u * u - 2.0 * m0 * u.powi(n as i32) <= 1e-3 {
                return Err(Error::Domain(format!("Kottler mass {m0} too large for the working region")));
            }
        }
        Ok(k)
    }

    pub fn delta(&self, s: f64) -> f64 {
        if self.m0 == 0.0 {
            return 0.0;
        }
        static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
        let (t, wt) = RULE.get_or_init(|| quad::gauss_legendre_interval(KOTTLER_ORDER, 0.0, 1.0));
        let n = self.n as i32;
        quad::compensated_sum(t.iter().zip(wt).map(|(t, w)| {
            let (u, w) = (t / s, w / s);
            let a = u * u + 1.0;
            let b = a - 2.0 * self.m0 * u.powi(n);
            // 1/sqrt(b) - 1/sqrt(a) = (a - b) / (sqrt(ab) (sqrt(a) + sqrt(b)))
            let (sa, sb) = (a.sqrt(), b.sqrt());
            w * 2.0 * self.m0 * u.powi(n - 1) / (sa * sb * (sa + sb))
        }))
    }

    /// `(s, delta)` with `r = arsinh(s) - delta(s)`.
    pub fn solve(&self, r: f64) -> Result<(f64, f64)> {
        let mut d = 0.0;
        let mut last_gap = f64::INFINITY;
        for _ in 0..100 {
            let next = self.delta((r + d).sinh());
            let gap = (next - d).abs();
            // contraction factor is about n delta, so stalling means rounding
            if gap <= 4.0 * f64::EPSILON * next.abs() || gap >= last_gap {
                return Ok(((r + next).sinh(), next));
            }
            last_gap = gap;
            d = next;
        }
        Err(Error::Convergence(format!("Kottler reparametrisation did not converge at r = {r}")))
    }

    /// `s(r)^2 / sinh(r)^2 - 1`, computed without cancellation.
    pub fn q(&self, r: f64) -> Result<f64> {
        let (_, d) = self.solve(r)?;
        let eps = (d.cosh() - 1.0) + d.sinh() / r.tanh();
        Ok(eps * (2.0 + eps))
    }
}

/// The Kottler benchmark: `e = q(r) (delta - theta theta^T)` in the
/// orthonormal frame. Rotationally symmetric, so its mass aspect is constant.
pub fn make_kottler(n: usize, m0: f64) -> Result<MetricPerturbation> {
    let k = Kottler::new(n, m0)?;
    let e = Arc::new(move |x: &[f64]| {
        let s = norm2(x).sqrt();
        let r = 2.0 * s.atanh();
        let q = k.q(r).unwrap_or(f64::NAN);
        let rho = rho_of(x);
        DMatrix::from_fn(n, n, |i, j| {
            q / (rho * rho) * (if i == j { 1.0 } else { 0.0 } - x[i] * x[j] / (s * s))
        })
    });
    MetricPerturbation::new(n, Chart::Ball, e, DecayMeta { decay_order: n as f64, wang: true, inner_radius: k.inner_radius })
}

/// Radial amplitude of a gauge vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeProfile {
    /// `amplitude exp(-rate r)`, switched on smoothly across `[r0 - 1, r0]`.
    Decaying { amplitude: f64, rate: f64, r0: f64 },
    /// Smooth bump supported in `(center - width, center + width)`.
    Bump { amplitude: f64, center: f64, width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeDirection {
    /// Unit radial field.
    Radial,
    /// Unit rotation field in the plane of axes `a`, `b` (1-based).
    Rotation { a: usize, b: usize },
}

/// A vector field `zeta = profile(r) direction`, orthonormal magnitude
/// `|profile(r)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeField {
    pub n: usize,
    pub profile: GaugeProfile,
    pub direction: GaugeDirection,
}

fn smooth_step(t: f64) -> f64 {
    // C-infinity transition from 0 (t <= 0) to 1 (t >= 1)
    let f = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let (a, b) = (f(t), f(1.0 - t));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

impl GaugeField {
    pub fn new(n: usize, profile: GaugeProfile, direction: GaugeDirection) -> Result<Self> {
        crate::geometry::Dimension::new(n)?;
        if let GaugeDirection::Rotation { a, b } = direction {
            if a == 0 || b == 0 || a > n || b > n || a == b {
                return Err(Error::Invalid(format!("rotation axes ({a}, {b}) in dimension {n}")));
            }
        }
        match profile {
            GaugeProfile::Decaying { rate, .. } if !(rate > 0.0) => {
                Err(Error::Invalid("gauge decay rate must be positive".into()))
            }
            GaugeProfile::Bump { width, .. } if !(width > 0.0) => Err(Error::Invalid("bump width must be positive".into())),
            _ => Ok(GaugeField { n, profile, direction }),
        }
    }

    pub fn amplitude(&self, r: f64) -> f64 {
        match self.profile {
            GaugeProfile::Decaying { amplitude, rate, r0 } => {
                amplitude * (-rate * r).exp() * smooth_step(r - (r0 - 1.0))
            }
            GaugeProfile::Bump { amplitude, center, width } => {
                let t = (r - center) / width;
                if t.abs() >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - t * t)).exp()
                }
            }
        }
    }

    /// Orthonormal-frame components at a ball point.
    pub fn on(&self, x: &[f64]) -> Vec<f64> {
        let s = norm2(x).sqrt();
        let n = self.n;
        if s == 0.0 {
            return vec![0.0; n];
        }
        let f = self.amplitude(2.0 * s.atanh());
        let mut out = vec![0.0; n];
        match self.direction {
            GaugeDirection::Radial => {
                for i in 0..n {
                    out[i] = f * x[i] / s;
                }
            }
            GaugeDirection::Rotation { a, b } => {
                let (a, b) = (a - 1, b - 1);
                let p = (x[a] * x[a] + x[b] * x[b]).sqrt();
                if p > 0.0 {
                    out[a] = -f * x[b] / p;
                    out[b] = f * x[a] / p;
                }
            }
        }
        out
    }

    /// Ball-coordinate components.
    pub fn ball(&self, x: &[f64]) -> Vec<f64> {
        let rho = rho_of(x);
        self.on(x).into_iter().map(|c| c * rho).collect()
    }

    pub fn vector_field(&self) -> VectorField {
        let g = *self;
        Arc::new(move |x: &[f64]| g.ball(x))
    }
}

/// Charts changes `Psi`; a composite applies its parts in order.
#[derive(Clone)]
pub enum ChartChange {
    Isometry(LorentzMap),
    /// `x -> B(exp_x zeta(x))`, `zeta` in ball components.
    Gauge { b: LorentzMap, zeta: VectorField },
    Composite(Vec<ChartChange>),
}

impl std::fmt::Debug for ChartChange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChartChange::Isometry(b) => write!(f, "Isometry({:?})", b.matrix),
            ChartChange::Gauge { b, .. } => write!(f, "Gauge({:?}, zeta)", b.matrix),
            ChartChange::Composite(v) => f.debug_list().entries(v).finish(),
        }
    }
}

impl ChartChange {
    pub fn identity(n: usize) -> Self {
        ChartChange::Isometry(LorentzMap::identity(n))
    }

    pub fn gauge(b: LorentzMap, zeta: &GaugeField) -> Self {
        ChartChange::Gauge { b, zeta: zeta.vector_field() }
    }

    /// The Lorentz part, composed so that `Psi = B o (gauge part)` up to
    /// the order of the parts.
    pub fn lorentz(&self, n: usize) -> LorentzMap {
        match self {
            ChartChange::Isometry(b) | ChartChange::Gauge { b, .. } => b.clone(),
            // applying Psi_1 then Psi_2 pulls back by Psi_1 o Psi_2
            ChartChange::Composite(v) => v.iter().fold(LorentzMap::identity(n), |acc, c| acc.compose(&c.lorentz(n))),
        }
    }

    /// `Psi(x)` for the map that is pulled back.
    pub fn map_ball(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ChartChange::Isometry(b) => Ok(b.apply_ball(x)),
            ChartChange::Gauge { b, zeta } => Ok(b.apply_ball(&exp_ball(x, &zeta(x))?)),
            ChartChange::Composite(v) => {
                let mut y = x.to_vec();
                for c in v.iter().rev() {
                    y = c.map_ball(&y)?;
                }
                Ok(y)
            }
        }
    }

    /// Sampled injectivity check on `S_r`: `|D zeta| < 1` (so the gauge part
    /// is a perturbation of the identity) and an orientation-preserving
    /// Jacobian.
    pub fn check_injective(&self, n: usize, radii: &[f64], rule: &SphereRule, step: FdStep) -> Result<()> {
        for &r in radii {
            let s = (0.5 * r).tanh();
            for th in &rule.nodes {
                let x: Vec<f64> = th.iter().map(|c| s * c).collect();
                self.check_point(n, &x, step)?;
            }
        }
        Ok(())
    }

    fn check_point(&self, n: usize, x: &[f64], step: FdStep) -> Result<()> {
        match self {
            ChartChange::Isometry(_) => Ok(()),
            ChartChange::Gauge { zeta, .. } => {
                let d = vector_derivative(zeta.as_ref(), x, step);
                let op = d.singular_values().max();
                if op >= 1.0 {
                    return Err(Error::Domain(format!("|D zeta| = {op} >= 1: chart change may fold")));
                }
                let j = fd::jacobian(&|y: &[f64]| exp_ball(y, &zeta(y)).unwrap_or(vec![f64::NAN; n]), x, step.ball(x));
                if !(j.determinant() > 0.0) {
                    return Err(Error::Domain("chart change reverses orientation".into()));
                }
                Ok(())
            }
            ChartChange::Composite(v) => v.iter().try_for_each(|c| c.check_point(n, x, step)),
        }
    }
}

/// `Psi^*(b + e1) - b` for a single (non-composite) change, ball components.
fn change_once(e1: &MetricPerturbation, change: &ChartChange, x: &[f64], step: FdStep) -> Result<DMatrix<f64>> {
    let n = e1.n;
    match change {
        ChartChange::Isometry(b) => {
            let j = b.ball_jacobian(x);
            Ok(j.transpose() * e1.eval_ball(&b.apply_ball(x)) * j)
        }
        ChartChange::Gauge { b, zeta } => {
            let p = Point::ball(x)?;
            let pb = pullback_metric(zeta.as_ref(), &p, step, PULLBACK_GUARD)?;
            if pb.guard_exceeded {
                return Err(Error::Domain("gauge field exceeds the pullback guard".into()));
            }
            let phi0 = |y: &[f64]| exp_ball(y, &zeta(y)).unwrap_or(vec![f64::NAN; n]);
            let y = exp_ball(x, &zeta(x))?;
            let j = b.ball_jacobian(&y) * fd::jacobian(&phi0, x, step.ball(x));
            Ok(pb.deviation + j.transpose() * e1.eval_ball(&b.apply_ball(&y)) * j)
        }
        ChartChange::Composite(_) => unreachable!("composites are unfolded by the caller"),
    }
}

fn flatten(change: &ChartChange, out: &mut Vec<ChartChange>) {
    match change {
        ChartChange::Composite(v) => v.iter().for_each(|c| flatten(c, out)),
        c => out.push(c.clone()),
    }
}

/// `e2 = Psi^*(b + e1) - b`. The result has no exact derivative; charges of
/// it should use the Hessian-form integrand.
pub fn apply_chart_change(e1: &MetricPerturbation, change: &ChartChange, step: FdStep) -> Result<MetricPerturbation> {
    let mut parts = Vec::new();
    flatten(change, &mut parts);
    if let ChartChange::Isometry(b) = change {
        if b.dim() != e1.n {
            return Err(Error::Invalid("Lorentz map dimension mismatch".into()));
        }
    }
    let mut e = e1.clone();
    for part in parts {
        let prev = e.clone();
        let f = Arc::new(move |x: &[f64]| {
            change_once(&prev, &part, x, step).unwrap_or_else(|_| DMatrix::from_element(x.len(), x.len(), f64::NAN))
        });
        let meta = DecayMeta { inner_radius: e.meta.inner_radius + 1.0, ..e.meta };
        e = MetricPerturbation::new(e1.n, Chart::Ball, f, meta)?;
    }
    Ok(e)
}

/// Pointwise data of the antisymmetric field
/// `S_ij = (D_i zeta_j - D_j zeta_i) V + 2 zeta_i D_j V - 2 zeta_j D_i V`
/// and of `W_i = S_ij (-D chi)^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BartnikSample {
    pub s: DMatrix<f64>,
    pub w: DVector<f64>,
    /// Finite-difference divergence of `W`.
    pub divergence: f64,
    /// `U(b, V, L_zeta b, chi) + 2 T(zeta, -D chi)`.
    pub expected: f64,
    pub residual: f64,
}

fn bartnik_s(zeta: &VectorField, v: &TestFunction, x: &[f64], step: FdStep) -> DMatrix<f64> {
    let rho = rho_of(x);
    let z = DVector::from_iterator(x.len(), zeta(x).into_iter().map(|c| c / rho));
    let d = vector_derivative(zeta.as_ref(), x, step);
    let (val, dv) = v.jet(x);
    let s = (&d - d.transpose()) * val + (&z * dv.transpose()) * 2.0 - (&dv * z.transpose()) * 2.0;
    0.5 * (&s - s.transpose())
}

fn radial_cutoff(cutoffs: &CutoffFamily, k: f64, x: &[f64]) -> CutoffJet {
    let s = norm2(x).sqrt();
    let r = 2.0 * s.atanh();
    let th: Vec<f64> = x.iter().map(|c| c / s).collect();
    let (_, d1, d2) = cutoffs.eval(k, r);
    CutoffJet::radial(r, &th, d1, d2)
}

/// `W` and the divergence identity at a ball point, for the cutoff `chi_k`.
pub fn bartnik_field(
    zeta: &GaugeField,
    v: &TestFunction,
    cutoffs: &CutoffFamily,
    k: f64,
    x: &[f64],
    step: FdStep,
) -> Result<BartnikSample> {
    let n = x.len();
    if zeta.n != n {
        return Err(Error::Invalid("gauge field dimension mismatch".into()));
    }
    let deficit = match v {
        TestFunction::Lapse(_) => DMatrix::zeros(n, n),
        TestFunction::Eigen(e) => e.jet_ball(x, true).deficit.expect("requested"),
        TestFunction::Decaying { .. } => {
            return Err(Error::Unsupported("Bartnik field needs a lapse or eigenfunction".into()))
        }
    };
    let zf = zeta.vector_field();
    let w_on = |y: &[f64]| -> DVector<f64> {
        let cut = radial_cutoff(cutoffs, k, y);
        bartnik_s(&zf, v, y, step) * (-&cut.gradient)
    };
    let s = bartnik_s(&zf, v, x, step);
    let w = w_on(x);
    // div W = d_i W^i + n phi . W in ball components
    let w_ball = |y: &[f64]| -> Vec<f64> {
        let r = rho_of(y);
        w_on(y).iter().map(|c| c * r).collect()
    };
    let jac = fd::jacobian(&w_ball, x, step.ball(x));
    let wb = w_ball(x);
    let rho = rho_of(x);
    let divergence = jac.trace() + n as f64 * (0..n).map(|i| x[i] * wb[i]).sum::<f64>() / rho;
    // L_zeta b as a perturbation in ball components
    let zl = zf.clone();
    let lie = MetricPerturbation::new(
        n,
        Chart::Ball,
        Arc::new(move |y: &[f64]| {
            let d = vector_derivative(zl.as_ref(), y, step);
            let r = rho_of(y);
            (&d + d.transpose()) / (r * r)
        }),
        DecayMeta::default(),
    )?;
    let jet = perturbation_jet(&lie, x, false, step);
    let cut = radial_cutoff(cutoffs, k, x);
    let (val, dv) = v.jet(x);
    let u = charge_integrand_u(IntegrandForm::Standard, val, &dv, &jet.e, Some(&jet.de), &cut)?;
    let z = DVector::from_iterator(n, zeta.on(x));
    let expected = u + 2.0 * (z.transpose() * &deficit * (-&cut.gradient))[0];
    Ok(BartnikSample { s, w, divergence, expected, residual: divergence - expected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    /// `p(e1, V)`
    pub p_before: f64,
    /// `p(e2, V)`
    pub p_after: f64,
    /// `p(e1, V o B^-1)`
    pub p_transformed: f64,
    /// `|p_after - p_transformed| / max(1, |p_transformed|)`
    pub gap: f64,
    /// `|p_after - p_before| / max(1, |p_before|)`
    pub gap_untransformed: f64,
}

/// Compares `p(e2, V)` with `p(e1, V o B^-1)`.
pub fn verify_covariance(
    e1: &MetricPerturbation,
    change: &ChartChange,
    v: &LapseFunction,
    cutoffs: &CutoffFamily,
    rule: &SphereRule,
    opts: &ChargeOptions,
) -> Result<CovarianceReport> {
    let n = e1.n;
    let e2 = apply_chart_change(e1, change, opts.step)?;
    let mut hess = *opts;
    hess.form = Some(IntegrandForm::Hessian);
    let transformed = change.lorentz(n).inverse().act_lapse(v);
    let p_before = charge_adm(e1, &TestFunction::Lapse(v.clone()), cutoffs, rule, opts)?.extrapolated;
    let p_after = charge_adm(&e2, &TestFunction::Lapse(v.clone()), cutoffs, rule, &hess)?.extrapolated;
    let p_transformed = charge_adm(e1, &TestFunction::Lapse(transformed), cutoffs, rule, opts)?.extrapolated;
    Ok(CovarianceReport {
        p_before,
        p_after,
        p_transformed,
        gap: (p_after - p_transformed).abs() / p_transformed.abs().max(1.0),
        gap_untransformed: (p_after - p_before).abs() / p_before.abs().max(1.0),
    })
}
