//! Tensor fields on hyperbolic space, covariant derivatives of `b`, and the
//! scalar and Einstein curvature of `g = b + e` expanded around `b`.
//!
//! Fields are callbacks in ball coordinates. Derived quantities are returned
//! in the orthonormal frame `E_i = rho d_i`, where `b = delta`.
//! Callbacks must be safe to call from several threads at once.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::fd::{self, FdStep};
use crate::geometry::{ball_half_involution, ball_half_jacobian, Chart, Point};
use crate::{Error, Result};

/// Dense covariant tensor with row-major multi-index.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub rank: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, rank: usize) -> Self {
        Tensor { n, rank, data: vec![0.0; n.pow(rank as u32)] }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        Tensor { n, rank: 2, data: (0..n * n).map(|k| m[(k / n, k % n)]).collect() }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.rank, 2);
        DMatrix::from_fn(self.n, self.n, |i, j| self.data[i * self.n + j])
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, i| acc * self.n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.index(idx)]
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn rho_of(x: &[f64]) -> f64 {
    0.5 * (1.0 - x.iter().map(|c| c * c).sum::<f64>())
}

/// Adds the `b`-connection terms to coordinate partials of a covariant
/// tensor: `(D_k T)_I = d_k T_I - sum_s Gamma^m_{k i_s} T_{..m..}`.
/// `partials[k]` holds `d_k T` flattened.
fn connect(x: &[f64], rank: usize, values: &[f64], partials: &[Vec<f64>]) -> Tensor {
    let n = x.len();
    let rho = rho_of(x);
    let phi: Vec<f64> = x.iter().map(|c| c / rho).collect();
    let size = n.pow(rank as u32);
    let mut out = Tensor::zeros(n, rank + 1);
    let stride = |s: usize| n.pow((rank - 1 - s) as u32);
    for k in 0..n {
        for flat in 0..size {
            let mut v = partials[k][flat];
            for s in 0..rank {
                let st = stride(s);
                let i = (flat / st) % n;
                let base = flat - i * st;
                // Gamma^m_{k i} T_{..m..} = phi_i T_{..k..} + phi_k T_{..i..} - delta_ki phi.T
                v -= phi[i] * values[base + k * st] + phi[k] * values[flat];
                if i == k {
                    let contr: f64 = (0..n).map(|m| phi[m] * values[base + m * st]).sum();
                    v += contr;
                }
            }
            out.data[k * size + flat] = v;
        }
    }
    out
}

/// Covariant derivative of a covariant tensor field given in ball
/// coordinates; the new index comes first. Output is in ball coordinates.
pub fn covariant_derivative<F>(t: &F, p: &Point, step: FdStep) -> Result<Tensor>
where
    F: Fn(&[f64]) -> Tensor + ?Sized,
{
    let x = p.convert(Chart::Ball)?.ball_coords();
    Ok(covariant_derivative_ball(t, &x, step))
}

pub fn covariant_derivative_ball<F>(t: &F, x: &[f64], step: FdStep) -> Tensor
where
    F: Fn(&[f64]) -> Tensor + ?Sized,
{
    let t0 = t(x);
    let flat = |y: &[f64]| t(y).data;
    let partials = fd::gradient(&flat, x, step.ball(x));
    connect(x, t0.rank, &t0.data, &partials)
}

/// Raises a ball-coordinate covariant tensor to orthonormal components.
pub fn to_orthonormal(t: Tensor, x: &[f64]) -> Tensor {
    let r = t.rank as i32;
    t.scale(rho_of(x).powi(r))
}

pub type MatrixField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type PartialsField = Arc<dyn Fn(&[f64]) -> Tensor + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayMeta {
    /// `|e|_b = O(rho^tau)`.
    pub decay_order: f64,
    pub wang: bool,
    /// The field is only meaningful for `r >= inner_radius`.
    pub inner_radius: f64,
}

impl Default for DecayMeta {
    fn default() -> Self {
        DecayMeta { decay_order: 0.0, wang: false, inner_radius: 0.0 }
    }
}

/// The perturbation `e = g - b`, as components in a declared chart.
#[derive(Clone)]
pub struct MetricPerturbation {
    pub n: usize,
    pub chart: Chart,
    e: MatrixField,
    de: Option<PartialsField>,
    pub meta: DecayMeta,
}

impl std::fmt::Debug for MetricPerturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricPerturbation")
            .field("n", &self.n)
            .field("chart", &self.chart)
            .field("exact_derivative", &self.de.is_some())
            .field("meta", &self.meta)
            .finish()
    }
}

impl MetricPerturbation {
    /// `e` gives coordinate components in `chart` (ball or half-space).
    pub fn new(n: usize, chart: Chart, e: MatrixField, meta: DecayMeta) -> Result<Self> {
        crate::geometry::Dimension::new(n)?;
        if !matches!(chart, Chart::Ball | Chart::HalfSpace) {
            return Err(Error::Unsupported(format!("perturbations in the {chart:?} chart")));
        }
        Ok(MetricPerturbation { n, chart, e, de: None, meta })
    }

    pub fn zero(n: usize) -> Self {
        MetricPerturbation {
            n,
            chart: Chart::Ball,
            e: Arc::new(move |_| DMatrix::zeros(n, n)),
            de: Some(Arc::new(move |_| Tensor::zeros(n, 3))),
            meta: DecayMeta { decay_order: f64::INFINITY, ..DecayMeta::default() },
        }
    }

    /// Attaches exact coordinate partials `d_k e_ij` (layout `[k][i][j]`),
    /// in the same chart as `e`.
    pub fn with_derivative(mut self, de: PartialsField) -> Self {
        self.de = Some(de);
        self
    }

    pub fn has_exact_derivative(&self) -> bool {
        self.de.is_some()
    }

    /// Ball-coordinate components.
    pub fn eval_ball(&self, x: &[f64]) -> DMatrix<f64> {
        match self.chart {
            Chart::HalfSpace => {
                let y = ball_half_involution(x);
                let j = ball_half_jacobian(x);
                j.transpose() * (self.e)(&y) * j
            }
            _ => (self.e)(x),
        }
    }

    /// Orthonormal-frame components.
    pub fn eval_on(&self, x: &[f64]) -> DMatrix<f64> {
        let r = rho_of(x);
        self.eval_ball(x) * (r * r)
    }

    pub fn eval(&self, p: &Point) -> Result<DMatrix<f64>> {
        Ok(self.eval_on(&p.convert(Chart::Ball)?.ball_coords()))
    }

    /// Coordinate partials in ball coordinates, exact when available.
    pub fn partials_ball(&self, x: &[f64], step: FdStep) -> Tensor {
        let n = self.n;
        match (&self.de, self.chart) {
            (Some(de), Chart::Ball) => de(x),
            _ => {
                let f = |y: &[f64]| Tensor::from_matrix(&self.eval_ball(y)).data;
                let g = fd::gradient(&f, x, step.ball(x));
                Tensor { n, rank: 3, data: g.concat() }
            }
        }
    }

    /// `D e` in ball coordinates, layout `[k][i][j] = D_k e_ij`.
    pub fn covariant_ball(&self, x: &[f64], step: FdStep) -> Tensor {
        let e = Tensor::from_matrix(&self.eval_ball(x));
        let p = self.partials_ball(x, step);
        let size = self.n * self.n;
        let partials: Vec<Vec<f64>> = p.data.chunks(size).map(|c| c.to_vec()).collect();
        connect(x, 2, &e.data, &partials)
    }

    pub fn scaled(&self, t: f64) -> MetricPerturbation {
        let e = self.e.clone();
        let de = self.de.clone();
        MetricPerturbation {
            n: self.n,
            chart: self.chart,
            e: Arc::new(move |x| e(x) * t),
            de: de.map(|d| -> PartialsField { Arc::new(move |x| d(x).scale(t)) }),
            meta: self.meta,
        }
    }

    /// `self + other`, both evaluated in ball coordinates.
    pub fn add(&self, other: &MetricPerturbation) -> Result<MetricPerturbation> {
        if self.n != other.n {
            return Err(Error::Invalid("dimension mismatch".into()));
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(MetricPerturbation {
            n: self.n,
            chart: Chart::Ball,
            e: Arc::new(move |x| a.eval_ball(x) + b.eval_ball(x)),
            de: None,
            meta: DecayMeta {
                decay_order: self.meta.decay_order.min(other.meta.decay_order),
                wang: false,
                inner_radius: self.meta.inner_radius.max(other.meta.inner_radius),
            },
        })
    }

    /// Uniform-equivalence constant `C` with `C^-1 b <= g <= C b` over the
    /// sample points.
    pub fn equivalence_constant(&self, points: &[Point]) -> Result<f64> {
        let mut c: f64 = 1.0;
        for p in points {
            let e = self.eval(p)?;
            let g = DMatrix::identity(self.n, self.n) + e;
            let ev = SymmetricEigen::new(g).eigenvalues;
            let (lo, hi) = (ev.min(), ev.max());
            if lo <= 0.0 {
                return Err(Error::NotPositiveDefinite { eigenvalue: lo });
            }
            c = c.max(hi).max(1.0 / lo);
        }
        Ok(c)
    }
}

/// Values and covariant derivatives of `e` in the orthonormal frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationJet {
    pub e: DMatrix<f64>,
    /// `[k][i][j] = D_k e_ij`
    pub de: Tensor,
    /// `[l][k][i][j] = D_l D_k e_ij`
    pub dde: Option<Tensor>,
}

pub fn perturbation_jet(e: &MetricPerturbation, x: &[f64], second: bool, step: FdStep) -> PerturbationJet {
    let rho = rho_of(x);
    let val = e.eval_ball(x) * (rho * rho);
    let de = to_orthonormal(e.covariant_ball(x, step), x);
    let dde = second.then(|| {
        let field = |y: &[f64]| e.covariant_ball(y, step);
        to_orthonormal(covariant_derivative_ball(&field, x, step), x)
    });
    PerturbationJet { e: val, de, dde }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseCorrection {
    /// `g^{ij} = b^{ij} + f^{ij}`, orthonormal frame.
    pub f: DMatrix<f64>,
}

/// Solves `(I + E)(I + F) = I` by dense inversion.
pub fn inverse_correction(e: &DMatrix<f64>) -> Result<InverseCorrection> {
    let n = e.nrows();
    if n != e.ncols() {
        return Err(Error::Invalid("perturbation matrix must be square".into()));
    }
    let g = DMatrix::identity(n, n) + e;
    let sym = 0.5 * (&g + g.transpose());
    let lo = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { eigenvalue: lo });
    }
    let inv = sym
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { eigenvalue: lo })?
        .inverse();
    let f = -(&inv * e);
    Ok(InverseCorrection { f: 0.5 * (&f + f.transpose()) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelTensor {
    /// `[k][i][j] = Gamma^k_ij`, orthonormal frame.
    pub gamma: Tensor,
}

fn christoffel_from_jet(jet: &PerturbationJet, ginv: &DMatrix<f64>) -> Tensor {
    let n = jet.e.nrows();
    let de = &jet.de;
    let mut out = Tensor::zeros(n, 3);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for l in 0..n {
                    let a = de.get(&[i, l, j]) + de.get(&[j, i, l]) - de.get(&[l, i, j]);
                    v += ginv[(k, l)] * a;
                }
                out.data[(k * n + i) * n + j] = 0.5 * v;
            }
        }
    }
    out
}

pub fn christoffel(e: &MetricPerturbation, p: &Point, step: FdStep) -> Result<ChristoffelTensor> {
    let x = p.convert(Chart::Ball)?.ball_coords();
    let jet = perturbation_jet(e, &x, false, step);
    let f = inverse_correction(&jet.e)?.f;
    let ginv = DMatrix::identity(e.n, e.n) + f;
    Ok(ChristoffelTensor { gamma: christoffel_from_jet(&jet, &ginv) })
}

fn divdiv_and_laplace_trace(dde: &Tensor) -> (f64, f64) {
    let n = dde.n;
    let mut divdiv = 0.0;
    let mut lap = 0.0;
    for i in 0..n {
        for j in 0..n {
            divdiv += dde.get(&[i, j, i, j]);
            lap += dde.get(&[i, i, j, j]);
        }
    }
    (divdiv, lap)
}

/// `(n-1) tr e + div div e - Laplacian tr e` from a second-order jet.
pub fn scal_linear_from_jet(jet: &PerturbationJet) -> f64 {
    let n = jet.e.nrows() as f64;
    let dde = jet.dde.as_ref().expect("second derivatives required");
    let (divdiv, lap) = divdiv_and_laplace_trace(dde);
    (n - 1.0) * jet.e.trace() + divdiv - lap
}

/// `Scal^g + n(n-1)` evaluated exactly from a second-order jet.
pub fn scal_deviation_from_jet(jet: &PerturbationJet) -> Result<f64> {
    let n = jet.e.nrows();
    let nf = n as f64;
    let f = inverse_correction(&jet.e)?.f;
    let g = DMatrix::identity(n, n) + &f;
    let gam = christoffel_from_jet(jet, &g);
    let de = &jet.de;
    let dde = jet.dde.as_ref().expect("second derivatives required");
    // D_m g^{kl} = -g^{ka} g^{lb} D_m e_ab
    let mut dg = Tensor::zeros(n, 3);
    for m in 0..n {
        let dm = DMatrix::from_fn(n, n, |a, b| de.get(&[m, a, b]));
        let v = -(&g * dm * &g);
        for k in 0..n {
            for l in 0..n {
                dg.data[(m * n + k) * n + l] = v[(k, l)];
            }
        }
    }
    let a = |l: usize, i: usize, j: usize| de.get(&[i, l, j]) + de.get(&[j, i, l]) - de.get(&[l, i, j]);
    let da = |m: usize, l: usize, i: usize, j: usize| {
        dde.get(&[m, i, l, j]) + dde.get(&[m, j, i, l]) - dde.get(&[m, l, i, j])
    };
    // D_m Gamma^k_ij
    let dgam = |m: usize, k: usize, i: usize, j: usize| {
        let mut v = 0.0;
        for l in 0..n {
            v += dg.get(&[m, k, l]) * a(l, i, j) + g[(k, l)] * da(m, l, i, j);
        }
        0.5 * v
    };
    let mut acc = -(nf - 1.0) * f.trace();
    for j in 0..n {
        for l in 0..n {
            let mut t = 0.0;
            for i in 0..n {
                t += dgam(i, i, j, l) - dgam(l, i, j, i);
                for p in 0..n {
                    t += gam.get(&[i, i, p]) * gam.get(&[p, j, l]) - gam.get(&[i, l, p]) * gam.get(&[p, j, i]);
                }
            }
            acc += g[(j, l)] * t;
        }
    }
    Ok(acc)
}

/// Linearised modified Einstein tensor (orthonormal frame).
pub fn einstein_linear_from_jet(jet: &PerturbationJet) -> DMatrix<f64> {
    let n = jet.e.nrows();
    let nf = n as f64;
    let dde = jet.dde.as_ref().expect("second derivatives required");
    let lin = scal_linear_from_jet(jet);
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for k in 0..n {
                v += dde.get(&[k, i, j, k]) + dde.get(&[k, j, i, k]) - dde.get(&[k, k, i, j]) - dde.get(&[i, j, k, k]);
            }
            let mut val = 0.5 * v + (nf - 1.0) * jet.e[(i, j)];
            if i == j {
                val -= 0.5 * lin;
            }
            out[(i, j)] = val;
        }
    }
    0.5 * (&out + out.transpose())
}

fn ball(p: &Point) -> Result<Vec<f64>> {
    Ok(p.convert(Chart::Ball)?.ball_coords())
}

pub fn scal_linear(e: &MetricPerturbation, p: &Point, step: FdStep) -> Result<f64> {
    Ok(scal_linear_from_jet(&perturbation_jet(e, &ball(p)?, true, step)))
}

/// `Scal^g + n(n-1)`, computed without cancellation against `-n(n-1)`.
pub fn scal_deviation(e: &MetricPerturbation, p: &Point, step: FdStep) -> Result<f64> {
    scal_deviation_from_jet(&perturbation_jet(e, &ball(p)?, true, step))
}

pub fn scal_exact(e: &MetricPerturbation, p: &Point, step: FdStep) -> Result<f64> {
    let n = e.n as f64;
    Ok(-n * (n - 1.0) + scal_deviation(e, p, step)?)
}

pub fn einstein_linear(e: &MetricPerturbation, p: &Point, step: FdStep) -> Result<DMatrix<f64>> {
    Ok(einstein_linear_from_jet(&perturbation_jet(e, &ball(p)?, true, step)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSample {
    pub scal_exact: f64,
    pub scal_linear: f64,
    pub einstein_linear: DMatrix<f64>,
    /// `scal_exact + n(n-1) - scal_linear`
    pub remainder: f64,
}

pub fn curvature_sample(e: &MetricPerturbation, p: &Point, step: FdStep) -> Result<CurvatureSample> {
    let jet = perturbation_jet(e, &ball(p)?, true, step);
    let n = e.n as f64;
    let dev = scal_deviation_from_jet(&jet)?;
    let lin = scal_linear_from_jet(&jet);
    Ok(CurvatureSample {
        scal_exact: -n * (n - 1.0) + dev,
        scal_linear: lin,
        einstein_linear: einstein_linear_from_jet(&jet),
        remainder: dev - lin,
    })
}

/// `(D_i zeta)^k` (row `i`, column `k`) for a ball-coordinate vector field;
/// the mixed components coincide with orthonormal-frame components.
pub fn vector_derivative<F>(zeta: &F, x: &[f64], step: FdStep) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let n = x.len();
    let z = zeta(x);
    let jac = fd::jacobian(zeta, x, step.ball(x));
    let rho = rho_of(x);
    let xz: f64 = (0..n).map(|l| x[l] * z[l]).sum::<f64>() / rho;
    // Gamma^k_il z^l = delta_ik phi.z + z^k phi_i - z^i phi_k, phi = x / rho
    DMatrix::from_fn(n, n, |i, k| {
        let mut v = jac[(k, i)] + z[k] * x[i] / rho;
        if i == k {
            v += xz;
        }
        v - x[k] * z[i] / rho
    })
}

/// `L_zeta b = D_i zeta_j + D_j zeta_i`, orthonormal frame.
pub fn lie_derivative_b<F>(zeta: &F, p: &Point, step: FdStep) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let x = ball(p)?;
    let d = vector_derivative(zeta, &x, step);
    Ok(&d + d.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalKilling {
    /// Ball-coordinate components.
    pub vector_ball: DVector<f64>,
    /// Orthonormal-frame components.
    pub vector: DVector<f64>,
    /// `(D_i X)^k`, row `i`.
    pub derivative: DMatrix<f64>,
    pub divergence: f64,
}

/// `X^0 = D V^0 = x^i d_i` and `X^j = D V^j = rho d_j + x^j x^k d_k`.
pub fn conformal_killing(mu: usize, p: &Point) -> Result<ConformalKilling> {
    let x = ball(p)?;
    let n = x.len();
    if mu > n {
        return Err(Error::Invalid(format!("index {mu} out of range")));
    }
    let rho = rho_of(&x);
    let (vb, jac) = if mu == 0 {
        (DVector::from_column_slice(&x), DMatrix::identity(n, n))
    } else {
        let j = mu - 1;
        let v = DVector::from_fn(n, |k, _| if k == j { rho } else { 0.0 } + x[j] * x[k]);
        // jac[(k, i)] = d_i X^k
        let jac = DMatrix::from_fn(n, n, |k, i| {
            let mut d = if k == j { -x[i] } else { 0.0 };
            if i == j {
                d += x[k];
            }
            if i == k {
                d += x[j];
            }
            d
        });
        (v, jac)
    };
    let xz: f64 = (0..n).map(|l| x[l] * vb[l]).sum::<f64>() / rho;
    let derivative = DMatrix::from_fn(n, n, |i, k| {
        let mut v = jac[(k, i)] + vb[k] * x[i] / rho - x[k] * vb[i] / rho;
        if i == k {
            v += xz;
        }
        v
    });
    Ok(ConformalKilling {
        vector: &vb / rho,
        vector_ball: vb,
        divergence: derivative.trace(),
        derivative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> FdStep {
        FdStep::default()
    }

    #[test]
    fn zero_perturbation() {
        let e = MetricPerturbation::zero(3);
        let p = Point::ball(&[0.2, -0.1, 0.3]).unwrap();
        assert_eq!(scal_linear(&e, &p, step()).unwrap(), 0.0);
        assert_eq!(scal_exact(&e, &p, step()).unwrap(), -6.0);
        assert_eq!(einstein_linear(&e, &p, step()).unwrap().norm(), 0.0);
        assert_eq!(christoffel(&e, &p, step()).unwrap().gamma.max_abs(), 0.0);
    }

    #[test]
    fn inverse_correction_scalar_case() {
        let eps = 0.3;
        let mut e = DMatrix::zeros(3, 3);
        e[(0, 0)] = eps;
        let f = inverse_correction(&e).unwrap().f;
        assert!((f[(0, 0)] + eps / (1.0 + eps)).abs() < 1e-15);
        assert_eq!(inverse_correction(&DMatrix::zeros(3, 3)).unwrap().f.norm(), 0.0);
    }

    #[test]
    fn inverse_correction_rejects_indefinite() {
        let e = DMatrix::from_diagonal_element(3, 3, -1.5);
        assert!(matches!(inverse_correction(&e), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn conformal_killing_at_origin() {
        let k = conformal_killing(0, &Point::ball(&[0.0; 3]).unwrap()).unwrap();
        assert_eq!(k.vector.norm(), 0.0);
    }

    #[test]
    fn covariant_derivative_of_constant_is_zero() {
        let one = |_: &[f64]| Tensor { n: 3, rank: 0, data: vec![1.0] };
        let d = covariant_derivative(&one, &Point::ball(&[0.3, 0.1, 0.0]).unwrap(), step()).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }
}
