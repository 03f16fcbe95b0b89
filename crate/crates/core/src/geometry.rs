//! Models of hyperbolic space, lapse functions, geodesics and isometries.
//!
//! Charts:
//! - `Ball`: `x` in the unit ball, `b = rho^-2 delta`, `rho = (1 - |x|^2) / 2`.
//! - `HalfSpace`: `y` with `y^1 > 0`, `b = (y^1)^-2 delta`.
//! - `Hyperboloid`: `X` in `R^{n,1}` with `eta(X, X) = -1`, `X^0 > 0`.
//! - `Polar`: `(r, theta)` with `theta` a unit vector of `R^n`.
//!
//! Ball and half-space are exchanged by the involution
//! `z -> 2 (z + e_1) / |z + e_1|^2 - e_1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fd::{self, FdStep};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Invalid(format!("dimension must be at least 3, got {n}")));
        }
        Ok(Dimension(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    Ball,
    HalfSpace,
    Hyperboloid,
    Polar,
}

/// Minkowski product with signature `(-, +, ..., +)`.
pub fn eta(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(x, y)| x * y).sum::<f64>()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

/// The ball/half-space involution.
pub fn ball_half_involution(z: &[f64]) -> Vec<f64> {
    let mut u = z.to_vec();
    u[0] += 1.0;
    let d = norm2(&u);
    let mut out: Vec<f64> = u.iter().map(|c| 2.0 * c / d).collect();
    out[0] -= 1.0;
    out
}

/// Jacobian of the involution at `z`.
pub fn ball_half_jacobian(z: &[f64]) -> DMatrix<f64> {
    let n = z.len();
    let mut u = DVector::from_column_slice(z);
    u[0] += 1.0;
    let d = u.norm_squared();
    (DMatrix::identity(n, n) - (2.0 / d) * &u * u.transpose()) * (2.0 / d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    chart: Chart,
    coords: DVector<f64>,
}

impl Point {
    pub fn ball(x: &[f64]) -> Result<Point> {
        let r2 = norm2(x);
        if x.len() < 3 || !r2.is_finite() || r2 >= 1.0 {
            return Err(Error::Domain(format!("ball point with |x|^2 = {r2}")));
        }
        Ok(Point { chart: Chart::Ball, coords: DVector::from_column_slice(x) })
    }

    pub fn half_space(y: &[f64]) -> Result<Point> {
        if y.len() < 3 || !(y[0] > 0.0) || y.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("half-space point needs y^1 > 0".into()));
        }
        Ok(Point { chart: Chart::HalfSpace, coords: DVector::from_column_slice(y) })
    }

    /// Hyperboloid point; small drift off `eta = -1` is projected away.
    pub fn hyperboloid(x: &[f64]) -> Result<Point> {
        if x.len() < 4 || !(x[0] > 0.0) || x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("hyperboloid point needs X^0 > 0".into()));
        }
        let q = eta(x, x);
        if !(q < 0.0) || (q + 1.0).abs() > 1e-8 * x[0] * x[0] {
            return Err(Error::Domain(format!("eta(X, X) = {q}, expected -1")));
        }
        let mut v = DVector::from_column_slice(x);
        if (q + 1.0).abs() > 1e-13 {
            v /= (-q).sqrt();
        }
        Ok(Point { chart: Chart::Hyperboloid, coords: v })
    }

    /// Polar point; `theta` is normalised, and a zero `theta` at `r = 0`
    /// becomes `e_1`.
    pub fn polar(r: f64, theta: &[f64]) -> Result<Point> {
        if theta.len() < 3 || !(r >= 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("polar radius {r}")));
        }
        let t = norm2(theta).sqrt();
        let mut coords = vec![r];
        if t == 0.0 || !t.is_finite() {
            if r != 0.0 {
                return Err(Error::Domain("polar direction undefined".into()));
            }
            coords.push(1.0);
            coords.extend(std::iter::repeat(0.0).take(theta.len() - 1));
        } else {
            coords.extend(theta.iter().map(|c| c / t));
        }
        Ok(Point { chart: Chart::Polar, coords: DVector::from_vec(coords) })
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn coords(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn dim(&self) -> usize {
        match self.chart {
            Chart::Ball | Chart::HalfSpace => self.coords.len(),
            Chart::Hyperboloid | Chart::Polar => self.coords.len() - 1,
        }
    }

    pub fn rho(&self) -> f64 {
        let c = self.coords.as_slice();
        match self.chart {
            Chart::Ball => 0.5 * (1.0 - norm2(c)),
            Chart::HalfSpace => {
                let d = (c[0] + 1.0).powi(2) + norm2(&c[1..]);
                2.0 * c[0] / d
            }
            Chart::Hyperboloid => 1.0 / (1.0 + c[0]),
            Chart::Polar => 1.0 / (c[0].cosh() + 1.0),
        }
    }

    /// Hyperbolic distance to the ball origin.
    pub fn radius(&self) -> f64 {
        match self.chart {
            Chart::Polar => self.coords[0],
            Chart::Hyperboloid => self.coords[0].acosh(),
            _ => 2.0 * norm2(&self.ball_coords()).sqrt().atanh(),
        }
    }

    pub fn ball_coords(&self) -> Vec<f64> {
        let c = self.coords.as_slice();
        match self.chart {
            Chart::Ball => c.to_vec(),
            Chart::HalfSpace => ball_half_involution(c),
            Chart::Hyperboloid => c[1..].iter().map(|v| v / (1.0 + c[0])).collect(),
            Chart::Polar => {
                let t = (0.5 * c[0]).tanh();
                c[1..].iter().map(|v| t * v).collect()
            }
        }
    }

    pub fn convert(&self, target: Chart) -> Result<Point> {
        convert(self, target)
    }
}

pub fn rho(p: &Point) -> f64 {
    p.rho()
}

pub fn convert(p: &Point, target: Chart) -> Result<Point> {
    if p.chart == target {
        return Ok(p.clone());
    }
    let c = p.coords.as_slice();
    match (p.chart, target) {
        (Chart::Polar, Chart::Hyperboloid) => {
            let mut x = vec![c[0].cosh()];
            x.extend(c[1..].iter().map(|t| c[0].sinh() * t));
            Point::hyperboloid(&x)
        }
        (Chart::Hyperboloid, Chart::Polar) => {
            let s = norm2(&c[1..]).sqrt();
            let r = s.asinh();
            Point::polar(r, &c[1..].iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect::<Vec<_>>())
        }
        _ => {
            let x = p.ball_coords();
            if norm2(&x) >= 1.0 {
                return Err(Error::Domain("point at the boundary sphere".into()));
            }
            match target {
                Chart::Ball => Point::ball(&x),
                Chart::HalfSpace => Point::half_space(&ball_half_involution(&x)),
                Chart::Hyperboloid => Point::hyperboloid(&ball_to_hyperboloid(&x)),
                Chart::Polar => {
                    let s = norm2(&x).sqrt();
                    let theta: Vec<f64> = x.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect();
                    Point::polar(2.0 * s.atanh(), &theta)
                }
            }
        }
    }
}

pub fn ball_to_hyperboloid(x: &[f64]) -> Vec<f64> {
    let r2 = norm2(x);
    let d = 1.0 - r2;
    let mut out = vec![(1.0 + r2) / d];
    out.extend(x.iter().map(|c| 2.0 * c / d));
    out
}

pub fn hyperboloid_to_ball(x: &[f64]) -> Vec<f64> {
    x[1..].iter().map(|v| v / (1.0 + x[0])).collect()
}

/// `d X / d x` as an `(n+1) x n` matrix.
pub fn ball_to_hyperboloid_jacobian(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let rho = 0.5 * (1.0 - norm2(x));
    DMatrix::from_fn(n + 1, n, |mu, j| {
        if mu == 0 {
            x[j] / (rho * rho)
        } else {
            let i = mu - 1;
            let d = if i == j { 1.0 / rho } else { 0.0 };
            d + x[i] * x[j] / (rho * rho)
        }
    })
}

/// `d x / d X` as an `n x (n+1)` matrix.
pub fn hyperboloid_to_ball_jacobian(x: &[f64]) -> DMatrix<f64> {
    let n = x.len() - 1;
    let d = 1.0 + x[0];
    DMatrix::from_fn(n, n + 1, |i, mu| {
        if mu == 0 {
            -x[i + 1] / (d * d)
        } else if mu == i + 1 {
            1.0 / d
        } else {
            0.0
        }
    })
}

/// Christoffel symbols of `b` in the ball chart, `gamma[k][i][j]` flattened
/// as `(k * n + i) * n + j`.
pub fn ball_christoffel(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let rho = 0.5 * (1.0 - norm2(x));
    let phi: Vec<f64> = x.iter().map(|c| c / rho).collect();
    let mut g = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                if i == k {
                    v += phi[j];
                }
                if j == k {
                    v += phi[i];
                }
                if i == j {
                    v -= phi[k];
                }
                g[(k * n + i) * n + j] = v;
            }
        }
    }
    g
}

/// Background data of `(H^n, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundGeometry {
    pub dim: Dimension,
}

impl BackgroundGeometry {
    pub fn new(n: usize) -> Result<Self> {
        Ok(BackgroundGeometry { dim: Dimension::new(n)? })
    }

    /// `Ric_b = ricci_factor * b`.
    pub fn ricci_factor(&self) -> f64 {
        -(self.dim.get() as f64 - 1.0)
    }

    pub fn scalar(&self) -> f64 {
        let n = self.dim.get() as f64;
        -n * (n - 1.0)
    }

    pub fn metric_ball(&self, x: &[f64]) -> DMatrix<f64> {
        let rho = 0.5 * (1.0 - norm2(x));
        DMatrix::identity(x.len(), x.len()) / (rho * rho)
    }

    pub fn christoffel_ball(&self, x: &[f64]) -> Vec<f64> {
        ball_christoffel(x)
    }

    /// Christoffel symbols in the half-space chart, same layout as the ball.
    pub fn christoffel_half(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut g = vec![0.0; n * n * n];
        // phi = -ln y^1, so d phi = -e_1 / y^1
        let d1 = -1.0 / y[0];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = 0.0;
                    if i == k && j == 0 {
                        v += d1;
                    }
                    if j == k && i == 0 {
                        v += d1;
                    }
                    if i == j && k == 0 {
                        v -= d1;
                    }
                    g[(k * n + i) * n + j] = v;
                }
            }
        }
        g
    }

    /// Second fundamental form of the geodesic sphere `S_r` in the
    /// orthonormal frame, for the outward normal `theta`.
    pub fn shape_operator(&self, r: f64, theta: &[f64]) -> DMatrix<f64> {
        let n = theta.len();
        let t = DVector::from_column_slice(theta);
        (DMatrix::identity(n, n) - &t * t.transpose()) / r.tanh()
    }
}

/// `V = sum_mu a_mu V^mu` with `V^0 = (1 + |x|^2) / (1 - |x|^2)` and
/// `V^i = 2 x^i / (1 - |x|^2)`, i.e. the restriction of `X^mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapseFunction {
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LapseJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl LapseFunction {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 4 {
            return Err(Error::Invalid("lapse needs n + 1 >= 4 coefficients".into()));
        }
        Ok(LapseFunction { coeffs })
    }

    pub fn basis(n: usize, mu: usize) -> Self {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[mu] = 1.0;
        LapseFunction { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn value_hyperboloid(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    pub fn value_ball(&self, x: &[f64]) -> f64 {
        self.value_hyperboloid(&ball_to_hyperboloid(x))
    }

    /// Value and partials in the ball chart.
    pub fn value_grad_ball(&self, x: &[f64]) -> (f64, DVector<f64>) {
        let n = x.len();
        let rho = 0.5 * (1.0 - norm2(x));
        let val = self.value_ball(x);
        let xa: f64 = (0..n).map(|i| self.coeffs[i + 1] * x[i]).sum();
        let g = DVector::from_fn(n, |j, _| {
            self.coeffs[0] * x[j] / (rho * rho) + self.coeffs[j + 1] / rho + xa * x[j] / (rho * rho)
        });
        (val, g)
    }

    fn ball_jet(&self, x: &[f64]) -> LapseJet {
        let n = x.len();
        let rho = 0.5 * (1.0 - norm2(x));
        let (value, grad) = self.value_grad_ball(x);
        let a0 = self.coeffs[0];
        let a = &self.coeffs[1..];
        let xa: f64 = (0..n).map(|i| a[i] * x[i]).sum();
        let (r2, r3) = (rho * rho, rho * rho * rho);
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            for k in 0..n {
                let djk = if j == k { 1.0 } else { 0.0 };
                let mut h = a0 * (djk / r2 + 2.0 * x[j] * x[k] / r3);
                h += (a[j] * x[k] + a[k] * x[j] + xa * djk) / r2 + 2.0 * xa * x[j] * x[k] / r3;
                // subtract Gamma^m_jk d_m V with phi = x / rho
                let phig: f64 = (0..n).map(|m| x[m] * grad[m]).sum::<f64>() / rho;
                h -= (x[k] * grad[j] + x[j] * grad[k]) / rho - djk * phig;
                hess[(j, k)] = h;
            }
        }
        LapseJet { value, gradient: grad, hessian: hess }
    }
}

/// Value, gradient and covariant Hessian of a lapse function.
///
/// Ball and half-space charts return coordinate components. The polar chart
/// returns components in the orthonormal frame whose radial vector is
/// `theta`. The hyperboloid chart returns the ambient tangent gradient and
/// `V (eta + (eta X)(eta X)^T)`.
pub fn lapse_eval(v: &LapseFunction, p: &Point) -> Result<LapseJet> {
    let n = p.dim();
    if v.dim() != n {
        return Err(Error::Invalid("lapse and point dimensions differ".into()));
    }
    let c = p.coords();
    match p.chart() {
        Chart::Ball => Ok(v.ball_jet(c)),
        Chart::HalfSpace => {
            let y1 = c[0];
            let y2 = norm2(c);
            let mut value = v.coeffs[0] * (1.0 + y2) / (2.0 * y1) + v.coeffs[1] * (1.0 - y2) / (2.0 * y1);
            for a in 1..n {
                value += v.coeffs[a + 1] * c[a] / y1;
            }
            let x = ball_half_involution(c);
            let jet = v.ball_jet(&x);
            let jm = ball_half_jacobian(c);
            Ok(LapseJet {
                value,
                gradient: jm.transpose() * jet.gradient,
                hessian: jm.transpose() * jet.hessian * &jm,
            })
        }
        Chart::Polar => {
            let r = c[0];
            let theta = &c[1..];
            let (ch, sh) = (r.cosh(), r.sinh());
            let a = &v.coeffs[1..];
            let ta: f64 = (0..n).map(|i| a[i] * theta[i]).sum();
            let value = v.coeffs[0] * ch + sh * ta;
            let gradient = DVector::from_fn(n, |j, _| {
                v.coeffs[0] * sh * theta[j] + ch * ta * theta[j] + (a[j] - ta * theta[j])
            });
            let x = p.ball_coords();
            let rho = p.rho();
            let hessian = v.ball_jet(&x).hessian * (rho * rho);
            Ok(LapseJet { value, gradient, hessian })
        }
        Chart::Hyperboloid => {
            let value = v.value_hyperboloid(c);
            let mut eta_a = DVector::from_column_slice(&v.coeffs);
            eta_a[0] = -eta_a[0];
            let xv = DVector::from_column_slice(c);
            let gradient = eta_a + value * &xv;
            let mut eta_x = xv.clone();
            eta_x[0] = -eta_x[0];
            let mut eta_m = DMatrix::identity(n + 1, n + 1);
            eta_m[(0, 0)] = -1.0;
            let hessian = (eta_m + &eta_x * eta_x.transpose()) * value;
            Ok(LapseJet { value, gradient, hessian })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub components: DVector<f64>,
}

impl TangentVector {
    /// Checks tangency `eta(v, X) = 0`; small defects are projected out.
    pub fn new(base: &Point, v: &[f64]) -> Result<Self> {
        let base = base.convert(Chart::Hyperboloid)?;
        let x = base.coords();
        if v.len() != x.len() {
            return Err(Error::Invalid("tangent vector length".into()));
        }
        let d = eta(v, x);
        let scale = 1.0 + norm2(v).sqrt() * x[0];
        if d.abs() > 1e-9 * scale {
            return Err(Error::Invalid(format!("vector not tangent: eta(v, X) = {d}")));
        }
        let comps = DVector::from_fn(v.len(), |i, _| v[i] + d * x[i]);
        Ok(TangentVector { base, components: comps })
    }

    /// `b`-norm.
    pub fn norm(&self) -> f64 {
        let c = self.components.as_slice();
        eta(c, c).max(0.0).sqrt()
    }

    /// Tangent vector at the hyperboloid image of a ball-coordinate vector.
    pub fn from_ball(x: &[f64], v: &[f64]) -> Result<Self> {
        let p = Point::ball(x)?.convert(Chart::Hyperboloid)?;
        let w = ball_to_hyperboloid_jacobian(x) * DVector::from_column_slice(v);
        TangentVector::new(&p, w.as_slice())
    }

    /// Ball-coordinate components.
    pub fn to_ball(&self) -> Vec<f64> {
        let j = hyperboloid_to_ball_jacobian(self.base.coords());
        (j * &self.components).as_slice().to_vec()
    }
}

/// `c(t) = cosh(sqrt t)`, `s(t) = sinh(sqrt t) / sqrt t`, plus
/// `(c - 1) / t` and `(s - 1) / t`, accurate for small `t`.
fn cs_functions(t: f64) -> (f64, f64, f64, f64) {
    if t < 1e-3 {
        let cm1 = 0.5 + t / 24.0 + t * t / 720.0 + t * t * t / 40320.0 + t.powi(4) / 3628800.0;
        let sm1 = 1.0 / 6.0 + t / 120.0 + t * t / 5040.0 + t * t * t / 362880.0 + t.powi(4) / 39916800.0;
        (1.0 + t * cm1, 1.0 + t * sm1, cm1, sm1)
    } else {
        let r = t.sqrt();
        let c = r.cosh();
        let s = r.sinh() / r;
        (c, s, (c - 1.0) / t, (s - 1.0) / t)
    }
}

pub fn exp_map(x: &Point, xi: &TangentVector) -> Result<Point> {
    let x = x.convert(Chart::Hyperboloid)?;
    let xc = x.coords();
    let base = xi.base.coords();
    let gap = xc.iter().zip(base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > 1e-9 * xc[0] {
        return Err(Error::Invalid("tangent vector based at a different point".into()));
    }
    let v = xi.components.as_slice();
    let t = eta(v, v).max(0.0);
    let (c, s, _, _) = cs_functions(t);
    let y: Vec<f64> = xc.iter().zip(v).map(|(a, b)| c * a + s * b).collect();
    Point::hyperboloid(&y)
}

/// `f(u) = ln(1 + u + sqrt(2u + u^2)) / sqrt(2u + u^2)`.
pub fn log_factor(u: f64) -> f64 {
    if u < 1e-4 {
        // f(u) = 2F1(1, 1; 3/2; -u/2), eight terms
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            let kf = k as f64;
            term *= kf / (kf + 0.5) * (-0.5 * u);
            sum += term;
        }
        sum
    } else {
        let q = (2.0 * u + u * u).sqrt();
        (u + q).ln_1p() / q
    }
}

pub fn log_map(x: &Point, y: &Point) -> Result<TangentVector> {
    let x = x.convert(Chart::Hyperboloid)?;
    let y = y.convert(Chart::Hyperboloid)?;
    let (xc, yc) = (x.coords(), y.coords());
    let u_vec: Vec<f64> = yc.iter().zip(xc).map(|(a, b)| a - b).collect();
    let u = (0.5 * eta(&u_vec, &u_vec)).max(0.0);
    let f = log_factor(u);
    let xi: Vec<f64> = u_vec.iter().zip(xc).map(|(uu, xx)| f * (uu - u * xx)).collect();
    TangentVector::new(&x, &xi)
}

/// Hyperbolic distance, stable for nearby points.
pub fn distance(x: &Point, y: &Point) -> Result<f64> {
    let x = x.convert(Chart::Hyperboloid)?;
    let y = y.convert(Chart::Hyperboloid)?;
    let d: Vec<f64> = y.coords().iter().zip(x.coords()).map(|(a, b)| a - b).collect();
    let q = eta(&d, &d).max(0.0);
    Ok(2.0 * (0.5 * q.sqrt()).asinh())
}

/// `exp_x(v)` for a ball point and a ball-coordinate vector.
pub fn exp_ball(x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let xi = TangentVector::from_ball(x, v)?;
    let y = exp_map(&xi.base.clone(), &xi)?;
    Ok(hyperboloid_to_ball(y.coords()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorentzKind {
    /// Rotation in the plane of spatial axes `a`, `b` (1-based):
    /// `(BX)^a = cos X^a + sin X^b`, `(BX)^b = -sin X^a + cos X^b`.
    Rotation { a: usize, b: usize, angle: f64 },
    /// Boost along spatial axis `axis` (1-based).
    Boost { axis: usize, rapidity: f64 },
}

/// Element `B` of `O_+(n, 1)`. The lapse action is `A = B`, acting on
/// coefficient vectors by transposition: `V o B = sum (B^T a)_mu X^mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzMap {
    pub matrix: DMatrix<f64>,
    pub lapse_action: DMatrix<f64>,
}

fn eta_matrix(m: usize) -> DMatrix<f64> {
    let mut e = DMatrix::identity(m, m);
    e[(0, 0)] = -1.0;
    e
}

pub fn lorentz(n: usize, kind: LorentzKind) -> Result<LorentzMap> {
    Dimension::new(n)?;
    let mut b = DMatrix::identity(n + 1, n + 1);
    match kind {
        LorentzKind::Rotation { a, b: c, angle } => {
            if a == 0 || c == 0 || a > n || c > n || a == c || !angle.is_finite() {
                return Err(Error::Invalid(format!("rotation axes ({a}, {c}) in dimension {n}")));
            }
            let (s, co) = angle.sin_cos();
            b[(a, a)] = co;
            b[(a, c)] = s;
            b[(c, a)] = -s;
            b[(c, c)] = co;
        }
        LorentzKind::Boost { axis, rapidity } => {
            if axis == 0 || axis > n || !rapidity.is_finite() {
                return Err(Error::Invalid(format!("boost axis {axis} / rapidity {rapidity}")));
            }
            let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
            b[(0, 0)] = ch;
            b[(0, axis)] = sh;
            b[(axis, 0)] = sh;
            b[(axis, axis)] = ch;
        }
    }
    LorentzMap::from_matrix(b)
}

impl LorentzMap {
    pub fn identity(n: usize) -> Self {
        let m = DMatrix::identity(n + 1, n + 1);
        LorentzMap { lapse_action: m.clone(), matrix: m }
    }

    /// Validates `B^T eta B = eta` and `B^0_0 > 0`.
    pub fn from_matrix(b: DMatrix<f64>) -> Result<Self> {
        let m = b.nrows();
        if m != b.ncols() || m < 4 {
            return Err(Error::Invalid("Lorentz matrix must be square of size >= 4".into()));
        }
        let e = eta_matrix(m);
        let defect = (b.transpose() * &e * &b - &e).abs().max();
        let scale = b.abs().max().powi(2);
        if defect > 1e-12 * scale.max(1.0) {
            return Err(Error::Invalid(format!("matrix not in O(n,1): defect {defect}")));
        }
        if b[(0, 0)] <= 0.0 {
            return Err(Error::Invalid("non-orthochronous Lorentz map".into()));
        }
        Ok(LorentzMap { lapse_action: b.clone(), matrix: b })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    /// `self o other`.
    pub fn compose(&self, other: &LorentzMap) -> LorentzMap {
        let m = &self.matrix * &other.matrix;
        LorentzMap { lapse_action: m.clone(), matrix: m }
    }

    pub fn inverse(&self) -> LorentzMap {
        let e = eta_matrix(self.matrix.nrows());
        let m = &e * self.matrix.transpose() * &e;
        LorentzMap { lapse_action: m.clone(), matrix: m }
    }

    /// Coefficients of `V o B`. This is a right action:
    /// `act(B1 B2) = act(B2) o act(B1)`.
    pub fn act_lapse(&self, v: &LapseFunction) -> LapseFunction {
        let a = DVector::from_column_slice(&v.coeffs);
        LapseFunction { coeffs: (self.lapse_action.transpose() * a).as_slice().to_vec() }
    }

    pub fn apply_hyperboloid(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn apply(&self, p: &Point) -> Result<Point> {
        let h = p.convert(Chart::Hyperboloid)?;
        Point::hyperboloid(&self.apply_hyperboloid(h.coords()))?.convert(p.chart())
    }

    pub fn apply_ball(&self, x: &[f64]) -> Vec<f64> {
        hyperboloid_to_ball(&self.apply_hyperboloid(&ball_to_hyperboloid(x)))
    }

    /// Jacobian of the induced ball map at `x`.
    pub fn ball_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let big = self.apply_hyperboloid(&ball_to_hyperboloid(x));
        hyperboloid_to_ball_jacobian(&big) * &self.matrix * ball_to_hyperboloid_jacobian(x)
    }
}

/// Iwasawa frame `(I^1, ..., I^n)` at a hyperboloid point:
/// `I^1 = (d_0 + d_1) / (X^0 - X^1) - X`,
/// `I^A = X^A / (X^0 - X^1) (d_0 + d_1) + d_A`.
pub fn invariant_frame(p: &Point) -> Result<Vec<TangentVector>> {
    let h = p.convert(Chart::Hyperboloid)?;
    let x = h.coords();
    let m = x.len();
    let d = x[0] - x[1];
    let mut frame = Vec::with_capacity(m - 1);
    let mut first: Vec<f64> = x.iter().map(|c| -c).collect();
    first[0] += 1.0 / d;
    first[1] += 1.0 / d;
    frame.push(TangentVector::new(&h, &first)?);
    for a in 2..m {
        let mut v = vec![0.0; m];
        v[0] = x[a] / d;
        v[1] = x[a] / d;
        v[a] = 1.0;
        frame.push(TangentVector::new(&h, &v)?);
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PullbackMetric {
    /// Ball-coordinate components of `Phi^* b`.
    pub metric: DMatrix<f64>,
    /// Ball-coordinate components of `Phi^* b - b`, computed without
    /// cancellation against `b`.
    pub deviation: DMatrix<f64>,
    /// `|zeta|_b` exceeded the configured guard.
    pub guard_exceeded: bool,
}

/// Default guard on `|zeta|_b` for pullbacks.
pub const PULLBACK_GUARD: f64 = 10.0;

/// Pull-back of `b` by `Phi(x) = exp_x(zeta(x))`, with `zeta` given by
/// ball-coordinate components:
///
/// `c^2 b + s^2 (b(D.zeta, D.zeta) - zeta' (x) zeta') + c s L_zeta b
///  + (1 - s^2) / (4 |zeta|^2) d|zeta|^2 (x) d|zeta|^2
///  + (1 - c s) / (2 |zeta|^2) (zeta' (x) d|zeta|^2 + d|zeta|^2 (x) zeta')`.
pub fn pullback_metric<F>(zeta: &F, p: &Point, step: FdStep, guard: f64) -> Result<PullbackMetric>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let x = p.convert(Chart::Ball)?.ball_coords();
    let n = x.len();
    let rho = 0.5 * (1.0 - norm2(&x));
    let z = zeta(&x);
    let jac = fd::jacobian(zeta, &x, step.ball(&x));
    let gamma = ball_christoffel(&x);
    // dz[i][k] = (D_i zeta)^k
    let mut dz = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let mut v = jac[(k, i)];
            for l in 0..n {
                v += gamma[(k * n + i) * n + l] * z[l];
            }
            dz[(i, k)] = v;
        }
    }
    let inv_r2 = 1.0 / (rho * rho);
    let t = norm2(&z) * inv_r2;
    let (c, s, cm1, sm1) = cs_functions(t);
    let zf = DVector::from_fn(n, |i, _| z[i] * inv_r2);
    let zv = DVector::from_column_slice(&z);
    let dnorm = (&dz * &zv) * (2.0 * inv_r2);
    let bdd = (&dz * dz.transpose()) * inv_r2;
    let lie = (&dz + dz.transpose()) * inv_r2;
    // 1 - s^2 = -(s - 1)(s + 1), 1 - cs = -((c - 1) s + (s - 1))
    let a1 = -sm1 * (s + 1.0) / 4.0;
    let a2 = -(cm1 * s + sm1) / 2.0;
    let b = DMatrix::identity(n, n) * inv_r2;
    let dev = &b * (s * s * t)
        + (bdd - &zf * zf.transpose()) * (s * s)
        + lie * (c * s)
        + &dnorm * dnorm.transpose() * a1
        + (&zf * dnorm.transpose() + &dnorm * zf.transpose()) * a2;
    let dev = 0.5 * (&dev + dev.transpose());
    Ok(PullbackMetric {
        metric: &b + &dev,
        deviation: dev,
        guard_exceeded: t.sqrt() > guard,
    })
}
