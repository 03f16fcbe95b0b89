//! Solutions of `Laplacian V = n V` with prescribed boundary behaviour,
//! through the Poisson kernel of the half-space model, and the gamma-type
//! integrals that govern the kernel.
//!
//! In half-space variables, with `z = ybar + y^1 w` and `q = 1 + |w|^2`,
//! `V(y) = (y^1)^-1 \int v(z) q^-n dw`, where `v` is the boundary density
//! attached to the boundary data `v0` on the unit sphere.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::fd;
use crate::geometry::{Chart, Point};
use crate::quad::{self, CompensatedSum};
use crate::{Error, Result};

/// `I_{n,beta} = \int_{R^{n-1}} (1 + |w|^2)^-beta dw`.
pub fn integral_i(n: usize, beta: f64) -> Result<f64> {
    let nf = n as f64;
    if n < 2 || !(beta > 0.5 * nf) {
        return Err(Error::Divergence(format!("I_(n={n}, beta={beta}) requires beta > n/2")));
    }
    let h = 0.5 * (nf - 1.0);
    Ok((h * std::f64::consts::PI.ln() + ln_gamma(beta - h) - ln_gamma(beta)).exp())
}

/// `J_{n,alpha,beta} = \int_{R^{n-1}} |w^1|^alpha (1 + |w|^2)^-beta dw`.
pub fn integral_j(n: usize, alpha: f64, beta: f64) -> Result<f64> {
    let nf = n as f64;
    if n < 2 || !(beta > 0.5 * (nf - 2.0)) || !(alpha > -1.0) || !(alpha < 2.0 * beta - nf + 1.0) {
        return Err(Error::Divergence(format!("J_(n={n}, alpha={alpha}, beta={beta}) diverges")));
    }
    let ln = 0.5 * (nf - 2.0) * std::f64::consts::PI.ln() + ln_gamma(0.5 * (alpha + 1.0))
        + ln_gamma(beta - 0.5 * (nf + alpha - 1.0))
        - ln_gamma(beta);
    Ok(ln.exp())
}

/// `pi^((n-1)/2) Gamma((n-1)/2) / Gamma(n)`.
fn gamma_ratio(n: usize) -> f64 {
    let h = 0.5 * (n as f64 - 1.0);
    (h * std::f64::consts::PI.ln() + ln_gamma(h) - ln_gamma(n as f64)).exp()
}

/// Leading coefficient of the tangential Hessian deficit: `pi/4` at `n = 3`.
pub fn asymptotic_prefactor(n: usize) -> f64 {
    0.5 * gamma_ratio(n)
}

/// Real orthonormal spherical harmonic `Y_lm` on the unit sphere of `R^3`,
/// with polar axis `x^3` and no Condon-Shortley phase. Negative `m` selects
/// the sine family.
pub fn real_harmonic(l: usize, m: i64, x: &[f64]) -> f64 {
    let am = m.unsigned_abs() as usize;
    assert!(am <= l);
    let z = x[2];
    // Q_l^m(z) = P_l^m(z) / (1 - z^2)^(m/2), a polynomial
    let mut qmm = 1.0;
    for k in 1..=am {
        qmm *= (2 * k - 1) as f64;
    }
    let q = if l == am {
        qmm
    } else {
        let mut prev = qmm;
        let mut cur = z * (2 * am + 1) as f64 * qmm;
        for ll in am + 2..=l {
            let next = ((2 * ll - 1) as f64 * z * cur - (ll + am - 1) as f64 * prev) / (ll - am) as f64;
            prev = cur;
            cur = next;
        }
        cur
    };
    // (x + i y)^m
    let (mut re, mut im) = (1.0, 0.0);
    for _ in 0..am {
        let r = re * x[0] - im * x[1];
        im = re * x[1] + im * x[0];
        re = r;
    }
    let mut ratio = 1.0;
    for k in (l - am + 1)..=(l + am) {
        ratio /= k as f64;
    }
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt();
    match m.signum() {
        0 => norm * q,
        1 => std::f64::consts::SQRT_2 * norm * q * re,
        _ => std::f64::consts::SQRT_2 * norm * q * im,
    }
}

pub type SphereCallback = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Boundary data `v0` on the unit sphere.
#[derive(Clone)]
pub enum BoundaryFunction {
    Constant(f64),
    /// `c + a . theta`, the boundary data of lapse functions.
    Affine { c: f64, a: Vec<f64> },
    /// Coefficients of `Y_lm` (n = 3 only), index `l^2 + l + m`.
    Harmonics { l_max: usize, coeffs: Vec<f64> },
    /// Arbitrary continuous data; `smooth` declares twice differentiability.
    Callback { f: SphereCallback, smooth: bool },
}

impl std::fmt::Debug for BoundaryFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryFunction::Constant(c) => write!(f, "Constant({c})"),
            BoundaryFunction::Affine { c, a } => write!(f, "Affine({c}, {a:?})"),
            BoundaryFunction::Harmonics { l_max, coeffs } => write!(f, "Harmonics({l_max}, {coeffs:?})"),
            BoundaryFunction::Callback { smooth, .. } => write!(f, "Callback(smooth = {smooth})"),
        }
    }
}

impl BoundaryFunction {
    pub fn harmonic(l: usize, m: i64) -> Self {
        let mut coeffs = vec![0.0; (l + 1) * (l + 1)];
        let idx = (l * l + l) as i64 + m;
        coeffs[idx as usize] = 1.0;
        BoundaryFunction::Harmonics { l_max: l, coeffs }
    }

    pub fn callback<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F, smooth: bool) -> Self {
        BoundaryFunction::Callback { f: Arc::new(f), smooth }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            BoundaryFunction::Constant(c) => *c,
            BoundaryFunction::Affine { c, a } => c + a.iter().zip(theta).map(|(x, y)| x * y).sum::<f64>(),
            BoundaryFunction::Harmonics { l_max, coeffs } => {
                let mut s = 0.0;
                for l in 0..=*l_max {
                    for m in -(l as i64)..=(l as i64) {
                        let c = coeffs[((l * l + l) as i64 + m) as usize];
                        if c != 0.0 {
                            s += c * real_harmonic(l, m, theta);
                        }
                    }
                }
                s
            }
            BoundaryFunction::Callback { f, .. } => f(theta),
        }
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, BoundaryFunction::Callback { smooth: false, .. })
    }

    /// Checks compatibility with the sphere of `R^n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            BoundaryFunction::Affine { a, .. } if a.len() != n => {
                Err(Error::Invalid(format!("affine data has {} components, expected {n}", a.len())))
            }
            BoundaryFunction::Harmonics { l_max, coeffs } => {
                if n != 3 {
                    Err(Error::Unsupported("spherical harmonics need n = 3".into()))
                } else if coeffs.len() != (l_max + 1) * (l_max + 1) {
                    Err(Error::Invalid("harmonic coefficient count must be (l_max + 1)^2".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Whether the data lies in span{1, x^i}.
    pub fn is_lapse_data(&self) -> bool {
        match self {
            BoundaryFunction::Constant(_) | BoundaryFunction::Affine { .. } => true,
            BoundaryFunction::Harmonics { l_max, coeffs } => {
                coeffs.iter().enumerate().all(|(k, c)| k < 4 || *c == 0.0) || *l_max <= 1
            }
            BoundaryFunction::Callback { .. } => false,
        }
    }
}

/// Stereographic image of a boundary point of the half-space on the sphere.
pub fn stereographic(z: &[f64]) -> Vec<f64> {
    let z2: f64 = z.iter().map(|c| c * c).sum();
    let d = 1.0 + z2;
    let mut out = vec![(1.0 - z2) / d];
    out.extend(z.iter().map(|c| 2.0 * c / d));
    out
}

/// `v(ybar) = (1 + |ybar|^2) / (2 I_{n,n}) v0(stereographic(ybar))`.
pub fn boundary_density(v0: &BoundaryFunction, ybar: &[f64]) -> Result<f64> {
    let n = ybar.len() + 1;
    let i_nn = integral_i(n, n as f64)?;
    Ok(density(&|t: &[f64]| v0.eval(t), ybar, i_nn))
}

fn density(v0: &dyn Fn(&[f64]) -> f64, z: &[f64], i_nn: f64) -> f64 {
    let z2: f64 = z.iter().map(|c| c * c).sum();
    (1.0 + z2) / (2.0 * i_nn) * v0(&stereographic(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KernelQuadratureSpec {
    /// Gauss nodes in `u`, with `|w| = tan u`.
    pub radial_order: usize,
    /// Order of the product rule on the sphere of `R^{n-1}`.
    pub angular_order: usize,
}

impl Default for KernelQuadratureSpec {
    fn default() -> Self {
        KernelQuadratureSpec { radial_order: 48, angular_order: 16 }
    }
}

impl KernelQuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.radial_order < 8 || self.angular_order < 8 {
            return Err(Error::Invalid("kernel quadrature orders must be at least 8".into()));
        }
        if self.radial_order > 512 || self.angular_order > 256 {
            return Err(Error::Invalid("kernel quadrature orders above cap (512 / 256)".into()));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        KernelQuadratureSpec { radial_order: 2 * self.radial_order, angular_order: 2 * self.angular_order }
    }
}

#[derive(Debug)]
struct KernelNodes {
    /// node positions `w` in `R^{n-1}`
    w: Vec<Vec<f64>>,
    /// `dw` weight times `q^-n`
    weight: Vec<f64>,
    /// `1 / q = cos^2 u`
    c2: Vec<f64>,
}

impl KernelNodes {
    fn new(n: usize, spec: KernelQuadratureSpec) -> Self {
        let (u, wu) = quad::gauss_legendre_interval(spec.radial_order, 0.0, std::f64::consts::FRAC_PI_2);
        let (omega, wo) = quad::product_sphere(n - 1, spec.angular_order);
        let mut w = Vec::with_capacity(u.len() * omega.len());
        let mut weight = Vec::with_capacity(w.capacity());
        let mut c2 = Vec::with_capacity(w.capacity());
        for (ui, wui) in u.iter().zip(&wu) {
            let (s, c) = ui.sin_cos();
            let t = s / c;
            let radial = wui * s.powi(n as i32 - 2) * c.powi(n as i32);
            for (om, wom) in omega.iter().zip(&wo) {
                w.push(om.iter().map(|x| t * x).collect());
                weight.push(radial * wom);
                c2.push(c * c);
            }
        }
        KernelNodes { w, weight, c2 }
    }
}

/// Half-space quantities at `y = (a, ybar)`, in coordinate components.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub deficit: Option<DMatrix<f64>>,
}

/// Value, orthonormal-frame gradient and Hessian deficit at a ball point.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub deficit: Option<DMatrix<f64>>,
}

/// A solution of `Laplacian V = n V` with boundary data `v0`.
#[derive(Clone)]
pub struct Eigenfunction {
    pub n: usize,
    pub v0: BoundaryFunction,
    pub quadrature: KernelQuadratureSpec,
    nodes: Arc<KernelNodes>,
    i_nn: f64,
}

impl std::fmt::Debug for Eigenfunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Eigenfunction")
            .field("n", &self.n)
            .field("v0", &self.v0)
            .field("quadrature", &self.quadrature)
            .finish()
    }
}

impl Eigenfunction {
    pub fn new(n: usize, v0: BoundaryFunction, quadrature: KernelQuadratureSpec) -> Result<Self> {
        crate::geometry::Dimension::new(n)?;
        quadrature.validate()?;
        v0.check_dim(n)?;
        Ok(Eigenfunction {
            n,
            v0,
            quadrature,
            nodes: Arc::new(KernelNodes::new(n, quadrature)),
            i_nn: integral_i(n, n as f64)?,
        })
    }

    /// Sum of the kernel weights, which approximates `I_{n,n}`.
    pub fn kernel_mass(&self) -> f64 {
        quad::compensated_sum(self.nodes.weight.iter().copied())
    }

    /// Kernel integrals at `y = (a, ybar)` for data `v0`.
    /// `rot` rotates the boundary data: `v0(rot . theta)` replaces `v0(theta)`.
    fn half_jet(&self, rot: Option<&DMatrix<f64>>, ybar: &[f64], a: f64, deficit: bool) -> HalfSpaceJet {
        let n = self.n;
        let nf = n as f64;
        let m = n - 1;
        let nodes = &self.nodes;
        let mut val = CompensatedSum::default();
        let mut g1 = CompensatedSum::default();
        let mut ga = vec![CompensatedSum::default(); m];
        let mut t11 = CompensatedSum::default();
        let mut t1a = vec![CompensatedSum::default(); m];
        let mut tab = vec![CompensatedSum::default(); m * m];
        let mut z = vec![0.0; m];
        let mut st = vec![0.0; n];
        let mut rt = vec![0.0; n];
        for k in 0..nodes.weight.len() {
            let w = &nodes.w[k];
            let mut z2 = 0.0;
            for i in 0..m {
                z[i] = ybar[i] + a * w[i];
                z2 += z[i] * z[i];
            }
            let d = 1.0 + z2;
            st[0] = (1.0 - z2) / d;
            for i in 0..m {
                st[i + 1] = 2.0 * z[i] / d;
            }
            let data = match rot {
                Some(h) => {
                    for i in 0..n {
                        rt[i] = (0..n).map(|j| h[(i, j)] * st[j]).sum();
                    }
                    self.v0.eval(&rt)
                }
                None => self.v0.eval(&st),
            };
            let vw = nodes.weight[k] * d / (2.0 * self.i_nn) * data;
            let c2 = nodes.c2[k];
            val.add(vw);
            g1.add(vw * nf * (1.0 - 2.0 * c2));
            for i in 0..m {
                ga[i].add(vw * 2.0 * nf * c2 * w[i]);
            }
            if deficit {
                let q2 = c2 * c2;
                t11.add(vw * ((nf * nf - 1.0) - 4.0 * nf * (nf + 1.0) * (c2 - q2)));
                for i in 0..m {
                    t1a[i].add(vw * (-2.0 * nf * (nf + 1.0)) * (2.0 * q2 - c2) * w[i]);
                    for j in i..m {
                        let mut v = 4.0 * nf * q2 * w[i] * w[j];
                        if i == j {
                            v -= 1.0;
                        }
                        tab[i * m + j].add(vw * (nf + 1.0) * v);
                    }
                }
            }
        }
        let mut gradient = DVector::zeros(n);
        gradient[0] = g1.value() / (a * a);
        for i in 0..m {
            gradient[i + 1] = ga[i].value() / (a * a);
        }
        let deficit = deficit.then(|| {
            let a3 = a * a * a;
            let mut t = DMatrix::zeros(n, n);
            t[(0, 0)] = t11.value() / a3;
            for i in 0..m {
                t[(0, i + 1)] = t1a[i].value() / a3;
                t[(i + 1, 0)] = t[(0, i + 1)];
                for j in i..m {
                    t[(i + 1, j + 1)] = tab[i * m + j].value() / a3;
                    t[(j + 1, i + 1)] = t[(i + 1, j + 1)];
                }
            }
            t
        });
        HalfSpaceJet { value: val.value() / a, gradient, deficit }
    }

    /// Value and half-space partials at a half-space point.
    pub fn half_space_jet(&self, y: &[f64], deficit: bool) -> Result<HalfSpaceJet> {
        if y.len() != self.n || !(y[0] > 0.0) {
            return Err(Error::Domain("half-space point expected".into()));
        }
        Ok(self.half_jet(None, &y[1..], y[0], deficit))
    }

    /// Evaluation at a ball point. The point is first rotated onto the
    /// positive `x^1` axis, which the half-space map sends to `ybar = 0`.
    pub fn jet_ball(&self, x: &[f64], deficit: bool) -> EigenJet {
        let n = self.n;
        let s = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        // Householder reflection h with h theta = e_1
        let mut u = DVector::zeros(n);
        if s > 0.0 {
            for i in 0..n {
                u[i] = x[i] / s;
            }
            u[0] -= 1.0;
        }
        let un = u.norm_squared();
        let h = if un > 1e-30 {
            DMatrix::identity(n, n) - (2.0 / un) * &u * u.transpose()
        } else {
            DMatrix::identity(n, n)
        };
        let a = (1.0 - s) / (1.0 + s);
        let jet = self.half_jet(Some(&h), &vec![0.0; n - 1], a, deficit);
        let mut g = jet.gradient * a;
        g[0] = -g[0];
        let gradient = &h * g;
        let deficit = jet.deficit.map(|t| {
            let mut d = t * (a * a);
            for i in 1..n {
                d[(0, i)] = -d[(0, i)];
                d[(i, 0)] = -d[(i, 0)];
            }
            &h * d * &h
        });
        EigenJet { value: jet.value, gradient, deficit }
    }

    /// `V(p)`.
    pub fn solve(&self, p: &Point) -> Result<f64> {
        if p.dim() != self.n {
            return Err(Error::Invalid("point dimension".into()));
        }
        match p.chart() {
            Chart::HalfSpace => Ok(self.half_space_jet(p.coords(), false)?.value),
            _ => Ok(self.jet_ball(&p.ball_coords(), false).value),
        }
    }

    /// `V(p)` with a self-convergence check against doubled orders.
    pub fn solve_checked(&self, p: &Point, rel_tol: f64) -> Result<f64> {
        let v = self.solve(p)?;
        let fine = Eigenfunction::new(self.n, self.v0.clone(), self.quadrature.doubled())?.solve(p)?;
        let gap = (v - fine).abs();
        if gap > rel_tol * fine.abs().max(1.0) {
            return Err(Error::Convergence(format!(
                "kernel quadrature changed by {gap:e} under doubling ({} -> {})",
                v, fine
            )));
        }
        Ok(fine)
    }
}

/// `Hess V - V b` in half-space coordinate components.
pub fn hessian_deficit_kernel(v: &Eigenfunction, p: &Point) -> Result<DMatrix<f64>> {
    if p.chart() != Chart::HalfSpace {
        return Err(Error::Invalid("hessian_deficit_kernel expects a half-space point".into()));
    }
    Ok(v.half_space_jet(p.coords(), true)?.deficit.expect("requested"))
}

/// Leading coefficient of `y^1 (Hess V - V b)` as `y^1 -> 0` over the
/// boundary point `ybar`. Only the tangential block is non-zero:
/// `c_n ((n-1) d_ij v - delta_ij Laplacian v)` with `c_n` from
/// [`asymptotic_prefactor`].
pub fn asymptotic_deficit(v0: &BoundaryFunction, ybar: &[f64]) -> Result<DMatrix<f64>> {
    let n = ybar.len() + 1;
    crate::geometry::Dimension::new(n)?;
    v0.check_dim(n)?;
    if !v0.is_smooth() {
        return Err(Error::Unsupported("asymptotic deficit needs twice differentiable data".into()));
    }
    let i_nn = integral_i(n, n as f64)?;
    let f = |z: &[f64]| density(&|t: &[f64]| v0.eval(t), z, i_nn);
    let scale = 1.0 + ybar.iter().map(|c| c * c).sum::<f64>();
    let h = fd::hessian(&f, ybar, 1e-2 * scale.sqrt());
    let lap = h.trace();
    let c = asymptotic_prefactor(n);
    let nf = n as f64;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let mut v = (nf - 1.0) * h[(i, j)];
            if i == j {
                v -= lap;
            }
            out[(i + 1, j + 1)] = c * v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_i_examples() {
        assert!((integral_i(3, 3.0).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
        for n in 3..6 {
            let nf = n as f64;
            let base = integral_i(n, nf).unwrap();
            assert!((integral_i(n, nf + 1.0).unwrap() / base - (nf + 1.0) / (2.0 * nf)).abs() < 1e-14);
            assert!((integral_i(n, nf + 2.0).unwrap() / base - (nf + 3.0) / (4.0 * nf)).abs() < 1e-14);
        }
        assert!(matches!(integral_i(3, 1.5), Err(Error::Divergence(_))));
    }

    #[test]
    fn j_equal_at_three() {
        let n = 3;
        let je = 12.0 * integral_j(n, 4.0, 5.0).unwrap() - integral_j(n, 2.0, 3.0).unwrap();
        assert!((je - std::f64::consts::PI / 8.0).abs() < 1e-14);
        assert!(integral_j(3, -1.0, 3.0).is_err());
        assert!(integral_j(3, 5.0, 3.0).is_err());
    }

    #[test]
    fn j_reduces_to_i() {
        for n in 3..6 {
            let nf = n as f64;
            assert!((integral_j(n, 0.0, nf).unwrap() - integral_i(n, nf).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn density_examples() {
        let one = BoundaryFunction::Constant(1.0);
        assert!((boundary_density(&one, &[0.0, 0.0]).unwrap() - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(stereographic(&[0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        let x1 = BoundaryFunction::Affine { c: 0.0, a: vec![1.0, 0.0, 0.0] };
        assert!((boundary_density(&x1, &[0.0, 0.0]).unwrap() - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn prefactor_at_three() {
        assert!((asymptotic_prefactor(3) - std::f64::consts::FRAC_PI_4).abs() < 1e-13);
    }

    #[test]
    fn lapse_data_has_no_asymptotic_deficit() {
        let v = BoundaryFunction::Affine { c: 0.5, a: vec![0.3, -0.2, 0.7] };
        let d = asymptotic_deficit(&v, &[0.4, -0.3]).unwrap();
        assert!(d.abs().max() < 1e-7, "{d}");
    }

    #[test]
    fn harmonics_are_orthonormal() {
        let (nodes, w) = quad::product_sphere(3, 8);
        let idx: Vec<(usize, i64)> = (0..=2).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m))).collect();
        for &(l1, m1) in &idx {
            for &(l2, m2) in &idx {
                let s: f64 = nodes
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| w * real_harmonic(l1, m1, x) * real_harmonic(l2, m2, x))
                    .sum();
                let expect = if (l1, m1) == (l2, m2) { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-13, "({l1},{m1}) ({l2},{m2}) {s}");
            }
        }
    }

    #[test]
    fn non_smooth_data_is_unsupported() {
        let v = BoundaryFunction::callback(|t| t[0].abs(), false);
        assert!(matches!(asymptotic_deficit(&v, &[0.0, 0.0]), Err(Error::Unsupported(_))));
    }
}
