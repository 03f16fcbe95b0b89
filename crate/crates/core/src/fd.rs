//! Central finite differences with one Richardson step.
//!
//! Steps are scaled by the local conformal factor: in ball coordinates the
//! step at `x` is `rel * (1 - |x|^2)`, so the stencil has a fixed hyperbolic
//! size and stays inside the ball near infinity.

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdStep {
    pub rel: f64,
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep { rel: 4e-3 }
    }
}

impl FdStep {
    pub fn new(rel: f64) -> Self {
        FdStep { rel }
    }

    /// Step for ball coordinates at `x`.
    pub fn ball(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        self.rel * (1.0 - r2)
    }

    /// Step for unconstrained coordinates, scaled by `max(1, |x|)`.
    pub fn flat(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        self.rel * r.max(1.0)
    }
}

/// Richardson-extrapolated central difference of `f` along coordinate `k`.
pub fn partial<F>(f: &F, x: &[f64], k: usize, h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let mut y = x.to_vec();
    let mut eval = |dx: f64| {
        y[k] = x[k] + dx;
        f(&y)
    };
    let p1 = eval(h);
    let m1 = eval(-h);
    let p2 = eval(0.5 * h);
    let m2 = eval(-0.5 * h);
    p1.iter()
        .zip(&m1)
        .zip(p2.iter().zip(&m2))
        .map(|((a, b), (c, d))| {
            let coarse = (a - b) / (2.0 * h);
            let fine = (c - d) / h;
            (4.0 * fine - coarse) / 3.0
        })
        .collect()
}

/// All coordinate partials; row `k` holds `d f / d x^k`.
pub fn gradient<F>(f: &F, x: &[f64], h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    (0..x.len()).map(|k| partial(f, x, k, h)).collect()
}

/// Jacobian `J[(i, k)] = d f^i / d x^k`.
pub fn jacobian<F>(f: &F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let cols = gradient(f, x, h);
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, x.len(), |i, k| cols[k][i])
}

/// Hessian of a scalar function via nested Richardson differences.
pub fn hessian<F>(f: &F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let grad = |y: &[f64]| -> Vec<f64> {
        let g = |z: &[f64]| vec![f(z)];
        gradient(&g, y, h).into_iter().map(|c| c[0]).collect()
    };
    let j = jacobian(&grad, x, h);
    0.5 * (&j + j.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_of_exponential() {
        let f = |x: &[f64]| vec![x[0].exp() * x[1].sin()];
        let d = partial(&f, &[0.3, 0.7], 0, 1e-2);
        let exact = 0.3f64.exp() * 0.7f64.sin();
        assert!((d[0] - exact).abs() < 1e-9);
    }

    #[test]
    fn hessian_of_quadratic_form() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1];
        let h = hessian(&f, &[0.2, -0.4], 1e-2);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-8);
        assert!((h[(1, 1)] + 2.0).abs() < 1e-8);
    }
}
