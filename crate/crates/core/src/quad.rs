//! Gauss rules on intervals and spheres, and compensated summation.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

/// Gauss rule for the weight `(1 - t^2)^a` on `[-1, 1]`.
///
/// Nodes come from the Golub-Welsch eigenproblem; weights are recomputed
/// from the orthonormal recurrence, which keeps them accurate at high order.
pub fn gauss_jacobi_symmetric(order: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1 && a > -1.0);
    if a == 0.0 {
        return gauss_legendre(order);
    }
    let beta: Vec<f64> = (1..order)
        .map(|k| {
            let k = k as f64;
            (k * (k + 2.0 * a) / ((2.0 * k + 2.0 * a + 1.0) * (2.0 * k + 2.0 * a - 1.0))).sqrt()
        })
        .collect();
    let mut jac = DMatrix::<f64>::zeros(order, order);
    for (k, b) in beta.iter().enumerate() {
        jac[(k, k + 1)] = *b;
        jac[(k + 1, k)] = *b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
    nodes.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let ln_mu0 = 0.5 * std::f64::consts::PI.ln() + ln_gamma(a + 1.0) - ln_gamma(a + 1.5);
    let p0 = (-0.5 * ln_mu0).exp();
    let weights = nodes
        .iter()
        .map(|&t| {
            let (mut prev, mut cur) = (0.0, p0);
            let mut acc = cur * cur;
            for k in 0..order - 1 {
                let b_prev = if k == 0 { 0.0 } else { beta[k - 1] };
                let next = (t * cur - b_prev * prev) / beta[k];
                prev = cur;
                cur = next;
                acc += cur * cur;
            }
            1.0 / acc
        })
        .collect();
    (nodes, weights)
}

/// Gauss-Legendre rule by Newton iteration on the three-term recurrence.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // P_n(t) and P_n'(t)
    let legendre = |t: f64| {
        let (mut p0, mut p1) = (1.0, t);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let p = if n == 1 { t } else { p1 };
        let prev = if n == 1 { 1.0 } else { p0 };
        (p, nf * (t * p - prev) / (t * t - 1.0))
    };
    for i in 0..(n + 1) / 2 {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() <= 1e-16 * t.abs().max(1.0) {
                break;
            }
        }
        let (_, dp) = legendre(t);
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes[n - 1 - i] = t;
        nodes[i] = -t;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[lo, hi]`.
pub fn gauss_legendre_interval(order: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_legendre(order);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    (
        t.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|w| half * w).collect(),
    )
}

/// Product rule on the unit sphere of `R^n` (n >= 2).
///
/// The last coordinate carries a Gauss-Jacobi rule, the remaining ones a
/// recursive rule on the lower sphere; the circle uses `2 * order` equally
/// spaced points. Exact for polynomials of degree `2 * order - 1`.
pub fn product_sphere(n: usize, order: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    assert!(n >= 2 && order >= 1);
    if n == 2 {
        let m = 2 * order;
        let w = 2.0 * std::f64::consts::PI / m as f64;
        let nodes = (0..m)
            .map(|j| {
                let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect();
        return (nodes, vec![w; m]);
    }
    let (t, wt) = gauss_jacobi_symmetric(order, 0.5 * (n as f64 - 3.0));
    let (lower, wl) = product_sphere(n - 1, order);
    let mut nodes = Vec::with_capacity(t.len() * lower.len());
    let mut weights = Vec::with_capacity(t.len() * lower.len());
    for (ti, wi) in t.iter().zip(&wt) {
        let s = (1.0 - ti * ti).max(0.0).sqrt();
        for (y, wy) in lower.iter().zip(&wl) {
            let mut p: Vec<f64> = y.iter().map(|c| s * c).collect();
            p.push(*ti);
            nodes.push(p);
            weights.push(wi * wy);
        }
    }
    (nodes, weights)
}

/// Area of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> f64 {
    let h = 0.5 * n as f64;
    2.0 * std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Neumaier compensated accumulator; summation order is the caller's.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (t, w) = gauss_legendre(10);
        let s: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_weight_total() {
        // \int (1 - t^2)^{1/2} dt = pi / 2
        let (_, w) = gauss_jacobi_symmetric(12, 0.5);
        let s: f64 = w.iter().sum();
        assert!((s - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn sphere_areas() {
        for n in 2..6 {
            let (_, w) = product_sphere(n, 5);
            let s: f64 = w.iter().sum();
            assert!((s - sphere_area(n)).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn compensated_beats_naive() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
