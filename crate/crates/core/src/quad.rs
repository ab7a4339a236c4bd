//! Quadrature rules: Gauss-Legendre, adaptive Gauss-Kronrod and the
//! periodic trapezoid rule.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A Gauss-Legendre rule mapped to an interval.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    /// Nodes and weights on `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive 7-15 Gauss-Kronrod quadrature by recursive bisection.
///
/// Returns `(integral, error_estimate)`.
pub fn adaptive_gk<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> (f64, f64) {
    let (whole, err) = gk15(&mut f, a, b);
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut stack = vec![(a, b, whole, err, 0u32)];
    while let Some((lo, hi, val, e, depth)) = stack.pop() {
        let tol = abs_tol.max(rel_tol * whole.abs()) * ((hi - lo) / (b - a)).max(1e-3);
        if e <= tol || depth >= 40 {
            total += val;
            total_err += e;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        stack.push((lo, mid, v1, e1, depth + 1));
        stack.push((mid, hi, v2, e2, depth + 1));
    }
    (total, total_err)
}

/// Integral over one period of uniformly sampled periodic data
/// `values[j] = f(j * period / n)`.
pub fn periodic_trapezoid(values: &[f64], period: f64) -> f64 {
    values.iter().sum::<f64>() * period / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussRule::new(8);
        // degree 15 is exact for 8 nodes
        let v = rule.integrate(0.0, 2.0, |x| x.powi(15));
        assert_relative_eq!(v, 2f64.powi(16) / 16.0, max_relative = 1e-13);
        let (_, w) = gauss_legendre(200);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-13);
    }

    #[test]
    fn gauss_legendre_200_exponential_weight() {
        let rule = GaussRule::new(200);
        let t = 3.0;
        let v = rule.integrate(0.0, 8.0 * t, |s| (-s / t).exp() / t);
        assert_relative_eq!(v, 1.0 - (-8.0f64).exp(), max_relative = 1e-13);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let eps = 1e-4;
        let (v, _) = adaptive_gk(|x| eps / (x * x + eps * eps), -1.0, 1.0, 1e-13, 1e-12);
        assert_relative_eq!(v, 2.0 * (1.0 / eps).atan(), max_relative = 1e-10);
    }

    #[test]
    fn periodic_trapezoid_is_spectral() {
        let n = 64;
        let vals: Vec<f64> = (0..n).map(|j| (2.0 * (j as f64) * PI / n as f64).cos().exp()).collect();
        // integral of exp(cos x) over [0, 2 pi] is 2 pi I_0(1)
        assert_relative_eq!(
            periodic_trapezoid(&vals, 2.0 * PI),
            2.0 * PI * 1.266_065_877_752_008_4,
            max_relative = 1e-14
        );
    }
}
