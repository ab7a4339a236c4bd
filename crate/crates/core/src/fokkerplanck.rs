//! Stationary phase densities of the effective drift-diffusion and the
//! perturbative Lyapunov predictors built on them.
//!
//! The stationary density solves `∂_θ(∂_θ(pρ) − qρ) = 0` on `S¹_π`, i.e.
//! `(pρ)' − qρ = C` for a constant fixed by periodicity. Three independent
//! constructions are provided:
//!
//! * [`density_elliptic`] integrates the first-order equation explicitly when
//!   `p > 0` everywhere;
//! * [`density_band_edge`] evaluates the closed-form solution for the band-edge
//!   coefficients, where `p` vanishes at `θ = π/2`;
//! * [`density_bvp_oracle`] solves the periodic problem by a Fourier-Galerkin
//!   method and serves as a cross-check for both.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive_gk, periodic_trapezoid, GaussRule};

/// Default number of uniform grid points on `[0, π)`.
pub const GRID_POINTS: usize = 512;

/// Beyond this `|tan θ|` the band-edge density takes its limit value.
const TAN_LIMIT: f64 = 1e7;

/// Integrand cutoff in the band-edge kernel.
const EXPONENT_CUTOFF: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FpSetting {
    BandCenter {
        epsilon: f64,
        d0: f64,
        d_pi: f64,
    },
    BandEdge {
        epsilon: f64,
        d0: f64,
    },
    /// User-supplied coefficient functions.
    Custom,
}

type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Diffusion `p` and drift `q` as functions and sampled on the grid.
#[derive(Clone)]
pub struct FpCoefficients {
    pub setting: FpSetting,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    p_fn: Coefficient,
    q_fn: Coefficient,
}

impl fmt::Debug for FpCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FpCoefficients")
            .field("setting", &self.setting)
            .field("grid", &self.theta.len())
            .finish_non_exhaustive()
    }
}

pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| PI * i as f64 / n as f64).collect()
}

impl FpCoefficients {
    pub fn custom(
        p: impl Fn(f64) -> f64 + Send + Sync + 'static,
        q: impl Fn(f64) -> f64 + Send + Sync + 'static,
        grid: usize,
    ) -> Self {
        Self::build(FpSetting::Custom, Arc::new(p), Arc::new(q), grid)
    }

    fn build(setting: FpSetting, p_fn: Coefficient, q_fn: Coefficient, grid: usize) -> Self {
        let theta = uniform_grid(grid);
        let p = theta.iter().map(|t| p_fn(*t)).collect();
        let q = theta.iter().map(|t| q_fn(*t)).collect();
        Self {
            setting,
            theta,
            p,
            q,
            p_fn,
            q_fn,
        }
    }

    pub fn p_at(&self, theta: f64) -> f64 {
        (self.p_fn)(theta)
    }

    pub fn q_at(&self, theta: f64) -> f64 {
        (self.q_fn)(theta)
    }

    pub fn grid_len(&self) -> usize {
        self.theta.len()
    }
}

pub fn assemble_coefficients(setting: FpSetting) -> Result<FpCoefficients> {
    assemble_coefficients_on(setting, GRID_POINTS)
}

pub fn assemble_coefficients_on(setting: FpSetting, grid: usize) -> Result<FpCoefficients> {
    match setting {
        FpSetting::BandCenter { epsilon, d0, d_pi } => {
            if d0 < 0.0 || d_pi < 0.0 {
                return Err(Error::Argument(format!(
                    "spectral densities must be nonnegative, got {d0}, {d_pi}"
                )));
            }
            if d0 == 0.0 && d_pi == 0.0 {
                return Err(Error::Degenerate(
                    "band-center diffusion vanishes: D(0) = D(π) = 0".into(),
                ));
            }
            Ok(FpCoefficients::build(
                setting,
                Arc::new(move |t: f64| 0.5 * d0 + 0.5 * d_pi * (2.0 * t).cos().powi(2)),
                Arc::new(move |t: f64| -0.5 * d_pi * (4.0 * t).sin() - epsilon),
                grid,
            ))
        }
        FpSetting::BandEdge { epsilon, d0 } => {
            if !(d0 > 0.0) {
                return Err(Error::Degenerate(format!(
                    "band-edge diffusion needs D(0) > 0, got {d0}"
                )));
            }
            Ok(FpCoefficients::build(
                setting,
                Arc::new(move |t: f64| d0 * t.cos().powi(4)),
                Arc::new(move |t: f64| {
                    let (s, c) = t.sin_cos();
                    -epsilon - 1.0 + (1.0 - epsilon) * (2.0 * t).cos() - 2.0 * d0 * c.powi(3) * s
                }),
                grid,
            ))
        }
        FpSetting::Custom => Err(Error::Argument(
            "custom coefficients are built with FpCoefficients::custom".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMethod {
    Elliptic,
    BandEdgeFormula,
    FourierGalerkin,
}

/// A probability density on `[0, π)` sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDensity {
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    /// Factor applied to the unnormalized construction.
    pub normalization_constant: f64,
    pub setting: FpSetting,
    pub method: DensityMethod,
}

impl StationaryDensity {
    pub const CSV_HEADER: &'static str = "theta,p,q,rho";

    /// `∫_0^π ρ f` by the periodic trapezoid rule.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let vals: Vec<f64> = self.theta.iter().zip(&self.rho).map(|(t, r)| r * f(*t)).collect();
        periodic_trapezoid(&vals, PI)
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// Trigonometric interpolation of the grid values.
    pub fn at(&self, theta: f64) -> f64 {
        let n = self.rho.len();
        let coeffs = fourier_coefficients(&self.rho);
        let kmax = n / 2;
        let mut s = coeffs[0].re;
        for (m, c) in coeffs.iter().enumerate().take(kmax).skip(1) {
            s += 2.0 * (*c * Complex64::from_polar(1.0, 2.0 * m as f64 * theta)).re;
        }
        s
    }

    /// Interpolated values at many points, sharing one transform.
    pub fn at_many(&self, thetas: &[f64]) -> Vec<f64> {
        let n = self.rho.len();
        let coeffs = fourier_coefficients(&self.rho);
        let kmax = n / 2;
        thetas
            .iter()
            .map(|&theta| {
                let mut s = coeffs[0].re;
                for (m, c) in coeffs.iter().enumerate().take(kmax).skip(1) {
                    s += 2.0 * (*c * Complex64::from_polar(1.0, 2.0 * m as f64 * theta)).re;
                }
                s
            })
            .collect()
    }

    pub fn max_abs_difference(&self, other: &StationaryDensity) -> Result<f64> {
        if self.rho.len() != other.rho.len() {
            return Err(Error::Argument("densities live on different grids".into()));
        }
        Ok(self
            .rho
            .iter()
            .zip(&other.rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// DFT coefficients `c_m = (1/n) Σ_j f_j e^{−2imθ_j}` of grid data on `[0, π)`.
fn fourier_coefficients(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.iter().map(|c| c / n as f64).collect()
}

/// Spectral derivative of π-periodic grid data.
pub fn spectral_derivative(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let m = if j < n / 2 {
            j as f64
        } else if j == n / 2 {
            0.0
        } else {
            j as f64 - n as f64
        };
        *c *= Complex64::new(0.0, 2.0 * m / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Check of `(pρ)' − qρ = const` on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstIntegralCheck {
    /// The constant `C` (mean of the first integral).
    pub constant: f64,
    /// `max |F − C| / scale` with `scale = max(‖(pρ)'‖∞, ‖qρ‖∞)`.
    pub relative_spread: f64,
    /// `max |F'| / scale`, the discretized `L*ρ`.
    pub generator_residual: f64,
}

pub fn first_integral_check(coeffs: &FpCoefficients, density: &StationaryDensity) -> Result<FirstIntegralCheck> {
    if coeffs.grid_len() != density.rho.len() {
        return Err(Error::Argument(
            "coefficients and density live on different grids".into(),
        ));
    }
    let prho: Vec<f64> = coeffs.p.iter().zip(&density.rho).map(|(p, r)| p * r).collect();
    let qrho: Vec<f64> = coeffs.q.iter().zip(&density.rho).map(|(q, r)| q * r).collect();
    let dprho = spectral_derivative(&prho);
    let f: Vec<f64> = dprho.iter().zip(&qrho).map(|(a, b)| a - b).collect();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = sup(&dprho).max(sup(&qrho)).max(f64::MIN_POSITIVE);
    let constant = f.iter().sum::<f64>() / f.len() as f64;
    let spread = f.iter().fold(0.0f64, |m, x| m.max((x - constant).abs()));
    let df = spectral_derivative(&f);
    Ok(FirstIntegralCheck {
        constant,
        relative_spread: spread / scale,
        generator_residual: sup(&df) / scale,
    })
}

/// Clip roundoff negativity and normalize by the periodic trapezoid rule.
fn normalize(raw: Vec<f64>, theta: Vec<f64>, setting: FpSetting, method: DensityMethod) -> Result<StationaryDensity> {
    let max = raw.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rho = Vec::with_capacity(raw.len());
    for r in raw {
        if !r.is_finite() {
            return Err(Error::Numerical("non-finite density value".into()));
        }
        if r < -1e-12 * max.max(1.0) {
            return Err(Error::Numerical(format!("density is negative ({r}) beyond roundoff")));
        }
        rho.push(r.max(0.0));
    }
    let mass = periodic_trapezoid(&rho, PI);
    if !(mass > 0.0) {
        return Err(Error::Numerical("density has zero mass".into()));
    }
    let c = 1.0 / mass;
    Ok(StationaryDensity {
        theta,
        rho: rho.into_iter().map(|r| r * c).collect(),
        normalization_constant: c,
        setting,
        method,
    })
}

/// `ρ ∝ (1/p(θ)) ∫ e^{w(θ) − w(s)} ds` with `w = ∫ q/p`, the integral taken over
/// the period `[θ, θ+π]` when `w(π) ≥ 0` and over `[θ−π, θ]` otherwise, so that
/// every term is positive.
pub fn density_elliptic(coeffs: &FpCoefficients) -> Result<StationaryDensity> {
    let pmin = coeffs.p.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let pmax = coeffs.p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(pmin > 1e-10 * pmax) {
        return Err(Error::Degenerate(format!(
            "min p = {pmin} is not positive; the elliptic construction does not apply (use the band-edge formula)"
        )));
    }
    let n = coeffs.grid_len();
    let h = PI / n as f64;
    let rule = GaussRule::new(8);
    let ratio = |t: f64| coeffs.q_at(t) / coeffs.p_at(t);
    // w at the grid points and cell integrals I_j = ∫_cell e^{w(θ_j) − w(s)} ds
    let mut w = vec![0.0; n + 1];
    let mut cell = vec![0.0; n];
    for j in 0..n {
        let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
        w[j + 1] = w[j] + rule.integrate(a, b, ratio);
        cell[j] = rule
            .on(a, b)
            .map(|(s, ws)| ws * (-rule.integrate(a, s, ratio)).exp())
            .sum();
    }
    let drift = w[n];
    // periodic extension w(θ + mπ) = w(θ) + m w(π)
    let w_ext = |j: isize| {
        let m = j.div_euclid(n as isize);
        w[j.rem_euclid(n as isize) as usize] + m as f64 * drift
    };
    let raw: Vec<f64> = (0..n as isize)
        .map(|i| {
            let range = if drift >= 0.0 {
                i..i + n as isize
            } else {
                i - n as isize..i
            };
            let g: f64 = range
                .map(|j| (w_ext(i) - w_ext(j)).exp() * cell[j.rem_euclid(n as isize) as usize])
                .sum();
            g / coeffs.p[i as usize]
        })
        .collect();
    normalize(raw, coeffs.theta.clone(), coeffs.setting, DensityMethod::Elliptic)
}

/// Unnormalized band-edge density at `t = tan θ`:
/// `(1+t²) ∫_0^∞ e^{−(2/(3D₀))((s−t)³ + t³ + 3εs)} ds` with `s = σ/(1+t²)`.
pub fn band_edge_kernel(t: f64, d0: f64, epsilon: f64) -> f64 {
    if !t.is_finite() || t.abs() > TAN_LIMIT {
        return 0.5 * d0;
    }
    let sc = 1.0 + t * t;
    let a = 2.0 / (3.0 * d0);
    let exponent = move |sigma: f64| {
        let s = sigma / sc;
        -a * (s * (3.0 * t * t - 3.0 * t * s + s * s) + 3.0 * epsilon * s)
    };
    // beyond s_mono the exponent is decreasing
    let s_mono = (t + (-epsilon).max(0.0).sqrt()).max(0.0);
    let mut sigma_max: f64 = 1.0;
    while sigma_max / sc < s_mono || exponent(sigma_max) > EXPONENT_CUTOFF {
        sigma_max *= 2.0;
    }
    // geometric pieces keep the narrow peak at σ ≈ 0 resolved for large |t|
    let mut total = 0.0f64;
    let mut a0 = 0.0;
    let mut b0 = 0.25f64.min(sigma_max);
    while a0 < sigma_max {
        let (v, _) = adaptive_gk(|sigma| exponent(sigma).exp(), a0, b0, 1e-15 * total.max(1e-300), 1e-13);
        total += v;
        a0 = b0;
        b0 = (2.0 * b0).min(sigma_max);
    }
    total
}

/// Closed-form stationary density for the band-edge coefficients.
pub fn density_band_edge(d0: f64, epsilon: f64) -> Result<StationaryDensity> {
    density_band_edge_on(d0, epsilon, GRID_POINTS)
}

pub fn density_band_edge_on(d0: f64, epsilon: f64, grid: usize) -> Result<StationaryDensity> {
    if !(d0 > 0.0) {
        return Err(Error::Degenerate(format!("band-edge density needs D(0) > 0, got {d0}")));
    }
    let theta = uniform_grid(grid);
    let raw: Vec<f64> = theta
        .iter()
        .map(|&th| {
            if (th - 0.5 * PI).abs() < 1e-12 {
                0.5 * d0
            } else {
                band_edge_kernel(th.tan(), d0, epsilon)
            }
        })
        .collect();
    normalize(
        raw,
        theta,
        FpSetting::BandEdge { epsilon, d0 },
        DensityMethod::BandEdgeFormula,
    )
}

/// Independent Fourier-Galerkin solution of `(pρ)' − qρ = C` with
/// `ρ = Σ_{|m|≤K} c_m e^{2imθ}` and `∫ρ = 1`; `K` is doubled from 32 until the
/// solution stops changing.
pub fn density_bvp_oracle(coeffs: &FpCoefficients) -> Result<StationaryDensity> {
    let n = coeffs.grid_len();
    if n < 256 {
        return Err(Error::Argument(format!(
            "the oracle needs at least 256 grid points, got {n}"
        )));
    }
    let pc = fourier_coefficients(&coeffs.p);
    let qc = fourier_coefficients(&coeffs.q);
    let mode = |c: &[Complex64], m: i64| -> Complex64 {
        if m.unsigned_abs() as usize >= n / 2 {
            Complex64::new(0.0, 0.0)
        } else {
            c[m.rem_euclid(n as i64) as usize]
        }
    };
    let mut previous: Option<Vec<f64>> = None;
    let mut k = 32i64;
    loop {
        let size = (2 * k + 1) as usize;
        let idx = |m: i64| (m + k) as usize;
        let mut a = DMatrix::<Complex64>::zeros(size, size);
        let mut b = DVector::<Complex64>::zeros(size);
        for m in -k..=k {
            if m == 0 {
                // normalization π c_0 = 1 replaces the equation for the unknown constant
                a[(idx(0), idx(0))] = Complex64::new(PI, 0.0);
                b[idx(0)] = Complex64::new(1.0, 0.0);
                continue;
            }
            let im = Complex64::new(0.0, 2.0 * m as f64);
            for l in -k..=k {
                let v = im * mode(&pc, m - l) - mode(&qc, m - l);
                if v != Complex64::new(0.0, 0.0) {
                    a[(idx(m), idx(l))] = v;
                }
            }
        }
        let lu = a.full_piv_lu();
        let u = lu.u();
        let diag: Vec<f64> = (0..size).map(|i| u[(i, i)].norm()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(dmin > 1e-13 * dmax) {
            return Err(Error::Degenerate(format!(
                "Galerkin system is numerically singular (pivot ratio {:.3e}); the stationary density is not unique",
                dmin / dmax
            )));
        }
        let c = lu
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("Galerkin system is singular".into()))?;
        let rho: Vec<f64> = coeffs
            .theta
            .iter()
            .map(|&t| {
                let mut s = c[idx(0)].re;
                for m in 1..=k {
                    s += 2.0 * (c[idx(m)] * Complex64::from_polar(1.0, 2.0 * m as f64 * t)).re;
                }
                s
            })
            .collect();
        let converged = previous
            .as_ref()
            .map(|prev| prev.iter().zip(&rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-11)
            .unwrap_or(false);
        if converged || 2 * k as usize >= n / 2 {
            return normalize(
                rho,
                coeffs.theta.clone(),
                coeffs.setting,
                DensityMethod::FourierGalerkin,
            );
        }
        previous = Some(rho);
        k *= 2;
    }
}

/// `λ² D(2k) / (8 sin² k)` at `E = 2cos k`. The caller supplies `d_2k`, the
/// spectral density at twice the quasi-momentum; for white noise it is the
/// variance.
pub fn gamma_thouless(lambda: f64, k: f64, d_2k: f64) -> Result<f64> {
    let s = k.sin();
    if s.abs() < 1e-12 {
        return Err(Error::SingularFrame { k });
    }
    Ok(lambda * lambda * d_2k / (8.0 * s * s))
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// `λ² (D(π)/8) ∫ρ_ε (1 + cos 4θ)`.
pub fn gamma_band_center(lambda: f64, epsilon: f64, d_pi: f64, rho: &StationaryDensity) -> Result<f64> {
    match rho.setting {
        FpSetting::BandCenter {
            epsilon: e, d_pi: dp, ..
        } if same(e, epsilon) && same(dp, d_pi) => {}
        other => {
            return Err(Error::Argument(format!(
                "density computed for {other:?}, not for the band center at epsilon = {epsilon}, D(pi) = {d_pi}"
            )))
        }
    }
    Ok(lambda * lambda * d_pi / 8.0 * rho.integrate(|t| 1.0 + (4.0 * t).cos()))
}

/// `λ^{2/3} [((1−ε)/2) ∫ρ_ε sin 2θ + (D₀/8) ∫ρ_ε (1 + 2cos 2θ + cos 4θ)]`,
/// both integrals over `[0, π)`.
pub fn gamma_band_edge(lambda: f64, epsilon: f64, d0: f64, rho: &StationaryDensity) -> Result<f64> {
    match rho.setting {
        FpSetting::BandEdge { epsilon: e, d0: d } if same(e, epsilon) && same(d, d0) => {}
        other => {
            return Err(Error::Argument(format!(
                "density computed for {other:?}, not for the band edge at epsilon = {epsilon}, D(0) = {d0}"
            )))
        }
    }
    let first = rho.integrate(|t| (2.0 * t).sin());
    let second = rho.integrate(|t| 1.0 + 2.0 * (2.0 * t).cos() + (4.0 * t).cos());
    Ok(lambda.powf(2.0 / 3.0) * (0.5 * (1.0 - epsilon) * first + d0 / 8.0 * second))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSide {
    /// Outside the band, `E = 2 + ελ^η`.
    Hyperbolic,
    /// Inside the band, `E = 2 − ελ^η`.
    Elliptic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearEdgePrediction {
    pub value: f64,
    /// `η` outside `(4/5, 4/3)`, where the leading order is not justified.
    pub validity_warning: bool,
}

/// Leading-order exponent at distance `ελ^η` from the upper band edge.
pub fn gamma_near_edge(lambda: f64, epsilon: f64, eta: f64, side: EdgeSide, d0: f64) -> Result<NearEdgePrediction> {
    if !(epsilon > 0.0) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let value = match side {
        EdgeSide::Hyperbolic => (epsilon * lambda.powf(eta)).sqrt(),
        EdgeSide::Elliptic => lambda.powf(2.0 - eta) * d0 / (8.0 * epsilon),
    };
    Ok(NearEdgePrediction {
        value,
        validity_warning: !(eta > 0.8 && eta < 4.0 / 3.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn center(eps: f64) -> FpCoefficients {
        assemble_coefficients(FpSetting::BandCenter {
            epsilon: eps,
            d0: 1.0,
            d_pi: 1.0,
        })
        .unwrap()
    }

    fn edge(d0: f64, eps: f64) -> FpCoefficients {
        assemble_coefficients(FpSetting::BandEdge { epsilon: eps, d0 }).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let c = center(0.0);
        assert_relative_eq!(c.p_at(0.0), 1.0);
        assert_relative_eq!(c.p_at(PI / 4.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(c.q_at(PI / 8.0), -0.5, max_relative = 1e-15);
        let e = edge(1.0, 0.0);
        assert!(e.p_at(PI / 2.0).abs() < 1e-60);
        assert_relative_eq!(e.q_at(PI / 2.0), -2.0, max_relative = 1e-15);
        let e1 = edge(1.0, 1.0);
        for t in [0.1f64, 0.7, 2.0] {
            let expected = -2.0 - 2.0 * t.cos().powi(3) * t.sin();
            assert_relative_eq!(e1.q_at(t), expected, max_relative = 1e-14);
        }
        assert!(matches!(
            assemble_coefficients(FpSetting::BandCenter {
                epsilon: 0.0,
                d0: 0.0,
                d_pi: 0.0
            }),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn uniform_density_for_constant_coefficients() {
        let c = FpCoefficients::custom(|_| 0.7, |_| 0.0, 512);
        for d in [density_elliptic(&c).unwrap(), density_bvp_oracle(&c).unwrap()] {
            for r in &d.rho {
                assert!((r - 1.0 / PI).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn elliptic_density_has_quarter_period_symmetry() {
        for eps in [0.0, 0.5, -2.0] {
            let d = density_elliptic(&center(eps)).unwrap();
            let n = d.rho.len();
            for i in 0..n {
                assert!((d.rho[i] - d.rho[(i + n / 2) % n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn band_center_density_closed_form_at_zero_energy() {
        // ε = 0, D0 = Dπ: ρ ∝ (1 + cos² 2θ)^{-1/2}
        let d = density_elliptic(&center(0.0)).unwrap();
        let raw: Vec<f64> = d
            .theta
            .iter()
            .map(|t| 1.0 / (1.0 + (2.0 * t).cos().powi(2)).sqrt())
            .collect();
        let mass = periodic_trapezoid(&raw, PI);
        for (r, x) in d.rho.iter().zip(&raw) {
            assert!((r - x / mass).abs() < 1e-12);
        }
        // Kappus-Wegner ratio 8 Γ(3/4)² / Γ(1/4)²
        let ratio = d.integrate(|t| 1.0 + (4.0 * t).cos());
        assert_relative_eq!(ratio, 0.913_893_3, max_relative = 1e-6);
    }

    #[test]
    fn elliptic_density_satisfies_the_equation() {
        for eps in [0.0, 1.0, -3.0] {
            let c = center(eps);
            let d = density_elliptic(&c).unwrap();
            let chk = first_integral_check(&c, &d).unwrap();
            assert!(chk.relative_spread < 1e-10, "{chk:?}");
            assert!(chk.generator_residual < 1e-6, "{chk:?}");
            assert_relative_eq!(d.total_mass(), 1.0, max_relative = 1e-12);
            assert!(d.rho.iter().all(|r| *r >= 0.0));
        }
    }

    #[test]
    fn elliptic_matches_oracle() {
        let c = center(0.0);
        let a = density_elliptic(&c).unwrap();
        let b = density_bvp_oracle(&c).unwrap();
        assert!(a.max_abs_difference(&b).unwrap() < 1e-6);
    }

    #[test]
    fn elliptic_rejects_degenerate_diffusion() {
        assert!(matches!(density_elliptic(&edge(1.0, 0.0)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn band_edge_density_properties() {
        for (d0, eps) in [(1.0, 0.0), (1.0, 1.0), (0.5, -1.0)] {
            let c = edge(d0, eps);
            let d = density_band_edge(d0, eps).unwrap();
            assert!(d.rho.iter().all(|r| *r > 0.0));
            assert_relative_eq!(d.total_mass(), 1.0, max_relative = 1e-10);
            let chk = first_integral_check(&c, &d).unwrap();
            assert!(chk.relative_spread < 1e-8, "{d0} {eps}: {chk:?}");
            let o = density_bvp_oracle(&c).unwrap();
            let diff = d.max_abs_difference(&o).unwrap();
            assert!(diff < 1e-4, "{d0} {eps}: {diff}");
        }
    }

    #[test]
    fn band_edge_density_is_continuous_at_the_singular_angle() {
        let d0 = 1.0;
        let d = density_band_edge(d0, 0.0).unwrap();
        let c = d.normalization_constant;
        // extrapolate from both sides towards θ = π/2
        let f = |th: f64| c * band_edge_kernel(th.tan(), d0, 0.0);
        let h = 1e-3;
        let left = 2.0 * f(PI / 2.0 - h) - f(PI / 2.0 - 2.0 * h);
        let right = 2.0 * f(PI / 2.0 + h) - f(PI / 2.0 + 2.0 * h);
        assert!((left - right).abs() < 1e-4, "{left} {right}");
        assert!((left - c * 0.5 * d0).abs() < 1e-4);
    }

    #[test]
    fn band_edge_predictor_values() {
        let lam = 1e-3;
        let d = density_band_edge(1.0, 0.0).unwrap();
        let g = gamma_band_edge(lam, 0.0, 1.0, &d).unwrap();
        assert!(g > 0.0);
        let ratio = g / lam.powf(2.0 / 3.0);
        // close to the known value 0.2893 for unit variance
        assert!((ratio - 0.29).abs() < 0.01, "{ratio}");
        let g2 = gamma_band_edge(1e-5, 0.0, 1.0, &d).unwrap();
        assert_relative_eq!(g2 / 1e-5f64.powf(2.0 / 3.0), ratio, max_relative = 1e-12);
        // deep inside and outside the band: 1/(32ε)·… and √(−ε) asymptotes
        let inside = gamma_band_edge(1.0, 4.0, 1.0, &density_band_edge(1.0, 4.0).unwrap()).unwrap();
        let outside = gamma_band_edge(1.0, -4.0, 1.0, &density_band_edge(1.0, -4.0).unwrap()).unwrap();
        assert!((inside - 1.0 / 32.0).abs() < 0.1 / 32.0, "{inside}");
        assert!((outside - 2.0).abs() < 0.1, "{outside}");
    }

    #[test]
    fn predictor_setting_mismatch() {
        let d = density_band_edge(1.0, 0.0).unwrap();
        assert!(matches!(gamma_band_center(0.1, 0.0, 1.0, &d), Err(Error::Argument(_))));
        let c = density_elliptic(&center(0.0)).unwrap();
        assert!(matches!(gamma_band_edge(0.1, 0.0, 1.0, &c), Err(Error::Argument(_))));
        assert!(matches!(gamma_band_center(0.1, 0.5, 1.0, &c), Err(Error::Argument(_))));
    }

    #[test]
    fn thouless_examples() {
        assert_relative_eq!(
            gamma_thouless(0.1, PI / 2.0, 1.0).unwrap(),
            0.00125,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            gamma_thouless(0.05, PI / 3.0, 1.0).unwrap(),
            0.0025 / 6.0,
            max_relative = 1e-13
        );
        assert_eq!(gamma_thouless(0.05, 1.0, 0.0).unwrap(), 0.0);
        assert!(matches!(
            gamma_thouless(0.1, 0.0, 1.0),
            Err(Error::SingularFrame { .. })
        ));
    }

    #[test]
    fn band_center_uniform_sanity() {
        // uniform ρ: ∫(1/π)(1+cos 4θ) = 1
        let c = FpCoefficients::custom(|_| 1.0, |_| 0.0, 512);
        let mut d = density_elliptic(&c).unwrap();
        d.setting = FpSetting::BandCenter {
            epsilon: 0.0,
            d0: 1.0,
            d_pi: 1.0,
        };
        assert_relative_eq!(
            gamma_band_center(0.2, 0.0, 1.0, &d).unwrap(),
            0.04 / 8.0,
            max_relative = 1e-12
        );
        assert_eq!(
            gamma_band_center(0.2, 0.0, 0.0, &{
                let mut e = d.clone();
                e.setting = FpSetting::BandCenter {
                    epsilon: 0.0,
                    d0: 1.0,
                    d_pi: 0.0,
                };
                e
            })
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn band_center_predictor_approaches_thouless_with_energy() {
        let gaps: Vec<f64> = [0.0, 1.0, 4.0, 16.0]
            .iter()
            .map(|&eps| {
                let d = density_elliptic(&center(eps)).unwrap();
                (gamma_band_center(1.0, eps, 1.0, &d).unwrap() * 8.0 - 1.0).abs()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn near_edge_examples() {
        let h = gamma_near_edge(1e-4, 1.0, 1.0, EdgeSide::Hyperbolic, 1.0).unwrap();
        assert_relative_eq!(h.value, 1e-2, max_relative = 1e-12);
        assert!(!h.validity_warning);
        let e = gamma_near_edge(1e-2, 1.0, 1.0, EdgeSide::Elliptic, 1.0).unwrap();
        assert_relative_eq!(e.value, 1.25e-3, max_relative = 1e-12);
        assert!(
            gamma_near_edge(1e-2, 1.0, 1.5, EdgeSide::Elliptic, 1.0)
                .unwrap()
                .validity_warning
        );
    }

    #[test]
    fn oracle_reports_degenerate_kernel() {
        // p ≡ 0, q ≡ 0: every density is stationary
        let c = FpCoefficients::custom(|_| 0.0, |_| 0.0, 256);
        assert!(matches!(density_bvp_oracle(&c), Err(Error::Degenerate(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn constructions_agree_for_random_band_center(eps in -3.0f64..3.0, d0 in 0.2f64..2.0, d_pi in 0.0f64..2.0) {
            let c = assemble_coefficients(FpSetting::BandCenter { epsilon: eps, d0, d_pi }).unwrap();
            let a = density_elliptic(&c).unwrap();
            let b = density_bvp_oracle(&c).unwrap();
            prop_assert!(a.max_abs_difference(&b).unwrap() < 1e-6);
            prop_assert!(first_integral_check(&c, &a).unwrap().relative_spread < 1e-5);
        }
    }
}
