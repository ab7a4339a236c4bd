//! Projective phase dynamics on `S¹_π = ℝ/πℤ`.
//!
//! The normal form near an anomaly is `T = ±R_k exp(λ^η P₁ + λ^{2η} P₂ + …)`
//! with traceless `P_j` depending on a window of the potential. An
//! [`AnomalySetup`] carries `η`, the sign, `k`, the window length and the
//! maps `P₁`, `P₂`, together with the exact (conjugated) step matrix when one
//! is known.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PotentialProcess;
use crate::spectral::WindowFn;
use crate::stats::mean_stderr;
use crate::transfer::{band_edge_conjugation, rotation, rotation_frame, transfer_matrix, Mat2};

/// Angle of `T e_θ`, reduced to `[0, π)`.
#[inline]
pub fn projective_action(t: &Mat2, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let (x, y) = t.apply(c, s);
    reduce(y.atan2(x))
}

#[inline]
fn reduce(theta: f64) -> f64 {
    let r = theta.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Representative of `x` modulo `π` in `(−π/2, π/2]`.
#[inline]
fn wrap_half(x: f64) -> f64 {
    x - PI * (x / PI).round()
}

type WindowMatrix = Arc<dyn Fn(&[f64]) -> Mat2 + Send + Sync>;
type ExactStep = Arc<dyn Fn(f64, &[f64]) -> Mat2 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Squared transfer matrix at `E = ελ²`, two potential values per step.
    BandCenter {
        epsilon: f64,
    },
    /// Lower band edge `E = −2 + ελ^{4/3}` in the frame `N_λ N⁻¹`.
    BandEdge {
        epsilon: f64,
    },
    /// Rotation frame at `E = 2 cos k`.
    Bulk {
        k: f64,
    },
    Custom,
}

#[derive(Clone)]
pub struct AnomalySetup {
    pub kind: AnomalyKind,
    pub eta: f64,
    pub sign: f64,
    pub k: f64,
    /// Potential values consumed per step.
    pub window: usize,
    p1: WindowMatrix,
    p2: WindowMatrix,
    exact: Option<ExactStep>,
}

impl fmt::Debug for AnomalySetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnomalySetup")
            .field("kind", &self.kind)
            .field("eta", &self.eta)
            .field("sign", &self.sign)
            .field("k", &self.k)
            .field("window", &self.window)
            .finish_non_exhaustive()
    }
}

impl AnomalySetup {
    pub fn band_center(epsilon: f64) -> Self {
        Self {
            kind: AnomalyKind::BandCenter { epsilon },
            eta: 1.0,
            sign: -1.0,
            k: 0.0,
            window: 2,
            p1: Arc::new(|w| Mat2::new(0.0, -w[1], w[0], 0.0)),
            p2: Arc::new(move |w| {
                let uv = w[0] * w[1];
                Mat2::new(-0.5 * uv, epsilon, -epsilon, 0.5 * uv)
            }),
            exact: Some(Arc::new(move |lambda, w| {
                let e = epsilon * lambda * lambda;
                transfer_matrix(e, lambda, w[1]) * transfer_matrix(e, lambda, w[0])
            })),
        }
    }

    pub fn band_edge(epsilon: f64) -> Self {
        Self {
            kind: AnomalyKind::BandEdge { epsilon },
            eta: 1.0 / 3.0,
            sign: -1.0,
            k: 0.0,
            window: 1,
            p1: Arc::new(|w| Mat2::new(0.0, 0.0, w[0], 0.0)),
            p2: Arc::new(move |_| Mat2::new(0.0, 1.0, -epsilon, 0.0)),
            exact: Some(Arc::new(move |lambda, w| {
                let f = band_edge_conjugation(lambda).expect("lambda > 0 checked by caller");
                transfer_matrix(-2.0 + epsilon * lambda.powf(4.0 / 3.0), lambda, w[0]).conjugate_by(&f)
            })),
        }
    }

    /// `M T M⁻¹ = R_k exp(λ (V/sin k) [[0,0],[1,0]])`, exact since the
    /// generator is nilpotent.
    pub fn bulk(k: f64) -> Result<Self> {
        let (_, m) = rotation_frame(k)?;
        let s = k.sin();
        Ok(Self {
            kind: AnomalyKind::Bulk { k },
            eta: 1.0,
            sign: 1.0,
            k,
            window: 1,
            p1: Arc::new(move |w| Mat2::new(0.0, 0.0, w[0] / s, 0.0)),
            p2: Arc::new(|_| Mat2::ZERO),
            exact: Some(Arc::new(move |lambda, w| {
                transfer_matrix(2.0 * k.cos(), lambda, w[0]).conjugate_by(&m)
            })),
        })
    }

    pub fn custom(
        eta: f64,
        sign: f64,
        k: f64,
        window: usize,
        p1: impl Fn(&[f64]) -> Mat2 + Send + Sync + 'static,
        p2: impl Fn(&[f64]) -> Mat2 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: AnomalyKind::Custom,
            eta,
            sign,
            k,
            window,
            p1: Arc::new(p1),
            p2: Arc::new(p2),
            exact: None,
        }
    }

    pub fn p1(&self, w: &[f64]) -> Mat2 {
        (self.p1)(w)
    }

    pub fn p2(&self, w: &[f64]) -> Mat2 {
        (self.p2)(w)
    }

    /// `sign · R_k · exp(λ^η P₁ + λ^{2η} P₂)`.
    pub fn normal_form(&self, lambda: f64, w: &[f64]) -> Mat2 {
        let s = lambda.powf(self.eta);
        let gen = self.p1(w).scale(s) + self.p2(w).scale(s * s);
        (rotation(self.k) * gen.exp_traceless()).scale(self.sign)
    }

    /// Step matrix at coupling `lambda`: the exact conjugated transfer matrix
    /// when known, otherwise the truncated normal form.
    pub fn step(&self, lambda: f64, w: &[f64]) -> Mat2 {
        match &self.exact {
            Some(f) => f(lambda, w),
            None => self.normal_form(lambda, w),
        }
    }

    /// `(M₀, M₁)` with `step(λ, [v]) = M₀ + v M₁`, available for exact
    /// single-site steps, which are affine in the potential value.
    fn affine_step(&self, lambda: f64) -> Option<(Mat2, Mat2)> {
        if self.window != 1 || self.exact.is_none() {
            return None;
        }
        let m0 = self.step(lambda, &[0.0]);
        Some((m0, self.step(lambda, &[1.0]) - m0))
    }

    pub fn has_exact_step(&self) -> bool {
        self.exact.is_some()
    }

    /// Physical energy belonging to this setup at coupling `lambda`.
    pub fn energy(&self, lambda: f64) -> Option<f64> {
        match self.kind {
            AnomalyKind::BandCenter { epsilon } => Some(epsilon * lambda * lambda),
            AnomalyKind::BandEdge { epsilon } => Some(-2.0 + epsilon * lambda.powf(4.0 / 3.0)),
            AnomalyKind::Bulk { k } => Some(2.0 * k.cos()),
            AnomalyKind::Custom => None,
        }
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda > 0.0) && matches!(self.kind, AnomalyKind::BandEdge { .. }) {
            return Err(Error::Degenerate(format!(
                "band-edge frame needs lambda > 0, got {lambda}"
            )));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Argument(format!("coupling must be nonnegative, got {lambda}")));
        }
        Ok(())
    }
}

/// `α = ⟨v|P|v⟩`, `β = ⟨v̄|P|v⟩`, `γ = ⟨v̄|PᵀP|v⟩` with `v = (1, −i)/√2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierCoefficients {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub gamma: Complex64,
}

impl FourierCoefficients {
    /// `p(θ) = Im(α − β e^{2iθ})`.
    pub fn polynomial(&self, theta: f64) -> f64 {
        (self.alpha - self.beta * Complex64::from_polar(1.0, 2.0 * theta)).im
    }
}

fn v_vector() -> [Complex64; 2] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [Complex64::new(r, 0.0), Complex64::new(0.0, -r)]
}

fn apply_c(p: &Mat2, x: [Complex64; 2]) -> [Complex64; 2] {
    [x[0] * p.a + x[1] * p.b, x[0] * p.c + x[1] * p.d]
}

pub fn fourier_coefficients(p: &Mat2) -> FourierCoefficients {
    let v = v_vector();
    let pv = apply_c(p, v);
    let ptp = p.transpose() * *p;
    let ptpv = apply_c(&ptp, v);
    FourierCoefficients {
        alpha: v[0].conj() * pv[0] + v[1].conj() * pv[1],
        beta: v[0] * pv[0] + v[1] * pv[1],
        gamma: v[0] * ptpv[0] + v[1] * ptpv[1],
    }
}

/// `Im(⟨v|P|e_θ⟩ / ⟨v|e_θ⟩)`.
pub fn polynomial_direct(p: &Mat2, theta: f64) -> f64 {
    let v = v_vector();
    let (s, c) = theta.sin_cos();
    let e = [Complex64::new(c, 0.0), Complex64::new(s, 0.0)];
    let pe = apply_c(p, e);
    let num = v[0].conj() * pe[0] + v[1].conj() * pe[1];
    let den = v[0].conj() * e[0] + v[1].conj() * e[1];
    (num / den).im
}

/// `log‖T e_θ‖` minus its second-order expansion in the Fourier
/// coefficients of `P₁`, `P₂`, for one step at window `w`.
pub fn log_norm_expansion_check(setup: &AnomalySetup, w: &[f64], theta: f64, lambda: f64) -> Result<f64> {
    setup.check_lambda(lambda)?;
    let t = setup.step(lambda, w);
    let (s, c) = theta.sin_cos();
    let (x, y) = t.apply(c, s);
    let exact = x.hypot(y).ln();
    let f1 = fourier_coefficients(&setup.p1(w));
    let f2 = fourier_coefficients(&setup.p2(w));
    let l1 = lambda.powf(setup.eta);
    let l2 = l1 * l1;
    let e2 = Complex64::from_polar(1.0, 2.0 * theta);
    let e4 = e2 * e2;
    let expansion = l1 * f1.beta * e2
        + l2 * f2.beta * e2
        + 0.5 * l2 * (Complex64::new(f1.beta.norm_sqr(), 0.0) + f1.gamma * e2 - f1.beta * f1.beta * e4);
    Ok(exact - expansion.re)
}

/// Second-order prediction of one step of the phase map.
pub fn phase_step_expansion(setup: &AnomalySetup, w: &[f64], theta: f64, lambda: f64) -> f64 {
    let f1 = fourier_coefficients(&setup.p1(w));
    let f2 = fourier_coefficients(&setup.p2(w));
    let l1 = lambda.powf(setup.eta);
    let p1 = f1.polynomial(theta);
    // p₁' = −Im(2i β e^{2iθ}) = −2 Re(β e^{2iθ})
    let dp1 = -2.0 * (f1.beta * Complex64::from_polar(1.0, 2.0 * theta)).re;
    theta + setup.k + l1 * p1 + l1 * l1 * (f2.polynomial(theta) + 0.5 * p1 * dp1)
}

/// How the phase is driven.
#[derive(Debug, Clone, Copy)]
pub enum PhaseDriver<'a> {
    /// Plain transfer matrices at `(E, λ)`.
    Raw { energy: f64, lambda: f64 },
    /// Step matrices of an anomaly setup at physical coupling `lambda`.
    Anomaly { setup: &'a AnomalySetup, lambda: f64 },
}

impl PhaseDriver<'_> {
    fn stride(&self) -> usize {
        match self {
            PhaseDriver::Raw { .. } => 1,
            PhaseDriver::Anomaly { setup, .. } => setup.window,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PhaseDriver::Raw { .. } => Ok(()),
            PhaseDriver::Anomaly { setup, lambda } => setup.check_lambda(*lambda),
        }
    }

    #[inline]
    fn matrix(&self, w: &[f64]) -> Mat2 {
        match self {
            PhaseDriver::Raw { energy, lambda } => transfer_matrix(*energy, *lambda, w[0]),
            PhaseDriver::Anomaly { setup, lambda } => setup.step(*lambda, w),
        }
    }
}

/// Potential values kept beyond the last step so window functions can be
/// evaluated at every orbit point.
pub const ORBIT_LOOKAHEAD: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOrbit {
    /// `θ_0, …, θ_{n−1}`.
    pub angles: Vec<f64>,
    /// `log‖T_j e_{θ_j}‖`.
    pub log_norms: Vec<f64>,
    /// Potential values consumed, `stride` per step, plus a lookahead.
    pub potential: Vec<f64>,
    pub stride: usize,
}

impl PhaseOrbit {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// `g(S^{j·stride} ω)` for every step `j`.
    pub fn window_values(&self, g: &WindowFn) -> Result<Vec<f64>> {
        if g.width() > ORBIT_LOOKAHEAD + self.stride {
            return Err(Error::Argument(format!(
                "window width {} exceeds the recorded lookahead",
                g.width()
            )));
        }
        Ok((0..self.len())
            .map(|j| g.eval(&self.potential[j * self.stride..]))
            .collect())
    }
}

/// `θ_{j+1} = S_{T_j}(θ_j)` on stream `stream` of the process.
pub fn phase_orbit_stream(
    process: &PotentialProcess,
    driver: PhaseDriver<'_>,
    theta0: f64,
    n: usize,
    stream: u64,
) -> Result<PhaseOrbit> {
    if n == 0 {
        return Err(Error::Argument("orbit length must be at least 1".into()));
    }
    driver.validate()?;
    let stride = driver.stride();
    let mut sampler = process.sampler(stream)?;
    let mut potential = vec![0.0; n * stride + ORBIT_LOOKAHEAD];
    sampler.fill(&mut potential);
    let mut angles = Vec::with_capacity(n);
    let mut log_norms = Vec::with_capacity(n);
    let mut theta = reduce(theta0);
    for j in 0..n {
        angles.push(theta);
        let t = driver.matrix(&potential[j * stride..]);
        let (s, c) = theta.sin_cos();
        let (x, y) = t.apply(c, s);
        log_norms.push(x.hypot(y).ln());
        theta = reduce(y.atan2(x));
    }
    Ok(PhaseOrbit {
        angles,
        log_norms,
        potential,
        stride,
    })
}

pub fn phase_orbit(process: &PotentialProcess, driver: PhaseDriver<'_>, theta0: f64, n: usize) -> Result<PhaseOrbit> {
    phase_orbit_stream(process, driver, theta0, n, 0)
}

/// Histogram of orbit angles on `bins` equal cells of `[0, π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseHistogram {
    /// Probability mass per bin.
    pub mass: Vec<f64>,
    pub samples: u64,
}

impl PhaseHistogram {
    pub const CSV_HEADER: &'static str = "theta_mid,mass";

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        let b = self.bins() as f64;
        (0..self.bins()).map(|j| (j as f64 + 0.5) * PI / b).collect()
    }

    /// Total-variation distance to the bin masses of a density, evaluated at
    /// bin midpoints and renormalized to total mass one.
    pub fn tv_distance(&self, density: impl Fn(f64) -> f64) -> f64 {
        let predicted: Vec<f64> = self.midpoints().into_iter().map(density).collect();
        let total: f64 = predicted.iter().sum();
        0.5 * self
            .mass
            .iter()
            .zip(&predicted)
            .map(|(h, r)| (h - r / total).abs())
            .sum::<f64>()
    }

    pub fn tv_between(&self, other: &PhaseHistogram) -> f64 {
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Histogram of `θ_j`, `discard ≤ j < n`, without storing the orbit.
pub fn phase_histogram(
    process: &PotentialProcess,
    driver: PhaseDriver<'_>,
    theta0: f64,
    n: usize,
    discard: usize,
    bins: usize,
) -> Result<PhaseHistogram> {
    if bins == 0 || discard >= n {
        return Err(Error::Argument(format!(
            "need bins > 0 and discard < n (bins {bins}, discard {discard}, n {n})"
        )));
    }
    driver.validate()?;
    let stride = driver.stride();
    let mut sampler = process.sampler(0)?;
    let mut counts = vec![0u64; bins];
    let mut buf = vec![0.0; stride * 4096];
    let (mut x, mut y) = (theta0.cos(), theta0.sin());
    let scale = bins as f64 / PI;
    let mut j = 0usize;
    while j < n {
        let steps = (n - j).min(4096);
        sampler.fill(&mut buf[..steps * stride]);
        for i in 0..steps {
            if j + i >= discard {
                let theta = reduce(y.atan2(x));
                let b = ((theta * scale) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let t = driver.matrix(&buf[i * stride..]);
            let (u, w) = t.apply(x, y);
            let r = u.hypot(w);
            x = u / r;
            y = w / r;
        }
        j += steps;
    }
    let total = (n - discard) as f64;
    Ok(PhaseHistogram {
        mass: counts.iter().map(|c| *c as f64 / total).collect(),
        samples: (n - discard) as u64,
    })
}

/// `I_N(f) = (1/N) Σ f(θ_n)`.
pub fn birkhoff_sum(f: impl Fn(f64) -> Complex64, angles: &[f64]) -> Complex64 {
    let n = angles.len() as f64;
    angles.iter().map(|t| f(*t)).sum::<Complex64>() / n
}

/// `Î_N = (1/N) Σ g(S^n ω) f(θ_n)` for aligned `g` values and angles.
pub fn birkhoff_like_sum(g_values: &[f64], f: impl Fn(f64) -> Complex64, angles: &[f64]) -> Result<Complex64> {
    if g_values.len() != angles.len() {
        return Err(Error::Argument(format!(
            "potential window values ({}) and orbit ({}) are not aligned",
            g_values.len(),
            angles.len()
        )));
    }
    let n = angles.len() as f64;
    Ok(g_values.iter().zip(angles).map(|(g, t)| f(*t) * *g).sum::<Complex64>() / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDiffusion {
    pub theta: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub p_stderr: Vec<f64>,
    pub q_stderr: Vec<f64>,
    pub n_block: usize,
    pub samples: usize,
    /// `λ^{2η} N_block`.
    pub time: f64,
    /// Set when `λ^{2η} N_block > 0.1`, outside the expansion's validity.
    pub validity_warning: bool,
}

impl DriftDiffusion {
    pub const CSV_HEADER: &'static str = "theta,p_hat,p_stderr,q_hat,q_stderr";
}

/// Lifted phase increments `Δθ − k N_block` over one block from `theta`.
fn block_increment(setup: &AnomalySetup, lambda: f64, theta: f64, values: &[f64], n_block: usize) -> f64 {
    let stride = setup.window;
    let check_every = if wrap_half(setup.k).abs() < 1e-15 { 8 } else { 1 };
    let (mut x, mut y) = (theta.cos(), theta.sin());
    let mut last = theta;
    let mut lifted = 0.0;
    let mut since = 0;
    let affine = setup.affine_step(lambda);
    for j in 0..n_block {
        let t = match &affine {
            Some((m0, m1)) => *m0 + m1.scale(values[j]),
            None => setup.step(lambda, &values[j * stride..]),
        };
        let (u, w) = t.apply(x, y);
        x = u;
        y = w;
        since += 1;
        if since == check_every || j + 1 == n_block {
            let r = x.hypot(y);
            x /= r;
            y /= r;
            let now = y.atan2(x);
            lifted += wrap_half(now - last - since as f64 * setup.k);
            last = now;
            since = 0;
        }
    }
    lifted
}

/// Empirical drift and diffusion of the phase over blocks of `n_block` steps
/// started at each grid angle:
/// `p̂ = Var(Δθ)/(λ^{2η} N)` and `q̂ = 2 E(Δθ)/(λ^{2η} N)`.
///
/// Each grid point uses its own stream; consecutive blocks on that stream are
/// disjoint segments of one stationary sequence.
pub fn drift_diffusion_estimate(
    process: &PotentialProcess,
    setup: &AnomalySetup,
    lambda: f64,
    n_block: usize,
    samples: usize,
    grid: &[f64],
) -> Result<DriftDiffusion> {
    setup.check_lambda(lambda)?;
    if n_block == 0 || samples < 2 || grid.is_empty() {
        return Err(Error::Argument(
            "need n_block ≥ 1, samples ≥ 2 and a nonempty grid".into(),
        ));
    }
    process.validate()?;
    let time = lambda.powf(2.0 * setup.eta) * n_block as f64;
    let stride = setup.window;
    let per_point: Vec<(f64, f64, f64, f64)> = grid
        .par_iter()
        .enumerate()
        .map(|(g, &theta)| -> Result<(f64, f64, f64, f64)> {
            let mut sampler = process.sampler(g as u64)?;
            let mut buf = vec![0.0; n_block * stride];
            let incs: Vec<f64> = (0..samples)
                .map(|_| {
                    sampler.fill(&mut buf);
                    block_increment(setup, lambda, theta, &buf, n_block)
                })
                .collect();
            let (mean, mean_se) = mean_stderr(&incs);
            let centered: Vec<f64> = incs.iter().map(|d| (d - mean) * (d - mean)).collect();
            let (var, var_se) = mean_stderr(&centered);
            let var = var * samples as f64 / (samples - 1) as f64;
            Ok((var / time, var_se / time, 2.0 * mean / time, 2.0 * mean_se / time))
        })
        .collect::<Result<_>>()?;
    Ok(DriftDiffusion {
        theta: grid.to_vec(),
        p_hat: per_point.iter().map(|r| r.0).collect(),
        p_stderr: per_point.iter().map(|r| r.1).collect(),
        q_hat: per_point.iter().map(|r| r.2).collect(),
        q_stderr: per_point.iter().map(|r| r.3).collect(),
        n_block,
        samples,
        time,
        validity_warning: time > 0.1,
    })
}

/// First-order Richardson extrapolation in the block time: with blocks of `N`
/// and `N/2` steps, `p̂ = 2p̂(N/2) − p̂(N)` and likewise for `q̂`, removing the
/// `O(λ^{2η} N)` bias. The half-length run uses an independent seed.
pub fn drift_diffusion_richardson(
    process: &PotentialProcess,
    setup: &AnomalySetup,
    lambda: f64,
    n_block: usize,
    samples: usize,
    grid: &[f64],
) -> Result<DriftDiffusion> {
    if n_block < 2 {
        return Err(Error::Argument(format!(
            "Richardson extrapolation needs n_block ≥ 2, got {n_block}"
        )));
    }
    let full = drift_diffusion_estimate(process, setup, lambda, n_block, samples, grid)?;
    let half_process = process.with_seed(process.seed ^ 0x5851_f42d_4c95_7f2d);
    let half = drift_diffusion_estimate(&half_process, setup, lambda, n_block / 2, samples, grid)?;
    let combine = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(f, h)| 2.0 * h - f).collect() };
    let combine_se =
        |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(f, h)| (f * f + 4.0 * h * h).sqrt()).collect() };
    Ok(DriftDiffusion {
        p_hat: combine(&full.p_hat, &half.p_hat),
        q_hat: combine(&full.q_hat, &half.q_hat),
        p_stderr: combine_se(&full.p_stderr, &half.p_stderr),
        q_stderr: combine_se(&full.q_stderr, &half.q_stderr),
        ..full
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::ProcessKind;
    use crate::stats::log_log_slope;
    use crate::transfer::log_norm_path;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn iid(seed: u64) -> PotentialProcess {
        PotentialProcess::new(ProcessKind::bernoulli(1.0), seed)
    }

    fn mat() -> impl Strategy<Value = Mat2> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b, c, d)| Mat2::new(a, b, c, d))
    }

    fn traceless() -> impl Strategy<Value = Mat2> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b, c)| Mat2::new(a, b, c, -a))
    }

    #[test]
    fn action_examples() {
        assert_relative_eq!(projective_action(&Mat2::IDENTITY, 0.7), 0.7, max_relative = 1e-15);
        assert_relative_eq!(
            projective_action(&rotation(0.5), 2.9),
            (2.9 + 0.5) % PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            projective_action(&Mat2::diag(2.0, 0.5), PI / 4.0),
            0.25f64.atan(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn fourier_coefficient_examples() {
        let (v, u) = (0.7, -1.3);
        let f = fourier_coefficients(&Mat2::new(0.0, -u, v, 0.0));
        let i = Complex64::i();
        assert!((f.alpha - i * (v + u) / 2.0).norm() < 1e-15);
        assert!((f.beta - i * (u - v) / 2.0).norm() < 1e-15);
        assert!((f.gamma - Complex64::new((v * v - u * u) / 2.0, 0.0)).norm() < 1e-15);

        let f = fourier_coefficients(&Mat2::new(0.0, 0.0, v, 0.0));
        assert!((f.alpha - i * v / 2.0).norm() < 1e-15);
        assert!((f.beta + i * v / 2.0).norm() < 1e-15);
        assert!((f.gamma - Complex64::new(v * v / 2.0, 0.0)).norm() < 1e-15);

        let f = fourier_coefficients(&Mat2::ZERO);
        assert_eq!(f.alpha.norm() + f.beta.norm() + f.gamma.norm(), 0.0);
    }

    #[test]
    fn band_edge_polynomial_is_cos_squared() {
        let f = fourier_coefficients(&Mat2::new(0.0, 0.0, 1.3, 0.0));
        for i in 0..50 {
            let t = PI * i as f64 / 50.0;
            assert!((f.polynomial(t) - 1.3 * t.cos().powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn free_orbit_rotates_in_the_rotation_frame() {
        let k: f64 = 0.9;
        let setup = AnomalySetup::bulk(k).unwrap();
        let orbit = phase_orbit(
            &iid(1),
            PhaseDriver::Anomaly {
                setup: &setup,
                lambda: 0.0,
            },
            0.3,
            200,
        )
        .unwrap();
        for (j, t) in orbit.angles.iter().enumerate() {
            let expected = (0.3 + j as f64 * k).rem_euclid(PI);
            assert!(wrap_half(t - expected).abs() < 1e-11, "step {j}");
        }
        // raw mode: M maps the raw orbit onto the rotating one
        let (_, m) = rotation_frame(k).unwrap();
        let theta0 = projective_action(&m.inverse(), 0.3);
        let raw = phase_orbit(
            &iid(1),
            PhaseDriver::Raw {
                energy: 2.0 * k.cos(),
                lambda: 0.0,
            },
            theta0,
            200,
        )
        .unwrap();
        for (a, b) in raw.angles.iter().zip(&orbit.angles) {
            assert!(wrap_half(projective_action(&m, *a) - b).abs() < 1e-11);
        }
    }

    #[test]
    fn orbit_log_norms_match_transfer_accumulation() {
        let p = iid(4);
        let (e, lam, theta0) = (0.6, 0.5, 1.1);
        let orbit = phase_orbit(&p, PhaseDriver::Raw { energy: e, lambda: lam }, theta0, 20_000).unwrap();
        let total: f64 = orbit.log_norms.iter().sum();
        let direct = log_norm_path(&orbit.potential[..20_000], e, lam, theta0);
        assert!(
            (total - direct).abs() < 1e-9 * direct.abs().max(1.0),
            "{total} vs {direct}"
        );
    }

    #[test]
    fn phase_step_expansion_residual_scales() {
        let setup = AnomalySetup::band_edge(0.0);
        let lambdas = [1e-2, 1e-3, 1e-4];
        let mut worst = Vec::new();
        for &lam in &lambdas {
            let mut r: f64 = 0.0;
            for v in [-1.0, 1.0] {
                for i in 0..16 {
                    let theta = PI * (i as f64 + 0.5) / 16.0;
                    let exact = projective_action(&setup.step(lam, &[v]), theta);
                    let pred = phase_step_expansion(&setup, &[v], theta, lam);
                    r = r.max(wrap_half(exact - pred).abs());
                }
            }
            worst.push(r);
        }
        let slope = log_log_slope(&lambdas, &worst);
        assert!((slope - 1.0).abs() < 0.2, "slope {slope}, residuals {worst:?}");
    }

    #[test]
    fn log_norm_expansion_residual_scales() {
        for (setup, windows) in [
            (AnomalySetup::band_edge(0.0), vec![vec![1.0], vec![-1.0]]),
            (
                AnomalySetup::band_center(0.0),
                vec![vec![1.0, -1.0], vec![1.0, 1.0], vec![-1.0, 1.0]],
            ),
        ] {
            let lambdas = [1e-2, 1e-3, 1e-4];
            let mut worst = Vec::new();
            for &lam in &lambdas {
                let mut r: f64 = 0.0;
                for w in &windows {
                    for i in 0..16 {
                        let theta = PI * (i as f64 + 0.5) / 16.0;
                        r = r.max(log_norm_expansion_check(&setup, w, theta, lam).unwrap().abs());
                    }
                }
                worst.push(r);
            }
            let slope = log_log_slope(&lambdas, &worst);
            assert!(
                (slope - 3.0 * setup.eta).abs() < 0.2,
                "{:?}: slope {slope}, {worst:?}",
                setup.kind
            );
        }
    }

    #[test]
    fn zero_generators_give_zero_log_norm() {
        let setup = AnomalySetup::custom(1.0, -1.0, 0.0, 1, |_| Mat2::ZERO, |_| Mat2::ZERO);
        assert_eq!(
            log_norm_expansion_check(&setup, &[0.3], 0.4, 0.1).unwrap().abs() < 1e-15,
            true
        );
    }

    #[test]
    fn band_center_step_is_product_of_two_transfer_matrices() {
        let setup = AnomalySetup::band_center(0.5);
        let lam = 1e-2;
        let w = [1.0, -1.0];
        let nf = setup.normal_form(lam, &w);
        assert!(setup.step(lam, &w).max_abs_diff(&nf) < 5.0 * lam.powi(3));
    }

    #[test]
    fn birkhoff_sums() {
        let angles: Vec<f64> = (0..1000).map(|j| (0.2 + 0.37 * j as f64) % PI).collect();
        assert_relative_eq!(
            birkhoff_sum(|_| Complex64::new(1.0, 0.0), &angles).re,
            1.0,
            max_relative = 1e-15
        );
        assert!(matches!(
            birkhoff_like_sum(&[1.0; 10], |_| Complex64::new(1.0, 0.0), &angles),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn oscillatory_sum_decays_like_one_over_n() {
        let k: f64 = 1.0;
        let d = (k % (PI / 2.0)).min(PI / 2.0 - k % (PI / 2.0));
        let setup = AnomalySetup::bulk(k).unwrap();
        for n in [100usize, 1000, 10_000] {
            let orbit = phase_orbit(
                &iid(2),
                PhaseDriver::Anomaly {
                    setup: &setup,
                    lambda: 0.0,
                },
                0.1,
                n,
            )
            .unwrap();
            let s = birkhoff_sum(|t| Complex64::from_polar(1.0, 2.0 * t), &orbit.angles).norm();
            assert!(s <= 1.0 / (n as f64 * d), "n={n}: {s}");
        }
    }

    #[test]
    fn birkhoff_like_sum_decreases_with_coupling() {
        let k = 1.0;
        let setup = AnomalySetup::bulk(k).unwrap();
        // for i.i.d. disorder V_n is independent of θ_n and the sum is pure
        // noise; a correlated chain gives an O(λ) signal
        let p = PotentialProcess::new(ProcessKind::two_state(0.3), 6);
        let mut values = Vec::new();
        for lam in [0.1, 0.05, 0.025] {
            let orbit = phase_orbit(
                &p,
                PhaseDriver::Anomaly {
                    setup: &setup,
                    lambda: lam,
                },
                0.1,
                2_000_000,
            )
            .unwrap();
            let g = orbit.window_values(&WindowFn::potential()).unwrap();
            values.push(
                birkhoff_like_sum(&g, |t| Complex64::from_polar(1.0, 2.0 * t), &orbit.angles)
                    .unwrap()
                    .norm(),
            );
        }
        assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
    }

    #[test]
    fn histogram_is_stationary_along_the_orbit() {
        let setup = AnomalySetup::band_edge(0.0);
        let p = iid(3);
        let driver = PhaseDriver::Anomaly {
            setup: &setup,
            lambda: 1e-2,
        };
        let full = phase_histogram(&p, driver, 0.2, 2_000_000, 0, 32).unwrap();
        let half = phase_histogram(&p, driver, 0.2, 2_000_000, 1_000_000, 32).unwrap();
        assert!(full.tv_between(&half) < 0.02, "{}", full.tv_between(&half));
        let total: f64 = full.mass.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn drift_diffusion_flags_invalid_time() {
        let setup = AnomalySetup::band_edge(0.0);
        let dd = drift_diffusion_estimate(&iid(0), &setup, 1e-2, 100, 4, &[0.0]).unwrap();
        assert!(dd.validity_warning);
    }

    proptest! {
        #[test]
        fn action_is_a_group_action(a in mat(), b in mat(), theta in 0.0f64..PI) {
            prop_assume!(a.det().abs() > 0.1 && b.det().abs() > 0.1);
            let lhs = projective_action(&(a * b), theta);
            let rhs = projective_action(&a, projective_action(&b, theta));
            prop_assert!(wrap_half(lhs - rhs).abs() < 1e-12 * (1.0 + a.op_norm() * b.op_norm() / (a.det().abs() * b.det().abs())));
        }

        #[test]
        fn polynomial_reconstruction(p in traceless(), theta in 0.0f64..PI) {
            let f = fourier_coefficients(&p);
            prop_assert!((f.polynomial(theta) - polynomial_direct(&p, theta)).abs() < 1e-12);
        }
    }
}
