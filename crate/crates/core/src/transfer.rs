//! Transfer matrices, conjugation frames and Monte Carlo Lyapunov exponents.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PotentialProcess;
use crate::rng::aux_rng;
use crate::stats::mean_stderr;

/// Real 2×2 matrix `[[a, b], [c, d]]`.
///
/// Transfer matrices and rotations are unimodular; the band-edge scaling
/// `N_λ` is not, so the type does not enforce `det = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Unimodular matrices share the representation.
pub type SL2Real = Mat2;

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub fn diag(x: f64, y: f64) -> Self {
        Self::new(x, 0.0, 0.0, y)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.a, self.c, self.b, self.d)
    }

    pub fn inverse(&self) -> Self {
        let det = self.det();
        Self::new(self.d / det, -self.b / det, -self.c / det, self.a / det)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(s * self.a, s * self.b, s * self.c, s * self.d)
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * x + self.b * y, self.c * x + self.d * y)
    }

    /// `F · self · F⁻¹`.
    pub fn conjugate_by(&self, f: &Mat2) -> Self {
        *f * *self * f.inverse()
    }

    pub fn frobenius(&self) -> f64 {
        (self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d).sqrt()
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        let f2 = self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d;
        let det = self.det();
        let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
        (0.5 * (f2 + disc)).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        (self.a - other.a)
            .abs()
            .max((self.b - other.b).abs())
            .max((self.c - other.c).abs())
            .max((self.d - other.d).abs())
    }

    /// `exp(A)` for traceless `A`, using `A² = −det(A)·1`.
    pub fn exp_traceless(&self) -> Self {
        let delta = -self.det();
        let (ch, sh) = if delta.abs() < 1e-8 {
            (
                1.0 + delta / 2.0 + delta * delta / 24.0,
                1.0 + delta / 6.0 + delta * delta / 120.0,
            )
        } else if delta > 0.0 {
            let r = delta.sqrt();
            (r.cosh(), r.sinh() / r)
        } else {
            let r = (-delta).sqrt();
            (r.cos(), r.sin() / r)
        };
        Mat2::IDENTITY.scale(ch) + self.scale(sh)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;

    #[inline]
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl Add for Mat2 {
    type Output = Mat2;

    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;

    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

/// `[[E − λv, −1], [1, 0]]`.
#[inline]
pub fn transfer_matrix(energy: f64, lambda: f64, v: f64) -> Mat2 {
    Mat2::new(energy - lambda * v, -1.0, 1.0, 0.0)
}

pub fn rotation(k: f64) -> Mat2 {
    let (s, c) = k.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// `(R_k, M)` with `M T M⁻¹ = R_k` for the free transfer matrix at `E = 2 cos k`.
pub fn rotation_frame(k: f64) -> Result<(Mat2, Mat2)> {
    let (s, c) = k.sin_cos();
    if s.abs() < 1e-12 {
        return Err(Error::SingularFrame { k });
    }
    if s < 0.0 {
        return Err(Error::Argument(format!("rotation frame needs sin k > 0, got k = {k}")));
    }
    let r = s.sqrt();
    Ok((rotation(k), Mat2::new(s / r, 0.0, -c / r, 1.0 / r)))
}

/// `(N, N_λ)` for the lower band edge `E = −2 + ελ^{4/3}`.
///
/// With `N = [[1,0],[−1,1]]` the Jordan form is reached by `N⁻¹ T N`; the
/// full change of basis is [`band_edge_conjugation`].
pub fn band_edge_frame(lambda: f64) -> Result<(Mat2, Mat2)> {
    if !(lambda > 0.0) {
        return Err(Error::Degenerate(format!(
            "band-edge scaling needs lambda > 0, got {lambda}"
        )));
    }
    Ok((Mat2::new(1.0, 0.0, -1.0, 1.0), Mat2::diag(lambda.powf(2.0 / 3.0), 1.0)))
}

/// `F = N_λ N⁻¹`, so that `F T F⁻¹ = −exp(λ^{1/3} P_1 + λ^{2/3} P_2 + O(λ))`.
pub fn band_edge_conjugation(lambda: f64) -> Result<Mat2> {
    let (n, n_lambda) = band_edge_frame(lambda)?;
    Ok(n_lambda * n.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub steps: u64,
    pub replicas: usize,
    pub renorm_every: usize,
    /// Fixed conjugation `F`; products of `F T F⁻¹` are used instead of `T`.
    pub frame: Option<Mat2>,
}

impl LyapunovConfig {
    pub fn new(steps: u64, replicas: usize) -> Self {
        Self {
            steps,
            replicas,
            renorm_every: 64,
            frame: None,
        }
    }

    pub fn with_frame(mut self, frame: Mat2) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn with_renorm_every(mut self, m: usize) -> Self {
        self.renorm_every = m;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub gamma: f64,
    pub stderr: f64,
    pub steps: u64,
    pub replicas: usize,
    /// Per-replica exponents in replica order.
    pub per_replica: Vec<f64>,
    /// Smallest renormalization interval actually used.
    pub renorm_every: usize,
    /// Set if an overflow forced the interval to be halved.
    pub renorm_reduced: bool,
}

impl LyapunovEstimate {
    pub const CSV_HEADER: &'static str = "E,lambda,gamma,stderr,steps,replicas";

    pub fn csv_row(&self, energy: f64, lambda: f64) -> String {
        format!(
            "{energy:.12e},{lambda:.12e},{:.12e},{:.6e},{},{}",
            self.gamma, self.stderr, self.steps, self.replicas
        )
    }
}

/// Affine dependence of the (conjugated) step matrix on the potential value.
#[derive(Debug, Clone, Copy)]
struct AffineStep {
    base: Mat2,
    slope: Mat2,
}

impl AffineStep {
    fn new(energy: f64, lambda: f64, frame: Option<Mat2>) -> Self {
        let base = transfer_matrix(energy, 0.0, 0.0);
        let slope = Mat2::new(-lambda, 0.0, 0.0, 0.0);
        match frame {
            Some(f) => {
                let fi = f.inverse();
                Self {
                    base: f * base * fi,
                    slope: f * slope * fi,
                }
            }
            None => Self { base, slope },
        }
    }

    #[inline]
    fn at(&self, v: f64) -> Mat2 {
        Mat2::new(
            self.base.a + v * self.slope.a,
            self.base.b + v * self.slope.b,
            self.base.c + v * self.slope.c,
            self.base.d + v * self.slope.d,
        )
    }
}

struct VectorRun {
    log_norm: f64,
    renorm_every: usize,
    reduced: bool,
}

/// Propagate `(x, y)` through the step matrices for `values`, renormalizing
/// every `m` steps and halving `m` if a block overflows.
fn propagate(step: &AffineStep, values: &[f64], x: &mut f64, y: &mut f64, m: &mut usize, reduced: &mut bool) -> f64 {
    let mut log_norm = 0.0;
    let mut start = 0;
    while start < values.len() {
        let end = (start + *m).min(values.len());
        let (mut u, mut w) = (*x, *y);
        for &v in &values[start..end] {
            let t = step.at(v);
            let nu = t.a * u + t.b * w;
            w = t.c * u + t.d * w;
            u = nu;
        }
        let r = u.hypot(w);
        if !r.is_finite() || r > 1e280 || r < 1e-280 {
            if *m == 1 {
                // a single step cannot overflow for finite inputs
                *x = f64::NAN;
                return f64::NAN;
            }
            *m /= 2;
            *reduced = true;
            continue;
        }
        log_norm += r.ln();
        *x = u / r;
        *y = w / r;
        start = end;
    }
    log_norm
}

fn run_replica(process: &PotentialProcess, step: &AffineStep, cfg: &LyapunovConfig, replica: u64) -> Result<VectorRun> {
    let mut sampler = process.sampler(replica)?;
    let theta0 = PI * aux_rng(process.seed, replica).gen::<f64>();
    let (mut x, mut y) = (theta0.cos(), theta0.sin());
    let mut m = cfg.renorm_every;
    let mut reduced = false;
    let mut buf = vec![0.0; 1 << 14];
    let mut remaining = cfg.steps;
    let mut log_norm = 0.0;
    while remaining > 0 {
        let len = (remaining as usize).min(buf.len());
        sampler.fill(&mut buf[..len]);
        log_norm += propagate(step, &buf[..len], &mut x, &mut y, &mut m, &mut reduced);
        remaining -= len as u64;
    }
    if !log_norm.is_finite() {
        return Err(Error::Numerical(
            "non-finite log-norm in transfer-matrix product".into(),
        ));
    }
    Ok(VectorRun {
        log_norm,
        renorm_every: m,
        reduced,
    })
}

/// Monte Carlo estimate of `γ_λ(E)` from the growth of a propagated unit
/// vector, averaged over independent replicas.
pub fn lyapunov_mc(
    process: &PotentialProcess,
    energy: f64,
    lambda: f64,
    cfg: &LyapunovConfig,
) -> Result<LyapunovEstimate> {
    if cfg.steps < 10_000 {
        return Err(Error::Argument(format!("steps = {} is below 10^4", cfg.steps)));
    }
    if cfg.renorm_every == 0 || cfg.renorm_every > 1000 {
        return Err(Error::Argument(format!(
            "renorm_every = {} must lie in 1..=1000",
            cfg.renorm_every
        )));
    }
    if cfg.replicas == 0 {
        return Err(Error::Argument("at least one replica is needed".into()));
    }
    process.validate()?;
    let step = AffineStep::new(energy, lambda, cfg.frame);
    let runs: Vec<VectorRun> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| run_replica(process, &step, cfg, r))
        .collect::<Result<_>>()?;
    let per_replica: Vec<f64> = runs.iter().map(|r| r.log_norm / cfg.steps as f64).collect();
    let (gamma, stderr) = mean_stderr(&per_replica);
    Ok(LyapunovEstimate {
        gamma,
        stderr,
        steps: cfg.steps,
        replicas: cfg.replicas,
        per_replica,
        renorm_every: runs.iter().map(|r| r.renorm_every).min().unwrap_or(cfg.renorm_every),
        renorm_reduced: runs.iter().any(|r| r.reduced),
    })
}

/// `Σ_n log‖T_n e_{θ_n}‖` for a given potential path starting at angle `theta0`.
pub fn log_norm_path(values: &[f64], energy: f64, lambda: f64, theta0: f64) -> f64 {
    let step = AffineStep::new(energy, lambda, None);
    let (mut x, mut y) = (theta0.cos(), theta0.sin());
    let mut m = 64;
    let mut reduced = false;
    propagate(&step, values, &mut x, &mut y, &mut m, &mut reduced)
}

/// Running product `T(n) = T_n ⋯ T_1` kept as a normalized matrix plus a
/// log scale. The determinant is tracked from the factors, since the
/// normalized product becomes numerically rank one.
#[derive(Debug, Clone, Copy)]
pub struct ProductAccumulator {
    matrix: Mat2,
    log_scale: f64,
    log_det: f64,
}

impl Default for ProductAccumulator {
    fn default() -> Self {
        Self {
            matrix: Mat2::IDENTITY,
            log_scale: 0.0,
            log_det: 0.0,
        }
    }
}

impl ProductAccumulator {
    /// Left-multiply by `t`.
    #[inline]
    pub fn push(&mut self, t: &Mat2) {
        self.matrix = *t * self.matrix;
        self.log_det += t.det().abs().ln();
        let f = self.matrix.frobenius();
        if f > 1e100 {
            self.matrix = self.matrix.scale(1.0 / f);
            self.log_scale += f.ln();
        }
    }

    pub fn log_op_norm(&self) -> f64 {
        self.matrix.op_norm().ln() + self.log_scale
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_det
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormGrowth {
    /// Fraction of samples with `max_{0≤n≤N} ‖T(n)‖² ≥ e^{ĉ√N}`.
    pub fraction: f64,
    /// Lower bound `1 − e^{−ĉ√N}` asserted for that fraction.
    pub bound: f64,
    pub n: usize,
    pub samples: usize,
    pub c_hat: f64,
}

impl NormGrowth {
    pub fn holds(&self) -> bool {
        self.fraction >= self.bound
    }
}

/// Empirical probability that the transfer-matrix products reach
/// `‖T(n)‖² ≥ e^{ĉ√N}` for some `n ≤ N`, with `T(0) = 1`.
pub fn norm_growth_probability(
    process: &PotentialProcess,
    energy: f64,
    lambda: f64,
    n: usize,
    samples: usize,
    c_hat: f64,
) -> Result<NormGrowth> {
    if samples == 0 {
        return Err(Error::Argument("at least one sample is needed".into()));
    }
    process.validate()?;
    let threshold = c_hat * (n as f64).sqrt();
    let hits: Vec<bool> = (0..samples as u64)
        .into_par_iter()
        .map(|s| -> Result<bool> {
            let mut sampler = process.sampler(s)?;
            let mut acc = ProductAccumulator::default();
            let mut best = 2.0 * acc.log_op_norm();
            for _ in 0..n {
                acc.push(&transfer_matrix(energy, lambda, sampler.next_value()));
                best = best.max(2.0 * acc.log_op_norm());
            }
            Ok(best >= threshold)
        })
        .collect::<Result<_>>()?;
    let count = hits.iter().filter(|h| **h).count();
    Ok(NormGrowth {
        fraction: count as f64 / samples as f64,
        bound: 1.0 - (-threshold).exp(),
        n,
        samples,
        c_hat,
    })
}
