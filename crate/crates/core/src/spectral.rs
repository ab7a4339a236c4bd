//! Spectral density `D_V(k) = Σ_n e^{ikn} E(V · V∘S^n)` and the bilinear
//! correlation form.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{stationary_distribution, DecayKind, PotentialProcess, ProcessKind};
use crate::stats::mean_stderr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    Periodogram,
    AutocovSum,
    ExactMarkov,
    ExactMovingAverage,
}

impl fmt::Display for SpectralMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SpectralMethod::Periodogram => "periodogram",
            SpectralMethod::AutocovSum => "autocov_sum",
            SpectralMethod::ExactMarkov => "exact_markov",
            SpectralMethod::ExactMovingAverage => "exact_moving_average",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensityEstimate {
    pub k: f64,
    pub value: f64,
    pub stderr: f64,
    pub method: SpectralMethod,
}

impl SpectralDensityEstimate {
    pub const CSV_HEADER: &'static str = "k,value,stderr,method";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.6e},{}",
            self.k, self.value, self.stderr, self.method
        )
    }

    fn exact(k: f64, value: f64, method: SpectralMethod) -> Self {
        Self {
            k,
            value,
            stderr: 0.0,
            method,
        }
    }
}

fn reduce_angle(k: f64) -> f64 {
    k.rem_euclid(2.0 * PI)
}

/// Mean over `segments` independent streams of `(1/N)|Σ_{n<N} e^{ikn} V_n|²`.
pub fn periodogram_density(
    process: &PotentialProcess,
    k: f64,
    segment_len: usize,
    segments: usize,
) -> Result<SpectralDensityEstimate> {
    if segment_len < 1000 {
        return Err(Error::Argument(format!("segment length {segment_len} is below 1000")));
    }
    if segments < 8 {
        return Err(Error::Argument(format!(
            "{segments} segments given, at least 8 are needed"
        )));
    }
    process.validate()?;
    let values: Vec<f64> = (0..segments as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut sampler = process.sampler(r)?;
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..segment_len {
                let (s, c) = (k * n as f64).sin_cos();
                acc += Complex64::new(c, s) * sampler.next_value();
            }
            Ok(acc.norm_sqr() / segment_len as f64)
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_stderr(&values);
    Ok(SpectralDensityEstimate {
        k: reduce_angle(k),
        value,
        stderr,
        method: SpectralMethod::Periodogram,
    })
}

/// `C(0) + 2 Σ_{m=1}^{M} cos(km) C(m)` from empirical covariances; the
/// error bar is the spread over `blocks` disjoint streams of length `n`.
pub fn autocov_sum_density(
    process: &PotentialProcess,
    k: f64,
    cutoff: usize,
    n: usize,
    blocks: usize,
) -> Result<SpectralDensityEstimate> {
    if cutoff >= n {
        return Err(Error::Argument(format!("cutoff {cutoff} must be below n {n}")));
    }
    if blocks < 2 {
        return Err(Error::Argument(
            "at least two blocks are needed for an error bar".into(),
        ));
    }
    process.validate()?;
    let values: Vec<f64> = (0..blocks as u64)
        .into_par_iter()
        .map(|b| -> Result<f64> {
            let mut sampler = process.sampler(b)?;
            let mut v = vec![0.0; n];
            sampler.fill(&mut v);
            let c = cross_covariance(&v, &v, cutoff);
            Ok(c[0] + 2.0 * (1..=cutoff).map(|m| (k * m as f64).cos() * c[m]).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_stderr(&values);
    Ok(SpectralDensityEstimate {
        k: reduce_angle(k),
        value,
        stderr,
        method: SpectralMethod::AutocovSum,
    })
}

/// Exact `D_V(k)` of a finite-state chain via the resolvent of the transition
/// operator on mean-zero functions.
pub fn exact_markov_density(transition: &[Vec<f64>], values: &[f64], k: f64) -> Result<f64> {
    let probe = PotentialProcess::new(
        ProcessKind::MarkovChain {
            transition: transition.to_vec(),
            values: values.to_vec(),
        },
        0,
    );
    probe.validate()?;
    let s = transition.len();
    let pi = stationary_distribution(transition)?;
    let z = Complex64::from_polar(1.0, k);
    // (I − zP + 1πᵀ) x = z P V has the mean-zero solution x = Σ_{n≥1} (zP)^n V
    let a = DMatrix::from_fn(s, s, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        Complex64::new(delta + pi[j], 0.0) - z * transition[i][j]
    });
    let pv = DVector::from_fn(s, |i, _| z * (0..s).map(|j| transition[i][j] * values[j]).sum::<f64>());
    let x = a
        .lu()
        .solve(&pv)
        .ok_or_else(|| Error::Divergent(format!("resolvent is singular at k = {k} (periodic chain)")))?;
    let c0: f64 = (0..s).map(|i| pi[i] * values[i] * values[i]).sum();
    let cross: f64 = (0..s).map(|i| pi[i] * values[i] * x[i].re).sum();
    Ok(c0 + 2.0 * cross)
}

/// Exact `D_V(k)` for `V = Σ a^j (σ_j − 1/2)`.
pub fn exact_moving_average_density(rate: f64, k: f64) -> f64 {
    0.25 / (1.0 - 2.0 * rate * k.cos() + rate * rate)
}

/// Exact density where one is available for the process kind.
pub fn exact_density(process: &PotentialProcess, k: f64) -> Option<Result<SpectralDensityEstimate>> {
    let k = reduce_angle(k);
    match &process.kind {
        ProcessKind::Iid { .. } => {
            let var = process.variance()?;
            Some(Ok(SpectralDensityEstimate::exact(k, var, SpectralMethod::ExactMarkov)))
        }
        ProcessKind::MarkovChain { transition, values } => Some(
            exact_markov_density(transition, values, k)
                .map(|v| SpectralDensityEstimate::exact(k, v, SpectralMethod::ExactMarkov)),
        ),
        ProcessKind::MovingAverageShift { rate } => Some(Ok(SpectralDensityEstimate::exact(
            k,
            exact_moving_average_density(*rate, k),
            SpectralMethod::ExactMovingAverage,
        ))),
        // two-tap moving average amplitude·(σ_1 − σ_0)
        ProcessKind::Cocycle { amplitude } => Some(Ok(SpectralDensityEstimate::exact(
            k,
            0.5 * amplitude * amplitude * (1.0 - k.cos()),
            SpectralMethod::ExactMovingAverage,
        ))),
        ProcessKind::IntermittentMap { .. } => None,
    }
}

/// A function of the window `(V_n, …, V_{n+width−1})`.
#[derive(Clone)]
pub struct WindowFn {
    width: usize,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for WindowFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WindowFn")
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl WindowFn {
    pub fn new(width: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        assert!(width >= 1);
        Self { width, f: Arc::new(f) }
    }

    /// `g = V`.
    pub fn potential() -> Self {
        Self::new(1, |w| w[0])
    }

    /// `g = Σ_j c_j V∘S^j`.
    pub fn linear(coefficients: Vec<f64>) -> Self {
        let width = coefficients.len();
        Self::new(width, move |w| coefficients.iter().zip(w).map(|(c, v)| c * v).sum())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn eval(&self, window: &[f64]) -> f64 {
        (self.f)(&window[..self.width])
    }

    fn series(&self, v: &[f64], len: usize) -> Vec<f64> {
        (0..len).map(|i| self.eval(&v[i..])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationForm {
    pub value: f64,
    /// Bound (exponential mixing) or size of the extrapolated correction
    /// (power-law mixing) of the part of the series beyond the cutoff.
    pub tail: f64,
    pub cutoff: usize,
}

/// Default truncation lag for the declared mixing profile.
pub fn default_cutoff(process: &PotentialProcess) -> Result<usize> {
    let profile = process
        .declared_mixing()
        .ok_or_else(|| Error::Divergent("process has no summable correlation decay".into()))?;
    match profile.decay_kind {
        DecayKind::Exponential => Ok((40.0 / profile.exponent).ceil() as usize),
        DecayKind::PowerLaw => Ok(10_000),
    }
}

/// `⟨g1, g2⟩_Ω = E(g1 g2) + 2 Σ_{m=1}^{M} E(g1 · g2∘S^m)` estimated from one
/// stream of length `n`, plus the tail beyond `M`.
pub fn correlation_form(
    g1: &WindowFn,
    g2: &WindowFn,
    process: &PotentialProcess,
    cutoff: usize,
    n: usize,
) -> Result<CorrelationForm> {
    let profile = process
        .declared_mixing()
        .ok_or_else(|| Error::Divergent("process has no summable correlation decay".into()))?;
    if profile.decay_kind == DecayKind::PowerLaw && profile.exponent <= 1.0 {
        return Err(Error::Divergent(format!(
            "correlations decay like m^-{}, the form needs an exponent above 1",
            profile.exponent
        )));
    }
    let width = g1.width.max(g2.width);
    if n < width + 2 * cutoff + 1 {
        return Err(Error::Argument(format!("n = {n} is too short for cutoff {cutoff}")));
    }
    let v = crate::potential::sample_stream(process, n)?;
    let len = n + 1 - width;
    let a = g1.series(&v, len);
    let b = g2.series(&v, len);
    let c = cross_covariance(&a, &b, cutoff);
    let value = c[0] + 2.0 * c[1..].iter().sum::<f64>();
    let tail = match profile.decay_kind {
        DecayKind::Exponential => {
            let r = profile.exponent;
            let bound = 2.0 * profile.constant * (-r * (cutoff as f64 + 1.0)).exp() / (1.0 - (-r).exp());
            return Ok(CorrelationForm {
                value,
                tail: bound,
                cutoff,
            });
        }
        DecayKind::PowerLaw => {
            // amplitude fitted on the upper part of the lag range at the declared exponent
            let alpha = profile.exponent;
            let lo = (cutoff / 4).max(1);
            let (mut num, mut den) = (0.0, 0.0);
            for (m, cm) in c.iter().enumerate().skip(lo) {
                let w = (m as f64).powf(-alpha);
                num += cm * w;
                den += w * w;
            }
            let amp = if den > 0.0 { num / den } else { 0.0 };
            2.0 * amp * (cutoff as f64 + 0.5).powf(1.0 - alpha) / (alpha - 1.0)
        }
    };
    Ok(CorrelationForm {
        value: value + tail,
        tail: tail.abs(),
        cutoff,
    })
}

/// `c[m] = (1/(n−m)) Σ_i a_i b_{i+m}` for `m = 0..=max_lag`.
pub fn cross_covariance(a: &[f64], b: &[f64], max_lag: usize) -> Vec<f64> {
    let n = a.len().min(b.len());
    assert!(max_lag < n);
    let raw: Vec<f64> = if max_lag <= 64 {
        (0..=max_lag)
            .map(|m| a[..n - m].iter().zip(&b[m..n]).map(|(x, y)| x * y).sum())
            .collect()
    } else {
        let len = (n + max_lag + 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut fa: Vec<Complex64> = (0..len)
            .map(|i| Complex64::new(if i < n { a[i] } else { 0.0 }, 0.0))
            .collect();
        let mut fb: Vec<Complex64> = (0..len)
            .map(|i| Complex64::new(if i < n { b[i] } else { 0.0 }, 0.0))
            .collect();
        fwd.process(&mut fa);
        fwd.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x = x.conj() * y;
        }
        inv.process(&mut fa);
        fa[..=max_lag].iter().map(|z| z.re / len as f64).collect()
    };
    raw.into_iter().enumerate().map(|(m, s)| s / (n - m) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn chain() -> PotentialProcess {
        PotentialProcess::new(ProcessKind::two_state(0.3), 41)
    }

    fn two_state_exact(a: f64, k: f64) -> f64 {
        (1.0 - a * a) / (1.0 - 2.0 * a * k.cos() + a * a)
    }

    #[test]
    fn markov_resolvent_matches_geometric_series() {
        let t = vec![vec![0.7, 0.3], vec![0.3, 0.7]];
        let v = vec![1.0, -1.0];
        for k in [0.0, PI / 3.0, PI / 2.0, PI, 4.0] {
            let d = exact_markov_density(&t, &v, k).unwrap();
            assert_relative_eq!(d, two_state_exact(0.4, k), max_relative = 1e-13);
        }
        let d = exact_markov_density(&t, &v, PI).unwrap();
        assert_relative_eq!(d, 0.84 / 1.96, max_relative = 1e-14);
    }

    #[test]
    fn iid_as_markov_chain_is_flat() {
        let t = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        for k in [0.0, 1.0, 2.0, PI] {
            assert_relative_eq!(
                exact_markov_density(&t, &[1.0, -1.0], k).unwrap(),
                1.0,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn markov_resolvent_matches_truncated_covariance_sum() {
        // three-state chain, oracle by explicit powers of P
        let t = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2]];
        let pi = stationary_distribution(&t).unwrap();
        let raw = [1.0, -0.5, 2.0];
        let mean: f64 = pi.iter().zip(&raw).map(|(p, v)| p * v).sum();
        let v: Vec<f64> = raw.iter().map(|x| x - mean).collect();
        let k = 0.9;
        let mut pv = v.clone();
        let mut sum = pi.iter().zip(&v).map(|(p, x)| p * x * x).sum::<f64>();
        for n in 1..400 {
            pv = (0..3).map(|i| (0..3).map(|j| t[i][j] * pv[j]).sum()).collect();
            let c: f64 = (0..3).map(|i| pi[i] * v[i] * pv[i]).sum();
            sum += 2.0 * (k * n as f64).cos() * c;
        }
        assert_relative_eq!(exact_markov_density(&t, &v, k).unwrap(), sum, max_relative = 1e-12);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            exact_markov_density(&t, &[1.0, -1.0], 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn periodogram_of_white_noise_is_flat() {
        let p = PotentialProcess::new(ProcessKind::bernoulli(1.0), 3);
        for k in [0.0, PI / 3.0, PI / 2.0, PI] {
            let e = periodogram_density(&p, k, 4000, 16).unwrap();
            assert!((e.value - 1.0).abs() <= 3.0 * e.stderr, "{e:?}");
        }
    }

    #[test]
    fn periodogram_matches_exact_oracles() {
        let processes = [
            chain(),
            PotentialProcess::new(ProcessKind::MovingAverageShift { rate: 0.5 }, 4),
            PotentialProcess::new(ProcessKind::Cocycle { amplitude: 1.0 }, 5),
        ];
        for p in &processes {
            for k in [0.0, PI / 3.0, PI / 2.0, PI] {
                let est = periodogram_density(p, k, 20_000, 32).unwrap();
                let exact = exact_density(p, k).unwrap().unwrap().value;
                if exact == 0.0 {
                    // only the O(1/N) finite-segment bias survives at a zero of D
                    assert!(est.value <= 2.0 / 20_000.0, "{est:?}");
                    continue;
                }
                let gap = (est.value - exact).abs();
                assert!(
                    gap <= (0.05 * exact).max(3.0 * est.stderr),
                    "{:?} k={k}: {est:?} vs {exact}",
                    p.kind
                );
            }
        }
    }

    #[test]
    fn periodogram_is_symmetric_in_k() {
        let p = chain();
        let a = periodogram_density(&p, 1.0, 4000, 16).unwrap();
        let b = periodogram_density(&p, 2.0 * PI - 1.0, 4000, 16).unwrap();
        // same streams: conjugate sums, identical moduli
        assert_relative_eq!(a.value, b.value, max_relative = 1e-9);
        assert!(a.value >= -3.0 * a.stderr);
    }

    #[test]
    fn cocycle_density_vanishes_at_zero() {
        let p = PotentialProcess::new(ProcessKind::Cocycle { amplitude: 1.0 }, 9);
        let zero = periodogram_density(&p, 0.0, 10_000, 100).unwrap();
        let pi = periodogram_density(&p, PI, 10_000, 100).unwrap();
        assert!(zero.value <= 1e-2, "{zero:?}");
        assert!((pi.value - 1.0).abs() < 4.0 * pi.stderr, "{pi:?}");
    }

    #[test]
    fn autocov_sum_agrees_with_exact() {
        let p = chain();
        let e = autocov_sum_density(&p, PI / 3.0, 60, 200_000, 8).unwrap();
        let exact = two_state_exact(0.4, PI / 3.0);
        assert!((e.value - exact).abs() < 4.0 * e.stderr + 1e-3, "{e:?} vs {exact}");
    }

    #[test]
    fn correlation_form_cases() {
        let iid = PotentialProcess::new(ProcessKind::bernoulli(1.0), 1);
        let f = correlation_form(&WindowFn::potential(), &WindowFn::potential(), &iid, 5, 1_000_000).unwrap();
        assert!((f.value - 1.0).abs() < 1e-2, "{f:?}");

        let c = chain();
        let m = default_cutoff(&c).unwrap();
        assert_eq!(m, (40.0 / -(0.4f64.ln())).ceil() as usize);
        let f = correlation_form(&WindowFn::potential(), &WindowFn::potential(), &c, m, 1_000_000).unwrap();
        assert!(
            (f.value - exact_markov_density(&[vec![0.7, 0.3], vec![0.3, 0.7]], &[1.0, -1.0], 0.0).unwrap()).abs()
                < 1e-2 * 2.34 + 2e-2,
            "{f:?}"
        );
    }

    #[test]
    fn correlation_form_with_coboundary_partner() {
        // g2 = V∘S − V: brute-force truncated double sum on the same stream
        let c = chain();
        let n = 200_000;
        let m = 30;
        let g2 = WindowFn::linear(vec![-1.0, 1.0]);
        let f = correlation_form(&WindowFn::potential(), &g2, &c, m, n).unwrap();
        let v = crate::potential::sample_stream(&c, n).unwrap();
        let len = n - 1;
        let b: Vec<f64> = (0..len).map(|i| v[i + 1] - v[i]).collect();
        let mut brute = 0.0;
        for lag in 0..=m {
            let s: f64 = (0..len - lag).map(|i| v[i] * b[i + lag]).sum::<f64>() / (len - lag) as f64;
            brute += if lag == 0 { s } else { 2.0 * s };
        }
        assert_relative_eq!(f.value, brute, max_relative = 1e-9);
        // analytic value −C(0) − C(1) = −1.4
        assert!((f.value + 1.4).abs() < 0.05, "{f:?}");
    }

    #[test]
    fn power_law_form_needs_summable_tail() {
        let p = PotentialProcess::new(ProcessKind::IntermittentMap { z: 0.6 }, 0);
        let err = correlation_form(&WindowFn::potential(), &WindowFn::potential(), &p, 100, 10_000);
        assert!(matches!(err, Err(Error::Divergent(_))));
    }

    #[test]
    fn fft_and_direct_cross_covariance_agree() {
        let v = crate::potential::sample_stream(&chain(), 5000).unwrap();
        let w: Vec<f64> = v.iter().map(|x| x * 0.5 + 0.1).collect();
        let fast = cross_covariance(&v, &w, 100);
        for m in [0usize, 1, 17, 64, 100] {
            let direct: f64 = (0..5000 - m).map(|i| v[i] * w[i + m]).sum::<f64>() / (5000 - m) as f64;
            assert!((fast[m] - direct).abs() < 1e-12, "lag {m}");
        }
    }

    proptest! {
        #[test]
        fn exact_two_state_density_is_positive_and_even(p in 0.01f64..0.99, k in 0.0f64..(2.0 * PI)) {
            let t = vec![vec![1.0 - p, p], vec![p, 1.0 - p]];
            let d1 = exact_markov_density(&t, &[1.0, -1.0], k).unwrap();
            let d2 = exact_markov_density(&t, &[1.0, -1.0], 2.0 * PI - k).unwrap();
            prop_assert!(d1 > 0.0);
            prop_assert!((d1 - d2).abs() <= 1e-10 * d1.max(1.0));
            prop_assert!((d1 - two_state_exact(1.0 - 2.0 * p, k)).abs() <= 1e-9 * d1.max(1.0));
        }
    }
}
