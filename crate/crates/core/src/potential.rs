//! Stationary, centered potential sequences `V(S^n ω)`.
//!
//! A [`PotentialProcess`] is an immutable description (kind, parameters,
//! seed, burn-in). Values are drawn through a [`Sampler`] that owns its own
//! generator derived from `(seed, stream)`, so any number of streams can be
//! sampled concurrently and every stream is reproducible bit for bit.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{aux_rng, stream_rng, StreamRng};
use crate::stats::linear_fit;

/// Default burn-in for processes started away from stationarity.
pub const DEFAULT_BURN_IN: u64 = 10_000;

/// Terms `a^k` below this are dropped from the moving-average sum.
const MA_TRUNCATION: f64 = 1e-14;

/// Orbit length used to estimate the invariant mean of the intermittent map.
const INTERMITTENT_CALIBRATION_STEPS: usize = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IidDistribution {
    /// `±amplitude` with probability 1/2 each.
    Bernoulli,
    /// Uniform on `[-amplitude, amplitude]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    Iid {
        distribution: IidDistribution,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Finite-state chain with row-stochastic `transition` and observable
    /// `values[state]`, which must be centered under the stationary law.
    MarkovChain {
        transition: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
    /// `V(ω) = Σ_{k≥0} rate^k (σ_k − 1/2)` over i.i.d. fair bits.
    MovingAverageShift { rate: f64 },
    /// Pomeau-Manneville type map `x ↦ x (1 + x^z) mod 1`, observable
    /// `x − mean`.
    IntermittentMap { z: f64 },
    /// Coboundary `V = v∘S − v` with `v(ω) = amplitude · σ_0` over fair bits.
    Cocycle {
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ProcessKind {
    pub fn bernoulli(amplitude: f64) -> Self {
        ProcessKind::Iid {
            distribution: IidDistribution::Bernoulli,
            amplitude,
        }
    }

    /// Symmetric two-state chain with flip probability `flip` and `V = ±1`.
    pub fn two_state(flip: f64) -> Self {
        ProcessKind::MarkovChain {
            transition: vec![vec![1.0 - flip, flip], vec![flip, 1.0 - flip]],
            values: vec![1.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialProcess {
    #[serde(flatten)]
    pub kind: ProcessKind,
    #[serde(default)]
    pub seed: u64,
    /// Discarded initial steps; `None` selects the per-kind default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Exponential,
    PowerLaw,
}

/// Correlation decay `|C(m)| ≲ constant · e^{-exponent m}` or
/// `constant · m^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub decay_kind: DecayKind,
    pub exponent: f64,
    pub constant: f64,
}

impl MixingProfile {
    pub fn exponential(rate: f64, constant: f64) -> Self {
        Self {
            decay_kind: DecayKind::Exponential,
            exponent: rate,
            constant,
        }
    }

    pub fn power_law(alpha: f64, constant: f64) -> Self {
        Self {
            decay_kind: DecayKind::PowerLaw,
            exponent: alpha,
            constant,
        }
    }
}

/// Result of fitting a decay law to covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingFit {
    Decay(MixingProfile),
    /// No lag above the noise floor; the exponent is undefined.
    White,
}

struct MarkovData {
    cumulative: Vec<Vec<f64>>,
    values: Vec<f64>,
    stationary: Vec<f64>,
}

impl PotentialProcess {
    pub fn new(kind: ProcessKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            burn_in: None,
        }
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn burn_in(&self) -> u64 {
        self.burn_in.unwrap_or(match self.kind {
            ProcessKind::MarkovChain { .. } | ProcessKind::IntermittentMap { .. } => DEFAULT_BURN_IN,
            _ => 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProcessKind::Iid { amplitude, .. } | ProcessKind::Cocycle { amplitude } => {
                if !(amplitude.is_finite() && *amplitude > 0.0) {
                    return Err(Error::Config(format!("amplitude must be positive, got {amplitude}")));
                }
            }
            ProcessKind::MarkovChain { transition, values } => {
                markov_data(transition, values)?;
            }
            ProcessKind::MovingAverageShift { rate } => {
                if !(*rate > 0.0 && *rate < 1.0) {
                    return Err(Error::Config(format!(
                        "moving-average rate must lie in (0,1), got {rate}"
                    )));
                }
            }
            ProcessKind::IntermittentMap { z } => {
                if !(*z > 0.0 && *z < 1.0) {
                    return Err(Error::Config(format!(
                        "intermittency exponent z must lie in (0,1) for a finite invariant measure, got {z}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `‖V‖_∞`, used for spectrum and wavefront bounds.
    pub fn sup_norm(&self) -> f64 {
        match &self.kind {
            ProcessKind::Iid { amplitude, .. } => *amplitude,
            ProcessKind::Cocycle { amplitude } => *amplitude,
            ProcessKind::MarkovChain { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            ProcessKind::MovingAverageShift { rate } => 0.5 / (1.0 - rate),
            ProcessKind::IntermittentMap { z } => {
                let m = intermittent_mean(*z);
                m.max(1.0 - m)
            }
        }
    }

    /// Exact variance `E(V²)` where it is available in closed form.
    pub fn variance(&self) -> Option<f64> {
        match &self.kind {
            ProcessKind::Iid {
                distribution: IidDistribution::Bernoulli,
                amplitude,
            } => Some(amplitude * amplitude),
            ProcessKind::Iid {
                distribution: IidDistribution::Uniform,
                amplitude,
            } => Some(amplitude * amplitude / 3.0),
            ProcessKind::Cocycle { amplitude } => Some(0.5 * amplitude * amplitude),
            ProcessKind::MovingAverageShift { rate } => Some(0.25 / (1.0 - rate * rate)),
            ProcessKind::MarkovChain { transition, values } => {
                let data = markov_data(transition, values).ok()?;
                Some(data.stationary.iter().zip(&data.values).map(|(p, v)| p * v * v).sum())
            }
            ProcessKind::IntermittentMap { .. } => None,
        }
    }

    /// Mixing profile known from the construction of the process.
    pub fn declared_mixing(&self) -> Option<MixingProfile> {
        let var = self.variance().unwrap_or(1.0);
        match &self.kind {
            // finite-range correlations: any rate works, a large one keeps cutoffs short
            ProcessKind::Iid { .. } | ProcessKind::Cocycle { .. } => Some(MixingProfile::exponential(40.0, var)),
            ProcessKind::MovingAverageShift { rate } => Some(MixingProfile::exponential(-rate.ln(), var)),
            ProcessKind::MarkovChain { transition, .. } => {
                let k = transition.len();
                let p = DMatrix::from_fn(k, k, |i, j| transition[i][j]);
                let mut moduli: Vec<f64> = p.complex_eigenvalues().iter().map(|z| z.norm()).collect();
                moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let second = moduli.get(1).copied().unwrap_or(0.0);
                if second >= 1.0 - 1e-12 {
                    None
                } else if second <= 1e-17 {
                    Some(MixingProfile::exponential(40.0, var))
                } else {
                    Some(MixingProfile::exponential(-second.ln(), var))
                }
            }
            ProcessKind::IntermittentMap { z } => Some(MixingProfile::power_law(1.0 / z - 1.0, var)),
        }
    }

    /// Generator for stream `stream`, positioned after the burn-in.
    pub fn sampler(&self, stream: u64) -> Result<Sampler> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, stream);
        let state = match &self.kind {
            ProcessKind::Iid {
                distribution: IidDistribution::Bernoulli,
                amplitude,
            } => SamplerState::Bernoulli {
                amplitude: *amplitude,
                bits: BitSource::default(),
            },
            ProcessKind::Iid {
                distribution: IidDistribution::Uniform,
                amplitude,
            } => SamplerState::Uniform { amplitude: *amplitude },
            ProcessKind::MarkovChain { transition, values } => {
                let data = markov_data(transition, values)?;
                let mut start_rng = aux_rng(self.seed, stream);
                let state = pick(&cumulative_of(&data.stationary), start_rng.gen::<f64>());
                SamplerState::Markov {
                    cumulative: data.cumulative,
                    values: data.values,
                    state,
                }
            }
            ProcessKind::MovingAverageShift { rate } => {
                let mut weights = Vec::new();
                let mut w = 1.0;
                while w >= MA_TRUNCATION {
                    weights.push(w);
                    w *= rate;
                }
                let mut bits = BitSource::default();
                let window: Vec<f64> = (0..weights.len()).map(|_| bits.next(&mut rng) as f64 - 0.5).collect();
                SamplerState::MovingAverage {
                    weights,
                    window,
                    head: 0,
                    bits,
                }
            }
            ProcessKind::IntermittentMap { z } => {
                let mean = intermittent_mean(*z);
                let x = aux_rng(self.seed, stream).gen::<f64>();
                SamplerState::Intermittent { z: *z, x, mean }
            }
            ProcessKind::Cocycle { amplitude } => {
                let mut bits = BitSource::default();
                let current = bits.next(&mut rng) as f64;
                SamplerState::Cocycle {
                    amplitude: *amplitude,
                    current,
                    bits,
                }
            }
        };
        let mut sampler = Sampler { rng, state };
        for _ in 0..self.burn_in() {
            sampler.next_value();
        }
        Ok(sampler)
    }
}

/// Seeded draw of `V(S^0 ω), …, V(S^{n-1} ω)` on stream 0.
pub fn sample_stream(process: &PotentialProcess, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Argument("sample length must be at least 1".into()));
    }
    let mut sampler = process.sampler(0)?;
    let mut out = vec![0.0; n];
    sampler.fill(&mut out);
    Ok(out)
}

/// Empirical autocovariance `Ĉ(m) = (1/(n−m)) Σ V_i V_{i+m}` for `m = 0..=lag_max`.
pub fn autocovariance(process: &PotentialProcess, lag_max: usize, n: usize) -> Result<Vec<f64>> {
    if lag_max >= n {
        return Err(Error::Argument(format!("lag_max {lag_max} must be below n {n}")));
    }
    let v = sample_stream(process, n)?;
    Ok(autocovariance_of(&v, lag_max))
}

pub fn autocovariance_of(v: &[f64], lag_max: usize) -> Vec<f64> {
    let n = v.len();
    (0..=lag_max)
        .map(|m| {
            let s: f64 = v[..n - m].iter().zip(&v[m..]).map(|(a, b)| a * b).sum();
            s / (n - m) as f64
        })
        .collect()
}

/// Three standard errors of a white-noise covariance estimate.
pub fn noise_floor(c0: f64, n: usize) -> f64 {
    3.0 * c0.abs() / (n as f64).sqrt()
}

/// Fit an exponential and a power law to `|C(m)|`, `m ≥ 1`, on log scale and
/// keep the one with the smaller residual.
///
/// Lags are used from `m = 1` up to the first one at or below `floor`.
pub fn fit_mixing_exponent(covariances: &[f64], floor: f64) -> Result<MixingFit> {
    let lags: Vec<(f64, f64)> = covariances
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, c)| c.abs() > floor)
        .map(|(m, c)| (m as f64, c.abs().ln()))
        .collect();
    if lags.is_empty() {
        return Ok(MixingFit::White);
    }
    if lags.len() < 10 {
        return Err(Error::Argument(format!(
            "only {} lags above the noise floor, at least 10 are needed",
            lags.len()
        )));
    }
    let m: Vec<f64> = lags.iter().map(|l| l.0).collect();
    let log_m: Vec<f64> = m.iter().map(|x| x.ln()).collect();
    let log_c: Vec<f64> = lags.iter().map(|l| l.1).collect();
    let exp_fit = linear_fit(&m, &log_c);
    let pow_fit = linear_fit(&log_m, &log_c);
    let profile = if exp_fit.rss <= pow_fit.rss {
        MixingProfile::exponential(-exp_fit.slope, exp_fit.intercept.exp())
    } else {
        MixingProfile::power_law(-pow_fit.slope, pow_fit.intercept.exp())
    };
    if !(profile.exponent > 0.0) {
        return Err(Error::Argument(format!(
            "fitted decay exponent {} is not positive",
            profile.exponent
        )));
    }
    Ok(MixingFit::Decay(profile))
}

/// Buffered fair bits, 64 per generator call.
#[derive(Debug, Clone, Default)]
struct BitSource {
    word: u64,
    left: u32,
}

impl BitSource {
    #[inline]
    fn next(&mut self, rng: &mut StreamRng) -> u64 {
        if self.left == 0 {
            self.word = rng.gen();
            self.left = 64;
        }
        let b = self.word & 1;
        self.word >>= 1;
        self.left -= 1;
        b
    }
}

#[derive(Debug, Clone)]
enum SamplerState {
    Bernoulli {
        amplitude: f64,
        bits: BitSource,
    },
    Uniform {
        amplitude: f64,
    },
    Markov {
        cumulative: Vec<Vec<f64>>,
        values: Vec<f64>,
        state: usize,
    },
    MovingAverage {
        weights: Vec<f64>,
        /// ring buffer of `σ_{n+k} − 1/2`, `k = 0..K`, starting at `head`
        window: Vec<f64>,
        head: usize,
        bits: BitSource,
    },
    Intermittent {
        z: f64,
        x: f64,
        mean: f64,
    },
    Cocycle {
        amplitude: f64,
        current: f64,
        bits: BitSource,
    },
}

/// Sequential generator of potential values for one stream.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: StreamRng,
    state: SamplerState,
}

impl Sampler {
    #[inline]
    pub fn next_value(&mut self) -> f64 {
        let rng = &mut self.rng;
        match &mut self.state {
            SamplerState::Bernoulli { amplitude, bits } => {
                if bits.next(rng) == 1 {
                    *amplitude
                } else {
                    -*amplitude
                }
            }
            SamplerState::Uniform { amplitude } => *amplitude * (2.0 * rng.gen::<f64>() - 1.0),
            SamplerState::Markov {
                cumulative,
                values,
                state,
            } => {
                let v = values[*state];
                *state = pick(&cumulative[*state], rng.gen::<f64>());
                v
            }
            SamplerState::MovingAverage {
                weights,
                window,
                head,
                bits,
            } => {
                let k = window.len();
                let mut v = 0.0;
                for (j, w) in weights.iter().enumerate() {
                    let idx = *head + j;
                    v += w * window[if idx >= k { idx - k } else { idx }];
                }
                window[*head] = bits.next(rng) as f64 - 0.5;
                *head = if *head + 1 == k { 0 } else { *head + 1 };
                v
            }
            SamplerState::Intermittent { z, x, mean } => {
                let v = *x - *mean;
                *x = intermittent_step(*x, *z, rng);
                v
            }
            SamplerState::Cocycle {
                amplitude,
                current,
                bits,
            } => {
                let next = bits.next(rng) as f64;
                let v = *amplitude * (next - *current);
                *current = next;
                v
            }
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for slot in out.iter_mut() {
            *slot = self.next_value();
        }
    }
}

impl Iterator for Sampler {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_value())
    }
}

#[inline]
fn intermittent_step(x: f64, z: f64, rng: &mut StreamRng) -> f64 {
    let mut y = x + x * x.powf(z);
    if y >= 1.0 {
        y -= 1.0;
    }
    // The marginal fixed point is absorbing in floating point; a hit has
    // probability ~2^-53 per step and is re-seeded from the stream.
    if y <= f64::MIN_POSITIVE {
        y = rng.gen::<f64>();
    }
    y
}

/// Invariant mean of the intermittent map, estimated once per `z` from a
/// fixed calibration orbit.
pub fn intermittent_mean(z: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(m) = cache.lock().unwrap().get(&z.to_bits()) {
        return *m;
    }
    let mut rng = stream_rng(0x1a7e_2b11, 0);
    let mut x: f64 = rng.gen();
    for _ in 0..DEFAULT_BURN_IN {
        x = intermittent_step(x, z, &mut rng);
    }
    let mut sum = 0.0;
    for _ in 0..INTERMITTENT_CALIBRATION_STEPS {
        sum += x;
        x = intermittent_step(x, z, &mut rng);
    }
    let mean = sum / INTERMITTENT_CALIBRATION_STEPS as f64;
    cache.lock().unwrap().insert(z.to_bits(), mean);
    mean
}

fn cumulative_of(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = f64::INFINITY;
    }
    out
}

#[inline]
fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

fn markov_data(transition: &[Vec<f64>], values: &[f64]) -> Result<MarkovData> {
    let k = transition.len();
    if k == 0 || values.len() != k {
        return Err(Error::Config(format!(
            "transition matrix has {k} rows but {} values were given",
            values.len()
        )));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Config(format!(
                "row {i} of the transition matrix has length {}",
                row.len()
            )));
        }
        if row.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
            return Err(Error::Config(format!("row {i} has entries outside [0,1]")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("row {i} sums to {s}, not 1")));
        }
    }
    if !is_irreducible(transition) {
        return Err(Error::Config("transition matrix is reducible".into()));
    }
    let stationary = stationary_distribution(transition)?;
    let mean: f64 = stationary.iter().zip(values).map(|(p, v)| p * v).sum();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if mean.abs() > 1e-10 * scale {
        return Err(Error::Config(format!(
            "observable has stationary mean {mean}, the potential must be centered"
        )));
    }
    Ok(MarkovData {
        cumulative: transition.iter().map(|r| cumulative_of(r)).collect(),
        values: values.to_vec(),
        stationary,
    })
}

pub(crate) fn is_irreducible(transition: &[Vec<f64>]) -> bool {
    let k = transition.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let p = if forward { transition[i][j] } else { transition[j][i] };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Stationary law `π P = π` of an irreducible chain.
pub(crate) fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = transition.len();
    let mut a = DMatrix::from_fn(k, k, |i, j| transition[j][i] - if i == j { 1.0 } else { 0.0 });
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Config("stationary distribution is not unique".into()))?;
    Ok(pi.iter().map(|p| p.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{batch_mean_stderr, mean_stderr};

    fn iid() -> PotentialProcess {
        PotentialProcess::new(ProcessKind::bernoulli(1.0), 11)
    }

    #[test]
    fn bernoulli_is_centered() {
        let v = sample_stream(&iid(), 1_000_000).unwrap();
        let (m, _) = mean_stderr(&v);
        assert!(m.abs() < 3e-3, "mean {m}");
    }

    #[test]
    fn same_seed_same_bits() {
        for kind in [
            ProcessKind::bernoulli(1.0),
            ProcessKind::two_state(0.3),
            ProcessKind::MovingAverageShift { rate: 0.5 },
            ProcessKind::IntermittentMap { z: 0.25 },
            ProcessKind::Cocycle { amplitude: 1.0 },
        ] {
            let p = PotentialProcess::new(kind, 99);
            let a = sample_stream(&p, 5000).unwrap();
            let b = sample_stream(&p, 5000).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            let c = sample_stream(&p.with_seed(100), 5000).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn cocycle_partial_sums_telescope() {
        let p = PotentialProcess::new(ProcessKind::Cocycle { amplitude: 1.0 }, 3);
        let v = sample_stream(&p, 10).unwrap();
        let mut s = 0.0;
        for x in v {
            s += x;
            // v(S^n ω) − v(ω) with v ∈ {0, 1}
            assert!(s.abs() <= 1.0 + 1e-15);
            assert!(s == -1.0 || s == 0.0 || s == 1.0);
        }
    }

    #[test]
    fn moving_average_covariance_is_geometric() {
        let a = 0.5;
        let p = PotentialProcess::new(ProcessKind::MovingAverageShift { rate: a }, 5);
        let n = 1_000_000;
        let c = autocovariance(&p, 4, n).unwrap();
        let var = 0.25 / (1.0 - a * a);
        assert!((p.variance().unwrap() - var).abs() < 1e-15);
        // effective-sample error for a correlated series, loose 5 sigma band
        let tol = 5.0 * var * ((1.0 + a * a) / (1.0 - a * a) / n as f64).sqrt() * 2.0;
        for (m, cm) in c.iter().enumerate() {
            let exact = a.powi(m as i32) * var;
            assert!((cm - exact).abs() < tol, "lag {m}: {cm} vs {exact}");
        }
    }

    #[test]
    fn iid_autocovariance_is_white() {
        let c = autocovariance(&iid(), 5, 400_000).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12);
        for cm in &c[1..] {
            assert!(cm.abs() < 4.0 / (400_000f64).sqrt());
        }
    }

    #[test]
    fn two_state_chain_covariance() {
        let p = PotentialProcess::new(ProcessKind::two_state(0.3), 8);
        let n = 1_000_000;
        let c = autocovariance(&p, 6, n).unwrap();
        let a: f64 = 0.4;
        for (m, cm) in c.iter().enumerate() {
            assert!((cm - a.powi(m as i32)).abs() < 6e-3, "lag {m}: {cm}");
        }
    }

    #[test]
    fn stationarity_across_windows() {
        let kinds = [
            ProcessKind::bernoulli(1.0),
            ProcessKind::two_state(0.3),
            ProcessKind::MovingAverageShift { rate: 0.5 },
            ProcessKind::IntermittentMap { z: 0.25 },
            ProcessKind::Cocycle { amplitude: 1.0 },
        ];
        for kind in kinds {
            let p = PotentialProcess::new(kind.clone(), 21);
            let v = sample_stream(&p, 400_000).unwrap();
            let w: Vec<&[f64]> = v.chunks(100_000).collect();
            for pair in w.windows(2) {
                let (m0, m1) = (pair[0].iter().sum::<f64>() / 1e5, pair[1].iter().sum::<f64>() / 1e5);
                let e0 = batch_mean_stderr(pair[0], 100);
                let e1 = batch_mean_stderr(pair[1], 100);
                let combined = (e0 * e0 + e1 * e1).sqrt();
                assert!(
                    (m0 - m1).abs() <= 4.0 * combined,
                    "{kind:?}: {m0} vs {m1} (se {combined})"
                );
            }
        }
    }

    #[test]
    fn centering_within_four_sigma() {
        let kinds = [
            ProcessKind::bernoulli(1.0),
            ProcessKind::two_state(0.3),
            ProcessKind::MovingAverageShift { rate: 0.5 },
            ProcessKind::IntermittentMap { z: 0.25 },
            ProcessKind::Cocycle { amplitude: 1.0 },
        ];
        let n = 1_000_000;
        for kind in kinds {
            let p = PotentialProcess::new(kind.clone(), 5);
            let v = sample_stream(&p, n).unwrap();
            let mean = v.iter().sum::<f64>() / n as f64;
            // correlated processes: batch means give the honest error
            let se = batch_mean_stderr(&v, 100).max(crate::stats::variance(&v).sqrt() / (n as f64).sqrt());
            assert!(mean.abs() <= 4.0 * se, "{kind:?}: mean {mean}, se {se}");
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = [
            ProcessKind::MarkovChain {
                transition: vec![vec![0.5, 0.6], vec![0.5, 0.5]],
                values: vec![1.0, -1.0],
            },
            ProcessKind::MarkovChain {
                transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                values: vec![1.0, -1.0],
            },
            ProcessKind::MarkovChain {
                transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                values: vec![1.0, 0.0],
            },
            ProcessKind::MovingAverageShift { rate: 1.0 },
            ProcessKind::MovingAverageShift { rate: 0.0 },
            ProcessKind::IntermittentMap { z: 1.5 },
        ];
        for kind in bad {
            let p = PotentialProcess::new(kind.clone(), 0);
            assert!(matches!(sample_stream(&p, 10), Err(Error::Config(_))), "{kind:?}");
        }
        assert!(matches!(sample_stream(&iid(), 0), Err(Error::Argument(_))));
        assert!(matches!(autocovariance(&iid(), 10, 10), Err(Error::Argument(_))));
    }

    #[test]
    fn fit_exact_exponential() {
        let c: Vec<f64> = (0..30).map(|m| 0.5f64.powi(m)).collect();
        match fit_mixing_exponent(&c, 0.0).unwrap() {
            MixingFit::Decay(p) => {
                assert_eq!(p.decay_kind, DecayKind::Exponential);
                assert!((p.exponent - 2f64.ln()).abs() < 0.01 * 2f64.ln());
            }
            MixingFit::White => panic!("expected decay"),
        }
    }

    #[test]
    fn fit_exact_power_law() {
        let c: Vec<f64> = (0..30)
            .map(|m| if m == 0 { 1.0 } else { (m as f64).powi(-3) })
            .collect();
        match fit_mixing_exponent(&c, 0.0).unwrap() {
            MixingFit::Decay(p) => {
                assert_eq!(p.decay_kind, DecayKind::PowerLaw);
                assert!((p.exponent - 3.0).abs() < 0.03);
            }
            MixingFit::White => panic!("expected decay"),
        }
    }

    #[test]
    fn fit_flags_white_noise() {
        let n = 200_000;
        let c = autocovariance(&iid(), 40, n).unwrap();
        assert_eq!(fit_mixing_exponent(&c, noise_floor(c[0], n)).unwrap(), MixingFit::White);
    }

    #[test]
    fn intermittent_map_decays_like_a_power_law() {
        // z = 1/2 gives C(m) ~ m^{-1}; the fitted exponent is a sanity band
        let z = 0.5;
        let p = PotentialProcess::new(ProcessKind::IntermittentMap { z }, 17);
        let n = 4_000_000;
        let c = autocovariance(&p, 200, n).unwrap();
        let floor = noise_floor(c[0], n);
        match fit_mixing_exponent(&c, floor).unwrap() {
            MixingFit::Decay(prof) => {
                assert!(prof.exponent > 0.4 && prof.exponent < 2.0, "{prof:?}");
            }
            MixingFit::White => panic!("intermittent map looks white"),
        }
    }

    #[test]
    fn declared_profiles() {
        let p = PotentialProcess::new(ProcessKind::two_state(0.3), 0);
        let prof = p.declared_mixing().unwrap();
        assert_eq!(prof.decay_kind, DecayKind::Exponential);
        assert!((prof.exponent + 0.4f64.ln()).abs() < 1e-10);
        let q = PotentialProcess::new(ProcessKind::IntermittentMap { z: 0.25 }, 0);
        assert_eq!(q.declared_mixing().unwrap().decay_kind, DecayKind::PowerLaw);
    }
}
