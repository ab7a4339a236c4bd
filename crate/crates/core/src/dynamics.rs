//! Finite-volume Jacobi operators and time-averaged position moments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PotentialProcess;
use crate::quad::GaussRule;
use crate::stats::mean_stderr;

/// Width of the layer next to each wall that must stay empty.
pub const WALL_LAYER: usize = 10;
/// Largest probability tolerated in the wall layer.
pub const WALL_MASS_LIMIT: f64 = 1e-6;
/// Gauss-Legendre nodes per time average.
pub const TIME_NODES: usize = 200;
/// Eigenvectors with `⟨j|0⟩² ≤ OVERLAP_CUTOFF` are dropped from the evolution.
const OVERLAP_CUTOFF: f64 = 1e-26;

/// `H = Δ + λV` on `L` sites with hard walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiOperator {
    pub size: usize,
    pub diagonal: Vec<f64>,
    pub off_diagonal: Vec<f64>,
    /// Index of the site `n = 0`.
    pub origin: usize,
    pub lambda: f64,
    /// `‖V‖_∞` of the process that generated the diagonal.
    pub potential_sup: f64,
}

pub fn build_operator(
    process: &PotentialProcess,
    lambda: f64,
    size: usize,
    center_origin: bool,
) -> Result<JacobiOperator> {
    build_operator_stream(process, lambda, size, center_origin, 0)
}

/// As [`build_operator`], drawing the potential from an independent stream.
pub fn build_operator_stream(
    process: &PotentialProcess,
    lambda: f64,
    size: usize,
    center_origin: bool,
    stream: u64,
) -> Result<JacobiOperator> {
    if size < 3 {
        return Err(Error::Argument(format!("box size must be at least 3, got {size}")));
    }
    if center_origin && size % 2 == 0 {
        return Err(Error::Argument(format!(
            "an origin-centered box needs odd size, got {size}"
        )));
    }
    process.validate()?;
    let mut v = vec![0.0; size];
    process.sampler(stream)?.fill(&mut v);
    Ok(JacobiOperator {
        size,
        diagonal: v.into_iter().map(|x| lambda * x).collect(),
        off_diagonal: vec![1.0; size - 1],
        origin: if center_origin { size / 2 } else { 0 },
        lambda,
        potential_sup: process.sup_norm(),
    })
}

impl JacobiOperator {
    pub fn from_diagonal(diagonal: Vec<f64>, origin: usize) -> Result<Self> {
        let size = diagonal.len();
        if size < 3 || origin >= size {
            return Err(Error::Argument(format!("invalid box: size {size}, origin {origin}")));
        }
        let sup = diagonal.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(Self {
            size,
            diagonal,
            off_diagonal: vec![1.0; size - 1],
            origin,
            lambda: 1.0,
            potential_sup: sup,
        })
    }

    /// Spectrum lies in `[−b, b]` with `b = 2 + λ‖V‖_∞`.
    pub fn spectral_bound(&self) -> f64 {
        2.0 + self.lambda.abs() * self.potential_sup
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.size;
        (0..n)
            .map(|i| {
                let mut y = self.diagonal[i] * x[i];
                if i > 0 {
                    y += self.off_diagonal[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.off_diagonal[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    pub fn eigen(&self) -> Result<Eigensystem> {
        tridiagonal_eigen(&self.diagonal, &self.off_diagonal)
    }
}

/// Eigenpairs in ascending order; `vectors[j * size + n] = ⟨n|j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigensystem {
    pub size: usize,
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl Eigensystem {
    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.size..(j + 1) * self.size]
    }
}

/// Implicit QL with Wilkinson shifts for a real symmetric tridiagonal matrix.
pub fn tridiagonal_eigen(diagonal: &[f64], off_diagonal: &[f64]) -> Result<Eigensystem> {
    let n = diagonal.len();
    if n == 0 || off_diagonal.len() + 1 != n {
        return Err(Error::Argument(format!(
            "tridiagonal lengths {} and {} are inconsistent",
            n,
            off_diagonal.len()
        )));
    }
    let mut d = diagonal.to_vec();
    let mut e = off_diagonal.to_vec();
    e.push(0.0);
    // z[i * n + k]: component k of the i-th vector, so rotations touch contiguous rows
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical(format!("QL iteration did not converge at index {l}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let (lo, hi) = z.split_at_mut((i + 1) * n);
                let zi = &mut lo[i * n..];
                let zi1 = &mut hi[..n];
                for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                    let f = *b;
                    *b = s * *a + c * f;
                    *a = c * *a - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| d[*a].total_cmp(&d[*b]));
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        vectors[dst * n..(dst + 1) * n].copy_from_slice(&z[src * n..(src + 1) * n]);
    }
    Ok(Eigensystem {
        size: n,
        values: order.iter().map(|&i| d[i]).collect(),
        vectors,
    })
}

/// Spectral representation of `e^{−iHt}|0⟩` restricted to eigenvectors
/// overlapping the origin.
#[derive(Debug, Clone)]
pub struct Propagator {
    size: usize,
    origin: usize,
    energies: Vec<f64>,
    /// Row-major `size × energies.len()`, entries `⟨n|j⟩⟨j|0⟩`.
    weights: Vec<f64>,
}

impl Propagator {
    pub fn new(op: &JacobiOperator) -> Result<Self> {
        let eig = op.eigen()?;
        Ok(Self::from_eigensystem(&eig, op.origin))
    }

    pub fn from_eigensystem(eig: &Eigensystem, origin: usize) -> Self {
        let n = eig.size;
        let kept: Vec<usize> = (0..n)
            .filter(|&j| eig.vector(j)[origin].powi(2) > OVERLAP_CUTOFF)
            .collect();
        let k = kept.len();
        let mut weights = vec![0.0; n * k];
        for (col, &j) in kept.iter().enumerate() {
            let v = eig.vector(j);
            let c = v[origin];
            for row in 0..n {
                weights[row * k + col] = v[row] * c;
            }
        }
        Self {
            size: n,
            origin,
            energies: kept.iter().map(|&j| eig.values[j]).collect(),
            weights,
        }
    }

    pub fn active_modes(&self) -> usize {
        self.energies.len()
    }

    /// Real and imaginary parts of `e^{−iHt}|0⟩`.
    pub fn evolve(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let k = self.energies.len();
        let (sin, cos): (Vec<f64>, Vec<f64>) = self.energies.iter().map(|e| (e * t).sin_cos()).unzip();
        let mut re = vec![0.0; self.size];
        let mut im = vec![0.0; self.size];
        for n in 0..self.size {
            let row = &self.weights[n * k..(n + 1) * k];
            let (mut a, mut b) = (0.0, 0.0);
            for ((w, c), s) in row.iter().zip(&cos).zip(&sin) {
                a += w * c;
                b -= w * s;
            }
            re[n] = a;
            im[n] = b;
        }
        (re, im)
    }

    pub fn origin(&self) -> usize {
        self.origin
    }
}

/// `⟨ψ|X|^q|ψ⟩` and the mass in the wall layers.
fn position_moment(re: &[f64], im: &[f64], origin: usize, q: f64, check_left: bool) -> (f64, f64) {
    let n = re.len();
    let mut m = 0.0;
    let mut edge = 0.0;
    for i in 0..n {
        let p = re[i] * re[i] + im[i] * im[i];
        let x = (i as f64 - origin as f64).abs();
        if x > 0.0 {
            m += x.powf(q) * p;
        }
        if i + WALL_LAYER >= n || (check_left && i < WALL_LAYER) {
            edge += p;
        }
    }
    (m, edge)
}

/// Disorder ensemble of origin-centered boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorEnsemble {
    pub process: PotentialProcess,
    pub lambda: f64,
    pub size: usize,
    pub center_origin: bool,
    pub replicas: usize,
}

impl OperatorEnsemble {
    pub fn member(&self, r: usize) -> Result<JacobiOperator> {
        build_operator_stream(&self.process, self.lambda, self.size, self.center_origin, r as u64)
    }

    pub fn suggested_size(&self, t_max: f64) -> usize {
        let speed = 2.0 + self.lambda.abs() * self.process.sup_norm();
        2 * (speed * t_max).ceil() as usize + 2 * WALL_LAYER + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub q: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub disorder_replicas: usize,
    pub size: usize,
    pub t_max_factor: f64,
    /// `e^{−t_max/T}`, the weight of the neglected tail.
    pub truncation_weight: f64,
    /// Tail weight times the largest `⟨|X|^q⟩(t)` seen up to `t_max`.
    pub truncation_error: Vec<f64>,
    pub max_edge_mass: f64,
}

impl MomentSeries {
    pub const CSV_HEADER: &'static str = "T,q,M,stderr,replicas,L";

    pub fn csv_rows(&self) -> Vec<String> {
        self.times
            .iter()
            .zip(&self.values)
            .zip(&self.stderr)
            .map(|((t, m), s)| format!("{t},{},{m},{s},{},{}", self.q, self.disorder_replicas, self.size))
            .collect()
    }

    /// `(L/2)^q`, the largest moment a box can hold.
    pub fn ceiling(&self) -> f64 {
        (self.size as f64 / 2.0).powf(self.q)
    }
}

/// `M_T^q = ∫_0^{t_max} (dt/T) e^{−t/T} E⟨ψ_t||X|^q|ψ_t⟩` with `t_max = factor·T`,
/// by Gauss-Legendre quadrature and spectral evolution.
pub fn moment_series(ensemble: &OperatorEnsemble, q: f64, times: &[f64], t_max_factor: f64) -> Result<MomentSeries> {
    if !(q > 0.0) {
        return Err(Error::Argument(format!("moment order must be positive, got {q}")));
    }
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Argument(
            "times must be a nonempty list of positive values".into(),
        ));
    }
    if !(t_max_factor > 0.0) {
        return Err(Error::Argument(format!(
            "t_max factor must be positive, got {t_max_factor}"
        )));
    }
    if ensemble.replicas == 0 {
        return Err(Error::Argument("need at least one disorder replica".into()));
    }
    let rule = GaussRule::new(TIME_NODES);
    let per_replica: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..ensemble.replicas)
        .into_par_iter()
        .map(|r| {
            let op = ensemble.member(r)?;
            let prop = Propagator::new(&op)?;
            let mut values = Vec::with_capacity(times.len());
            let mut peaks = Vec::with_capacity(times.len());
            let mut worst_edge = 0.0f64;
            for &big_t in times {
                let t_max = t_max_factor * big_t;
                let mut acc = 0.0;
                let mut peak = 0.0f64;
                for (t, w) in rule.on(0.0, t_max) {
                    let (re, im) = prop.evolve(t);
                    let (m, edge) = position_moment(&re, &im, op.origin, q, ensemble.center_origin);
                    if edge > WALL_MASS_LIMIT {
                        return Err(Error::BoxTooSmall {
                            edge_mass: edge,
                            time: t,
                            suggested_size: ensemble.suggested_size(t_max).max(2 * ensemble.size + 1),
                        });
                    }
                    worst_edge = worst_edge.max(edge);
                    peak = peak.max(m);
                    acc += w * (-t / big_t).exp() / big_t * m;
                }
                values.push(acc);
                peaks.push(peak);
            }
            Ok((values, peaks, worst_edge))
        })
        .collect::<Result<Vec<_>>>()?;
    let weight = (-t_max_factor).exp();
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    let mut truncation_error = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let xs: Vec<f64> = per_replica.iter().map(|r| r.0[i]).collect();
        let (m, s) = mean_stderr(&xs);
        values.push(m);
        stderr.push(s);
        truncation_error.push(weight * per_replica.iter().map(|r| r.1[i]).fold(0.0, f64::max));
    }
    Ok(MomentSeries {
        q,
        times: times.to_vec(),
        values,
        stderr,
        disorder_replicas: ensemble.replicas,
        size: ensemble.size,
        t_max_factor,
        truncation_weight: weight,
        truncation_error,
        max_edge_mass: per_replica.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// `∫_0^∞ (dt/T) e^{−t/T} ⟨ψ_t||X|^q|ψ_t⟩ = Σ_{jl} K_jl / (1 + ((E_j − E_l)T)²)`
/// with `K_jl = ⟨0|j⟩⟨j||X|^q|l⟩⟨l|0⟩`; a closed form for a single operator.
pub fn time_averaged_moment_exact(op: &JacobiOperator, q: f64, big_t: f64) -> Result<f64> {
    let eig = op.eigen()?;
    let n = eig.size;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 - op.origin as f64).abs().powf(q)).collect();
    let c: Vec<f64> = (0..n).map(|j| eig.vector(j)[op.origin]).collect();
    let mut total = 0.0;
    for j in 0..n {
        let vj = eig.vector(j);
        for l in j..n {
            let vl = eig.vector(l);
            let xjl: f64 = vj.iter().zip(vl).zip(&x).map(|((a, b), w)| a * b * w).sum();
            let de = (eig.values[j] - eig.values[l]) * big_t;
            let k = c[j] * c[l] * xjl / (1.0 + de * de);
            total += if l == j { k } else { 2.0 * k };
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogGrowthReport {
    pub beta: f64,
    pub q: f64,
    /// `max(0, max_T (M_T^q − (log T)^{qβ}))` over `T > 1`.
    pub c_hat: f64,
    /// Excess `M_T^q − (log T)^{qβ}` at each `T > 1`.
    pub excess: Vec<f64>,
    pub times: Vec<f64>,
    /// Whether the bound `M_T^q ≤ (log T)^{qβ} + Ĉ` is consistent with saturation.
    pub holds: bool,
    /// Set when `β ≤ 2`, fewer than two decades are covered, or `T ≤ 1` points were skipped.
    pub warning: Option<String>,
}

/// Empirical check of `M_T^q ≤ (log T)^{qβ} + C`. The verdict fails when the
/// required constant is still growing at the largest `T`.
pub fn log_growth_check(series: &MomentSeries, beta: f64) -> LogGrowthReport {
    let mut warnings = Vec::new();
    if !(beta > 2.0) {
        warnings.push(format!("beta = {beta} is not above 2"));
    }
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t > 1.0)
        .map(|(t, m)| (*t, *m))
        .collect();
    if pts.len() < series.times.len() {
        warnings.push("times T <= 1 were skipped".into());
    }
    let (tmin, tmax) = pts
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), (t, _)| (a.min(*t), b.max(*t)));
    if pts.is_empty() || tmax / tmin < 99.999 {
        warnings.push("series spans fewer than two decades in T".into());
    }
    let excess: Vec<f64> = pts.iter().map(|(t, m)| m - t.ln().powf(series.q * beta)).collect();
    let (arg, max) =
        excess.iter().enumerate().fold(
            (0usize, f64::NEG_INFINITY),
            |(ai, am), (i, x)| if *x > am { (i, *x) } else { (ai, am) },
        );
    let c_hat = max.max(0.0);
    let holds = !excess.is_empty() && !(max > 0.0 && arg + 1 == excess.len());
    LogGrowthReport {
        beta,
        q: series.q,
        c_hat,
        excess,
        times: pts.iter().map(|p| p.0).collect(),
        holds,
        warning: if warnings.is_empty() {
            None
        } else {
            Some(warnings.join("; "))
        },
    }
}
