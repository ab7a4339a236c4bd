//! One runner per experiment kind. Each returns the CSV table, optional
//! plots and the outcome of its built-in cross-checks.

use std::f64::consts::PI;

use mixlyap::dynamics::{log_growth_check, moment_series, OperatorEnsemble};
use mixlyap::fokkerplanck::{
    assemble_coefficients_on, density_band_edge_on, density_bvp_oracle, density_elliptic, gamma_band_center,
    gamma_band_edge, gamma_near_edge, gamma_thouless, EdgeSide, FpSetting, StationaryDensity,
};
use mixlyap::phase::{phase_histogram, AnomalySetup, PhaseDriver};
use mixlyap::potential::PotentialProcess;
use mixlyap::spectral::{autocov_sum_density, default_cutoff, exact_density, periodogram_density};
use mixlyap::stats::log_log_slope;
use mixlyap::transfer::{lyapunov_mc, norm_growth_probability, LyapunovConfig};
use mixlyap::{Error, Result};

use crate::config::{DensitySetting, Experiment, ExperimentConfig};
use crate::plot::{Plot, Series};

pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Comment line with hash and seed, then the header and the rows.
    pub fn render(&self, config_hash: &str, seed: u64) -> String {
        let mut s = format!("# config_hash={config_hash},seed={seed}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

pub struct Check {
    pub name: String,
    pub passed: bool,
}

pub struct Report {
    pub table: Table,
    pub plots: Vec<(String, Plot)>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn rel_gap(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

fn check(name: impl Into<String>, passed: bool) -> Check {
    Check {
        name: name.into(),
        passed,
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// `D(k)`, from the config when given, otherwise exact for the process.
fn density_value(process: &PotentialProcess, given: Option<f64>, k: f64, name: &str) -> Result<f64> {
    if let Some(v) = given {
        return Ok(v);
    }
    match exact_density(process, k) {
        Some(r) => Ok(r?.value),
        None => Err(config_error(format!(
            "no exact spectral density for this process; set parameters.{name}"
        ))),
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    match cfg.experiment {
        Experiment::LyapunovScan => lyapunov_scan(cfg),
        Experiment::BandCenterScaling => band_center_scaling(cfg),
        Experiment::BandEdgeScaling => band_edge_scaling(cfg),
        Experiment::NearEdgeScaling => near_edge_scaling(cfg),
        Experiment::DensityCompare => density_compare(cfg),
        Experiment::SpectralDensity => spectral_density(cfg),
        Experiment::Moments => moments(cfg),
        Experiment::NormGrowth => norm_growth(cfg),
    }
}

fn mc_config(cfg: &ExperimentConfig) -> LyapunovConfig {
    LyapunovConfig::new(cfg.steps(), cfg.replicas())
}

fn lyapunov_scan(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let mut table = Table::new(&[
        "E", "lambda", "gamma", "stderr", "steps", "replicas", "thouless", "rel_gap",
    ]);
    let mut plot = Plot::new("Lyapunov exponent", "E", "gamma");
    let mut worst = 0.0f64;
    for &lambda in p.lambdas.as_deref().unwrap_or_default() {
        let mut mc_pts = Vec::new();
        let mut th_pts = Vec::new();
        for &e in p.energies.as_deref().unwrap_or_default() {
            let est = lyapunov_mc(&process, e, lambda, &mc_config(cfg))?;
            let pred = thouless_prediction(&process, e, lambda)?;
            let gap = rel_gap(est.gamma, pred);
            if gap.is_finite() {
                worst = worst.max(gap);
                th_pts.push((e, pred));
            }
            mc_pts.push((e, est.gamma));
            table.push(vec![
                num(e),
                num(lambda),
                num(est.gamma),
                num(est.stderr),
                est.steps.to_string(),
                est.replicas.to_string(),
                num(pred),
                num(gap),
            ]);
        }
        plot = plot
            .with(Series::new(format!("MC lambda={lambda}"), mc_pts))
            .with(Series::new(format!("Thouless lambda={lambda}"), th_pts));
    }
    Ok(Report {
        table,
        plots: vec![("gamma_vs_E".into(), plot)],
        checks: vec![check(
            format!("Thouless relative gaps < 15% (worst {:.1}%)", 100.0 * worst),
            worst < 0.15,
        )],
        notes: vec![],
    })
}

/// `λ² D(2k)/(8 sin² k)` at `E = 2cos k` away from `k ≡ 0 mod π/2`, else NaN.
fn thouless_prediction(process: &PotentialProcess, e: f64, lambda: f64) -> Result<f64> {
    if e.abs() >= 2.0 {
        return Ok(f64::NAN);
    }
    let k = (e / 2.0).acos();
    let r = k.rem_euclid(PI / 2.0);
    if r.min(PI / 2.0 - r) < 1e-9 {
        return Ok(f64::NAN);
    }
    match exact_density(process, 2.0 * k) {
        Some(d) => gamma_thouless(lambda, k, d?.value),
        None => Ok(f64::NAN),
    }
}

fn band_center_scaling(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let eps = p.epsilon.unwrap_or(0.0);
    let d0 = density_value(&process, p.d0, 0.0, "d0")?;
    let d_pi = density_value(&process, p.d_pi, PI, "d_pi")?;
    let coeffs = assemble_coefficients_on(FpSetting::BandCenter { epsilon: eps, d0, d_pi }, p.grid.unwrap_or(512))?;
    let rho = density_elliptic(&coeffs)?;
    let mut table = Table::new(&["lambda", "E", "gamma", "stderr", "prediction", "naive", "rel_gap"]);
    let (mut mc_pts, mut pred_pts) = (Vec::new(), Vec::new());
    let mut worst = 0.0f64;
    for &lambda in p.lambdas.as_deref().unwrap_or_default() {
        let e = eps * lambda * lambda;
        let est = lyapunov_mc(&process, e, lambda, &mc_config(cfg))?;
        let pred = gamma_band_center(lambda, eps, d_pi, &rho)?;
        let gap = rel_gap(est.gamma, pred);
        worst = worst.max(gap);
        mc_pts.push((lambda, est.gamma / (lambda * lambda)));
        pred_pts.push((lambda, pred / (lambda * lambda)));
        table.push(vec![
            num(lambda),
            num(e),
            num(est.gamma),
            num(est.stderr),
            num(pred),
            num(lambda * lambda * d_pi / 8.0),
            num(gap),
        ]);
    }
    let mut plot = Plot::new("Band center", "lambda", "gamma / lambda^2")
        .with(Series::new("MC", mc_pts))
        .with(Series::new("prediction", pred_pts));
    plot.log_x = true;
    Ok(Report {
        table,
        plots: vec![("gamma_over_lambda2".into(), plot)],
        checks: vec![check(
            format!("band-center gaps < 10% (worst {:.1}%)", 100.0 * worst),
            worst < 0.10,
        )],
        notes: vec![],
    })
}

fn band_edge_scaling(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let eps = p.epsilon.unwrap_or(0.0);
    let d0 = density_value(&process, p.d0, 0.0, "d0")?;
    let rho = density_band_edge_on(d0, eps, p.grid.unwrap_or(512))?;
    let mut table = Table::new(&["lambda", "E", "gamma", "stderr", "prediction", "rel_gap"]);
    let (mut mc_pts, mut pred_pts, mut lambdas, mut gammas) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut worst = 0.0f64;
    for &lambda in p.lambdas.as_deref().unwrap_or_default() {
        // upper edge, ε > 0 inside the band
        let e = 2.0 - eps * lambda.powf(4.0 / 3.0);
        let est = lyapunov_mc(&process, e, lambda, &mc_config(cfg))?;
        let pred = gamma_band_edge(lambda, eps, d0, &rho)?;
        let gap = rel_gap(est.gamma, pred);
        worst = worst.max(gap);
        let scale = lambda.powf(2.0 / 3.0);
        mc_pts.push((lambda, est.gamma / scale));
        pred_pts.push((lambda, pred / scale));
        lambdas.push(lambda);
        gammas.push(est.gamma);
        table.push(vec![
            num(lambda),
            num(e),
            num(est.gamma),
            num(est.stderr),
            num(pred),
            num(gap),
        ]);
    }
    let mut notes = Vec::new();
    if lambdas.len() >= 2 {
        notes.push(format!(
            "log-log slope of gamma vs lambda: {:.4}",
            log_log_slope(&lambdas, &gammas)
        ));
    }
    let mut plot = Plot::new("Band edge", "lambda", "gamma / lambda^(2/3)")
        .with(Series::new("MC", mc_pts))
        .with(Series::new("prediction", pred_pts));
    plot.log_x = true;
    Ok(Report {
        table,
        plots: vec![("gamma_over_lambda23".into(), plot)],
        checks: vec![check(
            format!("band-edge gaps < 10% (worst {:.1}%)", 100.0 * worst),
            worst < 0.10,
        )],
        notes,
    })
}

fn near_edge_scaling(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let eps = p.epsilon.unwrap_or(1.0);
    let eta = p.eta.unwrap_or(1.0);
    let d0 = density_value(&process, p.d0, 0.0, "d0")?;
    let mut table = Table::new(&[
        "lambda",
        "side",
        "E",
        "gamma",
        "stderr",
        "prediction",
        "rel_gap",
        "validity_warning",
    ]);
    let mut worst = 0.0f64;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = vec![
        ("MC outside".into(), vec![]),
        ("prediction outside".into(), vec![]),
        ("MC inside".into(), vec![]),
        ("prediction inside".into(), vec![]),
    ];
    for &lambda in p.lambdas.as_deref().unwrap_or_default() {
        for (i, side) in [EdgeSide::Hyperbolic, EdgeSide::Elliptic].into_iter().enumerate() {
            let shift = eps * lambda.powf(eta);
            let e = if side == EdgeSide::Hyperbolic {
                2.0 + shift
            } else {
                2.0 - shift
            };
            let pred = gamma_near_edge(lambda, eps, eta, side, d0)?;
            let est = lyapunov_mc(&process, e, lambda, &mc_config(cfg))?;
            let gap = rel_gap(est.gamma, pred.value);
            if !pred.validity_warning {
                worst = worst.max(gap);
            }
            series[2 * i].1.push((lambda, est.gamma));
            series[2 * i + 1].1.push((lambda, pred.value));
            table.push(vec![
                num(lambda),
                if side == EdgeSide::Hyperbolic {
                    "outside"
                } else {
                    "inside"
                }
                .into(),
                num(e),
                num(est.gamma),
                num(est.stderr),
                num(pred.value),
                num(gap),
                pred.validity_warning.to_string(),
            ]);
        }
    }
    let mut plot = Plot::new("Near the band edge", "lambda", "gamma").log_log();
    for (name, pts) in series {
        plot = plot.with(Series::new(name, pts));
    }
    Ok(Report {
        table,
        plots: vec![("near_edge".into(), plot)],
        checks: vec![check(
            format!("near-edge gaps < 20% (worst {:.1}%)", 100.0 * worst),
            worst < 0.20,
        )],
        notes: vec![],
    })
}

fn density_compare(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let eps = p.epsilon.unwrap_or(0.0);
    let grid = p.grid.unwrap_or(512);
    let bins = p.bins.unwrap_or(128);
    let d0 = density_value(&process, p.d0, 0.0, "d0")?;
    let setting = p
        .setting
        .ok_or_else(|| config_error("parameters.setting is required"))?;
    let (coeffs, formula, setup): (_, StationaryDensity, AnomalySetup) = match setting {
        DensitySetting::BandEdge => {
            let c = assemble_coefficients_on(FpSetting::BandEdge { epsilon: eps, d0 }, grid)?;
            (c, density_band_edge_on(d0, eps, grid)?, AnomalySetup::band_edge(eps))
        }
        DensitySetting::BandCenter => {
            let d_pi = density_value(&process, p.d_pi, PI, "d_pi")?;
            let c = assemble_coefficients_on(FpSetting::BandCenter { epsilon: eps, d0, d_pi }, grid)?;
            let rho = density_elliptic(&c)?;
            (c, rho, AnomalySetup::band_center(eps))
        }
    };
    let oracle = density_bvp_oracle(&coeffs)?;
    let diff = formula.max_abs_difference(&oracle)?;
    let mut checks = vec![check(
        format!("max |formula - oracle| = {diff:.2e} <= 1e-4"),
        diff <= 1e-4,
    )];
    let orbit_steps = p.orbit_steps.unwrap_or(0);
    let hist = if orbit_steps > 0 {
        let lambda = p.orbit_lambda.unwrap_or(1e-2);
        let h = phase_histogram(
            &process,
            PhaseDriver::Anomaly { setup: &setup, lambda },
            0.3,
            orbit_steps,
            (orbit_steps / 10).min(10_000),
            bins,
        )?;
        let mids = h.midpoints();
        let at = formula.at_many(&mids);
        let tv = h.tv_distance(|t| at[mids.iter().position(|m| *m == t).unwrap_or(0)]);
        checks.push(check(
            format!("orbit histogram TV distance = {tv:.4} <= 0.05"),
            tv <= 0.05,
        ));
        Some(h)
    } else {
        None
    };
    let mut table = Table::new(&["theta", "p", "q", "rho_formula", "rho_oracle", "orbit_histogram"]);
    let mut hist_pts = Vec::new();
    for i in 0..coeffs.grid_len() {
        let theta = coeffs.theta[i];
        let h = hist.as_ref().map(|h| {
            let b = ((theta / PI * h.bins() as f64) as usize).min(h.bins() - 1);
            h.mass[b] * h.bins() as f64 / PI
        });
        if let Some(v) = h {
            hist_pts.push((theta, v));
        }
        table.push(vec![
            num(theta),
            num(coeffs.p[i]),
            num(coeffs.q[i]),
            num(formula.rho[i]),
            num(oracle.rho[i]),
            h.map(num).unwrap_or_default(),
        ]);
    }
    let mut plot = Plot::new("Stationary phase density", "theta", "rho")
        .with(Series::new(
            "formula",
            formula.theta.iter().cloned().zip(formula.rho.iter().cloned()).collect(),
        ))
        .with(Series::new(
            "oracle",
            oracle.theta.iter().cloned().zip(oracle.rho.iter().cloned()).collect(),
        ));
    if !hist_pts.is_empty() {
        plot = plot.with(Series::new("orbit histogram", hist_pts));
    }
    Ok(Report {
        table,
        plots: vec![("density".into(), plot)],
        checks,
        notes: vec![],
    })
}

fn spectral_density(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let segment_len = p.segment_len.unwrap_or(10_000);
    let segments = p.segments.unwrap_or(100);
    let cutoff = default_cutoff(&process)?.min(segment_len / 2);
    let mut table = Table::new(&["k", "value", "stderr", "method"]);
    let mut worst_sigma = 0.0f64;
    let mut have_exact = false;
    let mut series: Vec<Vec<(f64, f64)>> = vec![vec![], vec![], vec![]];
    for &k in p.wavenumbers.as_deref().unwrap_or_default() {
        let per = periodogram_density(&process, k, segment_len, segments)?;
        let auto = autocov_sum_density(&process, k, cutoff, segment_len, segments)?;
        series[0].push((per.k, per.value));
        series[1].push((auto.k, auto.value));
        table.push(vec![
            num(per.k),
            num(per.value),
            num(per.stderr),
            per.method.to_string(),
        ]);
        table.push(vec![
            num(auto.k),
            num(auto.value),
            num(auto.stderr),
            auto.method.to_string(),
        ]);
        if let Some(ex) = exact_density(&process, k) {
            let ex = ex?;
            have_exact = true;
            // the periodogram carries an O(1/N) bias on top of its error bar
            let allowed = 4.0 * per.stderr + 2.0 / segment_len as f64 + 0.05 * ex.value.abs();
            worst_sigma = worst_sigma.max((per.value - ex.value).abs() / allowed);
            series[2].push((ex.k, ex.value));
            table.push(vec![num(ex.k), num(ex.value), num(ex.stderr), ex.method.to_string()]);
        }
    }
    let checks = if have_exact {
        vec![check("periodogram agrees with the exact density", worst_sigma <= 1.0)]
    } else {
        vec![]
    };
    let mut plot = Plot::new("Spectral density", "k", "D(k)");
    for (name, pts) in ["periodogram", "autocovariance sum", "exact"].iter().zip(series) {
        if !pts.is_empty() {
            plot = plot.with(Series::new(*name, pts));
        }
    }
    Ok(Report {
        table,
        plots: vec![("spectral_density".into(), plot)],
        checks,
        notes: vec![],
    })
}

fn moments(cfg: &ExperimentConfig) -> Result<Report> {
    let p = &cfg.parameters;
    let q = p.moment.unwrap_or(2.0);
    let factor = p.t_max_factor.unwrap_or(8.0);
    let beta = p.beta.unwrap_or(2.5);
    let times = p.times.clone().unwrap_or_default();
    let size = p.size.unwrap_or(1001);
    let mut table = Table::new(&["lambda", "T", "q", "M", "stderr", "replicas", "L"]);
    let mut plot = Plot::new("Time-averaged moments", "T", "M_T").log_log();
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for &lambda in p.lambdas.as_deref().unwrap_or_default() {
        let ensemble = OperatorEnsemble {
            process: cfg.process(),
            lambda,
            size,
            center_origin: true,
            replicas: if lambda == 0.0 { 1 } else { cfg.replicas() },
        };
        let series = moment_series(&ensemble, q, &times, factor)?;
        for row in series.csv_rows() {
            let mut cells = vec![num(lambda)];
            cells.extend(row.split(',').map(str::to_string));
            table.push(cells);
        }
        let ceiling_ok = series.values.iter().all(|m| *m <= series.ceiling());
        checks.push(check(
            format!("lambda={lambda}: moments below the box ceiling"),
            ceiling_ok,
        ));
        let report = log_growth_check(&series, beta);
        notes.push(format!(
            "lambda={lambda}: M_T <= (log T)^(q beta) + C with C_hat = {:.4}: {}{}",
            report.c_hat,
            if report.holds { "PASS" } else { "FAIL" },
            report.warning.map(|w| format!(" ({w})")).unwrap_or_default()
        ));
        if times.len() >= 2 {
            notes.push(format!(
                "lambda={lambda}: log-log slope {:.4}",
                log_log_slope(&series.times, &series.values)
            ));
        }
        plot = plot.with(Series::new(
            format!("lambda={lambda}"),
            series
                .times
                .iter()
                .cloned()
                .zip(series.values.iter().cloned())
                .collect(),
        ));
    }
    Ok(Report {
        table,
        plots: vec![("moments".into(), plot)],
        checks,
        notes,
    })
}

fn norm_growth(cfg: &ExperimentConfig) -> Result<Report> {
    let process = cfg.process();
    let p = &cfg.parameters;
    let samples = p.samples.unwrap_or(2000);
    let mut table = Table::new(&["E", "lambda", "N", "samples", "c_hat", "fraction", "bound", "holds"]);
    let mut all = true;
    for &lambda in p.lambdas.as_deref().unwrap_or_default() {
        for &e in p.energies.as_deref().unwrap_or_default() {
            let c_hat = match p.c_hat {
                Some(c) => c,
                None => lyapunov_mc(&process, e, lambda, &mc_config(cfg))?.gamma / 4.0,
            };
            for &n in p.lengths.as_deref().unwrap_or_default() {
                let g = norm_growth_probability(&process, e, lambda, n, samples, c_hat)?;
                all &= g.holds();
                table.push(vec![
                    num(e),
                    num(lambda),
                    n.to_string(),
                    samples.to_string(),
                    num(c_hat),
                    num(g.fraction),
                    num(g.bound),
                    g.holds().to_string(),
                ]);
            }
        }
    }
    Ok(Report {
        table,
        plots: vec![],
        checks: vec![check("empirical probability above 1 - exp(-c sqrt N)", all)],
        notes: vec![],
    })
}
