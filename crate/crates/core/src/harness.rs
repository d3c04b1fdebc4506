//! Experiment runner: single-scale spectra, convergence sweeps against the
//! analytic spectrum, and the numeric lemma suite.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bundles::{path_comparison, BundleKind, BundleModel, ScalarField, Section, C64};
use crate::eigensolver::{smallest_eigenpairs_with, Method, SolverOptions, SpectrumResult, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::geometry::{unit_ball_volume, ManifoldModel};
use crate::nets::{build_net, estimate_measures, grid_net, Net, NetKind, DEFAULT_MC_PER_POINT};
use crate::operator::{
    assemble_graph_laplacian, discrete_energy, discretize_q, essential_gap_bound, pair_energy, prolong_qstar, smoothing_i,
    theta_on_net, ConnectionLaplacian, DiscreteSection, WeightScheme,
};
use crate::rng;

/// The JSON schema that [`ConvergenceReport`] documents validate against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/convergence_report.schema.json");

/// CSV header of sweep tables.
pub const CSV_COLUMNS: [&str; 16] = [
    "level",
    "rho",
    "eps",
    "N",
    "r",
    "covering_radius",
    "separation",
    "k_index",
    "lambda_tilde",
    "lambda_analytic",
    "abs_err",
    "rel_err",
    "residual",
    "regime_eps_ok",
    "regime_lambda_ok",
    "wall_ms",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub rho: f64,
    pub eps: f64,
}

/// `levels` scales starting at `(rho0, ratio * rho0)`, halving both each level.
pub fn halving_schedule(rho0: f64, ratio: f64, levels: usize) -> Vec<Scale> {
    (0..levels)
        .map(|l| {
            let rho = rho0 / 2f64.powi(l as i32);
            Scale { rho, eps: ratio * rho }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifold: ManifoldModel,
    pub bundle: BundleKind,
    /// Number of eigenvalues.
    pub k: usize,
    pub schedule: Vec<Scale>,
    pub net_kind: NetKind,
    /// Monte Carlo points for the measures; `None` means 400 per net point.
    pub mc_samples: Option<usize>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub force_lanczos: bool,
    /// When false, `wall_ms` is reported as 0 so that rows are reproducible.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(manifold: ManifoldModel, bundle: BundleKind, k: usize, schedule: Vec<Scale>) -> Self {
        ExperimentConfig {
            manifold,
            bundle,
            k,
            schedule,
            net_kind: NetKind::FarthestPoint,
            mc_samples: None,
            seed: 0,
            tol: DEFAULT_TOL,
            max_iter: None,
            force_lanczos: false,
            record_timing: true,
        }
    }

    pub fn bundle_model(&self) -> Result<BundleModel> {
        BundleModel::new(self.manifold.clone(), self.bundle.clone())
    }
}

/// One line of the sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub level: usize,
    pub rho: f64,
    pub eps: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub r: usize,
    pub covering_radius: f64,
    pub separation: f64,
    /// 1-based.
    pub k_index: usize,
    pub lambda_tilde: f64,
    pub lambda_analytic: Option<f64>,
    pub abs_err: Option<f64>,
    /// `abs_err / lambda_analytic`, or `abs_err / Lambda` when the analytic
    /// value is zero.
    pub rel_err: Option<f64>,
    pub residual: f64,
    pub regime_eps_ok: bool,
    pub regime_lambda_ok: Option<bool>,
    pub wall_ms: u64,
}

/// Per-level diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub rho: f64,
    pub eps: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub r: usize,
    pub covering_radius: f64,
    pub separation: f64,
    /// Largest `sigma(mu_i) / mu_i` of the Monte Carlo measures.
    pub measure_rel_sigma: f64,
    /// `a(rho, alpha, beta)`; the spectrum is discrete below `2a`.
    pub essential_gap_bound: f64,
    pub gershgorin_bound: f64,
    pub method: Option<Method>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: u64,
    /// Set when the level failed; its rows are then missing.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub k_index: usize,
    /// `log2(err_l / err_{l+1})` for consecutive levels (`None` when undefined).
    pub orders: Vec<Option<f64>>,
    pub strictly_decreasing: bool,
    /// Every defined order is at least [`MIN_DECAY_ORDER`].
    pub meets_min_order: bool,
}

/// Smallest acceptable empirical decay order.
pub const MIN_DECAY_ORDER: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ExperimentConfig,
    pub levels: Vec<LevelReport>,
    pub rows: Vec<ReportRow>,
    pub decay: Vec<DecaySummary>,
}

/// Everything produced at one scale.
#[derive(Clone, Debug)]
pub struct SpectrumRun {
    pub net: Net,
    pub operator: ConnectionLaplacian,
    pub spectrum: SpectrumResult,
    pub analytic: Option<Vec<f64>>,
    pub level: LevelReport,
    pub rows: Vec<ReportRow>,
}

impl SpectrumRun {
    pub fn converged(&self) -> bool {
        self.spectrum.all_converged()
    }
}

/// Builds the net, measures, operator and spectrum at one scale.
pub fn run_spectrum(config: &ExperimentConfig, level: usize, scale: Scale) -> Result<SpectrumRun> {
    let start = Instant::now();
    let b = config.bundle_model()?;
    let m = &config.manifold;
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if !(scale.rho > 0.0 && scale.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("rho and eps must be positive, got {scale:?}")));
    }
    let r_inj = m.injectivity_radius();
    if scale.rho >= r_inj {
        return Err(Error::Regime(format!("rho = {} is not below the injectivity radius {r_inj}", scale.rho)));
    }
    let net = match config.net_kind {
        NetKind::Grid => grid_net(m, scale.eps)?,
        NetKind::FarthestPoint => {
            let net = build_net(m, scale.eps, config.seed)?;
            if net.len() < 2 {
                return Err(Error::Regime(format!("the net has {} point(s); at least 2 are needed", net.len())));
            }
            let mc = config.mc_samples.unwrap_or(DEFAULT_MC_PER_POINT * net.len());
            estimate_measures(net, mc, config.seed)?
        }
    };
    if net.len() < 2 {
        return Err(Error::Regime(format!("the net has {} point(s); at least 2 are needed", net.len())));
    }
    if config.k > net.len() * b.rank() {
        return Err(Error::Regime(format!("k = {} exceeds N r = {}", config.k, net.len() * b.rank())));
    }
    let operator = assemble_graph_laplacian(&b, &net, scale.rho)?;
    let hermitian = operator.hermitian();
    let opts = SolverOptions {
        tol: config.tol,
        max_iter: config.max_iter,
        seed: config.seed,
        force_lanczos: config.force_lanczos,
        block_size: None,
    };
    let spectrum = smallest_eigenpairs_with(&hermitian, config.k, &opts)?;
    let analytic = match b.analytic_spectrum(config.k) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let wall_ms = if config.record_timing { start.elapsed().as_millis() as u64 } else { 0 };

    let mu = net.measures()?;
    let sig = net.measure_std_errors()?;
    let measure_rel_sigma = sig.iter().zip(mu).map(|(s, m)| s / m).fold(0.0, f64::max);
    let eps_ok = 4.0 * net.covering_radius_est < scale.rho;
    let level_report = LevelReport {
        level,
        rho: scale.rho,
        eps: scale.eps,
        n: net.len(),
        r: b.rank(),
        covering_radius: net.covering_radius_est,
        separation: net.separation_est,
        measure_rel_sigma,
        essential_gap_bound: essential_gap_bound(&net, &WeightScheme::graph(scale.rho))?,
        gershgorin_bound: spectrum.shift,
        method: Some(spectrum.method),
        iterations: spectrum.iterations,
        converged: spectrum.all_converged(),
        wall_ms,
        error: None,
    };
    let rows = (0..config.k)
        .map(|i| {
            let lt = spectrum.eigenvalues[i];
            let la = analytic.as_ref().map(|a| a[i]);
            let abs_err = la.map(|a| (lt - a).abs());
            let rel_err = abs_err.zip(la).map(|(e, a)| if a > 0.0 { e / a } else { e / spectrum.shift.max(f64::MIN_POSITIVE) });
            ReportRow {
                level,
                rho: scale.rho,
                eps: scale.eps,
                n: net.len(),
                r: b.rank(),
                covering_radius: net.covering_radius_est,
                separation: net.separation_est,
                k_index: i + 1,
                lambda_tilde: lt,
                lambda_analytic: la,
                abs_err,
                rel_err,
                residual: spectrum.residual_norms[i],
                regime_eps_ok: eps_ok,
                regime_lambda_ok: la.map(|a| a < 1.0 / (16.0 * scale.rho * scale.rho)),
                wall_ms,
            }
        })
        .collect();
    Ok(SpectrumRun { net, operator, spectrum, analytic, level: level_report, rows })
}

/// Runs every scheduled scale in order. A failing level is recorded with its
/// error and the sweep continues.
pub fn run_convergence_sweep(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    if config.schedule.len() < 3 {
        return Err(Error::InvalidArgument(format!("a sweep needs at least 3 scales, got {}", config.schedule.len())));
    }
    let mut levels = Vec::new();
    let mut rows = Vec::new();
    for (level, scale) in config.schedule.iter().enumerate() {
        match run_spectrum(config, level, *scale) {
            Ok(run) => {
                levels.push(run.level);
                rows.extend(run.rows);
            }
            Err(e) => levels.push(LevelReport {
                level,
                rho: scale.rho,
                eps: scale.eps,
                n: 0,
                r: 0,
                covering_radius: f64::NAN,
                separation: f64::NAN,
                measure_rel_sigma: f64::NAN,
                essential_gap_bound: f64::NAN,
                gershgorin_bound: f64::NAN,
                method: None,
                iterations: 0,
                converged: false,
                wall_ms: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    let decay = decay_summaries(&rows, config.k, config.schedule.len());
    Ok(ConvergenceReport { config: config.clone(), levels, rows, decay })
}

fn decay_summaries(rows: &[ReportRow], k: usize, n_levels: usize) -> Vec<DecaySummary> {
    (1..=k)
        .map(|ki| {
            let errs: Vec<Option<f64>> = (0..n_levels)
                .map(|l| rows.iter().find(|r| r.level == l && r.k_index == ki).and_then(|r| r.abs_err))
                .collect();
            let orders = errs
                .windows(2)
                .map(|w| match (w[0], w[1]) {
                    (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
                    _ => None,
                })
                .collect::<Vec<Option<f64>>>();
            let meets_min_order = orders.iter().all(|o| o.is_some_and(|o| o >= MIN_DECAY_ORDER));
            let strictly_decreasing = errs.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b < a));
            DecaySummary { k_index: ki, orders, strictly_decreasing, meets_min_order }
        })
        .collect()
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_rows_csv(&self.rows, w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json_value())?)
    }

    /// The report as JSON, with non-finite numbers mapped to `null`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn any_unconverged(&self) -> bool {
        self.levels.iter().any(|l| l.error.is_none() && !l.converged)
    }
}

/// Writes rows with the documented header.
pub fn write_rows_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.level.to_string(),
            format!("{:e}", r.rho),
            format!("{:e}", r.eps),
            r.n.to_string(),
            r.r.to_string(),
            format!("{:e}", r.covering_radius),
            format!("{:e}", r.separation),
            r.k_index.to_string(),
            format!("{:e}", r.lambda_tilde),
            opt(r.lambda_analytic),
            opt(r.abs_err),
            opt(r.rel_err),
            format!("{:e}", r.residual),
            r.regime_eps_ok.to_string(),
            r.regime_lambda_ok.map(|b| b.to_string()).unwrap_or_default(),
            r.wall_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `D^s(u) = int_M int_{B_s(x)} |Gamma_xy u|^2 dy dx` for a Fourier
/// eigensection with eigenvalue `lambda` on a flat model of dimension `n`
/// and volume `vol`.
///
/// `int_M |Gamma_{x,x+v} u|^2 dx = vol (2 - 2 cos(w.v))` with `|w|^2 = lambda`,
/// and the ball integral of `cos(w.v)` reduces to one dimension along `w`,
/// evaluated with Simpson's rule after `t = s sin(phi)`.
pub fn fourier_mode_energy(n: usize, vol: f64, lambda: f64, s: f64) -> f64 {
    let w = lambda.max(0.0).sqrt();
    let nu_n = unit_ball_volume(n);
    if w == 0.0 {
        return 0.0;
    }
    let slab = unit_ball_volume(n - 1);
    let steps = 4000;
    let h = PI / steps as f64;
    let f = |phi: f64| (w * s * phi.sin()).cos() * phi.cos().powi(n as i32);
    let mut acc = f(-PI / 2.0) + f(PI / 2.0);
    for i in 1..steps {
        let phi = -PI / 2.0 + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(phi);
    }
    let cos_integral = slab * s.powi(n as i32) * acc * h / 3.0;
    vol * 2.0 * (nu_n * s.powi(n as i32) - cos_integral)
}

/// One inequality `lhs <= rhs + slack`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub case: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
    /// Inputs that reproduce the worst instance when the check fails.
    pub witness: Option<serde_json::Value>,
}

impl LemmaCheck {
    fn new(name: &str, case: String, lhs: f64, rhs: f64, slack: f64, witness: impl FnOnce() -> serde_json::Value) -> Self {
        let passed = lhs <= rhs + slack;
        LemmaCheck { name: name.into(), case, lhs, rhs, slack, passed, witness: (!passed).then(witness) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> impl Iterator<Item = &LemmaCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// A flat-model eigensection at scale `rho` on a net of covering radius
/// about `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatLemmaCase {
    pub bundle: BundleModel,
    /// Index into the analytic eigensections (0 is the constant mode of a
    /// trivial bundle).
    pub mode: usize,
    pub rho: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteConfig {
    pub seed: u64,
    /// Sphere radii and `(rho, eps)` scales for the path comparison.
    pub path_radii: Vec<f64>,
    pub path_scales: Vec<Scale>,
    pub quadruples: usize,
    pub flat_cases: Vec<FlatLemmaCase>,
    /// Monte Carlo pairs for `D^(rho - 2 eps)(Q^* u)`.
    pub prolongation_pairs: usize,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        let circle = ManifoldModel::circle(1.0).expect("valid");
        let torus = ManifoldModel::unit_torus(2).expect("valid");
        let case = |bundle: BundleModel, mode, rho: f64| FlatLemmaCase { bundle, mode, rho, eps: rho / 8.0 };
        LemmaSuiteConfig {
            seed: 1,
            path_radii: vec![1.0, 2.0],
            path_scales: vec![Scale { rho: 0.5, eps: 0.1 }, Scale { rho: 1.0, eps: 0.2 }, Scale { rho: 0.3, eps: 0.01 }],
            quadruples: 1000,
            flat_cases: vec![
                case(BundleModel::trivial_complex(circle.clone(), 1).expect("valid"), 0, 0.1),
                case(BundleModel::trivial_complex(circle.clone(), 1).expect("valid"), 1, 0.1),
                case(BundleModel::trivial_real(circle.clone(), 1).expect("valid"), 3, 0.1),
                case(BundleModel::flat_u1(circle, &[0.25]).expect("valid"), 0, 0.1),
                case(BundleModel::trivial_real(torus.clone(), 1).expect("valid"), 1, 0.2),
                case(BundleModel::flat_u1(torus, &[0.25, 0.5]).expect("valid"), 2, 0.2),
            ],
            prolongation_pairs: 100_000,
        }
    }
}

const ENERGY_SLACK: f64 = 1e-8;
const PATH_SLACK: f64 = 1e-10;

fn energy_slack(rhs: f64) -> f64 {
    ENERGY_SLACK * rhs.abs() + 1e-300
}

/// Runs the numeric inequality checks.
pub fn verify_lemma_suite(config: &LemmaSuiteConfig) -> Result<LemmaReport> {
    let mut checks = Vec::new();
    for &radius in &config.path_radii {
        for scale in &config.path_scales {
            checks.push(path_comparison_check(radius, *scale, config.quadruples, config.seed)?);
        }
    }
    for (idx, case) in config.flat_cases.iter().enumerate() {
        checks.extend(flat_checks(case, config.seed.wrapping_add(idx as u64), config.prolongation_pairs)?);
    }
    Ok(LemmaReport { checks })
}

/// `max |P_{y xi} P_{xi xj} P_{xj z} v - P_yz v|` (and the one-stop path)
/// over random quadruples against `K_E (rho + 2 eps) eps`.
fn path_comparison_check(radius: f64, scale: Scale, quadruples: usize, seed: u64) -> Result<LemmaCheck> {
    let b = BundleModel::tangent_sphere(radius)?;
    let m = &b.base;
    if scale.rho >= m.injectivity_radius() / 2.0 {
        return Err(Error::InvalidArgument(format!("path comparison needs rho < r_inj/2, got {}", scale.rho)));
    }
    let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
    let bound = b.curvature_norm_bound() * (scale.rho + 2.0 * scale.eps) * scale.eps;
    let mut worst = (0.0, serde_json::Value::Null);
    for _ in 0..quadruples {
        use rand::Rng;
        let xi = m.random_point(&mut g);
        let xj = m.random_point_near(&xi, scale.rho, &mut g);
        let y = m.random_point_near(&xi, scale.eps, &mut g);
        let z = m.random_point_near(&xj, scale.eps, &mut g);
        let t = 2.0 * PI * g.random::<f64>();
        let v = [C64::new(t.cos(), 0.0), C64::new(t.sin(), 0.0)];
        let (d1, d2) = path_comparison(&b, &xi, &xj, &y, &z, &v)?;
        let d = d1.max(d2);
        if d > worst.0 {
            worst = (d, serde_json::json!({ "xi": xi.coords, "xj": xj.coords, "y": y.coords, "z": z.coords, "v_angle": t }));
        }
    }
    let (lhs, witness) = worst;
    Ok(LemmaCheck::new(
        "path-comparison",
        format!("tangent-sphere R={radius} rho={} eps={} quadruples={quadruples}", scale.rho, scale.eps),
        lhs,
        bound,
        PATH_SLACK,
        || witness,
    ))
}

fn flat_checks(case: &FlatLemmaCase, seed: u64, pairs: usize) -> Result<Vec<LemmaCheck>> {
    let b = &case.bundle;
    let m = &b.base;
    if m.periods().is_none() {
        return Err(Error::Unsupported("energy inequalities are checked on flat models only".into()));
    }
    let n = m.dim();
    let nf = n as f64;
    let nu = unit_ball_volume(n);
    let vol = m.volume();
    let rho = case.rho;
    let u = b.analytic_eigensection(case.mode)?;
    let lambda = u.eigenvalue;
    let label = format!("{:?} mode={} lambda={lambda:.6} rho={rho}", b.kind, case.mode);
    let witness = || serde_json::to_value(case).expect("case serializes");
    let mut out = Vec::new();

    // D^rho(u) <= nu_n/(n+2) rho^(n+2) ||grad u||^2, with ||grad u||^2 = lambda vol
    let d_rho = fourier_mode_energy(n, vol, lambda, rho);
    let rhs = nu / (nf + 2.0) * rho.powi(n as i32 + 2) * lambda * vol;
    out.push(LemmaCheck::new("energy-upper-bound", label.clone(), d_rho, rhs, energy_slack(rhs), witness));

    let net = build_net(m, case.eps, seed)?;
    let mc = DEFAULT_MC_PER_POINT * net.len();
    let net = estimate_measures(net, mc, seed)?;
    let eps = net.covering_radius_est;
    let case_label = format!("{label} N={} eps={eps:.5}", net.len());

    // ||delta(Qu)||^2 <= (n+2)/(nu_n rho^(n+2)) (1 + 2 rho^2) D^(rho+2 eps)(u)
    if rho + 2.0 * eps < m.injectivity_radius() {
        let q = discretize_q(b, &net, &u, mc, seed)?;
        let lhs = discrete_energy(b, &net, rho, &q)?;
        let rhs = (nf + 2.0) / (nu * rho.powi(n as i32 + 2)) * (1.0 + 2.0 * rho * rho) * fourier_mode_energy(n, vol, lambda, rho + 2.0 * eps);
        out.push(LemmaCheck::new("discretization-energy", case_label.clone(), lhs, rhs, energy_slack(rhs), witness));
    }

    // D^(rho-2eps)(Q^* u) <= nu_n rho^(n+2)/(n+2) (1 + 2 rho^2) ||delta u||^2
    if rho > 2.0 * eps {
        let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
        let ubar = DiscreteSection::random(net.len(), b.rank(), b.scalar_field(), &mut g);
        let s = rho - 2.0 * eps;
        let lhs = prolongation_energy(b, &net, &ubar, s, pairs, seed)?;
        let rhs = nu * rho.powi(n as i32 + 2) / (nf + 2.0) * (1.0 + 2.0 * rho * rho) * discrete_energy(b, &net, rho, &ubar)?;
        out.push(LemmaCheck::new("prolongation-energy", format!("{case_label} random section"), lhs, rhs, energy_slack(rhs), witness));
    }

    // ||u||_theta^2 - (n+2)/(2 nu_n rho^n) D^rho(u) <= ||I u||_theta^2 on the net
    let theta = theta_on_net(&net, rho)?;
    let mu = net.measures()?;
    let w: Vec<f64> = theta.iter().zip(mu).map(|(t, m)| t * m).collect();
    let sampled = DiscreteSection::sample(&net, &u);
    let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
    let random = DiscreteSection::random(net.len(), b.rank(), b.scalar_field(), &mut g);
    for (what, ubar) in [("sampled mode", sampled), ("random section", random)] {
        let iu = smoothing_i(b, &net, rho, &ubar)?;
        let lower = ubar.weighted_inner(&ubar, &w).re - (nf + 2.0) / (2.0 * nu * rho.powi(n as i32)) * pair_energy(b, &net, rho, &ubar)?;
        let upper = iu.weighted_inner(&iu, &w).re;
        out.push(LemmaCheck::new("smoothing-lower-bound", format!("{case_label} {what}"), lower, upper, energy_slack(upper), witness));
    }
    Ok(out)
}

/// Monte Carlo `D^s(Q^* u) = vol(M) vol(B_s) E|Q^*u(y) - P_yz Q^*u(z)|^2`
/// with `y` uniform and `z` uniform in `B_s(y)`.
fn prolongation_energy(b: &BundleModel, net: &Net, ubar: &DiscreteSection, s: f64, pairs: usize, seed: u64) -> Result<f64> {
    let m = &b.base;
    let q = prolong_qstar(b, net, ubar);
    let mut g = rng::stream(seed ^ 0x5eed, rng::STREAM_EXPERIMENT);
    let mut sum = 0.0;
    for _ in 0..pairs {
        let y = m.random_point(&mut g);
        let z = m.random_point_near(&y, s, &mut g);
        let uy = q.eval(&y);
        let moved = b.transport(&y, &z)?.apply(&crate::bundles::FiberVector { base: z, components: q.eval(&z) });
        sum += uy.iter().zip(&moved.components).map(|(a, c)| (a - c).norm_sqr()).sum::<f64>();
    }
    Ok(m.volume() * m.ball_volume(s)? * sum / pairs as f64)
}

/// Lanczos against the dense oracle on one assembled operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    #[serde(rename = "N")]
    pub n: usize,
    pub r: usize,
    pub gershgorin_bound: f64,
    pub lanczos: Vec<f64>,
    pub dense: Vec<f64>,
    /// `max_i |lanczos_i - dense_i| / Lambda`.
    pub max_scaled_diff: f64,
    pub lanczos_converged: bool,
}

/// Assembles the operator of `config` at `scale` and compares forced Lanczos
/// with the dense spectrum on the smallest `config.k` values.
pub fn oracle_comparison(config: &ExperimentConfig, scale: Scale) -> Result<OracleComparison> {
    let forced = ExperimentConfig { force_lanczos: true, ..config.clone() };
    let run = run_spectrum(&forced, 0, scale)?;
    let s = run.operator.hermitian();
    let dense = crate::eigensolver::dense_reference_spectrum(&s)?;
    let k = config.k;
    let shift = run.spectrum.shift;
    let max_scaled_diff = run.spectrum.eigenvalues.iter().zip(&dense).map(|(a, b)| (a - b).abs() / shift).fold(0.0, f64::max);
    Ok(OracleComparison {
        n: run.net.len(),
        r: s.block_size(),
        gershgorin_bound: shift,
        lanczos: run.spectrum.eigenvalues.clone(),
        dense: dense[..k].to_vec(),
        max_scaled_diff,
        lanczos_converged: run.converged(),
    })
}

/// Eigenvalue pairing for tests and reports: both lists sorted, compared
/// index by index (multiplicities included).
pub fn paired_errors(approx: &[f64], exact: &[f64]) -> Vec<f64> {
    let mut a = approx.to_vec();
    let mut e = exact.to_vec();
    a.sort_by(f64::total_cmp);
    e.sort_by(f64::total_cmp);
    a.iter().zip(&e).map(|(x, y)| (x - y).abs()).collect()
}

/// Random discrete sections of the right shape for `b` on `net`.
pub fn random_sections(b: &BundleModel, net: &Net, count: usize, seed: u64) -> Vec<DiscreteSection> {
    let mut g = rng::stream(seed, rng::STREAM_EXPERIMENT);
    let field = b.scalar_field();
    (0..count).map(|_| DiscreteSection::random(net.len(), b.rank(), field, &mut g)).collect()
}

/// `true` when the bundle's scalars are real.
pub fn is_real(b: &BundleModel) -> bool {
    b.scalar_field() == ScalarField::Real
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_schedule_halves() {
        let s = halving_schedule(0.4, 0.125, 3);
        assert_eq!(s, vec![Scale { rho: 0.4, eps: 0.05 }, Scale { rho: 0.2, eps: 0.025 }, Scale { rho: 0.1, eps: 0.0125 }]);
    }

    #[test]
    fn fourier_energy_matches_closed_forms() {
        // n = 1: vol * (4 s - 4 sin(w s)/w)
        let (w, s) = (2.0 * PI, 0.1);
        let want = 4.0 * s - 4.0 * (w * s).sin() / w;
        assert!((fourier_mode_energy(1, 1.0, w * w, s) - want).abs() < 1e-12 * want);
        // small w s: 2 - 2 cos(w.v) ~ (w.v)^2 integrates to nu_n s^(n+2)/(n+2) |w|^2
        for n in 1..=3 {
            let lambda = 1e-4;
            let exact_small = unit_ball_volume(n) * s.powi(n as i32 + 2) / (n as f64 + 2.0) * lambda;
            let got = fourier_mode_energy(n, 1.0, lambda, s);
            assert!((got / exact_small - 1.0).abs() < 1e-6, "n={n}: {got} vs {exact_small}");
        }
        assert_eq!(fourier_mode_energy(2, 1.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn fourier_energy_matches_monte_carlo_on_the_torus() {
        let t = ManifoldModel::unit_torus(2).unwrap();
        let b = BundleModel::trivial_real(t.clone(), 1).unwrap();
        let u = b.analytic_eigensection(2).unwrap();
        let s = 0.2;
        let mut g = rng::stream(3, rng::STREAM_EXPERIMENT);
        let samples = 200_000;
        let mut vals = Vec::with_capacity(samples);
        for _ in 0..samples {
            let x = t.random_point(&mut g);
            let y = t.random_point_near(&x, s, &mut g);
            vals.push((u.eval(&x)[0] - u.eval(&y)[0]).norm_sqr());
        }
        let mean = vals.iter().sum::<f64>() / samples as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
        let scale = t.ball_volume(s).unwrap();
        let est = scale * mean;
        let se = scale * (var / samples as f64).sqrt();
        let exact = fourier_mode_energy(2, 1.0, u.eigenvalue, s);
        assert!((est - exact).abs() <= 3.0 * se, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn decay_orders() {
        let row = |level, err| ReportRow {
            level,
            rho: 0.0,
            eps: 0.0,
            n: 0,
            r: 1,
            covering_radius: 0.0,
            separation: 0.0,
            k_index: 1,
            lambda_tilde: 0.0,
            lambda_analytic: Some(1.0),
            abs_err: Some(err),
            rel_err: Some(err),
            residual: 0.0,
            regime_eps_ok: true,
            regime_lambda_ok: Some(true),
            wall_ms: 0,
        };
        let d = decay_summaries(&[row(0, 0.4), row(1, 0.1), row(2, 0.1)], 1, 3);
        assert_eq!(d[0].orders, vec![Some(2.0), Some(0.0)]);
        assert!(!d[0].strictly_decreasing);
        assert!(!d[0].meets_min_order);
    }

    #[test]
    fn paired_errors_sort_first() {
        assert_eq!(paired_errors(&[2.0, 1.0], &[1.5, 1.0]), vec![0.0, 0.5]);
    }

    #[test]
    fn lemma_suite_passes_with_defaults() {
        let report = verify_lemma_suite(&LemmaSuiteConfig { prolongation_pairs: 20_000, ..LemmaSuiteConfig::default() }).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(report.checks.iter().any(|c| c.name == "path-comparison"));
        assert!(report.checks.iter().any(|c| c.name == "discretization-energy"));
    }

    #[test]
    fn constant_section_checks_are_trivial() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let case = FlatLemmaCase { bundle: BundleModel::trivial_real(circle, 1).unwrap(), mode: 0, rho: 0.1, eps: 0.0125 };
        let checks = flat_checks(&case, 3, 1000).unwrap();
        let upper = checks.iter().find(|c| c.name == "energy-upper-bound").unwrap();
        assert_eq!((upper.lhs, upper.rhs), (0.0, 0.0));
        let q = checks.iter().find(|c| c.name == "discretization-energy").unwrap();
        assert_eq!((q.lhs, q.rhs), (0.0, 0.0));
    }

    #[test]
    fn violations_carry_witnesses() {
        let c = LemmaCheck::new("x", "case".into(), 2.0, 1.0, 0.0, || serde_json::json!({"a": 1}));
        assert!(!c.passed);
        assert!(c.witness.is_some());
    }
}
