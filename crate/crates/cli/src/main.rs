use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use conlap::bundles::BundleKind;
use conlap::geometry::ManifoldModel;
use conlap::harness::{
    halving_schedule, oracle_comparison, run_convergence_sweep, run_spectrum, verify_lemma_suite, write_rows_csv,
    ExperimentConfig, LemmaSuiteConfig, Scale,
};
use conlap::nets::{build_net, estimate_measures, grid_net, NetKind, DEFAULT_MC_PER_POINT};
use conlap::Error;

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_REGIME: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;
const EXIT_LEMMA: u8 = 5;

/// Agreement required between Lanczos and the dense spectrum, relative to
/// the Gershgorin bound.
const ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "conlap", version, about = "Spectra of graph connection Laplacians on epsilon-nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum at a single (rho, eps).
    Spectrum(RunArgs),
    /// Convergence sweep over halving scales.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Number of halvings of (rho, eps).
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Build an epsilon-net with Voronoi measures.
    Net {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Numeric lemma suite.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Lanczos against the dense spectrum on one operator.
    Oracle(RunArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// circle[:L], torus<d> (unit), torus:L1,L2[,L3], sphere[:R]
    #[arg(long, default_value = "torus2")]
    manifold: String,
    /// trivial-real[:r], trivial-complex[:r], flat-u1, tangent-sphere
    #[arg(long, default_value = "trivial-real")]
    bundle: String,
    /// Holonomy parameters of a flat U(1) bundle, one per torus direction.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    holonomy: Vec<f64>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    rho: f64,
    /// Defaults to rho / 8.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo samples for the Voronoi measures (default 400 per net point).
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = conlap::eigensolver::DEFAULT_TOL)]
    tol: f64,
    /// Use a product grid with exact measures instead of farthest-point sampling.
    #[arg(long)]
    grid: bool,
    #[arg(long)]
    force_lanczos: bool,
    /// Report wall_ms as 0 for byte-reproducible output.
    #[arg(long)]
    no_timing: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Regime(_) | Error::BeyondInjectivity { .. } => EXIT_REGIME,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: EXIT_IO, message: e.to_string() }
    }
}

fn config_error(message: String) -> Failure {
    Failure { code: EXIT_CONFIG, message }
}

fn parse_lengths(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| config_error(format!("bad number '{s}' in --manifold"))))
        .collect()
}

fn parse_manifold(text: &str) -> Result<ManifoldModel, Failure> {
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (text, None),
    };
    let model = match (name, arg) {
        ("circle", None) => ManifoldModel::circle(1.0),
        ("circle", Some(a)) => ManifoldModel::circle(parse_lengths(a)?[0]),
        ("sphere", None) => ManifoldModel::sphere(1.0),
        ("sphere", Some(a)) => ManifoldModel::sphere(parse_lengths(a)?[0]),
        ("torus", Some(a)) => ManifoldModel::flat_torus(&parse_lengths(a)?),
        (n, None) if n.starts_with("torus") => {
            let d = n["torus".len()..].parse::<usize>().map_err(|_| config_error(format!("unknown manifold '{text}'")))?;
            ManifoldModel::unit_torus(d)
        }
        _ => return Err(config_error(format!("unknown manifold '{text}'"))),
    };
    Ok(model?)
}

fn parse_bundle(text: &str, holonomy: &[f64]) -> Result<BundleKind, Failure> {
    let (name, rank) = match text.split_once(':') {
        Some((n, r)) => (n, r.parse::<usize>().map_err(|_| config_error(format!("bad rank in --bundle '{text}'")))?),
        None => (text, 1),
    };
    if name != "flat-u1" && !holonomy.is_empty() {
        return Err(config_error("--holonomy applies to --bundle flat-u1 only".into()));
    }
    match name {
        "trivial-real" => Ok(BundleKind::TrivialReal { rank }),
        "trivial-complex" => Ok(BundleKind::TrivialComplex { rank }),
        "flat-u1" => Ok(BundleKind::FlatU1 { holonomy: holonomy.to_vec() }),
        "tangent-sphere" => Ok(BundleKind::TangentSphere),
        _ => Err(config_error(format!("unknown bundle '{text}'"))),
    }
}

fn experiment(args: &RunArgs, schedule: Vec<Scale>) -> Result<ExperimentConfig, Failure> {
    let manifold = parse_manifold(&args.model.manifold)?;
    let bundle = parse_bundle(&args.model.bundle, &args.model.holonomy)?;
    let mut config = ExperimentConfig::new(manifold, bundle, args.k, schedule);
    config.bundle_model()?;
    config.net_kind = if args.grid { NetKind::Grid } else { NetKind::FarthestPoint };
    config.mc_samples = args.mc_samples;
    config.seed = args.seed;
    config.tol = args.tol;
    config.force_lanczos = args.force_lanczos;
    config.record_timing = !args.no_timing;
    Ok(config)
}

fn first_scale(args: &RunArgs) -> Scale {
    Scale { rho: args.rho, eps: args.eps.unwrap_or(args.rho / 8.0) }
}

fn open_output(output: &OutputArgs) -> Result<Box<dyn Write>, Failure> {
    Ok(match &output.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(output: &OutputArgs, value: &T) -> Result<(), Failure> {
    let mut w = open_output(output)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Spectrum(args) => {
            let scale = first_scale(&args);
            let config = experiment(&args, vec![scale])?;
            let run = run_spectrum(&config, 0, scale)?;
            match args.output.format {
                Format::Csv => {
                    let mut w = open_output(&args.output)?;
                    write_rows_csv(&run.rows, &mut w)?;
                    w.flush()?;
                }
                Format::Json => write_json(
                    &args.output,
                    &serde_json::json!({ "config": config, "level": run.level, "rows": run.rows }),
                )?,
            }
            if !run.converged() {
                return Err(Failure { code: EXIT_NOT_CONVERGED, message: "eigensolver did not converge".into() });
            }
            Ok(())
        }
        Command::Sweep { run: args, levels } => {
            let first = first_scale(&args);
            let schedule = halving_schedule(first.rho, first.eps / first.rho, levels);
            let config = experiment(&args, schedule)?;
            let report = run_convergence_sweep(&config)?;
            match args.output.format {
                Format::Csv => {
                    let mut w = open_output(&args.output)?;
                    report.write_csv(&mut w)?;
                    w.flush()?;
                }
                Format::Json => write_json(&args.output, &report)?,
            }
            for level in &report.levels {
                if let Some(e) = &level.error {
                    eprintln!("level {} (rho = {}) failed: {e}", level.level, level.rho);
                }
            }
            if let Some(level) = report.levels.iter().find(|l| l.error.is_some()) {
                let code = if level.error.as_deref().is_some_and(|e| e.starts_with("outside the convergence regime")) {
                    EXIT_REGIME
                } else {
                    EXIT_CONFIG
                };
                return Err(Failure { code, message: "some levels failed".into() });
            }
            if report.any_unconverged() {
                return Err(Failure { code: EXIT_NOT_CONVERGED, message: "eigensolver did not converge".into() });
            }
            Ok(())
        }
        Command::Net { model, eps, seed, mc_samples, grid, output } => {
            let m = parse_manifold(&model.manifold)?;
            let net = if grid {
                grid_net(&m, eps)?
            } else {
                let net = build_net(&m, eps, seed)?;
                let mc = mc_samples.unwrap_or(DEFAULT_MC_PER_POINT * net.len());
                estimate_measures(net, mc, seed)?
            };
            match output.format {
                Format::Json => {
                    let mut w = open_output(&output)?;
                    w.write_all(net.to_json()?.as_bytes())?;
                    writeln!(w)?;
                    w.flush()?;
                }
                Format::Csv => {
                    let mut w = open_output(&output)?;
                    writeln!(w, "index,x0,x1,x2,measure")?;
                    let mu = net.measures()?;
                    for (i, p) in net.points.iter().enumerate() {
                        writeln!(w, "{i},{:e},{:e},{:e},{:e}", p.coords[0], p.coords[1], p.coords[2], mu[i])?;
                    }
                    w.flush()?;
                }
            }
            eprintln!(
                "N = {}, covering radius ~ {:.6}, separation ~ {:.6}",
                net.len(),
                net.covering_radius_est,
                net.separation_est
            );
            Ok(())
        }
        Command::Check { seed, output } => {
            let report = verify_lemma_suite(&LemmaSuiteConfig { seed, ..LemmaSuiteConfig::default() })?;
            match output.format {
                Format::Json => write_json(&output, &report)?,
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(open_output(&output)?);
                    w.write_record(["name", "case", "lhs", "rhs", "slack", "passed"]).map_err(Error::from)?;
                    for c in &report.checks {
                        w.write_record([
                            c.name.clone(),
                            c.case.clone(),
                            format!("{:e}", c.lhs),
                            format!("{:e}", c.rhs),
                            format!("{:e}", c.slack),
                            c.passed.to_string(),
                        ])
                        .map_err(Error::from)?;
                    }
                    w.flush()?;
                }
            }
            if !report.passed() {
                for c in report.violations() {
                    eprintln!("violated: {} [{}] {} > {}", c.name, c.case, c.lhs, c.rhs);
                }
                return Err(Failure { code: EXIT_LEMMA, message: "lemma suite violated".into() });
            }
            Ok(())
        }
        Command::Oracle(args) => {
            let scale = first_scale(&args);
            let config = experiment(&args, vec![scale])?;
            let cmp = oracle_comparison(&config, scale)?;
            match args.output.format {
                Format::Json => write_json(&args.output, &cmp)?,
                Format::Csv => {
                    let mut w = open_output(&args.output)?;
                    writeln!(w, "k_index,lanczos,dense,scaled_diff")?;
                    for (i, (a, b)) in cmp.lanczos.iter().zip(&cmp.dense).enumerate() {
                        writeln!(w, "{},{a:e},{b:e},{:e}", i + 1, (a - b).abs() / cmp.gershgorin_bound)?;
                    }
                    w.flush()?;
                }
            }
            if !cmp.lanczos_converged || cmp.max_scaled_diff > ORACLE_TOLERANCE {
                return Err(Failure {
                    code: EXIT_NOT_CONVERGED,
                    message: format!("Lanczos and dense spectra differ by {:e} Lambda", cmp.max_scaled_diff),
                });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
