mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use maxfeec::bench::{emit_results, evaluate_checks, median_over_seeds, run_convergence, summarize, ConvergenceConfig};
use maxfeec::dynamics::{energy, gauss_residual, step, FieldState, Formulation, InverseMass, SplitKind, SplitScheme, UnitSystem};
use maxfeec::feec::{build_space, AnalyticForm, Cochain, Family};
use maxfeec::mesh::{generate_cubical_lattice, generate_periodic_triangulation, MeshMethod};
use maxfeec::operators::{derivative_matrix, mass_matrix};
use maxfeec::spai::{make_pattern, spai_approximate_inverse, PatternKind};
use maxfeec::yee::equivalence_check;
use maxfeec::Sparse;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

const YEE_THRESHOLD: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "maxfeec", version, about = "Structure-preserving FEEC experiments for Maxwell's equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sparse approximate inverse of a matrix in coordinate-list format.
    Spai(SpaiArgs),
    /// Time-step Maxwell's equations with a splitting scheme; prints a CSV time series.
    Evolve(EvolveArgs),
    /// Compare lumped cubical SFEEC with a staggered-grid FDTD solver.
    YeeCheck(YeeArgs),
    /// Curl-of-curl convergence sweep.
    Converge(ConvergeArgs),
}

#[derive(Args)]
struct SpaiArgs {
    /// Input matrix (`row col value` lines, optional `% rows cols nnz` header).
    input: PathBuf,
    #[arg(long, default_value = "m1")]
    pattern: PatternKind,
    /// Output file for Q; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Output file for the JSON report; stderr if omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long, default_value = "strang")]
    scheme: SplitKind,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// SPAI pattern for M1^-1; `dense` uses a factorization.
    #[arg(long, default_value = "m1")]
    pattern: PatternKind,
    #[arg(long, default_value = "ae")]
    formulation: Formulation,
    /// Write a row every N steps (the first and last step are always written).
    #[arg(long, default_value_t = 1)]
    diag_every: usize,
    /// P1-, P2- (periodic triangulation) or Q1- (periodic lattice).
    #[arg(long, default_value = "P1-")]
    basis: Family,
    /// Vertices of the triangulation.
    #[arg(long, default_value_t = 256)]
    vertices: usize,
    #[arg(long, default_value = "delaunay-tiled")]
    mesh_method: MeshMethod,
    /// Mesh seed, also used for `--init random`.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Lattice cells per axis for Q1-.
    #[arg(long, value_parser = triple::<usize>, default_value = "8,8,8")]
    grid: [usize; 3],
    /// Lattice spacings for Q1-.
    #[arg(long, value_parser = triple::<f64>, default_value = "1,1,1")]
    spacing: [f64; 3],
    /// Initial vector potential: `sine` (sin(2 pi m y / Ly) dx) or `random`.
    #[arg(long, default_value = "sine")]
    init: String,
    /// Wavenumber index m of the sine initial condition.
    #[arg(long, default_value_t = 1)]
    mode: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon0: f64,
    #[arg(long, default_value_t = 1.0)]
    mu0: f64,
    /// CSV output; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct YeeArgs {
    #[arg(long, value_parser = triple::<usize>, default_value = "4,4,4")]
    grid: [usize; 3],
    #[arg(long, value_parser = triple::<f64>, default_value = "1,0.5,2")]
    spacing: [f64; 3],
    #[arg(long, default_value_t = 0.2)]
    dt: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConvergeArgs {
    /// TOML file with keys mirroring the sweep configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for records.csv and summary.json.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Evaluate the reference checks and exit nonzero if any fails.
    #[arg(long)]
    check: bool,
    #[arg(long, value_delimiter = ',')]
    bases: Option<Vec<Family>>,
    #[arg(long, value_delimiter = ',')]
    patterns: Option<Vec<PatternKind>>,
    #[arg(long)]
    lx: Option<f64>,
    #[arg(long)]
    ly: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    vertex_ladder: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    mesh_method: Option<MeshMethod>,
    #[arg(long)]
    quadrature_order: Option<usize>,
    /// `lo,hi` in cells per wavelength.
    #[arg(long, value_parser = pair)]
    fit_window: Option<(f64, f64)>,
    /// `factorization` or `cg`.
    #[arg(long)]
    dense_solve: Option<String>,
    #[arg(long)]
    cg_tolerance: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let v: Vec<T> = s.split(',').map(|t| t.trim().parse().map_err(|_| format!("bad component `{t}`"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

fn pair(s: &str) -> Result<(f64, f64), String> {
    let [a, b]: [f64; 2] = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad number `{t}`")))
        .collect::<Result<Vec<_>, _>>()?
        .try_into()
        .map_err(|_| format!("expected `lo,hi`, got `{s}`"))?;
    Ok((a, b))
}

fn writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_spai(a: SpaiArgs) -> Result<ExitCode> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let m = Sparse::read_coo(BufReader::new(file))?;
    let pattern = make_pattern(&m, a.pattern)?;
    let (q, report) = spai_approximate_inverse(&m, &pattern)?;
    let mut w = writer(&a.output)?;
    q.write_coo(&mut w)?;
    w.flush()?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.report {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_evolve(a: EvolveArgs) -> Result<ExitCode> {
    if a.diag_every == 0 {
        bail!("--diag-every must be at least 1");
    }
    let mesh = Arc::new(match a.basis {
        Family::Q1Minus => generate_cubical_lattice(a.grid, a.spacing)?,
        _ => generate_periodic_triangulation(a.vertices, 1.0, 1.0, a.seed, a.mesh_method)?,
    });
    let dim = mesh.dimension();
    let s1 = build_space(&mesh, a.basis, 1)?;
    let s2 = build_space(&mesh, a.basis, 2)?;
    let curl = derivative_matrix(&s1, &s2)?;
    let m1 = mass_matrix(&s1);
    let m2 = mass_matrix(&s2);
    // Gauss' law only has content when 3-forms exist
    let div = if dim == 3 { Some(derivative_matrix(&s2, &build_space(&mesh, a.basis, 3)?)?) } else { None };
    let q = match a.pattern {
        PatternKind::Dense => InverseMass::exact(&m1)?,
        kind => InverseMass::Sparse(spai_approximate_inverse(&m1, &make_pattern(&m1, kind)?)?.0),
    };
    let units = UnitSystem::new(a.epsilon0, a.mu0)?;
    let scheme = SplitScheme::new(a.scheme, a.dt, q, curl.clone(), m2, units)?;

    let a0 = match a.init.as_str() {
        "sine" => {
            let ly = mesh.periods()[1];
            let k = 2.0 * std::f64::consts::PI * a.mode as f64 / ly;
            s1.canonical_projection(&AnalyticForm::sine_dx(dim, k, 1.0))?
        }
        "random" => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
            Cochain::plain(&s1, (0..s1.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect())?
        }
        other => bail!("unknown --init `{other}` (expected sine or random)"),
    };
    let mut state = FieldState::new(Formulation::AE, a0, Cochain::zeros(&s1));
    if a.formulation == Formulation::BE {
        state = state.to_be(&curl)?;
    }

    let mut w = writer(&a.output)?;
    writeln!(w, "step,time,energy,gauss_residual")?;
    let row = |w: &mut Box<dyn Write>, n: usize, s: &FieldState<f64>| -> Result<()> {
        let g = match (&div, s.formulation) {
            (Some(d), Formulation::BE) => format!("{:e}", gauss_residual(s, d)?),
            _ => String::new(),
        };
        writeln!(w, "{n},{},{},{g}", s.time, energy(s, &scheme))?;
        Ok(())
    };
    row(&mut w, 0, &state)?;
    for n in 1..=a.steps {
        state = step(&state, &scheme);
        if n % a.diag_every == 0 || n == a.steps {
            row(&mut w, n, &state)?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_yee(a: YeeArgs) -> Result<ExitCode> {
    let r = equivalence_check(a.grid, a.spacing, a.dt, a.steps, a.seed, UnitSystem::natural())?;
    let pass = r.max_deviation <= YEE_THRESHOLD;
    println!("max deviation: {:.3e} (e {:.3e}, b {:.3e}, max |field| {:.3e})", r.max_deviation, r.max_e_deviation, r.max_b_deviation, r.max_field);
    println!("{} (threshold {YEE_THRESHOLD:e})", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn converge_config(a: &ConvergeArgs) -> Result<ConvergenceConfig> {
    let mut cfg = ConvergenceConfig::default();
    if let Some(p) = &a.config {
        config::ConfigFile::load(p)?.apply(&mut cfg)?;
    }
    let overrides = config::ConfigFile {
        bases: a.bases.as_ref().map(|v| v.iter().map(|b| b.name().to_string()).collect()),
        patterns: a.patterns.as_ref().map(|v| v.iter().map(|p| p.name().to_string()).collect()),
        lx: a.lx,
        ly: a.ly,
        modes: a.modes.clone(),
        vertex_ladder: a.vertex_ladder.clone(),
        seeds: a.seeds.clone(),
        mesh_method: None,
        quadrature_order: a.quadrature_order,
        fit_window: a.fit_window,
        dense_solve: a.dense_solve.clone(),
        cg_tolerance: a.cg_tolerance,
        threads: a.threads,
    };
    overrides.apply(&mut cfg)?;
    if let Some(m) = a.mesh_method {
        cfg.mesh_method = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_converge(a: ConvergeArgs) -> Result<ExitCode> {
    let cfg = converge_config(&a)?;
    let t = std::time::Instant::now();
    let out = run_convergence(&cfg)?;
    log::info!("sweep finished in {:.1} s", t.elapsed().as_secs_f64());
    for s in &out.skipped {
        log::warn!("skipped {}/{} n={} seed={} mode={}: {}", s.basis, s.pattern, s.n_vertices, s.seed, s.mode, s.reason);
    }
    let medians = median_over_seeds(&out.records);
    let summary = summarize(&medians, cfg.fit_window);
    emit_results(&out.records, &summary, &a.out)?;
    for s in &summary {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:<4} {:<9} exponent {:>7}  r2 {:>6}  saturation {:>7}", s.basis.name(), s.pattern.name(), fmt(s.exponent), fmt(s.r2), fmt(s.saturation));
    }
    println!("wrote {} and {}", a.out.join("records.csv").display(), a.out.join("summary.json").display());
    if !a.check {
        return Ok(ExitCode::SUCCESS);
    }
    let checks = evaluate_checks(&summary, &medians);
    for c in &checks {
        let v = c.value.map_or("none".to_string(), |v| format!("{v:.3}"));
        println!("{} {:<32} {:>8}  expected {}", if c.pass { "PASS" } else { "FAIL" }, c.name, v, c.expected);
    }
    Ok(if checks.iter().all(|c| c.pass) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Spai(a) => run_spai(a),
        Command::Evolve(a) => run_evolve(a),
        Command::YeeCheck(a) => run_yee(a),
        Command::Converge(a) => run_converge(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
