use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ipg_core::harness::{
    bounds_report, grid_csv_string, rows_csv_string, run_grid_with, spectrum_report, write_trace_files, GridConfig,
    GridTable, NoiseKind, Problem, RunConfig, RunTrace, Tuning,
};
use ipg_core::solvers::{BfgsStep, Method};

#[derive(Debug, Parser)]
#[command(name = "ipg", version = ipg_core::harness::version(), about = "Distributed linear regression under noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one solver on one dataset and write its traces.
    Run(RunArgs),
    /// Run every configuration of a TOML grid file and write a summary table.
    Grid(GridArgs),
    /// Print the spectrum of A^T A and the stability of the default parameters.
    Spectrum(SpectrumArgs),
    /// Evaluate the IPG error bounds for a dataset and noise setting.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// ash608, gr_30_30, synthetic:N,d,cond,seed or a path to a .mtx file.
    #[arg(long)]
    dataset: String,
    /// Directory searched for <name>.mtx before the built-in matrices.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    agents: Option<usize>,
    /// `published` uses the tabulated parameters where they exist.
    #[arg(long)]
    tuning: Option<Tuning>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Start from a TOML run file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "eta-apc")]
    eta_apc: Option<f64>,
    /// BFGS step length: `exact` or `unit`.
    #[arg(long = "bfgs-step", value_parser = parse_bfgs_step)]
    bfgs_step: Option<BfgsStep>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    tuning: Option<Tuning>,
    #[arg(long = "record-every")]
    record_every: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Only write the summary table.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// The bounds exist for IPG only.
    #[arg(long, default_value = "ipg")]
    method: Method,
    #[arg(long, default_value = "none")]
    noise: NoiseKind,
    /// Last iteration of the bound trace.
    #[arg(long, default_value_t = 1000)]
    horizon: usize,
    /// Write bounds.json and bounds.csv here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_bfgs_step(s: &str) -> std::result::Result<BfgsStep, String> {
    match s.to_ascii_lowercase().as_str() {
        "exact" => Ok(BfgsStep::Exact),
        "unit" => Ok(BfgsStep::Unit),
        _ => Err(format!("unknown BFGS step `{s}` (expected exact or unit)")),
    }
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => {
                let (Some(dataset), Some(method)) = (self.dataset.clone(), self.method) else {
                    bail!("--dataset and --method are required without --config");
                };
                RunConfig::new(dataset, method, NoiseKind::None)
            }
        };
        if let Some(v) = self.dataset {
            cfg.dataset = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.noise {
            cfg.noise = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        let p = &mut cfg.params;
        p.alpha = self.alpha.or(p.alpha);
        p.delta = self.delta.or(p.delta);
        p.beta = self.beta.or(p.beta);
        p.gamma = self.gamma.or(p.gamma);
        p.eta_apc = self.eta_apc.or(p.eta_apc);
        p.bfgs_step = self.bfgs_step.or(p.bfgs_step);
        if let Some(v) = self.reps {
            cfg.reps = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.agents {
            cfg.agents = v;
        }
        if let Some(v) = self.tuning {
            cfg.tuning = v;
        }
        if let Some(v) = self.record_every {
            cfg.record_every = v;
        }
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DatasetArgs {
    fn config(&self, method: Method, noise: NoiseKind) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(self.dataset.clone(), method, noise);
        cfg.data_dir = self.data_dir.clone();
        if let Some(a) = self.agents {
            cfg.agents = a;
        }
        if let Some(t) = self.tuning {
            cfg.tuning = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6e}"))
}

fn print_summary(trace: &RunTrace) {
    let s = &trace.summary;
    eprintln!(
        "{} {} {} seed {}: final error {:.6e} after {} iterations ({:?})",
        s.dataset, s.method, s.noise, s.seed, s.final_error, s.iterations, s.stop
    );
}

fn write_summary(out: &Path, table: &GridTable) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("summary.csv");
    fs::write(&path, grid_csv_string(table)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let out = args.out.clone();
    let cfg = args.into_config()?;
    let table = run_grid_with(std::slice::from_ref(&cfg), |_, trace| {
        write_trace_files(trace, &out)?;
        print_summary(trace);
        Ok(())
    });
    let path = write_summary(&out, &table)?;
    eprintln!("summary written to {}", path.display());
    if let Some(msg) = table.rows.first().and_then(|r| r.error.as_deref()) {
        bail!("{msg}");
    }
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let grid = GridConfig::from_toml_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    let configs = grid.expand();
    let traces_dir = args.out.join("traces");
    let table = run_grid_with(&configs, |_, trace| {
        if !args.no_traces {
            write_trace_files(trace, &traces_dir)?;
        }
        print_summary(trace);
        Ok(())
    });
    let path = write_summary(&args.out, &table)?;
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{} cells ({failed} with errors), summary written to {}",
        table.rows.len(),
        path.display()
    );
    Ok(())
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<()> {
    let cfg = args.data.config(Method::Ipg, NoiseKind::None)?;
    let problem = Problem::for_config(&cfg)?;
    let r = spectrum_report(&problem, &cfg)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("dataset            {} ({})", r.dataset, r.source);
    println!("size               {} x {}", r.rows, r.d);
    println!("lambda_1           {:.9e}", r.lambda_1);
    println!("lambda_d           {:.9e}", r.lambda_d);
    println!("condition number   {:.6e}", r.condition_number);
    println!("varrho             {:.9}", r.varrho);
    println!("||K* H - I||_F     {:.3e}", r.kstar_residual_fro);
    println!(
        "||K* A^T||_2       {:.9e} (1/sqrt(lambda_d) = {:.9e})",
        r.kstar_at_norm, r.inv_sqrt_lambda_d
    );
    println!(
        "APC projector      mu_max {:.6} mu_min {:.6} ({} agents)",
        r.apc.mu_max, r.apc.mu_min, r.agents
    );
    println!();
    println!(
        "{:<6} {:>12} {:>10} {:>10} {:>10} {:>12}  stable",
        "method", "alpha", "beta", "gamma", "eta", "rate"
    );
    for c in &r.params {
        let s = &c.config;
        let stable = match c.stable {
            Some(true) => "yes",
            Some(false) => "NO",
            None => "-",
        };
        println!(
            "{:<6} {:>12.6e} {:>10.6} {:>10.6} {:>10.6} {:>12}  {stable}",
            c.method.as_str(),
            s.alpha,
            s.beta,
            s.gamma,
            s.eta_apc,
            c.rate.map_or_else(|| "-".into(), |r| format!("{r:.8}")),
        );
    }
    Ok(())
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    if args.method != Method::Ipg {
        bail!("bounds are available for ipg only, got {}", args.method);
    }
    let cfg = args.data.config(Method::Ipg, args.noise)?;
    let problem = Problem::for_config(&cfg)?;
    let r = bounds_report(&problem, &cfg, args.horizon)?;
    let i = &r.inputs;
    println!("dataset              {} ({} noise)", r.dataset, r.noise);
    println!("alpha, delta         {:.6e}, {}", i.alpha, i.delta);
    println!("rho (pre-cond.)      {:.9}", i.rho);
    println!("eta, omega           {:.6e}, {:.6e}", i.eta, i.omega);
    println!(
        "observation floor    {} (GD: {})",
        fmt_opt(r.theorem1_asymptote),
        fmt_opt(r.gd_observation_asymptote)
    );
    println!(
        "process gates        rho_bd {:.6e} omega_bd {:.6e} satisfied {}",
        r.gates.rho_bd, r.gates.omega_bd, r.gates.satisfied
    );
    println!(
        "process limit        {:.6e} (GD: {})",
        r.theorem2_limit,
        fmt_opt(r.gd_process_asymptote)
    );
    println!("u limit              {:.9}", r.u_limit);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("bounds.json"), serde_json::to_string_pretty(&r)? + "\n")?;
        fs::write(out.join("bounds.csv"), rows_csv_string(&r.rows)?)?;
        eprintln!("bound trace written to {}", out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Bounds(a) => cmd_bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
