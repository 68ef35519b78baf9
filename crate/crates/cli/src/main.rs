use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinbath_core::harness::{self, RunConfig};
use spinbath_core::lattice::CouplingMode;
use spinbath_core::Error;

#[derive(Parser)]
#[command(name = "spinbath", version, about = "Spin-bath relaxation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate one configuration and write its series, summary row and manifest.
    Decay(RunArgs),
    /// Run a (lambda, L, seed) grid into a resumable summary table.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated couplings.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Comma-separated bath lengths.
        #[arg(long, value_delimiter = ',')]
        ls: Option<Vec<usize>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Equilibration-bound quantities per coupling.
    Gpb {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Skip the propagation that measures tau_rel.
        #[arg(long)]
        no_relaxation: bool,
    },
    /// Fit lambda_crit(N) = C2 N^(1/4) exp(-b N) to a sweep table.
    ScalingFit {
        /// Sweep CSV written by `sweep`.
        input: PathBuf,
        #[arg(long, default_value_t = spinbath_core::dynamics::DEFAULT_THRESHOLD, allow_hyphen_values = true)]
        threshold: f64,
        /// Also write the fit as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Prepare the initial ensemble and report where the energy filter put it.
    FilterCheck {
        #[command(flatten)]
        run: RunArgs,
        /// Random probes for the effective-dimension estimate.
        #[arg(long, default_value_t = 8)]
        probes: usize,
    },
}

/// Flags override the matching fields of the config file.
#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config; every field is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    cheb_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    energy: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    coupling_mode: Option<CouplingMode>,
    #[arg(long)]
    random_std: Option<f64>,
    #[arg(long)]
    coupling_seed: Option<u64>,
    #[arg(long)]
    ed_cap: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_mode(s: &str) -> Result<CouplingMode, String> {
    match s {
        "uniform" => Ok(CouplingMode::Uniform),
        "random" => Ok(CouplingMode::Random),
        _ => Err(format!("unknown coupling mode {s:?} (uniform or random)")),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($field).+ = v;
                }
            };
        }
        set!(l => lattice.l);
        set!(lambda => dynamics.lambda);
        set!(dt => dynamics.dt);
        set!(cheb_tol => dynamics.cheb_tol);
        set!(seed => initial.seed);
        set!(delta => initial.delta);
        set!(coupling_mode => couplings.mode);
        set!(random_std => couplings.random_std);
        set!(coupling_seed => couplings.seed);
        set!(ed_cap => ed_cap);
        set!(workers => workers);
        set!(out => outputs.dir);
        set!(checkpoint_every => outputs.checkpoint_every);
        if self.t_max.is_some() {
            c.dynamics.t_max = self.t_max;
        }
        if self.energy.is_some() {
            c.initial.energy = self.energy;
        }
        c.validate()?;
        Ok(c)
    }
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Decay(args) => {
            let cfg = args.resolve()?;
            if args.print_config {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let cost = harness::estimate_cost(&cfg)?;
            eprintln!(
                "N = {}, t_max = {}: about {:.2e} matrix-vector products on {} amplitudes",
                cost.n_spins, cost.t_max, cost.matvecs, cost.total_dim
            );
            let run = harness::run_decay(&cfg)?;
            for p in run.write(&cfg.outputs.dir)? {
                eprintln!("wrote {}", p.display());
            }
            print!("{}", run.summary_csv()?);
        }
        Command::Sweep {
            run,
            lambdas,
            ls,
            seeds,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(v) = lambdas {
                cfg.sweep.lambdas = v;
            }
            if let Some(v) = ls {
                cfg.sweep.ls = v;
            }
            if let Some(v) = seeds {
                cfg.sweep.seeds = v;
            }
            cfg.validate()?;
            if run.print_config {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let out = harness::sweep(&cfg)?;
            let failed = out.rows.iter().filter(|r| r.failed()).count();
            eprintln!(
                "{} rows ({} computed, {} failed) in {}",
                out.rows.len(),
                out.computed,
                failed,
                harness::sweep_csv_path(&cfg).display()
            );
            for (n, c) in &out.lambda_crit {
                match c {
                    Some(c) => println!("N = {n}: lambda_crit = {c}"),
                    None => println!("N = {n}: no threshold crossing"),
                }
            }
            if let Some(f) = &out.scaling {
                print!("{}", f.csv_footer());
            }
        }
        Command::Gpb {
            run,
            lambdas,
            no_relaxation,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(v) = lambdas {
                cfg.gpb.lambdas = v;
            }
            cfg.gpb.relaxation &= !no_relaxation;
            cfg.validate()?;
            if run.print_config {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let out = harness::gpb_report(&cfg)?;
            out.write(&cfg.outputs.dir)?;
            print!("{}", out.csv());
        }
        Command::ScalingFit {
            input,
            threshold,
            json: path,
        } => {
            let text = std::fs::read_to_string(&input)?;
            let (crit, fit) = harness::scaling_fit_from_csv(&text, threshold)?;
            for (n, c) in crit {
                eprintln!("N = {n}: lambda_crit = {}", c.map(|c| c.to_string()).unwrap_or_else(|| "none".into()));
            }
            if let Some(p) = path {
                std::fs::write(p, json(&fit)?)?;
            }
            print!("{}", fit.csv_footer());
        }
        Command::FilterCheck { run, probes } => {
            let cfg = run.resolve()?;
            if run.print_config {
                println!("{}", cfg.to_json());
                return Ok(());
            }
            let fc = harness::filter_check(&cfg, probes)?;
            let text = json(&fc)?;
            std::fs::create_dir_all(&cfg.outputs.dir)?;
            std::fs::write(cfg.outputs.dir.join(format!("filter_check_{}.json", fc.config_hash)), &text)?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
