use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gtvmin::harness::{
    cmd_analyze, cmd_generate, cmd_solve, cmd_sweep, suite, ClusterSelector, ExperimentConfig,
    SolverKind,
};
use gtvmin::Error;

#[derive(Parser)]
#[command(name = "gtvmin", version, about = "Total variation minimization for clustered federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered scenario directory
    Generate(ConfigArgs),
    /// Solve GTVMin on a scenario directory and write the result JSON
    Solve {
        /// Scenario directory
        scenario: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate the deviation bound for a stored solution
    Analyze {
        /// Scenario directory
        scenario: PathBuf,
        /// Result JSON written by `solve`
        #[arg(long)]
        result: PathBuf,
        /// Cluster index or "all"
        #[arg(long, default_value = "all")]
        cluster: ClusterSelector,
        /// Output directory (defaults to the scenario directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and analyze every alpha (and p_out) of a config; writes sweep.csv
    Sweep(ConfigArgs),
    /// Run the randomized bound and spectral property suites
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random scenarios for the bound suite
        #[arg(long, default_value_t = 100)]
        scenarios: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; flags below override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Regularization strength (replaces alpha_list)
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(alpha) = self.alpha {
            config.alpha_list = vec![alpha];
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(solver) = self.solver {
            config.solver = solver;
        }
        if let Some(max_iter) = self.max_iter {
            config.max_iter = max_iter;
        }
        if let Some(tol) = self.tol {
            config.tol = tol;
        }
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Generate(args) => {
            let dir = cmd_generate(&args.resolve()?)?;
            println!("wrote scenario to {}", dir.display());
        }
        Command::Solve { scenario, config } => {
            let cfg = config.resolve()?;
            cfg.validate()?;
            let alpha = match cfg.alpha_list.as_slice() {
                [alpha] => *alpha,
                list => {
                    return Err(Error::InvalidArgument(format!(
                        "solve needs exactly one alpha (use --alpha), config has {list:?}"
                    )))
                }
            };
            let out = config.out.unwrap_or_else(|| scenario.join("result.json"));
            let result = cmd_solve(&scenario, alpha, &cfg.solver_choice(), &out)?;
            println!(
                "objective {} iterations {} converged {} residual {:e} -> {}",
                result.objective_value,
                result.iterations,
                result.converged,
                result.residual,
                out.display()
            );
        }
        Command::Analyze {
            scenario,
            result,
            cluster,
            out,
        } => {
            let out = out.unwrap_or_else(|| scenario.clone());
            let records = cmd_analyze(&scenario, &result, cluster, &out)?;
            for r in &records {
                println!(
                    "cluster {}: lhs {:e} rhs {:e} satisfied {} degenerate {}",
                    r.cluster, r.report.lhs, r.report.rhs, r.report.satisfied, r.report.degenerate
                );
            }
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            let csv = cmd_sweep(&cfg)?;
            println!(
                "wrote {} rows to {}",
                csv.lines().count() - 1,
                cfg.out.join("sweep.csv").display()
            );
        }
        Command::Selftest { seed, scenarios } => {
            let mut ok = true;
            for summary in [
                suite::theorem1_suite(seed, scenarios)?,
                suite::tv_bound_suite(seed, 100)?,
            ] {
                println!(
                    "{}: {} ({} cases, {} checked, worst scaled violation {:e})",
                    summary.name,
                    if summary.passed() { "PASS" } else { "FAIL" },
                    summary.cases,
                    summary.checked,
                    summary.worst_violation
                );
                for f in &summary.failures {
                    println!("  {f}");
                }
                ok &= summary.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
