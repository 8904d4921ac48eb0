use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lattice_flux::Tolerances;
use lattice_flux_cli::run::{self, Outcome};
use lattice_flux_cli::scenario::{self, Built, Scenario, BUNDLED};
use lattice_flux_cli::{combined_exit_code, Failure, OUT_ENV};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "lattice-flux", version, about = "Flux index and shift decomposition of lattice unitaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Default,
    Strict,
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Default => "default",
            Profile::Strict => "strict",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and write a report directory per scenario.
    Run {
        /// Scenario files, or names of bundled scenarios.
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[arg(long, env = OUT_ENV, default_value = "lattice-flux-out")]
        out: PathBuf,
        /// Scenarios run in parallel on this many threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "default")]
        tolerance_profile: Profile,
    },
    /// Parse, build and certify without running analyses.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[arg(long, value_enum, default_value = "default")]
        tolerance_profile: Profile,
    },
    /// List bundled scenarios.
    List,
}

fn load(arg: &str) -> Result<Scenario, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(b) = scenario::bundled(arg) {
            return scenario::parse(b.text);
        }
    }
    scenario::load(path)
}

struct Prepared {
    source: String,
    scenario: Scenario,
    seed: u64,
    tol: Tolerances,
}

/// Parse everything first so a bad file aborts before any report is written.
fn prepare(args: &[String], seed: Option<u64>, profile: Profile) -> Result<Vec<Prepared>, Vec<Failure>> {
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for a in args {
        match load(a) {
            Ok(s) => {
                let base = Tolerances::by_name(profile.name()).expect("known profile");
                let tol = s.tolerances.as_ref().map_or(base, |o| o.apply(base));
                out.push(Prepared {
                    source: a.clone(),
                    seed: seed.unwrap_or(s.seed),
                    scenario: s,
                    tol,
                });
            }
            Err(f) => {
                eprintln!("{}", f.diagnostic(a));
                failures.push(f);
            }
        }
    }
    let mut names: Vec<&str> = out.iter().map(|p| p.scenario.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        let f = Failure::Validation(format!("two scenarios share the name {:?}", w[0]));
        eprintln!("{}", f.diagnostic(w[0]));
        failures.push(f);
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(failures)
    }
}

fn validate_all(prepared: &[Prepared]) -> Vec<Result<Built, Failure>> {
    prepared
        .par_iter()
        .map(|p| scenario::validate(&p.scenario, p.seed, &p.tol))
        .collect()
}

fn cmd_run(args: &[String], out: &Path, jobs: Option<usize>, seed: Option<u64>, profile: Profile) -> i32 {
    let prepared = match prepare(args, seed, profile) {
        Ok(p) => p,
        Err(f) => return combined_exit_code(&f),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", Failure::Io(e.to_string()).diagnostic("-"));
            return 1;
        }
    };
    pool.install(|| {
        let built = validate_all(&prepared);
        let mut failures = Vec::new();
        for (p, b) in prepared.iter().zip(&built) {
            if let Err(f) = b {
                eprintln!("{}", f.diagnostic(&p.source));
                failures.push(f.clone());
            }
        }
        if !failures.is_empty() {
            return combined_exit_code(&failures);
        }
        let outcomes: Vec<Outcome> = prepared
            .par_iter()
            .zip(built.par_iter())
            .map(|(p, b)| {
                let b = b.as_ref().expect("validated");
                run::run(&p.scenario, b, p.seed, profile.name(), p.tol)
            })
            .collect();
        for (p, o) in prepared.iter().zip(&outcomes) {
            let dir = out.join(&p.scenario.name);
            if let Err(e) = o.write(&dir) {
                let f = Failure::Io(format!("{e:#}"));
                eprintln!("{}", f.diagnostic(&p.source));
                failures.push(f);
                continue;
            }
            let status = if o.report.passed { "PASS" } else { "FAIL" };
            let idx = o.report.index.as_ref().map(|i| format!(" index {}", i.report.index)).unwrap_or_default();
            println!("{status} {}{idx} -> {}", p.scenario.name, dir.display());
            if let Some(f) = o.failure() {
                eprintln!("{}", f.diagnostic(&p.source));
                failures.push(f);
            }
        }
        combined_exit_code(&failures)
    })
}

fn cmd_validate(args: &[String], profile: Profile) -> i32 {
    let prepared = match prepare(args, None, profile) {
        Ok(p) => p,
        Err(f) => return combined_exit_code(&f),
    };
    let mut failures = Vec::new();
    for (p, b) in prepared.iter().zip(validate_all(&prepared)) {
        match b {
            Ok(b) => println!(
                "ok {} ({} nonzero blocks, {} analyses)",
                p.scenario.name,
                b.flux.blocks.len(),
                p.scenario.analyses.len()
            ),
            Err(f) => {
                eprintln!("{}", f.diagnostic(&p.source));
                failures.push(f);
            }
        }
    }
    combined_exit_code(&failures)
}

fn cmd_list() -> i32 {
    for b in BUNDLED {
        match scenario::parse(b.text) {
            Ok(s) => println!("{:<28} {}", s.name, s.description),
            Err(f) => {
                eprintln!("{}", f.diagnostic(b.file));
                return f.exit_code();
            }
        }
    }
    0
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenarios,
            out,
            jobs,
            seed,
            tolerance_profile,
        } => cmd_run(&scenarios, &out, jobs, seed, tolerance_profile),
        Command::Validate {
            scenarios,
            tolerance_profile,
        } => cmd_validate(&scenarios, tolerance_profile),
        Command::List => cmd_list(),
    };
    ExitCode::from(code as u8)
}
