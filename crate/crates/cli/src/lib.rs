//! Command implementations behind the `orchsim` binary.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use orchsim_core::orchestrator::Fault;
use orchsim_core::run::{simulate, write_summary_csv, RunConfig, RunReport};
use orchsim_core::verify::{run_verify, VerifyFault, VerifyOptions, VerifyReport};
use orchsim_core::workload::{generate, write_trace};
use orchsim_core::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "orchsim",
    version,
    about = "Post-balancing and exchange simulator for multimodal data-parallel training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a workload and write it as a JSON-lines trace.
    Generate(GenerateArgs),
    /// Run simulated iterations and write report.json and summary.csv.
    Simulate(SimulateArgs),
    /// Check the balancers and the hosting search against exhaustive oracles.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trace file to write instead of `<out>/trace.jsonl`.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    /// Number of examples, overriding the configuration.
    #[arg(long, value_name = "N")]
    pub examples: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BaselineFlags {
    #[arg(long)]
    pub no_balance: bool,
    #[arg(long)]
    pub llm_only_balance: bool,
    #[arg(long)]
    pub all_pad: bool,
    #[arg(long)]
    pub all_rmpad: bool,
    #[arg(long)]
    pub allgather_communicator: bool,
    #[arg(long)]
    pub disable_nodewise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InjectedFault {
    ReversedComparator,
    SkipComposition,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trace to simulate, replacing the configured workload.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub iterations: Option<usize>,
    #[command(flatten)]
    pub baselines: BaselineFlags,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<InjectedFault>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Upper limit on instances per check; 0 checks nothing.
    #[arg(long, value_name = "N")]
    pub cap: Option<usize>,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<InjectedFault>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Verification(_) => EXIT_VERIFY,
            Self::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Io(m) => write!(f, "I/O error: {m}"),
            Self::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => Self::Io(io.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|path| {
            println!("wrote {}", path.display());
        }),
        Command::Simulate(a) => {
            let report = cmd_simulate(&a)?;
            print_summary(&report);
            check_report(&report)
        }
        Command::Verify(a) => {
            let report = cmd_verify(&a)?;
            print_verify(&report);
            if report.passed() {
                Ok(())
            } else {
                let dumps: Vec<String> = report
                    .checks
                    .iter()
                    .filter_map(|c| {
                        c.counterexample
                            .as_ref()
                            .map(|x| format!("{}: {x}", c.name))
                    })
                    .collect();
                Err(CliError::Verification(dumps.join("; ")))
            }
        }
    }
}

/// Reads `--config` or the defaults, then applies `--seed`.
pub fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Io(format!("{}: no such file", path.display())));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    fill(&mut w)?;
    w.flush().map_err(io_err(path))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf, CliError> {
    let config = load_config(&args.common)?;
    let mut g = config.generate_config();
    if let Some(n) = args.examples {
        g.examples = n;
    }
    let registry = config.registry()?;
    let examples = generate(&g.profiles, &g.weights, g.examples, config.seed, &registry)?;
    let path = match &args.trace {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_out(parent)?;
            }
            p.clone()
        }
        None => {
            create_out(&args.common.out)?;
            args.common.out.join("trace.jsonl")
        }
    };
    write_file(&path, |w| write_trace(&examples, w).map_err(CliError::from))?;
    log::info!(
        "generated {} examples into {}",
        examples.len(),
        path.display()
    );
    Ok(path)
}

/// Applies the command-line overrides on top of the configuration.
pub fn simulate_config(args: &SimulateArgs) -> Result<RunConfig, CliError> {
    let mut config = load_config(&args.common)?;
    if let Some(trace) = &args.trace {
        config.workload.trace = Some(trace.clone());
        config.workload.generate = None;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    let b = &args.baselines;
    let s = &mut config.baselines;
    s.no_balance |= b.no_balance;
    s.llm_only_balance |= b.llm_only_balance;
    s.all_pad |= b.all_pad;
    s.all_rmpad |= b.all_rmpad;
    s.allgather_communicator |= b.allgather_communicator;
    s.disable_nodewise |= b.disable_nodewise;
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunReport, CliError> {
    let config = simulate_config(args)?;
    if let Some(trace) = &config.workload.trace {
        if !trace.exists() {
            return Err(CliError::Io(format!("{}: no such file", trace.display())));
        }
    }
    let examples = config.examples()?;
    let report = match args.inject_fault {
        Some(InjectedFault::SkipComposition) => {
            let mut options = config.options();
            options.fault = Some(Fault::SkipComposition);
            orchsim_core::run::simulate_with_options(&config, &examples, options)?
        }
        _ => simulate(&config, &examples)?,
    };
    create_out(&args.common.out)?;
    let json = args.common.out.join("report.json");
    write_file(&json, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w).map_err(io_err(&json))
    })?;
    let csv = args.common.out.join("summary.csv");
    write_file(&csv, |w| {
        write_summary_csv(&report, w).map_err(CliError::from)
    })?;
    Ok(report)
}

/// Fails when a run broke one of the safety properties it audits.
pub fn check_report(report: &RunReport) -> Result<(), CliError> {
    let s = &report.summary;
    let broken: Vec<&str> = [
        ("assembly", s.assembly_ok),
        ("reference delivery", s.reference_match),
        ("multiset preservation", s.multiset_preserved),
        ("never-worse", s.never_worse),
    ]
    .into_iter()
    .filter(|(_, ok)| !ok)
    .map(|(name, _)| name)
    .collect();
    if broken.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "run violated {}",
            broken.join(", ")
        )))
    }
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    let config = load_config(&args.common)?;
    let fault = match args.inject_fault {
        Some(InjectedFault::ReversedComparator) => Some(VerifyFault::ReversedComparator),
        Some(InjectedFault::SkipComposition) => {
            return Err(CliError::Config(
                "verify only injects reversed-comparator".into(),
            ))
        }
        None => None,
    };
    let opts = VerifyOptions {
        seed: config.seed,
        cap: args.cap,
        fault,
        ..VerifyOptions::default()
    };
    let report = run_verify(&opts)?;
    if report.vacuous {
        eprintln!("warning: no instances checked (cap 0); the pass is vacuous");
    }
    create_out(&args.common.out)?;
    let path = args.common.out.join("verify.json");
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w).map_err(io_err(&path))
    })?;
    Ok(report)
}

fn print_summary(report: &RunReport) {
    let s = &report.summary;
    println!(
        "{} iterations, {} examples, summed max cost {:.1}, exchange time {:.2}",
        s.iterations, s.examples, s.summed_max_cost, s.total_exchange_time
    );
    for p in &s.per_phase {
        println!(
            "  {:<16} {:<18} ratio {:.3} -> {:.3} (max {:.3})",
            p.name,
            format!("{:?}", p.policy),
            p.mean_pre_ratio,
            p.mean_post_ratio,
            p.max_post_ratio
        );
    }
    match s.mean_nodewise_ratio {
        Some(r) => println!(
            "  inter-node volume {} vs {} un-permuted (mean ratio {r:.3})",
            s.inter_node_volume, s.baseline_inter_node_volume
        ),
        None => println!("  no inter-node traffic"),
    }
    println!(
        "  assembly {} | multiset {} | overlap {}",
        s.assembly_ok, s.multiset_preserved, s.overlap_ok
    );
}

fn print_verify(report: &VerifyReport) {
    for c in &report.checks {
        let ratio = c
            .worst_ratio
            .map(|r| format!(", worst ratio {r:.4}"))
            .unwrap_or_default();
        println!(
            "{:<24} {} ({} instances, {} violations{ratio})",
            c.name,
            if c.passed() { "ok" } else { "FAILED" },
            c.instances,
            c.violations
        );
    }
}
