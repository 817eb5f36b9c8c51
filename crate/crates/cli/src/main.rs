//! `monoshift`: runs the verification suites and writes JSON reports.
//!
//! Exit status is 0 when every asserted invariant holds, 1 when one fails
//! and 2 on a config, parse or parameter error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};

use monoshift::report::{ExperimentManifest, Report, Table};

use commands::*;

#[derive(Parser, Debug)]
#[command(name = "monoshift", version, about = "Exact couplings and star-coupling experiments for monotone factors of Bernoulli shifts")]
struct Cli {
    /// Root seed of every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for reports and tables.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Also write CSV tables.
    #[arg(long, global = true)]
    csv: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Shannon entropy of a distribution.
    Entropy(EntropyArgs),
    /// Stochastic domination by prefix sums and by the quantile coupling.
    Dominate(PairArgs),
    /// Monotone-coupling feasibility by max-flow.
    Strassen(StrassenArgs),
    /// Filler-set domination audit for n = 1..max-n.
    Filler(FillerArgs),
    /// Equality of the skeleton laws under both measures.
    TauCheck(TauArgs),
    /// Star-couplings of pair laws.
    #[command(subcommand)]
    Star(StarCommand),
    /// Decoder tables and the non-desirable mass bound.
    #[command(subcommand)]
    Deljunco(DeljuncoCommand),
    /// The explicit five-symbol monotone isomorphism.
    #[command(subcommand)]
    Meshalkin(MeshalkinCommand),
    /// Parameter schedule and star-modification runs.
    #[command(subcommand)]
    Perturb(PerturbCommand),
    /// Hypothesis checkers for the one- and two-mark reductions.
    #[command(subcommand)]
    Reductions(ReductionsCommand),
}

#[derive(Subcommand, Debug)]
enum StarCommand {
    /// Exact star-coupling of two pair laws, with its audit.
    Law(StarLawArgs),
    /// Audits star-couplings of random rational pair laws.
    Audit(StarAuditArgs),
}

#[derive(Subcommand, Debug)]
enum DeljuncoCommand {
    /// Builds the decoder table and its exact success probability.
    Psi(PsiArgs),
    /// Sweeps the non-desirable mass bound over k_init and k_block.
    Bound(BoundArgs),
}

#[derive(Subcommand, Debug)]
enum MeshalkinCommand {
    /// Applies the map (or its inverse) to one window of digits.
    Map(MapArgs),
    /// Statistical check of the image law, monotonicity and invertibility.
    Verify(VerifyArgs),
}

#[derive(Subcommand, Debug)]
enum PerturbCommand {
    /// Runs the parameter schedule for (p, eps).
    Plan(PlanArgs),
    /// Star-modifies samples of a desk plan and checks every invariant.
    Run(DeskArgs),
    /// Model-marker and decoder agreement statistics for a desk plan.
    Check(DeskArgs),
}

#[derive(Subcommand, Debug)]
enum ReductionsCommand {
    /// Checks the hypotheses for one forbidden symbol pair.
    Onemark(OnemarkArgs),
    /// Checks the hypotheses for two forbidden pairs up to length n-max.
    Twomark(TwomarkArgs),
}

/// Why a run did not produce a passing report.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
}

impl From<monoshift::Error> for Failure {
    fn from(e: monoshift::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

/// What a command hands back for writing.
pub struct Outcome {
    pub parameters: Value,
    pub pass: bool,
    pub result: Value,
    pub tables: Vec<(&'static str, Table)>,
    /// Extra files written verbatim, named relative to the output directory.
    pub files: Vec<(String, String)>,
    pub stdout: Option<String>,
}

impl Outcome {
    pub fn new<P: serde::Serialize, R: serde::Serialize>(params: &P, pass: bool, result: &R) -> Result<Self, Failure> {
        // Defaults are fixed by the code version, so only given values are kept.
        let mut parameters = serde_json::to_value(params).map_err(|e| Failure::Config(e.to_string()))?;
        if let Value::Object(m) = &mut parameters {
            m.retain(|_, v| !v.is_null());
        }
        Ok(Outcome {
            parameters,
            pass,
            result: serde_json::to_value(result).map_err(|e| Failure::Config(e.to_string()))?,
            tables: Vec::new(),
            files: Vec::new(),
            stdout: None,
        })
    }

    pub fn table(mut self, name: &'static str, t: Table) -> Self {
        self.tables.push((name, t));
        self
    }
}

pub struct Globals {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub csv: bool,
}

fn global<T: serde::de::DeserializeOwned>(flag: Option<T>, cfg: &Map<String, Value>, key: &str) -> Result<Option<T>, Failure> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| Failure::Config(format!("bad {key}: {e}"))))
            .transpose(),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Entropy(_) => "entropy",
        Command::Dominate(_) => "dominate",
        Command::Strassen(_) => "strassen",
        Command::Filler(_) => "filler",
        Command::TauCheck(_) => "tau-check",
        Command::Star(StarCommand::Law(_)) => "star-law",
        Command::Star(StarCommand::Audit(_)) => "star-audit",
        Command::Deljunco(DeljuncoCommand::Psi(_)) => "deljunco-psi",
        Command::Deljunco(DeljuncoCommand::Bound(_)) => "deljunco-bound",
        Command::Meshalkin(MeshalkinCommand::Map(_)) => "meshalkin-map",
        Command::Meshalkin(MeshalkinCommand::Verify(_)) => "meshalkin-verify",
        Command::Perturb(PerturbCommand::Plan(_)) => "perturb-plan",
        Command::Perturb(PerturbCommand::Run(_)) => "perturb-run",
        Command::Perturb(PerturbCommand::Check(_)) => "perturb-check",
        Command::Reductions(ReductionsCommand::Onemark(_)) => "reductions-onemark",
        Command::Reductions(ReductionsCommand::Twomark(_)) => "reductions-twomark",
    }
}

fn dispatch(cmd: &Command, layer: Map<String, Value>, g: &Globals) -> Result<Outcome, Failure> {
    match cmd {
        Command::Entropy(a) => entropy(config::resolve(a, layer)?),
        Command::Dominate(a) => dominate(config::resolve(a, layer)?),
        Command::Strassen(a) => strassen(config::resolve(a, layer)?),
        Command::Filler(a) => filler(config::resolve(a, layer)?),
        Command::TauCheck(a) => tau_check(config::resolve(a, layer)?),
        Command::Star(StarCommand::Law(a)) => star_law(config::resolve(a, layer)?),
        Command::Star(StarCommand::Audit(a)) => star_audit(config::resolve(a, layer)?, g),
        Command::Deljunco(DeljuncoCommand::Psi(a)) => deljunco_psi(config::resolve(a, layer)?),
        Command::Deljunco(DeljuncoCommand::Bound(a)) => deljunco_bound(config::resolve(a, layer)?),
        Command::Meshalkin(MeshalkinCommand::Map(a)) => meshalkin_map(config::resolve(a, layer)?),
        Command::Meshalkin(MeshalkinCommand::Verify(a)) => meshalkin_verify(config::resolve(a, layer)?, g),
        Command::Perturb(PerturbCommand::Plan(a)) => perturb_plan(config::resolve(a, layer)?, g),
        Command::Perturb(PerturbCommand::Run(a)) => perturb_run(config::resolve(a, layer)?, g),
        Command::Perturb(PerturbCommand::Check(a)) => perturb_check(config::resolve(a, layer)?, g),
        Command::Reductions(ReductionsCommand::Onemark(a)) => onemark(config::resolve(a, layer)?),
        Command::Reductions(ReductionsCommand::Twomark(a)) => twomark(config::resolve(a, layer)?),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let cfg = match &cli.config {
        Some(path) => config::load(path)?,
        None => Map::new(),
    };
    let name = command_name(&cli.command);
    let layer = config::section(&cfg, name);
    let g = Globals {
        seed: global(cli.seed, &layer, "seed")?.unwrap_or(0),
        out_dir: global(cli.out_dir.clone(), &layer, "out_dir")?.unwrap_or_else(|| PathBuf::from(".")),
        csv: cli.csv || global(None, &layer, "csv")?.unwrap_or(false),
    };
    if let Some(n) = global(cli.threads, &layer, "threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let outcome = dispatch(&cli.command, layer, &g)?;

    std::fs::create_dir_all(&g.out_dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", g.out_dir.display())))?;
    let manifest = ExperimentManifest::new(name, outcome.parameters, g.seed);
    let report = Report { manifest, pass: outcome.pass, result: outcome.result };
    let path = g.out_dir.join(format!("{name}.json"));
    write(&path, &report.to_json())?;
    if g.csv {
        for (table, t) in &outcome.tables {
            write(&g.out_dir.join(format!("{name}-{table}.csv")), &t.to_csv())?;
        }
    }
    for (file, text) in &outcome.files {
        write(&g.out_dir.join(file), text)?;
    }
    if let Some(text) = &outcome.stdout {
        println!("{text}");
    }
    eprintln!("{name}: {} ({})", if report.pass { "pass" } else { "FAIL" }, path.display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(m)) | Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
