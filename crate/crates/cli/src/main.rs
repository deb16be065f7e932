use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use macrodg::discretization::StabilizationMode;
use macrodg::driver::{run, RunConfig, StudyMode};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "macrodg", version, about = "Macro-element stabilized unfitted DG studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a study and write report.csv into the output directory.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON configuration; missing keys take the reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<StudyMode>,
    /// Mesh sizes, comma separated or repeated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    h: Vec<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long, value_parser = parse_stabilization)]
    stabilization: Option<StabilizationMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    offsets: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the macro partitions of every run.
    #[arg(long)]
    dump_partitions: bool,
    /// Skip condition number estimates.
    #[arg(long)]
    no_cond: bool,
}

fn parse_mode(s: &str) -> Result<StudyMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        format!("unknown mode '{s}'; expected convergence, robustness, gamma-sweep or diagnostics")
    })
}

fn parse_stabilization(s: &str) -> Result<StabilizationMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown stabilization '{s}'; expected macro, full or none"))
}

fn build_config(args: &RunArgs) -> Result<RunConfig, String> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        c.mode = m;
    }
    if !args.h.is_empty() {
        c.h = args.h.clone();
    }
    for (i, g) in [args.gamma0, args.gamma1, args.gamma2].into_iter().enumerate() {
        if let Some(g) = g {
            c.parameters.gamma[i] = g;
        }
    }
    if let Some(s) = args.stabilization {
        c.stabilization = s;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(n) = args.offsets {
        c.offsets = n;
    }
    if let Some(o) = &args.out {
        c.output = o.clone();
    }
    c.dump_partitions |= args.dump_partitions;
    if args.no_cond {
        c.condition = false;
    }
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Run(args) = cli.command;
    let config = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&config) {
        Ok((outcome, files)) => {
            for f in &files {
                println!("wrote {}", f.display());
            }
            for line in &outcome.footer {
                println!("{line}");
            }
            let failed = outcome.hard_failures();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see the status column");
                ExitCode::from(EXIT_RUN)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUN)
        }
    }
}
