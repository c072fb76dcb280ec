//! `nldae`: analyze, decouple, simulate and reduce gas network DAEs.
//!
//! Exit status 0 on success, 2 on invalid input, 3 on numerical failure.
//! Failures print a JSON object `{error, message, exit_code}` to stderr.

mod commands;
mod error;
mod models;
mod setup;

use clap::{Parser, Subcommand};

use commands::{AnalyzeArgs, CompareArgs, DecoupleArgs, ExportArgs, ReduceArgs, SimulateArgs};

#[derive(Parser, Debug)]
#[command(name = "nldae", version, about = "Decoupling and model reduction of nonlinear gas network DAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dimensions, index, spectra and pencil sparsity of a network model.
    Analyze(AnalyzeArgs),
    /// Decouple into differential and algebraic parts and export the matrices.
    Decouple(DecoupleArgs),
    /// Simulate one model and write its output trajectory.
    Simulate(SimulateArgs),
    /// Build a reduced model, simulate it and compare it with its parent.
    Reduce(ReduceArgs),
    /// Simulate several models on the same scenario and compare their outputs.
    Compare(CompareArgs),
    /// Merge run directories into one CSV with a manifest.
    Export(ExportArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::Decouple(a) => commands::decouple(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Reduce(a) => commands::reduce(a).map(|_| serde_json::Value::Null),
        Command::Compare(a) => commands::compare(a),
        Command::Export(a) => commands::export(a),
    };
    match result {
        Ok(serde_json::Value::Null) => {}
        Ok(v) => println!("{}", serde_json::to_string_pretty(&v).expect("serializable")),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
