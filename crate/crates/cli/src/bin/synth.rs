//! Writes benchmark inputs to a directory: the seeded zip/city/state
//! workload or the four-tuple food-inspection snippet.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holorepair::synthetic::{inspection, generate, SyntheticConfig};

#[derive(Debug, Parser)]
#[command(name = "holorepair-synth", version)]
struct Cli {
    #[command(subcommand)]
    workload: Workload,
    /// Directory to create the files in.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Workload {
    /// data.csv, dcs.txt, groundtruth.csv for a corrupted zip/city/state table.
    Synthetic {
        #[arg(long, default_value_t = 1000)]
        tuples: usize,
        #[arg(long, default_value_t = 30)]
        zips: usize,
        #[arg(long, default_value_t = 0.05)]
        error_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// The food-inspection snippet with its dictionary, dependencies and
    /// corrected table.
    Inspection,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = &cli.out_dir;
    let result = fs::create_dir_all(dir)
        .map_err(|e| format!("cannot create {}: {e}", dir.display()))
        .and_then(|_| match cli.workload {
            Workload::Synthetic {
                tuples,
                zips,
                error_rate,
                seed,
            } => {
                if !(0.0..=1.0).contains(&error_rate) {
                    return Err(format!("error rate must lie in [0, 1], got {error_rate}"));
                }
                if zips == 0 || zips > 30 {
                    return Err(format!("zips must be between 1 and 30, got {zips}"));
                }
                let s = generate(&SyntheticConfig {
                    tuples,
                    zips,
                    error_rate,
                    seed,
                });
                write(dir, "data.csv", &s.data)?;
                write(dir, "dcs.txt", &s.dcs)?;
                write(dir, "groundtruth.csv", &s.groundtruth)
            }
            Workload::Inspection => {
                let f = inspection();
                write(dir, "data.csv", f.data)?;
                write(dir, "dcs.txt", f.dcs)?;
                write(dir, "dict.csv", f.dict)?;
                write(dir, "mds.txt", f.mds)?;
                write(dir, "noisy.csv", f.noisy_cells)?;
                write(dir, "groundtruth.csv", &f.groundtruth)?;
                write(dir, "corrected.csv", f.corrected)
            }
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
