use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use holorepair::ground::{render_program, Mode};
use holorepair::pipeline::{load_inputs, run, Inference, InputPaths, Settings};

/// Holistic repair of a CSV table under denial constraints, external
/// dictionaries and matching dependencies.
#[derive(Debug, Parser)]
#[command(name = "holorepair", version)]
struct Cli {
    /// File of `key=value` lines, one per long flag; flags on the command
    /// line take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    /// Denial constraints, one per line.
    #[arg(long, value_name = "FILE")]
    dcs: PathBuf,
    /// External dictionary as `ID=FILE`; repeatable.
    #[arg(long = "dict", value_name = "ID=FILE", value_parser = parse_dict)]
    dicts: Vec<(String, PathBuf)>,
    /// Matching dependencies, one per line.
    #[arg(long, value_name = "FILE")]
    mds: Option<PathBuf>,
    /// Extra noisy cells as a `tid,attribute` CSV.
    #[arg(long, value_name = "CSV")]
    noisy_cells: Option<PathBuf>,
    /// True values as a `tid,attribute,value` CSV; enables evaluation.
    #[arg(long, value_name = "CSV")]
    groundtruth: Option<PathBuf>,
    /// Column holding tuple ids (default: row numbers from 1).
    #[arg(long, value_name = "NAME")]
    tid_col: Option<String>,
    /// Column holding a source id per tuple.
    #[arg(long, value_name = "NAME")]
    src_col: Option<String>,

    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value = "feats", value_parser = clap::builder::PossibleValuesParser::new(["feats", "factors", "both"]))]
    mode: String,
    #[arg(long, default_value_t = 0.8)]
    sim_threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    dc_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    prior_weight: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    burnin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value = "gibbs", value_parser = clap::builder::PossibleValuesParser::new(["gibbs", "exact", "closed-form"]))]
    inference: String,
    /// Ground coupled factors over all tuple pairs instead of conflict
    /// components.
    #[arg(long)]
    no_partition: bool,
    /// Random rivals given to training cells that have no other candidate.
    #[arg(long, default_value_t = 3)]
    neg_samples: usize,
    #[arg(long, default_value_t = 5000)]
    max_examples: usize,

    /// Repaired CSV (default: stdout).
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
    /// Line-delimited JSON report of every query cell.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Write the grounded program listing here (`-` for stdout).
    #[arg(long, value_name = "FILE")]
    dump_rules: Option<PathBuf>,
    /// Stop after grounding and print factor counts.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_dict(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((id, path)) if !id.is_empty() && !path.is_empty() => Ok((id.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected ID=FILE, got {s:?}")),
    }
}

/// Turns `key=value` lines into flags placed before the real arguments,
/// so that later (command-line) occurrences win.
fn config_args(path: &Path) -> Result<Vec<String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut args = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), n + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "config" {
            return Err(format!("{}:{}: config files cannot nest", path.display(), n + 1));
        }
        match (key, value) {
            ("dry-run" | "no-partition", "true") => args.push(format!("--{key}")),
            ("dry-run" | "no-partition", "false") => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}

fn parse_cli() -> Result<Cli, clap::Error> {
    let argv: Vec<String> = std::env::args().collect();
    // Locate --config without requiring the other flags yet.
    let config = argv.iter().enumerate().find_map(|(i, a)| {
        a.strip_prefix("--config=")
            .map(PathBuf::from)
            .or_else(|| (a == "--config").then(|| argv.get(i + 1).map(PathBuf::from)).flatten())
    });
    let Some(path) = config else {
        return Cli::try_parse_from(&argv);
    };
    let extra = config_args(&path).map_err(|m| clap::Error::raw(clap::error::ErrorKind::ValueValidation, m + "\n"))?;
    let mut merged = vec![argv[0].clone()];
    merged.extend(extra);
    merged.extend(argv.into_iter().skip(1));
    let mut cmd = <Cli as clap::CommandFactory>::command().args_override_self(true);
    let matches = cmd.try_get_matches_from_mut(merged)?;
    <Cli as clap::FromArgMatches>::from_arg_matches(&matches)
}

fn settings(cli: &Cli) -> Settings {
    Settings {
        tau: cli.tau,
        mode: cli.mode.parse::<Mode>().expect("validated by clap"),
        sim_threshold: cli.sim_threshold,
        prior_weight: cli.prior_weight,
        dc_weight: cli.dc_weight,
        epochs: cli.epochs,
        learning_rate: cli.lr,
        l2: cli.l2,
        samples: cli.samples,
        burnin: cli.burnin,
        chains: cli.chains,
        seed: cli.seed,
        inference: cli.inference.parse::<Inference>().expect("validated by clap"),
        partition: !cli.no_partition,
        neg_samples: cli.neg_samples,
        max_examples: cli.max_examples,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn execute(cli: Cli) -> Result<(), String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    let settings = settings(&cli);
    settings.validate()?;
    let paths = InputPaths {
        input: cli.input.clone(),
        dcs: cli.dcs.clone(),
        dicts: cli.dicts.clone(),
        mds: cli.mds.clone(),
        noisy_cells: cli.noisy_cells.clone(),
        groundtruth: cli.groundtruth.clone(),
        tid_column: cli.tid_col.clone(),
        provenance_column: cli.src_col.clone(),
    };
    let inputs = load_inputs(&paths).map_err(|e| e.to_string())?;
    let outcome = run(&inputs, &settings, cli.dry_run).map_err(|e| e.to_string())?;

    if let Some(path) = &cli.dump_rules {
        let text = render_program(&inputs.dataset, &inputs.constraints, &outcome.grounded);
        if path.as_os_str() == "-" {
            print!("{text}");
        } else {
            fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        }
    }
    eprintln!("{}", outcome.summary());
    let Some(repair) = &outcome.repair else {
        return Ok(());
    };
    match &cli.out {
        Some(path) => {
            let mut w = create(path)?;
            let fail = |e: &dyn std::fmt::Display| format!("cannot write {}: {e}", path.display());
            repair.repaired.write_csv(&mut w).map_err(|e| fail(&e))?;
            w.flush().map_err(|e| fail(&e))?;
        }
        None => {
            let stdout = io::stdout();
            repair
                .repaired
                .write_csv(stdout.lock())
                .map_err(|e| format!("cannot write repaired table: {e}"))?;
        }
    }
    if let Some(path) = &cli.report {
        let mut w = create(path)?;
        w.write_all(&outcome.report(&inputs))
            .and_then(|_| w.flush())
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
