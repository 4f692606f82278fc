use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use v2xsim::metrics::{write_summary_csv, SliceSummary};
use v2xsim::slicing::TopologyRow;
use v2xsim::{
    run_with_topology, summarize, write_outputs, ConfigError, Mode, Scenario, SimConfig, SimError,
    Summary,
};

#[derive(Parser, Debug)]
#[command(
    name = "v2xsim",
    version,
    about = "Sliced V2X highway downlink simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration.
    Run(RunArgs),
    /// Run every cell of a scenario x mode x sigma x seed grid.
    Sweep(GridArgs),
    /// Run several modes over shared seeds and check their orderings.
    Compare(GridArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    duration_tti: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    offload_threshold_db: Option<f64>,
    /// Use the squared-distance kernel (`--squared-similarity false` for the plain one).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    squared_similarity: Option<bool>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    sigma_m: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated scenario ids.
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<Scenario>,
    #[arg(long, value_delimiter = ',')]
    mode: Vec<Mode>,
    #[arg(long, value_delimiter = ',')]
    sigma_m: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn base_config(common: &Common) -> Result<SimConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => SimConfig::from_file(path)?,
        None => SimConfig::default(),
    };
    if let Some(d) = common.duration_tti {
        cfg.duration_tti = d;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = common.offload_threshold_db {
        cfg.offload_threshold_db = t;
    }
    if let Some(s) = common.squared_similarity {
        cfg.squared_similarity = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a SimConfig,
    /// The same configuration as a loadable config file.
    config_text: String,
    outputs: Vec<String>,
}

fn write_topology(path: &Path, rows: &[TopologyRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

/// Run one configuration into its output directory and return its summary.
fn execute(cfg: &SimConfig) -> Result<Summary, CliError> {
    let (report, topology) = run_with_topology(cfg)?;
    let dir = &cfg.output_dir;
    let mut outputs: Vec<String> = write_outputs(&report, dir)
        .map_err(runtime)?
        .iter()
        .map(|p| {
            p.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    if cfg.dump_topology {
        write_topology(&dir.join("topology.csv"), &topology)?;
        outputs.push("topology.csv".into());
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        config_text: cfg.to_flat_string(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(runtime)?;
    fs::write(dir.join("manifest.json"), text).map_err(runtime)?;
    Ok(summarize(&report))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&args.common)?;
    if let Some(s) = args.scenario {
        cfg.scenario = s;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.sigma_m {
        cfg.sigma_m = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let s = execute(&cfg)?;
    eprintln!(
        "scenario {} {} sigma {} seed {}: safety latency {:.3} ms, video throughput {:.0} bit/s -> {}",
        s.scenario_id,
        s.mode,
        s.sigma_m,
        s.seed,
        s.autonomous.mean_latency_ms,
        s.infotainment.mean_throughput_bps,
        cfg.output_dir.display()
    );
    Ok(())
}

fn cell_dir(root: &Path, cfg: &SimConfig) -> PathBuf {
    root.join(format!(
        "s{}_{}_sigma{}_seed{}",
        cfg.scenario.id(),
        cfg.mode,
        cfg.sigma_m,
        cfg.seed
    ))
}

/// Expand the grid; empty axes fall back to the base config's value.
fn grid(base: &SimConfig, args: &GridArgs) -> Result<Vec<SimConfig>, CliError> {
    fn or_base<T: Clone>(v: &[T], d: T) -> Vec<T> {
        if v.is_empty() {
            vec![d]
        } else {
            v.to_vec()
        }
    }
    let scenarios = or_base(&args.scenario, base.scenario);
    let modes = or_base(&args.mode, base.mode);
    let sigmas = or_base(&args.sigma_m, base.sigma_m);
    let seeds = or_base(&args.seed, base.seed);
    let mut cells = Vec::new();
    for &scenario in &scenarios {
        for &mode in &modes {
            for &sigma_m in &sigmas {
                for &seed in &seeds {
                    let mut cfg = SimConfig {
                        scenario,
                        mode,
                        sigma_m,
                        seed,
                        ..base.clone()
                    };
                    cfg.output_dir = cell_dir(&base.output_dir, &cfg);
                    cfg.validate()?;
                    cells.push(cfg);
                }
            }
        }
    }
    let mut dirs: Vec<&PathBuf> = cells.iter().map(|c| &c.output_dir).collect();
    dirs.sort();
    dirs.dedup();
    if dirs.len() != cells.len() {
        return Err(CliError::Usage("grid contains duplicate cells".into()));
    }
    Ok(cells)
}

fn run_cells(cells: &[SimConfig]) -> Result<Vec<Summary>, CliError> {
    let threads = match std::env::var("V2XSIM_THREADS") {
        Ok(v) => v.parse::<usize>().map_err(|_| {
            CliError::Usage(format!(
                "V2XSIM_THREADS must be a positive integer, got {v:?}"
            ))
        })?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(runtime)?;
    pool.install(|| cells.par_iter().map(execute).collect())
}

fn cmd_sweep(args: GridArgs) -> Result<(), CliError> {
    let base = base_config(&args.common)?;
    let cells = grid(&base, &args)?;
    let summaries = run_cells(&cells)?;
    fs::create_dir_all(&base.output_dir).map_err(runtime)?;
    write_summary_csv(&base.output_dir.join("summary.csv"), &summaries).map_err(runtime)?;
    eprintln!("{} runs -> {}", cells.len(), base.output_dir.display());
    Ok(())
}

const COMPARED: [(&str, fn(&SliceSummary) -> f64); 4] = [
    ("autonomous_mean_latency_ms", |s| s.mean_latency_ms),
    ("autonomous_frac_target_throughput", |s| {
        s.frac_target_throughput
    }),
    ("infotainment_mean_latency_ms", |s| s.mean_latency_ms),
    ("infotainment_mean_throughput_bps", |s| {
        s.mean_throughput_bps
    }),
];

fn metric(s: &Summary, column: usize) -> f64 {
    let slice = if column < 2 {
        &s.autonomous
    } else {
        &s.infotainment
    };
    COMPARED[column].1(slice)
}

/// Check `values` in chain order; `strict[i]` applies between items i and i+1.
/// Missing modes drop out of the chain.
fn chain_holds(values: &[Option<f64>], strict: &[bool], ascending: bool) -> bool {
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    present.windows(2).all(|w| {
        let (i, a) = w[0];
        let (_, b) = w[1];
        let strict = strict[i..w[1].0].iter().any(|&s| s);
        let (lo, hi) = if ascending { (a, b) } else { (b, a) };
        if strict {
            lo < hi
        } else {
            lo <= hi
        }
    })
}

fn cmd_compare(args: GridArgs) -> Result<(), CliError> {
    let mut modes = args.mode.clone();
    if modes.is_empty() {
        modes = Mode::ALL.to_vec();
    }
    let mut seen = modes.clone();
    seen.sort_by_key(|m| m.as_str());
    seen.dedup();
    if seen.len() != modes.len() {
        return Err(CliError::Usage("a mode is listed more than once".into()));
    }
    if modes.len() < 2 {
        return Err(CliError::Usage("compare needs at least two modes".into()));
    }
    if args.sigma_m.len() > 1 {
        return Err(CliError::Usage("compare takes a single --sigma-m".into()));
    }
    let base = base_config(&args.common)?;
    let grid_args = GridArgs {
        mode: modes.clone(),
        scenario: args.scenario.clone(),
        sigma_m: args.sigma_m.clone(),
        seed: args.seed.clone(),
        common: args.common,
    };
    let cells = grid(&base, &grid_args)?;
    let summaries = run_cells(&cells)?;
    fs::create_dir_all(&base.output_dir).map_err(runtime)?;
    write_summary_csv(&base.output_dir.join("summary.csv"), &summaries).map_err(runtime)?;

    let path = base.output_dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path).map_err(runtime)?;
    let mut header: Vec<String> = vec!["scenario_id".into(), "seed".into(), "sigma_m".into()];
    for m in &modes {
        header.extend(COMPARED.iter().map(|(c, _)| format!("{m}_{c}")));
    }
    header.extend(
        [
            "latency_ordering_pass",
            "infotainment_throughput_ordering_pass",
            "infotainment_latency_ordering_pass",
            "safety_throughput_gap_pp",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(runtime)?;

    let mut keys: Vec<(u8, u64)> = summaries.iter().map(|s| (s.scenario_id, s.seed)).collect();
    keys.sort();
    keys.dedup();
    let mut failures = 0;
    for (scenario, seed) in keys {
        let find = |m: Mode| {
            summaries
                .iter()
                .find(|s| s.scenario_id == scenario && s.seed == seed && s.mode == m.as_str())
        };
        let mut row = vec![
            scenario.to_string(),
            seed.to_string(),
            base_sigma(&grid_args, &base).to_string(),
        ];
        for &m in &modes {
            let s = find(m).expect("cell for every mode");
            row.extend((0..COMPARED.len()).map(|c| metric(s, c).to_string()));
        }
        let by = |c: usize, order: [Mode; 3]| order.map(|m| find(m).map(|s| metric(s, c)));
        let chain = [Mode::Proposed, Mode::Baseline2, Mode::Baseline1];
        let latency = chain_holds(&by(0, chain), &[true, false], true);
        let info_tp = chain_holds(&by(3, chain), &[false, false], false);
        let info_lat = chain_holds(&by(2, chain), &[false, false], true);
        let gap = match (find(Mode::Proposed), find(Mode::Baseline1)) {
            (Some(p), Some(b)) => {
                100.0 * (p.autonomous.frac_target_throughput - b.autonomous.frac_target_throughput)
            }
            _ => f64::NAN,
        };
        for (name, ok) in [
            ("latency ordering", latency),
            ("infotainment throughput ordering", info_tp),
            ("infotainment latency ordering", info_lat),
        ] {
            if !ok {
                failures += 1;
                eprintln!("scenario {scenario} seed {seed}: {name} does not hold");
            }
        }
        row.extend([latency, info_tp, info_lat].map(|b| b.to_string()));
        row.push(gap.to_string());
        w.write_record(&row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    eprintln!(
        "{} runs, {failures} ordering failures -> {}",
        cells.len(),
        path.display()
    );
    Ok(())
}

fn base_sigma(args: &GridArgs, base: &SimConfig) -> f64 {
    args.sigma_m.first().copied().unwrap_or(base.sigma_m)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
