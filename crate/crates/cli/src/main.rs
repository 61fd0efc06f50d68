//! `pic`: run, compare and diagnose sampling-based controllers.

mod config;
mod diagnose;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pic_core::harness::{compare_controllers, run_experiment, ExperimentSpec, TrajectoryLog};

use config::{ConfigError, FlagOverrides};

const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Parser, Debug)]
#[command(name = "pic", version, about = "Sampling-based optimal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop experiment.
    Run(RunArgs),
    /// Run several configurations on the same scenario and tabulate them.
    Compare(CompareArgs),
    /// Summarize sampling efficiency of a trajectory log.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
struct Overrides {
    /// Override a config value, e.g. `--set mppi.temperature=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (default: runs).
    #[arg(long, env = "PIC_OUT_DIR")]
    out_dir: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML config; scenario presets fill unspecified values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    seed: Option<u64>,
    /// cartpole_swingup, bicycle_track, lq_scalar or cem_quadratic.
    #[arg(long)]
    scenario: Option<String>,
    /// mppi, smooth_mppi, log_mppi, cem or pi2_cma.
    #[arg(long)]
    controller: Option<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Two or more TOML configs sharing one scenario (one is enough with --seeds).
    #[arg(required = true, value_name = "CONFIG")]
    configs: Vec<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Seeds to sweep: `0..9` (inclusive) or `1,4,7`.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Trajectory log CSV written by `pic run`.
    log: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || matches!(
                c.downcast_ref::<pic_core::Error>(),
                Some(pic_core::Error::Config(_) | pic_core::Error::MalformedLog(_))
            )
    })
}

fn out_dir_of(o: &Overrides) -> String {
    o.out_dir.clone().unwrap_or_else(|| DEFAULT_OUT_DIR.to_string())
}

fn write_config(spec: &ExperimentSpec) -> anyhow::Result<()> {
    if let Some(dir) = &spec.experiment.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {dir}"))?;
        let path = Path::new(dir).join(format!("{}.config.toml", spec.label()));
        fs::write(&path, config::dump(spec)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> anyhow::Result<ExitCode> {
    let flags = FlagOverrides {
        scenario: a.scenario,
        controller: a.controller,
        seed: a.seed,
        out_dir: Some(out_dir_of(&a.overrides)),
    };
    let spec = config::load_spec(a.config.as_deref(), &a.overrides.sets, &flags)?;
    write_config(&spec)?;
    let outcome = run_experiment(&spec)?;
    let s = &outcome.summary;
    println!(
        "{}: {} ({} of {} steps, accumulated cost {:.6})",
        s.label,
        if s.success { "success" } else { "criterion not met" },
        s.completed_steps,
        s.steps,
        s.accumulated_cost
    );
    for (k, v) in &s.metrics {
        println!("  {k} = {v}");
    }
    if let Some(dir) = &spec.experiment.out_dir {
        println!("wrote {}/{}.csv and .summary.json", dir, s.label);
    }
    match &s.failure {
        Some(f) => {
            eprintln!("run aborted: {f}");
            Ok(ExitCode::from(1))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = || ConfigError(format!("--seeds expects `a..b` or a comma list, got '{raw}'"));
    if let Some((a, b)) = raw.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    raw.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
        .collect()
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "config".to_string())
}

fn build_compare_specs(a: &CompareArgs) -> Result<Vec<ExperimentSpec>, ConfigError> {
    let seeds = a.seeds.as_deref().map(parse_seeds).transpose()?;
    let out_dir = out_dir_of(&a.overrides);
    let mut specs = Vec::new();
    for path in &a.configs {
        let base = config::load_spec(
            Some(path),
            &a.overrides.sets,
            &FlagOverrides {
                out_dir: Some(out_dir.clone()),
                ..Default::default()
            },
        )?;
        let stem = base.experiment.label.clone().unwrap_or_else(|| stem_of(path));
        match &seeds {
            None => {
                let mut s = base;
                s.experiment.label.get_or_insert(stem);
                specs.push(s);
            }
            Some(list) => {
                for &seed in list {
                    let mut s = base.clone();
                    s.experiment.seed = seed;
                    s.experiment.label = Some(format!("{stem}_s{seed}"));
                    specs.push(s);
                }
            }
        }
    }
    // Repeated labels get a numeric suffix so output files stay distinct.
    let mut seen: HashMap<String, usize> = HashMap::new();
    for s in &mut specs {
        let label = s.label();
        let n = seen.entry(label.clone()).or_default();
        *n += 1;
        if *n > 1 {
            s.experiment.label = Some(format!("{label}_{n}"));
        }
    }
    Ok(specs)
}

fn cmd_compare(a: CompareArgs) -> anyhow::Result<ExitCode> {
    let specs = build_compare_specs(&a)?;
    for s in &specs {
        write_config(s)?;
    }
    let (table, outcomes) = compare_controllers(&specs)?;
    let text = table.to_text();
    print!("{text}");
    let dir = PathBuf::from(out_dir_of(&a.overrides));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("comparison.csv"), table.to_csv()?).context("writing comparison.csv")?;
    fs::write(dir.join("comparison.txt"), &text).context("writing comparison.txt")?;
    let aborted: Vec<_> = outcomes
        .iter()
        .filter_map(|o| o.summary.failure.as_ref().map(|f| (&o.summary.label, f)))
        .collect();
    for (label, f) in &aborted {
        eprintln!("{label}: run aborted: {f}");
    }
    Ok(if aborted.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_diagnose(a: DiagnoseArgs) -> anyhow::Result<ExitCode> {
    let log = TrajectoryLog::load(&a.log).map_err(|e| match e {
        pic_core::Error::Io(io) => {
            pic_core::Error::MalformedLog(format!("cannot read '{}': {io}", a.log.display()))
        }
        other => other,
    })?;
    print!("{}", diagnose::render(&diagnose::diagnose(&log)));
    Ok(ExitCode::SUCCESS)
}
