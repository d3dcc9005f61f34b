use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use aoi_core::experiment::{
    preset, run_experiment, summarize, verify_battery, write_metrics_csv, write_summary_csv,
    ExperimentConfig, MetricRow, Sweep, VerifySettings, PRESETS,
};

const SCHEMA: &str = include_str!("../docs/config.schema.json");

/// Age-of-information experiments on multihop networks.
#[derive(Parser)]
#[command(name = "aoi", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a JSON config.
    Run {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run an experiment across a grid of generation rates or gamma shapes.
    Sweep {
        #[command(flatten)]
        opts: RunOpts,
        /// Generation rates to sweep (comma separated); replaces the config's sweep.
        #[arg(long, value_delimiter = ',', conflicts_with = "shape")]
        lambda: Vec<f64>,
        /// Gamma shapes to sweep (comma separated); replaces the config's sweep.
        #[arg(long, value_delimiter = ',')]
        shape: Vec<f64>,
    },
    /// Regenerate the plot data of a built-in figure preset.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        #[command(flatten)]
        over: Overrides,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the coupled ordering suite and print one verdict per comparison.
    Verify {
        /// Number of coupled executions per comparison.
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000.0)]
        horizon: f64,
        /// Generation rate of the Erlang-2 traffic.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Print the JSON schema of the config format.
    Schema,
}

#[derive(Args)]
struct RunOpts {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    over: Overrides,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.reps {
            cfg.replications = r;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
    }
}

/// Marks errors caused by bad input; these exit with code 2.
#[derive(Debug)]
struct Invalid;

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("validation failed")
    }
}

impl std::error::Error for Invalid {}

fn invalid<T, E: Into<anyhow::Error>>(r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| e.into().context(Invalid))
}

fn load_config(path: &Path, over: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = invalid(ExperimentConfig::from_json(&text))
        .with_context(|| format!("in {}", path.display()))?;
    over.apply(&mut cfg);
    invalid(cfg.validate())?;
    Ok(cfg)
}

/// Writes to a sibling temp file and renames it into place.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        f(&mut w)?;
        std::io::Write::flush(&mut w)?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows: Vec<MetricRow> = run_experiment(cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_atomic(&out.join("metrics.csv"), |w| Ok(write_metrics_csv(&rows, w)?))?;
    let summary = summarize(&rows);
    write_atomic(&out.join("summary.csv"), |w| {
        Ok(write_summary_csv(cfg.sweep.as_ref(), &summary, w)?)
    })?;
    eprintln!(
        "{}: {} rows -> {}",
        cfg.name,
        rows.len(),
        out.join("metrics.csv").display()
    );
    Ok(())
}

fn verify(settings: &VerifySettings) -> Result<bool> {
    let cases = verify_battery(settings)?;
    let mut all = true;
    for c in &cases {
        let mode = serde_json::to_value(c.mode)?;
        println!(
            "{} {}: {} >= {} ({}) violations {}/{}{}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.candidate,
            c.other,
            mode.as_str().unwrap_or("?"),
            c.report.violations,
            c.report.checks,
            if c.expect_violations { " (violations expected)" } else { "" }
        );
        all &= c.passed();
    }
    Ok(all)
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { opts } => {
            let cfg = load_config(&opts.config, &opts.over)?;
            execute(&cfg, &opts.out)?;
        }
        Cmd::Sweep { opts, lambda, shape } => {
            let mut cfg = load_config(&opts.config, &opts.over)?;
            if !lambda.is_empty() {
                cfg.sweep = Some(Sweep::Lambda { values: lambda });
            } else if !shape.is_empty() {
                cfg.sweep = Some(Sweep::Shape { values: shape });
            }
            if cfg.sweep.is_none() {
                return Err(anyhow::anyhow!("no sweep in config; pass --lambda or --shape")
                    .context(Invalid));
            }
            invalid(cfg.validate())?;
            execute(&cfg, &opts.out)?;
        }
        Cmd::Reproduce { preset: name, over, out } => {
            let mut cfg = invalid(preset(&name))?;
            over.apply(&mut cfg);
            invalid(cfg.validate())?;
            execute(&cfg, &out)?;
        }
        Cmd::Verify { reps, seed, horizon, lambda } => {
            if reps == 0 || !(horizon > 0.0) || !(lambda > 0.0) {
                return Err(anyhow::anyhow!("reps, horizon and lambda must be positive")
                    .context(Invalid));
            }
            let settings = VerifySettings { seeds: reps, horizon, seed, lambda };
            if !verify(&settings)? {
                eprintln!("verification failed");
                return Ok(ExitCode::from(3));
            }
        }
        Cmd::Schema => print!("{SCHEMA}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn schema_is_json() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        assert!(v["properties"]["policies"].is_object());
    }

    #[test]
    fn invalid_marker_survives_context() {
        let e = invalid::<(), _>(Err(anyhow::anyhow!("bad"))).context("outer").unwrap_err();
        assert!(e.downcast_ref::<Invalid>().is_some());
    }
}
