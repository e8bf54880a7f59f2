use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predloop_core::episode::{read_log, replay, LogPaths};
use predloop_core::experiment::{aggregate, run_experiment, ExperimentConfig, RunOptions};
use predloop_core::metrics::{read_metric_rows, METRIC_HEADER};
use predloop_core::predict::build_database;
use predloop_core::report::{read_results, ReportContext, RESULT_HEADER};
use predloop_core::{emit_report, Error, Result};

#[derive(Parser)]
#[command(name = "predloop", version, about = "Closed-loop evaluation of trajectory predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-simulate a log from its recorded actions and verify every state.
    Replay {
        /// States file of the log (its .meta.toml must sit next to it).
        log: PathBuf,
    },
    /// Correlations and report from a results.csv or metrics.csv.
    Analyze {
        rows: PathBuf,
        /// Output directory; defaults to `analysis/` next to the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a KNN trajectory database from episode logs.
    Dbbuild {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(short, long, default_value = "knn_db.csv")]
        output: PathBuf,
    },
    /// Regenerate the report files of a run directory from its results.csv.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out, threads } => {
            let cfg = ExperimentConfig::load(&config)?;
            let output = run_experiment(
                &cfg,
                &RunOptions {
                    out_dir: out.clone(),
                    keep_logs: false,
                    threads,
                },
            )?;
            print_summary(&out)?;
            for f in &output.failures {
                eprintln!("dropped scenario {} ({}): {}", f.scenario_index, f.predictor_id, f.message);
            }
            Ok(())
        }
        Command::Replay { log } => {
            let paths = LogPaths::for_states(&log);
            let (episode, meta) = read_log(&paths)?;
            let meta = meta.ok_or_else(|| Error::parse(&paths.meta, "missing log metadata"))?;
            let scenario = meta.scenario.generate()?;
            let ticks = replay(&scenario, &meta.tick.sim, &episode)?;
            println!("verified: {ticks} ticks of {}", log.display());
            Ok(())
        }
        Command::Analyze { rows, out } => {
            let out = out.unwrap_or_else(|| rows.parent().unwrap_or(Path::new(".")).join("analysis"));
            let header = first_line(&rows)?;
            let results = if header == RESULT_HEADER.join(",") {
                read_results(&rows)?
            } else if header == METRIC_HEADER.join(",") {
                // Per-scenario rows carry no latency or static errors.
                aggregate(&read_metric_rows(&rows)?, &|_| f64::NAN, &BTreeMap::new())?.0
            } else {
                return Err(Error::parse(&rows, "expected a results.csv or metrics.csv header"));
            };
            let ctx = ReportContext {
                lines: vec![format!("source: {}", rows.display())],
            };
            emit_report(&results, &out, &ctx)?;
            print_summary(&out)
        }
        Command::Dbbuild { logs, output } => {
            let episodes = logs
                .iter()
                .map(|p| read_log(&LogPaths::for_states(p)).map(|(log, _)| log))
                .collect::<Result<Vec<_>>>()?;
            let db = build_database(&episodes)?;
            db.save(&output)?;
            println!("{} entries from {} logs written to {}", db.len(), logs.len(), output.display());
            Ok(())
        }
        Command::Report { dir } => {
            let results = read_results(&dir.join("results.csv"))?;
            let ctx = ReportContext {
                lines: vec![format!("run directory: {}", dir.display())],
            };
            emit_report(&results, &dir, &ctx)?;
            print_summary(&dir)
        }
    }
}

fn first_line(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().next().unwrap_or("").trim_end_matches('\r').to_string())
}

fn print_summary(dir: &Path) -> Result<()> {
    let path = dir.join("summary.txt");
    print!("{}", fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
    Ok(())
}
