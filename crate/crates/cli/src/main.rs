use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twist_echo_cli::config::{Format, RunConfig};
use twist_echo_cli::figures::{self, Recipe, RecipeError, RecipeOptions, Table};
use twist_echo_cli::output::{timestamp, write_rows, write_table};
use twist_echo_cli::run::{run_points, Batch};

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "twist-echo", version, about = "Twisting-echo interferometry experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol or sweep described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output file (default: the config's output.path, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Worker threads (default: machine parallelism).
        #[arg(long)]
        threads: Option<usize>,
        /// Omit the timestamp line and per-row wall times.
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Reproduce the data behind a figure, one CSV per panel.
    Figure {
        #[arg(value_enum)]
        recipe: Recipe,
        /// Upper bound on the atom number used by the recipe.
        #[arg(long)]
        max_n: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Check a config against the schema without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn check_threads(threads: Option<usize>) -> Result<(), String> {
    match threads {
        Some(0) => Err("--threads must be at least 1".into()),
        _ => Ok(()),
    }
}

fn batch_status(batch: &Batch) -> ExitCode {
    for (row, err) in batch.rows.iter().filter(|r| r.failed()).zip(&batch.errors) {
        eprintln!("row {} failed: {err}", row.index);
    }
    if batch.internal_failure() {
        ExitCode::from(EXIT_NUMERICAL)
    } else if batch.all_failed() {
        ExitCode::from(EXIT_ALL_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(config: &Path, out: Option<PathBuf>, format: Option<Format>, threads: Option<usize>, no_timestamp: bool) -> ExitCode {
    let cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let points = match cfg.points() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = check_threads(threads) {
        return fail(EXIT_CONFIG, e);
    }
    let spec = cfg.output();
    let path = out.or(spec.path);
    let format = format.unwrap_or(spec.format);
    let batch = match run_points(&points, threads, !no_timestamp) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_NUMERICAL, e),
    };
    let stamp = (!no_timestamp).then(timestamp);
    let written = open_output(path.as_deref())
        .and_then(|mut w| write_rows(&mut w, &batch.rows, format, stamp.as_deref()).and_then(|_| w.flush()));
    if let Err(e) = written {
        return fail(EXIT_NUMERICAL, format!("cannot write output: {e}"));
    }
    batch_status(&batch)
}

fn figure(recipe: Recipe, max_n: Option<usize>, out_dir: &Path, threads: Option<usize>, no_timestamp: bool) -> ExitCode {
    if let Err(e) = check_threads(threads) {
        return fail(EXIT_CONFIG, e);
    }
    if max_n == Some(0) {
        return fail(EXIT_CONFIG, "--max-n must be at least 1");
    }
    let opts = RecipeOptions {
        max_n,
        threads,
        timing: !no_timestamp,
    };
    let result = match figures::build(recipe, opts) {
        Ok(r) => r,
        Err(RecipeError::Empty(m)) => return fail(EXIT_CONFIG, m),
        Err(e) => return fail(EXIT_NUMERICAL, e),
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail(EXIT_NUMERICAL, format!("cannot create {}: {e}", out_dir.display()));
    }
    let stamp = (!no_timestamp).then(timestamp);
    for panel in &result.panels {
        let path = out_dir.join(&panel.file);
        let written = open_output(Some(&path)).and_then(|mut w| {
            match &panel.table {
                Table::Rows(rows) => write_rows(&mut w, rows, Format::Csv, stamp.as_deref())?,
                Table::Summary { header, records } => {
                    let header: Vec<&str> = header.iter().map(String::as_str).collect();
                    write_table(&mut w, &header, records, stamp.as_deref())?
                }
            }
            w.flush()
        });
        if let Err(e) = written {
            return fail(EXIT_NUMERICAL, format!("cannot write {}: {e}", path.display()));
        }
        println!("{}", path.display());
    }
    batch_status(&result.batch)
}

fn validate(config: &Path) -> ExitCode {
    match RunConfig::load(config).and_then(|c| c.points()) {
        Ok(points) => {
            println!("ok: {} point(s)", points.len());
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_CONFIG, e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            format,
            threads,
            no_timestamp,
        } => run(&config, out, format, threads, no_timestamp),
        Command::Figure {
            recipe,
            max_n,
            out_dir,
            threads,
            no_timestamp,
        } => figure(recipe, max_n, &out_dir, threads, no_timestamp),
        Command::Validate { config } => validate(&config),
    }
}
