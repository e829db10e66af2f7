use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rasterflow::{ImageInfo, Parallelism, SampleType, SplitStrategy};
use rasterflow_cli::bench::{bench, parse_worlds, BenchOptions};
use rasterflow_cli::diff::{diff_files, DiffResult};
use rasterflow_cli::gen::{generate, Pattern};
use rasterflow_cli::launch::{parse_split, run, run_worker, Overrides, RunOptions, Transport, WorkerArgs};

#[derive(Parser)]
#[command(name = "rasterflow", version, about = "Streamed, split and multi-rank raster pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a pipeline configuration.
    Run {
        config: PathBuf,
        /// Number of ranks; defaults to the configuration's world_size.
        #[arg(long)]
        world: Option<usize>,
        #[arg(long, default_value = "inproc")]
        transport: Transport,
        /// Replace the mapper's output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Replace the split strategy: striped:N, tiled:WxH or auto:BYTES.
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitStrategy>,
        /// Disable row parallelism inside each rank.
        #[arg(long)]
        sequential: bool,
        /// Collective timeout in seconds.
        #[arg(long, default_value_t = 300.0)]
        timeout: f64,
    },
    /// Time a configuration at several world sizes.
    Bench {
        config: PathBuf,
        #[arg(long, default_value = "1,2,4")]
        worlds: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// CSV report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "inproc")]
        transport: Transport,
        /// Keep row parallelism inside each rank.
        #[arg(long)]
        rows: bool,
        #[arg(long, default_value_t = 300.0)]
        timeout: f64,
    },
    /// Compare two files byte by byte. Exits 1 when they differ.
    Diff { a: PathBuf, b: PathBuf },
    /// Write a synthetic image.
    Gen {
        /// constant, checkerboard or random
        kind: String,
        width: usize,
        height: usize,
        bands: usize,
        out: PathBuf,
        #[arg(long = "type", default_value = "u8")]
        sample_type: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Constant value.
        #[arg(long, default_value_t = 0.0)]
        value: f64,
        /// Checkerboard cell size.
        #[arg(long, default_value_t = 8)]
        cell: usize,
        #[arg(long, default_value_t = 0.0)]
        low: f64,
        #[arg(long)]
        high: Option<f64>,
    },
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        world: usize,
        #[arg(long)]
        connect: Option<SocketAddr>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitStrategy>,
        #[arg(long)]
        sequential: bool,
        #[arg(long, default_value_t = 300.0)]
        timeout: f64,
    },
}

fn seconds(s: f64) -> anyhow::Result<Duration> {
    Duration::try_from_secs_f64(s).context("timeout must be a non-negative number of seconds")
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Cmd::Run {
            config,
            world,
            transport,
            output,
            split,
            sequential,
            timeout,
        } => {
            let world = match world {
                Some(w) => w,
                None => rasterflow_cli::load_config(&config)?.world_size,
            };
            let opts = RunOptions {
                world,
                transport,
                parallelism: if sequential {
                    Parallelism::Sequential
                } else {
                    Parallelism::Rows
                },
                overrides: Overrides { output, split },
                timeout: seconds(timeout)?,
                worker_exe: None,
            };
            let outcome = match run(&config, &opts) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return Ok(ExitCode::from(1));
                }
            };
            for r in &outcome.ranks {
                println!("rank {}: {} regions, {} bytes, {:.3} s", r.rank, r.regions, r.bytes, r.seconds);
            }
            if let Some(stats) = &outcome.statistics {
                println!("band,count,mean,variance,min,max");
                for (b, s) in stats.iter().enumerate() {
                    println!("{b},{},{},{},{},{}", s.count, s.mean, s.variance, s.min, s.max);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench {
            config,
            worlds,
            reps,
            out,
            transport,
            rows,
            timeout,
        } => {
            let opts = BenchOptions {
                worlds: parse_worlds(&worlds).map_err(anyhow::Error::msg)?,
                reps,
                transport,
                parallelism: if rows { Parallelism::Rows } else { Parallelism::Sequential },
                timeout: seconds(timeout)?,
                worker_exe: None,
            };
            let report = bench(&config, &opts)?;
            match out {
                Some(p) => report.write(&p)?,
                None => print!("{}", report.to_csv()?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Diff { a, b } => match diff_files(&a, &b)? {
            DiffResult::Identical => {
                println!("identical");
                Ok(ExitCode::SUCCESS)
            }
            DiffResult::DiffersAt(off) => {
                println!("differ at byte {off}");
                Ok(ExitCode::from(1))
            }
        },
        Cmd::Gen {
            kind,
            width,
            height,
            bands,
            out,
            sample_type,
            seed,
            value,
            cell,
            low,
            high,
        } => {
            let st = SampleType::parse(&sample_type).with_context(|| format!("unknown sample type '{sample_type}'"))?;
            let pattern = match kind.as_str() {
                "constant" => Pattern::Constant { value },
                "checkerboard" => Pattern::Checkerboard {
                    cell,
                    low,
                    high: high.unwrap_or(if st.is_integer() { st.max_value() } else { 1.0 }),
                },
                "random" => Pattern::Random { seed },
                other => anyhow::bail!("unknown pattern '{other}' (expected constant, checkerboard or random)"),
            };
            let bytes = generate(pattern, ImageInfo::new(width, height, bands, st), &out)?;
            println!("wrote {} ({bytes} pixel bytes)", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Worker {
            config,
            rank,
            world,
            connect,
            output,
            split,
            sequential,
            timeout,
        } => {
            let args = WorkerArgs {
                config,
                rank,
                world,
                connect,
                overrides: Overrides { output, split },
                sequential,
                timeout: seconds(timeout)?,
            };
            if let Err(e) = run_worker(&args) {
                eprintln!("error: {e:#}");
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
