//! Running a configured pipeline on N ranks.
//!
//! `inproc` runs one thread per rank over in-process channels. `proc`
//! spawns one worker process per rank (the hidden `worker` subcommand):
//! rank 0 binds a TCP rendezvous on an ephemeral port and prints
//! `rendezvous <addr>` on stdout, then the driver starts ranks 1..N
//! pointed at it. Each worker ends with a `result` line on stdout; rank 0
//! also prints one `stat` line per band for statistics pipelines.

use std::io::{BufRead, BufReader, Read};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use rasterflow::comm::{connect, SocketRendezvous};
use rasterflow::filters::BandStatistics;
use rasterflow::{Communicator, Parallelism, SplitStrategy};

use crate::build::{build_pipeline, resolve_glcm_ranges};
use crate::config::{load_config, NodeSpec, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Transport {
    #[default]
    Inproc,
    Proc,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inproc" => Ok(Transport::Inproc),
            "proc" => Ok(Transport::Proc),
            _ => Err(format!("unknown transport '{s}' (expected inproc or proc)")),
        }
    }
}

impl Transport {
    pub fn name(self) -> &'static str {
        match self {
            Transport::Inproc => "inproc",
            Transport::Proc => "proc",
        }
    }
}

/// `striped:N`, `tiled:WxH` or `auto:BYTES`.
pub fn parse_split(s: &str) -> Result<SplitStrategy, String> {
    let (kind, arg) = s.split_once(':').ok_or_else(|| format!("split '{s}' must look like striped:N, tiled:WxH or auto:BYTES"))?;
    let num = |v: &str| v.parse::<usize>().map_err(|_| format!("bad number '{v}' in split '{s}'"));
    let strategy = match kind {
        "striped" => SplitStrategy::Striped(num(arg)?),
        "tiled" => {
            let (w, h) = arg.split_once('x').ok_or_else(|| format!("tiled split '{s}' needs WxH"))?;
            SplitStrategy::Tiled {
                width: num(w)?,
                height: num(h)?,
            }
        }
        "auto" => SplitStrategy::Auto {
            memory_budget_bytes: num(arg)? as u64,
        },
        _ => return Err(format!("unknown split kind '{kind}'")),
    };
    Ok(strategy)
}

pub fn format_split(s: &SplitStrategy) -> String {
    match s {
        SplitStrategy::Striped(n) => format!("striped:{n}"),
        SplitStrategy::Tiled { width, height } => format!("tiled:{width}x{height}"),
        SplitStrategy::Auto { memory_budget_bytes } => format!("auto:{memory_budget_bytes}"),
    }
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub split: Option<SplitStrategy>,
}

impl Overrides {
    pub fn apply(&self, config: &mut PipelineConfig) {
        if let Some(o) = &self.output {
            config.set_output(o);
        }
        if let Some(s) = self.split {
            config.split = s;
        }
    }

    fn args(&self) -> Vec<String> {
        let mut a = Vec::new();
        if let Some(o) = &self.output {
            a.push("--output".into());
            a.push(o.display().to_string());
        }
        if let Some(s) = &self.split {
            a.push("--split".into());
            a.push(format_split(s));
        }
        a
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub world: usize,
    pub transport: Transport,
    pub parallelism: Parallelism,
    pub overrides: Overrides,
    /// Per-operation collective timeout.
    pub timeout: Duration,
    /// Binary providing the `worker` subcommand; defaults to the current
    /// executable.
    pub worker_exe: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            world: 1,
            transport: Transport::Inproc,
            parallelism: Parallelism::Rows,
            overrides: Overrides::default(),
            timeout: Duration::from_secs(300),
            worker_exe: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSummary {
    pub rank: usize,
    pub regions: usize,
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub world: usize,
    /// Rank 0's wall time from the first barrier to the last; excludes
    /// process spawn and rendezvous.
    pub seconds: f64,
    pub ranks: Vec<RankSummary>,
    pub statistics: Option<Vec<BandStatistics>>,
}

struct RankResult {
    summary: RankSummary,
    statistics: Option<Vec<BandStatistics>>,
}

/// One rank's whole job. Collective.
fn run_rank(config: &PipelineConfig, comm: &Communicator, parallelism: Parallelism) -> rasterflow::Result<RankResult> {
    comm.barrier()?;
    let start = Instant::now();
    let ranges = resolve_glcm_ranges(config, comm, parallelism)?;
    let (mut p, mapper) = build_pipeline(config, &ranges, parallelism)?;
    let report = p.update(mapper, comm)?;
    if let (NodeSpec::Statistics { path: Some(path) }, Some(stats)) = (&config.mapper().spec, &report.summary.statistics) {
        if comm.is_root() {
            write_statistics_csv(path, stats).map_err(|e| rasterflow::Error::Io {
                path: path.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        }
    }
    comm.barrier()?;
    Ok(RankResult {
        summary: RankSummary {
            rank: comm.rank(),
            regions: report.regions_processed,
            bytes: report.bytes_written,
            seconds: start.elapsed().as_secs_f64(),
        },
        statistics: report.summary.statistics,
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StatRow {
    band: usize,
    count: u64,
    mean: f64,
    variance: f64,
    min: f64,
    max: f64,
}

/// Writes per-band statistics as `band,count,mean,variance,min,max`.
pub fn write_statistics_csv(path: &Path, stats: &[BandStatistics]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (band, s) in stats.iter().enumerate() {
        w.serialize(StatRow {
            band,
            count: s.count,
            mean: s.mean,
            variance: s.variance,
            min: s.min,
            max: s.max,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_statistics_csv(path: &Path) -> anyhow::Result<Vec<BandStatistics>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: StatRow = row?;
        out.push(BandStatistics {
            count: row.count,
            mean: row.mean,
            variance: row.variance,
            min: row.min,
            max: row.max,
        });
    }
    Ok(out)
}

fn remove_partial(config: &PipelineConfig) {
    if let Some(out) = config.output_path() {
        let _ = std::fs::remove_file(rasterflow::pwrite::partial_path(out));
    }
}

/// Loads `config_path`, applies the overrides and runs it.
pub fn run(config_path: &Path, opts: &RunOptions) -> anyhow::Result<RunOutcome> {
    if opts.world == 0 {
        bail!("world size must be at least 1");
    }
    let mut config = load_config(config_path)?;
    opts.overrides.apply(&mut config);
    let result = match opts.transport {
        Transport::Inproc => run_inproc(&config, opts),
        Transport::Proc => run_procs(config_path, &config, opts),
    };
    if result.is_err() {
        remove_partial(&config);
    }
    result
}

fn rank_errors(errors: Vec<(usize, String)>) -> anyhow::Error {
    let lines: Vec<String> = errors.into_iter().map(|(r, e)| format!("rank {r}: {e}")).collect();
    anyhow!("{}", lines.join("\n"))
}

fn run_inproc(config: &PipelineConfig, opts: &RunOptions) -> anyhow::Result<RunOutcome> {
    let handles: Vec<_> = Communicator::in_process_group(opts.world, opts.timeout)
        .into_iter()
        .map(|comm| {
            let config = config.clone();
            let par = opts.parallelism;
            thread::spawn(move || run_rank(&config, &comm, par))
        })
        .collect();
    let mut ranks = Vec::new();
    let mut statistics = None;
    let mut errors = Vec::new();
    for (rank, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Ok(r)) => {
                if rank == 0 {
                    statistics = r.statistics;
                }
                ranks.push(r.summary);
            }
            Ok(Err(e)) => errors.push((rank, format!("{:#}", anyhow::Error::from(e)))),
            Err(_) => errors.push((rank, "worker thread panicked".into())),
        }
    }
    if !errors.is_empty() {
        return Err(rank_errors(errors));
    }
    Ok(RunOutcome {
        world: opts.world,
        seconds: ranks[0].seconds,
        ranks,
        statistics,
    })
}

/// Arguments of the hidden `worker` subcommand.
#[derive(Clone, Debug)]
pub struct WorkerArgs {
    pub config: PathBuf,
    pub rank: usize,
    pub world: usize,
    /// Rendezvous address; rank 0 binds an ephemeral port when absent.
    pub connect: Option<SocketAddr>,
    pub overrides: Overrides,
    pub sequential: bool,
    pub timeout: Duration,
}

/// Body of a worker process. Prints the protocol lines on stdout.
pub fn run_worker(args: &WorkerArgs) -> anyhow::Result<()> {
    let mut config = load_config(&args.config)?;
    args.overrides.apply(&mut config);
    let comm = if args.rank == 0 {
        let rendezvous = SocketRendezvous::bind("127.0.0.1:0".parse().unwrap())?;
        println!("rendezvous {}", rendezvous.local_addr()?);
        rendezvous.accept(args.world, args.timeout)?
    } else {
        let addr = args.connect.context("ranks above 0 need --connect")?;
        connect(addr, args.rank, args.world, args.timeout)?
    };
    let par = if args.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Rows
    };
    let r = run_rank(&config, &comm, par)?;
    if let Some(stats) = &r.statistics {
        if args.rank == 0 {
            for (b, s) in stats.iter().enumerate() {
                println!("stat {b} {} {} {} {} {}", s.count, s.mean, s.variance, s.min, s.max);
            }
        }
    }
    let s = &r.summary;
    println!("result {} {} {} {}", s.rank, s.regions, s.bytes, s.seconds);
    Ok(())
}

struct Worker {
    rank: usize,
    child: Child,
    stdout: thread::JoinHandle<Vec<String>>,
    stderr: thread::JoinHandle<String>,
}

fn spawn_worker(
    exe: &Path,
    config_path: &Path,
    rank: usize,
    connect: Option<SocketAddr>,
    opts: &RunOptions,
    first_line: Option<std::sync::mpsc::Sender<String>>,
) -> anyhow::Result<Worker> {
    let mut cmd = Command::new(exe);
    cmd.arg("worker")
        .arg("--config")
        .arg(config_path)
        .args(["--rank", &rank.to_string(), "--world", &opts.world.to_string()])
        .args(["--timeout", &opts.timeout.as_secs_f64().to_string()])
        .args(opts.overrides.args())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(a) = connect {
        cmd.args(["--connect", &a.to_string()]);
    }
    if opts.parallelism == Parallelism::Sequential {
        cmd.arg("--sequential");
    }
    let mut child = cmd.spawn().with_context(|| format!("spawning worker {}", exe.display()))?;
    let out = child.stdout.take().unwrap();
    let mut err = child.stderr.take().unwrap();
    let stdout = thread::spawn(move || {
        let mut lines = Vec::new();
        let mut first_line = first_line;
        for line in BufReader::new(out).lines().map_while(Result::ok) {
            if let Some(tx) = first_line.take() {
                let _ = tx.send(line.clone());
            }
            lines.push(line);
        }
        lines
    });
    let stderr = thread::spawn(move || {
        let mut s = String::new();
        let _ = err.read_to_string(&mut s);
        s
    });
    Ok(Worker {
        rank,
        child,
        stdout,
        stderr,
    })
}

fn kill_all(workers: &mut [Worker]) {
    for w in workers {
        let _ = w.child.kill();
    }
}

fn run_procs(config_path: &Path, config: &PipelineConfig, opts: &RunOptions) -> anyhow::Result<RunOutcome> {
    let exe = match &opts.worker_exe {
        Some(e) => e.clone(),
        None => std::env::current_exe()?,
    };
    let (tx, rx) = std::sync::mpsc::channel();
    let mut workers = vec![spawn_worker(&exe, config_path, 0, None, opts, Some(tx))?];
    let addr = match rx.recv_timeout(opts.timeout) {
        Ok(line) => line
            .strip_prefix("rendezvous ")
            .and_then(|a| a.parse::<SocketAddr>().ok())
            .ok_or_else(|| anyhow!("rank 0: unexpected first line '{line}'")),
        Err(_) => Err(anyhow!("rank 0 did not announce a rendezvous address")),
    };
    let addr = match addr {
        Ok(a) => a,
        Err(e) => {
            kill_all(&mut workers);
            let w = workers.pop().unwrap();
            let _ = w.stdout.join();
            let stderr = w.stderr.join().unwrap_or_default();
            return Err(e.context(stderr.trim().to_string()));
        }
    };
    for rank in 1..opts.world {
        match spawn_worker(&exe, config_path, rank, Some(addr), opts, None) {
            Ok(w) => workers.push(w),
            Err(e) => {
                kill_all(&mut workers);
                return Err(e);
            }
        }
    }

    // Poll so that one failed rank takes the others down promptly.
    let mut status = vec![None; workers.len()];
    let mut failed = false;
    while status.iter().any(Option::is_none) {
        for (i, w) in workers.iter_mut().enumerate() {
            if status[i].is_none() {
                if let Some(s) = w.child.try_wait()? {
                    failed |= !s.success();
                    status[i] = Some(s);
                }
            }
        }
        if failed {
            // give peers a moment to report their own errors
            thread::sleep(Duration::from_millis(200));
            kill_all(&mut workers);
            for (i, w) in workers.iter_mut().enumerate() {
                if status[i].is_none() {
                    status[i] = Some(w.child.wait()?);
                }
            }
            break;
        }
        thread::sleep(Duration::from_millis(5));
    }

    let mut ranks = Vec::new();
    let mut statistics: Vec<BandStatistics> = Vec::new();
    let mut errors = Vec::new();
    for (w, s) in workers.into_iter().zip(status) {
        let lines = w.stdout.join().unwrap_or_default();
        let stderr = w.stderr.join().unwrap_or_default();
        let s = s.expect("every worker was waited for");
        if !s.success() {
            let msg = stderr
                .lines()
                .map(|l| l.strip_prefix("error: ").unwrap_or(l))
                .collect::<Vec<_>>()
                .join("; ");
            let msg = if msg.is_empty() {
                format!("worker exited with {s}")
            } else {
                msg
            };
            errors.push((w.rank, msg));
            continue;
        }
        for line in &lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first().copied() {
                Some("result") if f.len() == 5 => ranks.push(RankSummary {
                    rank: f[1].parse()?,
                    regions: f[2].parse()?,
                    bytes: f[3].parse()?,
                    seconds: f[4].parse()?,
                }),
                Some("stat") if f.len() == 7 => statistics.push(BandStatistics {
                    count: f[2].parse()?,
                    mean: f[3].parse()?,
                    variance: f[4].parse()?,
                    min: f[5].parse()?,
                    max: f[6].parse()?,
                }),
                _ => {}
            }
        }
    }
    if !errors.is_empty() {
        return Err(rank_errors(errors));
    }
    if ranks.len() != opts.world {
        bail!("expected {} worker results, got {}", opts.world, ranks.len());
    }
    ranks.sort_by_key(|r| r.rank);
    let is_stats = matches!(config.mapper().spec, NodeSpec::Statistics { .. });
    Ok(RunOutcome {
        world: opts.world,
        seconds: ranks[0].seconds,
        ranks,
        statistics: is_stats.then_some(statistics),
    })
}
