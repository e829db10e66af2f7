//! Scaling benchmark: runs a configuration at several world sizes and
//! reports `pipeline,N,mean_s,stddev_s,speedup` rows, plus the same for a
//! pure read+write pipeline (`io`) over an image of the pipeline's output
//! size.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use rasterflow::{Parallelism, SplitStrategy};
use serde::{Deserialize, Serialize};

use crate::build::build_pipeline;
use crate::config::{load_config, NodeSpec, PipelineConfig};
use crate::launch::{run, Overrides, RunOptions, Transport};

pub const IO_PIPELINE: &str = "io";

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub worlds: Vec<usize>,
    pub reps: usize,
    pub transport: Transport,
    /// Parallelism inside each rank. Sequential by default so that scaling
    /// comes from ranks alone.
    pub parallelism: Parallelism,
    pub timeout: Duration,
    pub worker_exe: Option<PathBuf>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            worlds: vec![1, 2, 4],
            reps: 5,
            transport: Transport::Inproc,
            parallelism: Parallelism::Sequential,
            timeout: Duration::from_secs(300),
            worker_exe: None,
        }
    }
}

/// One cell of the report. Failed cells have no timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub pipeline: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_s: Option<f64>,
    pub stddev_s: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, pipeline: &str, n: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.pipeline == pipeline && r.n == n)
    }

    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["pipeline", "N", "mean_s", "stddev_s", "speedup"])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn from_csv(text: &str) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["pipeline", "N", "mean_s", "stddev_s", "speedup"] {
            bail!("unexpected bench header {header:?}");
        }
        let rows = r.deserialize().collect::<Result<Vec<BenchRow>, _>>()?;
        Ok(BenchReport { rows })
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_csv()?).with_context(|| format!("writing {}", path.display()))
    }
}

/// Mean and sample standard deviation.
pub fn mean_stddev(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Parses `1,2,4`.
pub fn parse_worlds(s: &str) -> Result<Vec<usize>, String> {
    let worlds: Vec<usize> = s
        .split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|_| format!("bad world size '{w}'")))
        .collect::<Result<_, _>>()?;
    if worlds.is_empty() || worlds.contains(&0) {
        return Err("world sizes must be positive".into());
    }
    Ok(worlds)
}

/// Timings for one pipeline at every world size, world 1 included even
/// when not requested since speedups are relative to it.
fn measure(
    name: &str,
    config_path: &Path,
    work: &Path,
    output_ext: &str,
    opts: &BenchOptions,
    mut keep_first: impl FnMut(&Path),
) -> Vec<BenchRow> {
    let mut worlds = vec![1];
    for &w in &opts.worlds {
        if !worlds.contains(&w) {
            worlds.push(w);
        }
    }
    let mut cells = Vec::new();
    for &world in &worlds {
        let mut times = Vec::new();
        let mut ok = true;
        for rep in 0..opts.reps {
            let out = work.join(format!("{name}_w{world}_r{rep}.{output_ext}"));
            let run_opts = RunOptions {
                world,
                transport: opts.transport,
                parallelism: opts.parallelism,
                overrides: Overrides {
                    output: Some(out.clone()),
                    split: None,
                },
                timeout: opts.timeout,
                worker_exe: opts.worker_exe.clone(),
            };
            match run(config_path, &run_opts) {
                Ok(o) => times.push(o.seconds),
                Err(e) => {
                    eprintln!("{name} at N={world}, repetition {rep}: {e:#}");
                    ok = false;
                    break;
                }
            }
            if world == 1 && rep == 0 {
                keep_first(&out);
            }
            let _ = std::fs::remove_file(&out);
        }
        cells.push((world, ok.then(|| mean_stddev(&times))));
    }
    let base = cells[0].1.map(|(m, _)| m);
    cells
        .into_iter()
        .filter(|(w, _)| opts.worlds.contains(w))
        .map(|(n, cell)| BenchRow {
            pipeline: name.to_string(),
            n,
            mean_s: cell.map(|c| c.0),
            stddev_s: cell.map(|c| c.1),
            speedup: match (base, cell) {
                (Some(b), Some((m, _))) => Some(b / m),
                _ => None,
            },
        })
        .collect()
}

/// Image the `io` row reads: the pipeline's own world-1 output when it
/// writes one, otherwise a random image of its output size.
fn io_input(config: &PipelineConfig, kept: Option<PathBuf>, work: &Path) -> anyhow::Result<PathBuf> {
    if let Some(k) = kept.filter(|k| k.exists()) {
        return Ok(k);
    }
    let (mut p, mapper) = build_pipeline(config, &Default::default(), Parallelism::Rows)
        .or_else(|_| {
            // auto GLCM ranges only matter for values, not geometry
            let mut c = config.clone();
            for n in &mut c.nodes {
                if let NodeSpec::Glcm { range, .. } = &mut n.spec {
                    *range = crate::config::GlcmRange::Fixed(0.0, 1.0);
                }
            }
            build_pipeline(&c, &Default::default(), Parallelism::Rows)
        })?;
    let input = p.inputs(mapper)[0].expect("validated mapper has an input");
    let info = p.update_output_information(input)?;
    let path = work.join("io_input.tif");
    crate::gen::generate(crate::gen::Pattern::Random { seed: 1 }, info, &path)?;
    Ok(path)
}

fn io_config(input: &Path, split: SplitStrategy, work: &Path) -> anyhow::Result<PathBuf> {
    let split = match split {
        SplitStrategy::Tiled { .. } => SplitStrategy::default(),
        s => s,
    };
    let text = format!(
        "name = \"{IO_PIPELINE}\"\n\n[split]\n{}\n\n[[node]]\nname = \"read\"\nkind = \"read\"\npath = {}\n\n[[node]]\nname = \"write\"\nkind = \"write\"\ninputs = [\"read\"]\npath = \"io_out.tif\"\n",
        match split {
            SplitStrategy::Striped(n) => format!("strategy = \"striped\"\ncount = {n}"),
            SplitStrategy::Auto { memory_budget_bytes } => {
                format!("strategy = \"auto\"\nmemory_budget_bytes = {memory_budget_bytes}")
            }
            SplitStrategy::Tiled { .. } => unreachable!(),
        },
        toml::Value::String(input.display().to_string()),
    );
    let path = work.join("io.toml");
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Benchmarks `config_path` and the matching `io` pipeline.
pub fn bench(config_path: &Path, opts: &BenchOptions) -> anyhow::Result<BenchReport> {
    if opts.reps < 3 {
        bail!("bench needs at least 3 repetitions, got {}", opts.reps);
    }
    if opts.worlds.is_empty() || opts.worlds.contains(&0) {
        bail!("world sizes must be positive");
    }
    let config = load_config(config_path)?;
    let work = tempfile::tempdir()?;
    let writes = config.output_path().is_some();
    let ext = if writes { "tif" } else { "csv" };

    let mut kept = None;
    let mut rows = measure(&config.name, config_path, work.path(), ext, opts, |out| {
        if writes {
            let k = work.path().join("kept.tif");
            if std::fs::rename(out, &k).is_ok() {
                kept = Some(k);
            }
        }
    });

    let input = io_input(&config, kept, work.path())?;
    let io = io_config(&input, config.split, work.path())?;
    rows.extend(measure(IO_PIPELINE, &io, work.path(), "tif", opts, |_| {}));
    Ok(BenchReport { rows })
}
