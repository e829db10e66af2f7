//! Pipeline configuration files.
//!
//! A configuration is TOML: optional `name` and `world_size`, an optional
//! `[split]` table, and one `[[node]]` table per process object. Every node
//! has a unique `name`, a `kind`, an `inputs` list of node names (in input
//! slot order) and kind-specific parameters. See `configs/` for examples
//! and the README for the full schema.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rasterflow::filters::{GlcmFeature, ResampleMode, Stump};
use rasterflow::{SampleType, SplitStrategy};
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// One schema problem, tied to a node when it concerns one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemaError {
    pub node: Option<String>,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(n) => write!(f, "node '{n}': {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every problem found in a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub errors: Vec<SchemaError>,
}

impl ConfigError {
    fn single(node: Option<&str>, message: impl Into<String>) -> Self {
        ConfigError {
            errors: vec![SchemaError {
                node: node.map(str::to_string),
                message: message.into(),
            }],
        }
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.errors.iter().any(|e| e.to_string().contains(needle))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Global min/max for GLCM quantization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GlcmRange {
    Fixed(f64, f64),
    /// Computed by a statistics pass over the GLCM input before the run.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub sample_type: SampleType,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeSpec {
    Read { path: PathBuf },
    Constant { image: ImageSpec, value: f64 },
    Checkerboard { image: ImageSpec, cell: usize, low: f64, high: f64 },
    Random { image: ImageSpec, seed: u64 },
    Resample {
        scale_x: f64,
        scale_y: f64,
        offset_x: f64,
        offset_y: f64,
        mode: ResampleMode,
        size: Option<(usize, usize)>,
    },
    Smooth { radius: usize },
    BandMath { expressions: Vec<String>, sample_type: SampleType },
    Pansharpen { radius: usize },
    Glcm {
        radius: usize,
        levels: usize,
        offset: (isize, isize),
        features: Vec<GlcmFeature>,
        range: GlcmRange,
    },
    Classify { stumps: Vec<Stump>, default: Option<u32>, sample_type: SampleType },
    MeanShift { spatial_radius: usize, range_radius: f64, max_iter: usize },
    Write { path: PathBuf },
    Statistics { path: Option<PathBuf> },
}

impl NodeSpec {
    pub fn is_mapper(&self) -> bool {
        matches!(self, NodeSpec::Write { .. } | NodeSpec::Statistics { .. })
    }

    pub fn is_source(&self) -> bool {
        matches!(
            self,
            NodeSpec::Read { .. } | NodeSpec::Constant { .. } | NodeSpec::Checkerboard { .. } | NodeSpec::Random { .. }
        )
    }

    /// Allowed number of inputs, inclusive.
    fn arity(&self) -> (usize, usize) {
        match self {
            s if s.is_source() => (0, 0),
            NodeSpec::BandMath { .. } => (1, usize::MAX),
            NodeSpec::Pansharpen { .. } => (2, 3),
            _ => (1, 1),
        }
    }
}

/// Every node kind a configuration may use.
pub const NODE_KINDS: &[&str] = &[
    "read",
    "constant",
    "checkerboard",
    "random",
    "resample",
    "smooth",
    "band_math",
    "pansharpen_rcs",
    "glcm_texture",
    "classify_rule",
    "meanshift_smooth",
    "write",
    "statistics",
];

#[derive(Clone, Debug, PartialEq)]
pub struct NodeConfig {
    pub name: String,
    pub inputs: Vec<String>,
    pub spec: NodeSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub name: String,
    pub world_size: usize,
    pub split: SplitStrategy,
    /// In file order; `inputs` refer to these by name.
    pub nodes: Vec<NodeConfig>,
}

impl PipelineConfig {
    pub fn node(&self, name: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn mapper(&self) -> &NodeConfig {
        self.nodes
            .iter()
            .find(|n| n.spec.is_mapper())
            .expect("validated config has a mapper")
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    /// Output file of the `write` mapper, if that is the mapper.
    pub fn output_path(&self) -> Option<&Path> {
        match &self.mapper().spec {
            NodeSpec::Write { path } => Some(path),
            _ => None,
        }
    }

    /// Points the mapper (writer or statistics report) at `path`.
    pub fn set_output(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        let idx = self.nodes.iter().position(|n| n.spec.is_mapper()).expect("mapper");
        match &mut self.nodes[idx].spec {
            NodeSpec::Write { path: p } => *p = path,
            NodeSpec::Statistics { path: p } => *p = Some(path),
            _ => unreachable!(),
        }
    }

    /// Relative file paths become relative to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        for n in &mut self.nodes {
            let p = match &mut n.spec {
                NodeSpec::Read { path } | NodeSpec::Write { path } => Some(path),
                NodeSpec::Statistics { path: Some(path) } => Some(path),
                _ => None,
            };
            if let Some(p) = p {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    /// Names of `name` and everything upstream of it, inputs first.
    pub fn upstream_of(&self, name: &str) -> Vec<String> {
        fn visit(c: &PipelineConfig, n: &str, seen: &mut HashSet<String>, out: &mut Vec<String>) {
            if !seen.insert(n.to_string()) {
                return;
            }
            if let Some(node) = c.node(n) {
                for i in &node.inputs {
                    visit(c, i, seen, out);
                }
            }
            out.push(n.to_string());
        }
        let mut out = Vec::new();
        visit(self, name, &mut HashSet::new(), &mut out);
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    world_size: Option<usize>,
    split: Option<RawSplit>,
    #[serde(default, rename = "node")]
    nodes: Vec<RawNode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    strategy: String,
    count: Option<usize>,
    width: Option<usize>,
    height: Option<usize>,
    memory_budget_bytes: Option<u64>,
}

#[derive(Deserialize)]
struct RawNode {
    name: String,
    kind: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(flatten)]
    params: toml::Table,
}

fn one() -> usize {
    1
}

fn u8_name() -> String {
    "u8".into()
}

fn f32_name() -> String {
    "f32".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathParams {
    path: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams {
    width: usize,
    height: usize,
    #[serde(default = "one")]
    bands: usize,
    #[serde(default = "u8_name")]
    sample_type: String,
    value: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckerboardParams {
    width: usize,
    height: usize,
    #[serde(default = "one")]
    bands: usize,
    #[serde(default = "u8_name")]
    sample_type: String,
    #[serde(default = "one")]
    cell: usize,
    #[serde(default)]
    low: f64,
    high: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomParams {
    width: usize,
    height: usize,
    #[serde(default = "one")]
    bands: usize,
    #[serde(default = "u8_name")]
    sample_type: String,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResampleParams {
    scale: Option<f64>,
    scale_x: Option<f64>,
    scale_y: Option<f64>,
    #[serde(default)]
    offset_x: f64,
    #[serde(default)]
    offset_y: f64,
    #[serde(default = "nearest")]
    mode: String,
    width: Option<usize>,
    height: Option<usize>,
}

fn nearest() -> String {
    "nearest".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RadiusParams {
    radius: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BandMathParams {
    expr: Option<String>,
    exprs: Option<Vec<String>>,
    #[serde(default = "f32_name")]
    sample_type: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PansharpenParams {
    #[serde(default)]
    radius: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GlcmParams {
    radius: usize,
    levels: usize,
    #[serde(default = "unit_offset")]
    offset: [i64; 2],
    #[serde(default = "both_features")]
    features: Vec<String>,
    range: toml::Value,
}

fn unit_offset() -> [i64; 2] {
    [1, 0]
}

fn both_features() -> Vec<String> {
    vec!["energy".into(), "contrast".into()]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyParams {
    #[serde(default)]
    stumps: Vec<RawStump>,
    default: Option<u32>,
    #[serde(default = "u8_name")]
    sample_type: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStump {
    band: usize,
    threshold: f64,
    le: Option<u32>,
    gt: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeanShiftParams {
    spatial_radius: usize,
    range_radius: f64,
    max_iter: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatisticsParams {
    path: Option<PathBuf>,
}

fn params<T: DeserializeOwned>(table: &toml::Table) -> Result<T, String> {
    T::deserialize(toml::Value::Table(table.clone())).map_err(|e| e.message().to_string())
}

fn sample_type(name: &str) -> Result<SampleType, String> {
    SampleType::parse(name).ok_or_else(|| format!("unknown sample_type '{name}' (expected u8, u16 or f32)"))
}

fn image(width: usize, height: usize, bands: usize, st: &str) -> Result<ImageSpec, String> {
    if width == 0 || height == 0 || bands == 0 {
        return Err(format!("image {width}x{height}x{bands} is empty"));
    }
    Ok(ImageSpec {
        width,
        height,
        bands,
        sample_type: sample_type(st)?,
    })
}

fn node_spec(kind: &str, p: &toml::Table) -> Result<NodeSpec, String> {
    Ok(match kind {
        "read" => NodeSpec::Read {
            path: params::<PathParams>(p)?.path,
        },
        "constant" => {
            let c: ConstantParams = params(p)?;
            NodeSpec::Constant {
                image: image(c.width, c.height, c.bands, &c.sample_type)?,
                value: c.value,
            }
        }
        "checkerboard" => {
            let c: CheckerboardParams = params(p)?;
            if c.cell == 0 {
                return Err("cell must be positive".into());
            }
            NodeSpec::Checkerboard {
                image: image(c.width, c.height, c.bands, &c.sample_type)?,
                cell: c.cell,
                low: c.low,
                high: c.high,
            }
        }
        "random" => {
            let c: RandomParams = params(p)?;
            NodeSpec::Random {
                image: image(c.width, c.height, c.bands, &c.sample_type)?,
                seed: c.seed,
            }
        }
        "resample" => {
            let c: ResampleParams = params(p)?;
            let sx = c.scale_x.or(c.scale).ok_or("missing scale or scale_x")?;
            let sy = c.scale_y.or(c.scale).ok_or("missing scale or scale_y")?;
            let mode = ResampleMode::parse(&c.mode)
                .ok_or_else(|| format!("unknown mode '{}' (expected nearest or bilinear)", c.mode))?;
            let size = match (c.width, c.height) {
                (Some(w), Some(h)) => Some((w, h)),
                (None, None) => None,
                _ => return Err("width and height must be given together".into()),
            };
            rasterflow::filters::AffineGeoTransform::new(sx, sy, c.offset_x, c.offset_y).map_err(|e| e.to_string())?;
            NodeSpec::Resample {
                scale_x: sx,
                scale_y: sy,
                offset_x: c.offset_x,
                offset_y: c.offset_y,
                mode,
                size,
            }
        }
        "smooth" => NodeSpec::Smooth {
            radius: params::<RadiusParams>(p)?.radius,
        },
        "band_math" => {
            let c: BandMathParams = params(p)?;
            let expressions = match (c.expr, c.exprs) {
                (Some(e), None) => vec![e],
                (None, Some(es)) if !es.is_empty() => es,
                _ => return Err("give exactly one of expr or a non-empty exprs".into()),
            };
            for e in &expressions {
                rasterflow::filters::Expression::parse(e).map_err(|e| e.to_string())?;
            }
            NodeSpec::BandMath {
                expressions,
                sample_type: sample_type(&c.sample_type)?,
            }
        }
        "pansharpen_rcs" => NodeSpec::Pansharpen {
            radius: params::<PansharpenParams>(p)?.radius,
        },
        "glcm_texture" => {
            let c: GlcmParams = params(p)?;
            let features = c
                .features
                .iter()
                .map(|f| GlcmFeature::parse(f).ok_or_else(|| format!("unknown feature '{f}'")))
                .collect::<Result<Vec<_>, _>>()?;
            let range = match &c.range {
                toml::Value::String(s) if s == "auto" => GlcmRange::Auto,
                toml::Value::Array(a) if a.len() == 2 => {
                    let num = |v: &toml::Value| {
                        v.as_float()
                            .or_else(|| v.as_integer().map(|i| i as f64))
                            .ok_or_else(|| "range bounds must be numbers".to_string())
                    };
                    GlcmRange::Fixed(num(&a[0])?, num(&a[1])?)
                }
                _ => return Err("range must be \"auto\" or [min, max]".into()),
            };
            let offset = (c.offset[0] as isize, c.offset[1] as isize);
            let check_range = match range {
                GlcmRange::Fixed(a, b) => (a, b),
                GlcmRange::Auto => (0.0, 1.0),
            };
            rasterflow::filters::GlcmTexture::new(c.radius, c.levels, offset, features.clone(), check_range)
                .map_err(|e| e.to_string())?;
            NodeSpec::Glcm {
                radius: c.radius,
                levels: c.levels,
                offset,
                features,
                range,
            }
        }
        "classify_rule" => {
            let c: ClassifyParams = params(p)?;
            let stumps: Vec<Stump> = c
                .stumps
                .into_iter()
                .map(|s| Stump {
                    band: s.band,
                    threshold: s.threshold,
                    le: s.le,
                    gt: s.gt,
                })
                .collect();
            rasterflow::filters::DecisionRule::new(stumps.clone(), c.default).map_err(|e| e.to_string())?;
            NodeSpec::Classify {
                stumps,
                default: c.default,
                sample_type: sample_type(&c.sample_type)?,
            }
        }
        "meanshift_smooth" => {
            let c: MeanShiftParams = params(p)?;
            rasterflow::filters::MeanShiftSmooth::new(c.spatial_radius, c.range_radius, c.max_iter)
                .map_err(|e| e.to_string())?;
            NodeSpec::MeanShift {
                spatial_radius: c.spatial_radius,
                range_radius: c.range_radius,
                max_iter: c.max_iter,
            }
        }
        "write" => NodeSpec::Write {
            path: params::<PathParams>(p)?.path,
        },
        "statistics" => NodeSpec::Statistics {
            path: params::<StatisticsParams>(p)?.path,
        },
        other => {
            return Err(format!(
                "unknown kind '{other}' (expected one of: {})",
                NODE_KINDS.join(", ")
            ))
        }
    })
}

fn split(raw: Option<RawSplit>) -> Result<SplitStrategy, String> {
    let Some(raw) = raw else {
        return Ok(SplitStrategy::default());
    };
    let s = match raw.strategy.as_str() {
        "striped" => SplitStrategy::Striped(raw.count.ok_or("striped split needs count")?),
        "tiled" => SplitStrategy::Tiled {
            width: raw.width.ok_or("tiled split needs width")?,
            height: raw.height.ok_or("tiled split needs height")?,
        },
        "auto" => SplitStrategy::Auto {
            memory_budget_bytes: raw.memory_budget_bytes.unwrap_or(64 << 20),
        },
        other => return Err(format!("unknown split strategy '{other}' (expected striped, tiled or auto)")),
    };
    let zero = match s {
        SplitStrategy::Striped(n) => n == 0,
        SplitStrategy::Tiled { width, height } => width == 0 || height == 0,
        SplitStrategy::Auto { memory_budget_bytes } => memory_budget_bytes == 0,
    };
    if zero {
        return Err("split parameters must be positive".into());
    }
    Ok(s)
}

fn push(errors: &mut Vec<SchemaError>, node: Option<&str>, message: String) {
    errors.push(SchemaError {
        node: node.map(str::to_string),
        message,
    });
}

/// Parses and validates a configuration. Relative paths are kept as is.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::single(None, e.to_string()))?;
    let mut errors: Vec<SchemaError> = Vec::new();

    let split = split(raw.split).unwrap_or_else(|e| {
        push(&mut errors, None, format!("split: {e}"));
        SplitStrategy::default()
    });
    let world_size = raw.world_size.unwrap_or(1);
    if world_size == 0 {
        push(&mut errors, None, "world_size must be at least 1".into());
    }

    let mut nodes = Vec::new();
    let mut seen = HashSet::new();
    for n in raw.nodes {
        if !seen.insert(n.name.clone()) {
            push(&mut errors, Some(&n.name), "defined more than once".into());
            continue;
        }
        match node_spec(&n.kind, &n.params) {
            Ok(spec) => nodes.push(NodeConfig {
                name: n.name,
                inputs: n.inputs,
                spec,
            }),
            Err(e) => push(&mut errors, Some(&n.name), e),
        }
    }
    if nodes.is_empty() && errors.is_empty() {
        push(&mut errors, None, "no nodes defined".into());
    }

    let names: HashSet<&str> = seen.iter().map(String::as_str).collect();
    for n in &nodes {
        for i in &n.inputs {
            if !names.contains(i.as_str()) {
                push(&mut errors, Some(&n.name), format!("input '{i}' is not defined"));
            }
        }
        let (lo, hi) = n.spec.arity();
        let k = n.inputs.len();
        if k < lo || k > hi {
            let expected = match (lo, hi) {
                (a, b) if a == b => format!("{a}"),
                (a, usize::MAX) => format!("at least {a}"),
                (a, b) => format!("{a} to {b}"),
            };
            push(&mut errors, Some(&n.name), format!("takes {expected} inputs, got {k}"));
        }
        for i in &n.inputs {
            if let Some(up) = nodes.iter().find(|m| &m.name == i) {
                if up.spec.is_mapper() {
                    push(&mut errors, Some(&n.name), format!("input '{i}' is a mapper and cannot feed other nodes"));
                }
            }
        }
    }

    let mappers: Vec<&str> = nodes
        .iter()
        .filter(|n| n.spec.is_mapper())
        .map(|n| n.name.as_str())
        .collect();
    match mappers.len() {
        0 if !nodes.is_empty() => push(&mut errors, None, "missing mapper: add one write or statistics node".into()),
        0 | 1 => {}
        _ => push(&mut errors, None, format!("exactly one mapper allowed, found {}", mappers.join(", "))),
    }

    if let Some(cycle) = find_cycle(&nodes) {
        push(&mut errors, None, format!("cycle: {}", cycle.join(" -> ")));
    }

    if !errors.is_empty() {
        return Err(ConfigError { errors });
    }
    Ok(PipelineConfig {
        name: raw.name.unwrap_or_else(|| "pipeline".into()),
        world_size,
        split,
        nodes,
    })
}

/// A cycle through input edges, first node repeated at the end.
fn find_cycle(nodes: &[NodeConfig]) -> Option<Vec<String>> {
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; nodes.len()];
    let mut stack = Vec::new();
    fn dfs(
        i: usize,
        nodes: &[NodeConfig],
        index: &HashMap<&str, usize>,
        state: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        state[i] = 1;
        stack.push(i);
        for input in &nodes[i].inputs {
            let Some(&j) = index.get(input.as_str()) else { continue };
            if state[j] == 1 {
                let start = stack.iter().position(|&k| k == j).unwrap();
                let mut cycle: Vec<String> = stack[start..].iter().map(|&k| nodes[k].name.clone()).collect();
                cycle.push(nodes[j].name.clone());
                return Some(cycle);
            }
            if state[j] == 0 {
                if let Some(c) = dfs(j, nodes, index, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[i] = 2;
        None
    }
    for i in 0..nodes.len() {
        if state[i] == 0 {
            if let Some(c) = dfs(i, nodes, &index, &mut state, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Reads, parses and validates `path`, resolving relative file paths
/// against its directory.
pub fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let mut config = parse_config(&text).map_err(|e| anyhow::anyhow!("{}:\n{e}", path.display()))?;
    if let Some(dir) = path.parent() {
        config.resolve_paths(dir);
    }
    if config.name == "pipeline" {
        if let Some(stem) = path.file_stem() {
            config.name = stem.to_string_lossy().into_owned();
        }
    }
    Ok(config)
}
