//! Demand-driven process-object graph.
//!
//! A pipeline is a DAG of sources, filters and mappers held in an arena.
//! Execution has two passes, both started from a mapper:
//!
//! 1. information: [`Pipeline::update_output_information`] walks upstream to
//!    the sources and lets each object derive its output [`ImageInfo`] from
//!    its inputs on the way back down. Results are cached against a global
//!    modification counter.
//! 2. data: for each split, the requested region is propagated upstream
//!    (each object widens or maps it for its inputs), then every object
//!    generates exactly its requested region, sources first.
//!
//! A node feeding several consumers (the PAN image in pansharpening, say) is
//! asked for the bounding box of everything its consumers need, so it runs
//! once per split and each consumer receives a crop.

use std::any::Any;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::comm::{Communicator, ReduceOp};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::filters::stats::BandStatistics;
use crate::raster::{ImageInfo, PixelBuffer, Region};
use crate::split::{assign_splits, SplitScheme, SplitStrategy};

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Settings a filter sees while generating.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExecContext {
    pub parallelism: Parallelism,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputCount {
    Exactly(usize),
    AtLeast(usize),
}

impl InputCount {
    fn accepts(self, n: usize) -> bool {
        match self {
            InputCount::Exactly(k) => n == k,
            InputCount::AtLeast(k) => n >= k,
        }
    }

    fn max_slot(self) -> Option<usize> {
        match self {
            InputCount::Exactly(k) => Some(k),
            InputCount::AtLeast(_) => None,
        }
    }
}

/// A source or filter. Sources declare zero inputs.
pub trait ProcessObject: Send {
    fn kind(&self) -> &'static str;

    fn input_count(&self) -> InputCount;

    /// Whether any region of the output is identical to the matching window
    /// of a whole-image generation. Declared, never inferred.
    fn region_independent(&self) -> bool;

    /// Neighbourhood radius used by the default input-region rule.
    fn radius(&self) -> usize {
        0
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo>;

    /// Region of input `input` needed to produce `output`. The default grows
    /// `output` by [`ProcessObject::radius`] and clamps it to the input.
    fn input_region(
        &self,
        input: usize,
        output: Region,
        _output_info: &ImageInfo,
        inputs: &[ImageInfo],
    ) -> Result<Region> {
        Ok(output.grow_clamped(self.radius(), &inputs[input].largest_region()))
    }

    /// Produces exactly `region`. `inputs[i]` covers the region returned by
    /// [`ProcessObject::input_region`] for input `i`.
    fn generate(
        &self,
        region: Region,
        output_info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer>;
}

/// What a sink reports when a mapper finishes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SinkSummary {
    pub bytes_written: u64,
    pub statistics: Option<Vec<BandStatistics>>,
}

/// Terminal consumer of a mapper: file writer, statistics collector, ...
/// `prepare` and `finish` may run collectives, so every rank calls them.
pub trait Sink: Any + Send {
    fn kind(&self) -> &'static str;

    fn prepare(&mut self, info: &ImageInfo, scheme: &SplitScheme, comm: &Communicator) -> Result<()>;

    /// Handles one generated split; returns bytes delivered.
    fn consume(&mut self, split: usize, buffer: PixelBuffer) -> Result<u64>;

    fn finish(&mut self, comm: &Communicator) -> Result<SinkSummary>;

    /// Called when an update fails after `prepare`.
    fn abort(&mut self) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub rank: usize,
    pub world_size: usize,
    pub splits_total: usize,
    pub regions_processed: usize,
    /// Bytes this rank delivered to the sink.
    pub bytes_written: u64,
    pub summary: SinkSummary,
}

enum Body {
    Process(Box<dyn ProcessObject>),
    Mapper {
        sink: Option<Box<dyn Sink>>,
        strategy: SplitStrategy,
    },
}

struct Node {
    name: String,
    body: Body,
    inputs: Vec<Option<NodeId>>,
    mtime: u64,
    info_cache: Option<(ImageInfo, u64)>,
    info_computations: usize,
    generate_calls: usize,
}

#[derive(Default)]
pub struct Pipeline {
    nodes: Vec<Node>,
    exec: ExecContext,
}

impl Pipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_parallelism(&mut self, parallelism: Parallelism) {
        self.exec.parallelism = parallelism;
    }

    pub fn parallelism(&self) -> Parallelism {
        self.exec.parallelism
    }

    fn push(&mut self, name: &str, body: Body) -> NodeId {
        self.nodes.push(Node {
            name: name.to_string(),
            body,
            inputs: Vec::new(),
            mtime: next_stamp(),
            info_cache: None,
            info_computations: 0,
            generate_calls: 0,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Adds a source or filter.
    pub fn add(&mut self, name: &str, object: impl ProcessObject + 'static) -> NodeId {
        self.add_boxed(name, Box::new(object))
    }

    pub fn add_boxed(&mut self, name: &str, object: Box<dyn ProcessObject>) -> NodeId {
        self.push(name, Body::Process(object))
    }

    pub fn add_mapper(&mut self, name: &str, sink: impl Sink, strategy: SplitStrategy) -> NodeId {
        self.add_mapper_boxed(name, Box::new(sink), strategy)
    }

    pub fn add_mapper_boxed(&mut self, name: &str, sink: Box<dyn Sink>, strategy: SplitStrategy) -> NodeId {
        self.push(
            name,
            Body::Mapper {
                sink: Some(sink),
                strategy,
            },
        )
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Graph(format!("unknown node #{}", id.0)))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn inputs(&self, id: NodeId) -> Vec<Option<NodeId>> {
        self.nodes[id.0].inputs.clone()
    }

    /// Number of times `id` actually derived its output information.
    pub fn info_computations(&self, id: NodeId) -> usize {
        self.nodes[id.0].info_computations
    }

    /// Number of times `id` generated a region.
    pub fn generate_calls(&self, id: NodeId) -> usize {
        self.nodes[id.0].generate_calls
    }

    /// Marks `id` as modified so cached information downstream is recomputed.
    pub fn touch(&mut self, id: NodeId) {
        self.nodes[id.0].mtime = next_stamp();
    }

    /// Replaces the object at `id`, keeping its connections.
    pub fn replace(&mut self, id: NodeId, object: Box<dyn ProcessObject>) -> Result<()> {
        match &mut self.nodes[id.0].body {
            Body::Process(obj) => *obj = object,
            Body::Mapper { .. } => return Err(Error::Graph("cannot replace a mapper".into())),
        }
        self.touch(id);
        Ok(())
    }

    pub fn sink_ref<T: Sink>(&self, id: NodeId) -> Option<&T> {
        match &self.nodes.get(id.0)?.body {
            Body::Mapper { sink: Some(s), .. } => {
                let any: &dyn Any = s.as_ref();
                any.downcast_ref::<T>()
            }
            _ => None,
        }
    }

    fn is_upstream_of(&self, candidate: NodeId, of: NodeId) -> bool {
        let mut stack = vec![of];
        let mut seen = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if n == candidate {
                return true;
            }
            if std::mem::replace(&mut seen[n.0], true) {
                continue;
            }
            stack.extend(self.nodes[n.0].inputs.iter().flatten().copied());
        }
        false
    }

    /// Makes `upstream` the input at `slot` of `downstream`.
    pub fn connect(&mut self, downstream: NodeId, slot: usize, upstream: NodeId) -> Result<()> {
        let down = self.node(downstream)?;
        let up = self.node(upstream)?;
        if matches!(up.body, Body::Mapper { .. }) {
            return Err(Error::Graph(format!(
                "mapper '{}' terminates the pipeline and cannot feed '{}'",
                up.name, down.name
            )));
        }
        let max_slot = match &down.body {
            Body::Process(obj) => obj.input_count().max_slot(),
            Body::Mapper { .. } => Some(1),
        };
        if max_slot.is_some_and(|m| slot >= m) {
            return Err(Error::Graph(format!(
                "'{}' has no input slot {slot}",
                down.name
            )));
        }
        if self.is_upstream_of(downstream, upstream) {
            return Err(Error::Graph(format!(
                "connecting '{}' into '{}' would create a cycle",
                self.nodes[upstream.0].name, self.nodes[downstream.0].name
            )));
        }
        let node = &mut self.nodes[downstream.0];
        if node.inputs.len() <= slot {
            node.inputs.resize(slot + 1, None);
        }
        node.inputs[slot] = Some(upstream);
        node.mtime = next_stamp();
        Ok(())
    }

    /// Chains `a -> b -> c ...` through slot 0.
    pub fn chain(&mut self, nodes: &[NodeId]) -> Result<()> {
        for pair in nodes.windows(2) {
            self.connect(pair[1], 0, pair[0])?;
        }
        Ok(())
    }

    fn connected_inputs(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let node = &self.nodes[id.0];
        let inputs: Vec<NodeId> = node
            .inputs
            .iter()
            .enumerate()
            .map(|(slot, i)| {
                i.ok_or_else(|| Error::Graph(format!("'{}' input {slot} is not connected", node.name)))
            })
            .collect::<Result<_>>()?;
        let expected = match &node.body {
            Body::Process(obj) => obj.input_count(),
            Body::Mapper { .. } => InputCount::Exactly(1),
        };
        if !expected.accepts(inputs.len()) {
            return Err(Error::Graph(format!(
                "'{}' expects {:?} inputs, has {}",
                node.name,
                expected,
                inputs.len()
            )));
        }
        Ok(inputs)
    }

    fn pipeline_mtime(&self, id: NodeId) -> u64 {
        let node = &self.nodes[id.0];
        node.inputs
            .iter()
            .flatten()
            .map(|&i| self.pipeline_mtime(i))
            .fold(node.mtime, u64::max)
    }

    /// Resolves (or returns cached) output information of `id`.
    pub fn update_output_information(&mut self, id: NodeId) -> Result<ImageInfo> {
        self.node(id)?;
        let newest = self.pipeline_mtime(id);
        if let Some((info, stamp)) = self.nodes[id.0].info_cache {
            if stamp > newest {
                return Ok(info);
            }
        }
        let inputs = self.connected_inputs(id)?;
        let infos = inputs
            .iter()
            .map(|&i| self.update_output_information(i))
            .collect::<Result<Vec<_>>>()?;
        let node = &self.nodes[id.0];
        let info = match &node.body {
            Body::Process(obj) => obj.output_information(&infos)?,
            Body::Mapper { .. } => infos[0],
        };
        info.validate()?;
        let node = &mut self.nodes[id.0];
        node.info_computations += 1;
        node.info_cache = Some((info, next_stamp()));
        Ok(info)
    }

    /// Input regions `id` needs to produce `region`, one per input.
    pub fn propagate_requested_region(&mut self, id: NodeId, region: Region) -> Result<Vec<Region>> {
        let info = self.update_output_information(id)?;
        if region.is_empty() || !info.largest_region().contains(&region) {
            return Err(Error::Contract(format!(
                "requested {:?} lies outside the largest possible region of '{}' ({}x{})",
                region, self.nodes[id.0].name, info.width, info.height
            )));
        }
        let inputs = self.connected_inputs(id)?;
        let infos = inputs
            .iter()
            .map(|&i| self.update_output_information(i))
            .collect::<Result<Vec<_>>>()?;
        match &self.nodes[id.0].body {
            Body::Mapper { .. } => Ok(vec![region]),
            Body::Process(obj) => (0..inputs.len())
                .map(|i| {
                    let r = obj.input_region(i, region, &info, &infos)?;
                    if r.is_empty() {
                        Err(Error::EmptyRequest)
                    } else {
                        Ok(r)
                    }
                })
                .collect(),
        }
    }

    /// Nodes feeding `root` (and `root` itself) in dependency order.
    fn upstream_order(&self, root: NodeId) -> Vec<NodeId> {
        fn visit(p: &Pipeline, n: NodeId, seen: &mut [bool], out: &mut Vec<NodeId>) {
            if std::mem::replace(&mut seen[n.0], true) {
                return;
            }
            for &i in p.nodes[n.0].inputs.iter().flatten() {
                visit(p, i, seen, out);
            }
            out.push(n);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        visit(self, root, &mut seen, &mut out);
        out
    }

    /// Produces `region` of `id`, pulling upstream data as needed. Every
    /// object in the subgraph generates at most once.
    pub fn generate(&mut self, id: NodeId, region: Region) -> Result<PixelBuffer> {
        if matches!(self.node(id)?.body, Body::Mapper { .. }) {
            return Err(Error::Graph("generate is called on sources and filters, not mappers".into()));
        }
        let order = self.upstream_order(id);

        // downstream-to-upstream: settle each node's requested region
        let mut requested: HashMap<NodeId, Region> = HashMap::new();
        let mut edges: HashMap<(NodeId, usize), Region> = HashMap::new();
        let mut consumers: HashMap<NodeId, usize> = HashMap::new();
        requested.insert(id, region);
        for &n in order.iter().rev() {
            let want = requested[&n];
            let per_input = self.propagate_requested_region(n, want)?;
            for (slot, (&input, r)) in self.connected_inputs(n)?.iter().zip(per_input).enumerate() {
                edges.insert((n, slot), r);
                *consumers.entry(input).or_default() += 1;
                requested
                    .entry(input)
                    .and_modify(|acc| *acc = acc.bounding_union(&r))
                    .or_insert(r);
            }
        }

        // upstream-to-downstream: generate each node once
        let mut buffers: HashMap<NodeId, PixelBuffer> = HashMap::new();
        for &n in &order {
            let want = requested[&n];
            let info = self.update_output_information(n)?;
            let inputs = self.connected_inputs(n)?;
            let crops: Vec<std::borrow::Cow<'_, PixelBuffer>> = inputs
                .iter()
                .enumerate()
                .map(|(slot, input)| {
                    let buf = &buffers[input];
                    let r = edges[&(n, slot)];
                    if buf.region() == r {
                        Ok(std::borrow::Cow::Borrowed(buf))
                    } else {
                        buf.crop(r).map(std::borrow::Cow::Owned)
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&PixelBuffer> = crops.iter().map(|c| c.as_ref()).collect();
            let Body::Process(obj) = &self.nodes[n.0].body else {
                return Err(Error::Graph(format!(
                    "mapper '{}' cannot be upstream of a filter",
                    self.nodes[n.0].name
                )));
            };
            let out = obj.generate(want, &info, &refs, &self.exec)?;
            drop(crops);
            if out.region() != want || out.bands() != info.bands || out.sample_type() != info.sample_type {
                return Err(Error::Contract(format!(
                    "'{}' produced {:?} x{} {} but {:?} x{} {} was declared",
                    self.nodes[n.0].name,
                    out.region(),
                    out.bands(),
                    out.sample_type().name(),
                    want,
                    info.bands,
                    info.sample_type.name()
                )));
            }
            self.nodes[n.0].generate_calls += 1;
            for input in inputs {
                let left = consumers.get_mut(&input).expect("counted consumer");
                *left -= 1;
                if *left == 0 {
                    buffers.remove(&input);
                }
            }
            buffers.insert(n, out);
        }
        Ok(buffers.remove(&id).expect("root generated"))
    }

    /// Runs the mapper `mapper`: resolves information, computes the split
    /// scheme and this rank's static schedule, then streams every scheduled
    /// split through the graph into the sink.
    pub fn update(&mut self, mapper: NodeId, comm: &Communicator) -> Result<UpdateReport> {
        let node = self
            .nodes
            .get_mut(mapper.0)
            .ok_or_else(|| Error::Graph(format!("unknown node #{}", mapper.0)))?;
        let (mut sink, strategy) = match &mut node.body {
            Body::Mapper { sink, strategy } => (
                sink.take()
                    .ok_or_else(|| Error::Graph("mapper is already running".into()))?,
                *strategy,
            ),
            Body::Process(_) => {
                return Err(Error::Graph(format!("'{}' is not a mapper", node.name)));
            }
        };
        let result = self.run_mapper(mapper, sink.as_mut(), strategy, comm);
        if let Body::Mapper { sink: slot, .. } = &mut self.nodes[mapper.0].body {
            *slot = Some(sink);
        }
        result
    }

    fn run_mapper(
        &mut self,
        mapper: NodeId,
        sink: &mut dyn Sink,
        strategy: SplitStrategy,
        comm: &Communicator,
    ) -> Result<UpdateReport> {
        let input = self.connected_inputs(mapper)?[0];
        let info = self.update_output_information(mapper)?;
        let scheme = strategy.compute(&info, comm.world_size())?;
        let schedule = assign_splits(scheme.total(), comm.world_size());
        sink.prepare(&info, &scheme, comm)?;

        let mut processed = 0;
        let mut bytes = 0;
        let mut failure = None;
        for index in schedule.splits_for(comm.rank()) {
            let region = scheme.splits()[index];
            let step = self
                .generate(input, region)
                .and_then(|buf| sink.consume(index, buf));
            match step {
                Ok(n) => {
                    bytes += n;
                    processed += 1;
                }
                Err(e) => {
                    failure = Some(Error::SplitFailed {
                        index,
                        source: Box::new(e),
                    });
                    break;
                }
            }
        }

        // Agree on failure before anyone cleans up, so no rank removes
        // shared output while a peer is still writing to it.
        let mut flags = vec![0u64; comm.world_size()];
        flags[comm.rank()] = failure.is_some() as u64;
        let failed: Vec<usize> = match comm.all_reduce(&flags, ReduceOp::Sum) {
            Ok(all) => (0..all.len()).filter(|&r| all[r] != 0).collect(),
            Err(e) => {
                sink.abort();
                return Err(failure.unwrap_or(e));
            }
        };
        if let Some(e) = failure {
            sink.abort();
            return Err(e);
        }
        if !failed.is_empty() {
            sink.abort();
            return Err(Error::PeerFailed { ranks: failed });
        }
        let summary = sink.finish(comm)?;
        Ok(UpdateReport {
            rank: comm.rank(),
            world_size: comm.world_size(),
            splits_total: scheme.total(),
            regions_processed: processed,
            bytes_written: bytes,
            summary,
        })
    }
}

/// Sink that assembles this rank's splits into one in-memory image and
/// records the order splits arrived in. Mostly useful in tests.
#[derive(Debug, Default)]
pub struct MemorySink {
    image: Option<PixelBuffer>,
    order: Vec<usize>,
    bytes: u64,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn image(&self) -> Option<&PixelBuffer> {
        self.image.as_ref()
    }

    pub fn into_image(self) -> Option<PixelBuffer> {
        self.image
    }

    /// Split indices in the order they were consumed.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Sink for MemorySink {
    fn kind(&self) -> &'static str {
        "memory"
    }

    fn prepare(&mut self, info: &ImageInfo, _scheme: &SplitScheme, _comm: &Communicator) -> Result<()> {
        self.image = Some(PixelBuffer::new(info.largest_region(), info.bands, info.sample_type));
        self.order.clear();
        self.bytes = 0;
        Ok(())
    }

    fn consume(&mut self, split: usize, buffer: PixelBuffer) -> Result<u64> {
        let image = self
            .image
            .as_mut()
            .ok_or_else(|| Error::Contract("memory sink used before prepare".into()))?;
        image.paste(&buffer)?;
        self.order.push(split);
        let n = (buffer.len() * buffer.sample_type().byte_width()) as u64;
        self.bytes += n;
        Ok(n)
    }

    fn finish(&mut self, _comm: &Communicator) -> Result<SinkSummary> {
        Ok(SinkSummary {
            bytes_written: self.bytes,
            statistics: None,
        })
    }
}
