//! Turns a validated configuration into a pipeline.

use std::collections::HashMap;

use rasterflow::filters::{
    AffineGeoTransform, BandMath, CheckerboardSource, ClassifyRule, ConstantSource, DecisionRule, GlcmTexture,
    MeanShiftSmooth, PansharpenRcs, RandomSource, Resample, SmoothConvolve, StatisticsSink, TiffSource,
};
use rasterflow::{Communicator, ImageInfo, NodeId, Parallelism, Pipeline, ProcessObject, RasterWriterSink, Result};

use crate::config::{GlcmRange, ImageSpec, NodeSpec, PipelineConfig};

/// Resolved `range = "auto"` values, by GLCM node name.
pub type GlcmRanges = HashMap<String, (f64, f64)>;

fn info(i: &ImageSpec) -> ImageInfo {
    ImageInfo::new(i.width, i.height, i.bands, i.sample_type)
}

fn process_object(spec: &NodeSpec, name: &str, ranges: &GlcmRanges) -> Result<Box<dyn ProcessObject>> {
    Ok(match spec {
        NodeSpec::Read { path } => Box::new(TiffSource::open(path)?),
        NodeSpec::Constant { image, value } => Box::new(ConstantSource::new(info(image), *value)?),
        NodeSpec::Checkerboard { image, cell, low, high } => {
            Box::new(CheckerboardSource::new(info(image), *cell, *low, *high)?)
        }
        NodeSpec::Random { image, seed } => Box::new(RandomSource::new(info(image), *seed)?),
        NodeSpec::Resample {
            scale_x,
            scale_y,
            offset_x,
            offset_y,
            mode,
            size,
        } => {
            let t = AffineGeoTransform::new(*scale_x, *scale_y, *offset_x, *offset_y)?;
            Box::new(Resample::new(t, *mode, *size)?)
        }
        NodeSpec::Smooth { radius } => Box::new(SmoothConvolve::new(*radius)),
        NodeSpec::BandMath {
            expressions,
            sample_type,
        } => {
            let e: Vec<&str> = expressions.iter().map(String::as_str).collect();
            Box::new(BandMath::parse(&e, *sample_type)?)
        }
        NodeSpec::Pansharpen { radius } => Box::new(PansharpenRcs::new(*radius)),
        NodeSpec::Glcm {
            radius,
            levels,
            offset,
            features,
            range,
        } => {
            let range = match range {
                GlcmRange::Fixed(a, b) => (*a, *b),
                GlcmRange::Auto => *ranges.get(name).ok_or_else(|| {
                    rasterflow::Error::Config(format!("glcm node '{name}': auto range was not resolved"))
                })?,
            };
            Box::new(GlcmTexture::new(*radius, *levels, *offset, features.clone(), range)?)
        }
        NodeSpec::Classify {
            stumps,
            default,
            sample_type,
        } => Box::new(ClassifyRule::new(DecisionRule::new(stumps.clone(), *default)?, *sample_type)),
        NodeSpec::MeanShift {
            spatial_radius,
            range_radius,
            max_iter,
        } => Box::new(MeanShiftSmooth::new(*spatial_radius, *range_radius, *max_iter)?),
        NodeSpec::Write { .. } | NodeSpec::Statistics { .. } => unreachable!("mappers are added separately"),
    })
}

/// Adds the nodes named in `names` (upstream-first order not required)
/// and wires their inputs. Returns node ids by name.
fn add_nodes(
    p: &mut Pipeline,
    config: &PipelineConfig,
    names: &[String],
    ranges: &GlcmRanges,
) -> Result<HashMap<String, NodeId>> {
    let mut ids = HashMap::new();
    for n in config.nodes.iter().filter(|n| names.contains(&n.name)) {
        let id = match &n.spec {
            NodeSpec::Write { path } => {
                p.add_mapper_boxed(&n.name, Box::new(RasterWriterSink::new(path)), config.split)
            }
            NodeSpec::Statistics { .. } => p.add_mapper_boxed(&n.name, Box::new(StatisticsSink::new()), config.split),
            spec => p.add_boxed(&n.name, process_object(spec, &n.name, ranges)?),
        };
        ids.insert(n.name.clone(), id);
    }
    for n in config.nodes.iter().filter(|n| names.contains(&n.name)) {
        for (slot, input) in n.inputs.iter().enumerate() {
            p.connect(ids[&n.name], slot, ids[input])?;
        }
    }
    Ok(ids)
}

/// Builds the whole configured pipeline and returns it with its mapper.
pub fn build_pipeline(
    config: &PipelineConfig,
    ranges: &GlcmRanges,
    parallelism: Parallelism,
) -> Result<(Pipeline, NodeId)> {
    let mut p = Pipeline::new();
    p.set_parallelism(parallelism);
    let names: Vec<String> = config.nodes.iter().map(|n| n.name.clone()).collect();
    let ids = add_nodes(&mut p, config, &names, ranges)?;
    let mapper = ids[&config.mapper().name];
    Ok((p, mapper))
}

/// Runs a distributed statistics pass over the input of every
/// `range = "auto"` GLCM node and returns band 0's [min, max] for each.
/// Collective: every rank must call it.
pub fn resolve_glcm_ranges(config: &PipelineConfig, comm: &Communicator, parallelism: Parallelism) -> Result<GlcmRanges> {
    let mut ranges = GlcmRanges::new();
    for n in &config.nodes {
        if !matches!(n.spec, NodeSpec::Glcm { range: GlcmRange::Auto, .. }) {
            continue;
        }
        let input = &n.inputs[0];
        let mut p = Pipeline::new();
        p.set_parallelism(parallelism);
        let ids = add_nodes(&mut p, config, &config.upstream_of(input), &ranges)?;
        let m = p.add_mapper("__glcm_range", StatisticsSink::new(), config.split);
        p.connect(m, 0, ids[input])?;
        let report = p.update(m, comm)?;
        let stats = report.summary.statistics.expect("statistics sink reports statistics");
        ranges.insert(n.name.clone(), (stats[0].min, stats[0].max));
    }
    Ok(ranges)
}
