//! Demand-driven raster processing pipelines replicated across a group of
//! workers.
//!
//! Every worker builds the same [`Pipeline`], computes the same split scheme
//! and the same static schedule, then streams its own splits through the
//! graph. Outputs go either to one shared striped TIFF written concurrently
//! by all workers ([`pwrite`]) or to a persistent sink such as
//! [`filters::StatisticsSink`] that reduces over the group at the end.
//!
//! ```
//! use rasterflow::filters::{RandomSource, SmoothConvolve};
//! use rasterflow::{Communicator, ImageInfo, MemorySink, Pipeline, SampleType, SplitStrategy};
//!
//! let info = ImageInfo::new(32, 32, 1, SampleType::U8);
//! let mut p = Pipeline::new();
//! let src = p.add("src", RandomSource::new(info, 7).unwrap());
//! let smooth = p.add("smooth", SmoothConvolve::new(2));
//! let out = p.add_mapper("out", MemorySink::new(), SplitStrategy::Striped(4));
//! p.chain(&[src, smooth, out]).unwrap();
//! let report = p.update(out, &Communicator::loopback()).unwrap();
//! assert_eq!(report.regions_processed, 4);
//! ```

pub mod comm;
pub mod error;
pub mod exec;
pub mod filters;
pub mod pipeline;
pub mod pwrite;
pub mod raster;
pub mod split;
pub mod tiff;

pub use comm::{comm_init, Communicator, ReduceOp, TransportConfig};
pub use error::{Error, Result};
pub use exec::Parallelism;
pub use pipeline::{ExecContext, MemorySink, NodeId, Pipeline, ProcessObject, Sink, SinkSummary, UpdateReport};
pub use pwrite::{RasterFilePlan, RasterWriterSink};
pub use raster::{ImageInfo, PixelBuffer, Region, SampleType};
pub use split::{assign_splits, auto_split_count, striped_split, tiled_split, Schedule, SplitScheme, SplitStrategy};
