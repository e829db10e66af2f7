//! Parallel single-file raster writer.
//!
//! Every rank derives the same [`RasterFilePlan`] from the image info and
//! split scheme, so the byte offset of every stripe is known before any pixel
//! is produced. Rank 0 writes the header and pre-sizes the file; each rank
//! then writes its own stripes through its own file handle with positional
//! writes. Stripes are disjoint, so no locking is needed. Output goes to a
//! `.partial` sibling that rank 0 renames once every stripe is accounted for.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::comm::{Communicator, ReduceOp};
use crate::error::{Error, Result};
use crate::pipeline::{Sink, SinkSummary};
use crate::raster::{ImageInfo, PixelBuffer, Region};
use crate::split::SplitScheme;
use crate::tiff::{write_all_at, StripLayout};

/// Where every byte of the output file goes.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterFilePlan {
    path: PathBuf,
    info: ImageInfo,
    stripes: Vec<Region>,
    header: Vec<u8>,
    data_offset: u64,
    row_bytes: u64,
    strip_offsets: Vec<u64>,
}

impl RasterFilePlan {
    /// Deterministic plan for writing `scheme` (full-width stripes of equal
    /// height, last one possibly shorter) into `path`.
    pub fn new(path: impl AsRef<Path>, info: ImageInfo, scheme: &SplitScheme) -> Result<Self> {
        info.validate()?;
        let stripes = scheme.splits().to_vec();
        if stripes.is_empty() {
            return Err(Error::UnsupportedScheme("scheme has no splits".into()));
        }
        if !scheme.is_striped(&info) {
            return Err(Error::UnsupportedScheme(
                "the parallel writer needs full-width stripes, got tiles".into(),
            ));
        }
        let rows_per_strip = stripes[0].height();
        let mut next_y = 0;
        for (i, s) in stripes.iter().enumerate() {
            let last = i + 1 == stripes.len();
            if s.y() != next_y || (!last && s.height() != rows_per_strip) || s.height() > rows_per_strip {
                return Err(Error::UnsupportedScheme(format!(
                    "stripe {i} {:?} breaks the uniform {rows_per_strip}-row layout",
                    s
                )));
            }
            next_y = s.end_y();
        }
        if next_y != info.height {
            return Err(Error::UnsupportedScheme(format!(
                "stripes cover {next_y} of {} rows",
                info.height
            )));
        }
        let layout = StripLayout {
            info,
            rows_per_strip,
            strip_count: stripes.len(),
        };
        let header = layout.encode_header()?;
        let data_offset = layout.data_offset();
        let row_bytes = info.row_bytes();
        let strip_offsets = stripes
            .iter()
            .map(|s| data_offset + s.y() as u64 * row_bytes)
            .collect();
        Ok(RasterFilePlan {
            path: path.as_ref().to_path_buf(),
            info,
            stripes,
            header,
            data_offset,
            row_bytes,
            strip_offsets,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Temporary name written to until finalize succeeds.
    pub fn partial_path(&self) -> PathBuf {
        partial_path(&self.path)
    }

    pub fn info(&self) -> &ImageInfo {
        &self.info
    }

    pub fn header(&self) -> &[u8] {
        &self.header
    }

    pub fn header_bytes(&self) -> usize {
        self.header.len()
    }

    pub fn data_offset(&self) -> u64 {
        self.data_offset
    }

    pub fn row_bytes(&self) -> u64 {
        self.row_bytes
    }

    pub fn strip_offsets(&self) -> &[u64] {
        &self.strip_offsets
    }

    pub fn stripes(&self) -> &[Region] {
        &self.stripes
    }

    pub fn row_offset(&self, y: usize) -> u64 {
        self.data_offset + y as u64 * self.row_bytes
    }

    pub fn file_len(&self) -> u64 {
        self.data_offset + self.info.height as u64 * self.row_bytes
    }

    pub fn stripe_index(&self, region: Region) -> Option<usize> {
        self.stripes.iter().position(|s| *s == region)
    }
}

/// `out.tif` -> `out.tif.partial`
pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

fn remote_failure(path: &Path, msg: &str) -> Error {
    Error::io(path, std::io::Error::other(msg.to_string()))
}

/// Collective: builds the plan on every rank, has rank 0 create and
/// pre-size the file, and checks that all ranks hold byte-identical headers.
pub fn plan_output(
    path: impl AsRef<Path>,
    info: ImageInfo,
    scheme: &SplitScheme,
    comm: &Communicator,
) -> Result<RasterFilePlan> {
    let plan = RasterFilePlan::new(path, info, scheme)?;
    let partial = plan.partial_path();

    let status = if comm.is_root() {
        match create_presized(&plan) {
            Ok(()) => vec![0],
            Err(e) => {
                let mut v = vec![1];
                v.extend_from_slice(e.to_string().as_bytes());
                comm.broadcast_from_root(&v)?;
                return Err(e);
            }
        }
    } else {
        Vec::new()
    };
    let status = comm.broadcast_from_root(&status)?;
    if status.first() != Some(&0) {
        return Err(remote_failure(
            &partial,
            &String::from_utf8_lossy(status.get(1..).unwrap_or_default()),
        ));
    }

    let root_header = comm.broadcast_from_root(plan.header())?;
    let mismatch = (root_header != plan.header()) as u64;
    let any_mismatch = comm.all_reduce(&[mismatch], ReduceOp::Max)?[0];
    if any_mismatch != 0 {
        if comm.is_root() {
            let _ = std::fs::remove_file(&partial);
        }
        return Err(Error::Contract(
            "ranks computed different output plans".into(),
        ));
    }
    Ok(plan)
}

fn create_presized(plan: &RasterFilePlan) -> Result<()> {
    let partial = plan.partial_path();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&partial)
        .map_err(|e| Error::io(&partial, e))?;
    write_all_at(&file, plan.header(), 0).map_err(|e| Error::io(&partial, e))?;
    file.set_len(plan.file_len())
        .map_err(|e| Error::io(&partial, e))?;
    Ok(())
}

/// One rank's handle on the output file.
#[derive(Debug)]
pub struct StripeWriter {
    plan: RasterFilePlan,
    file: File,
    written: BTreeSet<usize>,
    bytes: u64,
}

impl StripeWriter {
    /// Opens the pre-sized partial file for positional writes.
    pub fn open(plan: &RasterFilePlan) -> Result<Self> {
        let partial = plan.partial_path();
        let file = OpenOptions::new()
            .write(true)
            .open(&partial)
            .map_err(|e| Error::io(&partial, e))?;
        Ok(StripeWriter {
            plan: plan.clone(),
            file,
            written: BTreeSet::new(),
            bytes: 0,
        })
    }

    /// Writes one stripe at `data_offset + y * row_bytes`.
    pub fn write_region(&mut self, buf: &PixelBuffer) -> Result<u64> {
        let region = buf.region();
        let index = self.plan.stripe_index(region).ok_or_else(|| {
            Error::Contract(format!("{:?} is not a stripe of this output plan", region))
        })?;
        if buf.bands() != self.plan.info.bands || buf.sample_type() != self.plan.info.sample_type {
            return Err(Error::Contract(format!(
                "buffer has {} x {} samples, file expects {} x {}",
                buf.bands(),
                buf.sample_type().name(),
                self.plan.info.bands,
                self.plan.info.sample_type.name()
            )));
        }
        if !self.written.insert(index) {
            return Err(Error::Contract(format!(
                "stripe {index} {:?} written twice",
                region
            )));
        }
        let offset = self.plan.row_offset(region.y());
        let bytes = buf.to_le_bytes();
        write_all_at(&self.file, &bytes, offset).map_err(|e| {
            if e.kind() == std::io::ErrorKind::WriteZero {
                Error::ShortWrite {
                    path: self.plan.partial_path(),
                    offset,
                }
            } else {
                Error::io(self.plan.partial_path(), e)
            }
        })?;
        self.bytes += bytes.len() as u64;
        Ok(bytes.len() as u64)
    }

    pub fn written(&self) -> impl Iterator<Item = usize> + '_ {
        self.written.iter().copied()
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes
    }
}

/// Collective: closes every rank's handle, has rank 0 check that each
/// stripe was written exactly once and the file length is exact, then
/// renames the partial file into place. All ranks return the same verdict.
pub fn finalize(plan: &RasterFilePlan, writer: StripeWriter, comm: &Communicator) -> Result<u64> {
    let mine: Vec<u8> = writer
        .written()
        .flat_map(|i| (i as u32).to_le_bytes())
        .collect();
    drop(writer);
    let gathered = comm.gather_to_root(&mine)?;

    let verdict: Result<()> = match &gathered {
        Some(all) => verify_and_publish(plan, all),
        None => Ok(()),
    };
    let status = match &verdict {
        Ok(()) => vec![0],
        Err(e) => {
            let mut v = vec![1];
            v.extend_from_slice(e.to_string().as_bytes());
            v
        }
    };
    let status = comm.broadcast_from_root(&status)?;
    verdict?;
    match status.first() {
        Some(0) => Ok(plan.info.total_bytes()),
        _ => Err(Error::IncompleteWrite(
            String::from_utf8_lossy(status.get(1..).unwrap_or_default()).into_owned(),
        )),
    }
}

fn verify_and_publish(plan: &RasterFilePlan, per_rank: &[Vec<u8>]) -> Result<()> {
    let partial = plan.partial_path();
    let result = (|| {
        let mut owner: Vec<Option<usize>> = vec![None; plan.stripes.len()];
        for (rank, payload) in per_rank.iter().enumerate() {
            for chunk in payload.chunks_exact(4) {
                let i = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
                match owner.get(i) {
                    None => {
                        return Err(Error::Contract(format!(
                            "rank {rank} reports unknown stripe {i}"
                        )))
                    }
                    Some(Some(other)) => {
                        return Err(Error::Contract(format!(
                            "stripe {i} written by both rank {other} and rank {rank}"
                        )))
                    }
                    Some(None) => owner[i] = Some(rank),
                }
            }
        }
        let missing: Vec<usize> = (0..owner.len()).filter(|&i| owner[i].is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteWrite(format!(
                "stripes {missing:?} of {} were never written",
                owner.len()
            )));
        }
        let len = std::fs::metadata(&partial)
            .map_err(|e| Error::io(&partial, e))?
            .len();
        if len != plan.file_len() {
            return Err(Error::IncompleteWrite(format!(
                "file is {len} bytes, expected {}",
                plan.file_len()
            )));
        }
        std::fs::rename(&partial, &plan.path).map_err(|e| Error::io(&plan.path, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&partial);
    }
    result
}

/// Mapper sink writing the pipeline output as a striped TIFF.
#[derive(Debug)]
pub struct RasterWriterSink {
    path: PathBuf,
    plan: Option<RasterFilePlan>,
    writer: Option<StripeWriter>,
}

impl RasterWriterSink {
    pub fn new(path: impl AsRef<Path>) -> Self {
        RasterWriterSink {
            path: path.as_ref().to_path_buf(),
            plan: None,
            writer: None,
        }
    }

    pub fn plan(&self) -> Option<&RasterFilePlan> {
        self.plan.as_ref()
    }
}

impl Sink for RasterWriterSink {
    fn kind(&self) -> &'static str {
        "write"
    }

    fn prepare(&mut self, info: &ImageInfo, scheme: &SplitScheme, comm: &Communicator) -> Result<()> {
        let plan = plan_output(&self.path, *info, scheme, comm)?;
        self.writer = Some(StripeWriter::open(&plan)?);
        self.plan = Some(plan);
        Ok(())
    }

    fn consume(&mut self, _split: usize, buffer: PixelBuffer) -> Result<u64> {
        self.writer
            .as_mut()
            .ok_or_else(|| Error::Contract("writer used before prepare".into()))?
            .write_region(&buffer)
    }

    fn finish(&mut self, comm: &Communicator) -> Result<SinkSummary> {
        let plan = self
            .plan
            .as_ref()
            .ok_or_else(|| Error::Contract("writer finished before prepare".into()))?;
        let writer = self
            .writer
            .take()
            .ok_or_else(|| Error::Contract("writer finished twice".into()))?;
        let local = writer.bytes_written();
        finalize(plan, writer, comm)?;
        Ok(SinkSummary {
            bytes_written: local,
            statistics: None,
        })
    }

    fn abort(&mut self) {
        self.writer = None;
        if let Some(plan) = &self.plan {
            let _ = std::fs::remove_file(plan.partial_path());
        }
    }
}
