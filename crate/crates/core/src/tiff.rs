//! The baseline-TIFF subset the parallel writer produces: little-endian,
//! uncompressed, single-plane chunky strips, optional GeoTIFF pixel scale and
//! tiepoint. The reader accepts the same subset from any writer, in either
//! byte order and with any RowsPerStrip.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleType};

pub const TAG_IMAGE_WIDTH: u16 = 256;
pub const TAG_IMAGE_LENGTH: u16 = 257;
pub const TAG_BITS_PER_SAMPLE: u16 = 258;
pub const TAG_COMPRESSION: u16 = 259;
pub const TAG_PHOTOMETRIC: u16 = 262;
pub const TAG_STRIP_OFFSETS: u16 = 273;
pub const TAG_SAMPLES_PER_PIXEL: u16 = 277;
pub const TAG_ROWS_PER_STRIP: u16 = 278;
pub const TAG_STRIP_BYTE_COUNTS: u16 = 279;
pub const TAG_PLANAR_CONFIG: u16 = 284;
pub const TAG_TILE_WIDTH: u16 = 322;
pub const TAG_SAMPLE_FORMAT: u16 = 339;
pub const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
pub const TAG_MODEL_TIEPOINT: u16 = 33922;

/// Pixel data starts on a multiple of this.
pub const DATA_ALIGNMENT: u64 = 4096;

const TYPE_BYTE: u16 = 1;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_DOUBLE: u16 = 12;

fn tag_name(tag: u16) -> String {
    let name = match tag {
        TAG_IMAGE_WIDTH => "ImageWidth",
        TAG_IMAGE_LENGTH => "ImageLength",
        TAG_BITS_PER_SAMPLE => "BitsPerSample",
        TAG_COMPRESSION => "Compression",
        TAG_PHOTOMETRIC => "PhotometricInterpretation",
        TAG_STRIP_OFFSETS => "StripOffsets",
        TAG_SAMPLES_PER_PIXEL => "SamplesPerPixel",
        TAG_ROWS_PER_STRIP => "RowsPerStrip",
        TAG_STRIP_BYTE_COUNTS => "StripByteCounts",
        TAG_PLANAR_CONFIG => "PlanarConfiguration",
        TAG_TILE_WIDTH => "TileWidth",
        TAG_SAMPLE_FORMAT => "SampleFormat",
        TAG_MODEL_PIXEL_SCALE => "ModelPixelScale",
        TAG_MODEL_TIEPOINT => "ModelTiepoint",
        _ => return format!("tag {tag}"),
    };
    format!("tag {tag} {name}")
}

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Short(Vec<u16>),
    Long(Vec<u32>),
    Double(Vec<f64>),
}

impl Value {
    fn field_type(&self) -> u16 {
        match self {
            Value::Short(_) => TYPE_SHORT,
            Value::Long(_) => TYPE_LONG,
            Value::Double(_) => TYPE_DOUBLE,
        }
    }

    fn count(&self) -> usize {
        match self {
            Value::Short(v) => v.len(),
            Value::Long(v) => v.len(),
            Value::Double(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Value::Short(v) => 2 * v.len(),
            Value::Long(v) => 4 * v.len(),
            Value::Double(v) => 8 * v.len(),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        match self {
            Value::Short(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Value::Long(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Value::Double(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }
}

fn align_up(v: u64, to: u64) -> u64 {
    v.div_ceil(to) * to
}

/// Everything that determines the header bytes of a striped file.
#[derive(Clone, Debug, PartialEq)]
pub struct StripLayout {
    pub info: ImageInfo,
    pub rows_per_strip: usize,
    pub strip_count: usize,
}

impl StripLayout {
    fn entries(&self, data_offset: u64) -> Vec<(u16, Value)> {
        let info = &self.info;
        let bits = (info.sample_type.byte_width() * 8) as u16;
        let format = if info.sample_type.is_integer() { 1 } else { 3 };
        let row_bytes = info.row_bytes();
        let mut offsets = Vec::with_capacity(self.strip_count);
        let mut counts = Vec::with_capacity(self.strip_count);
        for s in 0..self.strip_count {
            let y = s * self.rows_per_strip;
            let rows = self.rows_per_strip.min(info.height - y);
            offsets.push((data_offset + y as u64 * row_bytes) as u32);
            counts.push((rows as u64 * row_bytes) as u32);
        }
        let mut entries = vec![
            (TAG_IMAGE_WIDTH, Value::Long(vec![info.width as u32])),
            (TAG_IMAGE_LENGTH, Value::Long(vec![info.height as u32])),
            (TAG_BITS_PER_SAMPLE, Value::Short(vec![bits; info.bands])),
            (TAG_COMPRESSION, Value::Short(vec![1])),
            (TAG_PHOTOMETRIC, Value::Short(vec![1])),
            (TAG_STRIP_OFFSETS, Value::Long(offsets)),
            (TAG_SAMPLES_PER_PIXEL, Value::Short(vec![info.bands as u16])),
            (TAG_ROWS_PER_STRIP, Value::Long(vec![self.rows_per_strip as u32])),
            (TAG_STRIP_BYTE_COUNTS, Value::Long(counts)),
            (TAG_PLANAR_CONFIG, Value::Short(vec![1])),
            (TAG_SAMPLE_FORMAT, Value::Short(vec![format; info.bands])),
        ];
        if info.has_geo_transform() {
            entries.push((
                TAG_MODEL_PIXEL_SCALE,
                Value::Double(vec![info.spacing_x, -info.spacing_y, 0.0]),
            ));
            entries.push((
                TAG_MODEL_TIEPOINT,
                Value::Double(vec![0.0, 0.0, 0.0, info.origin_x, info.origin_y, 0.0]),
            ));
        }
        entries
    }

    /// Length of header + IFD + out-of-line values. Independent of the
    /// actual offset values, so it can be computed before `data_offset`.
    fn header_len(entries: &[(u16, Value)]) -> u64 {
        let mut len = 8 + 2 + 12 * entries.len() as u64 + 4;
        for (_, v) in entries {
            if v.byte_len() > 4 {
                len = align_up(len, 8) + v.byte_len() as u64;
            }
        }
        len
    }

    /// Byte offset of the first pixel, identical for every caller.
    pub fn data_offset(&self) -> u64 {
        align_up(Self::header_len(&self.entries(0)), DATA_ALIGNMENT)
    }

    pub fn file_len(&self) -> u64 {
        self.data_offset() + self.info.total_bytes()
    }

    /// Header, IFD and out-of-line values, padded with zeros up to
    /// [`StripLayout::data_offset`].
    pub fn encode_header(&self) -> Result<Vec<u8>> {
        let data_offset = self.data_offset();
        if self.file_len() > u32::MAX as u64 {
            return Err(Error::format(
                tag_name(TAG_STRIP_OFFSETS),
                "file exceeds the 4 GiB addressable by classic TIFF",
            ));
        }
        let entries = self.entries(data_offset);
        let mut out = Vec::with_capacity(data_offset as usize);
        out.extend_from_slice(b"II");
        out.extend_from_slice(&42u16.to_le_bytes());
        out.extend_from_slice(&8u32.to_le_bytes());

        let ifd_end = 8 + 2 + 12 * entries.len() as u64 + 4;
        let mut extra: Vec<u8> = Vec::new();
        let mut extra_pos = ifd_end;
        out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        for (tag, value) in &entries {
            out.extend_from_slice(&tag.to_le_bytes());
            out.extend_from_slice(&value.field_type().to_le_bytes());
            out.extend_from_slice(&(value.count() as u32).to_le_bytes());
            let bytes = value.bytes();
            if bytes.len() <= 4 {
                let mut inline = [0u8; 4];
                inline[..bytes.len()].copy_from_slice(&bytes);
                out.extend_from_slice(&inline);
            } else {
                let at = align_up(extra_pos, 8);
                extra.resize((at - ifd_end) as usize, 0);
                extra.extend_from_slice(&bytes);
                extra_pos = at + bytes.len() as u64;
                out.extend_from_slice(&(at as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&extra);
        out.resize(data_offset as usize, 0);
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self {
            ByteOrder::Little => u16::from_le_bytes(a),
            ByteOrder::Big => u16::from_be_bytes(a),
        }
    }

    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }

    fn f64(self, b: &[u8]) -> f64 {
        let a: [u8; 8] = b[..8].try_into().unwrap();
        match self {
            ByteOrder::Little => f64::from_le_bytes(a),
            ByteOrder::Big => f64::from_be_bytes(a),
        }
    }
}

/// Parsed structure of a striped TIFF file.
#[derive(Clone, Debug)]
pub struct TiffLayout {
    pub info: ImageInfo,
    pub rows_per_strip: usize,
    pub strip_offsets: Vec<u64>,
    pub strip_byte_counts: Vec<u64>,
    byte_order: ByteOrder,
}

struct RawEntry {
    field_type: u16,
    bytes: Vec<u8>,
}

fn type_size(t: u16) -> Option<usize> {
    match t {
        1 | 2 | 6 | 7 => Some(1),
        3 | 8 => Some(2),
        4 | 9 | 11 => Some(4),
        5 | 10 | 12 => Some(8),
        _ => None,
    }
}

fn parse_layout(data: &[u8], file_len: u64) -> Result<TiffLayout> {
    let truncated = || Error::format("header", "file is truncated");
    if data.len() < 8 {
        return Err(truncated());
    }
    let order = match &data[0..2] {
        b"II" => ByteOrder::Little,
        b"MM" => ByteOrder::Big,
        _ => return Err(Error::format("header", "missing II/MM byte-order mark")),
    };
    match order.u16(&data[2..4]) {
        42 => {}
        43 => return Err(Error::format("header", "BigTIFF is not supported")),
        v => return Err(Error::format("header", format!("bad magic number {v}"))),
    }
    let ifd = order.u32(&data[4..8]) as usize;
    if ifd + 2 > data.len() {
        return Err(truncated());
    }
    let n = order.u16(&data[ifd..ifd + 2]) as usize;
    if ifd + 2 + 12 * n > data.len() {
        return Err(truncated());
    }
    let mut entries = std::collections::HashMap::new();
    for i in 0..n {
        let e = &data[ifd + 2 + 12 * i..ifd + 14 + 12 * i];
        let tag = order.u16(&e[0..2]);
        let field_type = order.u16(&e[2..4]);
        let count = order.u32(&e[4..8]) as usize;
        let Some(size) = type_size(field_type) else {
            // unknown field types are skipped unless we need the tag
            continue;
        };
        let len = size * count;
        let bytes = if len <= 4 {
            e[8..8 + len].to_vec()
        } else {
            let at = order.u32(&e[8..12]) as usize;
            if at + len > data.len() {
                return Err(Error::format(tag_name(tag), "value lies beyond end of file"));
            }
            data[at..at + len].to_vec()
        };
        entries.insert(
            tag,
            RawEntry { field_type, bytes },
        );
    }

    let ints = |tag: u16| -> Result<Option<Vec<u64>>> {
        let Some(e) = entries.get(&tag) else {
            return Ok(None);
        };
        let v = match e.field_type {
            TYPE_BYTE => e.bytes.iter().map(|&b| b as u64).collect(),
            TYPE_SHORT => e.bytes.chunks_exact(2).map(|c| order.u16(c) as u64).collect(),
            TYPE_LONG => e.bytes.chunks_exact(4).map(|c| order.u32(c) as u64).collect(),
            t => {
                return Err(Error::format(
                    tag_name(tag),
                    format!("unsupported field type {t}"),
                ))
            }
        };
        Ok(Some(v))
    };
    let required = |tag: u16| -> Result<Vec<u64>> {
        ints(tag)?.ok_or_else(|| Error::format(tag_name(tag), "required tag is missing"))
    };
    let single = |tag: u16, default: Option<u64>| -> Result<u64> {
        match ints(tag)? {
            Some(v) if !v.is_empty() => Ok(v[0]),
            Some(_) => Err(Error::format(tag_name(tag), "empty value")),
            None => default.ok_or_else(|| Error::format(tag_name(tag), "required tag is missing")),
        }
    };

    if entries.contains_key(&TAG_TILE_WIDTH) {
        return Err(Error::format(tag_name(TAG_TILE_WIDTH), "tiled layout is not supported"));
    }
    let width = single(TAG_IMAGE_WIDTH, None)? as usize;
    let height = single(TAG_IMAGE_LENGTH, None)? as usize;
    let bands = single(TAG_SAMPLES_PER_PIXEL, Some(1))? as usize;
    let compression = single(TAG_COMPRESSION, Some(1))?;
    if compression != 1 {
        return Err(Error::format(
            tag_name(TAG_COMPRESSION),
            format!("compression {compression} is not supported"),
        ));
    }
    let planar = single(TAG_PLANAR_CONFIG, Some(1))?;
    if planar != 1 && bands > 1 {
        return Err(Error::format(
            tag_name(TAG_PLANAR_CONFIG),
            format!("planar configuration {planar} is not supported"),
        ));
    }
    let bits = ints(TAG_BITS_PER_SAMPLE)?.unwrap_or_else(|| vec![1]);
    let bit = bits[0];
    if bits.iter().any(|&b| b != bit) {
        return Err(Error::format(tag_name(TAG_BITS_PER_SAMPLE), "mixed sample widths"));
    }
    let format = ints(TAG_SAMPLE_FORMAT)?.map(|v| v[0]).unwrap_or(1);
    let sample_type = match (format, bit) {
        (1, 8) => SampleType::U8,
        (1, 16) => SampleType::U16,
        (3, 32) => SampleType::F32,
        _ => {
            return Err(Error::format(
                tag_name(TAG_SAMPLE_FORMAT),
                format!("sample format {format} with {bit} bits is not supported"),
            ))
        }
    };
    let rows_per_strip = (single(TAG_ROWS_PER_STRIP, Some(height as u64))? as usize).min(height.max(1));
    let strip_offsets = required(TAG_STRIP_OFFSETS)?;
    let strip_byte_counts = required(TAG_STRIP_BYTE_COUNTS)?;
    let strips = height.div_ceil(rows_per_strip.max(1));
    if strip_offsets.len() != strips || strip_byte_counts.len() != strips {
        return Err(Error::format(
            tag_name(TAG_STRIP_OFFSETS),
            format!(
                "expected {strips} strips, found {} offsets and {} byte counts",
                strip_offsets.len(),
                strip_byte_counts.len()
            ),
        ));
    }

    let mut info = ImageInfo::new(width, height, bands, sample_type);
    let doubles = |tag: u16| -> Result<Option<Vec<f64>>> {
        match entries.get(&tag) {
            None => Ok(None),
            Some(e) if e.field_type == TYPE_DOUBLE => {
                Ok(Some(e.bytes.chunks_exact(8).map(|c| order.f64(c)).collect()))
            }
            Some(_) => Err(Error::format(tag_name(tag), "expected DOUBLE values")),
        }
    };
    if let (Some(scale), Some(tie)) = (doubles(TAG_MODEL_PIXEL_SCALE)?, doubles(TAG_MODEL_TIEPOINT)?) {
        if scale.len() >= 2 && tie.len() >= 6 {
            info = info.with_geo(
                tie[3] - tie[0] * scale[0],
                tie[4] + tie[1] * scale[1],
                scale[0],
                -scale[1],
            );
        }
    }
    info.validate()
        .map_err(|e| Error::format(tag_name(TAG_IMAGE_WIDTH), e.to_string()))?;

    let row_bytes = info.row_bytes();
    for s in 0..strips {
        let rows = rows_per_strip.min(height - s * rows_per_strip) as u64;
        if strip_byte_counts[s] < rows * row_bytes {
            return Err(Error::format(
                tag_name(TAG_STRIP_BYTE_COUNTS),
                format!("strip {s} holds {} bytes, needs {}", strip_byte_counts[s], rows * row_bytes),
            ));
        }
        if strip_offsets[s] + rows * row_bytes > file_len {
            return Err(Error::format(
                tag_name(TAG_STRIP_OFFSETS),
                format!("strip {s} extends past end of file (file is truncated)"),
            ));
        }
    }
    Ok(TiffLayout {
        info,
        rows_per_strip,
        strip_offsets,
        strip_byte_counts,
        byte_order: order,
    })
}

/// Random-access reader for the supported TIFF subset.
#[derive(Debug)]
pub struct TiffReader {
    path: PathBuf,
    file: File,
    layout: TiffLayout,
}

impl TiffReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        // header, IFD and tag values of our files sit well inside 64 KiB;
        // other writers may place the IFD at the end, so fall back to a
        // full-metadata read when the first chunk is not enough
        let mut head = Vec::new();
        (&mut file)
            .take(65536)
            .read_to_end(&mut head)
            .map_err(|e| Error::io(&path, e))?;
        let layout = match parse_layout(&head, file_len) {
            Ok(l) => l,
            Err(_) if (head.len() as u64) < file_len => {
                let all = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                parse_layout(&all, file_len)?
            }
            Err(e) => return Err(e),
        };
        Ok(TiffReader { path, file, layout })
    }

    pub fn info(&self) -> &ImageInfo {
        &self.layout.info
    }

    pub fn layout(&self) -> &TiffLayout {
        &self.layout
    }

    /// Reads `region` by seeking to each row's byte range.
    pub fn read_region(&self, region: Region) -> Result<PixelBuffer> {
        let info = self.layout.info;
        if region.is_empty() || !info.largest_region().contains(&region) {
            return Err(Error::Contract(format!(
                "read of {:?} outside {}x{} image",
                region, info.width, info.height
            )));
        }
        let pixel_bytes = info.pixel_bytes();
        let row_bytes = info.row_bytes();
        let span = region.width() as u64 * pixel_bytes;
        let mut bytes = vec![0u8; (span * region.height() as u64) as usize];
        for (i, y) in (region.y()..region.end_y()).enumerate() {
            let strip = y / self.layout.rows_per_strip;
            let within = (y % self.layout.rows_per_strip) as u64 * row_bytes;
            let offset = self.layout.strip_offsets[strip] + within + region.x() as u64 * pixel_bytes;
            let dst = &mut bytes[i * span as usize..(i + 1) * span as usize];
            read_exact_at(&self.file, dst, offset).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::format("pixel data", format!("file is truncated at offset {offset}"))
                } else {
                    Error::io(&self.path, e)
                }
            })?;
        }
        if self.layout.byte_order == ByteOrder::Big {
            let w = info.sample_type.byte_width();
            bytes.chunks_exact_mut(w).for_each(|c| c.reverse());
        }
        PixelBuffer::from_le_bytes(region, info.bands, info.sample_type, &bytes)
    }
}

/// Reads a whole raster.
pub fn read_raster(path: impl AsRef<Path>) -> Result<(ImageInfo, PixelBuffer)> {
    let reader = TiffReader::open(path)?;
    let info = *reader.info();
    let buf = reader.read_region(info.largest_region())?;
    Ok((info, buf))
}

/// Reads one window of a raster.
pub fn read_raster_region(path: impl AsRef<Path>, region: Region) -> Result<PixelBuffer> {
    TiffReader::open(path)?.read_region(region)
}

/// Writes a whole raster front to back with ordinary sequential I/O. The
/// output is byte-identical to what the parallel writer produces for the
/// same `rows_per_strip`.
pub fn write_raster(path: impl AsRef<Path>, image: &PixelBuffer, info: &ImageInfo, rows_per_strip: usize) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    if image.region() != info.largest_region() || image.bands() != info.bands || image.sample_type() != info.sample_type {
        return Err(Error::Contract(format!(
            "buffer {:?} x{} {} does not match the declared image",
            image.region(),
            image.bands(),
            image.sample_type().name()
        )));
    }
    if rows_per_strip == 0 {
        return Err(Error::Contract("rows_per_strip must be positive".into()));
    }
    let layout = StripLayout {
        info: *info,
        rows_per_strip,
        strip_count: info.height.div_ceil(rows_per_strip),
    };
    let header = layout.encode_header()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    out.write_all(&header).map_err(|e| Error::io(path, e))?;
    out.write_all(&image.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(unix)]
pub(crate) fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(unix)]
pub(crate) fn write_all_at(file: &File, buf: &[u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.write_all_at(buf, offset)
}

#[cfg(windows)]
pub(crate) fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}

#[cfg(windows)]
pub(crate) fn write_all_at(file: &File, mut buf: &[u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_write(buf, offset)? {
            0 => return Err(std::io::ErrorKind::WriteZero.into()),
            n => {
                buf = &buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}
