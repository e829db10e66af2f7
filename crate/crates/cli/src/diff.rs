//! Byte comparison of two files.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffResult {
    Identical,
    /// Offset of the first differing byte. Files of different length
    /// that agree on the shorter one differ at its length.
    DiffersAt(u64),
}

pub fn diff_files(a: &Path, b: &Path) -> std::io::Result<DiffResult> {
    let open = |p: &Path| {
        File::open(p).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
    };
    let mut ra = BufReader::with_capacity(1 << 20, open(a)?);
    let mut rb = BufReader::with_capacity(1 << 20, open(b)?);
    let mut ba = vec![0u8; 1 << 16];
    let mut bb = vec![0u8; 1 << 16];
    let mut offset = 0u64;
    loop {
        let na = read_full(&mut ra, &mut ba)?;
        let nb = read_full(&mut rb, &mut bb)?;
        let n = na.min(nb);
        if let Some(i) = ba[..n].iter().zip(&bb[..n]).position(|(x, y)| x != y) {
            return Ok(DiffResult::DiffersAt(offset + i as u64));
        }
        if na != nb {
            return Ok(DiffResult::DiffersAt(offset + n as u64));
        }
        if na == 0 {
            return Ok(DiffResult::Identical);
        }
        offset += n as u64;
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}
