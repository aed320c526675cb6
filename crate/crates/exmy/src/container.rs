//! Checkpoint container for packed tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EXMY" | version u8 | entry_count u32
//! per entry:
//!   name_len u16 | name utf-8 | rank u8 | dims u32 x rank
//!   | x u8 | y u8 | scheme u8 | block_kind u8 [+ params]
//!   | flags u8 | (offset u64, length u64) per section | crc32 u32
//! payload: per entry, in entry order:
//!   metadata bytes | segment bytes (descending width) | scales | specials
//! ```
//!
//! Sections per entry are the metadata array (one biased exponent byte per
//! block), one byte array per packing segment, the fp32 scale array when
//! flags bit 0 is set, and the specials list (u64 index, u32 bits pairs)
//! when flags bit 1 is set. Offsets are absolute file positions, so a
//! reader seeks straight to one tensor's bytes without touching the rest.
//! Each entry's crc32 covers its own payload sections concatenated in
//! layout order; any corrupted payload byte therefore fails exactly the
//! entries that own it.

use crate::bitpack::{decompose, PackedSegments, GROUP_ROWS};
use crate::block::{BlockGrid, BlockMetadata, BlockShape, Scheme};
use crate::codec::PackedTensor;
use crate::error::{Error, Result};
use crate::format::FormatSpec;
use std::io::{Read, Seek, SeekFrom, Write};

const MAGIC: [u8; 4] = *b"EXMY";
const VERSION: u8 = 1;

const FLAG_SCALES: u8 = 1;
const FLAG_SPECIALS: u8 = 2;

fn scheme_code(s: Scheme) -> u8 {
    match s {
        Scheme::MaxExpBeforeRounding => 0,
        Scheme::MaxExpAfterRounding => 1,
        Scheme::FloatScaling => 2,
    }
}

fn scheme_from_code(c: u8) -> Result<Scheme> {
    match c {
        0 => Ok(Scheme::MaxExpBeforeRounding),
        1 => Ok(Scheme::MaxExpAfterRounding),
        2 => Ok(Scheme::FloatScaling),
        _ => Err(Error::CorruptContainer(format!("unknown scheme code {c}"))),
    }
}

fn block_kind_bytes(shape: BlockShape, out: &mut Vec<u8>) {
    match shape {
        BlockShape::WholeTensor => out.push(0),
        BlockShape::PerRow => out.push(1),
        BlockShape::PerColumn => out.push(2),
        BlockShape::SubRow(l) => {
            out.push(3);
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        BlockShape::Tile(r, c) => {
            out.push(4);
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
    }
}

/// Everything the header records about one tensor.
#[derive(Clone, Debug)]
pub struct EntryInfo {
    pub name: String,
    pub dims: Vec<usize>,
    pub fmt: FormatSpec,
    pub scheme: Scheme,
    pub shape: BlockShape,
    pub num_specials: usize,
    /// Sum of this entry's payload section lengths in bytes.
    pub payload_bytes: u64,
}

impl EntryInfo {
    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    /// Size advantage over raw fp32 storage, payload only (header excluded).
    pub fn compression_ratio(&self) -> f64 {
        (self.num_elements() * 4) as f64 / self.payload_bytes as f64
    }
}

struct EntryRecord {
    info: EntryInfo,
    /// (offset, length) per section: metadata, segments.., scales?, specials?
    sections: Vec<(u64, u64)>,
    crc32: u32,
}

/// Serializes entries into any byte sink. Section offsets are computed up
/// front (header size first, then payload laid end to end), so plain
/// `Write` suffices and the stream is written in one forward pass.
pub fn write_container<W: Write>(mut w: W, entries: &[(&str, &PackedTensor)]) -> Result<()> {
    // Per-entry section byte lengths, in layout order.
    let mut section_lens: Vec<Vec<u64>> = Vec::with_capacity(entries.len());
    let mut records: Vec<Vec<u8>> = Vec::with_capacity(entries.len());
    for (name, t) in entries {
        if name.len() > usize::from(u16::MAX) {
            return Err(Error::SizeMismatch(format!(
                "tensor name of {} bytes does not fit the header",
                name.len()
            )));
        }
        if t.dims.len() > 255 {
            return Err(Error::SizeMismatch(format!(
                "rank {} does not fit the header",
                t.dims.len()
            )));
        }
        let mut lens = vec![t.meta.max_biased_exponents.len() as u64];
        lens.extend(t.segments.segments().iter().map(|s| s.len() as u64));
        if let Some(scales) = &t.meta.scales {
            lens.push(4 * scales.len() as u64);
        }
        if !t.specials.is_empty() {
            lens.push(12 * t.specials.len() as u64);
        }
        section_lens.push(lens);

        let mut rec = Vec::new();
        rec.extend_from_slice(&(name.len() as u16).to_le_bytes());
        rec.extend_from_slice(name.as_bytes());
        rec.push(t.dims.len() as u8);
        for d in &t.dims {
            let d = u32::try_from(*d).map_err(|_| {
                Error::SizeMismatch(format!("dimension {d} does not fit the header"))
            })?;
            rec.extend_from_slice(&d.to_le_bytes());
        }
        rec.push(t.fmt.exponent_bits());
        rec.push(t.fmt.mantissa_bits());
        rec.push(scheme_code(t.scheme));
        block_kind_bytes(t.shape, &mut rec);
        let mut flags = 0u8;
        if t.meta.scales.is_some() {
            flags |= FLAG_SCALES;
        }
        if !t.specials.is_empty() {
            flags |= FLAG_SPECIALS;
        }
        rec.push(flags);
        records.push(rec);
    }

    // Header size is fixed once the records are built: each record grows by
    // 16 bytes per section pair plus the trailing crc.
    let mut offset: u64 = 4 + 1 + 4;
    for (rec, lens) in records.iter().zip(&section_lens) {
        offset += rec.len() as u64 + 16 * lens.len() as u64 + 4;
    }

    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (i, (rec, lens)) in records.iter().zip(&section_lens).enumerate() {
        w.write_all(rec)?;
        for len in lens {
            w.write_all(&offset.to_le_bytes())?;
            w.write_all(&len.to_le_bytes())?;
            offset += len;
        }
        w.write_all(&entry_crc(entries[i].1).to_le_bytes())?;
    }
    for (_, t) in entries {
        for_each_section(t, |bytes| Ok(w.write_all(bytes)?))?;
    }
    Ok(())
}

/// Feeds an entry's payload sections, in layout order, to a sink. Large
/// sections (metadata, segments) are passed as borrowed slices; only the
/// small scale and specials arrays are serialized on the fly.
fn for_each_section<F>(t: &PackedTensor, mut f: F) -> Result<()>
where
    F: FnMut(&[u8]) -> Result<()>,
{
    f(&t.meta.max_biased_exponents)?;
    for seg in t.segments.segments() {
        f(seg)?;
    }
    if let Some(scales) = &t.meta.scales {
        let bytes: Vec<u8> = scales.iter().flat_map(|s| s.to_bits().to_le_bytes()).collect();
        f(&bytes)?;
    }
    if !t.specials.is_empty() {
        let mut bytes = Vec::with_capacity(12 * t.specials.len());
        for (idx, bits) in &t.specials {
            bytes.extend_from_slice(&idx.to_le_bytes());
            bytes.extend_from_slice(&bits.to_le_bytes());
        }
        f(&bytes)?;
    }
    Ok(())
}

fn entry_crc(t: &PackedTensor) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for_each_section(t, |bytes| {
        h.update(bytes);
        Ok(())
    })
    .expect("crc sink cannot fail");
    h.finalize()
}

/// Validating reader with lazy tensor access: opening parses and checks the
/// whole header, but payload bytes are only read (and checksummed) by
/// [`ContainerReader::read_tensor`], one entry at a time.
pub struct ContainerReader<R> {
    src: R,
    entries: Vec<EntryRecord>,
}

/// Streaming header reader: pulls exactly the bytes each field needs, so
/// opening never touches the payload region. Truncation inside the header
/// is reported as corruption.
struct HeaderReader<'a, R> {
    src: &'a mut R,
}

impl<R: Read> HeaderReader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        read_fully(self.src, &mut buf)?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn name(&mut self, len: usize) -> Result<String> {
        let mut buf = vec![0u8; len];
        read_fully(self.src, &mut buf)?;
        String::from_utf8(buf)
            .map_err(|_| Error::CorruptContainer("tensor name is not utf-8".into()))
    }
}

impl<R: Read + Seek> ContainerReader<R> {
    pub fn open(mut src: R) -> Result<Self> {
        let file_len = src.seek(SeekFrom::End(0))?;
        src.seek(SeekFrom::Start(0))?;
        let mut cur = HeaderReader { src: &mut src };

        if cur.bytes::<4>()? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let entry_count = cur.u32()?;

        let mut entries = Vec::new();
        for _ in 0..entry_count {
            entries.push(parse_entry(&mut cur, file_len)?);
        }

        // Sections must stay inside the file and not overlap one another.
        let mut spans: Vec<(u64, u64)> = entries
            .iter()
            .flat_map(|e| e.sections.iter().copied())
            .filter(|(_, len)| *len > 0)
            .collect();
        spans.sort_unstable();
        for pair in spans.windows(2) {
            let (off_a, len_a) = pair[0];
            if off_a + len_a > pair[1].0 {
                return Err(Error::CorruptContainer(format!(
                    "overlapping sections at offset {}",
                    pair[1].0
                )));
            }
        }
        Ok(ContainerReader { src, entries })
    }

    pub fn entries(&self) -> impl Iterator<Item = &EntryInfo> {
        self.entries.iter().map(|e| &e.info)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads, checksums and reassembles one tensor's payload.
    pub fn read_tensor(&mut self, name: &str) -> Result<PackedTensor> {
        let e = self
            .entries
            .iter()
            .find(|e| e.info.name == name)
            .ok_or_else(|| Error::TensorNotFound(name.to_string()))?;
        let info = &e.info;

        let mut sections = Vec::with_capacity(e.sections.len());
        let mut h = crc32fast::Hasher::new();
        for (off, len) in &e.sections {
            self.src.seek(SeekFrom::Start(*off))?;
            let mut bytes = vec![0u8; *len as usize];
            read_fully(&mut self.src, &mut bytes)?;
            h.update(&bytes);
            sections.push(bytes);
        }
        if h.finalize() != e.crc32 {
            return Err(Error::ChecksumMismatch(name.to_string()));
        }

        let (rows, cols) = view_dims(&info.dims);
        let grid = BlockGrid::new(info.shape, rows, cols)
            .map_err(|e| Error::CorruptContainer(e.to_string()))?;
        let num_blocks = grid.num_blocks();

        let mut sections = sections.into_iter();
        let max_biased_exponents = sections.next().expect("metadata section");
        debug_assert_eq!(max_biased_exponents.len(), num_blocks);

        let widths = decompose(info.fmt.bit_width())?;
        let segment_bytes: Vec<Vec<u8>> = sections.by_ref().take(widths.len()).collect();
        let segments =
            PackedSegments::from_bytes(info.fmt.bit_width(), rows / GROUP_ROWS, cols, segment_bytes)
                .map_err(|e| Error::CorruptContainer(e.to_string()))?;

        let scales = if info.scheme.uses_scale() {
            let bytes = sections.next().expect("scale section");
            Some(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap())))
                    .collect::<Vec<f32>>(),
            )
        } else {
            None
        };

        let specials: Vec<(u64, u32)> = match sections.next() {
            Some(bytes) => bytes
                .chunks_exact(12)
                .map(|c| {
                    (
                        u64::from_le_bytes(c[..8].try_into().unwrap()),
                        u32::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
            None => Vec::new(),
        };
        let n = info.num_elements() as u64;
        if !specials.windows(2).all(|w| w[0].0 < w[1].0)
            || specials.last().is_some_and(|(i, _)| *i >= n)
        {
            return Err(Error::CorruptContainer(format!(
                "specials of '{name}' are not sorted in-range indices"
            )));
        }

        Ok(PackedTensor {
            fmt: info.fmt,
            scheme: info.scheme,
            shape: info.shape,
            dims: info.dims.clone(),
            meta: BlockMetadata {
                max_biased_exponents,
                scales,
            },
            segments,
            specials,
        })
    }
}

fn read_fully<R: Read>(src: &mut R, buf: &mut [u8]) -> Result<()> {
    src.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::CorruptContainer("file ends before its declared sections".into())
        } else {
            Error::Io(e)
        }
    })
}

fn view_dims(dims: &[usize]) -> (usize, usize) {
    let cols = *dims.last().expect("rank >= 1");
    (dims.iter().product::<usize>() / cols.max(1), cols)
}

fn parse_entry<R: Read>(cur: &mut HeaderReader<'_, R>, file_len: u64) -> Result<EntryRecord> {
    let name_len = cur.u16()?;
    let name = cur.name(usize::from(name_len))?;
    let rank = cur.u8()?;
    if rank == 0 {
        return Err(Error::CorruptContainer(format!("tensor '{name}' has rank 0")));
    }
    let mut dims = Vec::with_capacity(usize::from(rank));
    let mut elements: u64 = 1;
    for _ in 0..rank {
        let d = cur.u32()?;
        if d == 0 {
            return Err(Error::CorruptContainer(format!(
                "tensor '{name}' has a zero dimension"
            )));
        }
        elements = elements
            .checked_mul(u64::from(d))
            .ok_or_else(|| Error::CorruptContainer(format!("tensor '{name}' overflows u64")))?;
        dims.push(d as usize);
    }
    let x = cur.u8()?;
    let y = cur.u8()?;
    let fmt = FormatSpec::new(x, y)
        .map_err(|e| Error::CorruptContainer(format!("tensor '{name}': {e}")))?;
    let scheme = scheme_from_code(cur.u8()?)?;
    let shape = match cur.u8()? {
        0 => BlockShape::WholeTensor,
        1 => BlockShape::PerRow,
        2 => BlockShape::PerColumn,
        3 => BlockShape::SubRow(cur.u32()? as usize),
        4 => BlockShape::Tile(cur.u32()? as usize, cur.u32()? as usize),
        k => {
            return Err(Error::CorruptContainer(format!(
                "unknown block kind code {k}"
            )))
        }
    };
    match shape {
        BlockShape::SubRow(0) | BlockShape::Tile(0, _) | BlockShape::Tile(_, 0) => {
            return Err(Error::CorruptContainer(format!(
                "tensor '{name}' has a zero-sized block shape"
            )))
        }
        _ => {}
    }
    let flags = cur.u8()?;
    if flags & !(FLAG_SCALES | FLAG_SPECIALS) != 0 {
        return Err(Error::CorruptContainer(format!("unknown flags {flags:#x}")));
    }
    if (flags & FLAG_SCALES != 0) != (scheme == Scheme::FloatScaling) {
        return Err(Error::CorruptContainer(format!(
            "scale flag does not match scheme for tensor '{name}'"
        )));
    }

    // Expected section geometry, derived the same way the writer laid it out.
    let (rows, cols) = view_dims(&dims);
    if rows % GROUP_ROWS != 0 {
        return Err(Error::CorruptContainer(format!(
            "tensor '{name}' has {rows} view rows, not a multiple of 8"
        )));
    }
    let grid = BlockGrid::new(shape, rows, cols)
        .map_err(|e| Error::CorruptContainer(format!("tensor '{name}': {e}")))?;
    let num_blocks = grid.num_blocks() as u64;
    let widths = decompose(fmt.bit_width())
        .map_err(|e| Error::CorruptContainer(format!("tensor '{name}': {e}")))?;
    let groups = (rows / GROUP_ROWS) as u64 * cols as u64;

    let mut expected_lens = vec![num_blocks];
    expected_lens.extend(widths.iter().map(|w| groups * u64::from(*w)));
    if flags & FLAG_SCALES != 0 {
        expected_lens.push(4 * num_blocks);
    }
    let has_specials = flags & FLAG_SPECIALS != 0;

    let mut sections = Vec::with_capacity(expected_lens.len() + usize::from(has_specials));
    for want in &expected_lens {
        let (off, len) = (cur.u64()?, cur.u64()?);
        if len != *want {
            return Err(Error::CorruptContainer(format!(
                "section of tensor '{name}' declares {len} bytes, expected {want}"
            )));
        }
        sections.push((off, len));
    }
    if has_specials {
        let (off, len) = (cur.u64()?, cur.u64()?);
        if len % 12 != 0 {
            return Err(Error::CorruptContainer(format!(
                "specials section of tensor '{name}' has odd length {len}"
            )));
        }
        sections.push((off, len));
    }
    for (off, len) in &sections {
        let end = off.checked_add(*len);
        if end.is_none() || end.unwrap() > file_len {
            return Err(Error::CorruptContainer(format!(
                "section of tensor '{name}' reaches past the end of the file"
            )));
        }
    }
    let crc32 = cur.u32()?;
    let num_specials = sections
        .last()
        .filter(|_| has_specials)
        .map_or(0, |(_, len)| (len / 12) as usize);
    let payload_bytes = sections.iter().map(|(_, len)| len).sum();

    Ok(EntryRecord {
        info: EntryInfo {
            name,
            dims,
            fmt,
            scheme,
            shape,
            num_specials,
            payload_bytes,
        },
        sections,
        crc32,
    })
}

/// Writes a container to a new file at `path`.
pub fn write_file(path: &std::path::Path, entries: &[(&str, &PackedTensor)]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut buf = std::io::BufWriter::new(f);
    write_container(&mut buf, entries)?;
    buf.flush()?;
    Ok(())
}

/// Opens a container file for reading.
pub fn open_file(path: &std::path::Path) -> Result<ContainerReader<std::io::BufReader<std::fs::File>>> {
    let f = std::fs::File::open(path)?;
    ContainerReader::open(std::io::BufReader::new(f))
}
