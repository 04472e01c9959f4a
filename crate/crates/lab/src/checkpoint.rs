//! Parameter checkpoints.
//!
//! Layout: `SHDN`, u32 version, u32 tensor count, then per tensor a u16 name
//! length, the UTF-8 name, a u8 rank, rank u32 extents and the little-endian
//! f32 payload; a trailing u64 CRC-64/XZ covers every preceding byte.
//!
//! Besides each parameter `<name>` the file holds `<name>.adam_m`,
//! `<name>.adam_v` and `<name>.adam_step` (one value), and for each
//! normalization layer `<layer>.running_mean` and `<layer>.running_var`.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crc::{Crc, Digest, Table, CRC_64_XZ};
use shadingnet_core::{ParamStore, Shape, Tensor};

use crate::bytes::Reader;
use crate::error::{FormatError, LabError, Result};

pub const MAGIC: [u8; 4] = *b"SHDN";
pub const VERSION: u32 = 1;
/// Byte length of magic, version and count.
pub const HEADER_LEN: usize = 12;

const CRC: Crc<u64, Table<16>> = Crc::<u64, Table<16>>::new(&CRC_64_XZ);
/// Adam step counts are stored as f32 and stay exact up to this value.
const MAX_EXACT_STEP: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// An entry that borrows its payload from the store where it can.
struct View<'a> {
    name: String,
    dims: Vec<usize>,
    data: Cow<'a, [f32]>,
}

fn dims_of(shape: Shape) -> Vec<usize> {
    if (shape.c, shape.h, shape.w) == (1, 1, 1) {
        vec![shape.n]
    } else {
        shape.dims().to_vec()
    }
}

fn views(store: &ParamStore) -> Vec<View<'_>> {
    fn view(name: String, dims: Vec<usize>, data: Cow<'_, [f32]>) -> View<'_> {
        View { name, dims, data }
    }
    let mut out = Vec::new();
    for p in store.params() {
        let n = p.numel();
        assert!(p.step_count <= MAX_EXACT_STEP, "step count exceeds exact f32 range");
        out.push(view(p.name.clone(), dims_of(p.tensor.shape()), Cow::Borrowed(p.tensor.data())));
        out.push(view(format!("{}.adam_m", p.name), vec![n], Cow::Borrowed(&p.adam_m)));
        out.push(view(format!("{}.adam_v", p.name), vec![n], Cow::Borrowed(&p.adam_v)));
        out.push(view(format!("{}.adam_step", p.name), vec![1], Cow::Owned(vec![p.step_count as f32])));
    }
    for s in store.all_stats() {
        let c = s.stats.mean.len();
        out.push(view(format!("{}.running_mean", s.name), vec![c], Cow::Borrowed(&s.stats.mean)));
        out.push(view(format!("{}.running_var", s.name), vec![c], Cow::Borrowed(&s.stats.var)));
    }
    out
}

/// Every tensor of `store` in file order.
pub fn entries(store: &ParamStore) -> Vec<Entry> {
    views(store).into_iter().map(|v| Entry { name: v.name, dims: v.dims, data: v.data.into_owned() }).collect()
}

/// Forwards writes to `inner` while checksumming them.
struct Checksummed<'c, W> {
    inner: W,
    digest: Digest<'c, u64, Table<16>>,
}

impl<W: Write> Checksummed<'_, W> {
    fn put(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.digest.update(bytes);
        self.inner.write_all(bytes)
    }
}

fn write_views<W: Write>(views: &[View<'_>], out: W) -> io::Result<W> {
    let mut w = Checksummed { inner: out, digest: CRC.digest() };
    w.put(&MAGIC)?;
    w.put(&VERSION.to_le_bytes())?;
    w.put(&(views.len() as u32).to_le_bytes())?;
    let mut chunk = Vec::with_capacity(1 << 16);
    for v in views {
        let name = u16::try_from(v.name.len()).expect("tensor name fits in u16");
        w.put(&name.to_le_bytes())?;
        w.put(v.name.as_bytes())?;
        w.put(&[u8::try_from(v.dims.len()).expect("rank fits in u8")])?;
        for &d in &v.dims {
            w.put(&u32::try_from(d).expect("extent fits in u32").to_le_bytes())?;
        }
        debug_assert_eq!(v.dims.iter().product::<usize>(), v.data.len());
        for part in v.data.chunks(1 << 14) {
            chunk.clear();
            chunk.extend(part.iter().flat_map(|x| x.to_le_bytes()));
            w.put(&chunk)?;
        }
    }
    let crc = w.digest.finalize();
    w.inner.write_all(&crc.to_le_bytes())?;
    Ok(w.inner)
}

fn encoded_len(views: &[View<'_>]) -> usize {
    HEADER_LEN + views.iter().map(|v| 2 + v.name.len() + 1 + 4 * v.dims.len() + 4 * v.data.len()).sum::<usize>() + 8
}

fn encode_views(views: &[View<'_>]) -> Vec<u8> {
    write_views(views, Vec::with_capacity(encoded_len(views))).expect("writing to memory cannot fail")
}

pub fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let views: Vec<View<'_>> = entries
        .iter()
        .map(|e| View { name: e.name.clone(), dims: e.dims.clone(), data: Cow::Borrowed(&e.data) })
        .collect();
    encode_views(&views)
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    encode_views(&views(store))
}

/// Parses and checksums a file without interpreting tensor names.
pub fn decode_entries(bytes: &[u8]) -> std::result::Result<Vec<Entry>, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::Header(format!("tensor name at offset {} is not UTF-8", r.position() - len)))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Header(format!("extent of {name:?} overflows")))?;
        let data = r.f32s(numel)?;
        out.push(Entry { name, dims, data });
    }
    let body = r.position();
    let stored = r.u64()?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    let computed = CRC.checksum(&bytes[..body]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(out)
}

/// Copies every tensor of a decoded file into `store`. The file must hold
/// exactly the tensors [`entries`] would write for `store`, with matching
/// extents. On error `store` may be partially updated.
pub fn restore(store: &mut ParamStore, file: Vec<Entry>) -> std::result::Result<(), FormatError> {
    let expected: BTreeMap<String, Vec<usize>> = entries(store).into_iter().map(|e| (e.name, e.dims)).collect();
    let mut found = BTreeMap::new();
    for e in file {
        let Some(dims) = expected.get(&e.name) else {
            return Err(FormatError::UnknownName(e.name));
        };
        if *dims != e.dims {
            return Err(FormatError::ShapeMismatch { name: e.name, expected: dims.clone(), found: e.dims });
        }
        if found.contains_key(&e.name) {
            return Err(FormatError::Header(format!("duplicate tensor {:?}", e.name)));
        }
        found.insert(e.name, e.data);
    }
    if let Some(name) = expected.keys().find(|k| !found.contains_key(*k)) {
        return Err(FormatError::Missing(name.clone()));
    }
    let mut take = |name: String| found.remove(&name).expect("presence checked");
    for p in store.params_mut() {
        let shape = p.tensor.shape();
        let mut t = Tensor::from_vec(shape, take(p.name.clone())).expect("extent checked");
        t.set_requires_grad(true);
        p.tensor = t;
        p.adam_m = take(format!("{}.adam_m", p.name));
        p.adam_v = take(format!("{}.adam_v", p.name));
        let step = take(format!("{}.adam_step", p.name))[0];
        if !(step >= 0.0 && step.fract() == 0.0 && step as u64 <= MAX_EXACT_STEP) {
            return Err(FormatError::Header(format!("{}.adam_step holds {step}", p.name)));
        }
        p.step_count = step as u64;
    }
    for s in store.all_stats_mut() {
        s.stats.mean = take(format!("{}.running_mean", s.name));
        s.stats.var = take(format!("{}.running_var", s.name));
    }
    Ok(())
}

/// Streams to a temporary sibling, then renames, so readers never see a
/// partial file.
pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let tmp = path.with_extension("partial");
    let write = || -> io::Result<()> {
        let file = BufWriter::with_capacity(1 << 20, File::create(&tmp)?);
        write_views(&views(store), file)?.into_inner().map_err(|e| e.into_error())?.sync_all()
    };
    write().map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn load_into(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    let file = decode_entries(&bytes).map_err(|e| LabError::format(path, e))?;
    // Restore into a copy so a rejected file leaves the store intact.
    let mut staged = store.clone();
    restore(&mut staged, file).map_err(|e| LabError::format(path, e))?;
    *store = staged;
    Ok(())
}
