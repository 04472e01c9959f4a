//! Raw float maps: `F32M`, u32 channels, u32 height, u32 width, then
//! channels·height·width little-endian f32 values in channel-major order.

use std::fs;
use std::path::Path;

use shadingnet_core::Map;

use crate::bytes::{put_f32s, Reader};
use crate::error::{FormatError, LabError, Result};

pub const MAGIC: [u8; 4] = *b"F32M";
pub const HEADER_LEN: usize = 16;

pub fn encode(map: &Map) -> Vec<u8> {
    let (c, h, w) = map.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + map.data().len() * 4);
    out.extend_from_slice(&MAGIC);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(&mut out, map.data());
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Map, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| FormatError::Header(format!("extent {c}x{h}x{w} overflows")))?;
    let data = r.f32s(count)?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    Map::from_vec(c, h, w, data).map_err(|e| FormatError::Header(e.to_string()))
}

pub fn write(path: &Path, map: &Map) -> Result<()> {
    fs::write(path, encode(map)).map_err(|e| LabError::io(path, e))
}

pub fn read(path: &Path) -> Result<Map> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes).map_err(|e| LabError::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = Map::from_vec(1, 1, 2, vec![1.0, -0.5]).unwrap();
        let b = encode(&m);
        assert_eq!(&b[..4], b"F32M");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn rejects_trailing_and_short() {
        let mut b = encode(&Map::zeros(1, 2, 2));
        b.push(0);
        assert_eq!(decode(&b), Err(FormatError::TrailingBytes(1)));
        assert!(matches!(decode(&b[..10]), Err(FormatError::Truncated { .. })));
    }
}
