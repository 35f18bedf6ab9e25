//! Progressive model container.
//!
//! The bytes through the end of chunk `k` are enough to rebuild the network
//! at level `k`, so a client can stop downloading at any level. All
//! integers and floats are little-endian.
//!
//! # Layout
//!
//! Header, at offset 0:
//!
//! | field               | type            | notes                                   |
//! |---------------------|-----------------|-----------------------------------------|
//! | magic               | `[u8; 4]`       | `b"PLFN"`                               |
//! | version             | `u32`           | [`FORMAT_VERSION`]                      |
//! | header_len          | `u32`           | bytes in the header including its CRC   |
//! | input_dim           | `u32`           |                                         |
//! | output_dim          | `u32`           |                                         |
//! | num_weight_layers   | `u32`           |                                         |
//! | num_lods            | `u32`           | `n`                                     |
//! | lod_widths          | `u32 × n`       | strictly increasing                     |
//! | num_frequencies     | `u32`           | ray encoding                            |
//! | include_raw         | `u32`           | 0 or 1                                  |
//! | occupancy_offset    | `u64`           | 0 when absent                           |
//! | occupancy_len       | `u64`           | 0 when absent                           |
//! | occupancy_crc32     | `u32`           | 0 when absent                           |
//! | chunk table         | `n × (u64, u64, u32)` | offset, length, CRC32 per chunk   |
//! | header_crc32        | `u32`           | CRC32 of every preceding header byte    |
//!
//! The occupancy blob (if any) follows the header, then chunks `1..=n` in
//! order. Offsets are absolute.
//!
//! Occupancy blob: `input_dim`, `output_dim`, `num_weight_layers`,
//! `num_lods` and `lod_widths` as `u32`, then every layer in order as its
//! full row-major weight matrix followed by its bias, all `f32`.
//!
//! Chunk `k` with previous width `p = w[k-1]` (0 for `k = 1`) and width
//! `w = w[k]` holds `f32` values in this order:
//!
//! 1. input layer: rows `p..w`, each row over all input columns; then
//!    biases `p..w`
//! 2. each hidden layer: rows `p..w` over columns `0..p`; then rows `0..w`
//!    over columns `p..w`; then biases `p..w`
//! 3. output layer: for each output row, columns `p..w`
//! 4. chunk 1 only: the output bias
//!
//! Chunk `k` therefore holds `param_count(k) - param_count(k-1)` floats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::geometry::EncodingConfig;
use crate::pronet::{ArchSpec, Layer, Matrix, ProgressiveMlp};
use crate::renderer::LightFieldModel;

pub const MAGIC: [u8; 4] = *b"PLFN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub lod: usize,
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

/// Decoded header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub arch: ArchSpec,
    pub encoding: EncodingConfig,
    pub header_bytes: u64,
    pub occupancy: Option<BlobInfo>,
    pub chunks: Vec<ChunkInfo>,
}

impl ModelMeta {
    /// Sum of chunk lengths for chunks `1..=k`.
    pub fn payload_bytes(&self, k: usize) -> u64 {
        self.chunks.iter().take(k).map(|c| c.length).sum()
    }

    /// File length needed to decode level `k`.
    pub fn prefix_len(&self, k: usize) -> u64 {
        match k {
            0 => self.header_bytes,
            _ => self.chunks[k - 1].offset + self.chunks[k - 1].length,
        }
    }

    pub fn total_len(&self) -> u64 {
        self.prefix_len(self.chunks.len())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: impl IntoIterator<Item = f32>) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header_len(num_lods: usize) -> usize {
    4 + 4 * 7 + 4 * num_lods + 4 + 8 + 8 + 4 + num_lods * 20 + 4
}

fn chunk_values(net: &ProgressiveMlp<f32>, k: usize) -> Vec<f32> {
    let arch = net.arch();
    let layers = net.layers();
    let w = arch.lod_widths[k - 1];
    let p = if k == 1 { 0 } else { arch.lod_widths[k - 2] };
    let last = arch.num_weight_layers - 1;
    let mut v = Vec::new();

    let input = &layers[0];
    for r in p..w {
        v.extend((0..arch.input_dim).map(|c| input.weight.at(r, c)));
    }
    v.extend_from_slice(&input.bias[p..w]);

    for layer in &layers[1..last] {
        for r in p..w {
            v.extend((0..p).map(|c| layer.weight.at(r, c)));
        }
        for r in 0..w {
            v.extend((p..w).map(|c| layer.weight.at(r, c)));
        }
        v.extend_from_slice(&layer.bias[p..w]);
    }

    let output = &layers[last];
    for r in 0..arch.output_dim {
        v.extend((p..w).map(|c| output.weight.at(r, c)));
    }
    if k == 1 {
        v.extend_from_slice(&output.bias);
    }
    v
}

fn write_arch(out: &mut Vec<u8>, arch: &ArchSpec) {
    put_u32(out, arch.input_dim as u32);
    put_u32(out, arch.output_dim as u32);
    put_u32(out, arch.num_weight_layers as u32);
    put_u32(out, arch.num_lods() as u32);
    for &w in &arch.lod_widths {
        put_u32(out, w as u32);
    }
}

fn occupancy_blob(net: &ProgressiveMlp<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    write_arch(&mut out, net.arch());
    for layer in net.layers() {
        put_f32s(&mut out, layer.weight.data.iter().copied());
        put_f32s(&mut out, layer.bias.iter().copied());
    }
    out
}

fn check_finite(net: &ProgressiveMlp<f32>) -> Result<()> {
    for (l, layer) in net.layers().iter().enumerate() {
        if !layer.weight.data.iter().chain(&layer.bias).all(|v| v.is_finite()) {
            return Err(FormatError::NonFinite { layer: l }.into());
        }
    }
    Ok(())
}

/// Serializes a model. Refuses non-finite parameters.
pub fn pack(model: &LightFieldModel) -> Result<Vec<u8>> {
    let net = &model.net;
    let arch = net.arch();
    check_finite(net)?;
    if let Some(occ) = &model.occupancy {
        check_finite(occ)?;
    }
    let n = arch.num_lods();
    let hlen = header_len(n);
    let occ = model.occupancy.as_ref().map(occupancy_blob);
    let chunks: Vec<Vec<u8>> = (1..=n)
        .map(|k| {
            let mut b = Vec::new();
            put_f32s(&mut b, chunk_values(net, k));
            b
        })
        .collect();

    let mut out = Vec::with_capacity(hlen);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, hlen as u32);
    write_arch(&mut out, arch);
    put_u32(&mut out, model.encoding.num_frequencies);
    put_u32(&mut out, model.encoding.include_raw as u32);
    let mut offset = hlen as u64;
    match &occ {
        Some(blob) => {
            put_u64(&mut out, offset);
            put_u64(&mut out, blob.len() as u64);
            put_u32(&mut out, crc32fast::hash(blob));
            offset += blob.len() as u64;
        }
        None => {
            put_u64(&mut out, 0);
            put_u64(&mut out, 0);
            put_u32(&mut out, 0);
        }
    }
    for c in &chunks {
        put_u64(&mut out, offset);
        put_u64(&mut out, c.len() as u64);
        put_u32(&mut out, crc32fast::hash(c));
        offset += c.len() as u64;
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    debug_assert_eq!(out.len(), hlen);
    if let Some(blob) = occ {
        out.extend_from_slice(&blob);
    }
    for c in chunks {
        out.extend_from_slice(&c);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

fn read_arch(r: &mut Reader) -> Option<ArchSpec> {
    let input_dim = r.u32()? as usize;
    let output_dim = r.u32()? as usize;
    let num_weight_layers = r.u32()? as usize;
    let n = r.u32()? as usize;
    if n > 4096 {
        return None;
    }
    let lod_widths = (0..n).map(|_| r.u32().map(|w| w as usize)).collect::<Option<_>>()?;
    Some(ArchSpec {
        input_dim,
        output_dim,
        num_weight_layers,
        lod_widths,
    })
}

/// Decodes and verifies the header.
pub fn read_meta(bytes: &[u8]) -> Result<ModelMeta, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).ok_or(FormatError::TruncatedHeader)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u32().ok_or(FormatError::TruncatedHeader)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = r.u32().ok_or(FormatError::TruncatedHeader)? as usize;
    if bytes.len() < hlen {
        return Err(FormatError::TruncatedHeader);
    }
    if hlen < 4 {
        return Err(FormatError::Malformed(format!("header length {hlen}")));
    }
    let stored = u32::from_le_bytes(bytes[hlen - 4..hlen].try_into().unwrap());
    if crc32fast::hash(&bytes[..hlen - 4]) != stored {
        return Err(FormatError::HeaderChecksum);
    }
    let mut r = Reader {
        bytes: &bytes[..hlen - 4],
        pos: r.pos,
    };
    let short = || FormatError::Malformed("header fields overrun header length".into());
    let arch = read_arch(&mut r).ok_or_else(short)?;
    arch.validate().map_err(|e| FormatError::Malformed(e.to_string()))?;
    if hlen != header_len(arch.num_lods()) {
        return Err(FormatError::Malformed(format!("header length {hlen} does not match arch")));
    }
    let num_frequencies = r.u32().ok_or_else(short)?;
    let include_raw = match r.u32().ok_or_else(short)? {
        0 => false,
        1 => true,
        v => return Err(FormatError::Malformed(format!("include_raw = {v}"))),
    };
    let encoding = EncodingConfig {
        num_frequencies,
        include_raw,
    };
    if encoding.dim() != arch.input_dim {
        return Err(FormatError::Malformed("encoding does not match input_dim".into()));
    }
    let (occ_offset, occ_len, occ_crc) = (
        r.u64().ok_or_else(short)?,
        r.u64().ok_or_else(short)?,
        r.u32().ok_or_else(short)?,
    );
    let occupancy = (occ_len > 0).then_some(BlobInfo {
        offset: occ_offset,
        length: occ_len,
        crc32: occ_crc,
    });
    let mut chunks = Vec::with_capacity(arch.num_lods());
    for lod in 1..=arch.num_lods() {
        let offset = r.u64().ok_or_else(short)?;
        let length = r.u64().ok_or_else(short)?;
        let crc32 = r.u32().ok_or_else(short)?;
        let floats = arch.param_count(arch.lod(lod).unwrap())
            - if lod == 1 { 0 } else { arch.param_count(arch.lod(lod - 1).unwrap()) };
        if length != 4 * floats as u64 {
            return Err(FormatError::Malformed(format!(
                "chunk {lod} length {length} does not match arch ({} floats)",
                floats
            )));
        }
        chunks.push(ChunkInfo {
            lod,
            offset,
            length,
            crc32,
        });
    }
    Ok(ModelMeta {
        format_version: version,
        arch,
        encoding,
        header_bytes: hlen as u64,
        occupancy,
        chunks,
    })
}

/// Verified bytes of chunk `k` (1-based).
pub fn chunk_bytes<'a>(bytes: &'a [u8], meta: &ModelMeta, k: usize) -> Result<&'a [u8], FormatError> {
    let info = meta.chunks.get(k.wrapping_sub(1)).ok_or(FormatError::NoSuchLevel {
        requested: k,
        available: meta.chunks.len(),
    })?;
    let start = info.offset as usize;
    let end = start + info.length as usize;
    let data = bytes.get(start..end).ok_or(FormatError::TruncatedChunk {
        chunk: k,
        needed: end,
        available: bytes.len(),
    })?;
    let actual = crc32fast::hash(data);
    if actual != info.crc32 {
        return Err(FormatError::ChecksumMismatch {
            chunk: k,
            expected: info.crc32,
            actual,
        });
    }
    Ok(data)
}

fn read_occupancy(bytes: &[u8], info: &BlobInfo) -> Result<ProgressiveMlp<f32>, FormatError> {
    let bad = |m: &str| FormatError::Occupancy(m.to_string());
    let start = info.offset as usize;
    let blob = bytes
        .get(start..start + info.length as usize)
        .ok_or_else(|| bad("truncated"))?;
    if crc32fast::hash(blob) != info.crc32 {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { bytes: blob, pos: 0 };
    let arch = read_arch(&mut r).ok_or_else(|| bad("truncated arch"))?;
    arch.validate().map_err(|e| FormatError::Occupancy(e.to_string()))?;
    let full = arch.full_width();
    let mut layers = Vec::with_capacity(arch.num_weight_layers);
    for l in 0..arch.num_weight_layers {
        let (rows, cols) = arch.layer_shape(l, full);
        let mut layer = Layer::zeros(rows, cols);
        for v in layer.weight.data.iter_mut().chain(layer.bias.iter_mut()) {
            *v = r.f32().ok_or_else(|| bad("truncated weights"))?;
        }
        layers.push(layer);
    }
    if r.pos != blob.len() {
        return Err(bad("trailing bytes"));
    }
    ProgressiveMlp::from_layers(arch, layers).map_err(|e| FormatError::Occupancy(e.to_string()))
}

/// Rebuilds the network at level `upto_k` (width `w[upto_k]`) from a byte
/// prefix holding the header, the occupancy blob if any, and chunks
/// `1..=upto_k`.
pub fn load_prefix(bytes: &[u8], upto_k: usize) -> Result<LightFieldModel, FormatError> {
    let meta = read_meta(bytes)?;
    let full = &meta.arch;
    if upto_k == 0 || upto_k > full.num_lods() {
        return Err(FormatError::NoSuchLevel {
            requested: upto_k,
            available: full.num_lods(),
        });
    }
    let arch = ArchSpec {
        lod_widths: full.lod_widths[..upto_k].to_vec(),
        ..full.clone()
    };
    let w = arch.full_width();
    let last = arch.num_weight_layers - 1;
    let mut layers: Vec<Layer<f32>> = (0..arch.num_weight_layers)
        .map(|l| {
            let (r, c) = arch.layer_shape(l, w);
            Layer {
                weight: Matrix::zeros(r, c),
                bias: vec![0.0; r],
            }
        })
        .collect();

    for k in 1..=upto_k {
        let data = chunk_bytes(bytes, &meta, k)?;
        let mut r = Reader { bytes: data, pos: 0 };
        let mut next = || r.f32().expect("chunk length verified against arch");
        let wk = arch.lod_widths[k - 1];
        let p = if k == 1 { 0 } else { arch.lod_widths[k - 2] };

        let input = &mut layers[0];
        for row in p..wk {
            for c in 0..arch.input_dim {
                *input.weight.at_mut(row, c) = next();
            }
        }
        for b in &mut input.bias[p..wk] {
            *b = next();
        }
        for layer in &mut layers[1..last] {
            for row in p..wk {
                for c in 0..p {
                    *layer.weight.at_mut(row, c) = next();
                }
            }
            for row in 0..wk {
                for c in p..wk {
                    *layer.weight.at_mut(row, c) = next();
                }
            }
            for b in &mut layer.bias[p..wk] {
                *b = next();
            }
        }
        let output = &mut layers[last];
        for row in 0..arch.output_dim {
            for c in p..wk {
                *output.weight.at_mut(row, c) = next();
            }
        }
        if k == 1 {
            for b in &mut output.bias {
                *b = next();
            }
        }
    }

    let net = ProgressiveMlp::from_layers(arch, layers).map_err(|e| FormatError::Malformed(e.to_string()))?;
    let occupancy = meta.occupancy.as_ref().map(|o| read_occupancy(bytes, o)).transpose()?;
    Ok(LightFieldModel::new(net, meta.encoding, occupancy))
}

/// Decodes a complete file.
pub fn unpack(bytes: &[u8]) -> Result<LightFieldModel> {
    let meta = read_meta(bytes)?;
    Ok(load_prefix(bytes, meta.arch.num_lods())?)
}

pub fn write_model(model: &LightFieldModel, path: &std::path::Path) -> Result<()> {
    let bytes = pack(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &std::path::Path) -> Result<LightFieldModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    unpack(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LightFieldModel {
        let arch = ArchSpec {
            input_dim: 12,
            output_dim: 4,
            num_weight_layers: 4,
            lod_widths: vec![2, 5, 7],
        };
        let enc = EncodingConfig {
            num_frequencies: 1,
            include_raw: false,
        };
        LightFieldModel::new(ProgressiveMlp::init(arch, 11).unwrap(), enc, None)
    }

    #[test]
    fn chunk_sizes_follow_param_counts() {
        let m = toy();
        let bytes = pack(&m).unwrap();
        let meta = read_meta(&bytes).unwrap();
        let arch = m.arch();
        for k in 1..=3 {
            assert_eq!(meta.payload_bytes(k), 4 * arch.param_count(arch.lod(k).unwrap()) as u64);
        }
        assert_eq!(meta.total_len(), bytes.len() as u64);
    }

    #[test]
    fn round_trip_is_exact() {
        let m = toy();
        let back = unpack(&pack(&m).unwrap()).unwrap();
        assert_eq!(back.net, m.net);
        assert_eq!(back.encoding, m.encoding);
    }

    #[test]
    fn prefix_decodes_slice() {
        let m = toy();
        let bytes = pack(&m).unwrap();
        let meta = read_meta(&bytes).unwrap();
        for k in 1..=3 {
            let cut = &bytes[..meta.prefix_len(k) as usize];
            let loaded = load_prefix(cut, k).unwrap();
            assert_eq!(loaded.net, m.net.slice_lod(m.arch().lod(k).unwrap()).unwrap());
        }
    }

    #[test]
    fn error_kinds_are_distinct() {
        let m = toy();
        let bytes = pack(&m).unwrap();
        let meta = read_meta(&bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(read_meta(&bad).unwrap_err(), FormatError::BadMagic);

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_meta(&bad).unwrap_err(), FormatError::VersionMismatch { found: 9, .. }));

        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert_eq!(read_meta(&bad).unwrap_err(), FormatError::HeaderChecksum);

        assert_eq!(read_meta(&bytes[..10]).unwrap_err(), FormatError::TruncatedHeader);

        let cut = &bytes[..meta.prefix_len(2) as usize - 1];
        assert!(matches!(load_prefix(cut, 2).unwrap_err(), FormatError::TruncatedChunk { chunk: 2, .. }));

        let mut bad = bytes.clone();
        bad[meta.chunks[1].offset as usize + 3] ^= 0x40;
        assert!(matches!(load_prefix(&bad, 3).unwrap_err(), FormatError::ChecksumMismatch { chunk: 2, .. }));
        assert!(load_prefix(&bad, 1).is_ok());

        assert!(matches!(load_prefix(&bytes, 4).unwrap_err(), FormatError::NoSuchLevel { requested: 4, .. }));
    }

    #[test]
    fn refuses_non_finite() {
        let mut m = toy();
        m.net.layers_mut()[2].bias[1] = f32::NAN;
        assert!(matches!(
            pack(&m).unwrap_err(),
            Error::Format(FormatError::NonFinite { layer: 2 })
        ));
    }

    #[test]
    fn occupancy_blob_round_trips() {
        let mut m = toy();
        let occ_arch = ArchSpec {
            input_dim: 12,
            output_dim: 1,
            num_weight_layers: 3,
            lod_widths: vec![16],
        };
        m.occupancy = Some(ProgressiveMlp::init(occ_arch, 2).unwrap());
        let bytes = pack(&m).unwrap();
        let back = unpack(&bytes).unwrap();
        assert_eq!(back.occupancy, m.occupancy);
        let meta = read_meta(&bytes).unwrap();
        let occ = meta.occupancy.unwrap();
        let mut bad = bytes.clone();
        bad[occ.offset as usize + 30] ^= 1;
        assert!(matches!(unpack(&bad).unwrap_err(), Error::Format(FormatError::Occupancy(_))));
    }
}
