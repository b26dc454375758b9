//! Versioned binary container for checkpoints and scene dumps.
//!
//! Layout: `SLAB` magic, u32 version, u8 kind byte, then kind-specific
//! payload. All scalars are little-endian; f64 arrays are length-prefixed.
//! Floats are written as raw bits, so a save/load round trip reproduces every
//! scalar bit-exactly.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DeformationField, FieldDescriptor, GaussianCloud};
use crate::error::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SLAB";

pub(crate) const KIND_CHECKPOINT: u8 = 1;
pub(crate) const KIND_SCENE: u8 = 2;

/// FNV-1a 64-bit content hash, used for config identity in reports.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Serializable state of the run-owned ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume or inspect a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub cloud: GaussianCloud,
    pub field: DeformationField,
    pub iteration: u64,
    pub rng: RngState,
    /// Full experiment configuration, stored verbatim as JSON.
    pub config_json: String,
}

impl Checkpoint {
    pub fn new(
        cloud: GaussianCloud,
        field: DeformationField,
        iteration: u64,
        rng: RngState,
        config_json: String,
    ) -> Self {
        Self {
            version: CONTAINER_VERSION,
            cloud,
            field,
            iteration,
            rng,
            config_json,
        }
    }

    /// Short identity string: config hash plus iteration.
    pub fn id(&self) -> String {
        format!("{:016x}@{}", fnv1a64(self.config_json.as_bytes()), self.iteration)
    }

    /// Bitwise equality over every float payload (stricter than `==`, which
    /// treats `-0.0 == 0.0`).
    pub fn bits_eq(&self, other: &Self) -> bool {
        let floats_eq = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        self.version == other.version
            && self.iteration == other.iteration
            && self.rng == other.rng
            && self.config_json == other.config_json
            && self.cloud.dim == other.cloud.dim
            && floats_eq(&self.cloud.positions, &other.cloud.positions)
            && floats_eq(&self.cloud.log_scales, &other.cloud.log_scales)
            && floats_eq(&self.cloud.opacity_logits, &other.cloud.opacity_logits)
            && floats_eq(&self.cloud.colors, &other.cloud.colors)
            && floats_eq(&self.cloud.depth_keys, &other.cloud.depth_keys)
            && self.field.descriptor() == other.field.descriptor()
            && floats_eq(self.field.params(), other.field.params())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ByteWriter::with_header(KIND_CHECKPOINT);
        w.u64(self.iteration);
        w.bytes_fixed(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);
        write_cloud(&mut w, &self.cloud);
        let desc_json = serde_json::to_vec(self.field.descriptor())
            .map_err(|e| Error::Parse(format!("descriptor encode: {e}")))?;
        w.blob(&desc_json);
        w.f64_array(self.field.params());
        w.blob(self.config_json.as_bytes());
        fs::write(path, w.finish())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path)?;
        let mut r = ByteReader::with_header(&data, KIND_CHECKPOINT)?;
        let iteration = r.u64()?;
        let mut seed = [0u8; 32];
        r.bytes_fixed(&mut seed)?;
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let cloud = read_cloud(&mut r)?;
        let desc_bytes = r.blob()?;
        let descriptor: FieldDescriptor = serde_json::from_slice(&desc_bytes)
            .map_err(|e| Error::Parse(format!("descriptor decode: {e}")))?;
        let params = r.f64_array()?;
        let field = DeformationField::from_params(descriptor, params)?;
        let config_bytes = r.blob()?;
        let config_json = String::from_utf8(config_bytes)
            .map_err(|e| Error::Parse(format!("config not utf-8: {e}")))?;
        r.expect_eof()?;
        Ok(Self {
            version: CONTAINER_VERSION,
            cloud,
            field,
            iteration,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            config_json,
        })
    }
}

pub(crate) fn write_cloud(w: &mut ByteWriter, cloud: &GaussianCloud) {
    w.u64(cloud.dim as u64);
    w.f64_array(&cloud.positions);
    w.f64_array(&cloud.log_scales);
    w.f64_array(&cloud.opacity_logits);
    w.f64_array(&cloud.colors);
    w.f64_array(&cloud.depth_keys);
}

pub(crate) fn read_cloud(r: &mut ByteReader) -> Result<GaussianCloud> {
    let dim = r.u64()? as usize;
    let positions = r.f64_array()?;
    let log_scales = r.f64_array()?;
    let opacity_logits = r.f64_array()?;
    let colors = r.f64_array()?;
    let depth_keys = r.f64_array()?;
    GaussianCloud::new(dim, positions, log_scales, opacity_logits, colors, depth_keys)
}

pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub(crate) fn with_header(kind: u8) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.buf.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        w.buf.push(kind);
        w
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub(crate) fn bytes_fixed(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn blob(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn f64_array(&mut self,
        vals: &[f64],
    ) {
        self.u64(vals.len() as u64);
        for &v in vals {
            self.f64(v);
        }
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn with_header(data: &'a [u8], expect_kind: u8) -> Result<Self> {
        let mut r = Self { data, pos: 0 };
        let mut magic = [0u8; 4];
        r.bytes_fixed(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("bad magic; not a container file".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CONTAINER_VERSION,
            });
        }
        let kind = r.u8()?;
        if kind != expect_kind {
            return Err(Error::Parse(format!(
                "container kind {kind} does not match expected {expect_kind}"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub(crate) fn bytes_fixed(&mut self, out: &mut [u8]) -> Result<()> {
        out.copy_from_slice(self.take(out.len())?);
        Ok(())
    }

    pub(crate) fn blob(&mut self) -> Result<Vec<u8>> {
        let n = self.u64()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub(crate) fn f64_array(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub(crate) fn expect_eof(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Parse(format!(
                "{} trailing bytes after payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
