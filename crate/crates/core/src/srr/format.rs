//! Model file format, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "SRRMODEL"
//! version    u32
//! config     embed_dim, hidden_dim, vocab_buckets, attention_dim, n_modules: u32
//!            threshold: f64; loc_dim, text_dim: u32; module mask: 3 × u8
//! loc norm   mean: loc_dim × f64, scale: loc_dim × f64
//! tensors    count: u32, then per tensor ndim: u32, dims: ndim × u32,
//!            data: product(dims) × f32
//! ```

use super::params::{tensor_shapes, Params};
use super::{LocNorm, ModelConfig};
use crate::error::{Error, Result};
use crate::features::{LOC_DIM, TEXT_DIM};

pub const MAGIC: &[u8; 8] = b"SRRMODEL";
pub const VERSION: u32 = 1;

pub fn serialize(config: &ModelConfig, norm: &LocNorm, params: &Params<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.n_params() * 4 + 256);
    out.extend_from_slice(MAGIC);
    let u32s = |out: &mut Vec<u8>, vals: &[usize]| {
        for v in vals {
            out.extend_from_slice(&(*v as u32).to_le_bytes());
        }
    };
    u32s(&mut out, &[VERSION as usize]);
    u32s(&mut out, &[config.embed_dim, config.hidden_dim, config.vocab_buckets, config.attention_dim, 3]);
    out.extend_from_slice(&config.threshold.to_le_bytes());
    u32s(&mut out, &[LOC_DIM, TEXT_DIM]);
    out.extend(config.module_mask.iter().map(|m| u8::from(*m)));
    for x in norm.mean.iter().chain(&norm.scale) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let shapes = tensor_shapes(config);
    u32s(&mut out, &[shapes.len()]);
    for (shape, data) in shapes.iter().zip(params.tensors()) {
        u32s(&mut out, &[shape.len()]);
        u32s(&mut out, shape);
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::ShapeMismatch(format!("file ends inside {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<(ModelConfig, LocNorm, Params<f32>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let embed_dim = r.u32("config")?;
    let hidden_dim = r.u32("config")?;
    let vocab_buckets = r.u32("config")?;
    let attention_dim = r.u32("config")?;
    let n_modules = r.u32("config")?;
    let threshold = r.f64("config")?;
    let loc_dim = r.u32("config")?;
    let text_dim = r.u32("config")?;
    let m = r.take(3, "config")?;
    if n_modules != 3 || loc_dim != LOC_DIM || text_dim != TEXT_DIM {
        return Err(Error::ShapeMismatch(format!(
            "file has {n_modules} modules, location dim {loc_dim}, text dim {text_dim}"
        )));
    }
    let config = ModelConfig {
        embed_dim,
        hidden_dim,
        vocab_buckets,
        attention_dim,
        threshold,
        module_mask: [m[0] != 0, m[1] != 0, m[2] != 0],
    };
    config.validate().map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mean = (0..LOC_DIM).map(|_| r.f64("location normalizer")).collect::<Result<Vec<_>>>()?;
    let scale = (0..LOC_DIM).map(|_| r.f64("location normalizer")).collect::<Result<Vec<_>>>()?;
    let norm = LocNorm { mean, scale };
    norm.validate()?;

    let shapes = tensor_shapes(&config);
    let count = r.u32("tensor count")?;
    if count != shapes.len() {
        return Err(Error::ShapeMismatch(format!("expected {} tensors, found {count}", shapes.len())));
    }
    let mut params = Params::zeros(&config);
    for (i, (shape, dst)) in shapes.iter().zip(params.tensors_mut()).enumerate() {
        let ndim = r.u32("tensor header")?;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.u32("tensor header")?);
        }
        if &dims != shape {
            return Err(Error::ShapeMismatch(format!("tensor {i}: expected {shape:?}, found {dims:?}")));
        }
        let data = r.take(dst.len() * 4, "tensor data")?;
        for (x, b) in dst.iter_mut().zip(data.chunks_exact(4)) {
            *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::ShapeMismatch(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((config, norm, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (ModelConfig, LocNorm, Params<f32>) {
        let c = ModelConfig { vocab_buckets: 32, embed_dim: 8, hidden_dim: 6, attention_dim: 4, ..Default::default() };
        let p = Params::init(&mut ChaCha8Rng::seed_from_u64(1), &c);
        let n = LocNorm { mean: (0..LOC_DIM).map(|i| i as f64 / 7.0).collect(), scale: vec![3.5; LOC_DIM] };
        (c, n, p)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (c, n, p) = small();
        let bytes = serialize(&c, &n, &p);
        let (c2, n2, p2) = deserialize(&bytes).unwrap();
        assert_eq!(c, c2);
        assert_eq!(n, n2);
        for (a, b) in p.tensors().iter().zip(p2.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(serialize(&c2, &n2, &p2), bytes);
    }

    #[test]
    fn distinct_errors() {
        let (c, n, p) = small();
        let bytes = serialize(&c, &n, &p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(deserialize(&bad), Err(Error::VersionMismatch { found: 9, expected: 1 })));
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert!(matches!(deserialize(&bytes[..cut]), Err(Error::ShapeMismatch(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize(&long), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn default_model_is_under_five_megabytes() {
        let c = ModelConfig::default();
        let p: Params<f32> = Params::zeros(&c);
        assert!(serialize(&c, &LocNorm::default(), &p).len() < 5 * 1024 * 1024);
    }
}
