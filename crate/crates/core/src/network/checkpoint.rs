//! Binary checkpoint: little-endian, `APLB` magic, version 1.
//!
//! ```text
//! magic "APLB" | version u32 | n_layers u32
//! per layer: in_dim u32 | out_dim u32 | activation u8 | leaky slope f32
//!            | weights f32 * in*out (row-major) | bias f32 * out
//!            | mask bits, LSB-first, row-major, ceil(in*out / 8) bytes
//! ```

use std::fs;
use std::path::Path;

use super::{Layer, LayerMask, LayerSpec, MlpModel, PruneMask};
use crate::error::{Error, Result};
use crate::numerics::{ActivationKind, DenseMatrix};

const MAGIC: &[u8; 4] = b"APLB";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 12;
const LAYER_HEADER_LEN: usize = 4 + 4 + 1 + 4;

/// Exact encoded size for a model of this shape.
pub fn checkpoint_len(model: &MlpModel) -> usize {
    HEADER_LEN
        + model
            .layers()
            .iter()
            .map(|l| {
                let n = l.spec.in_dim * l.spec.out_dim;
                LAYER_HEADER_LEN + 4 * n + 4 * l.spec.out_dim + n.div_ceil(8)
            })
            .sum::<usize>()
}

pub fn encode_checkpoint(model: &MlpModel, mask: &PruneMask) -> Result<Vec<u8>> {
    mask.check_congruent(model)?;
    let mut out = Vec::with_capacity(checkpoint_len(model));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for (layer, m) in model.layers().iter().zip(mask.layers()) {
        let s = layer.spec;
        out.extend_from_slice(&(s.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(s.out_dim as u32).to_le_bytes());
        out.push(s.activation.code());
        out.extend_from_slice(&s.activation.slope().to_le_bytes());
        for w in layer.weights.as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for chunk in m.bits().chunks(8) {
            let byte = chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (bit, &on)| if on { acc | (1 << bit) } else { acc });
            out.push(byte);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("layer too large"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MlpModel, PruneMask)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::new();
    let mut masks = Vec::new();
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let code = r.take(1)?[0];
        let slope = r.f32s(1)?[0];
        let activation = ActivationKind::from_code(code, slope)?;
        let spec = LayerSpec::new(in_dim, out_dim, activation).map_err(|e| Error::format(e.to_string()))?;
        let n = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| Error::format("layer dimensions overflow"))?;
        let weights = DenseMatrix::from_vec(in_dim, out_dim, r.f32s(n)?)
            .map_err(|e| Error::format(e.to_string()))?;
        let bias = r.f32s(out_dim)?;
        let packed = r.take(n.div_ceil(8))?;
        let active = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        masks.push(LayerMask::from_vec(in_dim, out_dim, active)?);
        layers.push(Layer { spec, weights, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    let model = MlpModel::new(layers).map_err(|e| Error::format(e.to_string()))?;
    Ok((model, PruneMask::from_layers(masks)))
}

pub fn save_checkpoint(model: &MlpModel, mask: &PruneMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(model, mask)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(MlpModel, PruneMask)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::default_architecture;

    fn sample() -> (MlpModel, PruneMask) {
        let specs = [
            LayerSpec::new(5, 3, ActivationKind::LeakyRelu { slope: 0.02 }).unwrap(),
            LayerSpec::new(3, 2, ActivationKind::Tanh).unwrap(),
        ];
        let mut model = MlpModel::he_uniform(&specs, 8).unwrap();
        model.layers_mut()[1].bias = vec![0.25, -1.5];
        let mut mask = PruneMask::all_active(&model);
        mask.prune(0, 4, 2);
        mask.prune(1, 0, 1);
        mask.apply(&mut model);
        (model, mask)
    }

    #[test]
    fn round_trip_is_exact() {
        let (model, mask) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &mask, &path).unwrap();
        let (m2, k2) = load_checkpoint(&path).unwrap();
        assert_eq!(k2, mask);
        for (a, b) in model.layers().iter().zip(m2.layers()) {
            assert_eq!(a.spec, b.spec);
            let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.weights), bits(&b.weights));
            assert_eq!(a.bias, b.bias);
        }
        assert_eq!(fs::read(&path).unwrap(), encode_checkpoint(&m2, &k2).unwrap());
    }

    #[test]
    fn file_size_matches_layout() {
        let (model, mask) = sample();
        // 12 + (13 + 15*4 + 3*4 + 2) + (13 + 6*4 + 2*4 + 1)
        assert_eq!(encode_checkpoint(&model, &mask).unwrap().len(), 12 + 87 + 46);
        assert_eq!(checkpoint_len(&model), 145);

        let full = MlpModel::zeros(&default_architecture(ActivationKind::Relu)).unwrap();
        let want = 12
            + (13 + 4 * 784 * 392 + 4 * 392 + 784 * 392 / 8)
            + (13 + 4 * 392 * 196 + 4 * 196 + 392 * 196 / 8)
            + (13 + 4 * 196 * 10 + 4 * 10 + 245);
        assert_eq!(encode_checkpoint(&full, &PruneMask::all_active(&full)).unwrap().len(), want);
    }

    #[test]
    fn mask_bits_are_lsb_first() {
        let (model, mask) = sample();
        let bytes = encode_checkpoint(&model, &mask).unwrap();
        // layer 0 mask: 15 bits, all set except flat index 14
        let start = 12 + 13 + 60 + 12;
        assert_eq!(bytes[start], 0xff);
        assert_eq!(bytes[start + 1], 0x3f);
    }

    #[test]
    fn rejects_corruption() {
        let (model, mask) = sample();
        let good = encode_checkpoint(&model, &mask).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

        for cut in [3, 11, 20, good.len() - 1] {
            assert!(matches!(decode_checkpoint(&good[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format(_))));

        let mut bad = good;
        bad[12 + 8] = 7;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
    }
}
