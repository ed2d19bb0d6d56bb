//! Binary model files.
//!
//! Layout: a 16-byte header (`BBOX`, version `u32`, kind `u32`, classes
//! `u32`, all little-endian) followed by a flat little-endian `f32` payload.
//! The payload starts with the input shape `C, H, W` (and the hidden width
//! for MLPs) stored as floats, then the parameters in row-major order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{LinearModel, MlpModel, ModelOracle};
use crate::tensor::{ImageTensor, LogitsVector, Shape};

pub const MODEL_MAGIC: [u8; 4] = *b"BBOX";
pub const MODEL_VERSION: u32 = 1;
const KIND_LINEAR: u32 = 1;
const KIND_MLP: u32 = 2;

/// A model as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl StoredModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, classes, shape, head, params) = match self {
            StoredModel::Linear(m) => {
                let params = [m.weights(), m.bias()].concat();
                (KIND_LINEAR, m.classes(), m.input_shape(), vec![], params)
            }
            StoredModel::Mlp(m) => {
                (KIND_MLP, m.classes(), m.input_shape(), vec![m.hidden() as f64], m.params())
            }
        };
        let mut out = Vec::with_capacity(16 + 4 * (3 + head.len() + params.len()));
        out.extend_from_slice(&MODEL_MAGIC);
        for v in [MODEL_VERSION, kind, classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let dims = [shape.channels as f64, shape.height as f64, shape.width as f64];
        for v in dims.iter().chain(&head).chain(&params) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::ModelFormat("file shorter than the 16-byte header".into()));
        }
        if bytes[..4] != MODEL_MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let (version, kind, classes) = (word(4), word(8), word(12) as usize);
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let body = &bytes[16..];
        if !body.len().is_multiple_of(4) {
            return Err(Error::ModelFormat("payload is not a whole number of f32".into()));
        }
        let floats: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let mut cursor = Cursor { floats: &floats };
        let shape = Shape::new(cursor.dim()?, cursor.dim()?, cursor.dim()?);
        let model = match kind {
            KIND_LINEAR => {
                let weights = cursor.take(classes * shape.len())?.to_vec();
                let bias = cursor.take(classes)?.to_vec();
                StoredModel::Linear(LinearModel::new(shape, classes, weights, bias)?)
            }
            KIND_MLP => {
                let hidden = cursor.dim()?;
                let count = hidden * shape.len() + hidden + classes * hidden + classes;
                let params = cursor.take(count)?;
                StoredModel::Mlp(MlpModel::from_parts(shape, hidden, classes, params)?)
            }
            other => return Err(Error::ModelFormat(format!("unknown model kind {other}"))),
        };
        if !cursor.floats.is_empty() {
            return Err(Error::ModelFormat(format!("{} trailing values", cursor.floats.len())));
        }
        Ok(model)
    }
}

struct Cursor<'a> {
    floats: &'a [f64],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.floats.len() < n {
            return Err(Error::ModelFormat(format!(
                "payload truncated: need {n} more values, have {}",
                self.floats.len()
            )));
        }
        let (head, tail) = self.floats.split_at(n);
        self.floats = tail;
        Ok(head)
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.take(1)?[0];
        if v < 1.0 || v.fract() != 0.0 || v > 16_777_216.0 {
            return Err(Error::ModelFormat(format!("bad dimension {v}")));
        }
        Ok(v as usize)
    }
}

impl From<LinearModel> for StoredModel {
    fn from(m: LinearModel) -> Self {
        StoredModel::Linear(m)
    }
}

impl From<MlpModel> for StoredModel {
    fn from(m: MlpModel) -> Self {
        StoredModel::Mlp(m)
    }
}

impl ModelOracle for StoredModel {
    fn input_shape(&self) -> Shape {
        match self {
            StoredModel::Linear(m) => m.input_shape(),
            StoredModel::Mlp(m) => m.input_shape(),
        }
    }

    fn classes(&self) -> usize {
        match self {
            StoredModel::Linear(m) => m.classes(),
            StoredModel::Mlp(m) => m.classes(),
        }
    }

    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        match self {
            StoredModel::Linear(m) => m.logits(x),
            StoredModel::Mlp(m) => m.logits(x),
        }
    }
}

pub fn write_model<W: Write>(model: &StoredModel, mut out: W) -> Result<()> {
    out.write_all(&model.to_bytes())?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<StoredModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    StoredModel::from_bytes(&bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<StoredModel> {
    StoredModel::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let m = LinearModel::new(Shape::new(1, 1, 2), 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -0.5]).unwrap();
        let bytes = StoredModel::from(m).to_bytes();
        assert_eq!(&bytes[..4], b"BBOX");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 4 * (3 + 4 + 2));
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &(-0.5f32).to_le_bytes());
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = LinearModel::new(Shape::new(1, 1, 2), 2, vec![0.0; 4], vec![0.0; 2]).unwrap();
        let good = StoredModel::from(m).to_bytes();
        assert!(StoredModel::from_bytes(&good[..10]).is_err());
        assert!(StoredModel::from_bytes(&good[..good.len() - 4]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(StoredModel::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(StoredModel::from_bytes(&bad).is_err());
        let mut long = good;
        long.extend_from_slice(&[0; 4]);
        assert!(StoredModel::from_bytes(&long).is_err());
    }

    proptest! {
        #[test]
        fn mlp_bytes_round_trip(seed in any::<u64>(), hidden in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = MlpModel::init(Shape::new(2, 3, 2), hidden, 3, &mut rng).unwrap();
            let bytes = StoredModel::from(m).to_bytes();
            let back = StoredModel::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            let again = StoredModel::from_bytes(&back.to_bytes()).unwrap();
            prop_assert_eq!(again, back);
        }
    }
}
