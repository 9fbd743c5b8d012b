use std::path::Path;

use serde_json::Value;

use crate::{Error, Result};

use super::Tensor;

pub const W3B_MAGIC: &[u8; 8] = b"MESHBW3B";
pub const W3B_VERSION: u32 = 1;

/// Named `f32` tensors plus a JSON architecture descriptor.
///
/// Byte layout (little endian): magic `MESHBW3B`, `u32` version, `u32`
/// descriptor length and UTF-8 JSON, `u32` tensor count, then per tensor a
/// `u32` name length and name, `u32` rank, `u64` dims and `f32` data.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub descriptor: Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl NetworkWeights {
    pub fn new(descriptor: Value, tensors: Vec<(String, Tensor<f32>)>) -> Self {
        Self { descriptor, tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::ModelMismatch(format!("weight file lacks tensor {name}")))
    }

    /// Fails unless the stored descriptor equals `expected`.
    pub fn expect_descriptor(&self, expected: &Value) -> Result<()> {
        if &self.descriptor != expected {
            return Err(Error::ModelMismatch(format!(
                "architecture {} does not match expected {}",
                self.descriptor, expected
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(W3B_MAGIC);
        out.extend_from_slice(&W3B_VERSION.to_le_bytes());
        let desc = self.descriptor.to_string();
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != W3B_MAGIC {
            return Err(Error::WeightFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != W3B_VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let dlen = r.u32()? as usize;
        let desc = std::str::from_utf8(r.take(dlen)?)
            .map_err(|_| Error::WeightFormat("descriptor is not UTF-8".into()))?;
        let descriptor: Value =
            serde_json::from_str(desc).map_err(|e| Error::WeightFormat(format!("descriptor: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::WeightFormat(format!("{name}: rank {ndim} too large")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::WeightFormat(format!("{name}: implausible shape {shape:?}")))?;
            let raw = r.take(4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { descriptor, tensors })
    }
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
            .ok_or_else(|| Error::WeightFormat("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn save_weights(path: &Path, w: &NetworkWeights) -> Result<()> {
    std::fs::write(path, w.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a `.w3b` file; with `expected`, also checks the descriptor.
pub fn load_weights(path: &Path, expected: Option<&Value>) -> Result<NetworkWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let w = NetworkWeights::from_bytes(&bytes)?;
    if let Some(e) = expected {
        w.expect_descriptor(e)?;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> NetworkWeights {
        NetworkWeights::new(
            json!({"kind": "test", "sizes": [2, 3]}),
            vec![
                ("a".into(), Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, -0.0]).unwrap()),
                ("b".into(), Tensor::new(&[0], vec![]).unwrap()),
            ],
        )
    }

    #[test]
    fn round_trip() {
        let w = sample();
        let back = NetworkWeights::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        let bits: Vec<u32> = back.tensors[0].1.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits[5], (-0.0f32).to_bits());
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 12, 20, bytes.len() - 1] {
            assert!(NetworkWeights::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NetworkWeights::from_bytes(&bad).is_err());
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(matches!(NetworkWeights::from_bytes(&ver), Err(Error::WeightFormat(_))));
        let mut long = bytes;
        long.push(0);
        assert!(NetworkWeights::from_bytes(&long).is_err());
    }

    #[test]
    fn descriptor_mismatch() {
        let w = sample();
        assert!(w.expect_descriptor(&json!({"kind": "test", "sizes": [2, 3]})).is_ok());
        assert!(matches!(w.expect_descriptor(&json!({"kind": "other"})), Err(Error::ModelMismatch(_))));
    }
}
