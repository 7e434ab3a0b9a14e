//! Portable binary array container and PGM image export.
//!
//! Layout: magic bytes `URCN1`, an 8-byte little-endian header length, a
//! UTF-8 JSON manifest describing named arrays (name, dtype, shape, byte
//! offset, byte length) plus a string metadata map, then the payload with
//! each array's raw little-endian bytes at a 16-byte-aligned offset.
//! Round trips are bitwise lossless for every dtype.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"URCN1";
const ALIGN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    Bool(Vec<bool>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::F32(_) => "f32",
            ArrayData::Bool(_) => "bool",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::Bool(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len() * 8,
            ArrayData::F32(v) => v.len() * 4,
            ArrayData::Bool(v) => v.len(),
        }
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            ArrayData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            ArrayData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
        }
    }

    fn from_bytes(dtype: &str, bytes: &[u8], path: &str) -> Result<ArrayData> {
        match dtype {
            "f64" => Ok(ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )),
            "f32" => Ok(ArrayData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )),
            "bool" => Ok(ArrayData::Bool(bytes.iter().map(|&b| b != 0).collect())),
            other => Err(Error::Format {
                path: path.into(),
                reason: format!("unknown dtype {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len_bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: BTreeMap<String, String>,
    arrays: Vec<HeaderEntry>,
}

/// In-memory container of named arrays plus a string metadata map.
#[derive(Debug, Clone, Default)]
pub struct DatasetContainer {
    pub meta: BTreeMap<String, String>,
    arrays: Vec<NamedArray>,
}

impl DatasetContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(|s| s.as_str())
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.meta.get(key).and_then(|s| s.parse().ok())
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "array {name:?}: shape {shape:?} vs {} elements",
                data.len()
            )));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(Error::Consistency(format!("duplicate array name {name:?}")));
        }
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.push(name, t.shape.clone(), ArrayData::F64(t.data.clone()))
    }

    pub fn push_bool(&mut self, name: &str, shape: Vec<usize>, data: Vec<bool>) -> Result<()> {
        self.push(name, shape, ArrayData::Bool(data))
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let a = self
            .get(name)
            .ok_or_else(|| Error::Consistency(format!("container has no array {name:?}")))?;
        match &a.data {
            ArrayData::F64(v) => Tensor::new(a.shape.clone(), v.clone()),
            ArrayData::F32(v) => {
                Tensor::new(a.shape.clone(), v.iter().map(|&x| x as f64).collect())
            }
            ArrayData::Bool(_) => Err(Error::Consistency(format!(
                "array {name:?} is boolean, not numeric"
            ))),
        }
    }

    pub fn bool_array(&self, name: &str) -> Result<(&[usize], &[bool])> {
        let a = self
            .get(name)
            .ok_or_else(|| Error::Consistency(format!("container has no array {name:?}")))?;
        match &a.data {
            ArrayData::Bool(v) => Ok((&a.shape, v)),
            _ => Err(Error::Consistency(format!("array {name:?} is not boolean"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0usize;
        for a in &self.arrays {
            offset = align_up(offset);
            entries.push(HeaderEntry {
                name: a.name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset: offset as u64,
                len_bytes: a.data.byte_len() as u64,
            });
            offset += a.data.byte_len();
        }
        let header = Header {
            meta: self.meta.clone(),
            arrays: entries,
        };
        let header_json = serde_json::to_vec(&header).map_err(|e| Error::Format {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        let payload_start = align_up(out.len());
        out.resize(payload_start, 0);
        for a in &self.arrays {
            let aligned = align_up(out.len() - payload_start) + payload_start;
            out.resize(aligned, 0);
            a.data.write_bytes(&mut out);
        }
        Ok(out)
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..5] != MAGIC {
            return Err(Error::Format {
                path: path.into(),
                reason: "missing URCN1 magic".into(),
            });
        }
        let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let header_end = 13 + header_len;
        if bytes.len() < header_end {
            return Err(Error::Format {
                path: path.into(),
                reason: "truncated header".into(),
            });
        }
        let header: Header =
            serde_json::from_slice(&bytes[13..header_end]).map_err(|e| Error::Format {
                path: path.into(),
                reason: format!("bad header json: {e}"),
            })?;
        let payload = &bytes[align_up(header_end)..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let start = e.offset as usize;
            let end = start + e.len_bytes as usize;
            if end > payload.len() {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("array {:?} extends past payload", e.name),
                });
            }
            let data = ArrayData::from_bytes(&e.dtype, &payload[start..end], path)?;
            let n: usize = e.shape.iter().product();
            if n != data.len() {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("array {:?} shape/length mismatch", e.name),
                });
            }
            arrays.push(NamedArray {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(DatasetContainer {
            meta: header.meta,
            arrays,
        })
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Export an image as an 8-bit binary PGM, scaled so the maximum magnitude
/// maps to 255. Multi-channel images are reduced to the per-pixel channel
/// magnitude first.
pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if image.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "pgm export expects [H,W,C], got {:?}",
            image.shape
        )));
    }
    let (h, w, c) = (image.shape[0], image.shape[1], image.shape[2]);
    let mag: Vec<f64> = (0..h * w)
        .map(|p| {
            (0..c)
                .map(|ch| image.data[p * c + ch].powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let peak = mag.iter().fold(0.0f64, |m, &v| m.max(v));
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let mut out = Vec::with_capacity(32 + h * w);
    write!(&mut out, "P5\n{w} {h}\n255\n").unwrap();
    out.extend(mag.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8));
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut c = DatasetContainer::new();
        c.set_meta("kind", "test");
        c.push(
            "a",
            vec![2, 3],
            ArrayData::F64(vec![1.0, -2.5, f64::MIN_POSITIVE, 0.0, 1e300, -0.0]),
        )
        .unwrap();
        c.push("b", vec![4], ArrayData::Bool(vec![true, false, false, true]))
            .unwrap();
        c.push("c", vec![2], ArrayData::F32(vec![0.5f32, -3.25]))
            .unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = DatasetContainer::from_bytes(&bytes, "<test>").unwrap();
        assert_eq!(back.meta_str("kind"), Some("test"));
        for (orig, rt) in c.arrays().iter().zip(back.arrays().iter()) {
            assert_eq!(orig.name, rt.name);
            assert_eq!(orig.shape, rt.shape);
            assert_eq!(orig.data, rt.data);
        }
        // byte-level determinism
        assert_eq!(bytes, back.to_bytes().unwrap());
    }

    #[test]
    fn rejects_duplicates_and_bad_shapes() {
        let mut c = DatasetContainer::new();
        c.push("a", vec![2], ArrayData::F64(vec![1.0, 2.0])).unwrap();
        assert!(c.push("a", vec![1], ArrayData::F64(vec![3.0])).is_err());
        assert!(c.push("b", vec![3], ArrayData::F64(vec![1.0])).is_err());
    }

    #[test]
    fn rejects_corrupt_magic() {
        assert!(DatasetContainer::from_bytes(b"JUNK1\0\0\0\0\0\0\0\0", "<t>").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Bitwise round trip over arbitrary contents, including NaN bit
        /// patterns and subnormals.
        #[test]
        fn roundtrip_arbitrary_f64(bits in proptest::collection::vec(any::<u64>(), 1..64)) {
            let data: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let mut c = DatasetContainer::new();
            c.push("x", vec![data.len()], ArrayData::F64(data.clone())).unwrap();
            let back = DatasetContainer::from_bytes(&c.to_bytes().unwrap(), "<t>").unwrap();
            match &back.get("x").unwrap().data {
                ArrayData::F64(v) => {
                    for (a, b) in data.iter().zip(v.iter()) {
                        prop_assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
                _ => prop_assert!(false),
            }
        }
    }

    #[test]
    fn pgm_has_correct_header_and_peak() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut t = Tensor::zeros(&[2, 3, 1]);
        t.data[4] = 2.0;
        write_pgm(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes[bytes.len() - 2], 255); // the peak pixel
    }
}
