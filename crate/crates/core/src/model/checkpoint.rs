//! Binary checkpoint format, little-endian:
//!
//! ```text
//! "CXRF" | version u32 | header_len u64 | header (JSON) |
//! { blob_len u64 | weights ++ bias }  one per parameterized layer, in layer order
//! | crc32 of everything before it
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"CXRF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    classes: Vec<String>,
    element_width: usize,
}

pub fn checkpoint_to_bytes<T: Scalar>(model: &ModelGraph<T>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        layers: model.layers.clone(),
        input_shape: model.input_shape,
        classes: model.classes.clone(),
        element_width: T::WIDTH,
    })?;
    let mut out = Vec::with_capacity(header.len() + model.count_parameters() * T::WIDTH + 64);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for pair in model.params.chunks(2) {
        let len: usize = pair.iter().map(|p| p.value.len() * T::WIDTH).sum();
        out.extend_from_slice(&(len as u64).to_le_bytes());
        for p in pair {
            for &x in p.value.data() {
                x.write_le(&mut out);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "{what} needs {n} bytes at offset {}, file has {}",
                    self.at,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Truncated(format!("{what} length {v} overflows")))
    }
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelGraph<T>> {
    let mut r = Reader { bytes, at: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = r.u64("header length")?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)?;
    if header.element_width != T::WIDTH {
        return Err(Error::ElementWidth {
            found: header.element_width,
            expected: T::WIDTH,
        });
    }
    // Build once to learn the expected parameter shapes.
    let template = ModelGraph::<T>::build(
        header.layers.clone(),
        header.input_shape,
        header.classes.clone(),
        0,
    )?;
    let mut values = Vec::with_capacity(template.params.len());
    for pair in template.params.chunks(2) {
        let len = r.u64("blob length")?;
        let want: usize = pair.iter().map(|p| p.value.len() * T::WIDTH).sum();
        let blob = r.take(len, "parameter blob")?;
        if len != want {
            return Err(Error::ParameterMismatch(format!(
                "layer blob for `{}` holds {len} bytes, spec needs {want}",
                pair[0].name
            )));
        }
        let mut at = 0;
        for p in pair {
            let n = p.value.len() * T::WIDTH;
            let data = blob[at..at + n].chunks(T::WIDTH).map(T::read_le).collect();
            values.push(Tensor::new(p.value.shape(), data)?);
            at += n;
        }
    }
    let body_end = r.at;
    let stored = r.u32("checksum")?;
    if r.at != bytes.len() {
        return Err(Error::ParameterMismatch(format!(
            "{} unexpected trailing bytes",
            bytes.len() - r.at
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    ModelGraph::from_parameters(header.layers, header.input_shape, header.classes, values)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelGraph<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
