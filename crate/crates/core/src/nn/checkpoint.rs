//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "DSIMCKPT"
//! major      u16      readers reject other majors
//! minor      u16      readers accept any minor of their major
//! kind       u32 length + UTF-8      model kind, e.g. "detector"
//! config     u32 length + UTF-8      key = value lines echoing the config
//! count      u32
//! count × { name: u32 length + UTF-8, ndim: u32, dims: ndim × u32,
//!           data: prod(dims) × f32 }
//! ```
//!
//! Arrays unknown to the reader are ignored, so newer minors may add arrays.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Param, Real};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DSIMCKPT";
pub const MAJOR: u16 = 1;
pub const MINOR: u16 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: String,
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(kind: &str, config: &str, params: &[&Param<T>]) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            config: config.to_string(),
            arrays: params
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        (
                            p.shape.clone(),
                            p.value.iter().map(|v| v.to_f32().unwrap()).collect(),
                        ),
                    )
                })
                .collect(),
        }
    }

    /// Copy stored arrays into `params`, matching by name and shape.
    pub fn load_into<T: Real>(&self, params: Vec<&mut Param<T>>) -> Result<()> {
        for p in params {
            let (shape, data) = self.arrays.get(&p.name).ok_or_else(|| {
                Error::MissingCheckpoint(format!("array {} not in {} checkpoint", p.name, self.kind))
            })?;
            if shape != &p.shape {
                return Err(Error::invalid(format!(
                    "array {} has shape {:?}, model expects {:?}",
                    p.name, shape, p.shape
                )));
            }
            p.value = data.iter().map(|&v| T::lit(v as f64)).collect();
        }
        Ok(())
    }

    /// Value of `key` in the config echo.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.lines().find_map(|line| {
            let (k, v) = line.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MAJOR.to_le_bytes());
        out.extend_from_slice(&MINOR.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = bytes;
        let bad = |reason: &str| Error::format(origin, reason);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let major = read_u16(&mut r).ok_or_else(|| bad("truncated header"))?;
        let _minor = read_u16(&mut r).ok_or_else(|| bad("truncated header"))?;
        if major != MAJOR {
            return Err(bad(&format!("unsupported major version {major}")));
        }
        let kind = read_str(&mut r).ok_or_else(|| bad("truncated kind"))?;
        let config = read_str(&mut r).ok_or_else(|| bad("truncated config"))?;
        let count = read_u32(&mut r).ok_or_else(|| bad("truncated array count"))?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name = read_str(&mut r).ok_or_else(|| bad("truncated array name"))?;
            let ndim = read_u32(&mut r).ok_or_else(|| bad("truncated array rank"))? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("truncated array shape"))?;
            let len: usize = shape.iter().product();
            if r.len() < len * 4 {
                return Err(bad(&format!("array {name} truncated")));
            }
            let data = r[..len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            r = &r[len * 4..];
            arrays.insert(name, (shape, data));
        }
        Ok(Checkpoint { kind, config, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingCheckpoint(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_u16(r: &mut &[u8]) -> Option<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).ok()?;
    Some(u16::from_le_bytes(b))
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn read_str(r: &mut &[u8]) -> Option<String> {
    let len = read_u32(r)? as usize;
    if r.len() < len {
        return None;
    }
    let s = String::from_utf8(r[..len].to_vec()).ok()?;
    *r = &r[len..];
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let mut p = Param::<f32>::zeros("layer.weight", vec![2, 3]);
        p.value = vec![1.0, -2.0, 3.5, 0.0, 1e-3, 7.0];
        let ck = Checkpoint::from_params("detector", "head = fc\npatch_size = 32", &[&p]);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.config_value("head"), Some("fc"));

        let mut q = Param::<f64>::zeros("layer.weight", vec![2, 3]);
        back.load_into(vec![&mut q]).unwrap();
        assert_eq!(q.value[2], 3.5);

        let mut wrong = Param::<f64>::zeros("layer.weight", vec![3, 2]);
        assert!(back.load_into(vec![&mut wrong]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT", Path::new("x")).is_err());
    }
}
