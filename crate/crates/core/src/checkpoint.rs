//! Named-tensor store persisted as a text manifest plus a binary blob.
//!
//! `manifest.txt` holds one record per line:
//!
//! ```text
//! meta<TAB><key><TAB><value>
//! tensor<TAB><name><TAB><d0>x<d1>...<TAB><byte offset>
//! ```
//!
//! `tensors.bin` holds every tensor as little-endian `f32` in row-major order
//! at the recorded offsets. Records are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Array;

pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "tensors.bin";
const HEADER: &str = "# recorrect checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Array<f32>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Result<&Array<f32>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Fetches `name` and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Array<f32>> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Array<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn to_bytes(&self) -> (String, Vec<u8>) {
        let mut manifest = format!("{HEADER}\n");
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta\t{k}\t{v}\n"));
        }
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor\t{name}\t{}\t{}\n", dims.join("x"), blob.len()));
            for &x in t.data() {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        }
        (manifest, blob)
    }

    pub fn from_bytes(manifest: &str, blob: &[u8]) -> Result<Self> {
        let what = "checkpoint manifest";
        let mut lines = manifest.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(HEADER) {
            return Err(Error::parse(what, 1, "missing header"));
        }
        let mut ck = Checkpoint::new();
        for (i, line) in lines {
            let n = i + 1;
            let f: Vec<&str> = line.split('\t').collect();
            match f.first().copied() {
                Some("meta") if f.len() == 3 => {
                    ck.meta.insert(f[1].to_string(), f[2].to_string());
                }
                Some("tensor") if f.len() == 4 => {
                    let shape = f[2]
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::parse(what, n, "bad shape"))?;
                    let offset: usize = f[3].parse().map_err(|_| Error::parse(what, n, "bad offset"))?;
                    let count: usize = shape.iter().product();
                    let end = offset + 4 * count;
                    if end > blob.len() {
                        return Err(Error::parse(what, n, format!("tensor `{}` runs past the blob", f[1])));
                    }
                    let data = blob[offset..end]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    let t = Array::new(&shape, data).map_err(|e| Error::parse(what, n, e.to_string()))?;
                    ck.tensors.insert(f[1].to_string(), t);
                }
                Some("") | None => {}
                _ => return Err(Error::parse(what, n, "unrecognized record")),
            }
        }
        Ok(ck)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.to_bytes();
        let mp = dir.join(MANIFEST);
        std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB);
        std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST);
        let manifest = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB);
        let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}
