//! Versioned flat parameter checkpoint.
//!
//! Layout: an ASCII header naming each entry (role + shape), a line `end`,
//! then little-endian 64-bit floats in declared order. Round-trips are
//! bit-exact.

use crate::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &str = "numkit-ckpt 1";

#[derive(Clone, Debug, PartialEq)]
pub enum CkptShape {
    /// MLP parameters; dims are layer sizes.
    Mlp(Vec<usize>),
    /// Flat vector of the given length.
    Vector(usize),
}

impl CkptShape {
    pub fn value_count(&self) -> usize {
        match self {
            CkptShape::Mlp(sizes) => sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum(),
            CkptShape::Vector(n) => *n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkptEntry {
    pub role: String,
    pub shape: CkptShape,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CkptEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_mlp(&mut self, role: &str, sizes: &[usize], data: Vec<f64>) -> Result<()> {
        let shape = CkptShape::Mlp(sizes.to_vec());
        self.push(role, shape, data)
    }

    pub fn push_vec(&mut self, role: &str, data: Vec<f64>) -> Result<()> {
        let shape = CkptShape::Vector(data.len());
        self.push(role, shape, data)
    }

    fn push(&mut self, role: &str, shape: CkptShape, data: Vec<f64>) -> Result<()> {
        if role.is_empty() || role.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("bad checkpoint role {role:?}")));
        }
        if data.len() != shape.value_count() {
            return Err(Error::DimMismatch(format!(
                "checkpoint entry {role}: shape wants {} values, got {}",
                shape.value_count(),
                data.len()
            )));
        }
        self.entries.push(CkptEntry { role: role.to_string(), shape, data });
        Ok(())
    }

    pub fn entry(&self, role: &str) -> Option<&CkptEntry> {
        self.entries.iter().find(|e| e.role == role)
    }

    pub fn require(&self, role: &str) -> Result<&CkptEntry> {
        self.entry(role)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {role}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "{}", self.entries.len())?;
        for e in &self.entries {
            match &e.shape {
                CkptShape::Mlp(sizes) => {
                    let dims: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
                    writeln!(w, "mlp {} {}", e.role, dims.join(" "))?;
                }
                CkptShape::Vector(n) => writeln!(w, "vec {} {n}", e.role)?,
            }
        }
        writeln!(w, "end")?;
        for e in &self.entries {
            for v in &e.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {:?}", line.trim_end())));
        }
        line.clear();
        r.read_line(&mut line)?;
        let n: usize = line
            .trim()
            .parse()
            .map_err(|_| Error::Checkpoint("bad entry count".into()))?;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            line.clear();
            r.read_line(&mut line)?;
            let mut parts = line.split_whitespace();
            let kind = parts.next().ok_or_else(|| Error::Checkpoint("short entry line".into()))?;
            let role = parts
                .next()
                .ok_or_else(|| Error::Checkpoint("entry missing role".into()))?
                .to_string();
            let dims: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("bad dim in {role}"))))
                .collect::<Result<_>>()?;
            let shape = match kind {
                "mlp" => {
                    if dims.len() < 2 {
                        return Err(Error::Checkpoint(format!("mlp entry {role} needs >=2 dims")));
                    }
                    CkptShape::Mlp(dims)
                }
                "vec" => {
                    if dims.len() != 1 {
                        return Err(Error::Checkpoint(format!("vec entry {role} needs 1 dim")));
                    }
                    CkptShape::Vector(dims[0])
                }
                _ => return Err(Error::Checkpoint(format!("unknown entry kind {kind}"))),
            };
            shapes.push((role, shape));
        }
        line.clear();
        r.read_line(&mut line)?;
        if line.trim_end() != "end" {
            return Err(Error::Checkpoint("missing header terminator".into()));
        }
        let mut ckpt = Checkpoint::new();
        for (role, shape) in shapes {
            let count = shape.value_count();
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for {role}")))?;
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ckpt.entries.push(CkptEntry { role, shape, data });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{derive_rng, Mlp};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = derive_rng(11, "ckpt");
        let net = Mlp::new(&[4, 8, 2], 0.01, &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        ck.push_mlp("policy.mean", net.sizes(), net.params().to_vec()).unwrap();
        ck.push_vec("policy.log_std", vec![-0.5, f64::MIN_POSITIVE, -0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
        let e = back.require("policy.mean").unwrap();
        assert_eq!(e.shape, CkptShape::Mlp(vec![4, 8, 2]));
        let restored = Mlp::from_params(&[4, 8, 2], e.data.clone()).unwrap();
        assert_eq!(restored.params(), net.params());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ck = Checkpoint::new();
        assert!(ck.push_mlp("x", &[2, 2], vec![0.0; 3]).is_err());
        assert!(ck.push_vec("bad role", vec![1.0]).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            Checkpoint::load(Path::new("/nonexistent/x.ckpt")),
            Err(Error::Io(_))
        ));
    }
}
