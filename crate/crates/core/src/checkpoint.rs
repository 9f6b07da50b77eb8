//! Checkpoint container shared by language models and detectors.
//!
//! Layout: a UTF-8 text header of `key=value` lines, one `tensor=<name> <shape>`
//! line per blob, a terminating `end` line, then each tensor's values as
//! 32-bit little-endian floats in declaration order.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::sha256_hex;

pub const MAGIC: &str = "rndlm-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    header: Vec<(String, String)>,
    tensors: Vec<(String, Tensor)>,
}

fn shape_string(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| d.parse().map_err(|_| Error::data(format!("bad tensor shape {s:?}"))))
        .collect()
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            header: vec![
                ("format".into(), FORMAT_VERSION.to_string()),
                ("kind".into(), kind.to_string()),
            ],
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(!key.contains(['=', '\n']) && !value.contains('\n'));
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::data(format!("checkpoint header is missing {key}")))
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::data(format!("checkpoint header {key}={raw} is malformed")))
    }

    pub fn kind(&self) -> &str {
        self.get("kind").unwrap_or("")
    }

    pub fn push_tensor(&mut self, name: &str, tensor: Tensor) {
        assert!(!name.contains(char::is_whitespace));
        self.tensors.push((name.to_string(), tensor));
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    /// Takes the tensor `name`, checking it has the `expected` shape.
    pub fn tensor(&self, name: &str, expected: &[usize]) -> Result<Tensor> {
        let (_, t) = self
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::data(format!("checkpoint has no tensor {name}")))?;
        if t.shape() != expected {
            return Err(Error::Mismatch {
                what: "tensor shape",
                expected: format!("{name} {}", shape_string(expected)),
                found: shape_string(t.shape()),
            });
        }
        Ok(t.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = format!("{MAGIC}\n");
        for (k, v) in &self.header {
            text.push_str(&format!("{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            text.push_str(&format!("tensor={name} {}\n", shape_string(t.shape())));
        }
        text.push_str("end\n");
        let mut bytes = text.into_bytes();
        for (_, t) in &self.tensors {
            for v in t.data() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::data("truncated checkpoint header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| Error::data("checkpoint header is not UTF-8"))
        };
        if next_line()? != MAGIC {
            return Err(Error::data("not a checkpoint file"));
        }
        let mut header = Vec::new();
        let mut decls = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(format!("bad checkpoint header line {line:?}")))?;
            if k == "tensor" {
                let (name, shape) = v
                    .split_once(' ')
                    .ok_or_else(|| Error::data(format!("bad tensor declaration {v:?}")))?;
                decls.push((name.to_string(), parse_shape(shape)?));
            } else {
                header.push((k.to_string(), v.to_string()));
            }
        }
        let mut tensors = Vec::with_capacity(decls.len());
        for (name, shape) in decls {
            let n: usize = shape.iter().product();
            let need = n * 4;
            if bytes.len() < pos + need {
                return Err(Error::data(format!("checkpoint truncated inside tensor {name}")));
            }
            let data = bytes[pos..pos + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            pos += need;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if pos != bytes.len() {
            return Err(Error::data("trailing bytes after the last tensor"));
        }
        let ckpt = Checkpoint { header, tensors };
        let version: u32 = ckpt.get_parsed("format")?;
        if version != FORMAT_VERSION {
            return Err(Error::data(format!("unsupported checkpoint format {version}")));
        }
        Ok(ckpt)
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let mut c = Checkpoint::new("lm");
        c.set("d", 3);
        c.push_tensor("w", Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, 1e-3, 7.0]).unwrap());
        c.push_tensor("s", Tensor::scalar(2.5));
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.get("d").unwrap(), "3");
        assert_eq!(back.kind(), "lm");
        let w = back.tensor("w", &[2, 3]).unwrap();
        assert_eq!(w.data()[0], 0.1f32 as f64);
        assert!(back.tensor("w", &[3, 2]).is_err());
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn truncated_blob_rejected() {
        let mut c = Checkpoint::new("lm");
        c.push_tensor("w", Tensor::vector(vec![1.0, 2.0]));
        let mut bytes = c.to_bytes();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
