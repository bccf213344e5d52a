//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `SSCK`, `u32` version, `u32` length and
//! UTF-8 text of the architecture echo, `u32` tensor count, then per tensor
//! `u32` name length, name, `u32` rank, `u64` dims, `f64` data.

use std::io::{Read, Write};

use super::model::{ModelConfig, PoseModel};
use crate::error::{Error, Result};

pub const SSCK_MAGIC: &[u8; 4] = b"SSCK";
pub const SSCK_VERSION: u32 = 1;

/// A named tensor as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Architecture text of the saved model.
    pub echo: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &PoseModel) -> Self {
        let params = model.params();
        let mut tensors = Vec::new();
        let mut at = 0;
        for (name, n) in model.param_blocks() {
            tensors.push(NamedTensor {
                name: format!("param.{name}"),
                shape: vec![n as u64],
                data: params[at..at + n].to_vec(),
            });
            at += n;
        }
        for (name, data) in model.buffers() {
            tensors.push(NamedTensor {
                name: format!("buffer.{name}"),
                shape: vec![data.len() as u64],
                data,
            });
        }
        Checkpoint {
            echo: model.architecture(),
            tensors,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SSCK_MAGIC)?;
        w.write_all(&SSCK_VERSION.to_le_bytes())?;
        write_bytes(w, self.echo.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            write_bytes(w, t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != SSCK_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != SSCK_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let echo = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("architecture text is not UTF-8".into()))?;
        let count = read_u32(r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = read_u32(r)?;
            let mut shape = Vec::new();
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(r, &mut b)?;
                shape.push(u64::from_le_bytes(b));
            }
            let n: u64 = shape.iter().product();
            if n > (1 << 32) {
                return Err(Error::Format(format!("tensor {name} is implausibly large")));
            }
            let mut data = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint { echo, tensors })
    }

    /// Architecture recorded in the echo.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut lines = self.echo.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().unwrap_or_default();
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("checkpoint echo: expected {key}=, got '{line}'")))
        };
        let grid = field("grid")?.parse().map_err(|_| Error::Format("checkpoint echo: bad grid".into()))?;
        let hidden = field("hidden")?.parse().map_err(|_| Error::Format("checkpoint echo: bad hidden".into()))?;
        field("voxel_size")?;
        let backbone: Vec<&str> = lines.collect();
        Ok(ModelConfig {
            grid,
            hidden,
            backbone: backbone.join("\n"),
        })
    }

    /// Rebuilds the saved model. With `expected`, the checkpoint must have
    /// been written by a model of that architecture.
    pub fn into_model(self, expected: Option<&ModelConfig>) -> Result<PoseModel> {
        let config = match expected {
            Some(c) => c.clone(),
            None => self.model_config()?,
        };
        let mut model = PoseModel::new(config, 0)?;
        if model.architecture() != self.echo {
            return Err(Error::Format(format!(
                "checkpoint architecture does not match config:\n--- checkpoint\n{}--- config\n{}",
                self.echo,
                model.architecture()
            )));
        }
        let mut params = Vec::with_capacity(model.num_params());
        for (name, n) in model.param_blocks() {
            let t = self.tensor(&format!("param.{name}"))?;
            if t.data.len() != n {
                return Err(Error::Format(format!("param.{name}: expected {n} values, found {}", t.data.len())));
            }
            params.extend(&t.data);
        }
        model.set_params(&params)?;
        for (name, _) in model.buffers() {
            let t = self.tensor(&format!("buffer.{name}"))?;
            model.set_buffer(&name, &t.data)?;
        }
        Ok(model)
    }

    fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("checkpoint is truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Format("string field is implausibly long".into()));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    Ok(b)
}
