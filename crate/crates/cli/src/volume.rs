//! `VRG1` volume files: magic, `u32` LE dimensions, scalar kind, component
//! count, then the components back to back in row-major little-endian order.

use std::fs;
use std::path::Path;

use diffreg::{Grid3, Real, ScalarField, VectorField};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"VRG1";
const HEADER_LEN: usize = 4 + 12 + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    F32,
    F64,
}

impl ScalarKind {
    pub fn size(self) -> usize {
        match self {
            ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    fn code(self) -> u8 {
        match self {
            ScalarKind::F32 => 0,
            ScalarKind::F64 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub dims: [usize; 3],
    pub components: usize,
    pub payload: Payload,
}

impl VolumeFile {
    pub fn kind(&self) -> ScalarKind {
        match self.payload {
            Payload::F32(_) => ScalarKind::F32,
            Payload::F64(_) => ScalarKind::F64,
        }
    }

    fn from_values(dims: [usize; 3], components: usize, values: &[Real], kind: ScalarKind) -> Self {
        let payload = match kind {
            ScalarKind::F32 => Payload::F32(values.iter().map(|&x| x as f32).collect()),
            ScalarKind::F64 => Payload::F64(values.iter().map(|&x| x as f64).collect()),
        };
        Self {
            dims,
            components,
            payload,
        }
    }

    pub fn from_scalar(f: &ScalarField, kind: ScalarKind) -> Self {
        Self::from_values(f.grid().dims(), 1, f.values(), kind)
    }

    pub fn from_vector(v: &VectorField, kind: ScalarKind) -> Self {
        let values: Vec<Real> = v
            .comps()
            .iter()
            .flat_map(|c| c.values().iter().copied())
            .collect();
        Self::from_values(v.grid().dims(), 3, &values, kind)
    }

    fn values(&self) -> Vec<Real> {
        match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as Real).collect(),
            Payload::F64(v) => v.iter().map(|&x| x as Real).collect(),
        }
    }

    fn grid(&self, nt: usize) -> CliResult<Grid3> {
        let [a, b, c] = self.dims;
        Grid3::new(a, b, c, nt).map_err(CliError::from)
    }

    pub fn to_scalar(&self, nt: usize) -> CliResult<ScalarField> {
        if self.components != 1 {
            return Err(CliError::Config(format!(
                "expected a scalar volume, found {} components",
                self.components
            )));
        }
        Ok(ScalarField::from_vec(self.grid(nt)?, self.values())?)
    }

    pub fn to_vector(&self, nt: usize) -> CliResult<VectorField> {
        if self.components != 3 {
            return Err(CliError::Config(format!(
                "expected a vector volume, found {} components",
                self.components
            )));
        }
        let g = self.grid(nt)?;
        let values = self.values();
        let n = g.len();
        let comp = |d: usize| ScalarField::from_vec(g, values[d * n..(d + 1) * n].to_vec());
        Ok(VectorField::from_components([
            comp(0)?,
            comp(1)?,
            comp(2)?,
        ])?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n: usize = self.dims.iter().product::<usize>() * self.components;
        let mut out = Vec::with_capacity(HEADER_LEN + n * self.kind().size());
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.kind().code());
        out.push(self.components as u8);
        match &self.payload {
            Payload::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: String| CliError::Io(format!("malformed volume file: {m}"));
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(format!("bad magic {:?}", &bytes[..4])));
        }
        let dim = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        let dims = [dim(0), dim(1), dim(2)];
        let kind = match bytes[16] {
            0 => ScalarKind::F32,
            1 => ScalarKind::F64,
            k => return Err(bad(format!("unknown scalar kind {k}"))),
        };
        let components = bytes[17] as usize;
        if components != 1 && components != 3 {
            return Err(bad(format!("component count {components} is not 1 or 3")));
        }
        let n = dims.iter().product::<usize>() * components;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n * kind.size() {
            return Err(bad(format!(
                "payload has {} bytes, header implies {}",
                body.len(),
                n * kind.size()
            )));
        }
        let payload = match kind {
            ScalarKind::F32 => Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            ScalarKind::F64 => Payload::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        Ok(Self {
            dims,
            components,
            payload,
        })
    }

    /// Writes the file, creating missing parent directories.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        fs::write(path, self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
