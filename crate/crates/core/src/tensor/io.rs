//! SSTF binary sparse-tensor files and ASCII point clouds.
//!
//! SSTF layout (little-endian):
//!
//! ```text
//! "SSTF" | u32 version | u32 K | u32 num_sites | u32×3 extent
//! | f64 voxel_size | f64×3 origin | num_sites × (i32×3 site, f64×K feature)
//! ```
//!
//! The header carries the channel count only, not the irreducible orders;
//! [`deserialize`] yields scalar channels and [`deserialize_with_field`]
//! re-attaches a known field type.

use std::fmt::Write as _;

use nalgebra::Vector3;
use ndarray::Array2;

use super::{Grid, PointCloud, Site, SparseTensor};
use crate::error::{Error, Result};
use crate::repr::FieldType;

pub const SSTF_MAGIC: &[u8; 4] = b"SSTF";
pub const SSTF_VERSION: u32 = 1;

pub fn serialize(t: &SparseTensor) -> Vec<u8> {
    let k = t.field_type().dim();
    let g = t.grid();
    let mut out = Vec::with_capacity(56 + t.num_sites() * (12 + 8 * k));
    out.extend_from_slice(SSTF_MAGIC);
    out.extend_from_slice(&SSTF_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(t.num_sites() as u32).to_le_bytes());
    for e in g.extent {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.extend_from_slice(&g.voxel_size.to_le_bytes());
    for o in g.origin {
        out.extend_from_slice(&o.to_le_bytes());
    }
    for (row, site) in t.sites().iter().enumerate() {
        for c in site.0 {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in t.features().row(row) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("truncated stream at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<SparseTensor> {
    deserialize_inner(bytes, None)
}

/// Like [`deserialize`], checking that `K` matches `field_type`.
pub fn deserialize_with_field(bytes: &[u8], field_type: FieldType) -> Result<SparseTensor> {
    deserialize_inner(bytes, Some(field_type))
}

fn deserialize_inner(bytes: &[u8], field_type: Option<FieldType>) -> Result<SparseTensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take()?;
    if &magic != SSTF_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != SSTF_VERSION {
        return Err(Error::Format(format!("unsupported SSTF version {version}")));
    }
    let k = r.u32()? as usize;
    let n = r.u32()? as usize;
    let extent = [r.u32()?, r.u32()?, r.u32()?];
    let voxel_size = r.f64()?;
    let origin = [r.f64()?, r.f64()?, r.f64()?];
    let field_type = match field_type {
        Some(ft) if ft.dim() != k => return Err(Error::field_mismatch(ft, format!("{k} channels in file"))),
        Some(ft) => ft,
        None => FieldType::scalars(k),
    };
    let needed = n.checked_mul(12 + 8 * k).ok_or_else(|| Error::Format("site count overflow".into()))?;
    if bytes.len() - r.pos < needed {
        return Err(Error::Format(format!(
            "truncated stream: {n} records need {needed} bytes, {} available",
            bytes.len() - r.pos
        )));
    }
    let mut sites = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * k);
    for _ in 0..n {
        sites.push(Site([r.i32()?, r.i32()?, r.i32()?]));
        for _ in 0..k {
            feats.push(r.f64()?);
        }
    }
    let features = Array2::from_shape_vec((n, k), feats).expect("row-major shape");
    let grid = Grid {
        voxel_size,
        origin,
        extent,
    };
    SparseTensor::from_rows(sites, features, field_type, grid)
}

/// Parses `x y z [a1 … aC]` lines; `#` lines and blank lines are skipped.
/// All data lines must have the same number of columns.
pub fn parse_point_cloud(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut attrs = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = trimmed
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a number: '{tok}'"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least 3 columns, got {}", values.len()),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, got {}", values.len()),
                })
            }
            _ => {}
        }
        points.push(Vector3::new(values[0], values[1], values[2]));
        attrs.extend_from_slice(&values[3..]);
    }
    let c = width.map_or(0, |w| w - 3);
    let attributes = Array2::from_shape_vec((points.len(), c), attrs).expect("row-major shape");
    PointCloud::new(points, attributes)
}

pub fn write_point_cloud(pc: &PointCloud) -> String {
    let mut s = String::new();
    for (i, p) in pc.points.iter().enumerate() {
        write!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
        for a in pc.attributes.row(i) {
            write!(s, " {a}").unwrap();
        }
        s.push('\n');
    }
    s
}
