//! CSV dump of sampled basis kernels.
//!
//! One block per `(J, m, offset)`: a header line
//! `block,J=<J>,m=<index>,dx=<dx>,dy=<dy>,dz=<dz>` followed by `2k+1` rows
//! of `2l+1` comma-separated values. `#` lines document the convention.

use std::fmt::Write as _;

use ndarray::Array2;

use super::KernelBasis;
use crate::error::{Error, Result};
use crate::tensor::kernel_offsets;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisBlock {
    pub j: u32,
    /// Index into the radial center list.
    pub m: usize,
    pub offset: [i32; 3],
    pub matrix: Array2<f64>,
}

pub fn write_basis_csv(basis: &KernelBasis) -> String {
    let spec = basis.spec();
    let centers: Vec<String> = spec.centers.iter().map(|c| c.to_string()).collect();
    let mut out = String::new();
    writeln!(
        out,
        "# basis k={} l={} size={} centers={} epsilon={}",
        basis.k(),
        basis.l(),
        spec.size,
        centers.join(";"),
        spec.epsilon
    )
    .unwrap();
    writeln!(out, "# rows: output component m=-k..k; columns: input component m=-l..l").unwrap();
    writeln!(out, "# real spherical harmonics without Condon-Shortley phase; order 1 components are (y, z, x)").unwrap();
    writeln!(out, "# offsets in voxels, z-major enumeration").unwrap();
    let offsets = kernel_offsets(spec.size);
    for &j in basis.orders() {
        for m in 0..spec.num_radial() {
            let f = basis.function_index(j, m).expect("listed order");
            for (o, d) in offsets.iter().enumerate() {
                writeln!(out, "block,J={j},m={m},dx={},dy={},dz={}", d[0], d[1], d[2]).unwrap();
                for row in basis.entry(f, o).rows() {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                    writeln!(out, "{}", cells.join(",")).unwrap();
                }
            }
        }
    }
    out
}

fn parse_field<T: std::str::FromStr>(part: &str, key: &str, line: usize) -> Result<T> {
    part.strip_prefix(key)
        .and_then(|v| v.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected {key}=<value>, got '{part}'"),
        })
}

/// Parses the output of [`write_basis_csv`].
pub fn parse_basis_csv(text: &str) -> Result<Vec<BasisBlock>> {
    let mut blocks = Vec::new();
    let mut current: Option<(BasisBlock, Vec<Vec<f64>>)> = None;
    let flush = |cur: Option<(BasisBlock, Vec<Vec<f64>>)>, blocks: &mut Vec<BasisBlock>, line: usize| -> Result<()> {
        if let Some((mut block, rows)) = cur {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::Parse {
                    line,
                    message: "ragged or empty block".into(),
                });
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            block.matrix = Array2::from_shape_vec((flat.len() / ncols, ncols), flat).expect("checked shape");
            blocks.push(block);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("block,") {
            flush(current.take(), &mut blocks, line)?;
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    line,
                    message: format!("block header needs 5 fields, got {}", parts.len()),
                });
            }
            let block = BasisBlock {
                j: parse_field(parts[0], "J", line)?,
                m: parse_field(parts[1], "m", line)?,
                offset: [
                    parse_field(parts[2], "dx", line)?,
                    parse_field(parts[3], "dy", line)?,
                    parse_field(parts[4], "dz", line)?,
                ],
                matrix: Array2::zeros((0, 0)),
            };
            current = Some((block, Vec::new()));
        } else {
            let row = trimmed
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("not a number: '{v}'"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            match current.as_mut() {
                Some((_, rows)) => rows.push(row),
                None => {
                    return Err(Error::Parse {
                        line,
                        message: "values before the first block header".into(),
                    })
                }
            }
        }
    }
    flush(current, &mut blocks, text.lines().count())?;
    Ok(blocks)
}
