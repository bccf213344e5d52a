use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2};

use super::harmonics::{wigner_d_unchecked, OrderLimits};
use super::so3::Rotation;
use crate::error::{Error, Result};

/// Ordered list of irreducible orders; a feature of this type is the
/// concatenation of one `(2l+1)`-vector per entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct FieldType {
    orders: Vec<u32>,
}

impl FieldType {
    pub fn new(orders: Vec<u32>) -> Self {
        FieldType { orders }
    }

    /// `n` rotation-invariant channels.
    pub fn scalars(n: usize) -> Self {
        FieldType { orders: vec![0; n] }
    }

    /// Builds from `(order, multiplicity)` groups, in order.
    pub fn from_groups(groups: &[(u32, usize)]) -> Self {
        let orders = groups
            .iter()
            .flat_map(|&(l, mult)| std::iter::repeat_n(l, mult))
            .collect();
        FieldType { orders }
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.orders.iter().map(|&l| 2 * l as usize + 1).sum()
    }

    pub fn max_order(&self) -> u32 {
        self.orders.iter().copied().max().unwrap_or(0)
    }

    /// `(order, column offset)` per irreducible.
    pub fn irreps(&self) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.orders.iter().scan(0usize, |off, &l| {
            let here = *off;
            *off += 2 * l as usize + 1;
            Some((l, here))
        })
    }

    pub fn concat(parts: &[&FieldType]) -> FieldType {
        FieldType {
            orders: parts.iter().flat_map(|f| f.orders.iter().copied()).collect(),
        }
    }

    /// Consecutive runs of equal order as `(order, multiplicity)`.
    pub fn groups(&self) -> Vec<(u32, usize)> {
        let mut out: Vec<(u32, usize)> = Vec::new();
        for &l in &self.orders {
            match out.last_mut() {
                Some((last, n)) if *last == l => *n += 1,
                _ => out.push((l, 1)),
            }
        }
        out
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, (l, n)) in self.groups().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}x{n}")?;
        }
        write!(f, "]")
    }
}

/// Parses `[0x4,1x2]` (order `x` multiplicity, comma separated).
impl FromStr for FieldType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad field type '{s}'"));
        let inner = s.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(bad)?;
        let mut groups = Vec::new();
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (l, n) = part.split_once('x').ok_or_else(bad)?;
            let l: u32 = l.trim().parse().map_err(|_| bad())?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            groups.push((l, n));
        }
        let ft = FieldType::from_groups(&groups);
        if ft.dim() == 0 {
            return Err(bad());
        }
        Ok(ft)
    }
}

/// Block-diagonal representation `⊕ D^{l_i}(r)`, in field order.
pub fn field_repr(ft: &FieldType, r: &Rotation) -> Result<Array2<f64>> {
    field_repr_with(ft, r, OrderLimits::default())
}

pub fn field_repr_with(ft: &FieldType, r: &Rotation, limits: OrderLimits) -> Result<Array2<f64>> {
    for &l in ft.orders() {
        limits.check_feature(l)?;
    }
    let k = ft.dim();
    let mut out = Array2::zeros((k, k));
    let mut blocks: Vec<Option<Array2<f64>>> = vec![None; ft.max_order() as usize + 1];
    for (l, off) in ft.irreps() {
        let d = blocks[l as usize].get_or_insert_with(|| wigner_d_unchecked(l, r));
        let n = d.nrows();
        out.slice_mut(s![off..off + n, off..off + n]).assign(d);
    }
    Ok(out)
}
