//! Asymmetric polycube shapes used as synthetic objects.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::repr::{octahedral_group, rotate_lattice};

/// Side length of one cube in world units.
pub const CUBE_SIDE: f64 = 1.0;

const PALETTE: [[f64; 3]; 6] = [
    [0.9, 0.2, 0.2],
    [0.2, 0.8, 0.3],
    [0.2, 0.3, 0.9],
    [0.9, 0.8, 0.2],
    [0.7, 0.3, 0.8],
    [0.2, 0.8, 0.8],
];

const SHAPES: [(&str, &[[i32; 3]]); 3] = [
    ("chair", &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0], [0, 0, 1], [2, 0, 1]]),
    ("twist", &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [2, 1, 0], [2, 1, 1], [0, 0, 1]]),
    ("hook", &[[0, 0, 0], [0, 1, 0], [0, 2, 0], [1, 2, 0], [1, 2, 1], [1, 0, 0]]),
];

pub fn num_shapes() -> usize {
    SHAPES.len()
}

pub fn shape_names() -> Vec<&'static str> {
    SHAPES.iter().map(|s| s.0).collect()
}

/// A rigid object made of unit cubes, expressed in its canonical frame
/// (origin at the center of its bounding box).
#[derive(Clone, Debug)]
pub struct Polycube {
    pub name: &'static str,
    cubes: Vec<[i32; 3]>,
    center: Vector3<f64>,
    /// Exposed faces: cube index and outward axis direction.
    faces: Vec<(usize, [i32; 3])>,
}

impl Polycube {
    pub fn by_id(id: usize) -> Result<Self> {
        let (name, cubes) = SHAPES.get(id).ok_or_else(|| Error::Unknown {
            what: "shape",
            name: id.to_string(),
        })?;
        Ok(Self::from_cubes(name, cubes))
    }

    fn from_cubes(name: &'static str, cubes: &[[i32; 3]]) -> Self {
        let set: BTreeSet<[i32; 3]> = cubes.iter().copied().collect();
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for c in cubes {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
        let center = Vector3::new(
            0.5 * (lo[0] + hi[0]) as f64,
            0.5 * (lo[1] + hi[1]) as f64,
            0.5 * (lo[2] + hi[2]) as f64,
        ) * CUBE_SIDE;
        let mut faces = Vec::new();
        for (i, c) in cubes.iter().enumerate() {
            for a in 0..3 {
                for s in [-1, 1] {
                    let mut d = [0; 3];
                    d[a] = s;
                    if !set.contains(&[c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                        faces.push((i, d));
                    }
                }
            }
        }
        Polycube {
            name,
            cubes: cubes.to_vec(),
            center,
            faces,
        }
    }

    pub fn num_cubes(&self) -> usize {
        self.cubes.len()
    }

    /// Color of each cube.
    pub fn color(&self, cube: usize) -> [f64; 3] {
        PALETTE[cube % PALETTE.len()]
    }

    /// Distinct cube corners in the canonical frame.
    pub fn vertices(&self) -> Vec<Vector3<f64>> {
        let mut set = BTreeSet::new();
        for c in &self.cubes {
            for k in 0..8 {
                set.insert([c[0] + (k & 1), c[1] + ((k >> 1) & 1), c[2] + ((k >> 2) & 1)]);
            }
        }
        set.into_iter()
            .map(|v| Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64) * CUBE_SIDE - self.center)
            .collect()
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let v = self.vertices();
        let mut d: f64 = 0.0;
        for a in &v {
            for b in &v {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Largest distance from the canonical origin to a vertex.
    pub fn radius(&self) -> f64 {
        self.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Uniform sample on the outer surface, with the color of the owning cube.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector3<f64>, [f64; 3]) {
        let (cube, dir) = self.faces[rng.random_range(0..self.faces.len())];
        let c = self.cubes[cube];
        let axis = dir.iter().position(|&v| v != 0).expect("axis direction");
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = c[a] as f64
                + if a == axis {
                    if dir[a] > 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    rng.random::<f64>()
                };
        }
        (Vector3::from(p) * CUBE_SIDE - self.center, self.color(cube))
    }

    /// Number of lattice rotations mapping the cube set onto a translate of
    /// itself (1 for a shape without rotational symmetry).
    pub fn rotational_symmetries(&self) -> usize {
        let canon = |cells: Vec<[i32; 3]>| -> BTreeSet<[i32; 3]> {
            let mut lo = [i32::MAX; 3];
            for c in &cells {
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                }
            }
            cells.iter().map(|c| [c[0] - lo[0], c[1] - lo[1], c[2] - lo[2]]).collect()
        };
        let base = canon(self.cubes.clone());
        octahedral_group()
            .iter()
            .filter(|r| canon(self.cubes.iter().map(|&c| rotate_lattice(r, c)).collect()) == base)
            .count()
    }
}
