use nalgebra::Vector3;

use super::SynthError;

/// Default upper bound on the vertex count produced by [`subdivide_mesh`].
pub const DEFAULT_VERTEX_CAP: usize = 200_000;

/// Triangles with area at or below this (m²) count as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

pub type Rgb = [f32; 3];

/// Indexed triangle mesh with per-vertex albedo in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<Rgb>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn push_vertex(&mut self, p: Vector3<f64>, color: Rgb) -> u32 {
        self.positions.push(p);
        self.colors.push(color);
        (self.positions.len() - 1) as u32
    }

    /// Adds a planar quad `a b c d` (in loop order) with a uniform color as
    /// two triangles with their own four vertices.
    pub fn push_quad(&mut self, corners: [Vector3<f64>; 4], color: Rgb) {
        let i: Vec<u32> = corners
            .iter()
            .map(|p| self.push_vertex(*p, color))
            .collect();
        self.triangles.push([i[0], i[1], i[2]]);
        self.triangles.push([i[0], i[2], i[3]]);
    }

    pub fn append(&mut self, other: &TriMesh) {
        let base = self.positions.len() as u32;
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + base, t[1] + base, t[2] + base]),
        );
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn corners(&self, t: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    pub fn longest_edge(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| longest_edge(&self.corners(t)))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.colors.len() != self.positions.len() {
            return Err(SynthError::InvalidMesh(
                "color count differs from vertex count".into(),
            ));
        }
        let n = self.positions.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(SynthError::InvalidMesh(format!(
                    "triangle {t} has an out-of-range index"
                )));
            }
            if self.triangle_area(t) <= DEGENERATE_AREA {
                return Err(SynthError::InvalidMesh(format!(
                    "triangle {t} is degenerate"
                )));
            }
        }
        Ok(())
    }

    /// Canonical little-endian byte encoding, for determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(self.positions.len() * 36 + self.triangles.len() * 12 + 16);
        out.extend_from_slice(&(self.positions.len() as u64).to_le_bytes());
        for (p, c) in self.positions.iter().zip(&self.colors) {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.triangles.len() as u64).to_le_bytes());
        for t in &self.triangles {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

fn longest_edge(c: &[Vector3<f64>; 3]) -> f64 {
    (c[1] - c[0])
        .norm()
        .max((c[2] - c[1]).norm())
        .max((c[0] - c[2]).norm())
}

/// Number of power-of-two splits per edge needed so that every edge of the
/// regular subdivision is at most `max_edge`.
fn split_level(longest: f64, max_edge: f64) -> u32 {
    let mut level = 0u32;
    while longest / f64::from(1u32 << level.min(31)) > max_edge {
        level += 1;
        if level >= 31 {
            break;
        }
    }
    level
}

/// Splits every triangle regularly into `4^k` congruent sub-triangles, with
/// `k` the smallest level bringing its longest edge under `max_edge`.
///
/// New vertices lie on the original triangle planes with barycentrically
/// interpolated colors. Vertex sets are nested: a finer `max_edge` never
/// drops a vertex produced by a coarser one. Triangles that already satisfy
/// the bound keep their original vertices and indices.
pub fn subdivide_mesh(
    mesh: &TriMesh,
    max_edge: f64,
    vertex_cap: usize,
) -> Result<TriMesh, SynthError> {
    if !(max_edge > 0.0 && max_edge.is_finite()) {
        return Err(SynthError::Config(format!(
            "max_edge must be positive, got {max_edge}"
        )));
    }
    let levels: Vec<u32> = (0..mesh.triangles.len())
        .map(|t| split_level(longest_edge(&mesh.corners(t)), max_edge))
        .collect();

    let mut projected = mesh.positions.len() as f64;
    for &k in &levels {
        let n = (1u64 << k) as f64;
        projected += (n + 1.0) * (n + 2.0) / 2.0 - 3.0;
    }
    if levels.iter().any(|&k| k >= 31) || projected > vertex_cap as f64 {
        return Err(SynthError::Capacity {
            projected: projected.min(usize::MAX as f64) as usize,
            cap: vertex_cap,
        });
    }

    let mut out = TriMesh {
        positions: mesh.positions.clone(),
        colors: mesh.colors.clone(),
        triangles: Vec::with_capacity(mesh.triangles.len()),
    };
    for (t, &k) in levels.iter().enumerate() {
        let tri = mesh.triangles[t];
        if k == 0 {
            out.triangles.push(tri);
            continue;
        }
        let n = 1usize << k;
        let [a, b, c] = mesh.corners(t);
        let [ca, cb, cc] = tri.map(|i| mesh.colors[i as usize]);
        // Grid vertex (i, j) sits at a + (i/n)(b - a) + (j/n)(c - a), i + j <= n.
        let mut index = vec![0u32; (n + 1) * (n + 2) / 2];
        // rows of decreasing length n + 1, n, ..., 1
        let slot = |i: usize, j: usize| -> usize { j * (n + 1) - j * j.saturating_sub(1) / 2 + i };
        let inv = 1.0 / n as f64;
        for j in 0..=n {
            for i in 0..=(n - j) {
                let id = if (i, j) == (0, 0) {
                    tri[0]
                } else if (i, j) == (n, 0) {
                    tri[1]
                } else if (i, j) == (0, n) {
                    tri[2]
                } else {
                    let u = i as f64 * inv;
                    let v = j as f64 * inv;
                    let p = a + (b - a) * u + (c - a) * v;
                    let w0 = (1.0 - u - v) as f32;
                    let (uf, vf) = (u as f32, v as f32);
                    let color = [0, 1, 2].map(|ch| ca[ch] * w0 + cb[ch] * uf + cc[ch] * vf);
                    out.push_vertex(p, color)
                };
                index[slot(i, j)] = id;
            }
        }
        for j in 0..n {
            for i in 0..(n - j) {
                out.triangles.push([
                    index[slot(i, j)],
                    index[slot(i + 1, j)],
                    index[slot(i, j + 1)],
                ]);
                if i + j + 1 < n {
                    out.triangles.push([
                        index[slot(i + 1, j)],
                        index[slot(i + 1, j + 1)],
                        index[slot(i, j + 1)],
                    ]);
                }
            }
        }
    }
    Ok(out)
}
