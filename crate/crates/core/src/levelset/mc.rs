//! Marching cubes.
//!
//! The case table is generated rather than transcribed. On each cube face
//! the crossing points are joined by segments; a face whose diagonal
//! corners agree (the ambiguous case) always separates its corners below
//! the level. That rule depends on the face alone, so the two cubes
//! sharing a face triangulate it identically and the mesh has no cracks.
//! The segments of the six faces close into polygons, fanned into
//! triangles.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::grid::GridPotential;

/// Corner `c` of the unit cube sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Twelve edges as `(corner, axis)`: the edge runs from `corner` along
/// `axis`. Ordered by axis, then by the remaining two bits.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut e = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[e] = (c, axis);
                e += 1;
            }
        }
    }
    out
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, diff) = (a.min(b), a ^ b);
    let axis = diff.trailing_zeros() as usize;
    edges().iter().position(|&(c, ax)| c == lo && ax == axis).expect("adjacent corners")
}

/// Corners of each face in cyclic order.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let base = side << axis;
            out.push([base, base | 1 << u, base | 1 << u | 1 << v, base | 1 << v]);
        }
    }
    out
}

/// Polygons (as local edge lists) for each of the 256 sign patterns. Bit
/// `c` of the pattern is set when corner `c` lies below the level.
pub type CaseTable = Vec<Vec<Vec<u8>>>;

pub fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

fn build_table() -> CaseTable {
    let faces = faces();
    (0..256usize)
        .map(|pattern| {
            let below = |c: usize| pattern >> c & 1 == 1;
            let mut links: Vec<Vec<usize>> = vec![Vec::new(); 12];
            for f in &faces {
                let e: Vec<usize> = (0..4).map(|i| edge_between(f[i], f[(i + 1) % 4])).collect();
                let cut: Vec<bool> = (0..4).map(|i| below(f[i]) != below(f[(i + 1) % 4])).collect();
                let mut segs = Vec::new();
                match cut.iter().filter(|&&c| c).count() {
                    0 => {}
                    2 => {
                        let ids: Vec<usize> = (0..4).filter(|&i| cut[i]).collect();
                        segs.push((e[ids[0]], e[ids[1]]));
                    }
                    4 => {
                        // Cut off each corner below the level: the edges
                        // entering and leaving it are joined.
                        for i in 0..4 {
                            if below(f[i]) {
                                segs.push((e[(i + 3) % 4], e[i]));
                            }
                        }
                    }
                    _ => unreachable!("a face has an even number of sign changes"),
                }
                for (a, b) in segs {
                    links[a].push(b);
                    links[b].push(a);
                }
            }
            let mut used = [false; 12];
            let mut polys = Vec::new();
            for start in 0..12 {
                if used[start] || links[start].is_empty() {
                    continue;
                }
                debug_assert_eq!(links[start].len(), 2);
                let mut poly = vec![start as u8];
                used[start] = true;
                let (mut prev, mut cur) = (start, links[start][0]);
                while cur != start {
                    poly.push(cur as u8);
                    used[cur] = true;
                    let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
                    prev = cur;
                    cur = next;
                }
                polys.push(poly);
            }
            polys
        })
        .collect()
}

/// Triangulated level set. Only the stored region of the lattice is
/// meshed; `multiplicity` copies (mirror images) make up the full surface.
#[derive(Debug, Clone, Serialize)]
pub struct TriMesh {
    pub level: f64,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    /// Component label per vertex, numbered from 0 in order of first
    /// appearance. Labels refer to the full (unfolded) surface.
    pub labels: Vec<u32>,
    pub components: usize,
    pub multiplicity: usize,
    /// Per-vertex `|∇u|_g` and `H_g`, filled by the surface integrator.
    pub grad: Vec<f64>,
    pub mean_curvature: Vec<f64>,
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n as u32).collect())
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            let up = self.0[self.0[x as usize] as usize];
            self.0[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi as usize] = lo;
        }
    }
}

/// Triangles with flat area at or below this are dropped from the mesh
/// (they still join components).
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;

pub fn triangle_area(p: [[f64; 3]; 3]) -> f64 {
    let a = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
    let b = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Marching-cubes triangulation of `{u = level}` over the field `values`
/// (node values of `grid`'s lattice, possibly ghost-extended).
pub fn extract(grid: &GridPotential, values: &[f64], level: f64) -> Result<TriMesh> {
    if !(level > 0.0 && level < grid.min_outer_value()) {
        return Err(Error::InvalidArgument(format!(
            "level {level} must lie strictly between 0 and the smallest outer value {}",
            grid.min_outer_value()
        )));
    }
    let n = grid.n;
    let table = case_table();
    let edge_list = edges();
    let mut vertex_of: HashMap<u64, u32> = HashMap::new();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut raw: Vec<[u32; 3]> = Vec::new();
    // Global edge key: node index times 3 plus axis.
    let mut vertex = |i: usize, j: usize, k: usize, axis: usize, vertices: &mut Vec<[f64; 3]>| -> u32 {
        let key = (grid.index(i, j, k) as u64) * 3 + axis as u64;
        *vertex_of.entry(key).or_insert_with(|| {
            let mut d = [0usize; 3];
            d[axis] = 1;
            let a = values[grid.index(i, j, k)];
            let b = values[grid.index(i + d[0], j + d[1], k + d[2])];
            let s = ((level - a) / (b - a)).clamp(0.0, 1.0);
            let mut p = [grid.coord(i), grid.coord(j), grid.coord(k)];
            p[axis] += s * grid.h;
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    };
    for k in 0..n - 1 {
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let mut pattern = 0usize;
                for c in 0..8 {
                    let o = corner(c);
                    if values[grid.index(i + o[0], j + o[1], k + o[2])] < level {
                        pattern |= 1 << c;
                    }
                }
                if pattern == 0 || pattern == 255 {
                    continue;
                }
                for poly in &table[pattern] {
                    let ids: Vec<u32> = poly
                        .iter()
                        .map(|&e| {
                            let (c, axis) = edge_list[e as usize];
                            let o = corner(c);
                            vertex(i + o[0], j + o[1], k + o[2], axis, &mut vertices)
                        })
                        .collect();
                    for t in 1..ids.len() - 1 {
                        raw.push([ids[0], ids[t], ids[t + 1]]);
                    }
                }
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyIsosurface(level));
    }

    // Components of the full surface. In the octant layout each stored
    // component has eight mirror copies indexed by the reflected axes;
    // a vertex on the plane x_a = 0 glues copy g to copy g ^ (1 << a).
    let nv = vertices.len();
    let copies = if grid.octant { 8 } else { 1 };
    let mut uf = UnionFind::new(nv * copies);
    for t in &raw {
        for g in 0..copies as u32 {
            let base = g * nv as u32;
            uf.union(base + t[0], base + t[1]);
            uf.union(base + t[0], base + t[2]);
        }
    }
    if grid.octant {
        for (v, p) in vertices.iter().enumerate() {
            for (axis, x) in p.iter().enumerate() {
                if *x == 0.0 {
                    for g in 0..8u32 {
                        uf.union(g * nv as u32 + v as u32, (g ^ (1 << axis)) * nv as u32 + v as u32);
                    }
                }
            }
        }
    }
    let mut label_of_root: HashMap<u32, u32> = HashMap::new();
    let mut full_labels = vec![0u32; nv * copies];
    for (v, slot) in full_labels.iter_mut().enumerate() {
        let root = uf.find(v as u32);
        let next = label_of_root.len() as u32;
        *slot = *label_of_root.entry(root).or_insert(next);
    }
    let components = label_of_root.len();
    let labels = full_labels[..nv].to_vec();

    let triangles: Vec<[u32; 3]> = raw
        .into_iter()
        .filter(|t| triangle_area([vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]]) > MIN_TRIANGLE_AREA)
        .collect();
    Ok(TriMesh {
        level,
        vertices,
        triangles,
        labels,
        components,
        multiplicity: copies,
        grad: Vec::new(),
        mean_curvature: Vec::new(),
    })
}

impl TriMesh {
    /// ASCII OFF export of the stored part of the surface.
    pub fn write_off<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "OFF")?;
        writeln!(w, "{} {} 0", self.vertices.len(), self.triangles.len())?;
        for p in &self.vertices {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    /// Flat area of the full surface.
    pub fn flat_area(&self) -> f64 {
        let s: f64 = self
            .triangles
            .iter()
            .map(|t| triangle_area([self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]))
            .sum();
        s * self.multiplicity as f64
    }
}
