//! Isosurface extraction (marching cubes) and Wavefront OBJ export.
//!
//! Cell polygons are built by walking the cube faces: on every face each
//! inside run of corners is cut off by one segment, which always separates
//! diagonal inside corners and so resolves ambiguous faces identically in
//! both cells sharing the face. The segments chain into closed loops that
//! are fan-triangulated and oriented along the field gradient.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io;

use thiserror::Error;

use crate::math::Vec3;
use crate::sdf::SdfField;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("marching cubes needs at least 2 cells per axis, got {0}")]
    Resolution(usize),
    #[error("invalid bounds: lower corner must be below upper corner")]
    Bounds,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

/// Corner `c` of a cell has offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const CORNER_OFFSETS: [(usize, usize, usize); 8] = [
    (0, 0, 0),
    (1, 0, 0),
    (0, 1, 0),
    (1, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (0, 1, 1),
    (1, 1, 1),
];

/// Corners of each face in counter-clockwise order seen from outside.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // -x
    [1, 3, 7, 5], // +x
    [0, 1, 5, 4], // -y
    [2, 6, 7, 3], // +y
    [0, 2, 3, 1], // -z
    [4, 5, 7, 6], // +z
];

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                (b - a).cross(c - a).norm() * 0.5
            })
            .sum()
    }

    /// True when every undirected edge is shared by exactly two triangles
    /// with opposite directions.
    pub fn is_closed_manifold(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Wavefront OBJ text: `v` lines with six fractional digits, then 1-based
    /// `f` lines.
    pub fn to_obj(&self) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj<W: io::Write>(&self, mut w: W) -> Result<(), MeshError> {
        w.write_all(self.to_obj().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads `v` and triangular `f` lines; other records are ignored.
    /// Face entries may use the `v/vt/vn` form.
    pub fn parse_obj(text: &str) -> Result<Self, MeshError> {
        let mut mesh = TriangleMesh::default();
        for (ln, line) in text.lines().enumerate() {
            let err = |msg: String| MeshError::Parse { line: ln + 1, msg };
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate {t:?}: {e}"))))
                        .collect::<Result<_, _>>()?;
                    if c.len() != 3 {
                        return Err(err("vertex needs 3 coordinates".into()));
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or(t);
                            head.parse::<u32>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| err(format!("bad face index {t:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() != 3 {
                        return Err(err(format!("expected a triangle, got {} indices", idx.len())));
                    }
                    mesh.triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        let n = mesh.vertices.len() as u32;
        if let Some(t) = mesh.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(MeshError::Parse {
                line: 0,
                msg: format!("face {t:?} references a missing vertex"),
            });
        }
        Ok(mesh)
    }
}

/// Extracts the zero level set of `field` inside `[lo, hi]` with
/// `resolution` cells per axis.
pub fn marching_cubes(field: &SdfField, lo: Vec3, hi: Vec3, resolution: usize) -> Result<TriangleMesh, MeshError> {
    if resolution < 2 {
        return Err(MeshError::Resolution(resolution));
    }
    if !(lo.x < hi.x && lo.y < hi.y && lo.z < hi.z) {
        return Err(MeshError::Bounds);
    }
    let n = resolution + 1;
    let step = (hi - lo) / resolution as f64;
    let point = |i: usize, j: usize, k: usize| {
        Vec3::new(
            lo.x + i as f64 * step.x,
            lo.y + j as f64 * step.y,
            lo.z + k as f64 * step.z,
        )
    };
    let samples: Vec<f64> = {
        use rayon::prelude::*;
        (0..n * n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
                field.eval(point(i, j, k))
            })
            .collect()
    };
    let value = |i: usize, j: usize, k: usize| samples[i + n * (j + n * k)];

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let mut coord_vertex: HashMap<[u64; 3], u32> = HashMap::new();

    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let corner = |c: usize| {
                    let (dx, dy, dz) = CORNER_OFFSETS[c];
                    (i + dx, j + dy, k + dz)
                };
                let vals: [f64; 8] = std::array::from_fn(|c| {
                    let (a, b, d) = corner(c);
                    value(a, b, d)
                });
                let inside: [bool; 8] = vals.map(|v| v < 0.0);
                if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                    continue;
                }

                // Directed segments between crossing edges, keyed by cube
                // corner pairs `(a, b)` with `a` inside-to-outside order fixed
                // per face.
                let mut next: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
                for face in FACES {
                    let crossing = |e: usize| inside[face[e]] != inside[face[(e + 1) % 4]];
                    let edges: Vec<usize> = (0..4).filter(|&e| crossing(e)).collect();
                    for &e in &edges {
                        // enter: outside corner followed by inside corner
                        if inside[face[e]] {
                            continue;
                        }
                        let mut f = (e + 1) % 4;
                        while !crossing(f) {
                            f = (f + 1) % 4;
                        }
                        let key = |x: usize| {
                            let (a, b) = (face[x], face[(x + 1) % 4]);
                            (a.min(b), a.max(b))
                        };
                        next.insert(key(e), key(f));
                    }
                }

                let mut keys: Vec<(usize, usize)> = next.keys().copied().collect();
                keys.sort_unstable();
                let mut used = std::collections::HashSet::new();
                for start in keys {
                    if used.contains(&start) {
                        continue;
                    }
                    let mut ring = Vec::new();
                    let mut cur = start;
                    while used.insert(cur) {
                        ring.push(cur);
                        cur = next[&cur];
                    }
                    if ring.len() < 3 {
                        continue;
                    }
                    let ids: Vec<u32> = ring
                        .iter()
                        .map(|&(a, b)| {
                            let (ca, cb) = (corner(a), corner(b));
                            let axis = (a ^ b).trailing_zeros() as u8;
                            let gkey = (ca.0 + n * (ca.1 + n * ca.2), axis);
                            *edge_vertex.entry(gkey).or_insert_with(|| {
                                let (va, vb) = (vals[a], vals[b]);
                                let t = va / (va - vb);
                                let pa = point(ca.0, ca.1, ca.2);
                                let pb = point(cb.0, cb.1, cb.2);
                                let p = pa + (pb - pa) * t;
                                let bits = p.to_array().map(f64::to_bits);
                                *coord_vertex.entry(bits).or_insert_with(|| {
                                    mesh.vertices.push(p);
                                    (mesh.vertices.len() - 1) as u32
                                })
                            })
                        })
                        .collect();
                    let pts: Vec<Vec3> = ids.iter().map(|&v| mesh.vertices[v as usize]).collect();
                    // Newell normal of the loop versus the cell's value gradient
                    let mut normal = Vec3::zero();
                    for a in 0..pts.len() {
                        let (p, q) = (pts[a], pts[(a + 1) % pts.len()]);
                        normal += Vec3::new(
                            (p.y - q.y) * (p.z + q.z),
                            (p.z - q.z) * (p.x + q.x),
                            (p.x - q.x) * (p.y + q.y),
                        );
                    }
                    let grad = Vec3::new(
                        (vals[1] + vals[3] + vals[5] + vals[7]) - (vals[0] + vals[2] + vals[4] + vals[6]),
                        (vals[2] + vals[3] + vals[6] + vals[7]) - (vals[0] + vals[1] + vals[4] + vals[5]),
                        (vals[4] + vals[5] + vals[6] + vals[7]) - (vals[0] + vals[1] + vals[2] + vals[3]),
                    )
                    .hadamard(Vec3::new(1.0 / step.x, 1.0 / step.y, 1.0 / step.z));
                    let flip = normal.dot(grad) < 0.0;
                    for a in 1..ids.len() - 1 {
                        let tri = if flip {
                            [ids[0], ids[a + 1], ids[a]]
                        } else {
                            [ids[0], ids[a], ids[a + 1]]
                        };
                        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                            continue;
                        }
                        let [p0, p1, p2] = tri.map(|v| mesh.vertices[v as usize]);
                        if (p1 - p0).cross(p2 - p0).norm_squared() == 0.0 {
                            continue;
                        }
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(r: f64) -> (Vec3, Vec3) {
        (Vec3::splat(-r), Vec3::splat(r))
    }

    #[test]
    fn sphere_mesh_is_closed_genus_zero() {
        let (lo, hi) = cube(1.5);
        let mesh = marching_cubes(&SdfField::sphere(Vec3::zero(), 1.0), lo, hi, 64).unwrap();
        let cell = 3.0 / 64.0;
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((v.norm() - 1.0).abs() <= 1.5 * cell);
        }
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.is_closed_manifold());
    }

    #[test]
    fn sphere_triangles_face_outward() {
        let (lo, hi) = cube(1.5);
        let mesh = marching_cubes(&SdfField::sphere(Vec3::zero(), 1.0), lo, hi, 24).unwrap();
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            let n = (b - a).cross(c - a);
            assert!(n.dot(a + b + c) > 0.0);
        }
    }

    #[test]
    fn torus_has_genus_one() {
        let (lo, hi) = cube(1.5);
        let mesh = marching_cubes(&SdfField::torus(Vec3::zero(), 0.8, 0.3), lo, hi, 48).unwrap();
        assert_eq!(mesh.euler_characteristic(), 0);
        assert!(mesh.is_closed_manifold());
    }

    #[test]
    fn empty_when_no_crossing() {
        let (lo, hi) = cube(1.0);
        let mesh = marching_cubes(&SdfField::sphere(Vec3::new(5.0, 0.0, 0.0), 1.0), lo, hi, 8).unwrap();
        assert!(mesh.is_empty());
        assert_eq!(mesh.to_obj(), "");
    }

    #[test]
    fn box_area_close_to_analytic() {
        let (lo, hi) = cube(1.0);
        let h = Vec3::new(0.5, 0.4, 0.3);
        let mesh = marching_cubes(&SdfField::cuboid(Vec3::zero(), h), lo, hi, 128).unwrap();
        let exact = 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
        assert!((mesh.area() - exact).abs() / exact < 0.05, "{} vs {exact}", mesh.area());
    }

    #[test]
    fn rejects_bad_arguments() {
        let f = SdfField::sphere(Vec3::zero(), 1.0);
        assert!(matches!(marching_cubes(&f, Vec3::splat(-1.0), Vec3::splat(1.0), 1), Err(MeshError::Resolution(1))));
        assert!(matches!(marching_cubes(&f, Vec3::splat(1.0), Vec3::splat(-1.0), 4), Err(MeshError::Bounds)));
    }

    #[test]
    fn single_triangle_obj() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::zero(), Vec3::X, Vec3::Y],
            triangles: vec![[0, 1, 2]],
            normals: None,
        };
        let text = mesh.to_obj();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(text.contains("v 1.000000 0.000000 0.000000"));
        assert!(text.ends_with("f 1 2 3\n"));
    }

    #[test]
    fn obj_round_trip() {
        let (lo, hi) = cube(1.5);
        let mesh = marching_cubes(&SdfField::sphere(Vec3::zero(), 1.0), lo, hi, 16).unwrap();
        let back = TriangleMesh::parse_obj(&mesh.to_obj()).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert!((*a - *b).abs().max_elem() <= 5e-7);
        }
    }

    #[test]
    fn parse_reports_line() {
        let err = TriangleMesh::parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 2, .. }));
    }
}
