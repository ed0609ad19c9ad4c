use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use super::EvalError;
use crate::volume::{Dims, Spacing};

/// Triangle mesh in millimetres with 0-based vertex indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

const CORNER: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]];

fn edges() -> &'static [(usize, usize); 12] {
    static E: OnceLock<[(usize, usize); 12]> = OnceLock::new();
    E.get_or_init(|| {
        let mut out = [(0, 0); 12];
        let mut n = 0;
        for a in 0..8usize {
            for bit in [1usize, 2, 4] {
                if a & bit == 0 {
                    out[n] = (a, a | bit);
                    n += 1;
                }
            }
        }
        out
    })
}

fn edge_of(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    edges().iter().position(|&e| e == key).expect("corners share an edge")
}

/// The six faces as corner cycles with their outward normals.
fn faces() -> [([usize; 4], [f64; 3]); 6] {
    let mut out = [([0; 4], [0.0; 3]); 6];
    for (n, (axis, side)) in (0..3).flat_map(|a| [(a, 0usize), (a, 1)]).enumerate() {
        let bit = 1 << axis;
        let (p, q) = (1 << ((axis + 1) % 3), 1 << ((axis + 2) % 3));
        let base = if side == 1 { bit } else { 0 };
        let mut normal = [0.0; 3];
        normal[axis] = if side == 1 { 1.0 } else { -1.0 };
        out[n] = ([base, base | p, base | p | q, base | q], normal);
    }
    out
}

/// Triangles (as edge triples) for all 256 inside/outside corner patterns.
/// Each face contributes segments between its sign-changing edges; on
/// ambiguous faces the inside corners are kept apart. A segment runs along
/// `g × n`, with `g` pointing from its inside corners towards it and `n` the
/// face normal, so the two cubes sharing a face traverse it in opposite
/// directions. The directed segments close into loops. A loop is fanned from
/// its first point unless a fan diagonal would lie on a cube face (where the
/// neighbouring cube may own it as a segment); then it is fanned from its
/// centroid.
pub fn case_table() -> &'static Vec<Case> {
    static T: OnceLock<Vec<Case>> = OnceLock::new();
    T.get_or_init(|| (0..256).map(build_case).collect())
}

fn corner_point(c: usize) -> [f64; 3] {
    CORNER[c].map(|x| x as f64)
}

fn midpoint(e: usize) -> [f64; 3] {
    let (a, b) = edges()[e];
    let (pa, pb) = (corner_point(a), corner_point(b));
    [0, 1, 2].map(|d| 0.5 * (pa[d] + pb[d]))
}

/// Triangulation of one corner pattern. Triangle indices below 12 are cube
/// edges; `CENTROID + n` is the centroid of `loops[n]`.
#[derive(Debug, Clone, Default)]
pub struct Case {
    pub loops: Vec<Vec<usize>>,
    pub triangles: Vec<[usize; 3]>,
}

pub const CENTROID: usize = 12;

fn share_face(a: usize, b: usize) -> bool {
    let (ea, eb) = (edges()[a], edges()[b]);
    faces().iter().any(|(f, _)| [ea.0, ea.1, eb.0, eb.1].iter().all(|c| f.contains(c)))
}

fn build_case(case: usize) -> Case {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for (f, normal) in faces() {
        let active: Vec<usize> = (0..4).filter(|&i| inside(f[i]) != inside(f[(i + 1) % 4])).map(|i| edge_of(f[i], f[(i + 1) % 4])).collect();
        let e = |i: usize| edge_of(f[i % 4], f[(i + 1) % 4]);
        // (segment, inside corners it separates from the rest of the face)
        let segments: Vec<((usize, usize), Vec<usize>)> = match active.len() {
            0 => vec![],
            2 => vec![((active[0], active[1]), f.iter().copied().filter(|&c| inside(c)).collect())],
            4 => (0..4).filter(|&i| inside(f[i])).map(|i| ((e(i + 3), e(i)), vec![f[i]])).collect(),
            _ => unreachable!("a face has an even number of sign changes"),
        };
        for ((a, b), corners) in segments {
            let (pa, pb) = (midpoint(a), midpoint(b));
            let mid = [0, 1, 2].map(|d| 0.5 * (pa[d] + pb[d]));
            let mut centre = [0.0; 3];
            for &c in &corners {
                let p = corner_point(c);
                for d in 0..3 {
                    centre[d] += p[d] / corners.len() as f64;
                }
            }
            let g = sub(mid, centre);
            let (from, to) = if dot(sub(pb, pa), cross(g, normal)) > 0.0 { (a, b) } else { (b, a) };
            let clash = next.insert(from, to);
            debug_assert!(clash.is_none(), "edge {from} leaves twice in case {case}");
        }
    }
    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut seen = HashSet::new();
    let mut out = Case::default();
    for start in starts {
        if !seen.insert(start) {
            continue;
        }
        let mut cycle = vec![start];
        let mut cur = next[&start];
        while cur != start {
            seen.insert(cur);
            cycle.push(cur);
            cur = next[&cur];
        }
        let n = cycle.len();
        if (2..n - 1).any(|i| share_face(cycle[0], cycle[i])) {
            let c = CENTROID + out.loops.len();
            out.triangles.extend((0..n).map(|i| [c, cycle[i], cycle[(i + 1) % n]]));
        } else {
            out.triangles.extend((1..n - 1).map(|i| [cycle[0], cycle[i], cycle[i + 1]]));
        }
        out.loops.push(cycle);
    }
    out
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Iso-surface of `values > iso` over voxel centres. The grid is padded by
/// one outside layer so surfaces are always closed.
pub fn marching_cubes(values: &[f64], dims: Dims, spacing: Spacing, iso: f64) -> Result<Mesh, EvalError> {
    if values.len() != dims.len() {
        return Err(EvalError::Shape(format!("{} values for dims {dims}", values.len())));
    }
    let outside = values.iter().copied().fold(iso, f64::min) - 1.0;
    let p = [dims.nx + 2, dims.ny + 2, dims.nz + 2];
    let sample = |i: usize, j: usize, k: usize| -> f64 {
        if i == 0 || j == 0 || k == 0 || i > dims.nx || j > dims.ny || k > dims.nz {
            outside
        } else {
            values[dims.index(i - 1, j - 1, k - 1)]
        }
    };
    let pos = |i: usize, j: usize, k: usize| -> [f64; 3] {
        [(i as f64 - 0.5) * spacing.sx, (j as f64 - 0.5) * spacing.sy, (k as f64 - 0.5) * spacing.sz]
    };
    let table = case_table();
    let mut mesh = Mesh::default();
    let mut welded: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
    for k in 0..p[2] - 1 {
        for j in 0..p[1] - 1 {
            for i in 0..p[0] - 1 {
                let mut v = [0.0; 8];
                let mut case = 0;
                for (c, o) in CORNER.iter().enumerate() {
                    v[c] = sample(i + o[0], j + o[1], k + o[2]);
                    if v[c] > iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let entry = &table[case];
                let mut edge_vertex = |e: usize, mesh: &mut Mesh| -> usize {
                    let (a, b) = edges()[e];
                    let (ca, cb) = (CORNER[a], CORNER[b]);
                    let axis = (0..3).find(|&d| ca[d] != cb[d]).expect("edge spans one axis");
                    let key = (i + ca[0], j + ca[1], k + ca[2], axis);
                    *welded.entry(key).or_insert_with(|| {
                        let t = (iso - v[a]) / (v[b] - v[a]);
                        let pa = pos(i + ca[0], j + ca[1], k + ca[2]);
                        let pb = pos(i + cb[0], j + cb[1], k + cb[2]);
                        mesh.vertices.push([0, 1, 2].map(|d| pa[d] + t * (pb[d] - pa[d])));
                        mesh.vertices.len() - 1
                    })
                };
                let mut centroids = vec![usize::MAX; entry.loops.len()];
                for tri in &entry.triangles {
                    let mut ids = [0; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        ids[slot] = if e < CENTROID {
                            edge_vertex(e, &mut mesh)
                        } else {
                            let n = e - CENTROID;
                            if centroids[n] == usize::MAX {
                                let pts: Vec<usize> = entry.loops[n].iter().map(|&x| edge_vertex(x, &mut mesh)).collect();
                                let mut c = [0.0; 3];
                                for &p in &pts {
                                    for d in 0..3 {
                                        c[d] += mesh.vertices[p][d] / pts.len() as f64;
                                    }
                                }
                                mesh.vertices.push(c);
                                centroids[n] = mesh.vertices.len() - 1;
                            }
                            centroids[n]
                        };
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

impl Mesh {
    pub fn edge_count(&self) -> usize {
        let mut e = HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                e.insert((a.min(b), a.max(b)));
            }
        }
        e.len()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Every undirected edge is shared by exactly two triangles with opposite
    /// orientation.
    pub fn is_closed_oriented(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Signed enclosed volume (positive for outward-facing triangles).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| dot(self.vertices[t[0]], cross(self.vertices[t[1]], self.vertices[t[2]])) / 6.0)
            .sum()
    }

    /// Uniform Laplacian smoothing: each pass moves every vertex `factor` of the
    /// way to the mean of its neighbours.
    pub fn laplacian_smooth(&mut self, iterations: usize, factor: f64) {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if !nbrs[a].contains(&b) {
                    nbrs[a].push(b);
                }
                if !nbrs[b].contains(&a) {
                    nbrs[b].push(a);
                }
            }
        }
        for _ in 0..iterations {
            let old = self.vertices.clone();
            for (v, n) in self.vertices.iter_mut().zip(&nbrs) {
                if n.is_empty() {
                    continue;
                }
                for d in 0..3 {
                    let mean = n.iter().map(|&u| old[u][d]).sum::<f64>() / n.len() as f64;
                    v[d] += factor * (mean - v[d]);
                }
            }
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for t in &self.triangles {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<(), EvalError> {
        let io = |e| EvalError::Io { path: path.display().to_string(), source: e };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        f.write_all(self.to_obj().as_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }
}

/// Surface of one class of a label volume.
pub fn class_mesh(labels: &[u16], dims: Dims, spacing: Spacing, class: u16) -> Result<Mesh, EvalError> {
    let v: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { 0.0 }).collect();
    marching_cubes(&v, dims, spacing, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_complementary_in_size() {
        let t = case_table();
        assert!(t[0].triangles.is_empty() && t[255].triangles.is_empty());
        assert_eq!(t[1].triangles.len(), 1);
        assert_eq!(t[3].triangles.len(), 2);
        assert_eq!(t[0b1000_0001].triangles.len(), 2);
        for c in t {
            for l in &c.loops {
                assert!(l.len() >= 3);
            }
        }
    }

    #[test]
    fn single_voxel_is_a_closed_sphere() {
        let d = Dims::cube(3);
        let mut v = vec![0.0; d.len()];
        v[d.index(1, 1, 1)] = 1.0;
        let m = marching_cubes(&v, d, Spacing::isotropic(1.0), 0.5).unwrap();
        assert_eq!(m.vertices.len(), 6);
        assert_eq!(m.triangles.len(), 8);
        assert_eq!(m.euler_characteristic(), 2);
        assert!(m.is_closed_oriented());
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn obj_is_one_based() {
        let m = Mesh { vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], triangles: vec![[0, 1, 2]] };
        assert_eq!(m.to_obj(), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    }
}
