//! Incremental 3D Delaunay tetrahedralization (Bowyer-Watson) and the
//! random watertight mesh generator used for augmentation defenses.

use crate::mesh::TriangleMesh;
use crate::scene::Point3;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, HashMap};

fn orient3d(a: Point3, b: Point3, c: Point3, d: Point3) -> f64 {
    (b - a).cross(c - a).dot(d - a)
}

/// Positive when `p` lies inside the circumsphere of the positively
/// oriented tetrahedron (a, b, c, d).
fn in_sphere(a: Point3, b: Point3, c: Point3, d: Point3, p: Point3) -> f64 {
    let rows = [a - p, b - p, c - p, d - p];
    let lift: Vec<f64> = rows.iter().map(|r| r.dot(*r)).collect();
    // 4x4 determinant | x y z lift | expanded along the lift column;
    // negated so inside comes out positive for a positively oriented tet
    let det3 = |r0: Point3, r1: Point3, r2: Point3| r0.dot(r1.cross(r2));
    lift[0] * det3(rows[1], rows[2], rows[3]) - lift[1] * det3(rows[0], rows[2], rows[3])
        + lift[2] * det3(rows[0], rows[1], rows[3])
        - lift[3] * det3(rows[0], rows[1], rows[2])
}

#[derive(Debug, Clone)]
pub struct TetComplex {
    pub points: Vec<Point3>,
    /// Positively oriented vertex index quadruples.
    pub tets: Vec<[usize; 4]>,
}

fn tet_faces(t: [usize; 4]) -> [[usize; 3]; 4] {
    let [a, b, c, d] = t;
    [[b, c, d], [a, c, d], [a, b, d], [a, b, c]]
}

fn face_key(f: [usize; 3]) -> [usize; 3] {
    let mut k = f;
    k.sort_unstable();
    k
}

/// Bowyer-Watson insertion over all points. Fails with a degeneracy
/// error when near-cospherical configurations break the cavity update;
/// callers resample and retry.
pub fn delaunay3d(points: &[Point3]) -> Result<TetComplex> {
    if points.len() < 4 {
        return Err(Error::Mesh("need at least 4 points".into()));
    }
    let centroid = points.iter().fold(Point3::ZERO, |acc, p| acc + *p) / points.len() as f64;
    let radius = points
        .iter()
        .map(|p| (*p - centroid).norm())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let s = radius * 1e4;
    let mut pts = points.to_vec();
    let n = pts.len();
    // enclosing super-tetrahedron
    pts.push(centroid + Point3::new(-s, -s, -s));
    pts.push(centroid + Point3::new(s, -s, -s) * 1.1);
    pts.push(centroid + Point3::new(0.0, s, -s) * 1.2);
    pts.push(centroid + Point3::new(0.0, 0.0, s) * 1.3);
    let mut super_tet = [n, n + 1, n + 2, n + 3];
    if orient3d(pts[super_tet[0]], pts[super_tet[1]], pts[super_tet[2]], pts[super_tet[3]]) < 0.0 {
        super_tet.swap(0, 1);
    }
    let mut tets: Vec<[usize; 4]> = vec![super_tet];

    for pi in 0..n {
        let p = pts[pi];
        // cavity: tets whose circumsphere contains p
        let mut bad = Vec::new();
        for (ti, t) in tets.iter().enumerate() {
            if in_sphere(pts[t[0]], pts[t[1]], pts[t[2]], pts[t[3]], p) > 0.0 {
                bad.push(ti);
            }
        }
        if bad.is_empty() {
            return Err(Error::Mesh("degenerate insertion: empty cavity".into()));
        }
        // boundary faces of the cavity
        // BTreeMap keeps the new-tet order independent of hasher state
        let mut face_count: BTreeMap<[usize; 3], ([usize; 3], usize)> = BTreeMap::new();
        for &ti in &bad {
            for f in tet_faces(tets[ti]) {
                let e = face_count.entry(face_key(f)).or_insert((f, 0));
                e.1 += 1;
            }
        }
        let mut keep: Vec<[usize; 4]> = Vec::with_capacity(tets.len());
        let bad_set: std::collections::HashSet<usize> = bad.iter().copied().collect();
        for (ti, t) in tets.iter().enumerate() {
            if !bad_set.contains(&ti) {
                keep.push(*t);
            }
        }
        for (f, cnt) in face_count.values() {
            if *cnt != 1 {
                continue;
            }
            let (a, b, c) = (pts[f[0]], pts[f[1]], pts[f[2]]);
            let o = orient3d(a, b, c, p);
            if o == 0.0 {
                return Err(Error::Mesh("degenerate insertion: coplanar face".into()));
            }
            let t = if o > 0.0 {
                [f[0], f[1], f[2], pi]
            } else {
                [f[0], f[2], f[1], pi]
            };
            keep.push(t);
        }
        tets = keep;
    }
    tets.retain(|t| t.iter().all(|&v| v < n));
    if tets.is_empty() {
        return Err(Error::Mesh("degenerate input: no interior tetrahedra".into()));
    }
    let complex = TetComplex { points: points.to_vec(), tets };
    // each interior face must be shared by exactly 2 tets
    let mut counts: HashMap<[usize; 3], usize> = HashMap::new();
    for t in &complex.tets {
        for f in tet_faces(*t) {
            *counts.entry(face_key(f)).or_insert(0) += 1;
        }
    }
    if counts.values().any(|&c| c > 2) {
        return Err(Error::Mesh("degenerate triangulation: overshared face".into()));
    }
    Ok(complex)
}

impl TetComplex {
    /// Faces belonging to exactly one tetrahedron, outward-oriented.
    pub fn boundary_faces(&self) -> Vec<[usize; 3]> {
        let mut counts: HashMap<[usize; 3], (usize, usize)> = HashMap::new();
        for (ti, t) in self.tets.iter().enumerate() {
            for f in tet_faces(*t) {
                let e = counts.entry(face_key(f)).or_insert((ti, 0));
                e.1 += 1;
                e.0 = ti;
            }
        }
        let mut out = Vec::new();
        for (ti, t) in self.tets.iter().enumerate() {
            for (k, f) in tet_faces(*t).into_iter().enumerate() {
                let entry = counts[&face_key(f)];
                if entry.1 == 1 && entry.0 == ti {
                    let opp = self.points[t[k]];
                    let (a, b, c) = (self.points[f[0]], self.points[f[1]], self.points[f[2]]);
                    let face = if orient3d(a, b, c, opp) > 0.0 { [f[0], f[2], f[1]] } else { f };
                    out.push(face);
                }
            }
        }
        out
    }

    /// Boundary surface as an indexed mesh with compacted vertices.
    pub fn boundary_mesh(&self) -> Result<TriangleMesh> {
        let faces = self.boundary_faces();
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut verts = Vec::new();
        let mut new_faces = Vec::with_capacity(faces.len());
        for f in faces {
            let mut nf = [0usize; 3];
            for (k, &v) in f.iter().enumerate() {
                let id = *remap.entry(v).or_insert_with(|| {
                    verts.push(self.points[v]);
                    verts.len() - 1
                });
                nf[k] = id;
            }
            new_faces.push(nf);
        }
        TriangleMesh::new(verts, new_faces)
    }

    /// True when the tetrahedra form one face-connected component.
    pub fn is_face_connected(&self) -> bool {
        if self.tets.is_empty() {
            return false;
        }
        let mut by_face: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
        for (ti, t) in self.tets.iter().enumerate() {
            for f in tet_faces(*t) {
                by_face.entry(face_key(f)).or_default().push(ti);
            }
        }
        let mut seen = vec![false; self.tets.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut visited = 1;
        while let Some(ti) = stack.pop() {
            for f in tet_faces(self.tets[ti]) {
                for &tj in &by_face[&face_key(f)] {
                    if !seen[tj] {
                        seen[tj] = true;
                        visited += 1;
                        stack.push(tj);
                    }
                }
            }
        }
        visited == self.tets.len()
    }

    /// True when every boundary edge borders exactly two boundary faces.
    pub fn boundary_is_edge_manifold(&self) -> bool {
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for f in self.boundary_faces() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edge_count.values().all(|&c| c == 2)
    }
}

/// Restart signal: every tetrahedron was removed by decimation.
struct Emptied;

fn decimate<R: Rng>(complex: &mut TetComplex, n_remove: usize, rng: &mut R) -> Option<Emptied> {
    for _ in 0..n_remove {
        // collect tets owning at least one boundary face
        let mut counts: HashMap<[usize; 3], usize> = HashMap::new();
        for t in &complex.tets {
            for f in tet_faces(*t) {
                *counts.entry(face_key(f)).or_insert(0) += 1;
            }
        }
        let boundary_tets: Vec<usize> = (0..complex.tets.len())
            .filter(|&ti| {
                tet_faces(complex.tets[ti]).iter().any(|f| counts[&face_key(*f)] == 1)
            })
            .collect();
        if boundary_tets.is_empty() {
            break;
        }
        let pick = boundary_tets[rng.gen_range(0..boundary_tets.len())];
        if complex.tets.len() == 1 {
            return Some(Emptied);
        }
        let removed = complex.tets.remove(pick);
        let ok = complex.is_face_connected() && complex.boundary_is_edge_manifold();
        if !ok {
            complex.tets.insert(pick, removed);
        }
    }
    None
}

/// Random watertight surface: Gaussian vertex samples, incremental
/// Delaunay tetrahedralization, stochastic boundary decimation, then
/// the remaining boundary faces. Restarts from fresh samples when the
/// complex empties or the point set is degenerate.
pub fn random_watertight_mesh<R: Rng>(
    n_vertices: usize,
    n_remove: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<TriangleMesh> {
    if n_vertices < 4 {
        return Err(Error::Mesh("need at least 4 vertices".into()));
    }
    if sigma <= 0.0 {
        return Err(Error::Mesh("sigma must be positive".into()));
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for _attempt in 0..64 {
        let points: Vec<Point3> = (0..n_vertices)
            .map(|_| Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
            .collect();
        let mut complex = match delaunay3d(&points) {
            Ok(c) => c,
            Err(_) => continue, // degenerate samples: resample
        };
        if decimate(&mut complex, n_remove, rng).is_some() {
            continue; // emptied: restart sampling
        }
        let mesh = match complex.boundary_mesh() {
            Ok(m) => m,
            Err(_) => continue,
        };
        if mesh.is_watertight() && mesh.signed_volume() > 0.0 {
            return Ok(mesh);
        }
    }
    Err(Error::Mesh("random mesh generation failed after 64 restarts".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn in_sphere_sign_convention() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let d = Point3::new(0.0, 0.0, 1.0);
        assert!(orient3d(a, b, c, d) > 0.0);
        assert!(in_sphere(a, b, c, d, Point3::new(0.25, 0.25, 0.25)) > 0.0);
        assert!(in_sphere(a, b, c, d, Point3::new(5.0, 5.0, 5.0)) < 0.0);
    }

    #[test]
    fn convex_hull_euler_characteristic() {
        let mut rng = StdRng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<Point3> = (0..60)
            .map(|_| Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        let complex = delaunay3d(&pts).unwrap();
        let mesh = complex.boundary_mesh().unwrap();
        assert!(mesh.is_watertight());
        assert!(mesh.signed_volume() > 0.0);
        let v = mesh.vertices.len() as i64;
        let f = mesh.faces.len() as i64;
        let e: HashSet<(usize, usize)> = mesh
            .faces
            .iter()
            .flat_map(|fc| (0..3).map(move |k| {
                let (a, b) = (fc[k], fc[(k + 1) % 3]);
                (a.min(b), a.max(b))
            }))
            .collect();
        assert_eq!(v - e.len() as i64 + f, 2);
    }

    #[test]
    fn random_meshes_watertight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.gen_range(50..=200);
            let m = rng.gen_range(0..=300);
            let mesh = random_watertight_mesh(n, m, 0.5, &mut rng).unwrap();
            assert!(mesh.is_watertight());
            assert!(mesh.signed_volume() > 0.0);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let mut r1 = ChaCha8Rng::seed_from_u64(1234);
        let mut r2 = ChaCha8Rng::seed_from_u64(1234);
        let a = random_watertight_mesh(80, 100, 0.5, &mut r1).unwrap();
        let b = random_watertight_mesh(80, 100, 0.5, &mut r2).unwrap();
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.vertices, b.vertices);
    }

    #[test]
    fn too_few_vertices_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_watertight_mesh(3, 0, 0.5, &mut rng).is_err());
        assert!(random_watertight_mesh(10, 0, 0.0, &mut rng).is_err());
    }
}
