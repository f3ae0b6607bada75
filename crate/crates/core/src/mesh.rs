//! Indexed triangle meshes: construction, validation, Laplacian
//! regularization, and the icosphere template.

use crate::scene::{Aabb, Point3};
use crate::{Error, Result};
use std::collections::HashMap;

/// Indexed triangle surface. Faces are counter-clockwise when viewed
/// from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = TriangleMesh { vertices, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v >= self.vertices.len() {
                    return Err(Error::Mesh(format!(
                        "face {fi} references out-of-range vertex index {v}"
                    )));
                }
            }
            let [a, b, c] = *f;
            if a == b || b == c || a == c {
                return Err(Error::Mesh(format!("face {fi} repeats a vertex")));
            }
            let area2 = (self.vertices[b] - self.vertices[a])
                .cross(self.vertices[c] - self.vertices[a])
                .norm();
            if area2 == 0.0 {
                return Err(Error::Mesh(format!("face {fi} is degenerate (zero area)")));
            }
        }
        for (vi, v) in self.vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Mesh(format!("vertex {vi} is not finite")));
            }
        }
        Ok(())
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// Undirected edge -> number of incident faces.
    pub fn edge_face_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut m = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *m.entry(key).or_insert(0) += 1;
            }
        }
        m
    }

    /// Watertight = every undirected edge borders exactly two faces and
    /// the two directed half-edges run in opposite directions.
    pub fn is_watertight(&self) -> bool {
        for (_, c) in self.edge_face_counts() {
            if c != 2 {
                return false;
            }
        }
        // opposite orientation: each directed edge appears exactly once
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                *seen.entry(e).or_insert(0) += 1;
            }
        }
        seen.values().all(|&c| c == 1)
    }

    /// Signed volume via the divergence theorem; positive for outward
    /// orientation of a closed surface.
    pub fn signed_volume(&self) -> f64 {
        let mut v = 0.0;
        for f in &self.faces {
            let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
            v += a.dot(b.cross(c));
        }
        v / 6.0
    }

    /// 1-ring neighborhoods over undirected edges.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if !nbrs[a].contains(&b) {
                    nbrs[a].push(b);
                }
                if !nbrs[b].contains(&a) {
                    nbrs[b].push(a);
                }
            }
        }
        nbrs
    }

    pub fn transformed(&self, t: &crate::scene::RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(*v)).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Sum over vertices of the squared distance to the centroid of the
/// 1-ring neighbors.
pub fn laplacian_loss(mesh: &TriangleMesh) -> Result<f64> {
    let nbrs = mesh.vertex_neighbors();
    let mut loss = 0.0;
    for (i, n) in nbrs.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::Mesh(format!("vertex {i} is isolated")));
        }
        let mut centroid = Point3::ZERO;
        for &j in n {
            centroid += mesh.vertices[j];
        }
        centroid = centroid / n.len() as f64;
        let d = mesh.vertices[i] - centroid;
        loss += d.dot(d);
    }
    Ok(loss)
}

/// Gradient of [`laplacian_loss`] with respect to each vertex.
pub fn laplacian_loss_grad(mesh: &TriangleMesh) -> Vec<Point3> {
    let nbrs = mesh.vertex_neighbors();
    let mut delta = vec![Point3::ZERO; mesh.vertices.len()];
    for (i, n) in nbrs.iter().enumerate() {
        let mut centroid = Point3::ZERO;
        for &j in n {
            centroid += mesh.vertices[j];
        }
        centroid = centroid / n.len() as f64;
        delta[i] = mesh.vertices[i] - centroid;
    }
    let mut grad = vec![Point3::ZERO; mesh.vertices.len()];
    for (i, n) in nbrs.iter().enumerate() {
        grad[i] += delta[i] * 2.0;
        // v_i also appears in the centroid term of each neighbor j
        for &j in n {
            grad[i] += delta[j] * (-2.0 / nbrs[j].len() as f64);
        }
    }
    grad
}

/// Unit icosphere by repeated 4-way subdivision of an icosahedron.
/// Subdivision level 2 gives 162 vertices and 320 faces.
pub fn icosphere(subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Point3::new(x, y, z).normalized())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = ((vertices[a] + vertices[b]) * 0.5).normalized();
                vertices.push(p);
                vertices.len() - 1
            })
        };
        for f in &faces {
            let [a, b, c] = *f;
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            new_faces.push([a, ab, ca]);
            new_faces.push([b, bc, ab]);
            new_faces.push([c, ca, bc]);
            new_faces.push([ab, bc, ca]);
        }
        faces = new_faces;
    }
    TriangleMesh { vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosahedron_counts() {
        let m = icosphere(0);
        assert_eq!(m.vertices.len(), 12);
        assert_eq!(m.faces.len(), 20);
    }

    #[test]
    fn icosphere_level2_matches_template_size() {
        let m = icosphere(2);
        assert_eq!(m.vertices.len(), 162);
        assert_eq!(m.faces.len(), 320);
    }

    #[test]
    fn icosphere_counts_formula() {
        for k in 0..4u32 {
            let m = icosphere(k);
            assert_eq!(m.vertices.len(), 10 * 4usize.pow(k) + 2);
            assert_eq!(m.faces.len(), 20 * 4usize.pow(k));
        }
    }

    #[test]
    fn icosphere_unit_radius_and_watertight() {
        let m = icosphere(2);
        for v in &m.vertices {
            assert!((v.norm() - 1.0).abs() < 1e-9);
        }
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
    }

    fn tetra() -> TriangleMesh {
        // regular tetrahedron, vertices at unit distance from centroid
        let s = 1.0 / 3.0f64.sqrt();
        let verts = vec![
            Point3::new(s, s, s),
            Point3::new(s, -s, -s),
            Point3::new(-s, s, -s),
            Point3::new(-s, -s, s),
        ];
        TriangleMesh::new(verts, vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]).unwrap()
    }

    #[test]
    fn laplacian_regular_tetrahedron() {
        // neighbor sum = -v_i, so delta_i = (4/3) v_i and loss = 4*(16/9)
        let l = laplacian_loss(&tetra()).unwrap();
        assert!((l - 64.0 / 9.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn laplacian_zero_at_centroid_fixed_point() {
        // flat fan: center vertex at centroid of a symmetric ring has
        // zero contribution; use a degenerate-free closed octahedron
        // whose every vertex is the centroid of its neighbors? the
        // octahedron satisfies neighbor-mean = 0 = v only at origin, so
        // instead test quadratic homogeneity and nonnegativity.
        let m = icosphere(1);
        let l1 = laplacian_loss(&m).unwrap();
        assert!(l1 >= 0.0);
        let scaled = TriangleMesh {
            vertices: m.vertices.iter().map(|v| *v * 3.0).collect(),
            faces: m.faces.clone(),
        };
        let l9 = laplacian_loss(&scaled).unwrap();
        assert!((l9 - 9.0 * l1).abs() < 1e-9 * l9.max(1.0));
    }

    #[test]
    fn laplacian_isolated_vertex_errors() {
        let mut m = tetra();
        m.vertices.push(Point3::new(5.0, 5.0, 5.0));
        assert!(laplacian_loss(&m).is_err());
    }

    #[test]
    fn laplacian_grad_matches_finite_differences() {
        let mut m = icosphere(0);
        // perturb away from symmetry
        for (i, v) in m.vertices.iter_mut().enumerate() {
            v.x += 0.01 * (i as f64).sin();
            v.y -= 0.02 * (i as f64).cos();
        }
        let grad = laplacian_loss_grad(&m);
        let h = 1e-6;
        for i in 0..m.vertices.len() {
            for axis in 0..3 {
                let mut mp = m.clone();
                let mut mm = m.clone();
                match axis {
                    0 => {
                        mp.vertices[i].x += h;
                        mm.vertices[i].x -= h;
                    }
                    1 => {
                        mp.vertices[i].y += h;
                        mm.vertices[i].y -= h;
                    }
                    _ => {
                        mp.vertices[i].z += h;
                        mm.vertices[i].z -= h;
                    }
                }
                let fd =
                    (laplacian_loss(&mp).unwrap() - laplacian_loss(&mm).unwrap()) / (2.0 * h);
                let an = match axis {
                    0 => grad[i].x,
                    1 => grad[i].y,
                    _ => grad[i].z,
                };
                assert!((fd - an).abs() < 1e-5, "v{i} axis{axis}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn invalid_meshes_rejected() {
        let verts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        assert!(TriangleMesh::new(verts.clone(), vec![[0, 1, 5]]).is_err());
        assert!(TriangleMesh::new(verts, vec![[0, 1, 1]]).is_err());
    }
}
