//! LiDAR ray generation, exact ray-triangle intersection, mesh
//! rendering, and composition of rendered points into a scene.

use crate::mesh::TriangleMesh;
use crate::scene::{Aabb, Point3, PointCloud, Vec3};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Minimum hit distance; rejects self-intersection at the ray origin.
pub const EPS_T: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    /// Unit direction.
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Point3, direction: Vec3) -> Self {
        let d = direction.normalized();
        Ray { origin, direction: d }
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter (meters along the unit direction).
    pub t: f64,
    pub face_index: usize,
    /// Barycentric (u, v): point = (1-u-v)a + u b + v c.
    pub u: f64,
    pub v: f64,
}

/// Spinning-sensor beam pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Per-laser elevation angles, radians, strictly decreasing.
    pub beam_elevations: Vec<f64>,
    /// Horizontal angular resolution, radians.
    pub azimuth_step: f64,
    pub origin: Point3,
    /// Horizontal field of view [min, max] radians; rays outside are
    /// never emitted. Full sweep when the interval spans 2 pi.
    pub azimuth_fov: (f64, f64),
}

impl SensorConfig {
    /// Approximation of the Velodyne HDL-64E: 64 beams spanning +2.0
    /// to -24.8 degrees, 0.09 degree azimuth resolution.
    pub fn hdl64e() -> Self {
        let top = 2.0f64.to_radians();
        let bottom = (-24.8f64).to_radians();
        let n = 64;
        let beam_elevations = (0..n)
            .map(|i| top + (bottom - top) * i as f64 / (n - 1) as f64)
            .collect();
        SensorConfig {
            beam_elevations,
            azimuth_step: 0.09f64.to_radians(),
            origin: Point3::ZERO,
            azimuth_fov: (-std::f64::consts::PI, std::f64::consts::PI),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuth_step <= 0.0 {
            return Err(Error::Config("azimuth_step must be positive".into()));
        }
        if self.beam_elevations.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("beam elevations must be strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn direction(&self, elevation: f64, azimuth: f64) -> Vec3 {
        let (ce, se) = (elevation.cos(), elevation.sin());
        Point3::new(ce * azimuth.cos(), ce * azimuth.sin(), se)
    }
}

/// Möller-Trumbore ray/triangle intersection. Returns `None` for
/// misses and for hits closer than [`EPS_T`].
pub fn ray_triangle_intersect(ray: &Ray, a: Point3, b: Point3, c: Point3) -> Option<Hit> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = ray.direction.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-14 {
        return None; // parallel to the triangle plane
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = ray.direction.dot(qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t <= EPS_T {
        return None;
    }
    Some(Hit { t, face_index: 0, u, v })
}

/// Per-vertex gradient factors of the hit distance: `dt/dvertex_k =
/// w_k * n / (n . d)` with barycentric weights `w = (1-u-v, u, v)`.
/// The hit point moves along the ray, so `dpoint/dvertex_k = d (x)
/// grad_k`.
pub fn hit_distance_gradients(ray: &Ray, a: Point3, b: Point3, c: Point3, hit: &Hit) -> [Vec3; 3] {
    let n = (b - a).cross(c - a);
    let denom = n.dot(ray.direction);
    let scaled = n / denom;
    let w0 = 1.0 - hit.u - hit.v;
    [scaled * w0, scaled * hit.u, scaled * hit.v]
}

fn ray_aabb(ray: &Ray, b: &Aabb) -> bool {
    let mut tmin = 0.0f64;
    let mut tmax = f64::INFINITY;
    let o = [ray.origin.x, ray.origin.y, ray.origin.z];
    let d = [ray.direction.x, ray.direction.y, ray.direction.z];
    let lo = [b.min.x, b.min.y, b.min.z];
    let hi = [b.max.x, b.max.y, b.max.z];
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let mut t0 = (lo[k] - o[k]) * inv;
        let mut t1 = (hi[k] - o[k]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        tmin = tmin.max(t0);
        tmax = tmax.min(t1);
        if tmin > tmax {
            return false;
        }
    }
    true
}

/// Flat two-level acceleration: mesh AABB plus per-face AABBs grouped
/// into fixed-size buckets. Nearest-hit results are identical to brute
/// force because every candidate face is still tested exactly.
#[derive(Debug, Clone)]
pub struct MeshRaycaster<'a> {
    mesh: &'a TriangleMesh,
    mesh_aabb: Option<Aabb>,
    buckets: Vec<(Aabb, Vec<usize>)>,
}

const BUCKET_SIZE: usize = 16;

impl<'a> MeshRaycaster<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let mesh_aabb = mesh.aabb();
        // order faces along their centroid's dominant-extent axis so
        // buckets stay spatially tight
        let mut order: Vec<usize> = (0..mesh.faces.len()).collect();
        if let Some(bb) = mesh_aabb {
            let ext = bb.max - bb.min;
            let axis = if ext.x >= ext.y && ext.x >= ext.z {
                0
            } else if ext.y >= ext.z {
                1
            } else {
                2
            };
            let centroid = |fi: usize| {
                let f = mesh.faces[fi];
                let c = (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
                match axis {
                    0 => c.x,
                    1 => c.y,
                    _ => c.z,
                }
            };
            order.sort_by(|&a, &b| centroid(a).partial_cmp(&centroid(b)).unwrap());
        }
        let mut buckets = Vec::new();
        for chunk in order.chunks(BUCKET_SIZE) {
            let pts: Vec<Point3> = chunk
                .iter()
                .flat_map(|&fi| mesh.faces[fi].iter().map(|&v| mesh.vertices[v]))
                .collect();
            if let Some(bb) = Aabb::from_points(&pts) {
                buckets.push((bb, chunk.to_vec()));
            }
        }
        MeshRaycaster { mesh, mesh_aabb, buckets }
    }

    /// Nearest hit along the ray, ties broken by lowest face index.
    pub fn cast(&self, ray: &Ray) -> Option<Hit> {
        let bb = self.mesh_aabb?;
        if !ray_aabb(ray, &bb) {
            return None;
        }
        let mut best: Option<Hit> = None;
        for (bb, faces) in &self.buckets {
            if !ray_aabb(ray, bb) {
                continue;
            }
            for &fi in faces {
                let f = self.mesh.faces[fi];
                if let Some(mut h) = ray_triangle_intersect(
                    ray,
                    self.mesh.vertices[f[0]],
                    self.mesh.vertices[f[1]],
                    self.mesh.vertices[f[2]],
                ) {
                    h.face_index = fi;
                    let better = match &best {
                        None => true,
                        Some(b) => {
                            h.t < b.t || (h.t == b.t && h.face_index < b.face_index)
                        }
                    };
                    if better {
                        best = Some(h);
                    }
                }
            }
        }
        best
    }
}

/// All sensor lattice rays whose direction intersects `target`,
/// deterministic given config and box. The azimuth lattice is anchored
/// at zero so results do not depend on the box query order.
pub fn sample_rays(config: &SensorConfig, target: &Aabb) -> Result<Vec<Ray>> {
    config.validate()?;
    if target.contains(config.origin) {
        return Err(Error::Config("target AABB contains the sensor origin".into()));
    }
    // azimuth interval spanned by the 8 corners, relative to center
    let center = target.center() - config.origin;
    let center_az = center.y.atan2(center.x);
    let mut min_rel = f64::INFINITY;
    let mut max_rel = f64::NEG_INFINITY;
    for &x in &[target.min.x, target.max.x] {
        for &y in &[target.min.y, target.max.y] {
            let az = (y - config.origin.y).atan2(x - config.origin.x);
            let rel = crate::scene::wrap_angle(az - center_az);
            min_rel = min_rel.min(rel);
            max_rel = max_rel.max(rel);
        }
    }
    // margin of one step on each side
    let k_lo = ((center_az + min_rel) / config.azimuth_step).floor() as i64 - 1;
    let k_hi = ((center_az + max_rel) / config.azimuth_step).ceil() as i64 + 1;
    let mut rays = Vec::new();
    for &elev in &config.beam_elevations {
        for k in k_lo..=k_hi {
            let az = crate::scene::wrap_angle(k as f64 * config.azimuth_step);
            if az < config.azimuth_fov.0 || az > config.azimuth_fov.1 {
                continue;
            }
            let ray = Ray::new(config.origin, config.direction(elev, az));
            if ray_aabb(&ray, target) {
                rays.push(ray);
            }
        }
    }
    Ok(rays)
}

/// Nearest-hit rendering. Misses produce no point; hits are returned
/// with the index of the ray that produced them.
pub fn render_mesh_hits(mesh: &TriangleMesh, rays: &[Ray]) -> Vec<(usize, Hit)> {
    let caster = MeshRaycaster::new(mesh);
    let mut out = Vec::new();
    for (ri, ray) in rays.iter().enumerate() {
        if let Some(h) = caster.cast(ray) {
            out.push((ri, h));
        }
    }
    out
}

pub fn render_mesh(mesh: &TriangleMesh, rays: &[Ray]) -> PointCloud {
    PointCloud::new(
        render_mesh_hits(mesh, rays)
            .into_iter()
            .map(|(ri, h)| rays[ri].at(h.t))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeMode {
    /// Plain concatenation of original and rendered points.
    Union,
    /// Drop original points whose ray hits the mesh first, then
    /// concatenate. Extension beyond plain union: physical
    /// realizability implies occlusion.
    Occlude,
}

pub fn compose_scene(
    original: &PointCloud,
    rendered: &PointCloud,
    mesh: &TriangleMesh,
    mode: ComposeMode,
    sensor_origin: Point3,
) -> PointCloud {
    let mut points = match mode {
        ComposeMode::Union => original.points.clone(),
        ComposeMode::Occlude => {
            let caster = MeshRaycaster::new(mesh);
            original
                .points
                .iter()
                .copied()
                .filter(|p| {
                    let d = *p - sensor_origin;
                    let range = d.norm();
                    if range <= EPS_T {
                        return true;
                    }
                    let ray = Ray::new(sensor_origin, d);
                    match caster.cast(&ray) {
                        Some(h) => h.t >= range - 1e-9,
                        None => true,
                    }
                })
                .collect()
        }
    };
    points.extend_from_slice(&rendered.points);
    PointCloud::new(points)
}
