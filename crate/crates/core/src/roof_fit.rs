//! Rooftop localization from partial vehicle point clouds.
//!
//! A bank of car-like signed distance functions is projected into a
//! low-dimensional latent space with PCA. For a target vehicle, the
//! latent code minimizing the squared SDF values of its points is
//! fitted, the surface is extracted with marching cubes, and the
//! vertices in the top 0.2 m of the model approximate the roof region.
//!
//! Canonical frame: the label box maps to `[-0.5, 0.5]^3` (per-axis
//! normalization by the box extents); the SDF grid covers 1.2x that.

use crate::mc_tables::{EDGE_CORNERS, TRIANGLE_TABLE};
use crate::mesh::TriangleMesh;
use crate::scene::{BoxBev, Point3, PointCloud, RigidTransform};
use crate::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::collections::HashMap;
use std::io::{Read as _, Write as _};
use std::path::Path;

/// Node-centered sampling lattice shared by every grid in a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    /// Position of node (0, 0, 0) in canonical coordinates.
    pub origin: Point3,
    pub spacing: [f64; 3],
}

impl GridSpec {
    /// Default 64 x 64 x 48 lattice over [-0.6, 0.6]^3.
    pub fn default_canonical() -> Self {
        let dims = [64usize, 64, 48];
        let lo = -0.6;
        let hi = 0.6;
        let spacing = [
            (hi - lo) / (dims[0] - 1) as f64,
            (hi - lo) / (dims[1] - 1) as f64,
            (hi - lo) / (dims[2] - 1) as f64,
        ];
        GridSpec { dims, origin: Point3::new(lo, lo, lo), spacing }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.origin
            + Point3::new(
                i as f64 * self.spacing[0],
                j as f64 * self.spacing[1],
                k as f64 * self.spacing[2],
            )
    }

    /// Trilinear weights for point `p`: the 8 surrounding node indices
    /// with their weights. Errors when `p` is outside the lattice.
    pub fn trilinear(&self, p: Point3) -> Result<[(usize, f64); 8]> {
        let u = [
            (p.x - self.origin.x) / self.spacing[0],
            (p.y - self.origin.y) / self.spacing[1],
            (p.z - self.origin.z) / self.spacing[2],
        ];
        let mut i0 = [0usize; 3];
        let mut f = [0.0f64; 3];
        for a in 0..3 {
            if u[a] < 0.0 || u[a] > (self.dims[a] - 1) as f64 {
                return Err(Error::Prior(format!(
                    "point outside grid bounds on axis {a}: {}",
                    u[a]
                )));
            }
            let fl = u[a].floor().min((self.dims[a] - 2) as f64);
            i0[a] = fl as usize;
            f[a] = u[a] - fl;
        }
        let mut out = [(0usize, 0.0f64); 8];
        let mut n = 0;
        for dz in 0..2usize {
            for dy in 0..2usize {
                for dx in 0..2usize {
                    let w = (if dx == 0 { 1.0 - f[0] } else { f[0] })
                        * (if dy == 0 { 1.0 - f[1] } else { f[1] })
                        * (if dz == 0 { 1.0 - f[2] } else { f[2] });
                    out[n] = (self.index(i0[0] + dx, i0[1] + dy, i0[2] + dz), w);
                    n += 1;
                }
            }
        }
        Ok(out)
    }

    pub fn sample(&self, values: &[f64], p: Point3) -> Result<f64> {
        Ok(self
            .trilinear(p)?
            .iter()
            .map(|&(idx, w)| values[idx] * w)
            .sum())
    }
}

/// Parametric car-like shape: a body slab plus a cabin block, both
/// rounded boxes, in canonical coordinates (ground at z = -0.5, roof
/// at z = +0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarShape {
    /// Body height as a fraction of total height.
    pub body_height: f64,
    /// Cabin length as a fraction of total length.
    pub cabin_length: f64,
    /// Cabin center x offset (canonical units).
    pub cabin_offset: f64,
    /// Cabin width as a fraction of total width.
    pub cabin_width: f64,
}

fn rounded_box(p: Point3, center: Point3, half: Point3, r: f64) -> f64 {
    let q = Point3::new(
        (p.x - center.x).abs() - (half.x - r),
        (p.y - center.y).abs() - (half.y - r),
        (p.z - center.z).abs() - (half.z - r),
    );
    let outside = Point3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    let inside = q.x.max(q.y.max(q.z)).min(0.0);
    outside + inside - r
}

impl CarShape {
    pub fn sdf(&self, p: Point3) -> f64 {
        let r = 0.03;
        let hb = self.body_height;
        let body = rounded_box(
            p,
            Point3::new(0.0, 0.0, -0.5 + hb / 2.0),
            Point3::new(0.5, 0.5, hb / 2.0),
            r,
        );
        let hc = 1.0 - hb;
        let cabin = rounded_box(
            p,
            Point3::new(self.cabin_offset, 0.0, -0.5 + hb + hc / 2.0),
            Point3::new(self.cabin_length / 2.0, self.cabin_width / 2.0, hc / 2.0),
            r,
        );
        body.min(cabin)
    }

    /// True cabin-roof centroid in canonical coordinates.
    pub fn roof_center(&self) -> Point3 {
        Point3::new(self.cabin_offset, 0.0, 0.5)
    }
}

/// Deterministic parametric family used as the default shape bank.
pub fn default_car_family() -> Vec<CarShape> {
    let mut shapes = Vec::new();
    for &body_height in &[0.50, 0.56, 0.62, 0.68] {
        for &cabin_offset in &[-0.14, -0.04, 0.06] {
            shapes.push(CarShape {
                body_height,
                cabin_length: 0.44 + 0.5 * (body_height - 0.5),
                cabin_offset,
                cabin_width: 0.82,
            });
        }
    }
    shapes
}

/// Sampled SDF grids on a common lattice.
#[derive(Debug, Clone)]
pub struct VehicleShapeBank {
    pub spec: GridSpec,
    pub grids: Vec<Vec<f64>>,
}

impl VehicleShapeBank {
    pub fn from_shapes(shapes: &[CarShape], spec: GridSpec) -> Self {
        let mut grids = Vec::with_capacity(shapes.len());
        for s in shapes {
            let mut g = vec![0.0; spec.len()];
            for k in 0..spec.dims[2] {
                for j in 0..spec.dims[1] {
                    for i in 0..spec.dims[0] {
                        g[spec.index(i, j, k)] = s.sdf(spec.node(i, j, k));
                    }
                }
            }
            grids.push(g);
        }
        VehicleShapeBank { spec, grids }
    }

    pub fn default_bank() -> Self {
        Self::from_shapes(&default_car_family(), GridSpec::default_canonical())
    }
}

/// PCA mean and orthonormal principal-component grids.
#[derive(Debug, Clone)]
pub struct LatentShapePrior {
    pub spec: GridSpec,
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

impl LatentShapePrior {
    pub fn k(&self) -> usize {
        self.basis.len()
    }

    /// Grid of `mean + sum_j z_j basis_j`.
    pub fn combined_grid(&self, z: &[f64]) -> Vec<f64> {
        let mut g = self.mean.clone();
        for (j, b) in self.basis.iter().enumerate() {
            let zj = z[j];
            if zj != 0.0 {
                for (gi, bi) in g.iter_mut().zip(b) {
                    *gi += zj * bi;
                }
            }
        }
        g
    }
}

/// Snapshot-method PCA over the centered SDF grids.
pub fn build_prior(bank: &VehicleShapeBank, k: usize) -> Result<LatentShapePrior> {
    let s = bank.grids.len();
    if k > s {
        return Err(Error::Prior(format!("k = {k} exceeds bank size {s}")));
    }
    let n = bank.spec.len();
    let mut mean = vec![0.0; n];
    for g in &bank.grids {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / s as f64;
        }
    }
    let centered: Vec<Vec<f64>> = bank
        .grids
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut basis = Vec::with_capacity(k);
    for &ei in order.iter().take(k) {
        let mut comp = vec![0.0; n];
        for i in 0..s {
            let u = eig.eigenvectors[(i, ei)];
            if u != 0.0 {
                for (c, x) in comp.iter_mut().zip(&centered[i]) {
                    *c += u * x;
                }
            }
        }
        let norm: f64 = comp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for c in &mut comp {
                *c /= norm;
            }
        }
        basis.push(comp);
    }
    Ok(LatentShapePrior { spec: bank.spec.clone(), mean, basis })
}

/// Trilinear SDF evaluation at a canonical-frame point.
pub fn sdf_eval(prior: &LatentShapePrior, z: &[f64], p: Point3) -> Result<f64> {
    let weights = prior.spec.trilinear(p)?;
    let mut v = 0.0;
    for &(idx, w) in &weights {
        let mut g = prior.mean[idx];
        for (j, b) in prior.basis.iter().enumerate() {
            g += z[j] * b[idx];
        }
        v += w * g;
    }
    Ok(v)
}

/// Sensor-frame point -> canonical frame of the label box.
pub fn to_canonical(b: &BoxBev, p: Point3) -> Point3 {
    let (c, s) = (b.alpha.cos(), b.alpha.sin());
    let dx = p.x - b.x;
    let dy = p.y - b.y;
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    let lz = p.z - (b.z_min + b.z_max) / 2.0;
    Point3::new(lx / b.w, ly / b.h, lz / (b.z_max - b.z_min))
}

/// Canonical-frame point -> sensor frame.
pub fn from_canonical(b: &BoxBev, p: Point3) -> Point3 {
    let (c, s) = (b.alpha.cos(), b.alpha.sin());
    let lx = p.x * b.w;
    let ly = p.y * b.h;
    Point3::new(
        b.x + c * lx - s * ly,
        b.y + s * lx + c * ly,
        (b.z_min + b.z_max) / 2.0 + p.z * (b.z_max - b.z_min),
    )
}

/// Least-squares latent fit of the box points: minimizes the sum of
/// squared interpolated SDF values by monotone gradient descent with
/// backtracking, until the relative decrease drops below 1e-6 or 500
/// iterations.
pub fn fit_latent(prior: &LatentShapePrior, points: &PointCloud, b: &BoxBev) -> Result<Vec<f64>> {
    if points.len() < 10 {
        return Err(Error::Prior(format!("need at least 10 points, got {}", points.len())));
    }
    let k = prior.k();
    // interpolation is linear in the grid, so each point contributes
    // a fixed (mean value, basis values) pair
    let mut consts = Vec::with_capacity(points.len());
    let mut coeffs = Vec::with_capacity(points.len());
    for p in &points.points {
        let weights = prior.spec.trilinear(to_canonical(b, *p))?;
        let mut a = 0.0;
        let mut g = vec![0.0; k];
        for &(idx, w) in &weights {
            a += w * prior.mean[idx];
            for (j, basis) in prior.basis.iter().enumerate() {
                g[j] += w * basis[idx];
            }
        }
        consts.push(a);
        coeffs.push(g);
    }
    let objective = |z: &[f64]| -> f64 {
        consts
            .iter()
            .zip(&coeffs)
            .map(|(a, g)| {
                let r = a + g.iter().zip(z).map(|(gi, zi)| gi * zi).sum::<f64>();
                r * r
            })
            .sum()
    };
    let mut z = vec![0.0; k];
    if k == 0 {
        return Ok(z);
    }
    let mut f = objective(&z);
    let mut step = 1e-2;
    for _ in 0..500 {
        let mut grad = vec![0.0; k];
        for (a, g) in consts.iter().zip(&coeffs) {
            let r = a + g.iter().zip(&z).map(|(gi, zi)| gi * zi).sum::<f64>();
            for (gj, gi) in grad.iter_mut().zip(g) {
                *gj += 2.0 * r * gi;
            }
        }
        let gnorm: f64 = grad.iter().map(|v| v * v).sum::<f64>();
        if gnorm < 1e-18 {
            break;
        }
        // backtracking line search keeps the objective non-increasing
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> =
                z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
            let ft = objective(&trial);
            if ft <= f {
                let rel = (f - ft) / f.max(1e-30);
                z = trial;
                f = ft;
                step *= 1.5;
                improved = true;
                if rel < 1e-6 {
                    return Ok(z);
                }
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(z)
}

/// Marching cubes over a sampled grid at iso level 0. Vertices on
/// shared cell edges are deduplicated so closed level sets produce
/// watertight meshes.
pub fn marching_cubes(spec: &GridSpec, values: &[f64]) -> Result<TriangleMesh> {
    let iso = 0.0;
    // nudge exact-iso samples so crossings are never on a node
    let val = |idx: usize| {
        let v = values[idx];
        if v == iso {
            1e-12
        } else {
            v
        }
    };
    let [nx, ny, nz] = spec.dims;
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize, usize, u8), usize> = HashMap::new();
    let corner_offsets = [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ];
    for ck in 0..nz - 1 {
        for cj in 0..ny - 1 {
            for ci in 0..nx - 1 {
                let mut corner_vals = [0.0f64; 8];
                let mut config = 0usize;
                for (c, off) in corner_offsets.iter().enumerate() {
                    let v = val(spec.index(ci + off[0], cj + off[1], ck + off[2]));
                    corner_vals[c] = v;
                    if v < iso {
                        config |= 1 << c;
                    }
                }
                if config == 0 || config == 255 {
                    continue;
                }
                let tri = &TRIANGLE_TABLE[config];
                let mut edge_ids = [usize::MAX; 12];
                for e in 0..12 {
                    if !tri.contains(&(e as i8)) {
                        continue;
                    }
                    let [c0, c1] = EDGE_CORNERS[e];
                    let (o0, o1) = (corner_offsets[c0], corner_offsets[c1]);
                    // global edge key: lower node plus axis
                    let axis = if o0[0] != o1[0] {
                        0u8
                    } else if o0[1] != o1[1] {
                        1
                    } else {
                        2
                    };
                    let base = (
                        ci + o0[0].min(o1[0]),
                        cj + o0[1].min(o1[1]),
                        ck + o0[2].min(o1[2]),
                        axis,
                    );
                    let id = *edge_vertex.entry(base).or_insert_with(|| {
                        // interpolate from the lower global node so the
                        // two adjacent cells agree bit-exactly
                        let lo = spec.index(base.0, base.1, base.2);
                        let mut hi_idx = [base.0, base.1, base.2];
                        hi_idx[axis as usize] += 1;
                        let hi = spec.index(hi_idx[0], hi_idx[1], hi_idx[2]);
                        let v0 = val(lo);
                        let v1 = val(hi);
                        let t = (iso - v0) / (v1 - v0);
                        let p0 = spec.node(base.0, base.1, base.2);
                        let p1 = spec.node(hi_idx[0], hi_idx[1], hi_idx[2]);
                        vertices.push(p0 + (p1 - p0) * t);
                        vertices.len() - 1
                    });
                    edge_ids[e] = id;
                }
                let mut t = 0;
                while t < 16 && tri[t] >= 0 {
                    let a = edge_ids[tri[t] as usize];
                    let b = edge_ids[tri[t + 1] as usize];
                    let c = edge_ids[tri[t + 2] as usize];
                    if a != b && b != c && a != c {
                        // table winding is inward for the negative-inside
                        // convention; flip for outward normals
                        faces.push([a, c, b]);
                    }
                    t += 3;
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::Prior("level set is empty within the grid".into()));
    }
    // drop zero-area faces that survive the index check
    let mesh = TriangleMesh {
        vertices,
        faces,
    };
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .copied()
        .filter(|f| {
            (mesh.vertices[f[1]] - mesh.vertices[f[0]])
                .cross(mesh.vertices[f[2]] - mesh.vertices[f[0]])
                .norm()
                > 0.0
        })
        .collect();
    let mesh = TriangleMesh { vertices: mesh.vertices, faces };
    if mesh.is_watertight() && mesh.signed_volume() < 0.0 {
        return Err(Error::Prior("extracted surface has inverted orientation".into()));
    }
    Ok(mesh)
}

/// Zero level set of the prior at latent code `z`, canonical frame.
pub fn extract_mesh(prior: &LatentShapePrior, z: &[f64]) -> Result<TriangleMesh> {
    marching_cubes(&prior.spec, &prior.combined_grid(z))
}

/// Fitted model denormalized into the sensor frame of its label box.
pub fn extract_mesh_sensor_frame(
    prior: &LatentShapePrior,
    z: &[f64],
    b: &BoxBev,
) -> Result<TriangleMesh> {
    let mut mesh = extract_mesh(prior, z)?;
    for v in &mut mesh.vertices {
        *v = from_canonical(b, *v);
    }
    Ok(mesh)
}

/// Rooftop approximation: vertices in the top 0.2 m of the model.
#[derive(Debug, Clone)]
pub struct RoofRegion {
    /// Horizontal centroid of the region at the region's max height.
    pub center: Point3,
    pub vertices: Vec<Point3>,
}

pub const ROOF_BAND_M: f64 = 0.2;

pub fn roof_region(fitted: &TriangleMesh) -> Result<RoofRegion> {
    if fitted.vertices.is_empty() {
        return Err(Error::Prior("empty fitted mesh".into()));
    }
    let z_max = fitted.vertices.iter().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
    let vertices: Vec<Point3> = fitted
        .vertices
        .iter()
        .copied()
        .filter(|v| v.z >= z_max - ROOF_BAND_M)
        .collect();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for v in &vertices {
        cx += v.x;
        cy += v.y;
    }
    let n = vertices.len() as f64;
    Ok(RoofRegion { center: Point3::new(cx / n, cy / n, z_max), vertices })
}

/// Placement of the adversary: rotate by the box heading about z, then
/// translate to the roof center.
pub fn placement_transform(b: &BoxBev, roof_center: Point3) -> RigidTransform {
    RigidTransform::yaw_translation(b.alpha, roof_center)
}

/// Fits the roof of one labeled vehicle: latent fit, surface
/// extraction, roof band, placement transform.
pub fn fit_roof(
    prior: &LatentShapePrior,
    cloud: &PointCloud,
    b: &BoxBev,
) -> Result<(Vec<f64>, RoofRegion, RigidTransform)> {
    let points = crate::scene::points_in_box(cloud, b);
    let z = fit_latent(prior, &points, b)?;
    let mesh = extract_mesh_sensor_frame(prior, &z, b)?;
    let roof = roof_region(&mesh)?;
    let t = placement_transform(b, roof.center);
    Ok((z, roof, t))
}

/// Binary prior file: magic, dims, k, origin, spacing, then mean and
/// basis grids as little-endian f32.
pub fn save_prior(prior: &LatentShapePrior, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"RAPR")?;
    for d in prior.spec.dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_u32::<LittleEndian>(prior.k() as u32)?;
    for v in [prior.spec.origin.x, prior.spec.origin.y, prior.spec.origin.z] {
        w.write_f64::<LittleEndian>(v)?;
    }
    for v in prior.spec.spacing {
        w.write_f64::<LittleEndian>(v)?;
    }
    for v in &prior.mean {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    for b in &prior.basis {
        for v in b {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_prior(path: &Path) -> Result<LatentShapePrior> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != b"RAPR" {
        return Err(Error::Prior("bad prior file magic".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    if dims.iter().any(|&d| d < 2 || d > 4096) {
        return Err(Error::Prior(format!("implausible grid dims {dims:?}")));
    }
    let k = r.read_u32::<LittleEndian>()? as usize;
    let origin = Point3::new(
        r.read_f64::<LittleEndian>()?,
        r.read_f64::<LittleEndian>()?,
        r.read_f64::<LittleEndian>()?,
    );
    let mut spacing = [0.0f64; 3];
    for s in &mut spacing {
        *s = r.read_f64::<LittleEndian>()?;
    }
    let spec = GridSpec { dims, origin, spacing };
    let n = spec.len();
    let read_grid = |r: &mut std::io::BufReader<std::fs::File>| -> Result<Vec<f64>> {
        let mut g = Vec::with_capacity(n);
        for _ in 0..n {
            g.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Ok(g)
    };
    let mean = read_grid(&mut r)?;
    let mut basis = Vec::with_capacity(k);
    for _ in 0..k {
        basis.push(read_grid(&mut r)?);
    }
    Ok(LatentShapePrior { spec, mean, basis })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GridSpec {
        let dims = [32usize, 32, 24];
        let lo = -0.6;
        let hi = 0.6;
        GridSpec {
            dims,
            origin: Point3::new(lo, lo, lo),
            spacing: [
                (hi - lo) / 31.0,
                (hi - lo) / 31.0,
                (hi - lo) / 23.0,
            ],
        }
    }

    #[test]
    fn identical_bank_has_zero_variance() {
        let shape = default_car_family()[0];
        let bank = VehicleShapeBank::from_shapes(&[shape, shape, shape], small_spec());
        let prior = build_prior(&bank, 2).unwrap();
        for b in &prior.basis {
            let norm: f64 = b.iter().map(|v| v * v).sum();
            assert!(norm < 1e-12, "components of an identical bank must vanish");
        }
        for (m, v) in prior.mean.iter().zip(&bank.grids[0]) {
            assert!((m - v).abs() < 1e-12);
        }
    }

    #[test]
    fn full_rank_reconstruction() {
        let shapes = &default_car_family()[..5];
        let bank = VehicleShapeBank::from_shapes(shapes, small_spec());
        let prior = build_prior(&bank, 4).unwrap();
        // project each bank member and reconstruct
        for g in &bank.grids {
            let centered: Vec<f64> = g.iter().zip(&prior.mean).map(|(v, m)| v - m).collect();
            let mut recon = vec![0.0; centered.len()];
            for b in &prior.basis {
                let c: f64 = b.iter().zip(&centered).map(|(x, y)| x * y).sum();
                for (r, x) in recon.iter_mut().zip(b) {
                    *r += c * x;
                }
            }
            let rmse: f64 = (recon
                .iter()
                .zip(&centered)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / centered.len() as f64)
                .sqrt();
            assert!(rmse < 1e-9, "rmse {rmse}");
        }
    }

    #[test]
    fn two_shape_bank_single_component() {
        let shapes = [default_car_family()[0], default_car_family()[7]];
        let bank = VehicleShapeBank::from_shapes(&shapes, small_spec());
        let prior = build_prior(&bank, 1).unwrap();
        let diff: Vec<f64> = bank.grids[0].iter().zip(&bank.grids[1]).map(|(a, b)| a - b).collect();
        let norm: f64 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = prior.basis[0].iter().zip(&diff).map(|(a, b)| a * b).sum();
        assert!((dot.abs() / norm - 1.0).abs() < 1e-9, "component must align with the difference");
    }

    #[test]
    fn basis_orthonormal() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family(), small_spec());
        let prior = build_prior(&bank, 5).unwrap();
        for i in 0..prior.k() {
            for j in 0..prior.k() {
                let dot: f64 =
                    prior.basis[i].iter().zip(&prior.basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "basis[{i}].basis[{j}] = {dot}");
            }
        }
    }

    #[test]
    fn k_exceeding_bank_rejected() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family()[..3], small_spec());
        assert!(build_prior(&bank, 4).is_err());
    }

    #[test]
    fn sdf_eval_node_and_midpoint() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family()[..4], small_spec());
        let prior = build_prior(&bank, 2).unwrap();
        let z = vec![0.0, 0.0];
        let p = prior.spec.node(5, 7, 9);
        let v = sdf_eval(&prior, &z, p).unwrap();
        assert!((v - prior.mean[prior.spec.index(5, 7, 9)]).abs() < 1e-12);
        // midpoint along x
        let q = (prior.spec.node(5, 7, 9) + prior.spec.node(6, 7, 9)) * 0.5;
        let vm = sdf_eval(&prior, &z, q).unwrap();
        let want = 0.5
            * (prior.mean[prior.spec.index(5, 7, 9)] + prior.mean[prior.spec.index(6, 7, 9)]);
        assert!((vm - want).abs() < 1e-12);
        // outside the grid
        assert!(sdf_eval(&prior, &z, Point3::new(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn trilinear_matches_dense_oracle() {
        let spec = small_spec();
        // arbitrary smooth field sampled on the grid
        let field = |p: Point3| (3.0 * p.x).sin() + p.y * p.y - 0.5 * p.z;
        let mut vals = vec![0.0; spec.len()];
        for k in 0..spec.dims[2] {
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    vals[spec.index(i, j, k)] = field(spec.node(i, j, k));
                }
            }
        }
        // oracle: interpolate along each axis in sequence
        let mut rng_state = 123456789u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let p = Point3::new(
                -0.55 + 1.1 * next(),
                -0.55 + 1.1 * next(),
                -0.55 + 1.1 * next(),
            );
            let got = spec.sample(&vals, p).unwrap();
            // oracle: axis-by-axis linear interpolation
            let u = [
                (p.x - spec.origin.x) / spec.spacing[0],
                (p.y - spec.origin.y) / spec.spacing[1],
                (p.z - spec.origin.z) / spec.spacing[2],
            ];
            let i0: Vec<usize> = u.iter().map(|v| v.floor() as usize).collect();
            let f: Vec<f64> = u.iter().zip(&i0).map(|(v, i)| v - *i as f64).collect();
            let mut acc = 0.0;
            for dz in 0..2 {
                for dy in 0..2 {
                    let v0 = vals[spec.index(i0[0], i0[1] + dy, i0[2] + dz)];
                    let v1 = vals[spec.index(i0[0] + 1, i0[1] + dy, i0[2] + dz)];
                    let vx = v0 * (1.0 - f[0]) + v1 * f[0];
                    let wy = if dy == 0 { 1.0 - f[1] } else { f[1] };
                    let wz = if dz == 0 { 1.0 - f[2] } else { f[2] };
                    acc += vx * wy * wz;
                }
            }
            assert!((got - acc).abs() < 1e-9, "{got} vs {acc}");
        }
    }

    #[test]
    fn marching_cubes_sphere() {
        let spec = small_spec();
        let r = 0.4;
        let mut vals = vec![0.0; spec.len()];
        for k in 0..spec.dims[2] {
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    vals[spec.index(i, j, k)] = spec.node(i, j, k).norm() - r;
                }
            }
        }
        let mesh = marching_cubes(&spec, &vals).unwrap();
        assert!(mesh.is_watertight());
        assert!(mesh.signed_volume() > 0.0);
        let h = spec.spacing.iter().cloned().fold(0.0f64, f64::max);
        for v in &mesh.vertices {
            assert!((v.norm() - r).abs() < h, "vertex at radius {}", v.norm());
        }
        // volume close to the analytic sphere
        let vol = mesh.signed_volume();
        let want = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        assert!((vol - want).abs() / want < 0.05, "{vol} vs {want}");
    }

    #[test]
    fn marching_cubes_empty_level_set_errors() {
        let spec = small_spec();
        let vals = vec![1.0; spec.len()];
        assert!(marching_cubes(&spec, &vals).is_err());
    }

    #[test]
    fn marching_cubes_sign_flip_flagged() {
        let spec = small_spec();
        let mut vals = vec![0.0; spec.len()];
        for k in 0..spec.dims[2] {
            for j in 0..spec.dims[1] {
                for i in 0..spec.dims[0] {
                    vals[spec.index(i, j, k)] = -(spec.node(i, j, k).norm() - 0.4);
                }
            }
        }
        match marching_cubes(&spec, &vals) {
            Err(Error::Prior(msg)) => assert!(msg.contains("inverted"), "{msg}"),
            other => panic!("expected inverted-orientation error, got {:?}", other.map(|m| m.faces.len())),
        }
    }

    #[test]
    fn fit_latent_minimizer_dominates_truth() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family(), small_spec());
        let prior = build_prior(&bank, 5).unwrap();
        let b = BoxBev::new(10.0, 3.0, 4.2, 1.8, 0.3, -1.6, 0.0);
        // synthesize surface points of bank member 3 (known latent)
        let member = &bank.grids[3];
        let centered: Vec<f64> = member.iter().zip(&prior.mean).map(|(v, m)| v - m).collect();
        let z_true: Vec<f64> = prior
            .basis
            .iter()
            .map(|bb| bb.iter().zip(&centered).map(|(x, y)| x * y).sum())
            .collect();
        let mesh = extract_mesh(&prior, &z_true).unwrap();
        let pts: Vec<Point3> = mesh
            .vertices
            .iter()
            .step_by(7)
            .map(|p| from_canonical(&b, *p))
            .collect();
        assert!(pts.len() >= 10);
        let cloud = PointCloud::new(pts);
        let z_star = fit_latent(&prior, &cloud, &b).unwrap();
        let obj = |z: &[f64]| -> f64 {
            cloud
                .points
                .iter()
                .map(|p| sdf_eval(&prior, z, to_canonical(&b, *p)).unwrap().powi(2))
                .sum()
        };
        assert!(obj(&z_star) <= obj(&z_true) + 1e-8);
    }

    #[test]
    fn fit_latent_empty_basis() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family()[..3], small_spec());
        let prior = build_prior(&bank, 0).unwrap();
        let b = BoxBev::new(0.0, 0.0, 4.0, 1.8, 0.0, -1.5, 0.0);
        let cloud = PointCloud::new(
            (0..20)
                .map(|i| from_canonical(&b, Point3::new(-0.4 + 0.04 * i as f64, 0.3, 0.1)))
                .collect(),
        );
        let z = fit_latent(&prior, &cloud, &b).unwrap();
        assert!(z.is_empty());
    }

    #[test]
    fn fit_latent_too_few_points() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family()[..3], small_spec());
        let prior = build_prior(&bank, 1).unwrap();
        let b = BoxBev::new(0.0, 0.0, 4.0, 1.8, 0.0, -1.5, 0.0);
        let cloud = PointCloud::new(vec![Point3::ZERO; 5]);
        assert!(fit_latent(&prior, &cloud, &b).is_err());
    }

    #[test]
    fn roof_region_box_mesh() {
        // box-shaped mesh of height 1.5
        let mut verts = Vec::new();
        for &z in &[0.0, 1.5] {
            for &(x, y) in &[(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0)] {
                verts.push(Point3::new(x, y, z));
            }
        }
        let mesh = TriangleMesh {
            vertices: verts,
            faces: vec![[4, 5, 6], [4, 6, 7], [0, 2, 1], [0, 3, 2]],
        };
        let roof = roof_region(&mesh).unwrap();
        assert_eq!(roof.vertices.len(), 4);
        assert!((roof.center.x - 1.0).abs() < 1e-12);
        assert!((roof.center.y - 0.5).abs() < 1e-12);
        assert!((roof.center.z - 1.5).abs() < 1e-12);
    }

    #[test]
    fn roof_region_single_apex() {
        let mesh = TriangleMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 2.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            faces: vec![[0, 1, 2]],
        };
        let roof = roof_region(&mesh).unwrap();
        assert!(!roof.vertices.is_empty());
        assert!((roof.center.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn placement_transform_examples() {
        let b = BoxBev::new(5.0, -2.0, 4.0, 1.8, 0.0, -1.5, 0.0);
        let rc = Point3::new(5.1, -2.0, 0.1);
        let t = placement_transform(&b, rc);
        assert!((t.apply(Point3::ZERO) - rc).norm() < 1e-12);

        let b2 = BoxBev::new(5.0, -2.0, 4.0, 1.8, std::f64::consts::FRAC_PI_2, -1.5, 0.0);
        let t2 = placement_transform(&b2, rc);
        let p = t2.apply(Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(rc.x, rc.y + 1.0, rc.z)).norm() < 1e-12);

        // rigid: orthonormal rotation block with unit determinant
        let m = t2.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn roof_recovery_synthetic_vehicle() {
        let bank = VehicleShapeBank::default_bank();
        let prior = build_prior(&bank, 5).unwrap();
        let shape = default_car_family()[5];
        let b = BoxBev::new(12.0, -4.0, 4.4, 1.8, 0.7, -1.6, -0.1);
        // sample points on the true surface (marching cubes of the
        // exact shape grid, independent of the prior)
        let exact =
            VehicleShapeBank::from_shapes(&[shape], prior.spec.clone());
        let true_mesh = marching_cubes(&exact.spec, &exact.grids[0]).unwrap();
        let pts: Vec<Point3> = true_mesh
            .vertices
            .iter()
            .step_by(5)
            .map(|p| from_canonical(&b, *p))
            .collect();
        let cloud = PointCloud::new(pts);
        let (_z, roof, _t) = fit_roof(&prior, &cloud, &b).unwrap();
        let truth = from_canonical(&b, shape.roof_center());
        let dh = ((roof.center.x - truth.x).powi(2) + (roof.center.y - truth.y).powi(2)).sqrt();
        assert!(dh < 0.1, "horizontal roof error {dh}");
        assert!((roof.center.z - truth.z).abs() < 0.05, "vertical error {}", roof.center.z - truth.z);
    }

    #[test]
    fn prior_file_round_trip() {
        let bank = VehicleShapeBank::from_shapes(&default_car_family()[..4], small_spec());
        let prior = build_prior(&bank, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prior.bin");
        save_prior(&prior, &p).unwrap();
        let back = load_prior(&p).unwrap();
        assert_eq!(back.spec.dims, prior.spec.dims);
        assert_eq!(back.k(), prior.k());
        for (a, b) in back.mean.iter().zip(&prior.mean) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
