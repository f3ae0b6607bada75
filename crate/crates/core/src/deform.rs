//! Box-constrained adversary parameterization.
//!
//! Vertices are reparameterized so any unconstrained parameter vector
//! maps to a feasible mesh:
//!
//! ```text
//! v_i = R(b . sign(v0_raw_i) . sigmoid(|v0_raw_i| + dv_i)) + c . tanh(t_raw)
//! ```
//!
//! where `b` limits per-axis size, `c` limits translation, and the sign
//! factor keeps each vertex in its initial octant.

use crate::mesh::TriangleMesh;
use crate::scene::Point3;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    FixedIdentity,
    PlanarZ,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeformConfig {
    /// Per-axis size limit (meters), strictly positive.
    pub b: [f64; 3],
    /// Per-axis translation limit (meters), nonnegative.
    pub c: [f64; 3],
    pub rotation_mode: RotationMode,
    /// Common-object mode: per-axis clamp on vertex perturbation.
    pub max_vertex_perturbation: Option<f64>,
}

impl DeformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("deform.b must be positive componentwise".into()));
        }
        if self.c.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("deform.c must be nonnegative componentwise".into()));
        }
        Ok(())
    }
}

impl Default for DeformConfig {
    fn default() -> Self {
        // icosphere attack settings: 0.7 x 0.7 x 0.5 m size box,
        // 0.1 m planar offset, no vertical offset
        DeformConfig {
            b: [0.7, 0.7, 0.5],
            c: [0.1, 0.1, 0.0],
            rotation_mode: RotationMode::FixedIdentity,
            max_vertex_perturbation: None,
        }
    }
}

/// Unconstrained optimization variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformParams {
    /// Per-vertex raw displacement, one triple per template vertex.
    pub dv: Vec<[f64; 3]>,
    /// Raw global translation.
    pub t_raw: [f64; 3],
    /// Planar rotation angle (radians); ignored in fixed-identity mode.
    pub theta: f64,
}

impl DeformParams {
    pub fn zeros(n_vertices: usize) -> Self {
        DeformParams { dv: vec![[0.0; 3]; n_vertices], t_raw: [0.0; 3], theta: 0.0 }
    }

    pub fn flat_len(&self, include_theta: bool) -> usize {
        self.dv.len() * 3 + 3 + include_theta as usize
    }

    pub fn to_flat(&self, include_theta: bool) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len(include_theta));
        for d in &self.dv {
            v.extend_from_slice(d);
        }
        v.extend_from_slice(&self.t_raw);
        if include_theta {
            v.push(self.theta);
        }
        v
    }

    pub fn from_flat(flat: &[f64], n_vertices: usize, include_theta: bool) -> Self {
        let mut dv = vec![[0.0; 3]; n_vertices];
        for (i, d) in dv.iter_mut().enumerate() {
            d.copy_from_slice(&flat[i * 3..i * 3 + 3]);
        }
        let base = n_vertices * 3;
        let t_raw = [flat[base], flat[base + 1], flat[base + 2]];
        let theta = if include_theta { flat[base + 3] } else { 0.0 };
        DeformParams { dv, t_raw, theta }
    }
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Template mesh plus the raw normalized positions that reconstruct it.
#[derive(Debug, Clone)]
pub struct AdversaryTemplate {
    /// Base mesh after the epsilon adjustments below; reconstruction
    /// with zero parameters reproduces exactly these vertices.
    pub base: TriangleMesh,
    /// |v0_raw| per vertex axis (logit of normalized magnitude).
    pub v0_raw: Vec<[f64; 3]>,
    /// Initial octant sign per vertex axis (+1 or -1).
    pub signs: Vec<[f64; 3]>,
}

impl AdversaryTemplate {
    /// Builds a template from `base`. Coordinates with magnitude zero
    /// are nudged to 1e-6 m and magnitudes at or above `b` are pulled
    /// to b*(1 - 1e-9) so the logit exists; `base` stores the adjusted
    /// vertices.
    pub fn new(mut base: TriangleMesh, config: &DeformConfig) -> Result<Self> {
        config.validate()?;
        const EPS_ZERO: f64 = 1e-6;
        let mut v0_raw = Vec::with_capacity(base.vertices.len());
        let mut signs = Vec::with_capacity(base.vertices.len());
        for v in &mut base.vertices {
            let coords = [v.x, v.y, v.z];
            let mut raw = [0.0; 3];
            let mut sgn = [1.0; 3];
            let mut adj = [0.0; 3];
            for a in 0..3 {
                let s = if coords[a] < 0.0 { -1.0 } else { 1.0 };
                let mut mag = coords[a].abs().max(EPS_ZERO);
                let cap = config.b[a] * (1.0 - 1e-9);
                if mag > cap {
                    mag = cap;
                }
                raw[a] = logit(mag / config.b[a]);
                sgn[a] = s;
                adj[a] = s * mag;
            }
            *v = Point3::new(adj[0], adj[1], adj[2]);
            v0_raw.push(raw);
            signs.push(sgn);
        }
        Ok(AdversaryTemplate { base, v0_raw, signs })
    }

    /// Icosphere template scaled into the deformation box `b`.
    pub fn icosphere(subdivisions: u32, config: &DeformConfig) -> Result<Self> {
        let mut m = crate::mesh::icosphere(subdivisions);
        for v in &mut m.vertices {
            *v = Point3::new(v.x * config.b[0], v.y * config.b[1], v.z * config.b[2]);
        }
        AdversaryTemplate::new(m, config)
    }

    pub fn n_vertices(&self) -> usize {
        self.base.vertices.len()
    }
}

/// Deformed mesh plus the partial derivatives the white-box attack
/// chains through.
#[derive(Debug, Clone)]
pub struct DeformOutput {
    pub mesh: TriangleMesh,
    /// d(local vertex axis) / d(dv axis): diagonal Jacobian entries,
    /// zero where the common-object clamp is active.
    pub dlocal_ddv: Vec<[f64; 3]>,
    /// d(translation axis) / d(t_raw axis).
    pub dtrans_dtraw: [f64; 3],
    /// d(rotated vertex) / d(theta), zero in fixed-identity mode.
    pub dvert_dtheta: Vec<Point3>,
}

pub fn apply_deformation(
    template: &AdversaryTemplate,
    params: &DeformParams,
    config: &DeformConfig,
) -> Result<TriangleMesh> {
    Ok(apply_deformation_with_grad(template, params, config)?.mesh)
}

pub fn apply_deformation_with_grad(
    template: &AdversaryTemplate,
    params: &DeformParams,
    config: &DeformConfig,
) -> Result<DeformOutput> {
    if params.dv.len() != template.n_vertices() {
        return Err(Error::Attack(format!(
            "params have {} displacement triples, template has {} vertices",
            params.dv.len(),
            template.n_vertices()
        )));
    }
    config.validate()?;
    let n = template.n_vertices();
    let theta = match config.rotation_mode {
        RotationMode::FixedIdentity => 0.0,
        RotationMode::PlanarZ => params.theta,
    };
    let (ct, st) = (theta.cos(), theta.sin());
    let mut trans = [0.0; 3];
    let mut dtrans = [0.0; 3];
    for a in 0..3 {
        let t = params.t_raw[a].tanh();
        trans[a] = config.c[a] * t;
        dtrans[a] = config.c[a] * (1.0 - t * t);
    }
    let tv = Point3::new(trans[0], trans[1], trans[2]);

    let mut vertices = Vec::with_capacity(n);
    let mut dlocal = Vec::with_capacity(n);
    let mut dtheta = Vec::with_capacity(n);
    for i in 0..n {
        let mut local = [0.0; 3];
        let mut dl = [0.0; 3];
        for a in 0..3 {
            let s = sigmoid(template.v0_raw[i][a] + params.dv[i][a]);
            local[a] = config.b[a] * template.signs[i][a] * s;
            dl[a] = config.b[a] * template.signs[i][a] * s * (1.0 - s);
        }
        if let Some(max_pert) = config.max_vertex_perturbation {
            let v0 = template.base.vertices[i];
            let base = [v0.x, v0.y, v0.z];
            for a in 0..3 {
                let lo = base[a] - max_pert;
                let hi = base[a] + max_pert;
                if local[a] < lo {
                    local[a] = lo;
                    dl[a] = 0.0;
                } else if local[a] > hi {
                    local[a] = hi;
                    dl[a] = 0.0;
                }
            }
        }
        let p = Point3::new(
            ct * local[0] - st * local[1],
            st * local[0] + ct * local[1],
            local[2],
        );
        vertices.push(p + tv);
        dlocal.push(dl);
        dtheta.push(match config.rotation_mode {
            RotationMode::FixedIdentity => Point3::ZERO,
            RotationMode::PlanarZ => Point3::new(
                -st * local[0] - ct * local[1],
                ct * local[0] - st * local[1],
                0.0,
            ),
        });
    }
    Ok(DeformOutput {
        mesh: TriangleMesh { vertices, faces: template.base.faces.clone() },
        dlocal_ddv: dlocal,
        dtrans_dtraw: dtrans,
        dvert_dtheta: dtheta,
    })
}

/// Rotation angle actually applied for a config/params pair.
pub fn effective_theta(params: &DeformParams, config: &DeformConfig) -> f64 {
    match config.rotation_mode {
        RotationMode::FixedIdentity => 0.0,
        RotationMode::PlanarZ => params.theta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn template() -> (AdversaryTemplate, DeformConfig) {
        let cfg = DeformConfig::default();
        (AdversaryTemplate::icosphere(1, &cfg).unwrap(), cfg)
    }

    #[test]
    fn zero_params_reproduce_base() {
        let (t, cfg) = template();
        let out = apply_deformation(&t, &DeformParams::zeros(t.n_vertices()), &cfg).unwrap();
        for (a, b) in out.vertices.iter().zip(&t.base.vertices) {
            assert!((*a - *b).linf() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_saturation_caps_at_b() {
        let (t, cfg) = template();
        let mut p = DeformParams::zeros(t.n_vertices());
        for d in &mut p.dv {
            d[0] = 60.0; // push x to saturation
        }
        let out = apply_deformation(&t, &p, &cfg).unwrap();
        for (i, v) in out.vertices.iter().enumerate() {
            let x_local = v.x - 0.0; // zero translation
            assert!(x_local.abs() <= cfg.b[0] + 1e-12);
            if t.signs[i][0] > 0.0 {
                assert!(x_local > 0.99 * cfg.b[0] * 0.999, "should approach +b");
            }
        }
    }

    #[test]
    fn fuzz_box_and_sign_constraints() {
        let (t, cfg) = template();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..2000 {
            let mut p = DeformParams::zeros(t.n_vertices());
            for d in &mut p.dv {
                for a in d.iter_mut() {
                    *a = rng.gen_range(-20.0..20.0);
                }
            }
            for a in &mut p.t_raw {
                *a = rng.gen_range(-20.0..20.0);
            }
            let out = apply_deformation(&t, &p, &cfg).unwrap();
            let tz = cfg.c[2] * p.t_raw[2].tanh();
            assert_eq!(tz, 0.0, "z translation must be exactly zero when c_z = 0");
            let trans = Point3::new(cfg.c[0] * p.t_raw[0].tanh(), cfg.c[1] * p.t_raw[1].tanh(), 0.0);
            for (i, v) in out.vertices.iter().enumerate() {
                let local = *v - trans; // identity rotation
                let coords = [local.x, local.y, local.z];
                for a in 0..3 {
                    // strictly inside mathematically; saturation can
                    // round to exactly b in f64
                    assert!(coords[a].abs() <= cfg.b[a], "axis {a} out of box: {}", coords[a]);
                    assert!(coords[a] * t.signs[i][a] > 0.0, "sign flipped on axis {a}");
                }
            }
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let (t, cfg) = template();
        let p = DeformParams::zeros(t.n_vertices() + 1);
        assert!(apply_deformation(&t, &p, &cfg).is_err());
    }

    #[test]
    fn common_object_clamp_bounds_perturbation() {
        let cfg = DeformConfig {
            b: [2.0, 2.0, 2.0],
            c: [0.1, 0.1, 0.0],
            rotation_mode: RotationMode::PlanarZ,
            max_vertex_perturbation: Some(0.03),
        };
        let t = AdversaryTemplate::icosphere(1, &cfg).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let mut p = DeformParams::zeros(t.n_vertices());
            for d in &mut p.dv {
                for a in d.iter_mut() {
                    *a = rng.gen_range(-10.0..10.0);
                }
            }
            // theta = 0 so the local frame comparison is direct
            let out = apply_deformation(&t, &p, &cfg).unwrap();
            for (v, v0) in out.vertices.iter().zip(&t.base.vertices) {
                assert!((*v - *v0).linf() <= 0.03 + 1e-12);
            }
        }
    }

    #[test]
    fn planar_rotation_quarter_turn() {
        let cfg = DeformConfig {
            b: [1.0, 1.0, 1.0],
            c: [0.0, 0.0, 0.0],
            rotation_mode: RotationMode::PlanarZ,
            max_vertex_perturbation: None,
        };
        let t = AdversaryTemplate::icosphere(0, &cfg).unwrap();
        let mut p = DeformParams::zeros(t.n_vertices());
        p.theta = std::f64::consts::FRAC_PI_2;
        let out = apply_deformation(&t, &p, &cfg).unwrap();
        for (v, v0) in out.vertices.iter().zip(&t.base.vertices) {
            assert!((v.x - (-v0.y)).abs() < 1e-9);
            assert!((v.y - v0.x).abs() < 1e-9);
            assert!((v.z - v0.z).abs() < 1e-9);
        }
    }
}
