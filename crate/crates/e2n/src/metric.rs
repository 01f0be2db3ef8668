//! Derivative recovery and goal-oriented anisotropic metric construction.
//!
//! Recovery transfers P0 data to P1 by area-weighted averaging over the
//! cells sharing each vertex; applying it twice to gradients approximates
//! the Hessian. The metric combines indicator-driven size scaling with
//! Hessian-driven shape and orientation, then a single global rescale pins
//! the complexity to the requested target.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use crate::dwr::IndicatorField;
use crate::error::{Error, Result};
use crate::fem::{p1_gradient, Field, Space};
use crate::mesh::{sym_eig_ascending, TriMesh, REFERENCE_AREA};

/// Symmetric 2x2 tensor stored as (m00, m01, m11).
pub type SymTensor = [f64; 3];

/// Per-element SPD tensors prescribing target size, shape and orientation.
#[derive(Debug, Clone)]
pub struct MetricField {
    mesh: Arc<TriMesh>,
    tensors: Vec<SymTensor>,
}

impl MetricField {
    pub fn new(mesh: Arc<TriMesh>, tensors: Vec<SymTensor>) -> Result<Self> {
        if tensors.len() != mesh.num_elements() {
            return Err(Error::DimensionMismatch(format!(
                "{} tensors for {} elements",
                tensors.len(),
                mesh.num_elements()
            )));
        }
        for (k, t) in tensors.iter().enumerate() {
            if !is_spd(t) {
                return Err(Error::InvalidMetric { element: k });
            }
        }
        Ok(MetricField { mesh, tensors })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn tensors(&self) -> &[SymTensor] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> SymTensor {
        self.tensors[k]
    }
}

/// SPD iff the 2x2 Cholesky factorisation exists.
pub fn is_spd(t: &SymTensor) -> bool {
    let [a, b, c] = *t;
    a.is_finite() && b.is_finite() && c.is_finite() && a > 0.0 && a * c - b * b > 0.0
}

/// Area-weighted mean over the cells sharing each vertex, for raw P0 data.
fn clement_values(mesh: &TriMesh, cell_values: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; mesh.num_vertices()];
    let mut weight = vec![0.0; mesh.num_vertices()];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.signed_area(k);
        for &v in tri {
            acc[v] += area * cell_values[k];
            weight[v] += area;
        }
    }
    for (a, w) in acc.iter_mut().zip(&weight) {
        *a /= w;
    }
    acc
}

/// Clement interpolation of a P0 field into P1.
pub fn clement_interpolate(p0_field: &Field) -> Result<Field> {
    if p0_field.space() != Space::P0 {
        return Err(Error::invalid("Clement interpolation expects a P0 field"));
    }
    let mesh = p0_field.mesh().clone();
    let values = clement_values(&mesh, p0_field.values());
    Field::new(mesh, Space::P1, values)
}

/// Per-cell gradient of a P1 coefficient vector.
fn cell_gradients(mesh: &TriMesh, vertex_values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; mesh.num_elements()];
    let mut gy = vec![0.0; mesh.num_elements()];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.tri_coords(k);
        let f = [vertex_values[tri[0]], vertex_values[tri[1]], vertex_values[tri[2]]];
        let g = p1_gradient(&p, &f);
        gx[k] = g[0];
        gy[k] = g[1];
    }
    (gx, gy)
}

/// Recovered vertex gradient of a scalar P1 field (one Clement pass).
pub fn recover_gradient(p1_scalar: &Field) -> Result<(Field, Field)> {
    if p1_scalar.space() != Space::P1 {
        return Err(Error::invalid("gradient recovery expects a P1 field"));
    }
    let mesh = p1_scalar.mesh().clone();
    let (gx, gy) = cell_gradients(&mesh, p1_scalar.values());
    let vx = clement_values(&mesh, &gx);
    let vy = clement_values(&mesh, &gy);
    Ok((Field::new(mesh.clone(), Space::P1, vx)?, Field::new(mesh, Space::P1, vy)?))
}

/// Two-stage Hessian recovery of a scalar P1 field: gradient, Clement,
/// gradient, Clement, then symmetrisation. One (m00, m01, m11) per vertex.
pub fn recover_hessian(p1_scalar: &Field) -> Result<Vec<SymTensor>> {
    if p1_scalar.space() != Space::P1 {
        return Err(Error::invalid("Hessian recovery expects a P1 field"));
    }
    let mesh = p1_scalar.mesh();
    let (gx, gy) = cell_gradients(mesh, p1_scalar.values());
    let gxv = clement_values(mesh, &gx);
    let gyv = clement_values(mesh, &gy);

    let (hxx, hxy) = cell_gradients(mesh, &gxv);
    let (hyx, hyy) = cell_gradients(mesh, &gyv);
    let vxx = clement_values(mesh, &hxx);
    let vxy = clement_values(mesh, &hxy);
    let vyx = clement_values(mesh, &hyx);
    let vyy = clement_values(mesh, &hyy);

    Ok((0..mesh.num_vertices())
        .map(|v| [vxx[v], 0.5 * (vxy[v] + vyx[v]), vyy[v]])
        .collect())
}

/// Indicator magnitudes below this floor are clamped so that zero-error
/// elements still receive a positive size.
pub const INDICATOR_FLOOR: f64 = 1e-30;

/// Stretching factors are clamped to this bound to guard against singular
/// Hessians.
pub const MAX_STRETCH: f64 = 10.0;

/// Builds the anisotropic goal-oriented metric.
///
/// Per element: the velocity-component Hessians are recovered, combined by
/// entry-wise mean and evaluated at the centroid; their eigenstructure sets
/// shape (stretching sqrt|l2/l1| clamped to [1, 10]) and orientation. The
/// size scaling combines the element area ratio with the indicator share
/// |E_K|^(1/(alpha+1)), and a global rescale enforces
/// complexity(M) = target_complexity.
pub fn build_metric(
    indicators: &IndicatorField,
    u_h: &Field,
    target_complexity: f64,
    alpha: f64,
) -> Result<MetricField> {
    let mesh = indicators.mesh().clone();
    if u_h.space() != Space::VectorP1 {
        return Err(Error::invalid("metric construction expects a vector P1 state"));
    }
    if u_h.mesh().num_vertices() != mesh.num_vertices()
        || u_h.mesh().num_elements() != mesh.num_elements()
    {
        return Err(Error::invalid("indicators and state live on different meshes"));
    }
    if !(target_complexity > 0.0) {
        return Err(Error::invalid("target complexity must be positive"));
    }
    if !(alpha >= 1.0) {
        return Err(Error::invalid("alpha must be at least 1"));
    }
    if indicators.values().iter().all(|&e| e == 0.0) {
        return Err(Error::DegenerateIndicator);
    }

    // Component-wise Hessian recovery of the forward velocity, averaged
    // entry-wise.
    let comp = |c: usize| -> Result<Vec<SymTensor>> {
        let vals: Vec<f64> = (0..mesh.num_vertices()).map(|v| u_h.values()[2 * v + c]).collect();
        recover_hessian(&Field::new(mesh.clone(), Space::P1, vals)?)
    };
    let hx = comp(0)?;
    let hy = comp(1)?;
    let vertex_h: Vec<SymTensor> = (0..mesh.num_vertices())
        .map(|v| {
            [
                0.5 * (hx[v][0] + hy[v][0]),
                0.5 * (hx[v][1] + hy[v][1]),
                0.5 * (hx[v][2] + hy[v][2]),
            ]
        })
        .collect();

    let exponent = 1.0 / (alpha + 1.0);
    let share_sum: f64 = indicators
        .values()
        .iter()
        .map(|e| e.abs().max(INDICATOR_FLOOR).powf(exponent))
        .sum();

    // Curvature below this level is recovery noise; such elements stay
    // isotropic. Two references: the largest recovered entry, and the
    // rounding noise of the two differencing recovery stages, which is of order
    // eps * |u| / area. Both scale linearly in u, so the stretch stays
    // invariant under scaling of the forward solution.
    let h_scale = vertex_h
        .iter()
        .flat_map(|t| t.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let u_scale = u_h.values().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min_area = (0..mesh.num_elements())
        .map(|k| mesh.signed_area(k))
        .fold(f64::INFINITY, f64::min);
    let h_floor = (1e-12 * h_scale)
        .max(1e-12 * u_scale / min_area)
        .max(INDICATOR_FLOOR);

    let mut tensors = Vec::with_capacity(mesh.num_elements());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        // Centroid value of the P1 tensor field.
        let mut h = [0.0; 3];
        for &v in tri {
            for (hc, &vc) in h.iter_mut().zip(&vertex_h[v]) {
                *hc += vc / 3.0;
            }
        }
        let (s, v1) = stretch_and_direction(&h, h_floor);

        let area = mesh.signed_area(k);
        let share = indicators.values()[k].abs().max(INDICATOR_FLOOR).powf(exponent) / share_sum;
        let m = (area / REFERENCE_AREA) * target_complexity * share;

        // M = m * (s * v1 v1^T + (1/s) * v2 v2^T) with v2 perpendicular.
        let norm = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
        let e1 = [v1[0] / norm, v1[1] / norm];
        let e2 = [-e1[1], e1[0]];
        tensors.push([
            m * (s * e1[0] * e1[0] + e2[0] * e2[0] / s),
            m * (s * e1[0] * e1[1] + e2[0] * e2[1] / s),
            m * (s * e1[1] * e1[1] + e2[1] * e2[1] / s),
        ]);
    }

    // Global rescale: complexity is homogeneous of degree 1 in the tensors.
    let current: f64 = tensors
        .iter()
        .zip(0..mesh.num_elements())
        .map(|(t, k)| sqrt_det(t) * mesh.signed_area(k))
        .sum();
    let factor = target_complexity / current;
    for t in &mut tensors {
        for entry in t {
            *entry *= factor;
        }
    }

    MetricField::new(mesh, tensors)
}

/// Stretching factor and first eigenvector (ascending |eigenvalue|) of a
/// symmetric tensor, with guards for vanishing curvature.
fn stretch_and_direction(h: &SymTensor, floor: f64) -> (f64, [f64; 2]) {
    let (l1, l2, v1) = sym_eig_ascending(h[0], h[1], h[2]);
    // Order by magnitude; sym_eig_ascending sorts algebraically.
    let (small, large, vec_small) = if l1.abs() <= l2.abs() {
        (l1.abs(), l2.abs(), v1)
    } else {
        (l2.abs(), l1.abs(), [-v1[1], v1[0]])
    };
    if large <= floor {
        return (1.0, [1.0, 0.0]);
    }
    let s = if small <= large * 1e-30 {
        MAX_STRETCH
    } else {
        (large / small).sqrt().clamp(1.0, MAX_STRETCH)
    };
    (s, vec_small)
}

fn sqrt_det(t: &SymTensor) -> f64 {
    (t[0] * t[2] - t[1] * t[1]).sqrt()
}

/// Metric complexity, the continuous analogue of the vertex count:
/// sum over elements of sqrt(det M_K) * |K|.
pub fn complexity(metric: &MetricField) -> Result<f64> {
    let mut total = 0.0;
    for (k, t) in metric.tensors().iter().enumerate() {
        if !is_spd(t) {
            return Err(Error::InvalidMetric { element: k });
        }
        total += sqrt_det(t) * metric.mesh().signed_area(k);
    }
    Ok(total)
}

/// Complexity ramp: a quarter, then half, then the full target from the
/// third iteration on. Spinning up avoids over-resolving early meshes whose
/// indicators are still far from converged.
pub fn complexity_schedule(iteration: usize, target: f64) -> f64 {
    match iteration {
        0 => 0.25 * target,
        1 => 0.5 * target,
        _ => target,
    }
}

/// Writes the ASCII metric format: `E2NMETRIC 1`, element count, then one
/// `m00 m01 m11` line per element.
pub fn write_metric(metric: &MetricField, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("E2NMETRIC 1\n");
    out.push_str(&format!("{}\n", metric.tensors().len()));
    for t in metric.tensors() {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads the ASCII metric format for the given mesh.
pub fn read_metric(path: &Path, mesh: Arc<TriMesh>) -> Result<MetricField> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::parse(i + 1, e.to_string())),
            None => Err(Error::parse(0, format!("unexpected end of file reading {what}"))),
        }
    };
    let (ln, header) = next("header")?;
    if header.trim() != "E2NMETRIC 1" {
        return Err(Error::parse(ln, format!("expected `E2NMETRIC 1`, got `{header}`")));
    }
    let (ln, l) = next("count")?;
    let n: usize = l.trim().parse().map_err(|e| Error::parse(ln, format!("count: {e}")))?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = next("tensor")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse().map_err(|e| Error::parse(ln, format!("tensor entry: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 3 {
            return Err(Error::parse(ln, "expected `m00 m01 m11`"));
        }
        tensors.push([vals[0], vals[1], vals[2]]);
    }
    MetricField::new(mesh, tensors)
}
