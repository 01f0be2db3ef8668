//! Per-element feature extraction for the error-estimation network.
//!
//! Each element yields 32 numbers in a frozen column order: the cheap DWR
//! value, three physics parameters, four mesh-geometry parameters, and
//! centroid values plus first/second derivatives of both components of the
//! forward and adjoint velocities. Second derivatives come from recovered
//! gradient fields, with the mixed entry symmetrised.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::dwr::IndicatorField;
use crate::error::{Error, Result};
use crate::fem::{p1_gradient, Field, Problem, Space};
use crate::mesh::element_geometry;
use crate::metric::recover_gradient;
use crate::model::FlowProblem;

pub const FEATURE_COUNT: usize = 32;

/// One element's network input row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A harvested training set: one row per element per collected mesh.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
}

#[derive(Debug, Clone)]
pub struct DatasetRow {
    pub scenario: usize,
    pub iteration: usize,
    pub features: FeatureVector,
    /// Enriched indicator contribution of the element (signed, untransformed).
    pub target: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Element-wise arctangent, the normalisation applied to all feature data
/// before it reaches the network.
pub fn preprocess(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.atan()).collect()
}

/// Derivative bundle of one scalar component: centroid value, gradient, and
/// the symmetrised second derivatives of the recovered gradient.
fn component_derivatives(
    vertex_values: Vec<f64>,
    mesh: &std::sync::Arc<crate::mesh::TriMesh>,
) -> Result<Vec<[f64; 6]>> {
    let mesh = mesh.clone();
    let scalar = Field::new(mesh.clone(), Space::P1, vertex_values)?;
    let (gx, gy) = recover_gradient(&scalar)?;

    let mut out = Vec::with_capacity(mesh.num_elements());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.tri_coords(k);
        let f = [scalar.values()[tri[0]], scalar.values()[tri[1]], scalar.values()[tri[2]]];
        let value = (f[0] + f[1] + f[2]) / 3.0;
        let grad = p1_gradient(&p, &f);
        let gxl = [gx.values()[tri[0]], gx.values()[tri[1]], gx.values()[tri[2]]];
        let gyl = [gy.values()[tri[0]], gy.values()[tri[1]], gy.values()[tri[2]]];
        let hx = p1_gradient(&p, &gxl);
        let hy = p1_gradient(&p, &gyl);
        out.push([value, grad[0], grad[1], hx[0], 0.5 * (hx[1] + hy[0]), hy[1]]);
    }
    Ok(out)
}

/// Extracts one [`FeatureVector`] per element.
///
/// Column schema (frozen):
/// f0 coarse DWR; f1 viscosity; f2 mean drag coefficient; f3 mean depth;
/// f4 size d; f5 (1/s)cos^2(t) + s sin^2(t); f6 (s - 1/s) sin(t)cos(t);
/// f7 boundary length; f8..f19 forward velocity (per component: value, dx,
/// dy, dxx, sym dxy, dyy at the centroid); f20..f31 the same for the
/// adjoint.
pub fn extract_features(
    problem: &FlowProblem,
    u_h: &Field,
    u_star_h: &Field,
    coarse: &IndicatorField,
) -> Result<Vec<FeatureVector>> {
    let mesh = problem.mesh().clone();
    if u_h.space() != Space::VectorP1 || u_star_h.space() != Space::VectorP1 {
        return Err(Error::invalid("feature extraction expects vector P1 fields"));
    }
    if !u_h.same_mesh(u_star_h)
        || coarse.values().len() != mesh.num_elements()
        || u_h.mesh().num_vertices() != mesh.num_vertices()
    {
        return Err(Error::invalid("feature inputs live on different meshes"));
    }

    let comp = |field: &Field, c: usize| -> Result<Vec<[f64; 6]>> {
        let vals = (0..mesh.num_vertices()).map(|v| field.values()[2 * v + c]).collect();
        component_derivatives(vals, &mesh)
    };
    let fwd = [comp(u_h, 0)?, comp(u_h, 1)?];
    let adj = [comp(u_star_h, 0)?, comp(u_star_h, 1)?];

    let nu = problem.scenario().viscosity;
    let mut out = Vec::with_capacity(mesh.num_elements());
    for k in 0..mesh.num_elements() {
        let geom = element_geometry(&mesh, k)?;
        let (sin_t, cos_t) = geom.theta.sin_cos();
        let mut f = [0.0; FEATURE_COUNT];
        f[0] = coarse.values()[k];
        f[1] = nu;
        f[2] = problem.element_mean_drag(k);
        f[3] = problem.element_mean_bathymetry(k);
        f[4] = geom.d;
        f[5] = cos_t * cos_t / geom.s + geom.s * sin_t * sin_t;
        f[6] = (geom.s - 1.0 / geom.s) * sin_t * cos_t;
        f[7] = geom.boundary_length;
        for c in 0..2 {
            f[8 + 6 * c..8 + 6 * (c + 1)].copy_from_slice(&fwd[c][k]);
            f[20 + 6 * c..20 + 6 * (c + 1)].copy_from_slice(&adj[c][k]);
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature on element {k}")));
        }
        out.push(FeatureVector(f));
    }
    Ok(out)
}

/// Writes the dataset as comma-separated values with the documented header,
/// full-precision decimals, one row per element.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("scenario,iter");
    for i in 0..FEATURE_COUNT {
        out.push_str(&format!(",f{i:02}"));
    }
    out.push_str(",target\n");
    for row in &dataset.rows {
        out.push_str(&format!("{},{}", row.scenario, row.iteration));
        for v in row.features.as_slice() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", row.target));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let ln = i + 1;
        let line = line.map_err(|e| Error::parse(ln, e.to_string()))?;
        if ln == 1 {
            if !line.starts_with("scenario,iter,f00") {
                return Err(Error::parse(ln, "missing dataset header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FEATURE_COUNT + 3 {
            return Err(Error::parse(ln, format!("expected {} columns", FEATURE_COUNT + 3)));
        }
        let scenario = fields[0].parse().map_err(|e| Error::parse(ln, format!("scenario: {e}")))?;
        let iteration = fields[1].parse().map_err(|e| Error::parse(ln, format!("iter: {e}")))?;
        let mut features = [0.0; FEATURE_COUNT];
        for (j, f) in features.iter_mut().enumerate() {
            *f = fields[2 + j]
                .parse()
                .map_err(|e| Error::parse(ln, format!("f{j:02}: {e}")))?;
        }
        let target = fields[FEATURE_COUNT + 2]
            .parse()
            .map_err(|e| Error::parse(ln, format!("target: {e}")))?;
        rows.push(DatasetRow { scenario, iteration, features: FeatureVector(features), target });
    }
    Ok(Dataset { rows })
}
