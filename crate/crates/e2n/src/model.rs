//! The physical problem: a steady fixed-depth momentum model with nonlinear
//! advection, viscosity and turbine drag, the tidal-farm power output
//! functional, and its discrete adjoint.
//!
//! The weak form is a standard vector P1 Galerkin discretisation with
//! streamline-diffusion stabilisation. Inflow velocity is enforced strongly,
//! the outflow is natural (zero normal stress) and walls are free-slip with
//! the normal component pinned.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    assemble, shape_gradients, solve_linear, Field, Problem, Space, QUAD_DEGREE4,
};
use crate::mesh::{TriMesh, MARKER_INFLOW, MARKER_WALL};

/// Gravitational acceleration, m/s^2. Retained for documentation: the
/// fixed-depth momentum model carries no free-surface pressure gradient.
pub const GRAVITY: f64 = 9.81;

/// Default constant background drag coefficient due to bed friction.
pub const DEFAULT_BACKGROUND_DRAG: f64 = 0.0025;

/// Default density of seawater, kg/m^3.
pub const SEAWATER_DENSITY: f64 = 1030.0;

/// Default turbine thrust coefficient.
pub const DEFAULT_THRUST: f64 = 0.8;

/// Default turbine diameter in metres; also the default initial mesh edge
/// length at full scale. Configurable, since only the footprint geometry
/// depends on it.
pub const DEFAULT_TURBINE_DIAMETER: f64 = 18.0;

/// A tidal turbine parametrised over a square footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turbine {
    pub center: [f64; 2],
    pub diameter: f64,
    pub thrust_coefficient: f64,
}

impl Turbine {
    pub fn new(center: [f64; 2], diameter: f64, thrust_coefficient: f64) -> Self {
        Turbine { center, diameter, thrust_coefficient }
    }

    /// Area of the D x D footprint square.
    pub fn footprint_area(&self) -> f64 {
        self.diameter * self.diameter
    }

    /// Area swept by the blades in the vertical, pi (D/2)^2.
    pub fn swept_area(&self) -> f64 {
        std::f64::consts::PI * (0.5 * self.diameter).powi(2)
    }

    /// Drag increment over the footprint: C_T = (A_swept / A_footprint) c_T / 2.
    pub fn drag_increment(&self) -> f64 {
        0.5 * (self.swept_area() / self.footprint_area()) * self.thrust_coefficient
    }

    pub fn contains(&self, point: [f64; 2]) -> bool {
        let r = 0.5 * self.diameter;
        (point[0] - self.center[0]).abs() <= r && (point[1] - self.center[1]).abs() <= r
    }
}

/// Sea floor depth below the reference level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bathymetry {
    Constant(f64),
    /// Parabolic valley across the channel: b = base + amplitude * yt (1 - yt)
    /// with yt the y-coordinate rescaled to [0, 1].
    Trench { base: f64, amplitude: f64 },
}

impl Bathymetry {
    pub fn eval(&self, y: f64, domain_height: f64) -> f64 {
        match *self {
            Bathymetry::Constant(b) => b,
            Bathymetry::Trench { base, amplitude } => {
                let yt = y / domain_height;
                base + amplitude * yt * (1.0 - yt)
            }
        }
    }
}

/// One flow configuration: rectangular domain, turbines and physics.
///
/// A negative inflow speed means flow in the negative x-direction, entering
/// through the boundary marked as inflow (marker 1).
#[derive(Debug, Clone)]
pub struct Scenario {
    pub width: f64,
    pub height: f64,
    pub turbines: Vec<Turbine>,
    pub viscosity: f64,
    pub bathymetry: Bathymetry,
    pub inflow_speed: f64,
    pub background_drag: f64,
    pub water_density: f64,
}

impl Scenario {
    /// Checks the physical and geometric invariants: positive viscosity and
    /// bathymetry, thrust in (0,1), footprints inside the domain with the
    /// centers at least 50 m from every boundary, and pairwise center
    /// distances of at least 50 m.
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::invalid("domain dimensions must be positive"));
        }
        if !(self.viscosity > 0.0) {
            return Err(Error::invalid("viscosity must be positive"));
        }
        if !(self.background_drag > 0.0) {
            return Err(Error::invalid("background drag must be positive"));
        }
        if !(self.water_density > 0.0) {
            return Err(Error::invalid("water density must be positive"));
        }
        let b_min = match self.bathymetry {
            Bathymetry::Constant(b) => b,
            Bathymetry::Trench { base, amplitude } => base.min(base + amplitude * 0.25),
        };
        if !(b_min > 0.0) {
            return Err(Error::invalid("bathymetry must be positive everywhere"));
        }
        for (i, t) in self.turbines.iter().enumerate() {
            if !(t.diameter > 0.0) {
                return Err(Error::invalid(format!("turbine {i} has non-positive diameter")));
            }
            if !(t.thrust_coefficient > 0.0 && t.thrust_coefficient < 1.0) {
                return Err(Error::invalid(format!("turbine {i} thrust outside (0, 1)")));
            }
            let r = 0.5 * t.diameter;
            let margin = 50.0f64.max(r);
            if t.center[0] < margin
                || t.center[0] > self.width - margin
                || t.center[1] < margin
                || t.center[1] > self.height - margin
            {
                return Err(Error::invalid(format!(
                    "turbine {i} footprint too close to the domain boundary"
                )));
            }
            for (j, o) in self.turbines.iter().enumerate().take(i) {
                let d = ((t.center[0] - o.center[0]).powi(2) + (t.center[1] - o.center[1]).powi(2))
                    .sqrt();
                if d < 50.0 {
                    return Err(Error::invalid(format!("turbines {j} and {i} closer than 50 m")));
                }
            }
        }
        Ok(())
    }

    /// Total drag coefficient C_D = C_B + C_T at a point.
    pub fn drag_coefficient(&self, point: [f64; 2]) -> f64 {
        self.background_drag + self.turbine_drag(point)
    }

    /// Turbine-only drag C_T at a point; zero outside every footprint.
    pub fn turbine_drag(&self, point: [f64; 2]) -> f64 {
        self.turbines
            .iter()
            .filter(|t| t.contains(point))
            .map(|t| t.drag_increment())
            .sum()
    }

    pub fn bathymetry_at(&self, point: [f64; 2]) -> f64 {
        self.bathymetry.eval(point[1], self.height)
    }
}

/// Which discrete operator a [`FlowProblem`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// The nonlinear momentum model with the cubic power output QoI.
    Momentum,
    /// Linear oracle used for effectivity checks: advection frozen at the
    /// uniform inflow velocity, drag linearised about it, and a linear QoI
    /// (streamwise momentum over the turbine regions). The turbine profile
    /// is mollified so the exact solution is regular enough for clean
    /// convergence ladders.
    LinearSurrogate,
}

/// Quintic smoothstep, C^2 at both ends.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Mollified turbine indicator: 1 inside the footprint, fading to 0 over a
/// band wide enough to be resolved on coarse oracle meshes.
fn smooth_indicator(t: &Turbine, x: [f64; 2]) -> f64 {
    let r_in = 0.5 * t.diameter;
    let r_out = 5.0 * t.diameter;
    let px = smoothstep((r_out - (x[0] - t.center[0]).abs()) / (r_out - r_in));
    let py = smoothstep((r_out - (x[1] - t.center[1]).abs()) / (r_out - r_in));
    px * py
}

type VectorFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// One quadrature point with a drag coefficient attached. The drag integral
/// splits additively into a background part over the whole element and one
/// extra part per turbine footprint intersection, so every point carries the
/// coefficient of its own piece.
#[derive(Debug, Clone, Copy)]
struct QuadPoint {
    /// Barycentric coordinates with respect to the parent triangle.
    bary: [f64; 3],
    /// Quadrature weight times the area of its piece.
    wa: f64,
    phys: [f64; 2],
    /// Drag coefficient of this piece divided by the local depth.
    kappa: f64,
    /// rho_w * C_T of this piece; zero on the background part.
    rho_ct: f64,
}

struct ElementData {
    area: f64,
    grads: [[f64; 2]; 3],
    /// Longest edge length, the stabilisation length scale.
    h: f64,
    /// Six points covering the whole element (background drag coefficient).
    base: [QuadPoint; 6],
    /// Composite rule over the turbine footprint intersections.
    extra: Vec<QuadPoint>,
    /// Exact element means, for feature extraction.
    mean_drag: f64,
    mean_bathymetry: f64,
}

/// Clips a triangle against an axis-aligned rectangle (Sutherland-Hodgman).
/// Both convex, so the result is a convex polygon with at most 7 vertices.
fn clip_triangle_to_rect(tri: &[[f64; 2]; 3], lo: [f64; 2], hi: [f64; 2]) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = tri.to_vec();
    // (axis, bound, keep_below)
    let planes = [(0, lo[0], false), (0, hi[0], true), (1, lo[1], false), (1, hi[1], true)];
    for (axis, bound, keep_below) in planes {
        if poly.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| {
            if keep_below {
                p[axis] <= bound
            } else {
                p[axis] >= bound
            }
        };
        let mut out = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (ia, ib) = (inside(&a), inside(&b));
            if ia {
                out.push(a);
            }
            if ia != ib {
                let t = (bound - a[axis]) / (b[axis] - a[axis]);
                let mut p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                p[axis] = bound;
                out.push(p);
            }
        }
        poly = out;
    }
    poly
}

/// Barycentric coordinates of `x` with respect to a triangle.
fn barycentric(p: &[[f64; 2]; 3], x: [f64; 2]) -> [f64; 3] {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1])) / det;
    let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Discrete flow problem on a mesh: supplies element residuals/Jacobians to
/// the assembly layer, plus the QoI and its derivative.
pub struct FlowProblem {
    scenario: Scenario,
    mesh: Arc<TriMesh>,
    kind: ProblemKind,
    constraints: Vec<(usize, f64)>,
    elements: Vec<ElementData>,
    forcing: Option<VectorFn>,
    /// Per-element stabilisation parameters frozen by the caller. Used by
    /// the enriched error evaluation: freezing tau at its base-element value
    /// makes the refined-space form nested-compatible with the base form.
    frozen_tau: Option<Vec<f64>>,
}

impl FlowProblem {
    pub fn new(kind: ProblemKind, scenario: &Scenario, mesh: Arc<TriMesh>) -> Result<Self> {
        Self::with_inflow_profile(kind, scenario, mesh, None)
    }

    /// Variant with a non-uniform inflow profile, used by manufactured
    /// solution tests.
    pub fn with_inflow_profile(
        kind: ProblemKind,
        scenario: &Scenario,
        mesh: Arc<TriMesh>,
        inflow_profile: Option<VectorFn>,
    ) -> Result<Self> {
        scenario.validate()?;
        if kind == ProblemKind::LinearSurrogate && scenario.inflow_speed == 0.0 {
            return Err(Error::invalid("linear surrogate needs a nonzero inflow speed"));
        }

        // Vertex classification from boundary markers. Inflow constraints
        // pin both components and take precedence at corners.
        let mut inflow_verts = BTreeSet::new();
        let mut wall_verts = BTreeSet::new();
        for &(a, b, marker) in mesh.boundary_edges() {
            match marker {
                MARKER_INFLOW => {
                    inflow_verts.insert(a);
                    inflow_verts.insert(b);
                }
                MARKER_WALL => {
                    wall_verts.insert(a);
                    wall_verts.insert(b);
                }
                _ => {}
            }
        }
        let mut constraints = Vec::new();
        for &v in &inflow_verts {
            let value = match &inflow_profile {
                Some(f) => f(mesh.vertices()[v]),
                None => [scenario.inflow_speed, 0.0],
            };
            constraints.push((2 * v, value[0]));
            constraints.push((2 * v + 1, value[1]));
        }
        for &v in wall_verts.difference(&inflow_verts) {
            constraints.push((2 * v + 1, 0.0));
        }
        constraints.sort_unstable_by_key(|&(dof, _)| dof);

        let elements = (0..mesh.num_elements())
            .map(|k| Self::element_data(kind, scenario, &mesh, k))
            .collect();

        Ok(FlowProblem {
            scenario: scenario.clone(),
            mesh,
            kind,
            constraints,
            elements,
            forcing: None,
            frozen_tau: None,
        })
    }

    /// Pins the stabilisation parameter of each element to the given value;
    /// its state dependence drops out of the Jacobian.
    pub fn with_frozen_stabilization(mut self, tau: Vec<f64>) -> Result<Self> {
        if tau.len() != self.mesh.num_elements() {
            return Err(Error::DimensionMismatch(format!(
                "{} stabilisation values for {} elements",
                tau.len(),
                self.mesh.num_elements()
            )));
        }
        self.frozen_tau = Some(tau);
        Ok(self)
    }

    /// Stabilisation parameter of every element at the given state. The
    /// linear surrogate runs unstabilised, so its values are all zero.
    pub fn stabilization_parameters(&self, state: &Field) -> Vec<f64> {
        (0..self.mesh.num_elements())
            .map(|k| {
                if self.kind == ProblemKind::LinearSurrogate {
                    return 0.0;
                }
                if let Some(tau) = &self.frozen_tau {
                    return tau[k];
                }
                let tri = self.mesh.triangles()[k];
                let mut ubar = [0.0; 2];
                for &v in &tri {
                    ubar[0] += state.values()[2 * v] / 3.0;
                    ubar[1] += state.values()[2 * v + 1] / 3.0;
                }
                let q = (ubar[0] * ubar[0] + ubar[1] * ubar[1]).sqrt();
                self.tau(self.elements[k].h, q)
            })
            .collect()
    }

    fn element_data(kind: ProblemKind, scenario: &Scenario, mesh: &TriMesh, k: usize) -> ElementData {
        let p = mesh.tri_coords(k);
        let area = mesh.signed_area(k);
        let grads = shape_gradients(&p);
        let h = (0..3)
            .map(|e| {
                let (a, b) = (p[e], p[(e + 1) % 3]);
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);

        let mut base = [QuadPoint { bary: [0.0; 3], wa: 0.0, phys: [0.0; 2], kappa: 0.0, rho_ct: 0.0 }; 6];
        let mut mean_bathymetry = 0.0;
        let mut mean_drag = scenario.background_drag;
        for (q, (bary, w)) in QUAD_DEGREE4.iter().enumerate() {
            let x = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            let b = scenario.bathymetry_at(x);
            let ct = match kind {
                ProblemKind::Momentum => 0.0,
                ProblemKind::LinearSurrogate => scenario
                    .turbines
                    .iter()
                    .map(|t| t.drag_increment() * smooth_indicator(t, x))
                    .sum(),
            };
            base[q] = QuadPoint {
                bary: *bary,
                wa: w * area,
                phys: x,
                kappa: (scenario.background_drag + ct) / b,
                rho_ct: scenario.water_density * ct,
            };
            mean_bathymetry += w * b;
            mean_drag += w * ct;
        }
        if kind == ProblemKind::LinearSurrogate {
            return ElementData { area, grads, h, base, extra: Vec::new(), mean_drag, mean_bathymetry };
        }

        // Exact footprint resolution: clip each footprint against the
        // triangle and lay the same rule over a fan triangulation of the
        // intersection polygon.
        let mut extra = Vec::new();
        let mut turbine_drag_area = 0.0;
        for t in &scenario.turbines {
            let r = 0.5 * t.diameter;
            let lo = [t.center[0] - r, t.center[1] - r];
            let hi = [t.center[0] + r, t.center[1] + r];
            if p.iter().all(|v| v[0] < lo[0])
                || p.iter().all(|v| v[0] > hi[0])
                || p.iter().all(|v| v[1] < lo[1])
                || p.iter().all(|v| v[1] > hi[1])
            {
                continue;
            }
            let poly = clip_triangle_to_rect(&p, lo, hi);
            let ct = t.drag_increment();
            for i in 1..poly.len().saturating_sub(1) {
                let sub = [poly[0], poly[i], poly[i + 1]];
                let sub_area = 0.5
                    * ((sub[1][0] - sub[0][0]) * (sub[2][1] - sub[0][1])
                        - (sub[2][0] - sub[0][0]) * (sub[1][1] - sub[0][1]));
                if sub_area <= 1e-14 * area {
                    continue;
                }
                turbine_drag_area += ct * sub_area;
                for (bary, w) in QUAD_DEGREE4 {
                    let x = [
                        bary[0] * sub[0][0] + bary[1] * sub[1][0] + bary[2] * sub[2][0],
                        bary[0] * sub[0][1] + bary[1] * sub[1][1] + bary[2] * sub[2][1],
                    ];
                    let b = scenario.bathymetry_at(x);
                    extra.push(QuadPoint {
                        bary: barycentric(&p, x),
                        wa: w * sub_area,
                        phys: x,
                        kappa: ct / b,
                        rho_ct: scenario.water_density * ct,
                    });
                }
            }
        }

        ElementData {
            area,
            grads,
            h,
            base,
            extra,
            mean_drag: mean_drag + turbine_drag_area / area,
            mean_bathymetry,
        }
    }

    /// Adds a body force; the strong residual used by the stabilisation
    /// includes it, so manufactured solutions stay consistent.
    pub fn with_forcing(mut self, forcing: VectorFn) -> Self {
        self.forcing = Some(forcing);
        self
    }

    /// Exact element mean of the total drag coefficient.
    pub fn element_mean_drag(&self, k: usize) -> f64 {
        self.elements[k].mean_drag
    }

    /// Element mean of the bathymetry (degree-4 quadrature).
    pub fn element_mean_bathymetry(&self, k: usize) -> f64 {
        self.elements[k].mean_bathymetry
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Stabilisation parameter for element mean speed `q`:
    /// tau = h/(2q) min(1, Pe/3) with Pe = q h/(2 nu), which is
    /// min(h^2/(12 nu), h/(2q)) and stays finite as q -> 0.
    fn tau(&self, h: f64, q: f64) -> f64 {
        let diffusive = h * h / (12.0 * self.scenario.viscosity);
        if q <= f64::MIN_POSITIVE {
            diffusive
        } else {
            diffusive.min(h / (2.0 * q))
        }
    }

    /// The nonlinear power output J = int rho C_T |u|^3 dx, or the linear
    /// streamwise-momentum functional for the surrogate kind.
    pub fn qoi(&self, state: &Field) -> f64 {
        let dir = self.flow_direction();
        let mut total = 0.0;
        for (k, tri) in self.mesh.triangles().iter().enumerate() {
            let ed = &self.elements[k];
            for qp in ed.base.iter().chain(&ed.extra) {
                if qp.rho_ct == 0.0 {
                    continue;
                }
                let uq = interp(state.values(), tri, qp.bary);
                total += match self.kind {
                    ProblemKind::Momentum => {
                        let speed = (uq[0] * uq[0] + uq[1] * uq[1]).sqrt();
                        qp.wa * qp.rho_ct * speed.powi(3)
                    }
                    ProblemKind::LinearSurrogate => {
                        qp.wa * qp.rho_ct * (uq[0] * dir[0] + uq[1] * dir[1])
                    }
                };
            }
        }
        total
    }

    /// Derivative of the QoI with respect to the state coefficients.
    pub fn qoi_gradient(&self, state: &Field) -> Vec<f64> {
        let dir = self.flow_direction();
        let mut grad = vec![0.0; self.num_dofs()];
        for (k, tri) in self.mesh.triangles().iter().enumerate() {
            let ed = &self.elements[k];
            for qp in ed.base.iter().chain(&ed.extra) {
                if qp.rho_ct == 0.0 {
                    continue;
                }
                let uq = interp(state.values(), tri, qp.bary);
                for i in 0..3 {
                    for c in 0..2 {
                        let dof = 2 * tri[i] + c;
                        grad[dof] += match self.kind {
                            ProblemKind::Momentum => {
                                let speed = (uq[0] * uq[0] + uq[1] * uq[1]).sqrt();
                                qp.wa * qp.rho_ct * 3.0 * speed * uq[c] * qp.bary[i]
                            }
                            ProblemKind::LinearSurrogate => {
                                qp.wa * qp.rho_ct * dir[c] * qp.bary[i]
                            }
                        };
                    }
                }
            }
        }
        grad
    }

    fn flow_direction(&self) -> [f64; 2] {
        if self.scenario.inflow_speed < 0.0 {
            [-1.0, 0.0]
        } else {
            [1.0, 0.0]
        }
    }

    /// Frozen advection velocity of the linear surrogate.
    fn frozen_velocity(&self) -> [f64; 2] {
        [self.scenario.inflow_speed, 0.0]
    }
}

fn interp(values: &[f64], tri: &[usize; 3], bary: [f64; 3]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (i, &v) in tri.iter().enumerate() {
        out[0] += bary[i] * values[2 * v];
        out[1] += bary[i] * values[2 * v + 1];
    }
    out
}

const SPEED_FLOOR: f64 = 1e-30;

impl Problem for FlowProblem {
    fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    fn constraints(&self) -> &[(usize, f64)] {
        &self.constraints
    }

    fn element_system(
        &self,
        k: usize,
        local: &[[f64; 2]; 3],
        residual: &mut [f64; 6],
        jacobian: Option<&mut [[f64; 6]; 6]>,
    ) {
        let ed = &self.elements[k];
        let nu = self.scenario.viscosity;
        let g = &ed.grads;
        residual.fill(0.0);
        let mut jac = [[0.0; 6]; 6];
        let want_jac = jacobian.is_some();

        // Constant-per-element velocity gradient: du[c][d] = d u_c / d x_d.
        let mut du = [[0.0; 2]; 2];
        for i in 0..3 {
            for c in 0..2 {
                for d in 0..2 {
                    du[c][d] += local[i][c] * g[i][d];
                }
            }
        }

        // Viscous block is constant over the element.
        for j in 0..3 {
            for c in 0..2 {
                let row = 2 * j + c;
                residual[row] += ed.area * nu * (du[c][0] * g[j][0] + du[c][1] * g[j][1]);
                if want_jac {
                    for m in 0..3 {
                        jac[row][2 * m + c] +=
                            ed.area * nu * (g[m][0] * g[j][0] + g[m][1] * g[j][1]);
                    }
                }
            }
        }

        let linear = self.kind == ProblemKind::LinearSurrogate;
        let frozen = self.frozen_velocity();
        let frozen_speed = (frozen[0] * frozen[0] + frozen[1] * frozen[1]).sqrt();

        // Stabilisation scale from the element mean speed.
        let ubar = [
            (local[0][0] + local[1][0] + local[2][0]) / 3.0,
            (local[0][1] + local[1][1] + local[2][1]) / 3.0,
        ];
        let qbar = if linear {
            frozen_speed
        } else {
            (ubar[0] * ubar[0] + ubar[1] * ubar[1]).sqrt()
        };
        // The linear surrogate is a pure Galerkin oracle: with no
        // mesh-dependent stabilisation its forms nest exactly across
        // refinement, which is what the effectivity checks rely on.
        let (tau, dtau_dq) = if linear {
            (0.0, 0.0)
        } else {
            match &self.frozen_tau {
                Some(tau) => (tau[k], 0.0),
                None => {
                    let tau = self.tau(ed.h, qbar);
                    // d tau / d qbar, nonzero only on the advective branch.
                    let dtau = if qbar > SPEED_FLOOR
                        && h_over_2q(ed.h, qbar) < ed.h * ed.h / (12.0 * nu)
                    {
                        -ed.h / (2.0 * qbar * qbar)
                    } else {
                        0.0
                    };
                    (tau, dtau)
                }
            }
        };

        // Base points carry advection, background drag, forcing and their
        // stabilisation; extra points add the footprint drag (Galerkin and
        // stabilisation couplings) over the exact intersections.
        for (qp, with_advection) in ed
            .base
            .iter()
            .map(|q| (q, true))
            .chain(ed.extra.iter().map(|q| (q, false)))
        {
            let bary = qp.bary;
            let wa = qp.wa;
            let uq = [
                bary[0] * local[0][0] + bary[1] * local[1][0] + bary[2] * local[2][0],
                bary[0] * local[0][1] + bary[1] * local[1][1] + bary[2] * local[2][1],
            ];
            let adv = if linear { frozen } else { uq };
            let speed = if linear {
                frozen_speed
            } else {
                (uq[0] * uq[0] + uq[1] * uq[1]).sqrt()
            };
            let kappa = qp.kappa;
            let f = match (&self.forcing, with_advection) {
                (Some(func), true) => func(qp.phys),
                _ => [0.0, 0.0],
            };

            // This piece's share of the strong residual (P1: no viscous
            // part): advection and forcing live on base points only.
            let mut rs = [0.0; 2];
            for c in 0..2 {
                rs[c] = kappa * speed * uq[c];
                if with_advection {
                    rs[c] += adv[0] * du[c][0] + adv[1] * du[c][1] - f[c];
                }
            }

            for j in 0..3 {
                let lam_j = bary[j];
                let adv_gj = adv[0] * g[j][0] + adv[1] * g[j][1];
                for c in 0..2 {
                    let row = 2 * j + c;
                    let mut galerkin = lam_j * kappa * speed * uq[c];
                    if with_advection {
                        galerkin += lam_j * (adv[0] * du[c][0] + adv[1] * du[c][1]) - lam_j * f[c];
                    }
                    residual[row] += wa * (galerkin + tau * adv_gj * rs[c]);

                    if !want_jac {
                        continue;
                    }
                    for m in 0..3 {
                        let lam_m = bary[m];
                        let u_gm = adv[0] * g[m][0] + adv[1] * g[m][1];
                        for e in 0..2 {
                            let col = 2 * m + e;
                            let delta = if c == e { 1.0 } else { 0.0 };

                            let d_adv = if !with_advection {
                                0.0
                            } else if linear {
                                delta * u_gm
                            } else {
                                lam_m * du[c][e] + delta * u_gm
                            };
                            // d/dU[m][e] of kappa * speed * u_c.
                            let d_drag = if linear {
                                kappa * frozen_speed * delta * lam_m
                            } else if speed > SPEED_FLOOR {
                                kappa * lam_m * (uq[c] * uq[e] / speed + speed * delta)
                            } else {
                                0.0
                            };

                            let mut entry = wa * lam_j * (d_adv + d_drag);

                            // Streamline-diffusion linearisation.
                            entry += wa * tau * adv_gj * (d_adv + d_drag);
                            if !linear {
                                // test operator varies with u
                                entry += wa * tau * lam_m * g[j][e] * rs[c];
                                // tau varies with the element mean speed
                                if dtau_dq != 0.0 && qbar > SPEED_FLOOR {
                                    let dq = ubar[e] / (3.0 * qbar);
                                    entry += wa * dtau_dq * dq * adv_gj * rs[c];
                                }
                            }
                            jac[row][col] += entry;
                        }
                    }
                }
            }
        }

        if let Some(out) = jacobian {
            *out = jac;
        }
    }
}

fn h_over_2q(h: f64, q: f64) -> f64 {
    h / (2.0 * q)
}

/// Newton solve of the forward problem from a uniform-inflow initial guess.
pub fn solve_forward(problem: &FlowProblem, abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<(Field, usize)> {
    let mesh = problem.mesh().clone();
    let n = mesh.num_vertices();
    let mut values = vec![0.0; 2 * n];
    for v in 0..n {
        values[2 * v] = problem.scenario.inflow_speed;
    }
    let initial = Field::new(mesh, Space::VectorP1, values)?;
    crate::fem::newton_solve(problem, &initial, abs_tol, rel_tol, max_iter)
}

/// Solves the discrete adjoint equation A^T u* = dJ/du at the given forward
/// state, with homogeneous values at constrained DoFs.
pub fn adjoint_solve(problem: &FlowProblem, forward: &Field) -> Result<Field> {
    let (_, mut jac) = assemble(problem, forward)?;
    let mask = problem.constraint_mask();
    jac.zero_columns_except_diagonal(&mask);
    let at = jac.transpose();
    let mut rhs = problem.qoi_gradient(forward);
    for &(dof, _) in problem.constraints() {
        rhs[dof] = 0.0;
    }
    let values = solve_linear(&at, &rhs)?;
    Field::new(problem.mesh().clone(), Space::VectorP1, values)
}

/// Scenario file format: `[domain]`, `[physics]` and repeated `[turbine]`
/// sections of `key = value` lines. Keys: width, height; viscosity,
/// bathymetry (`constant B` or `trench BASE AMPLITUDE`), inflow_speed,
/// background_drag, water_density; x, y, diameter, thrust_coefficient.
pub fn write_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("[domain]\n");
    out.push_str(&format!("width = {}\n", scenario.width));
    out.push_str(&format!("height = {}\n\n", scenario.height));
    out.push_str("[physics]\n");
    out.push_str(&format!("viscosity = {}\n", scenario.viscosity));
    match scenario.bathymetry {
        Bathymetry::Constant(b) => out.push_str(&format!("bathymetry = constant {b}\n")),
        Bathymetry::Trench { base, amplitude } => {
            out.push_str(&format!("bathymetry = trench {base} {amplitude}\n"))
        }
    }
    out.push_str(&format!("inflow_speed = {}\n", scenario.inflow_speed));
    out.push_str(&format!("background_drag = {}\n", scenario.background_drag));
    out.push_str(&format!("water_density = {}\n", scenario.water_density));
    for t in &scenario.turbines {
        out.push_str("\n[turbine]\n");
        out.push_str(&format!("x = {}\n", t.center[0]));
        out.push_str(&format!("y = {}\n", t.center[1]));
        out.push_str(&format!("diameter = {}\n", t.diameter));
        out.push_str(&format!("thrust_coefficient = {}\n", t.thrust_coefficient));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Domain,
        Physics,
        Turbine,
    }

    let file = std::fs::File::open(path)?;
    let mut scenario = Scenario {
        width: 0.0,
        height: 0.0,
        turbines: Vec::new(),
        viscosity: 0.0,
        bathymetry: Bathymetry::Constant(0.0),
        inflow_speed: 0.0,
        background_drag: DEFAULT_BACKGROUND_DRAG,
        water_density: SEAWATER_DENSITY,
    };
    let mut section = Section::None;
    let mut turbine: Option<Turbine> = None;
    let flush = |t: &mut Option<Turbine>, list: &mut Vec<Turbine>| {
        if let Some(t) = t.take() {
            list.push(t);
        }
    };

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let ln = i + 1;
        let line = line.map_err(|e| Error::parse(ln, e.to_string()))?;
        let line = line.split('#').next().unwrap_or("").trim().to_string();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            flush(&mut turbine, &mut scenario.turbines);
            section = match name {
                "domain" => Section::Domain,
                "physics" => Section::Physics,
                "turbine" => {
                    turbine = Some(Turbine::new([0.0, 0.0], DEFAULT_TURBINE_DIAMETER, DEFAULT_THRUST));
                    Section::Turbine
                }
                other => return Err(Error::parse(ln, format!("unknown section [{other}]"))),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(ln, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse().map_err(|e| Error::parse(ln, format!("{key}: {e}")))
        };
        match section {
            Section::Domain => match key {
                "width" => scenario.width = num(value)?,
                "height" => scenario.height = num(value)?,
                other => return Err(Error::parse(ln, format!("unknown domain key `{other}`"))),
            },
            Section::Physics => match key {
                "viscosity" => scenario.viscosity = num(value)?,
                "inflow_speed" => scenario.inflow_speed = num(value)?,
                "background_drag" => scenario.background_drag = num(value)?,
                "water_density" => scenario.water_density = num(value)?,
                "bathymetry" => {
                    let mut it = value.split_whitespace();
                    match it.next() {
                        Some("constant") => {
                            let b = num(it.next().ok_or_else(|| {
                                Error::parse(ln, "constant bathymetry needs a value")
                            })?)?;
                            scenario.bathymetry = Bathymetry::Constant(b);
                        }
                        Some("trench") => {
                            let base = num(it.next().ok_or_else(|| {
                                Error::parse(ln, "trench bathymetry needs base and amplitude")
                            })?)?;
                            let amplitude = num(it.next().ok_or_else(|| {
                                Error::parse(ln, "trench bathymetry needs base and amplitude")
                            })?)?;
                            scenario.bathymetry = Bathymetry::Trench { base, amplitude };
                        }
                        other => {
                            return Err(Error::parse(ln, format!("unknown bathymetry `{other:?}`")))
                        }
                    }
                }
                other => return Err(Error::parse(ln, format!("unknown physics key `{other}`"))),
            },
            Section::Turbine => {
                let t = turbine.as_mut().expect("turbine section active");
                match key {
                    "x" => t.center[0] = num(value)?,
                    "y" => t.center[1] = num(value)?,
                    "diameter" => t.diameter = num(value)?,
                    "thrust_coefficient" => t.thrust_coefficient = num(value)?,
                    other => return Err(Error::parse(ln, format!("unknown turbine key `{other}`"))),
                }
            }
            Section::None => return Err(Error::parse(ln, "key outside any section")),
        }
    }
    flush(&mut turbine, &mut scenario.turbines);
    scenario.validate()?;
    Ok(scenario)
}
