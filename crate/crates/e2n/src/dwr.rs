//! Dual-weighted-residual error estimation: the cheap base-space indicator
//! and the reference enrichment-based indicator computed on a uniformly
//! refined mesh and projected back conservatively.
//!
//! Indicator values are signed element contributions whose sum approximates
//! the QoI error J(u) - J(u_h).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{element_weighted_residuals, Field, Problem, Space};
use crate::mesh::{project_indicator, prolong, uniform_refine, TriMesh};
use crate::model::{adjoint_solve, solve_forward, FlowProblem};

/// Per-element error contributions on one mesh.
#[derive(Debug, Clone)]
pub struct IndicatorField {
    mesh: Arc<TriMesh>,
    values: Vec<f64>,
    total: f64,
}

impl IndicatorField {
    pub fn new(mesh: Arc<TriMesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_elements() {
            return Err(Error::DimensionMismatch(format!(
                "{} indicator values for {} elements",
                values.len(),
                mesh.num_elements()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("indicator contains non-finite values"));
        }
        let total = values.iter().sum();
        Ok(IndicatorField { mesh, values, total })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of all element contributions (the estimator when the field came
    /// from an estimation routine).
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn abs_total(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Element contributions rho(u_h, u*_h)|_K evaluated entirely in the base
/// space. Cheap, sums to ~zero by Galerkin orthogonality, but the individual
/// entries carry error structure.
pub fn coarse_indicator(
    problem: &FlowProblem,
    u_h: &Field,
    u_star_h: &Field,
) -> Result<IndicatorField> {
    if !u_h.same_mesh(u_star_h) {
        return Err(Error::invalid("forward and adjoint fields live on different meshes"));
    }
    let weighted = element_weighted_residuals(problem, u_h, u_star_h)?;
    // Sign convention: sum of contributions approximates J(u) - J(u_h).
    let values = weighted.into_iter().map(|v| -v).collect();
    IndicatorField::new(problem.mesh().clone(), values)
}

/// Enrichment-based indicator: refine, prolong the base solutions, solve the
/// adjoint in the enriched space linearised about the prolonged forward
/// state, weight the fine residual by the adjoint difference, and project
/// the contributions back to the base mesh.
///
/// Returns the base-mesh indicator and the estimator (its exact sum).
pub fn enriched_indicator(
    problem: &FlowProblem,
    u_h: &Field,
    u_star_h: &Field,
) -> Result<(IndicatorField, f64)> {
    if !u_h.same_mesh(u_star_h) {
        return Err(Error::invalid("forward and adjoint fields live on different meshes"));
    }
    let base_mesh = problem.mesh().clone();
    let fine_mesh = Arc::new(uniform_refine(&base_mesh));

    let u_prolonged = prolong(u_h, &fine_mesh)?;
    let adj_prolonged = prolong(u_star_h, &fine_mesh)?;

    // Children inherit the base element's stabilisation parameter, frozen at
    // the base state. The refined form then restricts exactly to the base
    // form on prolonged fields, so the prolonged adjoint contributes nothing
    // to the estimator (up to quadrature) and the weight isolates the
    // enrichment information.
    let base_tau = problem.stabilization_parameters(u_h);
    let fine_tau: Vec<f64> = fine_mesh
        .parent_map()
        .expect("refined mesh has parents")
        .iter()
        .map(|&p| base_tau[p])
        .collect();
    let fine_problem = FlowProblem::new(problem.kind(), problem.scenario(), fine_mesh.clone())?
        .with_frozen_stabilization(fine_tau)?;
    let adj_fine = adjoint_solve(&fine_problem, &u_prolonged)?;

    // Weight: enriched adjoint minus the prolonged base adjoint.
    let mut weight = adj_fine;
    for (w, p) in weight.values_mut().iter_mut().zip(adj_prolonged.values()) {
        *w -= p;
    }

    let weighted = element_weighted_residuals(&fine_problem, &u_prolonged, &weight)?;
    let fine_values: Vec<f64> = weighted.into_iter().map(|v| -v).collect();
    let fine_field = Field::new(fine_mesh, Space::P0, fine_values)?;
    let base_field = project_indicator(&fine_field, &base_mesh)?;

    let indicator = IndicatorField::new(base_mesh, base_field.into_values())?;
    let estimator = indicator.total();
    Ok((indicator, estimator))
}

/// Newton tolerances used by the effectivity diagnostic.
const EFF_ABS_TOL: f64 = 1e-9;
const EFF_MAX_ITER: usize = 30;

/// Ratio of the enriched estimator to the reference QoI error
/// J(u_ref) - J(u_h), with u_ref solved on a mesh `reference_levels` uniform
/// refinements beyond the base mesh.
pub fn estimator_effectivity(
    problem: &FlowProblem,
    reference_levels: usize,
) -> Result<f64> {
    let (u_h, _) = solve_forward(problem, EFF_ABS_TOL, 0.0, EFF_MAX_ITER)?;
    let adj = adjoint_solve(problem, &u_h)?;
    let (_, estimator) = enriched_indicator(problem, &u_h, &adj)?;
    let j_base = problem.qoi(&u_h);

    let mut ref_mesh = problem.mesh().clone();
    for _ in 0..reference_levels {
        ref_mesh = Arc::new(uniform_refine(&ref_mesh));
    }
    let ref_problem = FlowProblem::new(problem.kind(), problem.scenario(), ref_mesh)?;
    let (u_ref, _) = solve_forward(&ref_problem, EFF_ABS_TOL, 0.0, EFF_MAX_ITER)?;
    let j_ref = ref_problem.qoi(&u_ref);

    let denominator = j_ref - j_base;
    if denominator.abs() <= 1e-14 * j_ref.abs() {
        return Err(Error::IllConditionedEffectivity { denominator });
    }
    Ok(estimator / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{shape_gradients, QUAD_DEGREE4};
    use crate::mesh::build_structured_mesh;
    use crate::model::{Bathymetry, ProblemKind, Scenario, Turbine};

    fn channel(turbines: Vec<Turbine>) -> Scenario {
        Scenario {
            width: 1200.0,
            height: 500.0,
            turbines,
            viscosity: 0.5,
            bathymetry: Bathymetry::Constant(40.0),
            inflow_speed: 5.0,
            background_drag: 0.0025,
            water_density: 1030.0,
        }
    }

    fn aligned_pair() -> Vec<Turbine> {
        vec![
            Turbine::new([456.0, 250.0], 18.0, 0.8),
            Turbine::new([744.0, 250.0], 18.0, 0.8),
        ]
    }

    #[test]
    fn zero_adjoint_gives_zero_indicator() {
        let s = channel(aligned_pair());
        let mesh = Arc::new(build_structured_mesh(1200.0, 500.0, 100.0).unwrap());
        let problem = FlowProblem::new(ProblemKind::Momentum, &s, mesh.clone()).unwrap();
        let (u, _) = solve_forward(&problem, 1e-9, 0.0, 30).unwrap();
        let zero = Field::zeros(mesh, Space::VectorP1);
        let ind = coarse_indicator(&problem, &u, &zero).unwrap();
        assert!(ind.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn galerkin_orthogonality() {
        let s = channel(aligned_pair());
        let mesh = Arc::new(build_structured_mesh(1200.0, 500.0, 60.0).unwrap());
        let problem = FlowProblem::new(ProblemKind::Momentum, &s, mesh).unwrap();
        let (u, _) = solve_forward(&problem, 1e-10, 0.0, 30).unwrap();
        let adj = adjoint_solve(&problem, &u).unwrap();
        let ind = coarse_indicator(&problem, &u, &adj).unwrap();
        assert!(
            ind.total().abs() <= 1e-8 * ind.abs_total(),
            "sum {:.3e} vs mass {:.3e}",
            ind.total(),
            ind.abs_total()
        );
    }

    /// Independently coded element contribution: the weak integrand is
    /// rewritten from scratch (same quadrature definition, different code
    /// path) and dotted with the localised weight.
    fn brute_force_element(
        s: &Scenario,
        mesh: &TriMesh,
        k: usize,
        u: &Field,
        w: &Field,
    ) -> f64 {
        let tri = mesh.triangles()[k];
        let p = mesh.tri_coords(k);
        let area = mesh.signed_area(k);
        let g = shape_gradients(&p);
        let uloc: Vec<[f64; 2]> = tri.iter().map(|&v| u.vector_at(v)).collect();
        let wloc: Vec<[f64; 2]> = tri.iter().map(|&v| w.vector_at(v)).collect();

        // velocity gradient
        let mut du = [[0.0; 2]; 2];
        for i in 0..3 {
            for c in 0..2 {
                for d in 0..2 {
                    du[c][d] += uloc[i][c] * g[i][d];
                }
            }
        }
        let ubar = [
            (uloc[0][0] + uloc[1][0] + uloc[2][0]) / 3.0,
            (uloc[0][1] + uloc[1][1] + uloc[2][1]) / 3.0,
        ];
        let qbar = (ubar[0] * ubar[0] + ubar[1] * ubar[1]).sqrt();
        let h = (0..3)
            .map(|e| {
                let (a, b) = (p[e], p[(e + 1) % 3]);
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        let diffusive = h * h / (12.0 * s.viscosity);
        let tau = if qbar > 0.0 { diffusive.min(h / (2.0 * qbar)) } else { diffusive };

        let mut total = 0.0;
        // viscous, constant over the element
        for j in 0..3 {
            for c in 0..2 {
                total += wloc[j][c] * area * s.viscosity * (du[c][0] * g[j][0] + du[c][1] * g[j][1]);
            }
        }
        for (bary, wq) in QUAD_DEGREE4 {
            let wa = wq * area;
            let x = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            let uq = [
                bary[0] * uloc[0][0] + bary[1] * uloc[1][0] + bary[2] * uloc[2][0],
                bary[0] * uloc[0][1] + bary[1] * uloc[1][1] + bary[2] * uloc[2][1],
            ];
            let speed = (uq[0] * uq[0] + uq[1] * uq[1]).sqrt();
            let kappa = s.drag_coefficient(x) / s.bathymetry_at(x);
            for j in 0..3 {
                let adv_gj = uq[0] * g[j][0] + uq[1] * g[j][1];
                for c in 0..2 {
                    let adv = uq[0] * du[c][0] + uq[1] * du[c][1];
                    let rs = adv + kappa * speed * uq[c];
                    total += wloc[j][c] * wa * (bary[j] * (adv + kappa * speed * uq[c]) + tau * adv_gj * rs);
                }
            }
        }
        -total
    }

    #[test]
    fn coarse_indicator_matches_brute_force_on_two_triangles() {
        let mut s = channel(vec![]);
        s.width = 1.0;
        s.height = 1.0;
        s.viscosity = 0.3;
        s.inflow_speed = 0.7;
        s.bathymetry = Bathymetry::Constant(2.0);
        let mesh = Arc::new(build_structured_mesh(1.0, 1.0, 1.0).unwrap());
        let problem = FlowProblem::new(ProblemKind::Momentum, &s, mesh.clone()).unwrap();

        let n = mesh.num_vertices();
        let uvals: Vec<f64> = (0..2 * n).map(|i| 0.3 + 0.11 * (i as f64)).collect();
        let wvals: Vec<f64> = (0..2 * n).map(|i| -0.2 + 0.07 * (i as f64 * 1.7).sin()).collect();
        let u = Field::new(mesh.clone(), Space::VectorP1, uvals).unwrap();
        let w = Field::new(mesh.clone(), Space::VectorP1, wvals).unwrap();

        let ind = coarse_indicator(&problem, &u, &w).unwrap();
        for k in 0..mesh.num_elements() {
            let oracle = brute_force_element(&s, &mesh, k, &u, &w);
            assert!(
                (ind.values()[k] - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
                "element {k}: {} vs {}",
                ind.values()[k],
                oracle
            );
        }
    }

    #[test]
    fn enriched_total_matches_sum_and_shrinks_under_refinement() {
        let s = channel(aligned_pair());
        let mut mesh = Arc::new(build_structured_mesh(1200.0, 500.0, 60.0).unwrap());
        let mut magnitudes = Vec::new();
        for _ in 0..3 {
            let problem = FlowProblem::new(ProblemKind::Momentum, &s, mesh.clone()).unwrap();
            let (u, _) = solve_forward(&problem, 1e-10, 0.0, 30).unwrap();
            let adj = adjoint_solve(&problem, &u).unwrap();
            let (ind, est) = enriched_indicator(&problem, &u, &adj).unwrap();
            let sum: f64 = ind.values().iter().sum();
            assert_eq!(est, ind.total());
            assert!((est - sum).abs() <= 1e-12 * sum.abs().max(1e-30));
            magnitudes.push(est.abs());
            mesh = Arc::new(uniform_refine(&mesh));
        }
        assert!(
            magnitudes[0] > magnitudes[1] && magnitudes[1] > magnitudes[2],
            "estimator magnitudes not decreasing: {magnitudes:?}"
        );
    }

    #[test]
    fn translation_equivariance() {
        let mut s = channel(vec![Turbine::new([200.0, 100.0], 18.0, 0.8)]);
        s.width = 2000.0;
        s.height = 1000.0;
        let base = build_structured_mesh(400.0, 200.0, 25.0).unwrap();

        let (dx, dy) = (137.25, 61.5);
        let shifted_vertices: Vec<[f64; 2]> =
            base.vertices().iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let shifted = TriMesh::new(
            shifted_vertices,
            base.triangles().to_vec(),
            base.boundary_edges().to_vec(),
            None,
        )
        .unwrap();

        let mut s2 = s.clone();
        s2.turbines[0].center = [200.0 + dx, 100.0 + dy];

        let run = |scn: &Scenario, mesh: TriMesh| {
            let mesh = Arc::new(mesh);
            let problem = FlowProblem::new(ProblemKind::Momentum, scn, mesh.clone()).unwrap();
            let (u, _) = solve_forward(&problem, 1e-11, 0.0, 30).unwrap();
            let adj = adjoint_solve(&problem, &u).unwrap();
            let (ind, _) = enriched_indicator(&problem, &u, &adj).unwrap();
            ind
        };
        let a = run(&s, base);
        let b = run(&s2, shifted);
        let scale = a.abs_total();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-10 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn effectivity_regression_band_momentum() {
        // Measured once on this configuration and frozen as a band; the
        // nonlinear QoI error is noisy enough that only the order of
        // magnitude is meaningful.
        let s = channel(aligned_pair());
        let mesh = Arc::new(build_structured_mesh(1200.0, 500.0, 36.0).unwrap());
        let problem = FlowProblem::new(ProblemKind::Momentum, &s, mesh).unwrap();
        let eff = estimator_effectivity(&problem, 2).unwrap();
        assert!((0.2..=2.0).contains(&eff), "effectivity {eff}");
    }

    #[test]
    fn effectivity_ill_conditioned_on_zero_levels() {
        let s = channel(aligned_pair());
        let mesh = Arc::new(build_structured_mesh(1200.0, 500.0, 100.0).unwrap());
        let problem = FlowProblem::new(ProblemKind::Momentum, &s, mesh).unwrap();
        assert!(matches!(
            estimator_effectivity(&problem, 0),
            Err(Error::IllConditionedEffectivity { .. })
        ));
    }

    #[test]
    fn effectivity_band_linear_oracle() {
        // Diffusion-dominated regime: the stabilisation stays on its
        // second-order branch on every level of the ladder.
        let mut s = channel(aligned_pair());
        s.viscosity = 60.0;
        let mesh = Arc::new(build_structured_mesh(1200.0, 500.0, 60.0).unwrap());
        let problem = FlowProblem::new(ProblemKind::LinearSurrogate, &s, mesh).unwrap();
        let eff = estimator_effectivity(&problem, 2).unwrap();
        assert!((0.5..=1.1).contains(&eff), "effectivity {eff}");
    }
}
