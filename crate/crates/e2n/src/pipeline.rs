//! Scenario sampling, dataset harvesting, the fixed-point adaptation loop
//! with pluggable estimators, and the convergence/profiling studies.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dwr::{coarse_indicator, enriched_indicator, IndicatorField};
use crate::error::{Error, Result};
use crate::features::{extract_features, Dataset, DatasetRow};
use crate::fem::{Field, Problem};
use crate::mesh::{build_structured_mesh, uniform_refine, TriMesh};
use crate::metric::{build_metric, complexity_schedule};
use crate::model::{
    adjoint_solve, solve_forward, Bathymetry, FlowProblem, ProblemKind, Scenario, Turbine,
    DEFAULT_BACKGROUND_DRAG, DEFAULT_THRUST, DEFAULT_TURBINE_DIAMETER, SEAWATER_DENSITY,
};
use crate::net::{predict_indicator, Mlp};
use crate::remesh::{adapt_mesh, RemeshConfig};

/// Which error indicator drives the adaptation loop.
#[derive(Clone)]
pub enum Estimator {
    /// Enrichment on a uniformly refined mesh (the reference method).
    Standard,
    /// The cheap base-space indicator, as a baseline.
    Coarse,
    /// The trained network.
    E2n(Arc<Mlp>),
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Standard => "standard",
            Estimator::Coarse => "coarse",
            Estimator::E2n(_) => "e2n",
        }
    }
}

/// Fixed-point loop configuration.
#[derive(Clone)]
pub struct AdaptConfig {
    pub target_complexity: f64,
    /// Convergence checks are disabled before this many iterations.
    pub min_iterations: usize,
    pub max_iterations: usize,
    /// Relative QoI change that counts as converged.
    pub qoi_rtol: f64,
    /// Relative element-count change that counts as converged.
    pub element_rtol: f64,
    pub estimator: Estimator,
    /// Edge length of the structured initial mesh.
    pub initial_h: f64,
    /// Metric size exponent parameter.
    pub alpha: f64,
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
}

/// Desk-scale initial mesh edge length: twice the turbine diameter. The
/// full-scale setting uses the diameter itself.
pub const DESK_INITIAL_H: f64 = 2.0 * DEFAULT_TURBINE_DIAMETER;

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            target_complexity: 1600.0,
            min_iterations: 3,
            max_iterations: 35,
            qoi_rtol: 0.005,
            element_rtol: 0.01,
            estimator: Estimator::Standard,
            initial_h: DESK_INITIAL_H,
            alpha: 1.0,
            newton_abs_tol: 1e-8,
            newton_rel_tol: 1e-12,
            newton_max_iter: 30,
        }
    }
}

impl AdaptConfig {
    fn validate(&self) -> Result<()> {
        if self.min_iterations > self.max_iterations {
            return Err(Error::invalid("min iterations exceeds max iterations"));
        }
        if !(self.qoi_rtol > 0.0 && self.element_rtol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline component within one iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct ComponentTimings {
    pub forward: f64,
    pub adjoint: f64,
    pub estimation: f64,
    pub metric: f64,
    pub adapt: f64,
}

impl ComponentTimings {
    pub fn total(&self) -> f64 {
        self.forward + self.adjoint + self.estimation + self.metric + self.adapt
    }

    fn add(&mut self, other: &ComponentTimings) {
        self.forward += other.forward;
        self.adjoint += other.adjoint;
        self.estimation += other.estimation;
        self.metric += other.metric;
        self.adapt += other.adapt;
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub dofs: usize,
    pub elements: usize,
    pub qoi: f64,
    pub timings: ComponentTimings,
}

/// Outcome of one adaptation run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub iterations: Vec<IterationRecord>,
    pub final_qoi: f64,
    pub converged: bool,
    /// Populated when a solver or remesh failure aborted the loop; the
    /// iterations recorded so far are kept.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn total_timings(&self) -> ComponentTimings {
        let mut total = ComponentTimings::default();
        for it in &self.iterations {
            total.add(&it.timings);
        }
        total
    }

    pub fn final_dofs(&self) -> usize {
        self.iterations.last().map_or(0, |it| it.dofs)
    }
}

/// Builds the initial structured mesh of a scenario. A negative inflow speed
/// means the flow enters from the right, so the side markers are exchanged.
pub fn build_scenario_mesh(scenario: &Scenario, h: f64) -> Result<Arc<TriMesh>> {
    let mesh = build_structured_mesh(scenario.width, scenario.height, h)?;
    Ok(Arc::new(if scenario.inflow_speed < 0.0 {
        mesh.with_swapped_inflow_outflow()
    } else {
        mesh
    }))
}

/// Named configurations used throughout testing.
///
/// aligned/offset: two turbines in a 1200 x 500 channel, the second either
/// directly downstream or shifted across the flow; reversed: the aligned
/// setup with the flow direction negated; trench: the offset geometry over a
/// parabolic-valley bathymetry with out-of-range viscosity and inflow.
pub fn preset_scenario(name: &str) -> Result<Scenario> {
    let turbine = |x: f64, y: f64| Turbine::new([x, y], DEFAULT_TURBINE_DIAMETER, DEFAULT_THRUST);
    let base = Scenario {
        width: 1200.0,
        height: 500.0,
        turbines: vec![],
        viscosity: 0.5,
        bathymetry: Bathymetry::Constant(40.0),
        inflow_speed: 5.0,
        background_drag: DEFAULT_BACKGROUND_DRAG,
        water_density: SEAWATER_DENSITY,
    };
    let scenario = match name {
        "aligned" => Scenario {
            turbines: vec![turbine(456.0, 250.0), turbine(744.0, 250.0)],
            ..base
        },
        "offset" => Scenario {
            turbines: vec![turbine(456.0, 232.0), turbine(744.0, 268.0)],
            ..base
        },
        "reversed" => Scenario {
            turbines: vec![turbine(456.0, 250.0), turbine(744.0, 250.0)],
            inflow_speed: -5.0,
            ..base
        },
        "trench" => Scenario {
            turbines: vec![turbine(456.0, 232.0), turbine(744.0, 268.0)],
            viscosity: 2.0,
            bathymetry: Bathymetry::Trench { base: 160.0, amplitude: 40.0 },
            inflow_speed: 10.0,
            ..base
        },
        other => return Err(Error::invalid(format!("unknown preset `{other}`"))),
    };
    Ok(scenario)
}

/// Samples random training scenarios: 1-8 turbines at least 50 m apart and
/// 50 m from every boundary, depth U(20,100), inflow U(0.5,6) and viscosity
/// U(0.1,1). Draw order per scenario: turbine count, per-turbine positions
/// (with rejection), depth, inflow, viscosity.
pub fn generate_scenarios(n: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let count = rng.random_range(1..=8usize);
        let mut turbines: Vec<Turbine> = Vec::with_capacity(count);
        while turbines.len() < count {
            let x = rng.random_range(50.0..1150.0);
            let y = rng.random_range(50.0..450.0);
            let ok = turbines.iter().all(|t| {
                let d = ((t.center[0] - x).powi(2) + (t.center[1] - y).powi(2)).sqrt();
                d >= 50.0
            });
            if ok {
                turbines.push(Turbine::new([x, y], DEFAULT_TURBINE_DIAMETER, DEFAULT_THRUST));
            }
        }
        let depth = rng.random_range(20.0..100.0);
        let inflow = rng.random_range(0.5..6.0);
        let viscosity = rng.random_range(0.1..1.0);
        out.push(Scenario {
            width: 1200.0,
            height: 500.0,
            turbines,
            viscosity,
            bathymetry: Bathymetry::Constant(depth),
            inflow_speed: inflow,
            background_drag: DEFAULT_BACKGROUND_DRAG,
            water_density: SEAWATER_DENSITY,
        });
    }
    out
}

fn indicate(
    estimator: &Estimator,
    problem: &FlowProblem,
    u: &Field,
    adj: &Field,
) -> Result<IndicatorField> {
    match estimator {
        Estimator::Standard => Ok(enriched_indicator(problem, u, adj)?.0),
        Estimator::Coarse => coarse_indicator(problem, u, adj),
        Estimator::E2n(mlp) => predict_indicator(mlp, problem, u, adj),
    }
}

/// The fixed-point adaptation loop: solve, check the QoI, solve the adjoint,
/// indicate errors, build the metric at the scheduled complexity, adapt, and
/// check the element count. Convergence checks are skipped for the first
/// `min_iterations` iterations. After the element count converges one final
/// forward solve evaluates the QoI on the final mesh.
pub fn fixed_point_adapt(scenario: &Scenario, config: &AdaptConfig) -> Result<RunRecord> {
    config.validate()?;
    scenario.validate()?;
    let mut mesh = build_scenario_mesh(scenario, config.initial_h)?;
    let remesh_config = RemeshConfig::default();

    let mut record = RunRecord {
        iterations: Vec::new(),
        final_qoi: f64::NAN,
        converged: false,
        error: None,
    };
    let mut prev_qoi: Option<f64> = None;
    let mut mesh_converged = false;

    for i in 0..config.max_iterations {
        let mut timings = ComponentTimings::default();

        let t = Instant::now();
        let problem = FlowProblem::new(ProblemKind::Momentum, scenario, mesh.clone())?;
        let forward = solve_forward(
            &problem,
            config.newton_abs_tol,
            config.newton_rel_tol,
            config.newton_max_iter,
        );
        let (u, _) = match forward {
            Ok(ok) => ok,
            Err(e) => {
                record.error = Some(format!("forward solve failed at iteration {i}: {e}"));
                return Ok(record);
            }
        };
        let qoi = problem.qoi(&u);
        timings.forward = t.elapsed().as_secs_f64();

        record.iterations.push(IterationRecord {
            dofs: problem.num_dofs(),
            elements: mesh.num_elements(),
            qoi,
            timings,
        });
        record.final_qoi = qoi;

        if mesh_converged {
            record.converged = true;
            break;
        }
        if i >= config.min_iterations {
            if let Some(prev) = prev_qoi {
                if (qoi - prev).abs() <= config.qoi_rtol * qoi.abs().max(f64::MIN_POSITIVE) {
                    record.converged = true;
                    break;
                }
            }
        }
        prev_qoi = Some(qoi);

        let step = (|| -> Result<Arc<TriMesh>> {
            let t = Instant::now();
            let adj = adjoint_solve(&problem, &u)?;
            let last = record.iterations.last_mut().expect("pushed above");
            last.timings.adjoint = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let indicator = indicate(&config.estimator, &problem, &u, &adj)?;
            let last = record.iterations.last_mut().expect("pushed above");
            last.timings.estimation = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let target = complexity_schedule(i, config.target_complexity);
            let metric = build_metric(&indicator, &u, target, config.alpha)?;
            let last = record.iterations.last_mut().expect("pushed above");
            last.timings.metric = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let adapted = adapt_mesh(&mesh, &metric, &remesh_config)?;
            let last = record.iterations.last_mut().expect("pushed above");
            last.timings.adapt = t.elapsed().as_secs_f64();
            Ok(Arc::new(adapted))
        })();

        let adapted = match step {
            Ok(m) => m,
            Err(e) => {
                record.error = Some(format!("iteration {i} failed: {e}"));
                return Ok(record);
            }
        };

        if i >= config.min_iterations {
            let old = mesh.num_elements() as f64;
            let new = adapted.num_elements() as f64;
            if (new - old).abs() <= config.element_rtol * old {
                mesh_converged = true;
            }
        }
        mesh = adapted;
    }

    Ok(record)
}

/// Harvest settings for training-data generation.
#[derive(Clone)]
pub struct HarvestConfig {
    pub initial_h: f64,
    pub target_complexity: f64,
    pub per_scenario_iters: usize,
    pub alpha: f64,
    pub newton_abs_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            initial_h: DESK_INITIAL_H,
            target_complexity: 800.0,
            per_scenario_iters: 3,
            alpha: 1.0,
            newton_abs_tol: 1e-8,
            newton_max_iter: 30,
        }
    }
}

/// Runs the enrichment-based loop for the first iterations of every scenario
/// and collects (features, enriched target) rows on each visited mesh.
/// Scenarios whose solves fail are skipped with a warning; the skip count is
/// returned alongside the data.
pub fn harvest_dataset(scenarios: &[Scenario], config: &HarvestConfig) -> (Dataset, usize) {
    let mut dataset = Dataset::default();
    let mut skipped = 0;
    let remesh_config = RemeshConfig::default();

    'scenarios: for (sid, scenario) in scenarios.iter().enumerate() {
        let mut mesh = match build_scenario_mesh(scenario, config.initial_h) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("warning: scenario {sid} skipped (mesh: {e})");
                skipped += 1;
                continue;
            }
        };
        let mut rows = Vec::new();
        for iter in 0..config.per_scenario_iters {
            let step = (|| -> Result<Option<Arc<TriMesh>>> {
                let problem = FlowProblem::new(ProblemKind::Momentum, scenario, mesh.clone())?;
                let (u, _) =
                    solve_forward(&problem, config.newton_abs_tol, 1e-12, config.newton_max_iter)?;
                let adj = adjoint_solve(&problem, &u)?;
                let coarse = coarse_indicator(&problem, &u, &adj)?;
                let features = extract_features(&problem, &u, &adj, &coarse)?;
                let (targets, _) = enriched_indicator(&problem, &u, &adj)?;
                for (k, f) in features.into_iter().enumerate() {
                    rows.push(DatasetRow {
                        scenario: sid,
                        iteration: iter,
                        features: f,
                        target: targets.values()[k],
                    });
                }
                if iter + 1 == config.per_scenario_iters {
                    return Ok(None);
                }
                let target = complexity_schedule(iter, config.target_complexity);
                let metric = build_metric(&targets, &u, target, config.alpha)?;
                let adapted = adapt_mesh(&mesh, &metric, &remesh_config)?;
                Ok(Some(Arc::new(adapted)))
            })();
            match step {
                Ok(Some(next)) => mesh = next,
                Ok(None) => break,
                Err(e) => {
                    eprintln!("warning: scenario {sid} skipped at iteration {iter}: {e}");
                    skipped += 1;
                    continue 'scenarios;
                }
            }
        }
        dataset.rows.extend(rows);
    }
    (dataset, skipped)
}

/// One row of a convergence study table.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub method: String,
    pub dofs: usize,
    pub qoi: f64,
    pub rel_error: f64,
    pub cpu_seconds: f64,
}

/// Uniform-refinement ladder plus both adaptive estimators across the given
/// complexities. The benchmark QoI comes from the finest uniform level;
/// relative errors are measured against it.
pub fn convergence_study(
    scenario: &Scenario,
    complexities: &[f64],
    uniform_levels: usize,
    base_config: &AdaptConfig,
    e2n: Option<Arc<Mlp>>,
) -> Result<Vec<StudyRow>> {
    let mut uniform = Vec::new();
    let mut mesh = build_scenario_mesh(scenario, base_config.initial_h)?;
    for _ in 0..=uniform_levels {
        let t = Instant::now();
        let problem = FlowProblem::new(ProblemKind::Momentum, scenario, mesh.clone())?;
        let (u, _) = solve_forward(
            &problem,
            base_config.newton_abs_tol,
            base_config.newton_rel_tol,
            base_config.newton_max_iter,
        )?;
        let qoi = problem.qoi(&u);
        uniform.push((problem.num_dofs(), qoi, t.elapsed().as_secs_f64()));
        mesh = Arc::new(uniform_refine(&mesh));
    }
    let benchmark = uniform.last().expect("at least one level").1;
    let rel = |qoi: f64| (qoi - benchmark).abs() / benchmark.abs().max(f64::MIN_POSITIVE);

    let mut rows: Vec<StudyRow> = uniform
        .iter()
        .map(|&(dofs, qoi, cpu)| StudyRow {
            method: "uniform".into(),
            dofs,
            qoi,
            rel_error: rel(qoi),
            cpu_seconds: cpu,
        })
        .collect();

    let mut estimators = vec![Estimator::Standard];
    if let Some(mlp) = e2n {
        estimators.push(Estimator::E2n(mlp));
    }
    for estimator in estimators {
        for &complexity in complexities {
            let config = AdaptConfig {
                target_complexity: complexity,
                estimator: estimator.clone(),
                ..base_config.clone()
            };
            let t = Instant::now();
            let record = fixed_point_adapt(scenario, &config)?;
            if let Some(err) = record.error {
                return Err(Error::RemeshFailure(format!(
                    "adaptive run ({}, C={complexity}) failed: {err}",
                    estimator.name()
                )));
            }
            rows.push(StudyRow {
                method: estimator.name().into(),
                dofs: record.final_dofs(),
                qoi: record.final_qoi,
                rel_error: rel(record.final_qoi),
                cpu_seconds: t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Writes study rows as comma-separated values.
pub fn write_study_csv(rows: &[StudyRow], path: &Path) -> Result<()> {
    let mut out = String::from("method,dofs,qoi,rel_error,cpu_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.dofs, r.qoi, r.rel_error, r.cpu_seconds
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Component timing table of one adaptation run.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub estimator: String,
    pub timings: ComponentTimings,
    pub iterations: usize,
    pub final_dofs: usize,
    pub final_qoi: f64,
    pub converged: bool,
}

/// Profiles one full adaptation run with the given estimator.
pub fn benchmark(scenario: &Scenario, config: &AdaptConfig) -> Result<BenchReport> {
    let record = fixed_point_adapt(scenario, config)?;
    if let Some(err) = &record.error {
        return Err(Error::RemeshFailure(format!("benchmark run failed: {err}")));
    }
    Ok(BenchReport {
        estimator: config.estimator.name().into(),
        timings: record.total_timings(),
        iterations: record.iterations.len(),
        final_dofs: record.final_dofs(),
        final_qoi: record.final_qoi,
        converged: record.converged,
    })
}

pub fn write_bench_csv(reports: &[BenchReport], path: &Path) -> Result<()> {
    let mut out = String::from(
        "estimator,forward,adjoint,estimation,metric,adapt,total,iterations,dofs,qoi,converged\n",
    );
    for r in reports {
        let t = &r.timings;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.estimator,
            t.forward,
            t.adjoint,
            t.estimation,
            t.metric,
            t.adapt,
            t.total(),
            r.iterations,
            r.final_dofs,
            r.final_qoi,
            r.converged
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Key-value configuration file: one `key = value` per line, `#` comments.
/// Keys mirror the command-line flags.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = std::fs::File::open(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let line = line.split('#').next().unwrap_or("").trim().to_string();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected `key = value`"))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::uniform_refine_calls;
    use crate::net::TrainConfig;

    #[test]
    fn scenario_samples_respect_bounds() {
        let scenarios = generate_scenarios(50, 7);
        assert_eq!(scenarios.len(), 50);
        for s in &scenarios {
            s.validate().unwrap();
            assert!(!s.turbines.is_empty() && s.turbines.len() <= 8);
            for t in &s.turbines {
                assert!((50.0..=1150.0).contains(&t.center[0]));
                assert!((50.0..=450.0).contains(&t.center[1]));
            }
            for (i, a) in s.turbines.iter().enumerate() {
                for b in s.turbines.iter().take(i) {
                    let d = ((a.center[0] - b.center[0]).powi(2)
                        + (a.center[1] - b.center[1]).powi(2))
                    .sqrt();
                    assert!(d >= 50.0);
                }
            }
            let Bathymetry::Constant(b) = s.bathymetry else { panic!("constant expected") };
            assert!((20.0..=100.0).contains(&b));
            assert!((0.5..=6.0).contains(&s.inflow_speed));
            assert!((0.1..=1.0).contains(&s.viscosity));
        }
    }

    #[test]
    fn scenario_sampling_is_deterministic() {
        let a = generate_scenarios(10, 42);
        let b = generate_scenarios(10, 42);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.turbines, y.turbines);
            assert_eq!(x.viscosity, y.viscosity);
            assert_eq!(x.inflow_speed, y.inflow_speed);
            assert_eq!(x.bathymetry, y.bathymetry);
        }
        let c = generate_scenarios(10, 43);
        assert!(a.iter().zip(&c).any(|(x, y)| x.turbines != y.turbines));
    }

    #[test]
    fn presets() {
        let aligned = preset_scenario("aligned").unwrap();
        assert_eq!(aligned.turbines.len(), 2);
        assert_eq!(aligned.inflow_speed, 5.0);

        let reversed = preset_scenario("reversed").unwrap();
        assert_eq!(reversed.inflow_speed, -5.0);
        assert_eq!(reversed.turbines, aligned.turbines);

        let trench = preset_scenario("trench").unwrap();
        assert_eq!(trench.viscosity, 2.0);
        assert_eq!(trench.inflow_speed, 10.0);
        // Parabolic valley: 170 at the mid-channel, 160 at the walls.
        assert!((trench.bathymetry.eval(250.0, 500.0) - 170.0).abs() < 1e-12);
        assert!((trench.bathymetry.eval(0.0, 500.0) - 160.0).abs() < 1e-12);
        assert!((trench.bathymetry.eval(500.0, 500.0) - 160.0).abs() < 1e-12);

        assert!(preset_scenario("warped").is_err());
    }

    #[test]
    fn reversed_mesh_swaps_markers() {
        let aligned = preset_scenario("aligned").unwrap();
        let reversed = preset_scenario("reversed").unwrap();
        let ma = build_scenario_mesh(&aligned, 100.0).unwrap();
        let mr = build_scenario_mesh(&reversed, 100.0).unwrap();
        // Marker-1 edges sit at x = 0 for aligned, x = width for reversed.
        let side = |mesh: &TriMesh, marker: u32| -> f64 {
            mesh.boundary_edges()
                .iter()
                .filter(|&&(_, _, m)| m == marker)
                .map(|&(a, _, _)| mesh.vertices()[a][0])
                .next()
                .unwrap()
        };
        assert_eq!(side(&ma, 1), 0.0);
        assert_eq!(side(&mr, 1), 1200.0);
    }

    fn quick_config(estimator: Estimator) -> AdaptConfig {
        AdaptConfig {
            target_complexity: 320.0,
            max_iterations: 8,
            estimator,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_point_loop_runs_and_checks_are_gated() {
        let scenario = preset_scenario("aligned").unwrap();
        let config = quick_config(Estimator::Coarse);
        let record = fixed_point_adapt(&scenario, &config).unwrap();
        assert!(record.error.is_none());
        // The minimum iteration count gate: at least 4 forward solves.
        assert!(record.iterations.len() >= 4, "{} iterations", record.iterations.len());
        assert!(record.iterations.len() <= 8);
        assert!(record.final_qoi > 0.0);
        for it in &record.iterations {
            assert!(it.timings.forward >= 0.0);
            assert_eq!(it.dofs % 2, 0);
        }
    }

    #[test]
    fn e2n_path_never_refines() {
        let scenario = preset_scenario("aligned").unwrap();
        // An untrained network is fine for the structural assertion.
        let mlp = Arc::new(Mlp::init(3));
        let config = quick_config(Estimator::E2n(mlp));
        let before = uniform_refine_calls();
        let record = fixed_point_adapt(&scenario, &config).unwrap();
        assert!(record.error.is_none());
        assert_eq!(uniform_refine_calls(), before, "surrogate path refined a mesh");
    }

    #[test]
    fn standard_and_e2n_share_record_structure() {
        let scenario = preset_scenario("aligned").unwrap();
        let std_record = fixed_point_adapt(&scenario, &quick_config(Estimator::Standard)).unwrap();
        let mlp = Arc::new(Mlp::init(3));
        let e2n_record = fixed_point_adapt(&scenario, &quick_config(Estimator::E2n(mlp))).unwrap();
        for rec in [&std_record, &e2n_record] {
            assert!(rec.error.is_none());
            assert!(!rec.iterations.is_empty());
            assert!(rec.final_qoi.is_finite());
        }
    }

    #[test]
    fn harvest_produces_rectangular_rows() {
        let scenarios = generate_scenarios(2, 5);
        let config = HarvestConfig {
            initial_h: 60.0,
            target_complexity: 300.0,
            ..Default::default()
        };
        let (dataset, skipped) = harvest_dataset(&scenarios, &config);
        assert_eq!(skipped, 0);
        assert!(!dataset.is_empty());
        // One row per element of each visited mesh: scenario 0 starts on the
        // structured mesh (2 * 20 * 8 elements with h = 60).
        let initial_rows = dataset
            .rows
            .iter()
            .filter(|r| r.scenario == 0 && r.iteration == 0)
            .count();
        assert_eq!(initial_rows, 320);
        assert!(dataset.rows.iter().all(|r| r.target.is_finite()));
        let iterations: std::collections::BTreeSet<usize> =
            dataset.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(iterations.into_iter().max().unwrap(), 2);
    }

    #[test]
    fn harvest_rows_recompute_exactly() {
        let scenarios = generate_scenarios(1, 11);
        let config = HarvestConfig {
            initial_h: 60.0,
            target_complexity: 300.0,
            per_scenario_iters: 1,
            ..Default::default()
        };
        let (dataset, skipped) = harvest_dataset(&scenarios, &config);
        assert_eq!(skipped, 0);

        // Recompute iteration 0 by hand and compare a sample of rows.
        let mesh = build_scenario_mesh(&scenarios[0], 60.0).unwrap();
        let problem = FlowProblem::new(ProblemKind::Momentum, &scenarios[0], mesh).unwrap();
        let (u, _) = solve_forward(&problem, 1e-8, 1e-12, 30).unwrap();
        let adj = adjoint_solve(&problem, &u).unwrap();
        let coarse = coarse_indicator(&problem, &u, &adj).unwrap();
        let feats = extract_features(&problem, &u, &adj, &coarse).unwrap();
        let (targets, _) = enriched_indicator(&problem, &u, &adj).unwrap();
        for k in (0..feats.len()).step_by(37) {
            let row = &dataset.rows[k];
            let scale = row.target.abs().max(1e-30);
            assert!((row.target - targets.values()[k]).abs() <= 1e-12 * scale);
            for (a, b) in row.features.as_slice().iter().zip(feats[k].as_slice()) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mirror_consistency_within_band() {
        let config = AdaptConfig {
            target_complexity: 320.0,
            max_iterations: 8,
            estimator: Estimator::Standard,
            ..Default::default()
        };
        let aligned = fixed_point_adapt(&preset_scenario("aligned").unwrap(), &config).unwrap();
        let reversed = fixed_point_adapt(&preset_scenario("reversed").unwrap(), &config).unwrap();
        assert!(aligned.error.is_none() && reversed.error.is_none());
        let rel = (aligned.final_qoi - reversed.final_qoi).abs() / aligned.final_qoi;
        assert!(rel < 0.01, "mirror QoI mismatch {rel:.4}");
    }

    #[test]
    fn training_on_harvest_smoke() {
        // A tiny end-to-end check that harvested data trains; the real
        // validation-loss criterion lives in the acceptance suite.
        let scenarios = generate_scenarios(1, 3);
        let config = HarvestConfig {
            initial_h: 60.0,
            target_complexity: 300.0,
            per_scenario_iters: 2,
            ..Default::default()
        };
        let (dataset, _) = harvest_dataset(&scenarios, &config);
        let train_config = TrainConfig { epochs: 5, seed: 1, ..Default::default() };
        let (_, report) = crate::net::train(&dataset, &train_config).unwrap();
        assert_eq!(report.train_mse.len(), 6);
        assert!(report.val_mse.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_file_parses() {
        let dir = std::env::temp_dir().join(format!("e2n-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\ncomplexity = 3200\nseed = 7\nestimator = e2n\n").unwrap();
        let map = read_config(&path).unwrap();
        assert_eq!(map["complexity"], "3200");
        assert_eq!(map["seed"], "7");
        assert_eq!(map["estimator"], "e2n");
        std::fs::remove_dir_all(&dir).ok();
    }
}
