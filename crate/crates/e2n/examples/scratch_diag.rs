use std::sync::Arc;
use e2n::dwr::*;
use e2n::fem::*;
use e2n::mesh::*;
use e2n::metric::*;
use e2n::model::*;
use e2n::pipeline::*;
use e2n::remesh::*;

// crude point-in-triangle transfer for the experiment
fn transfer(old_mesh: &TriMesh, old: &Field, new_mesh: &Arc<TriMesh>) -> Field {
    let mut vals = vec![0.0; 2 * new_mesh.num_vertices()];
    for (v, &p) in new_mesh.vertices().iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize, [1.0/3.0; 3]);
        for (k, t) in old_mesh.triangles().iter().enumerate() {
            let [p0, p1, p2] = [old_mesh.vertices()[t[0]], old_mesh.vertices()[t[1]], old_mesh.vertices()[t[2]]];
            let det = (p1[0]-p0[0])*(p2[1]-p0[1]) - (p2[0]-p0[0])*(p1[1]-p0[1]);
            let l1 = ((p[0]-p0[0])*(p2[1]-p0[1]) - (p2[0]-p0[0])*(p[1]-p0[1])) / det;
            let l2 = ((p1[0]-p0[0])*(p[1]-p0[1]) - (p[0]-p0[0])*(p1[1]-p0[1])) / det;
            let l0 = 1.0 - l1 - l2;
            let pen = (-l0.min(0.0)) + (-l1.min(0.0)) + (-l2.min(0.0));
            if pen < best.0 {
                best = (pen, k, [l0, l1, l2]);
                if pen == 0.0 { break; }
            }
        }
        let t = old_mesh.triangles()[best.1];
        for c in 0..2 {
            vals[2*v+c] = (0..3).map(|i| best.2[i].clamp(0.0,1.0) * old.values()[2*t[i]+c]).sum();
        }
    }
    Field::new(new_mesh.clone(), Space::VectorP1, vals).unwrap()
}

fn main() {
    let scenario = preset_scenario("aligned").unwrap();
    let mut mesh = build_scenario_mesh(&scenario, 36.0).unwrap();
    let mut prev: Option<(Arc<TriMesh>, Field)> = None;
    for i in 0..6 {
        let problem = FlowProblem::new(ProblemKind::Momentum, &scenario, mesh.clone()).unwrap();
        let init = match &prev {
            Some((om, of)) => transfer(om, of, &mesh),
            None => {
                let n = mesh.num_vertices();
                let mut vals = vec![0.0; 2 * n];
                for v in 0..n { vals[2 * v] = scenario.inflow_speed; }
                Field::new(mesh.clone(), Space::VectorP1, vals).unwrap()
            }
        };
        match newton_solve(&problem, &init, 1e-8, 1e-12, 30) {
            Ok((u, iters)) => {
                println!("iter {i} elems {:5} newton {iters} J {:.5e}", mesh.num_elements(), problem.qoi(&u));
                let adj = adjoint_solve(&problem, &u).unwrap();
                let ind = coarse_indicator(&problem, &u, &adj).unwrap();
                let metric = build_metric(&ind, &u, complexity_schedule(i, 320.0), 1.0).unwrap();
                let adapted = Arc::new(adapt_mesh(&mesh, &metric, &RemeshConfig::default()).unwrap());
                prev = Some((mesh.clone(), u));
                mesh = adapted;
            }
            Err(e) => { println!("iter {i}: FAILED {e}"); break; }
        }
    }
}
