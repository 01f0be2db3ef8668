//! P0/P1 Lagrange spaces, triangle quadrature, sparse assembly and the
//! damped Newton solver. Linear systems go through a sparse direct LU.

use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Function space tag for a [`Field`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// One value per element.
    P0,
    /// One value per vertex, continuous piecewise linear.
    P1,
    /// Two values per vertex, interleaved (x0, y0, x1, y1, ...).
    VectorP1,
}

impl Space {
    pub fn dim(&self, mesh: &TriMesh) -> usize {
        match self {
            Space::P0 => mesh.num_elements(),
            Space::P1 => mesh.num_vertices(),
            Space::VectorP1 => 2 * mesh.num_vertices(),
        }
    }

    pub fn components(&self) -> usize {
        match self {
            Space::VectorP1 => 2,
            _ => 1,
        }
    }
}

/// Coefficient vector over a function space on a particular mesh.
#[derive(Debug, Clone)]
pub struct Field {
    mesh: Arc<TriMesh>,
    space: Space,
    values: Vec<f64>,
}

impl Field {
    pub fn new(mesh: Arc<TriMesh>, space: Space, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.dim(&mesh) {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a space of dimension {}",
                values.len(),
                space.dim(&mesh)
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(Field { mesh, space, values })
    }

    pub fn zeros(mesh: Arc<TriMesh>, space: Space) -> Self {
        let n = space.dim(&mesh);
        Field { mesh, space, values: vec![0.0; n] }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Velocity at a vertex of a vector field.
    pub fn vector_at(&self, vertex: usize) -> [f64; 2] {
        debug_assert_eq!(self.space, Space::VectorP1);
        [self.values[2 * vertex], self.values[2 * vertex + 1]]
    }

    /// True when both fields live on the same mesh (same object or equal
    /// connectivity sizes).
    pub fn same_mesh(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
            || (self.mesh.num_vertices() == other.mesh.num_vertices()
                && self.mesh.num_elements() == other.mesh.num_elements())
    }
}

/// Value(s) of a field at the centroid of element `k`.
///
/// P1 fields are linear, so the centroid value is the mean of the three
/// vertex values; P0 fields return the element value.
pub fn centroid_eval(field: &Field, k: usize) -> Vec<f64> {
    let t = field.mesh.triangles()[k];
    match field.space {
        Space::P0 => vec![field.values[k]],
        Space::P1 => {
            vec![(field.values[t[0]] + field.values[t[1]] + field.values[t[2]]) / 3.0]
        }
        Space::VectorP1 => (0..2)
            .map(|c| {
                (field.values[2 * t[0] + c] + field.values[2 * t[1] + c] + field.values[2 * t[2] + c])
                    / 3.0
            })
            .collect(),
    }
}

/// Gradient of the P1 interpolant of (f0, f1, f2) on the triangle with
/// vertices p0, p1, p2.
pub fn p1_gradient(p: &[[f64; 2]; 3], f: &[f64; 3]) -> [f64; 2] {
    let two_a = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    [
        ((f[1] - f[0]) * (p[2][1] - p[0][1]) - (f[2] - f[0]) * (p[1][1] - p[0][1])) / two_a,
        ((f[2] - f[0]) * (p[1][0] - p[0][0]) - (f[1] - f[0]) * (p[2][0] - p[0][0])) / two_a,
    ]
}

/// Gradients of the three barycentric shape functions on a triangle.
pub fn shape_gradients(p: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let two_a = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    [
        [(p[1][1] - p[2][1]) / two_a, (p[2][0] - p[1][0]) / two_a],
        [(p[2][1] - p[0][1]) / two_a, (p[0][0] - p[2][0]) / two_a],
        [(p[0][1] - p[1][1]) / two_a, (p[1][0] - p[0][0]) / two_a],
    ]
}

/// Symmetric 6-point rule, exact for polynomials of degree 4 on a triangle.
/// Barycentric points with weights summing to one.
pub const QUAD_DEGREE4: [([f64; 3], f64); 6] = {
    const A1: f64 = 0.445948490915965;
    const B1: f64 = 1.0 - 2.0 * A1;
    const W1: f64 = 0.223381589678011;
    const A2: f64 = 0.091576213509771;
    const B2: f64 = 1.0 - 2.0 * A2;
    const W2: f64 = 0.109951743655322;
    [
        ([B1, A1, A1], W1),
        ([A1, B1, A1], W1),
        ([A1, A1, B1], W1),
        ([B2, A2, A2], W2),
        ([A2, B2, A2], W2),
        ([A2, A2, B2], W2),
    ]
};

/// Square sparse matrix in compressed-row storage.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::DimensionMismatch(format!("triplet ({r}, {c}) outside {n}x{n}")));
            }
            if v.is_nan() {
                return Err(Error::invalid(format!("NaN entry at ({r}, {c})")));
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));

        let mut row_counts = vec![0usize; n + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if prev == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for i in 0..n {
            row_counts[i + 1] += row_counts[i];
        }
        Ok(SparseMatrix { n, row_ptr: row_counts, col_idx, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry (r, c), zero when not stored.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        for i in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[i] == c {
                return self.values[i];
            }
        }
        0.0
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for r in 0..self.n {
            let mut acc = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[i] * x[self.col_idx[i]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn infinity_norm(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                self.values[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((self.col_idx[i], r, self.values[i]));
            }
        }
        SparseMatrix::from_triplets(self.n, &triplets).expect("transpose of valid matrix")
    }

    /// Zeroes every off-diagonal entry in the given columns. Combined with
    /// unit Dirichlet rows this decouples constrained DoFs symmetrically,
    /// which is what the transposed (adjoint) solve needs.
    pub fn zero_columns_except_diagonal(&mut self, cols: &[bool]) {
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[i];
                if c != r && cols[c] {
                    self.values[i] = 0.0;
                }
            }
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push(Triplet::new(r, self.col_idx[i], self.values[i]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| Error::SingularSystem(format!("matrix construction failed: {e:?}")))
    }
}

/// Direct sparse LU solve with a residual acceptance check.
pub fn solve_linear(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n() {
        return Err(Error::DimensionMismatch(format!(
            "rhs has {} entries for a {}x{} system",
            b.len(),
            a.n(),
            a.n()
        )));
    }
    let mat = a.to_faer()?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::SingularSystem(format!("LU factorisation failed: {e:?}")))?;
    let rhs = faer::Mat::from_fn(a.n(), 1, |i, _| b[i]);
    let sol = lu.solve(&rhs);
    let x: Vec<f64> = (0..a.n()).map(|i| sol[(i, 0)]).collect();

    let r = a.matvec(&x);
    let res_norm = r
        .iter()
        .zip(b)
        .map(|(ri, bi)| (ri - bi).abs())
        .fold(0.0, f64::max);
    let x_norm = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let b_norm = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let bound = 1e-10 * (a.infinity_norm() * x_norm + b_norm);
    if !(res_norm <= bound.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularSystem(format!(
            "solution residual {res_norm:.3e} exceeds {bound:.3e}"
        )));
    }
    Ok(x)
}

/// A discrete PDE problem over the vector P1 space of a mesh: supplies
/// element-local residuals/Jacobians and the Dirichlet constraint set.
pub trait Problem {
    fn mesh(&self) -> &Arc<TriMesh>;

    /// Local residual (and optionally its Jacobian) of element `k` at the
    /// given vertex velocities. Local DoF order: (v0x, v0y, v1x, v1y, v2x, v2y).
    fn element_system(
        &self,
        k: usize,
        local: &[[f64; 2]; 3],
        residual: &mut [f64; 6],
        jacobian: Option<&mut [[f64; 6]; 6]>,
    );

    /// Dirichlet constraints as (global DoF, prescribed value), sorted.
    fn constraints(&self) -> &[(usize, f64)];

    fn num_dofs(&self) -> usize {
        2 * self.mesh().num_vertices()
    }

    /// Constraint mask, one flag per DoF.
    fn constraint_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_dofs()];
        for &(dof, _) in self.constraints() {
            mask[dof] = true;
        }
        mask
    }
}

fn gather_local(state: &[f64], tri: &[usize; 3]) -> [[f64; 2]; 3] {
    [
        [state[2 * tri[0]], state[2 * tri[0] + 1]],
        [state[2 * tri[1]], state[2 * tri[1] + 1]],
        [state[2 * tri[2]], state[2 * tri[2] + 1]],
    ]
}

fn check_state(problem: &impl Problem, state: &Field) -> Result<()> {
    if state.space() != Space::VectorP1 {
        return Err(Error::invalid("problem state must be a vector P1 field"));
    }
    if state.mesh().num_vertices() != problem.mesh().num_vertices()
        || state.mesh().num_elements() != problem.mesh().num_elements()
    {
        return Err(Error::invalid("state field lives on a different mesh"));
    }
    Ok(())
}

/// Residual of the problem at `state`, with Dirichlet rows replaced by
/// `state - boundary value`.
pub fn assemble_residual(problem: &impl Problem, state: &Field) -> Result<Vec<f64>> {
    check_state(problem, state)?;
    let mesh = problem.mesh();
    let mut residual = vec![0.0; problem.num_dofs()];
    let mut local_r = [0.0; 6];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let local = gather_local(state.values(), tri);
        problem.element_system(k, &local, &mut local_r, None);
        for (ld, &v) in local_r.iter().enumerate() {
            residual[2 * tri[ld / 2] + ld % 2] += v;
        }
    }
    for &(dof, value) in problem.constraints() {
        residual[dof] = state.values()[dof] - value;
    }
    Ok(residual)
}

/// Residual and exact Jacobian at `state`. Dirichlet rows are replaced by a
/// unit diagonal; constrained columns keep their couplings, matching the
/// derivative of the modified residual.
pub fn assemble(problem: &impl Problem, state: &Field) -> Result<(Vec<f64>, SparseMatrix)> {
    check_state(problem, state)?;
    let mesh = problem.mesh();
    let n = problem.num_dofs();
    let mask = problem.constraint_mask();

    let mut residual = vec![0.0; n];
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(36 * mesh.num_elements() + n);
    let mut local_r = [0.0; 6];
    let mut local_j = [[0.0; 6]; 6];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let local = gather_local(state.values(), tri);
        problem.element_system(k, &local, &mut local_r, Some(&mut local_j));
        for row in 0..6 {
            let gr = 2 * tri[row / 2] + row % 2;
            residual[gr] += local_r[row];
            if mask[gr] {
                continue;
            }
            for col in 0..6 {
                let gc = 2 * tri[col / 2] + col % 2;
                triplets.push((gr, gc, local_j[row][col]));
            }
        }
    }
    for &(dof, value) in problem.constraints() {
        residual[dof] = state.values()[dof] - value;
        triplets.push((dof, dof, 1.0));
    }
    let jacobian = SparseMatrix::from_triplets(n, &triplets)?;
    Ok((residual, jacobian))
}

/// Element-wise weak residual weighted by a test field: returns
/// r_K . w|_K per element, whose sum over elements equals the assembled raw
/// residual applied to `weight`.
pub fn element_weighted_residuals(
    problem: &impl Problem,
    state: &Field,
    weight: &Field,
) -> Result<Vec<f64>> {
    check_state(problem, state)?;
    check_state(problem, weight)?;
    let mesh = problem.mesh();
    let mut out = vec![0.0; mesh.num_elements()];
    let mut local_r = [0.0; 6];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let local = gather_local(state.values(), tri);
        problem.element_system(k, &local, &mut local_r, None);
        let w = gather_local(weight.values(), tri);
        let mut acc = 0.0;
        for ld in 0..6 {
            acc += local_r[ld] * w[ld / 2][ld % 2];
        }
        out[k] = acc;
    }
    Ok(out)
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration with backtracking halving line search (up to 8
/// halvings, accepting any step that reduces the residual norm).
///
/// Converges when the residual l2 norm falls below `abs_tol` or below
/// `rel_tol` times the initial norm. Returns the solution and the number of
/// Newton updates performed.
pub fn newton_solve(
    problem: &impl Problem,
    initial: &Field,
    abs_tol: f64,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Field, usize)> {
    let mut state = initial.clone();
    let mut residual = assemble_residual(problem, &state)?;
    let norm0 = l2_norm(&residual);
    let mut norm = norm0;
    if norm <= abs_tol {
        return Ok((state, 0));
    }

    for iter in 1..=max_iter {
        let (r, jac) = assemble(problem, &state)?;
        residual = r;
        let rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
        let delta = solve_linear(&jac, &rhs)?;

        // Backtracking: accept the first step length that reduces the norm.
        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let mut trial = state.clone();
            for (t, d) in trial.values_mut().iter_mut().zip(&delta) {
                *t += eta * d;
            }
            let trial_res = assemble_residual(problem, &trial)?;
            let trial_norm = l2_norm(&trial_res);
            if trial_norm.is_finite() && trial_norm < norm {
                accepted = Some((trial, trial_norm));
                break;
            }
            eta *= 0.5;
        }
        let Some((next, next_norm)) = accepted else {
            return Err(Error::Nonconvergence {
                iterations: iter - 1,
                residual: norm,
                last_iterate: state.values().to_vec(),
            });
        };
        state = next;
        norm = next_norm;
        if norm <= abs_tol || norm <= rel_tol * norm0 {
            return Ok((state, iter));
        }
    }

    Err(Error::Nonconvergence {
        iterations: max_iter,
        residual: norm,
        last_iterate: state.values().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadrature_exact_to_degree_4() {
        // Closed form: integral of x^a y^b over the reference triangle is
        // a! b! / (a + b + 2)!.
        let factorial = |n: u32| (1..=n).map(|i| i as f64).product::<f64>().max(1.0);
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let mut quad = 0.0;
                for (bary, w) in QUAD_DEGREE4 {
                    let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
                    let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
                    quad += w * 0.5 * x.powi(a as i32) * y.powi(b as i32);
                }
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                assert!(
                    (quad - exact).abs() < 1e-14,
                    "x^{a} y^{b}: quad {quad} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn solve_identity_and_2x2() {
        let id = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let x = solve_linear(&id, &[3.0, -4.0]).unwrap();
        assert_eq!(x, vec![3.0, -4.0]);

        let a = SparseMatrix::from_triplets(2, &[(0, 0, 2.0), (1, 1, 4.0)]).unwrap();
        let x = solve_linear(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn solve_random_spd() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut dense = vec![vec![0.0f64; n]; n];
        for row in dense.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        // A^T A + I is SPD.
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (k, _) in dense.iter().enumerate() {
                    acc += dense[k][i] * dense[k][j];
                }
                if i == j {
                    acc += 1.0;
                }
                triplets.push((i, j, acc));
            }
        }
        let a = SparseMatrix::from_triplets(n, &triplets).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // solve_linear errors out if the residual bound fails.
        let x = solve_linear(&a, &b).unwrap();
        assert_eq!(x.len(), n);
    }

    #[test]
    fn singular_system_detected() {
        let a = SparseMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(solve_linear(&a, &[1.0, 1.0]), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn centroid_values() {
        let mesh = Arc::new(build_structured_mesh(1.0, 1.0, 1.0).unwrap());
        let f = Field::new(
            mesh.clone(),
            Space::P1,
            // values at the 4 vertices of the unit square mesh
            vec![0.0, 3.0, 6.0, 9.0],
        )
        .unwrap();
        let tri = mesh.triangles()[0];
        let expect = (f.values()[tri[0]] + f.values()[tri[1]] + f.values()[tri[2]]) / 3.0;
        assert_eq!(centroid_eval(&f, 0), vec![expect]);

        let c = Field::new(mesh.clone(), Space::P0, vec![2.5, 2.5]).unwrap();
        assert_eq!(centroid_eval(&c, 1), vec![2.5]);

        // f = x on the reference-like corner triangle has centroid value 1/3.
        let tri0 = mesh.triangles()[0];
        let mut vals = vec![0.0; 4];
        for &v in &tri0 {
            vals[v] = mesh.vertices()[v][0];
        }
        let fx = Field::new(mesh.clone(), Space::P1, vals).unwrap();
        let cx = mesh.centroid(0)[0];
        assert!((centroid_eval(&fx, 0)[0] - cx).abs() < 1e-14);
    }

    /// Linear vector reaction-diffusion with a manufactured load; exercises
    /// assemble/newton without the flow model.
    struct LinearTestProblem {
        mesh: Arc<TriMesh>,
        constraints: Vec<(usize, f64)>,
    }

    impl Problem for LinearTestProblem {
        fn mesh(&self) -> &Arc<TriMesh> {
            &self.mesh
        }

        fn element_system(
            &self,
            k: usize,
            local: &[[f64; 2]; 3],
            residual: &mut [f64; 6],
            jacobian: Option<&mut [[f64; 6]; 6]>,
        ) {
            let p = self.mesh.tri_coords(k);
            let area = self.mesh.signed_area(k);
            let g = shape_gradients(&p);
            residual.fill(0.0);
            let mut jac = [[0.0; 6]; 6];
            for i in 0..3 {
                for c in 0..2 {
                    let row = 2 * i + c;
                    for j in 0..3 {
                        // stiffness + lumped mass, load f = 1
                        let kij = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1])
                            + if i == j { area / 3.0 } else { 0.0 };
                        residual[row] += kij * local[j][c];
                        jac[row][2 * j + c] = kij;
                    }
                    residual[row] -= area / 3.0;
                }
            }
            if let Some(out) = jacobian {
                *out = jac;
            }
        }

        fn constraints(&self) -> &[(usize, f64)] {
            &self.constraints
        }
    }

    #[test]
    fn newton_linear_problem_one_iteration() {
        let mesh = Arc::new(build_structured_mesh(2.0, 2.0, 0.5).unwrap());
        let problem = LinearTestProblem { mesh: mesh.clone(), constraints: vec![(0, 0.0), (1, 0.0)] };
        let start = Field::zeros(mesh.clone(), Space::VectorP1);
        let (sol, iters) = newton_solve(&problem, &start, 1e-10, 0.0, 20).unwrap();
        assert_eq!(iters, 1);
        // Discrete solution satisfies the residual tightly.
        let r = assemble_residual(&problem, &sol).unwrap();
        let load = mesh.num_elements() as f64; // crude scale
        assert!(l2_norm(&r) < 1e-10 * load);

        // Restarting from the solution converges in 0 iterations.
        let (_, iters2) = newton_solve(&problem, &sol, 1e-10, 0.0, 20).unwrap();
        assert_eq!(iters2, 0);
    }

    #[test]
    fn newton_zero_budget_reports_nonconvergence() {
        let mesh = Arc::new(build_structured_mesh(1.0, 1.0, 1.0).unwrap());
        let problem = LinearTestProblem { mesh: mesh.clone(), constraints: vec![] };
        let start = Field::zeros(mesh.clone(), Space::VectorP1);
        match newton_solve(&problem, &start, 1e-12, 0.0, 0) {
            Err(Error::Nonconvergence { iterations, last_iterate, .. }) => {
                assert_eq!(iterations, 0);
                assert_eq!(last_iterate, start.values());
            }
            other => panic!("expected nonconvergence, got {other:?}"),
        }
    }

    #[test]
    fn dirichlet_rows_are_unit() {
        let mesh = Arc::new(build_structured_mesh(1.0, 1.0, 1.0).unwrap());
        let problem = LinearTestProblem { mesh: mesh.clone(), constraints: vec![(2, 1.5)] };
        let state = Field::zeros(mesh.clone(), Space::VectorP1);
        let (r, jac) = assemble(&problem, &state).unwrap();
        assert_eq!(r[2], -1.5);
        // Row 2 must contain the unit diagonal only.
        let start = jac.row_ptr[2];
        let end = jac.row_ptr[3];
        assert_eq!(end - start, 1);
        assert_eq!(jac.col_idx[start], 2);
        assert_eq!(jac.values[start], 1.0);
    }
}
