//! 2D triangular meshes: structured generation, uniform (red) refinement with
//! parent maps, per-element geometry decomposition and inter-mesh transfer.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{Field, Space};

/// Boundary marker of the inflow side.
pub const MARKER_INFLOW: u32 = 1;
/// Boundary marker of the outflow side.
pub const MARKER_OUTFLOW: u32 = 2;
/// Boundary marker of free-slip walls.
pub const MARKER_WALL: u32 = 3;

/// Area of the reference triangle with vertices (0,0), (0,1), (1,0).
pub const REFERENCE_AREA: f64 = 0.5;

thread_local! {
    static REFINE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `uniform_refine` calls made by the current thread.
///
/// Instrumentation hook: surrogate estimator paths assert that this counter
/// does not advance, i.e. that no enriched mesh is ever constructed.
pub fn uniform_refine_calls() -> u64 {
    REFINE_CALLS.with(|c| c.get())
}

/// A conforming triangulation of a polygonal 2D domain.
///
/// Triangles are counter-clockwise vertex index triples. Boundary edges carry
/// an integer marker (inflow/outflow/wall). A mesh produced by
/// [`uniform_refine`] additionally records which coarse element each fine
/// element descends from.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<(usize, usize, u32)>,
    parent_map: Option<Vec<usize>>,
    /// Canonical (min,max) boundary vertex pairs, sorted, with markers.
    boundary_pairs: Vec<(usize, usize, u32)>,
}

impl TriMesh {
    /// Builds a mesh and checks its structural invariants: positive element
    /// areas, boundary edges adjacent to exactly one triangle, markers
    /// covering the whole boundary, and a well-formed parent map.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<(usize, usize, u32)>,
        parent_map: Option<Vec<usize>>,
    ) -> Result<Self> {
        let nv = vertices.len();
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::invalid(format!("triangle {k} references missing vertex")));
            }
            let area = signed_area(&vertices, t);
            if !(area > 0.0) {
                return Err(Error::DegenerateElement { element: k, area });
            }
        }

        // Edge -> adjacent triangle count.
        let mut adjacency: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for t in &triangles {
            for e in 0..3 {
                let key = canonical(t[e], t[(e + 1) % 3]);
                *adjacency.entry(key).or_insert(0) += 1;
            }
        }

        let mut boundary_pairs: Vec<(usize, usize, u32)> = boundary_edges
            .iter()
            .map(|&(a, b, m)| {
                let (a, b) = canonical(a, b);
                (a, b, m)
            })
            .collect();
        boundary_pairs.sort_unstable();
        for w in boundary_pairs.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(Error::invalid(format!(
                    "boundary edge ({}, {}) listed twice",
                    w[0].0, w[0].1
                )));
            }
        }
        for &(a, b, _) in &boundary_pairs {
            match adjacency.get(&(a, b)) {
                Some(1) => {}
                Some(n) => {
                    return Err(Error::invalid(format!(
                        "boundary edge ({a}, {b}) has {n} adjacent triangles"
                    )))
                }
                None => return Err(Error::invalid(format!("boundary edge ({a}, {b}) not in mesh"))),
            }
        }
        let n_hull = adjacency.values().filter(|&&n| n == 1).count();
        if n_hull != boundary_pairs.len() {
            return Err(Error::invalid(format!(
                "markers cover {} of {} boundary edges",
                boundary_pairs.len(),
                n_hull
            )));
        }

        if let Some(pm) = &parent_map {
            if pm.len() != triangles.len() {
                return Err(Error::HierarchyMismatch(format!(
                    "parent map has {} entries for {} elements",
                    pm.len(),
                    triangles.len()
                )));
            }
            if pm.len() % 4 != 0 {
                return Err(Error::HierarchyMismatch("element count not divisible by 4".into()));
            }
            let mut counts = vec![0usize; pm.len() / 4];
            for &p in pm {
                if p >= counts.len() {
                    return Err(Error::HierarchyMismatch(format!("parent index {p} out of range")));
                }
                counts[p] += 1;
            }
            if counts.iter().any(|&c| c != 4) {
                return Err(Error::HierarchyMismatch("a parent has != 4 children".into()));
            }
        }

        Ok(TriMesh {
            vertices,
            triangles,
            boundary_edges,
            parent_map,
            boundary_pairs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[(usize, usize, u32)] {
        &self.boundary_edges
    }

    pub fn parent_map(&self) -> Option<&[usize]> {
        self.parent_map.as_deref()
    }

    /// Coordinates of element `k`'s three vertices.
    pub fn tri_coords(&self, k: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn signed_area(&self, k: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[k])
    }

    pub fn centroid(&self, k: usize) -> [f64; 2] {
        let [a, b, c] = self.tri_coords(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// All unique edges as canonical (min,max) pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for t in &self.triangles {
            for e in 0..3 {
                set.insert(canonical(t[e], t[(e + 1) % 3]));
            }
        }
        set.into_iter().collect()
    }

    /// Marker of the boundary edge (a,b), if it is one.
    pub fn boundary_marker(&self, a: usize, b: usize) -> Option<u32> {
        let key = canonical(a, b);
        self.boundary_pairs
            .binary_search_by(|&(x, y, _)| (x, y).cmp(&key))
            .ok()
            .map(|i| self.boundary_pairs[i].2)
    }

    /// Length of the intersection of element `k`'s boundary with the domain
    /// boundary: the summed length of its edges that are boundary edges.
    pub fn element_boundary_length(&self, k: usize) -> f64 {
        let t = self.triangles[k];
        let mut len = 0.0;
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            if self.boundary_marker(a, b).is_some() {
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                len += ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            }
        }
        len
    }

    /// Returns a copy with inflow and outflow markers exchanged.
    pub fn with_swapped_inflow_outflow(&self) -> TriMesh {
        let swap = |m: u32| match m {
            MARKER_INFLOW => MARKER_OUTFLOW,
            MARKER_OUTFLOW => MARKER_INFLOW,
            other => other,
        };
        let boundary_edges = self
            .boundary_edges
            .iter()
            .map(|&(a, b, m)| (a, b, swap(m)))
            .collect();
        TriMesh::new(
            self.vertices.clone(),
            self.triangles.clone(),
            boundary_edges,
            self.parent_map.clone(),
        )
        .expect("marker swap preserves validity")
    }
}

fn canonical(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(vertices: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Size, shape and orientation of a triangle, from the eigendecomposition of
/// J^T J where J is the Jacobian of the affine map from the reference
/// triangle. Eigenvalues ascend; lengths are h_i = 1 / sqrt(lambda_i), so
/// h1 >= h2 and |det J| = 1/(h1 h2).
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub h1: f64,
    pub h2: f64,
    /// Orientation: argument of the first eigenvector, in [0, 2pi).
    pub theta: f64,
    /// Size parameter d = h1 * h2.
    pub d: f64,
    /// Aspect ratio s = h1 / h2 >= 1.
    pub s: f64,
    pub area: f64,
    /// Length of the element's edges lying on the domain boundary.
    pub boundary_length: f64,
}

/// Geometry decomposition of element `k`.
pub fn element_geometry(mesh: &TriMesh, k: usize) -> Result<ElementGeometry> {
    if k >= mesh.num_elements() {
        return Err(Error::invalid(format!("element index {k} out of range")));
    }
    let [p0, p1, p2] = mesh.tri_coords(k);
    // Affine map Jacobian, columns (v1 - v0) and (v2 - v0).
    let j = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let area = det.abs() * REFERENCE_AREA;
    if !(area > f64::EPSILON * scale_sq(&j)) {
        return Err(Error::DegenerateElement { element: k, area: mesh.signed_area(k) });
    }

    // J^T J entries.
    let a = j[0][0] * j[0][0] + j[1][0] * j[1][0];
    let b = j[0][0] * j[0][1] + j[1][0] * j[1][1];
    let c = j[0][1] * j[0][1] + j[1][1] * j[1][1];
    let (lam1, lam2, v1) = sym_eig_ascending(a, b, c);

    let h1 = 1.0 / lam1.sqrt();
    let h2 = 1.0 / lam2.sqrt();
    let theta = principal_angle(v1);

    Ok(ElementGeometry {
        h1,
        h2,
        theta,
        d: h1 * h2,
        s: h1 / h2,
        area,
        boundary_length: mesh.element_boundary_length(k),
    })
}

fn scale_sq(j: &[[f64; 2]; 2]) -> f64 {
    j.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE)
}

/// Eigenvalues of the symmetric matrix [[a,b],[b,c]] in ascending order and
/// an (unnormalised) eigenvector of the smaller one.
pub fn sym_eig_ascending(a: f64, b: f64, c: f64) -> (f64, f64, [f64; 2]) {
    let tr = a + c;
    let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
    let lam1 = 0.5 * (tr - disc);
    let lam2 = 0.5 * (tr + disc);
    let scale = a.abs().max(c.abs()).max(b.abs());
    let v1 = if b.abs() > 1e-14 * scale.max(f64::MIN_POSITIVE) {
        [b, lam1 - a]
    } else if a <= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    (lam1, lam2, v1)
}

/// Deterministic eigenvector orientation: non-negative x-component, ties at
/// zero x resolved by non-negative y; angle reported in [0, 2pi).
fn principal_angle(v: [f64; 2]) -> f64 {
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let (mut x, mut y) = (v[0], v[1]);
    if x.abs() <= 1e-14 * norm {
        x = 0.0;
        if y < 0.0 {
            y = -y;
        }
    } else if x < 0.0 {
        x = -x;
        y = -y;
    }
    let theta = y.atan2(x);
    if theta < 0.0 {
        theta + 2.0 * std::f64::consts::PI
    } else {
        theta
    }
}

/// Structured right-triangle mesh of the rectangle [0,w] x [0,h] with
/// approximately square cells of side `h_target`.
///
/// Cell diagonals alternate direction between the left and right halves so
/// the triangulation is mirror symmetric about the vertical midline when the
/// cell count is even. Markers: left=1 (inflow), right=2 (outflow),
/// top/bottom=3 (walls).
pub fn build_structured_mesh(width_m: f64, height_m: f64, h_target: f64) -> Result<TriMesh> {
    if !(width_m > 0.0 && height_m > 0.0 && h_target > 0.0) {
        return Err(Error::invalid(format!(
            "dimensions must be positive, got {width_m} x {height_m}, h = {h_target}"
        )));
    }
    let nx = ((width_m / h_target).round() as usize).max(1);
    let ny = ((height_m / h_target).round() as usize).max(1);

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                width_m * i as f64 / nx as f64,
                height_m * j as f64 / ny as f64,
            ]);
        }
    }
    let v = |i: usize, j: usize| j * (nx + 1) + i;

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            if 2 * i + 1 <= nx {
                // Diagonal from lower-left to upper-right.
                triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
            } else {
                // Mirrored diagonal.
                triangles.push([v(i, j), v(i + 1, j), v(i, j + 1)]);
                triangles.push([v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for j in 0..ny {
        boundary_edges.push((v(0, j), v(0, j + 1), MARKER_INFLOW));
        boundary_edges.push((v(nx, j), v(nx, j + 1), MARKER_OUTFLOW));
    }
    for i in 0..nx {
        boundary_edges.push((v(i, 0), v(i + 1, 0), MARKER_WALL));
        boundary_edges.push((v(i, ny), v(i + 1, ny), MARKER_WALL));
    }

    TriMesh::new(vertices, triangles, boundary_edges, None)
}

/// Midpoint vertex numbering used by [`uniform_refine`]: coarse vertices keep
/// their indices, midpoints are appended in first-seen canonical-edge order.
fn midpoint_indices(mesh: &TriMesh) -> BTreeMap<(usize, usize), usize> {
    let mut map = BTreeMap::new();
    let mut next = mesh.num_vertices();
    for t in mesh.triangles() {
        for e in 0..3 {
            let key = canonical(t[e], t[(e + 1) % 3]);
            map.entry(key).or_insert_with(|| {
                let idx = next;
                next += 1;
                idx
            });
        }
    }
    map
}

/// Red refinement: splits every triangle at its edge midpoints into four
/// similar triangles of equal area. Boundary markers are inherited and the
/// parent map is populated.
pub fn uniform_refine(mesh: &TriMesh) -> TriMesh {
    REFINE_CALLS.with(|c| c.set(c.get() + 1));

    let mids = midpoint_indices(mesh);
    let mut vertices = mesh.vertices().to_vec();
    vertices.resize(mesh.num_vertices() + mids.len(), [0.0, 0.0]);
    for (&(a, b), &m) in &mids {
        let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
        vertices[m] = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
    }

    let mut triangles = Vec::with_capacity(4 * mesh.num_elements());
    let mut parent_map = Vec::with_capacity(4 * mesh.num_elements());
    for (k, t) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = *t;
        let mab = mids[&canonical(a, b)];
        let mbc = mids[&canonical(b, c)];
        let mca = mids[&canonical(c, a)];
        triangles.push([a, mab, mca]);
        triangles.push([mab, b, mbc]);
        triangles.push([mca, mbc, c]);
        triangles.push([mab, mbc, mca]);
        parent_map.extend_from_slice(&[k, k, k, k]);
    }

    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges().len());
    for &(a, b, marker) in mesh.boundary_edges() {
        let m = mids[&canonical(a, b)];
        boundary_edges.push((a, m, marker));
        boundary_edges.push((m, b, marker));
    }

    TriMesh::new(vertices, triangles, boundary_edges, Some(parent_map))
        .expect("red refinement preserves validity")
}

/// Checks that `fine` was produced by [`uniform_refine`] of `coarse`.
fn check_hierarchy(coarse: &TriMesh, fine: &TriMesh) -> Result<BTreeMap<(usize, usize), usize>> {
    let pm = fine
        .parent_map()
        .ok_or_else(|| Error::HierarchyMismatch("fine mesh has no parent map".into()))?;
    if pm.len() != 4 * coarse.num_elements() {
        return Err(Error::HierarchyMismatch(format!(
            "fine mesh has {} elements, expected {}",
            fine.num_elements(),
            4 * coarse.num_elements()
        )));
    }
    let mids = midpoint_indices(coarse);
    if fine.num_vertices() != coarse.num_vertices() + mids.len() {
        return Err(Error::HierarchyMismatch(format!(
            "fine mesh has {} vertices, expected {}",
            fine.num_vertices(),
            coarse.num_vertices() + mids.len()
        )));
    }
    for (i, v) in coarse.vertices().iter().enumerate() {
        if fine.vertices()[i] != *v {
            return Err(Error::HierarchyMismatch(format!("vertex {i} moved between levels")));
        }
    }
    Ok(mids)
}

/// Transfers a field to the refined mesh. Lossless for P0 and (vector) P1:
/// fine coefficients equal the coarse field evaluated at the fine DoF
/// locations.
pub fn prolong(coarse_field: &Field, fine_mesh: &Arc<TriMesh>) -> Result<Field> {
    let coarse = coarse_field.mesh();
    let mids = check_hierarchy(coarse, fine_mesh)?;
    match coarse_field.space() {
        Space::P0 => {
            let pm = fine_mesh.parent_map().expect("checked");
            let values = pm.iter().map(|&p| coarse_field.values()[p]).collect();
            Field::new(fine_mesh.clone(), Space::P0, values)
        }
        Space::P1 => {
            let mut values = vec![0.0; fine_mesh.num_vertices()];
            values[..coarse.num_vertices()].copy_from_slice(coarse_field.values());
            for (&(a, b), &m) in &mids {
                values[m] = 0.5 * (coarse_field.values()[a] + coarse_field.values()[b]);
            }
            Field::new(fine_mesh.clone(), Space::P1, values)
        }
        Space::VectorP1 => {
            let mut values = vec![0.0; 2 * fine_mesh.num_vertices()];
            values[..2 * coarse.num_vertices()].copy_from_slice(coarse_field.values());
            for (&(a, b), &m) in &mids {
                for c in 0..2 {
                    values[2 * m + c] =
                        0.5 * (coarse_field.values()[2 * a + c] + coarse_field.values()[2 * b + c]);
                }
            }
            Field::new(fine_mesh.clone(), Space::VectorP1, values)
        }
    }
}

/// Conservative projection of a per-element indicator to the parent mesh:
/// each coarse value is the sum of its four children's contributions, so the
/// global sum is preserved exactly.
pub fn project_indicator(fine_indicator: &Field, coarse_mesh: &Arc<TriMesh>) -> Result<Field> {
    if fine_indicator.space() != Space::P0 {
        return Err(Error::invalid("indicator projection expects a P0 field"));
    }
    let fine = fine_indicator.mesh();
    let pm = fine
        .parent_map()
        .ok_or_else(|| Error::HierarchyMismatch("fine mesh has no parent map".into()))?;
    if pm.len() != fine.num_elements() || pm.len() != 4 * coarse_mesh.num_elements() {
        return Err(Error::HierarchyMismatch(format!(
            "parent map ({} entries) does not match coarse mesh ({} elements)",
            pm.len(),
            coarse_mesh.num_elements()
        )));
    }
    let mut values = vec![0.0; coarse_mesh.num_elements()];
    for (child, &parent) in pm.iter().enumerate() {
        values[parent] += fine_indicator.values()[child];
    }
    Field::new(coarse_mesh.clone(), Space::P0, values)
}

/// Writes the ASCII mesh format:
/// `E2NMESH 1`, vertex count, `x y` lines, triangle count, `v0 v1 v2` lines,
/// boundary edge count, `v0 v1 marker` lines.
pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("E2NMESH 1\n");
    out.push_str(&format!("{}\n", mesh.num_vertices()));
    for v in mesh.vertices() {
        out.push_str(&format!("{} {}\n", v[0], v[1]));
    }
    out.push_str(&format!("{}\n", mesh.num_elements()));
    for t in mesh.triangles() {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    out.push_str(&format!("{}\n", mesh.boundary_edges().len()));
    for &(a, b, m) in mesh.boundary_edges() {
        out.push_str(&format!("{a} {b} {m}\n"));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads the ASCII mesh format written by [`write_mesh`].
pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::parse(i + 1, e.to_string())),
            None => Err(Error::parse(0, format!("unexpected end of file reading {what}"))),
        }
    };

    let (line_no, header) = next("header")?;
    if header.trim() != "E2NMESH 1" {
        return Err(Error::parse(line_no, format!("expected `E2NMESH 1`, got `{header}`")));
    }

    let (ln, l) = next("vertex count")?;
    let nv: usize = l.trim().parse().map_err(|e| Error::parse(ln, format!("vertex count: {e}")))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = next("vertex")?;
        let mut it = l.split_whitespace();
        let x = parse_f64(&mut it, ln, "x")?;
        let y = parse_f64(&mut it, ln, "y")?;
        vertices.push([x, y]);
    }

    let (ln, l) = next("triangle count")?;
    let nt: usize = l.trim().parse().map_err(|e| Error::parse(ln, format!("triangle count: {e}")))?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = next("triangle")?;
        let mut it = l.split_whitespace();
        triangles.push([
            parse_usize(&mut it, ln, "v0")?,
            parse_usize(&mut it, ln, "v1")?,
            parse_usize(&mut it, ln, "v2")?,
        ]);
    }

    let (ln, l) = next("boundary edge count")?;
    let nb: usize = l.trim().parse().map_err(|e| Error::parse(ln, format!("edge count: {e}")))?;
    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (ln, l) = next("boundary edge")?;
        let mut it = l.split_whitespace();
        let a = parse_usize(&mut it, ln, "v0")?;
        let b = parse_usize(&mut it, ln, "v1")?;
        let m = parse_usize(&mut it, ln, "marker")? as u32;
        boundary_edges.push((a, b, m));
    }

    TriMesh::new(vertices, triangles, boundary_edges, None)
}

fn parse_f64(it: &mut std::str::SplitWhitespace, line: usize, what: &str) -> Result<f64> {
    it.next()
        .ok_or_else(|| Error::parse(line, format!("missing {what}")))?
        .parse()
        .map_err(|e| Error::parse(line, format!("{what}: {e}")))
}

fn parse_usize(it: &mut std::str::SplitWhitespace, line: usize, what: &str) -> Result<usize> {
    it.next()
        .ok_or_else(|| Error::parse(line, format!("missing {what}")))?
        .parse()
        .map_err(|e| Error::parse(line, format!("{what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn single_cell_counts() {
        let m = build_structured_mesh(1.0, 1.0, 1.0).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_elements(), 2);
        assert_eq!(m.boundary_edges().len(), 4);
    }

    #[test]
    fn channel_element_count() {
        let m = build_structured_mesh(1200.0, 500.0, 18.0).unwrap();
        // nx = round(1200/18) = 67, ny = round(500/18) = 28
        assert_eq!(m.num_elements(), 2 * 67 * 28);
        assert_eq!(m.num_elements(), 3752);
    }

    #[test]
    fn nonpositive_dimension_rejected() {
        assert!(matches!(
            build_structured_mesh(1.0, 1.0, -1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn structured_mesh_is_mirror_symmetric_for_even_nx() {
        let m = build_structured_mesh(4.0, 2.0, 1.0).unwrap();
        // Each triangle's mirror image (x -> 4 - x) must also be a triangle.
        let key = |t: &[[f64; 2]; 3]| {
            let mut k: Vec<(i64, i64)> = t
                .iter()
                .map(|p| ((p[0] * 1024.0).round() as i64, (p[1] * 1024.0).round() as i64))
                .collect();
            k.sort_unstable();
            k
        };
        let set: std::collections::BTreeSet<_> =
            (0..m.num_elements()).map(|k| key(&m.tri_coords(k))).collect();
        for k in 0..m.num_elements() {
            let mut t = m.tri_coords(k);
            for p in &mut t {
                p[0] = 4.0 - p[0];
            }
            assert!(set.contains(&key(&t)), "mirror of element {k} missing");
        }
    }

    #[test]
    fn refine_counts_and_euler() {
        let m = build_structured_mesh(1.0, 1.0, 1.0).unwrap();
        let f = uniform_refine(&m);
        assert_eq!(f.num_elements(), 8);
        assert_eq!(f.num_vertices(), 9);
        // V - E + F = 1 for a simply connected planar triangulation.
        for mesh in [&m, &f] {
            let v = mesh.num_vertices() as i64;
            let e = mesh.edges().len() as i64;
            let t = mesh.num_elements() as i64;
            assert_eq!(v - e + t, 1);
        }
        // vertex count = V + E of the coarse mesh
        assert_eq!(f.num_vertices(), m.num_vertices() + m.edges().len());
    }

    #[test]
    fn double_refine_parent_chains() {
        let m = build_structured_mesh(2.0, 1.0, 0.5).unwrap();
        let f1 = uniform_refine(&m);
        let f2 = uniform_refine(&f1);
        assert_eq!(f2.num_elements(), 16 * m.num_elements());
        // Composed parent chains land in range and cover each grandparent 16x.
        let mut counts = vec![0usize; m.num_elements()];
        for k in 0..f2.num_elements() {
            let p1 = f2.parent_map().unwrap()[k];
            let p0 = f1.parent_map().unwrap()[p1];
            counts[p0] += 1;
        }
        assert!(counts.iter().all(|&c| c == 16));
    }

    #[test]
    fn refine_preserves_area_and_markers() {
        let m = build_structured_mesh(3.0, 2.0, 1.0).unwrap();
        let f = uniform_refine(&m);
        let total_coarse: f64 = (0..m.num_elements()).map(|k| m.signed_area(k)).sum();
        let total_fine: f64 = (0..f.num_elements()).map(|k| f.signed_area(k)).sum();
        assert!((total_coarse - total_fine).abs() < 1e-12 * total_coarse);
        assert_eq!(f.boundary_edges().len(), 2 * m.boundary_edges().len());
        for marker in [MARKER_INFLOW, MARKER_OUTFLOW, MARKER_WALL] {
            let count = |mesh: &TriMesh| {
                mesh.boundary_edges().iter().filter(|&&(_, _, m)| m == marker).count()
            };
            assert_eq!(count(&f), 2 * count(&m));
        }
    }

    #[test]
    fn geometry_of_reference_triangle() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
            vec![[0, 2, 1]],
            vec![(0, 2, 3), (2, 1, 3), (1, 0, 3)],
            None,
        )
        .unwrap();
        let g = element_geometry(&mesh, 0).unwrap();
        // Vertex order (0,0),(1,0),(0,1) gives J = I.
        assert!((g.h1 - 1.0).abs() < 1e-14);
        assert!((g.h2 - 1.0).abs() < 1e-14);
        assert!((g.d - 1.0).abs() < 1e-14);
        assert!((g.s - 1.0).abs() < 1e-14);
        assert!((g.area - 0.5).abs() < 1e-14);
    }

    #[test]
    fn geometry_of_stretched_triangle() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![(0, 1, 3), (1, 2, 3), (2, 0, 3)],
            None,
        )
        .unwrap();
        let g = element_geometry(&mesh, 0).unwrap();
        // J^T J = diag(4, 1): lambda = (1, 4) ascending.
        assert!((g.h1 - 1.0).abs() < 1e-14);
        assert!((g.h2 - 0.5).abs() < 1e-14);
        assert!((g.d - 0.5).abs() < 1e-14);
        assert!((g.s - 2.0).abs() < 1e-14);
        assert!((g.theta - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn geometry_boundary_length() {
        let m = build_structured_mesh(2.0, 2.0, 1.0).unwrap();
        let mut corner_seen = false;
        for k in 0..m.num_elements() {
            let g = element_geometry(&m, k).unwrap();
            let blen = m.element_boundary_length(k);
            assert!((g.boundary_length - blen).abs() < 1e-14);
            if blen == 2.0 {
                corner_seen = true;
            }
        }
        assert!(corner_seen, "corner element with boundary length 2h expected");
        // det-consistency: area = |K_ref| * |det J| with |det J| = 1/(h1*h2)
        for k in 0..m.num_elements() {
            let g = element_geometry(&m, k).unwrap();
            let det = 1.0 / (g.h1 * g.h2);
            assert!((g.area - REFERENCE_AREA * det).abs() < 1e-12 * g.area);
        }
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let r = TriMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0, 1, 2]],
            vec![],
            None,
        );
        assert!(matches!(r, Err(Error::DegenerateElement { .. })));
    }

    #[test]
    fn refine_counter_increments() {
        let before = uniform_refine_calls();
        let m = build_structured_mesh(1.0, 1.0, 1.0).unwrap();
        let _ = uniform_refine(&m);
        assert_eq!(uniform_refine_calls(), before + 1);
    }

    #[test]
    fn mesh_file_roundtrip() {
        let m = build_structured_mesh(3.0, 2.0, 1.0).unwrap();
        let dir = std::env::temp_dir().join(format!("e2n-mesh-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.mesh");
        write_mesh(&m, &path).unwrap();
        let r = read_mesh(&path).unwrap();
        assert_eq!(m.vertices(), r.vertices());
        assert_eq!(m.triangles(), r.triangles());
        assert_eq!(m.boundary_edges(), r.boundary_edges());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn mesh_file_truncated_is_parse_error() {
        let dir = std::env::temp_dir().join(format!("e2n-mesh-trunc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.mesh");
        std::fs::write(&path, "E2NMESH 1\n3\n0 0\n").unwrap();
        assert!(matches!(read_mesh(&path), Err(Error::Parse { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }
}
