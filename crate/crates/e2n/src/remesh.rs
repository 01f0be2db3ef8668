//! Metric-conforming local remeshing: edge splits, collapses, flips and
//! metric-weighted Laplacian smoothing, iterated until edge lengths are
//! near unit in the metric.
//!
//! The metric given on the input mesh acts as a background field: every
//! query during adaptation evaluates the tensor of the input element
//! containing the point, so repeated passes cannot drift away from the
//! requested sizing.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metric::{is_spd, MetricField, SymTensor};
use crate::mesh::TriMesh;

/// Thresholds and budgets of the adaptation loop.
#[derive(Debug, Clone)]
pub struct RemeshConfig {
    /// Edges longer than this (metric length) are split.
    pub split_threshold: f64,
    /// Edges shorter than this are collapsed.
    pub collapse_threshold: f64,
    pub max_passes: usize,
    pub smoothing_steps: usize,
    /// Minimum metric-space quality accepted when collapsing.
    pub quality_floor: f64,
}

impl Default for RemeshConfig {
    fn default() -> Self {
        RemeshConfig {
            split_threshold: std::f64::consts::SQRT_2,
            collapse_threshold: std::f64::consts::FRAC_1_SQRT_2,
            max_passes: 20,
            smoothing_steps: 1,
            quality_floor: 0.1,
        }
    }
}

impl RemeshConfig {
    fn validate(&self) -> Result<()> {
        if !(self.split_threshold > 1.0
            && self.collapse_threshold < 1.0
            && self.collapse_threshold > 0.0)
        {
            return Err(Error::invalid("thresholds must satisfy split > 1 > collapse > 0"));
        }
        Ok(())
    }
}

/// Length of an edge in the metric: sqrt(e^T M e) with M the mean of the
/// adjacent element tensors (one on the boundary, two inside).
pub fn metric_edge_length(metric: &MetricField, mesh: &TriMesh, edge: (usize, usize)) -> f64 {
    let (a, b) = edge;
    let mut m = [0.0; 3];
    let mut count = 0.0;
    for (k, tri) in mesh.triangles().iter().enumerate() {
        if tri.contains(&a) && tri.contains(&b) {
            for (mi, ti) in m.iter_mut().zip(&metric.tensor(k)) {
                *mi += ti;
            }
            count += 1.0;
        }
    }
    let (pa, pb) = (mesh.vertices()[a], mesh.vertices()[b]);
    let e = [pb[0] - pa[0], pb[1] - pa[1]];
    length_in(&[m[0] / count, m[1] / count, m[2] / count], e)
}

fn length_in(m: &SymTensor, e: [f64; 2]) -> f64 {
    (m[0] * e[0] * e[0] + 2.0 * m[1] * e[0] * e[1] + m[2] * e[1] * e[1])
        .max(0.0)
        .sqrt()
}

/// Point-locating view of a metric on its original mesh.
pub struct MetricProbe {
    verts: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    tensors: Vec<SymTensor>,
    centroids: Vec<[f64; 2]>,
    lo: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<usize>>,
}

impl MetricProbe {
    pub fn new(metric: &MetricField) -> Result<Self> {
        let mesh = metric.mesh();
        for (k, t) in metric.tensors().iter().enumerate() {
            if !is_spd(t) {
                return Err(Error::InvalidMetric { element: k });
            }
        }
        let verts = mesh.vertices().to_vec();
        let tris = mesh.triangles().to_vec();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &verts {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let total_area: f64 = (0..tris.len()).map(|k| mesh.signed_area(k)).sum();
        let cell = (total_area / tris.len() as f64).sqrt().max(1e-12);
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut bins = vec![Vec::new(); nx * ny];
        let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        for (k, t) in tris.iter().enumerate() {
            let xs = [verts[t[0]][0], verts[t[1]][0], verts[t[2]][0]];
            let ys = [verts[t[0]][1], verts[t[1]][1], verts[t[2]][1]];
            let ix0 = clampi((xs.iter().cloned().fold(f64::INFINITY, f64::min) - lo[0]) / cell, nx);
            let ix1 = clampi((xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lo[0]) / cell, nx);
            let iy0 = clampi((ys.iter().cloned().fold(f64::INFINITY, f64::min) - lo[1]) / cell, ny);
            let iy1 = clampi((ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lo[1]) / cell, ny);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    bins[iy * nx + ix].push(k);
                }
            }
        }
        let centroids = tris
            .iter()
            .map(|t| {
                [
                    (verts[t[0]][0] + verts[t[1]][0] + verts[t[2]][0]) / 3.0,
                    (verts[t[0]][1] + verts[t[1]][1] + verts[t[2]][1]) / 3.0,
                ]
            })
            .collect();
        Ok(MetricProbe {
            verts,
            tris,
            tensors: metric.tensors().to_vec(),
            centroids,
            lo,
            cell,
            nx,
            ny,
            bins,
        })
    }

    fn contains(&self, k: usize, x: [f64; 2]) -> bool {
        let t = self.tris[k];
        let [p0, p1, p2] = [self.verts[t[0]], self.verts[t[1]], self.verts[t[2]]];
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let l1 = ((x[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (x[1] - p0[1])) / det;
        let l2 = ((p1[0] - p0[0]) * (x[1] - p0[1]) - (x[0] - p0[0]) * (p1[1] - p0[1])) / det;
        let tol = -1e-10;
        l1 >= tol && l2 >= tol && 1.0 - l1 - l2 >= tol
    }

    /// Tensor of the background element containing (or nearest to) `x`.
    pub fn tensor_at(&self, x: [f64; 2]) -> SymTensor {
        let ix = (((x[0] - self.lo[0]) / self.cell).max(0.0) as usize).min(self.nx - 1);
        let iy = (((x[1] - self.lo[1]) / self.cell).max(0.0) as usize).min(self.ny - 1);
        for &k in &self.bins[iy * self.nx + ix] {
            if self.contains(k, x) {
                return self.tensors[k];
            }
        }
        // Off-grid or roundoff: expand rings around the cell, falling back
        // to the nearest centroid seen.
        let mut best = (f64::INFINITY, 0usize);
        for ring in 0..=self.nx.max(self.ny) {
            let x0 = ix.saturating_sub(ring);
            let x1 = (ix + ring).min(self.nx - 1);
            let y0 = iy.saturating_sub(ring);
            let y1 = (iy + ring).min(self.ny - 1);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    if ring > 0 && cx != x0 && cx != x1 && cy != y0 && cy != y1 {
                        continue;
                    }
                    for &k in &self.bins[cy * self.nx + cx] {
                        if self.contains(k, x) {
                            return self.tensors[k];
                        }
                        let c = self.centroids[k];
                        let d = (c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                }
            }
            if best.0.is_finite() && ring > 1 {
                break;
            }
        }
        self.tensors[best.1]
    }

    /// Metric length of the segment between two points: the endpoint
    /// tensors are averaged.
    pub fn edge_length(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let (ma, mb) = (self.tensor_at(a), self.tensor_at(b));
        let m = [0.5 * (ma[0] + mb[0]), 0.5 * (ma[1] + mb[1]), 0.5 * (ma[2] + mb[2])];
        length_in(&m, [b[0] - a[0], b[1] - a[1]])
    }

    /// Metric-space quality of a triangle: 4 sqrt(3) |T|_M / sum(l_i^2),
    /// which is 1 for an equilateral triangle in the metric and negative for
    /// an inverted one.
    pub fn quality(&self, p: &[[f64; 2]; 3]) -> f64 {
        let tensors = [self.tensor_at(p[0]), self.tensor_at(p[1]), self.tensor_at(p[2])];
        let m = [
            (tensors[0][0] + tensors[1][0] + tensors[2][0]) / 3.0,
            (tensors[0][1] + tensors[1][1] + tensors[2][1]) / 3.0,
            (tensors[0][2] + tensors[1][2] + tensors[2][2]) / 3.0,
        ];
        let area = 0.5
            * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        let det = (m[0] * m[2] - m[1] * m[1]).max(0.0).sqrt();
        let mut perim2 = 0.0;
        for i in 0..3 {
            let (a, b) = (p[i], p[(i + 1) % 3]);
            let e = [b[0] - a[0], b[1] - a[1]];
            let l = length_in(&m, e);
            perim2 += l * l;
        }
        if perim2 <= 0.0 {
            return 0.0;
        }
        4.0 * 3.0f64.sqrt() * det * area / perim2
    }
}

fn canonical(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

struct Editor<'a> {
    verts: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    v2t: Vec<BTreeSet<usize>>,
    boundary: BTreeMap<(usize, usize), u32>,
    probe: &'a MetricProbe,
    cfg: &'a RemeshConfig,
}

impl<'a> Editor<'a> {
    fn new(mesh: &TriMesh, probe: &'a MetricProbe, cfg: &'a RemeshConfig) -> Self {
        let verts = mesh.vertices().to_vec();
        let tris = mesh.triangles().to_vec();
        let alive = vec![true; tris.len()];
        let mut v2t = vec![BTreeSet::new(); verts.len()];
        for (k, t) in tris.iter().enumerate() {
            for &v in t {
                v2t[v].insert(k);
            }
        }
        let boundary = mesh
            .boundary_edges()
            .iter()
            .map(|&(a, b, m)| (canonical(a, b), m))
            .collect();
        Editor { verts, tris, alive, v2t, boundary, probe, cfg }
    }

    fn signed_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = [self.verts[t[0]], self.verts[t[1]], self.verts[t[2]]];
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    fn coords(&self, t: &[usize; 3]) -> [[f64; 2]; 3] {
        [self.verts[t[0]], self.verts[t[1]], self.verts[t[2]]]
    }

    fn edge_tris(&self, a: usize, b: usize) -> Vec<usize> {
        self.v2t[a]
            .intersection(&self.v2t[b])
            .copied()
            .filter(|&k| self.alive[k])
            .collect()
    }

    fn edge_length(&self, a: usize, b: usize) -> f64 {
        self.probe.edge_length(self.verts[a], self.verts[b])
    }

    /// All alive edges, canonical and sorted.
    fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for (k, t) in self.tris.iter().enumerate() {
            if !self.alive[k] {
                continue;
            }
            for e in 0..3 {
                set.insert(canonical(t[e], t[(e + 1) % 3]));
            }
        }
        set.into_iter().collect()
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary.keys().any(|&(a, b)| a == v || b == v)
    }

    /// The two boundary neighbours of a boundary vertex, if it has exactly
    /// two (a manifold boundary point).
    fn boundary_neighbours(&self, v: usize) -> Option<(usize, usize, u32, u32)> {
        let mut found = Vec::new();
        for (&(a, b), &m) in &self.boundary {
            if a == v {
                found.push((b, m));
            } else if b == v {
                found.push((a, m));
            }
        }
        match found.as_slice() {
            [(n1, m1), (n2, m2)] => Some((*n1, *n2, *m1, *m2)),
            _ => None,
        }
    }

    /// A boundary vertex may move (or be removed) only when its two
    /// boundary edges share a marker and are collinear.
    fn is_slide_vertex(&self, v: usize) -> bool {
        let Some((n1, n2, m1, m2)) = self.boundary_neighbours(v) else {
            return false;
        };
        if m1 != m2 {
            return false;
        }
        let (p, a, b) = (self.verts[v], self.verts[n1], self.verts[n2]);
        let d1 = [p[0] - a[0], p[1] - a[1]];
        let d2 = [b[0] - p[0], b[1] - p[1]];
        let cross = d1[0] * d2[1] - d1[1] * d2[0];
        let scale = (d1[0].powi(2) + d1[1].powi(2)).sqrt() * (d2[0].powi(2) + d2[1].powi(2)).sqrt();
        cross.abs() <= 1e-10 * scale
    }

    fn split_pass(&mut self) -> usize {
        let snapshot = self.edges();
        let mut count = 0;
        for (a, b) in snapshot {
            let adjacent = self.edge_tris(a, b);
            if adjacent.is_empty() {
                continue;
            }
            if self.edge_length(a, b) <= self.cfg.split_threshold {
                continue;
            }
            let (pa, pb) = (self.verts[a], self.verts[b]);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let m = self.verts.len();
            self.verts.push(mid);
            self.v2t.push(BTreeSet::new());

            for k in adjacent {
                let t = self.tris[k];
                self.kill(k);
                // Children keep the parent's orientation.
                let (c1, c2) = if canonical(t[0], t[1]) == canonical(a, b) {
                    ([t[0], m, t[2]], [m, t[1], t[2]])
                } else if canonical(t[1], t[2]) == canonical(a, b) {
                    ([t[0], t[1], m], [t[0], m, t[2]])
                } else {
                    ([t[0], t[1], m], [m, t[1], t[2]])
                };
                self.spawn(c1);
                self.spawn(c2);
            }
            if let Some(marker) = self.boundary.remove(&canonical(a, b)) {
                self.boundary.insert(canonical(a, m), marker);
                self.boundary.insert(canonical(m, b), marker);
            }
            count += 1;
        }
        count
    }

    fn kill(&mut self, k: usize) {
        self.alive[k] = false;
        for &v in &self.tris[k].clone() {
            self.v2t[v].remove(&k);
        }
    }

    fn spawn(&mut self, t: [usize; 3]) -> usize {
        let k = self.tris.len();
        self.tris.push(t);
        self.alive.push(true);
        for &v in &t {
            self.v2t[v].insert(k);
        }
        k
    }

    fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &k in &self.v2t[v] {
            if self.alive[k] {
                for &w in &self.tris[k] {
                    if w != v {
                        out.insert(w);
                    }
                }
            }
        }
        out
    }

    /// Collapses edge (a, b) by removing `victim` into `keep`, when legal.
    fn try_collapse(&mut self, keep: usize, victim: usize) -> bool {
        let dying = self.edge_tris(keep, victim);
        if dying.is_empty() {
            return false;
        }
        // Boundary rules: interior vertices always qualify; a boundary
        // victim requires a same-marker collinear boundary edge to `keep`.
        if self.is_boundary_vertex(victim) {
            if !self.boundary.contains_key(&canonical(keep, victim)) {
                return false;
            }
            if !self.is_slide_vertex(victim) {
                return false;
            }
        } else if self.boundary.contains_key(&canonical(keep, victim)) {
            return false;
        }

        // Link condition: the shared neighbourhood must be exactly the
        // opposite vertices of the dying triangles.
        let expected: BTreeSet<usize> = dying
            .iter()
            .flat_map(|&k| self.tris[k])
            .filter(|&v| v != keep && v != victim)
            .collect();
        let common: BTreeSet<usize> = self
            .neighbours(keep)
            .intersection(&self.neighbours(victim))
            .copied()
            .collect();
        if common != expected {
            return false;
        }

        // Geometric validation of every surviving triangle around victim.
        let survivors: Vec<usize> = self.v2t[victim]
            .iter()
            .copied()
            .filter(|k| self.alive[*k] && !dying.contains(k))
            .collect();
        for &k in &survivors {
            let mut t = self.tris[k];
            for v in &mut t {
                if *v == victim {
                    *v = keep;
                }
            }
            if self.signed_area(&t) <= 0.0 {
                return false;
            }
            if self.probe.quality(&self.coords(&t)) < self.cfg.quality_floor {
                return false;
            }
        }

        // Execute.
        for k in dying {
            self.kill(k);
        }
        for k in survivors {
            self.kill(k);
            let mut t = self.tris[k];
            for v in &mut t {
                if *v == victim {
                    *v = keep;
                }
            }
            self.spawn(t);
        }
        // Remap boundary edges touching the victim.
        let to_move: Vec<((usize, usize), u32)> = self
            .boundary
            .iter()
            .filter(|(&(a, b), _)| a == victim || b == victim)
            .map(|(&e, &m)| (e, m))
            .collect();
        for ((a, b), marker) in to_move {
            self.boundary.remove(&(a, b));
            let (na, nb) = (if a == victim { keep } else { a }, if b == victim { keep } else { b });
            if na != nb {
                self.boundary.insert(canonical(na, nb), marker);
            }
        }
        true
    }

    fn collapse_pass(&mut self) -> usize {
        let snapshot = self.edges();
        let mut count = 0;
        for (a, b) in snapshot {
            if self.edge_tris(a, b).is_empty() {
                continue;
            }
            if self.edge_length(a, b) >= self.cfg.collapse_threshold {
                continue;
            }
            // Prefer removing an interior endpoint.
            let (first, second) = if self.is_boundary_vertex(b) && !self.is_boundary_vertex(a) {
                ((b, a), (a, b))
            } else {
                ((a, b), (b, a))
            };
            if self.try_collapse(first.0, first.1) || self.try_collapse(second.0, second.1) {
                count += 1;
            }
        }
        count
    }

    fn flip_pass(&mut self) -> usize {
        let snapshot = self.edges();
        let mut count = 0;
        for (a, b) in snapshot {
            if self.boundary.contains_key(&(a, b)) {
                continue;
            }
            let adjacent = self.edge_tris(a, b);
            if adjacent.len() != 2 {
                continue;
            }
            let (k1, k2) = (adjacent[0], adjacent[1]);
            let opposite = |t: &[usize; 3]| t.iter().copied().find(|&v| v != a && v != b);
            let Some(c) = opposite(&self.tris[k1]) else { continue };
            let Some(d) = opposite(&self.tris[k2]) else { continue };
            if c == d || !self.edge_tris(c, d).is_empty() {
                continue;
            }

            // Candidate triangles; orientation checked by signed area.
            let mk = |x: usize, y: usize, z: usize| -> Option<[usize; 3]> {
                let t = [x, y, z];
                (self.signed_area(&t) > 0.0).then_some(t)
            };
            let pair = match (mk(a, d, c).or(mk(a, c, d)), mk(b, c, d).or(mk(b, d, c))) {
                (Some(t1), Some(t2)) => Some((t1, t2)),
                _ => None,
            };
            let Some((t1, t2)) = pair else { continue };

            let before = self
                .probe
                .quality(&self.coords(&self.tris[k1]))
                .min(self.probe.quality(&self.coords(&self.tris[k2])));
            let after = self
                .probe
                .quality(&self.coords(&t1))
                .min(self.probe.quality(&self.coords(&t2)));
            if after <= before + 1e-12 {
                continue;
            }
            self.kill(k1);
            self.kill(k2);
            self.spawn(t1);
            self.spawn(t2);
            count += 1;
        }
        count
    }

    fn smooth_pass(&mut self) {
        for v in 0..self.verts.len() {
            if self.v2t[v].iter().all(|&k| !self.alive[k]) {
                continue;
            }
            let target = if self.is_boundary_vertex(v) {
                if !self.is_slide_vertex(v) {
                    continue;
                }
                let (n1, n2, _, _) = self.boundary_neighbours(v).expect("slide vertex");
                let (p1, p2) = (self.verts[n1], self.verts[n2]);
                let (w1, w2) = (
                    self.probe.edge_length(self.verts[v], p1),
                    self.probe.edge_length(self.verts[v], p2),
                );
                // Weighted point on the segment between the two boundary
                // neighbours, kept strictly inside.
                let t = (w1 / (w1 + w2)).clamp(0.1, 0.9);
                [p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1])]
            } else {
                let nbs = self.neighbours(v);
                if nbs.is_empty() {
                    continue;
                }
                let mut acc = [0.0; 2];
                let mut total = 0.0;
                for &n in &nbs {
                    let w = self.probe.edge_length(self.verts[v], self.verts[n]);
                    acc[0] += w * self.verts[n][0];
                    acc[1] += w * self.verts[n][1];
                    total += w;
                }
                if total <= 0.0 {
                    continue;
                }
                [acc[0] / total, acc[1] / total]
            };

            let original = self.verts[v];
            // Full step, then a half step; reject moves that invert any
            // incident triangle.
            for eta in [1.0, 0.5] {
                let trial = [
                    original[0] + eta * (target[0] - original[0]),
                    original[1] + eta * (target[1] - original[1]),
                ];
                self.verts[v] = trial;
                let ok = self.v2t[v]
                    .iter()
                    .filter(|&&k| self.alive[k])
                    .all(|&k| self.signed_area(&self.tris[k]) > 0.0);
                if ok {
                    break;
                }
                self.verts[v] = original;
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let mut edge_count: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for (k, t) in self.tris.iter().enumerate() {
            if !self.alive[k] {
                continue;
            }
            if self.signed_area(t) <= 0.0 {
                return Err(Error::RemeshFailure(format!(
                    "inverted element with vertices {t:?}"
                )));
            }
            for e in 0..3 {
                *edge_count.entry(canonical(t[e], t[(e + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (e, n) in &edge_count {
            match n {
                1 if !self.boundary.contains_key(e) => {
                    return Err(Error::RemeshFailure(format!("unmarked hull edge {e:?}")))
                }
                2 if self.boundary.contains_key(e) => {
                    return Err(Error::RemeshFailure(format!("interior edge {e:?} marked boundary")))
                }
                1 | 2 => {}
                n => return Err(Error::RemeshFailure(format!("edge {e:?} has {n} triangles"))),
            }
        }
        for e in self.boundary.keys() {
            if !edge_count.contains_key(e) {
                return Err(Error::RemeshFailure(format!("boundary edge {e:?} lost")));
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<TriMesh> {
        let mut remap = vec![usize::MAX; self.verts.len()];
        let mut verts = Vec::new();
        for (k, t) in self.tris.iter().enumerate() {
            if !self.alive[k] {
                continue;
            }
            for &v in t {
                if remap[v] == usize::MAX {
                    remap[v] = verts.len();
                    verts.push(self.verts[v]);
                }
            }
        }
        let tris: Vec<[usize; 3]> = self
            .tris
            .iter()
            .enumerate()
            .filter(|&(k, _)| self.alive[k])
            .map(|(_, t)| [remap[t[0]], remap[t[1]], remap[t[2]]])
            .collect();
        let boundary: Vec<(usize, usize, u32)> = self
            .boundary
            .iter()
            .map(|(&(a, b), &m)| (remap[a], remap[b], m))
            .collect();
        TriMesh::new(verts, tris, boundary, None)
    }
}

/// Adapts a mesh to a metric by repeated passes of split, collapse, flip and
/// smoothing, until a pass changes less than 1% of the edges or the pass
/// budget runs out. Boundary vertices only move along their (straight,
/// same-marker) boundary segment and marker transitions are never removed.
pub fn adapt_mesh(mesh: &TriMesh, metric: &MetricField, config: &RemeshConfig) -> Result<TriMesh> {
    config.validate()?;
    if metric.mesh().num_elements() != mesh.num_elements() {
        return Err(Error::invalid("metric was built for a different mesh"));
    }
    let probe = MetricProbe::new(metric)?;
    let mut editor = Editor::new(mesh, &probe, config);

    for _ in 0..config.max_passes {
        let edge_count = editor.edges().len();
        let mut changed = 0;
        changed += editor.split_pass();
        changed += editor.collapse_pass();
        changed += editor.flip_pass();
        for _ in 0..config.smoothing_steps {
            editor.smooth_pass();
        }
        editor.validate()?;
        if changed < (edge_count / 100).max(1) {
            break;
        }
    }
    editor.finish()
}
