//! In-plane Bloch band structure of the square phononic lattice.
//!
//! The unit cell is a central square pad joined to its neighbours by four
//! bridges. Symmetric (extensional) plate modes are approximated by 2D plane
//! stress on a structured bilinear-quadrilateral mesh whose grid lines follow
//! the cell geometry. Bloch periodicity is imposed by eliminating the right
//! and top boundary nodes in favour of their left and bottom partners with a
//! phase factor, and the resulting Hermitian pencil `K(k) u = w^2 M u` is
//! solved per wave vector.

use faer::linalg::solvers::Solve;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::constants::TWO_PI;
use crate::elastic_modes::Material;
use crate::error::{ensure, Error, Result};

/// Resolutions above this use the sparse shift-invert solver.
pub const DENSE_RESOLUTION_LIMIT: usize = 24;
pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 16;
pub const MIN_RESOLUTION: usize = 16;
/// Eigenvalues above `-ZERO_TOLERANCE * max|lambda|` count as non-negative.
pub const ZERO_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCell {
    pub period: f64,
    pub bridge_width: f64,
    /// Pad-to-pad bridge length; each cell carries half of it on every side.
    pub bridge_length: f64,
    pub thickness: f64,
    pub material: Material,
}

impl UnitCell {
    /// 8 um period with 1.25 x 1.25 um bridges, 1.5 um thick diamond.
    pub fn paper_cell() -> Self {
        Self {
            period: 8e-6,
            bridge_width: 1.25e-6,
            bridge_length: 1.25e-6,
            thickness: 1.5e-6,
            material: Material::diamond(),
        }
    }

    /// Full square: the degenerate cell of an unpatterned plate.
    pub fn unpatterned(period: f64, thickness: f64, material: Material) -> Self {
        Self { period, bridge_width: period, bridge_length: 0.5 * period, thickness, material }
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.period;
        ensure(a > 0.0, "period_a", || format!("must be positive, got {a}"))?;
        ensure(self.bridge_width > 0.0 && self.bridge_width <= a, "bridge_width", || {
            format!("must lie in (0, period], got {}", self.bridge_width)
        })?;
        ensure(self.bridge_length > 0.0 && self.bridge_length < a, "bridge_length", || {
            format!("must lie in (0, period), got {}", self.bridge_length)
        })?;
        ensure(self.thickness > 0.0, "thickness_d", || {
            format!("must be positive, got {}", self.thickness)
        })?;
        self.material.validate()
    }

    fn pad_bounds(&self) -> (f64, f64) {
        (0.5 * self.bridge_length, self.period - 0.5 * self.bridge_length)
    }

    fn bridge_bounds(&self) -> (f64, f64) {
        (0.5 * (self.period - self.bridge_width), 0.5 * (self.period + self.bridge_width))
    }

    pub fn is_solid(&self, x: f64, y: f64) -> bool {
        let (p0, p1) = self.pad_bounds();
        let (b0, b1) = self.bridge_bounds();
        let inside = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
        (inside(x, p0, p1) && inside(y, p0, p1))
            || inside(y, b0, b1)
            || inside(x, b0, b1)
    }

    /// Exact area of the solid region.
    pub fn solid_area(&self) -> f64 {
        let a = self.period;
        let w = self.bridge_width;
        let (p0, p1) = self.pad_bounds();
        let (b0, b1) = self.bridge_bounds();
        let pad = p1 - p0;
        let overlap = (b1.min(p1) - b0.max(p0)).max(0.0);
        // pad, plus two full-length crossing bars, minus their overlaps
        let bars = 2.0 * a * w - w * w;
        let bars_in_pad = 2.0 * pad * overlap - overlap * overlap;
        pad * pad + bars - bars_in_pad
    }
}

/// Structured quadrilateral mesh of the solid part of a unit cell.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node indices.
    pub elements: Vec<[usize; 4]>,
    /// (node on x = 0, node on x = a)
    pub left_right: Vec<(usize, usize)>,
    /// (node on y = 0, node on y = a)
    pub bottom_top: Vec<(usize, usize)>,
    pub period: f64,
}

impl Mesh {
    pub fn n_dofs(&self) -> usize {
        2 * self.nodes.len()
    }
}

fn grid_lines(cell: &UnitCell, resolution: usize) -> Vec<f64> {
    let a = cell.period;
    let (p0, p1) = cell.pad_bounds();
    let (b0, b1) = cell.bridge_bounds();
    let mut breaks = vec![0.0, p0, p1, b0, b1, a];
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|u, v| (*u - *v).abs() <= 1e-12 * a);
    let mut lines = vec![0.0];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let n = ((len / a) * resolution as f64).round().max(1.0) as usize;
        for i in 1..=n {
            lines.push(if i == n { w[1] } else { w[0] + len * i as f64 / n as f64 });
        }
    }
    lines
}

pub fn build_unit_cell_mesh(cell: &UnitCell, resolution: usize) -> Result<Mesh> {
    cell.validate()?;
    let a = cell.period;
    let lines = grid_lines(cell, resolution);
    let (b0, b1) = cell.bridge_bounds();
    let across = lines
        .windows(2)
        .filter(|w| {
            let c = 0.5 * (w[0] + w[1]);
            c > b0 && c < b1
        })
        .count();
    if across < 4 {
        return Err(Error::UnresolvedBridge { resolution, across });
    }

    let n = lines.len();
    let mut node_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let mut node_at = |i: usize, j: usize, nodes: &mut Vec<[f64; 2]>| {
        *node_index.entry((i, j)).or_insert_with(|| {
            nodes.push([lines[i], lines[j]]);
            nodes.len() - 1
        })
    };
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let cx = 0.5 * (lines[i] + lines[i + 1]);
            let cy = 0.5 * (lines[j] + lines[j + 1]);
            if cell.is_solid(cx, cy) {
                elements.push([
                    node_at(i, j, &mut nodes),
                    node_at(i + 1, j, &mut nodes),
                    node_at(i + 1, j + 1, &mut nodes),
                    node_at(i, j + 1, &mut nodes),
                ]);
            }
        }
    }

    let tol = 1e-9 * a;
    let mut left_right = Vec::new();
    let mut bottom_top = Vec::new();
    for (&(i, j), &idx) in &node_index {
        if i == 0 {
            if let Some(&partner) = node_index.get(&(n - 1, j)) {
                debug_assert!((nodes[idx][1] - nodes[partner][1]).abs() <= tol);
                left_right.push((idx, partner));
            }
        }
        if j == 0 {
            if let Some(&partner) = node_index.get(&(i, n - 1)) {
                debug_assert!((nodes[idx][0] - nodes[partner][0]).abs() <= tol);
                bottom_top.push((idx, partner));
            }
        }
    }
    // every boundary node must have a geometric partner
    let on_edge = |v: f64, edge: f64| (v - edge).abs() <= tol;
    let right_count = nodes.iter().filter(|p| on_edge(p[0], a)).count();
    let top_count = nodes.iter().filter(|p| on_edge(p[1], a)).count();
    if right_count != left_right.len() || top_count != bottom_top.len() {
        return Err(Error::InvalidParameter {
            name: "cell",
            reason: "periodic boundaries do not match node-for-node".into(),
        });
    }

    Ok(Mesh { nodes, elements, left_right, bottom_top, period: a })
}

/// Element stiffness and mass matrices (8x8, dof order ux0, uy0, ux1, ...).
#[derive(Debug, Clone)]
pub struct ElementMatrices {
    pub stiffness: Vec<[[f64; 8]; 8]>,
    pub mass: Vec<[[f64; 8]; 8]>,
}

/// Assembled real operators plus the element matrices they came from.
#[derive(Debug, Clone)]
pub struct Operators {
    pub stiffness: SparseReal,
    pub mass: SparseReal,
    pub elements: ElementMatrices,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct SparseReal {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseReal {
    fn from_triplets(n: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .binary_search(&c)
            .map(|k| self.vals[range.start + k])
            .unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

fn element_matrices(
    coords: &[[f64; 2]; 4],
    material: &Material,
    thickness: f64,
    element: usize,
) -> Result<([[f64; 8]; 8], [[f64; 8]; 8])> {
    let e = material.youngs_modulus;
    let nu = material.poisson_ratio;
    let c = e * thickness / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * 0.5 * (1.0 - nu)]];
    let rho_t = material.mass_density * thickness;

    let mut ke = [[0.0; 8]; 8];
    let mut me = [[0.0; 8]; 8];
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            let mut n = [0.0; 4];
            let mut dn_dxi = [0.0; 4];
            let mut dn_deta = [0.0; 4];
            for (a, cn) in CORNERS.iter().enumerate() {
                n[a] = 0.25 * (1.0 + cn[0] * xi) * (1.0 + cn[1] * eta);
                dn_dxi[a] = 0.25 * cn[0] * (1.0 + cn[1] * eta);
                dn_deta[a] = 0.25 * cn[1] * (1.0 + cn[0] * xi);
            }
            let mut j = [[0.0; 2]; 2];
            for a in 0..4 {
                j[0][0] += dn_dxi[a] * coords[a][0];
                j[0][1] += dn_dxi[a] * coords[a][1];
                j[1][0] += dn_deta[a] * coords[a][0];
                j[1][1] += dn_deta[a] * coords[a][1];
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det > 0.0) {
                return Err(Error::SingularElement { element, jacobian: det });
            }
            let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
            let mut b = [[0.0; 8]; 3];
            for a in 0..4 {
                let dx = inv[0][0] * dn_dxi[a] + inv[0][1] * dn_deta[a];
                let dy = inv[1][0] * dn_dxi[a] + inv[1][1] * dn_deta[a];
                b[0][2 * a] = dx;
                b[1][2 * a + 1] = dy;
                b[2][2 * a] = dy;
                b[2][2 * a + 1] = dx;
            }
            for p in 0..8 {
                let db: [f64; 3] = std::array::from_fn(|r| (0..3).map(|s| d[r][s] * b[s][p]).sum());
                for q in 0..8 {
                    ke[q][p] += det * (0..3).map(|r| b[r][q] * db[r]).sum::<f64>();
                }
            }
            for a in 0..4 {
                for bb in 0..4 {
                    let m = det * rho_t * n[a] * n[bb];
                    me[2 * a][2 * bb] += m;
                    me[2 * a + 1][2 * bb + 1] += m;
                }
            }
        }
    }
    Ok((ke, me))
}

/// Plane-stress bilinear stiffness and consistent mass, two dofs per node.
pub fn assemble_plane_stress(mesh: &Mesh, material: &Material, thickness: f64) -> Result<Operators> {
    let mut ks = Vec::with_capacity(mesh.elements.len());
    let mut ms = Vec::with_capacity(mesh.elements.len());
    let mut kt = Vec::new();
    let mut mt = Vec::new();
    for (id, el) in mesh.elements.iter().enumerate() {
        let coords = el.map(|n| mesh.nodes[n]);
        let (ke, me) = element_matrices(&coords, material, thickness, id)?;
        for p in 0..8 {
            let gp = 2 * el[p / 2] + p % 2;
            for q in 0..8 {
                let gq = 2 * el[q / 2] + q % 2;
                kt.push((gp, gq, ke[p][q]));
                mt.push((gp, gq, me[p][q]));
            }
        }
        ks.push(ke);
        ms.push(me);
    }
    let n = mesh.n_dofs();
    Ok(Operators {
        stiffness: SparseReal::from_triplets(n, kt),
        mass: SparseReal::from_triplets(n, mt),
        elements: ElementMatrices { stiffness: ks, mass: ms },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    /// 0: Gamma-X, 1: X-M, 2: M-Gamma
    pub segment: usize,
    /// Position within the segment, in [0, 1].
    pub fraction: f64,
    pub kx: f64,
    pub ky: f64,
}

/// Gamma -> X -> M -> Gamma with `samples_per_segment` points per leg plus the closing Gamma.
pub fn high_symmetry_path(period: f64, samples_per_segment: usize) -> Vec<KPoint> {
    let kb = PI / period;
    let corners = [(0.0, 0.0), (kb, 0.0), (kb, kb), (0.0, 0.0)];
    let s = samples_per_segment.max(1);
    let mut path = Vec::with_capacity(3 * s + 1);
    for seg in 0..3 {
        let (x0, y0) = corners[seg];
        let (x1, y1) = corners[seg + 1];
        for i in 0..s {
            let t = i as f64 / s as f64;
            path.push(KPoint { segment: seg, fraction: t, kx: x0 + t * (x1 - x0), ky: y0 + t * (y1 - y0) });
        }
    }
    path.push(KPoint { segment: 2, fraction: 1.0, kx: 0.0, ky: 0.0 });
    path
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    /// Dense up to `DENSE_RESOLUTION_LIMIT`, shift-invert above.
    Auto,
    Dense,
    ShiftInvert,
}

#[derive(Debug, Clone)]
pub struct BlochProblem {
    pub cell: UnitCell,
    pub mesh_resolution: usize,
    pub k_path: Vec<KPoint>,
    pub n_bands: usize,
    pub solver: EigenSolver,
}

impl BlochProblem {
    pub fn new(cell: UnitCell, mesh_resolution: usize, n_bands: usize) -> Self {
        let k_path = high_symmetry_path(cell.period, DEFAULT_SAMPLES_PER_SEGMENT);
        Self { cell, mesh_resolution, k_path, n_bands, solver: EigenSolver::Auto }
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        ensure(self.mesh_resolution >= MIN_RESOLUTION, "mesh_resolution", || {
            format!("must be at least {MIN_RESOLUTION}, got {}", self.mesh_resolution)
        })?;
        ensure(self.n_bands >= 1, "n_bands", || "must be at least 1".into())?;
        let kb = PI / self.cell.period * (1.0 + 1e-12);
        for k in &self.k_path {
            ensure(k.kx.abs() <= kb && k.ky.abs() <= kb, "k_path", || {
                format!("k = ({:e}, {:e}) lies outside the first Brillouin zone", k.kx, k.ky)
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandStructure {
    pub k_samples: Vec<KPoint>,
    /// `n_k x n_bands`, Hz, ascending per row.
    pub frequencies: Vec<Vec<f64>>,
}

impl BandStructure {
    pub fn n_bands(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }
}

/// Map from full dofs to (reduced dof, phase) under Bloch periodicity.
struct BlochMap {
    /// Per node: index of its independent master node.
    master: Vec<usize>,
    /// Per node: lattice translation (nx, ny) from master to node.
    shift: Vec<(i32, i32)>,
    /// Per independent node: reduced node index.
    reduced: Vec<Option<usize>>,
    n_reduced_nodes: usize,
}

impl BlochMap {
    fn new(mesh: &Mesh) -> Self {
        let n = mesh.nodes.len();
        let mut parent: Vec<Option<(usize, (i32, i32))>> = vec![None; n];
        for &(l, r) in &mesh.left_right {
            parent[r] = Some((l, (1, 0)));
        }
        for &(b, t) in &mesh.bottom_top {
            // the top-right corner already points left; keep one parent per node
            if parent[t].is_none() {
                parent[t] = Some((b, (0, 1)));
            }
        }
        let mut master = vec![0; n];
        let mut shift = vec![(0, 0); n];
        for i in 0..n {
            let (mut cur, mut s) = (i, (0, 0));
            while let Some((p, d)) = parent[cur] {
                s = (s.0 + d.0, s.1 + d.1);
                cur = p;
            }
            master[i] = cur;
            shift[i] = s;
        }
        let mut reduced = vec![None; n];
        let mut count = 0;
        for i in 0..n {
            if master[i] == i {
                reduced[i] = Some(count);
                count += 1;
            }
        }
        Self { master, shift, reduced, n_reduced_nodes: count }
    }

    fn n_dofs(&self) -> usize {
        2 * self.n_reduced_nodes
    }

    /// Reduced dof and Bloch phase for a full dof.
    fn map_dof(&self, dof: usize, period: f64, kx: f64, ky: f64) -> (usize, c64) {
        let node = dof / 2;
        let m = self.master[node];
        let r = self.reduced[m].expect("master nodes are independent");
        let (sx, sy) = self.shift[node];
        let arg = (kx * sx as f64 + ky * sy as f64) * period;
        (2 * r + dof % 2, c64::new(arg.cos(), arg.sin()))
    }
}

struct ReducedSystem {
    n: usize,
    k_trip: Vec<(usize, usize, c64)>,
    m_trip: Vec<(usize, usize, c64)>,
}

fn reduce(mesh: &Mesh, ops: &Operators, map: &BlochMap, kx: f64, ky: f64) -> ReducedSystem {
    let mut k_trip = Vec::with_capacity(mesh.elements.len() * 64);
    let mut m_trip = Vec::with_capacity(mesh.elements.len() * 64);
    for (e, el) in mesh.elements.iter().enumerate() {
        let maps: [(usize, c64); 8] =
            std::array::from_fn(|p| map.map_dof(2 * el[p / 2] + p % 2, mesh.period, kx, ky));
        let ke = &ops.elements.stiffness[e];
        let me = &ops.elements.mass[e];
        for p in 0..8 {
            let (ip, fp) = maps[p];
            for q in 0..8 {
                let (iq, fq) = maps[q];
                let w = fp.conj() * fq;
                k_trip.push((ip, iq, w * ke[p][q]));
                m_trip.push((ip, iq, w * me[p][q]));
            }
        }
    }
    ReducedSystem { n: map.n_dofs(), k_trip, m_trip }
}

fn dense_from(n: usize, trip: &[(usize, usize, c64)]) -> Mat<c64> {
    let mut m = Mat::<c64>::zeros(n, n);
    for &(r, c, v) in trip {
        m[(r, c)] += v;
    }
    m
}

fn to_eigen_frequencies(mut lambdas: Vec<f64>, n_bands: usize, k_index: usize) -> Result<Vec<f64>> {
    lambdas.sort_by(f64::total_cmp);
    let scale = lambdas.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = -ZERO_TOLERANCE * scale;
    lambdas.truncate(n_bands);
    if let Some(&bad) = lambdas.iter().find(|&&l| l < floor) {
        return Err(Error::EigenNonConvergence { k_index, residual: bad.abs() });
    }
    Ok(lambdas.into_iter().map(|l| l.max(0.0).sqrt() / TWO_PI).collect())
}

fn solve_dense(sys: &ReducedSystem, n_bands: usize, k_index: usize) -> Result<Vec<f64>> {
    let n = sys.n;
    let kmat = dense_from(n, &sys.k_trip);
    let mmat = dense_from(n, &sys.m_trip);
    let llt = mmat
        .llt(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("mass matrix not positive definite: {e:?}")))?;
    let l = llt.L();
    // C = L^-1 K L^-H
    let mut y = kmat;
    solve_lower_triangular_in_place(l, y.as_mut(), Par::Seq);
    let mut z = y.adjoint().to_owned();
    solve_lower_triangular_in_place(l, z.as_mut(), Par::Seq);
    let c = z.adjoint().to_owned();
    let evals = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("eigendecomposition failed: {e:?}")))?;
    let mut evals = evals;
    evals.sort_by(f64::total_cmp);
    to_eigen_frequencies(evals, n_bands, k_index)
}

/// Compressed sparse row matrix over `c64`.
struct SparseComplex {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<c64>,
}

impl SparseComplex {
    fn from_triplets(n: usize, trip: &[(usize, usize, c64)]) -> Self {
        let mut t = trip.to_vec();
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<c64> = Vec::new();
        let mut last = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { row_ptr, cols, vals }
    }

    fn apply(&self, x: &[c64], out: &mut [c64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = c64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }
}

fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Block Krylov subspace on `(K - sigma M)^-1 M` with restarted Rayleigh-Ritz
/// against the original pencil. Blocks capture degenerate pairs that a
/// single-vector Lanczos run would miss.
fn solve_shift_invert(sys: &ReducedSystem, n_bands: usize, k_index: usize) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-9;
    const MAX_RESTARTS: usize = 40;
    let n = sys.n;
    let kmat = SparseComplex::from_triplets(n, &sys.k_trip);
    let mmat = SparseComplex::from_triplets(n, &sys.m_trip);

    // sigma below zero keeps K - sigma M positive definite; scale from the diagonal.
    let mut ratio = 0.0;
    for i in 0..n {
        let kd = sys_diag(&kmat, i).re;
        let md = sys_diag(&mmat, i).re;
        if md > 0.0 {
            ratio += kd / md;
        }
    }
    let sigma = -1e-3 * ratio / n as f64;
    let shifted: Vec<Triplet<usize, usize, c64>> = sys
        .k_trip
        .iter()
        .zip(&sys.m_trip)
        .map(|(&(r, c, k), &(_, _, m))| Triplet::new(r, c, k - m * sigma))
        .collect();
    let shifted = sum_duplicates(shifted);
    let a = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &shifted)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let factor = a
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("shifted operator factorisation failed: {e:?}")))?;

    let block = (n_bands + 6).min(n);
    let depth = 6usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + k_index as u64);
    let mut start: Vec<Vec<c64>> = (0..block)
        .map(|_| (0..n).map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect())
        .collect();

    let mut tmp = vec![c64::new(0.0, 0.0); n];
    let mut last_residual = f64::INFINITY;
    for _ in 0..MAX_RESTARTS {
        // M-orthonormal basis of span{X, OX, ..., O^depth X}, O = A^-1 M
        let mut basis: Vec<Vec<c64>> = Vec::new();
        let mut m_basis: Vec<Vec<c64>> = Vec::new();
        let mut current = start.clone();
        for level in 0..=depth {
            let mut next_block = Vec::new();
            for mut v in current.drain(..) {
                for _ in 0..2 {
                    for (b, mb) in basis.iter().zip(&m_basis) {
                        let h = dot(mb, &v);
                        for (vi, bi) in v.iter_mut().zip(b) {
                            *vi -= h * bi;
                        }
                    }
                }
                mmat.apply(&v, &mut tmp);
                let nrm = dot(&v, &tmp).re;
                if !(nrm > 1e-24 * norm(&v).powi(2).max(1e-300)) {
                    continue;
                }
                let s = 1.0 / nrm.sqrt();
                v.iter_mut().for_each(|x| *x *= s);
                let mv: Vec<c64> = tmp.iter().map(|x| x * s).collect();
                if level < depth {
                    let mut rhs = Mat::<c64>::from_fn(n, 1, |i, _| mv[i]);
                    factor.solve_in_place(rhs.as_mut());
                    next_block.push((0..n).map(|i| rhs[(i, 0)]).collect());
                }
                basis.push(v);
                m_basis.push(mv);
            }
            current = next_block;
            if basis.len() >= n {
                break;
            }
        }

        let dim = basis.len();
        let kv: Vec<Vec<c64>> = basis
            .iter()
            .map(|v| {
                let mut out = vec![c64::new(0.0, 0.0); n];
                kmat.apply(v, &mut out);
                out
            })
            .collect();
        let proj = Mat::<c64>::from_fn(dim, dim, |i, j| dot(&basis[i], &kv[j]));
        let proj = Mat::<c64>::from_fn(dim, dim, |i, j| (proj[(i, j)] + proj[(j, i)].conj()) * 0.5);
        let evd = proj
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("projected eigenproblem failed: {e:?}")))?;
        let u = evd.U();
        let s = evd.S();
        let lambdas: Vec<f64> = (0..dim).map(|i| s[i].re).collect();

        let ritz = |col: usize| -> (Vec<c64>, Vec<c64>, Vec<c64>) {
            let mut x = vec![c64::new(0.0, 0.0); n];
            let mut kx = vec![c64::new(0.0, 0.0); n];
            let mut mx = vec![c64::new(0.0, 0.0); n];
            for j in 0..dim {
                let w = u[(j, col)];
                for i in 0..n {
                    x[i] += w * basis[j][i];
                    kx[i] += w * kv[j][i];
                    mx[i] += w * m_basis[j][i];
                }
            }
            (x, kx, mx)
        };

        let wanted = n_bands.min(dim);
        // zero modes at Gamma have no relative accuracy of their own; judge
        // residuals on the scale of the largest wanted eigenvalue
        let lam_ref = lambdas[..wanted].iter().fold(sigma.abs(), |m, l| m.max(l.abs()));
        let mut worst = 0.0f64;
        let mut next_start = Vec::with_capacity(block);
        for col in 0..block.min(dim) {
            let (x, kx, mx) = ritz(col);
            if col < wanted {
                let lam = lambdas[col];
                let r: Vec<c64> = kx.iter().zip(&mx).map(|(a, b)| a - b * lam).collect();
                let denom = lam_ref * norm(&mx);
                worst = worst.max(if denom > 0.0 { norm(&r) / denom } else { 0.0 });
            }
            next_start.push(x);
        }
        last_residual = worst;
        if worst < TOL {
            return to_eigen_frequencies(lambdas[..wanted].to_vec(), n_bands, k_index);
        }
        start = next_start;
    }
    Err(Error::EigenNonConvergence { k_index, residual: last_residual })
}

fn sys_diag(m: &SparseComplex, i: usize) -> c64 {
    let range = m.row_ptr[i]..m.row_ptr[i + 1];
    m.cols[range.clone()]
        .binary_search(&i)
        .map(|k| m.vals[range.start + k])
        .unwrap_or(c64::new(0.0, 0.0))
}

fn sum_duplicates(mut t: Vec<Triplet<usize, usize, c64>>) -> Vec<Triplet<usize, usize, c64>> {
    t.sort_by_key(|e| (e.col, e.row));
    let mut out: Vec<Triplet<usize, usize, c64>> = Vec::with_capacity(t.len() / 4);
    for e in t {
        match out.last_mut() {
            Some(last) if last.row == e.row && last.col == e.col => last.val += e.val,
            _ => out.push(e),
        }
    }
    out
}

/// Lowest `n_bands` frequencies at every k on the path. k-points are solved
/// independently (in parallel) and returned in path order.
pub fn solve_bands(problem: &BlochProblem) -> Result<BandStructure> {
    problem.validate()?;
    let cell = &problem.cell;
    let mesh = build_unit_cell_mesh(cell, problem.mesh_resolution)?;
    let ops = assemble_plane_stress(&mesh, &cell.material, cell.thickness)?;
    let map = BlochMap::new(&mesh);
    let dense = match problem.solver {
        EigenSolver::Auto => problem.mesh_resolution <= DENSE_RESOLUTION_LIMIT,
        EigenSolver::Dense => true,
        EigenSolver::ShiftInvert => false,
    };
    let n_bands = problem.n_bands.min(map.n_dofs());
    let frequencies = problem
        .k_path
        .par_iter()
        .enumerate()
        .map(|(i, k)| {
            let sys = reduce(&mesh, &ops, &map, k.kx, k.ky);
            if dense {
                solve_dense(&sys, n_bands, i)
            } else {
                solve_shift_invert(&sys, n_bands, i)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BandStructure { k_samples: problem.k_path.clone(), frequencies })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub low: f64,
    pub high: f64,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, f: f64) -> bool {
        f > self.low && f < self.high
    }
}

/// Widest frequency interval inside `search` crossed by no band.
///
/// Each band covers `[min_k f, max_k f]`. The top computed band is taken to
/// cover everything above its minimum, since higher bands are unknown.
pub fn find_gap(bands: &BandStructure, search: (f64, f64)) -> Option<Gap> {
    let nb = bands.n_bands();
    if nb == 0 {
        return None;
    }
    let mut covered: Vec<(f64, f64)> = (0..nb)
        .map(|j| {
            let (lo, hi) = bands
                .frequencies
                .iter()
                .map(|row| row[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), f| (l.min(f), h.max(f)));
            if j + 1 == nb {
                (lo, f64::INFINITY)
            } else {
                (lo, hi)
            }
        })
        .collect();
    covered.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (lo, hi) = search;
    let mut best: Option<Gap> = None;
    let mut cursor = lo;
    let consider = |from: f64, to: f64, best: &mut Option<Gap>| {
        let (a, b) = (from.max(lo), to.min(hi));
        if b > a && best.is_none_or(|g| b - a > g.width()) {
            *best = Some(Gap { low: a, high: b });
        }
    };
    for (start, end) in covered {
        if start > cursor {
            consider(cursor, start, &mut best);
        }
        cursor = cursor.max(end);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        consider(cursor, hi, &mut best);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unpatterned_mesh_is_full_square() {
        let cell = UnitCell::unpatterned(8e-6, 1.5e-6, Material::diamond());
        let mesh = build_unit_cell_mesh(&cell, 16).unwrap();
        assert_eq!(mesh.elements.len(), 16 * 16);
        assert_eq!(mesh.nodes.len(), 17 * 17);
        assert_eq!(mesh.left_right.len(), 17);
        assert_eq!(mesh.bottom_top.len(), 17);
        assert_relative_eq!(cell.solid_area(), 64e-12, max_relative = 1e-12);
    }

    #[test]
    fn paper_cell_element_count_tracks_solid_fraction() {
        let cell = UnitCell::paper_cell();
        let mesh = build_unit_cell_mesh(&cell, 32).unwrap();
        let fraction = cell.solid_area() / (cell.period * cell.period);
        let expected = fraction * 32.0 * 32.0;
        assert!(
            (mesh.elements.len() as f64 - expected).abs() <= 33.0,
            "{} elements vs {expected}",
            mesh.elements.len()
        );
        // boundary pairs are geometric matches
        for &(l, r) in &mesh.left_right {
            assert!((mesh.nodes[l][1] - mesh.nodes[r][1]).abs() <= 1e-9 * cell.period);
            assert_eq!(mesh.nodes[l][0], 0.0);
        }
        for &(b, t) in &mesh.bottom_top {
            assert!((mesh.nodes[b][0] - mesh.nodes[t][0]).abs() <= 1e-9 * cell.period);
        }
    }

    #[test]
    fn paper_cell_solid_area() {
        // pad 6.75^2 + four half-bridges 1.25 x 0.625
        let cell = UnitCell::paper_cell();
        assert_relative_eq!(cell.solid_area(), (6.75f64.powi(2) + 4.0 * 1.25 * 0.625) * 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn coarse_resolution_rejected() {
        let err = build_unit_cell_mesh(&UnitCell::paper_cell(), 2).unwrap_err();
        assert!(matches!(err, Error::UnresolvedBridge { .. }));
    }

    #[test]
    fn rigid_translation_has_zero_energy() {
        let cell = UnitCell::paper_cell();
        let mesh = build_unit_cell_mesh(&cell, 28).unwrap();
        let ops = assemble_plane_stress(&mesh, &cell.material, cell.thickness).unwrap();
        let n = mesh.n_dofs();
        let ux: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let uy: Vec<f64> = (0..n).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let diag_scale: f64 = (0..n).map(|i| ops.stiffness.get(i, i)).sum();
        for u in [&ux, &uy] {
            assert!(ops.stiffness.quadratic_form(u).abs() <= 1e-8 * diag_scale);
        }
        // total mass along x equals rho d A
        let m = ops.mass.quadratic_form(&ux);
        assert_relative_eq!(m, cell.material.mass_density * cell.thickness * cell.solid_area(), max_relative = 1e-12);
    }

    #[test]
    fn operators_are_symmetric_and_scale_with_modulus() {
        let cell = UnitCell::paper_cell();
        let mesh = build_unit_cell_mesh(&cell, 28).unwrap();
        let ops = assemble_plane_stress(&mesh, &cell.material, cell.thickness).unwrap();
        let stiff = Material { youngs_modulus: 3.0 * cell.material.youngs_modulus, ..cell.material };
        let ops3 = assemble_plane_stress(&mesh, &stiff, cell.thickness).unwrap();
        for r in 0..ops.stiffness.n {
            for k in ops.stiffness.row_ptr[r]..ops.stiffness.row_ptr[r + 1] {
                let c = ops.stiffness.cols[k];
                let v = ops.stiffness.vals[k];
                assert!((v - ops.stiffness.get(c, r)).abs() <= 1e-12 * ops.stiffness.get(r, r).abs());
                assert!((ops.mass.get(r, c) - ops.mass.get(c, r)).abs() <= 1e-30);
                assert!((ops3.stiffness.vals[k] - 3.0 * v).abs() <= 1e-12 * ops.stiffness.get(r, r).abs());
            }
        }
    }

    #[test]
    fn inverted_element_is_reported() {
        let coords = [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]; // clockwise
        let err = element_matrices(&coords, &Material::diamond(), 1.0, 7).unwrap_err();
        assert!(matches!(err, Error::SingularElement { element: 7, .. }));
    }

    #[test]
    fn path_has_closing_gamma() {
        let p = high_symmetry_path(8e-6, 16);
        assert_eq!(p.len(), 49);
        assert_eq!((p[0].kx, p[0].ky), (0.0, 0.0));
        assert_relative_eq!(p[16].kx, PI / 8e-6);
        assert_relative_eq!(p[32].ky, PI / 8e-6);
        assert_eq!((p[48].kx, p[48].ky), (0.0, 0.0));
    }

    fn toy_bands(rows: Vec<Vec<f64>>) -> BandStructure {
        let k = KPoint { segment: 0, fraction: 0.0, kx: 0.0, ky: 0.0 };
        BandStructure { k_samples: vec![k; rows.len()], frequencies: rows }
    }

    #[test]
    fn gap_between_bands() {
        let b = toy_bands(vec![vec![0.0, 1.0, 3.0], vec![0.5, 1.5, 3.2]]);
        let g = find_gap(&b, (0.0, 10.0)).unwrap();
        assert_eq!((g.low, g.high), (1.5, 3.0));
    }

    #[test]
    fn overlapping_bands_have_no_gap() {
        let b = toy_bands(vec![vec![0.0, 1.0, 2.0], vec![1.2, 2.1, 3.0]]);
        assert!(find_gap(&b, (0.0, 2.5)).is_none());
    }

    #[test]
    fn gap_shifts_with_bands() {
        let rows = vec![vec![0.1, 1.0, 3.0], vec![0.5, 1.5, 3.2]];
        let b = toy_bands(rows.clone());
        let shifted = toy_bands(rows.iter().map(|r| r.iter().map(|f| f + 0.25).collect()).collect());
        let g = find_gap(&b, (0.0, 10.0)).unwrap();
        let gs = find_gap(&shifted, (0.25, 10.25)).unwrap();
        assert_relative_eq!(gs.low, g.low + 0.25);
        assert_relative_eq!(gs.high, g.high + 0.25);
    }

    #[test]
    fn gamma_point_of_unpatterned_cell_has_two_rigid_modes() {
        let cell = UnitCell::unpatterned(8e-6, 1.5e-6, Material::diamond());
        let mut p = BlochProblem::new(cell, 16, 4);
        p.k_path = vec![KPoint { segment: 0, fraction: 0.0, kx: 0.0, ky: 0.0 }];
        let bands = solve_bands(&p).unwrap();
        let f = &bands.frequencies[0];
        assert!(f[0] < 1e-3 * f[2] && f[1] < 1e-3 * f[2], "{f:?}");
        assert!(f[2] > 1e8);
    }

    #[test]
    fn dense_and_shift_invert_agree() {
        let cell = UnitCell::paper_cell();
        let mut p = BlochProblem::new(cell, 28, 8);
        p.k_path = vec![
            KPoint { segment: 0, fraction: 0.0, kx: 0.0, ky: 0.0 },
            KPoint { segment: 0, fraction: 0.5, kx: 0.5 * PI / cell.period, ky: 0.0 },
            KPoint { segment: 1, fraction: 1.0, kx: PI / cell.period, ky: PI / cell.period },
        ];
        p.solver = EigenSolver::Dense;
        let dense = solve_bands(&p).unwrap();
        p.solver = EigenSolver::ShiftInvert;
        let iterative = solve_bands(&p).unwrap();
        for (a, b) in dense.frequencies.iter().zip(&iterative.frequencies) {
            for (x, y) in a.iter().zip(b) {
                // zero modes at Gamma compare on the band scale
                assert!((x - y).abs() <= 1e-6 * a[a.len() - 1], "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn time_reversal_symmetry() {
        let cell = UnitCell::paper_cell();
        let mut p = BlochProblem::new(cell, 28, 6);
        let k = 0.3 * PI / cell.period;
        p.k_path = vec![
            KPoint { segment: 0, fraction: 0.3, kx: k, ky: 0.5 * k },
            KPoint { segment: 0, fraction: 0.3, kx: -k, ky: -0.5 * k },
        ];
        let bands = solve_bands(&p).unwrap();
        for (a, b) in bands.frequencies[0].iter().zip(&bands.frequencies[1]) {
            assert_relative_eq!(*a, *b, max_relative = 1e-8);
        }
    }
}
