//! Discrete constants behind the stability of the scheme: the inverse trace
//! constant, the Korn inequality with normal traces, the trace constant in
//! the mesh-dependent norm and the inf-sup constant. Also the automatic
//! penalty rule built on them.

use crate::error::{Error, Result};
use crate::fespace::{TaylorHoodSpace, Vec2};
use crate::linalg::{generalized_symmetric_eigen, LuSolver, SparseMatrix, SparsePattern};
use crate::mesh::{Diagonal, FacetTag, Mesh};
use crate::sliplaw::SlipLaw;
use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Safety factor applied to the penalty lower bounds.
pub const ALPHA_SAFETY: f64 = 1.1;
/// Boundary facets adjacent to one simplex, bounded by the dimension.
pub const FACETS_PER_CELL: f64 = 2.0;
/// Largest structured resolution used for dense trace/Korn eigenproblems.
pub const PROXY_MAX_N: usize = 12;

#[derive(Clone, Debug, Serialize)]
pub struct ConstantsReport {
    pub c_tr: f64,
    pub c_trk: f64,
    pub korn_min_eig: f64,
    pub infsup: Option<f64>,
    pub lambda: f64,
    pub c_lambda: f64,
    pub alpha_auto: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct KornResult {
    pub min_eig: f64,
    /// `M`-normalised eigenvector of the smallest eigenvalue, as velocity
    /// coefficients.
    pub witness: Vec<f64>,
}

fn scalar_cell_mass(space: &TaylorHoodSpace, cell: usize) -> Mat<f64> {
    let det = space.cell_map(cell).det.abs();
    let tab = &space.cell_rule;
    Mat::from_fn(6, 6, |i, j| {
        (0..tab.points.len())
            .map(|q| tab.weights[q] * det * tab.p2[q][i] * tab.p2[q][j])
            .sum()
    })
}

fn scalar_facet_mass(space: &TaylorHoodSpace, local_edge: usize, h: f64) -> Mat<f64> {
    let tab = &space.facet_rules[local_edge];
    Mat::from_fn(6, 6, |i, j| {
        (0..tab.points.len())
            .map(|q| tab.weights[q] * h * tab.p2[q][i] * tab.p2[q][j])
            .sum()
    })
}

/// Smallest `c` with `h_F^(1/2) ||v||_F <= c ||v||_K` over scalar P2
/// functions and all boundary facets.
pub fn inverse_trace_constant(space: &TaylorHoodSpace) -> Result<f64> {
    let mesh = &space.mesh;
    let worst = mesh
        .facets
        .par_iter()
        .map(|f| -> Result<f64> {
            let det = space.cell_map(f.cell).det;
            if !(det > 0.0) {
                return Err(Error::DegenerateCell {
                    cell: f.cell,
                    area: 0.5 * det,
                });
            }
            let mk = scalar_cell_mass(space, f.cell);
            let mut mf = scalar_facet_mass(space, f.local_edge, f.h);
            mf *= faer::Scale(f.h);
            let (vals, _) = generalized_symmetric_eigen(&mf, &mk)?;
            Ok(*vals.last().unwrap())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok(worst.sqrt())
}

/// Dense assembly over the full (unconstrained) velocity space from local
/// 12 x 12 cell and slip-facet kernels.
fn dense_velocity_matrix<C, F>(space: &TaylorHoodSpace, slip: &[usize], cell_kernel: C, facet_kernel: F) -> Mat<f64>
where
    C: Fn(usize, usize, usize, usize, usize) -> f64,
    F: Fn(usize, usize, usize, usize, usize) -> f64,
{
    let n_u = space.n_velocity();
    let mut m = Mat::zeros(n_u, n_u);
    let idx = |nodes: &[usize; 6], l: usize| 2 * nodes[l / 2] + l % 2;
    for cell in 0..space.mesh.num_cells() {
        let nodes = space.cell_nodes[cell];
        for a in 0..12 {
            for b in 0..12 {
                m[(idx(&nodes, a), idx(&nodes, b))] += cell_kernel(cell, a / 2, a % 2, b / 2, b % 2);
            }
        }
    }
    for &fi in slip {
        let f = &space.mesh.facets[fi];
        let nodes = space.cell_nodes[f.cell];
        for a in 0..12 {
            for b in 0..12 {
                m[(idx(&nodes, a), idx(&nodes, b))] += facet_kernel(fi, a / 2, a % 2, b / 2, b % 2);
            }
        }
    }
    m
}

struct Kernels<'a> {
    space: &'a TaylorHoodSpace,
}

impl Kernels<'_> {
    /// `int_K v_i w_j`, `int_K grad v_i : grad w_j` and
    /// `int_K Dv_i : Dw_j` for `v_i = phi_i e_c`, `w_j = phi_j e_e`.
    fn cell(&self, cell: usize, i: usize, c: usize, j: usize, e: usize) -> (f64, f64, f64) {
        let map = self.space.cell_map(cell);
        let det = map.det.abs();
        let tab = &self.space.cell_rule;
        let dce = if c == e { 1.0 } else { 0.0 };
        let (mut mass, mut lap, mut sym) = (0.0, 0.0, 0.0);
        for q in 0..tab.points.len() {
            let w = tab.weights[q] * det;
            let gi = map.grad(tab.p2_grad[q][i]);
            let gj = map.grad(tab.p2_grad[q][j]);
            let gg = gi[0] * gj[0] + gi[1] * gj[1];
            mass += w * dce * tab.p2[q][i] * tab.p2[q][j];
            lap += w * dce * gg;
            sym += w * 0.5 * (dce * gg + gj[c] * gi[e]);
        }
        (mass, lap, sym)
    }

    /// `int_F (v_i . n)(w_j . n)` and `int_F v_i . w_j`.
    fn facet(&self, fi: usize, i: usize, c: usize, j: usize, e: usize) -> (f64, f64) {
        let f = &self.space.mesh.facets[fi];
        let tab = &self.space.facet_rules[f.local_edge];
        let dce = if c == e { 1.0 } else { 0.0 };
        let (mut nn, mut full) = (0.0, 0.0);
        for q in 0..tab.points.len() {
            let pp = tab.weights[q] * f.h * tab.p2[q][i] * tab.p2[q][j];
            nn += pp * f.normal[c] * f.normal[e];
            full += pp * dce;
        }
        (nn, full)
    }
}

/// Smallest eigenvalue of `||Du||^2 + ||u.n||^2_slip` against the full `H^1`
/// norm over the unconstrained velocity space; slip facets are those tagged
/// [`FacetTag::Slip`].
pub fn korn_normal_trace_min_eig(space: &TaylorHoodSpace) -> Result<KornResult> {
    let slip: Vec<usize> = space.mesh.facets_with_tag(FacetTag::Slip).map(|(i, _)| i).collect();
    let k = Kernels { space };
    let a = dense_velocity_matrix(
        space,
        &slip,
        |cell, i, c, j, e| k.cell(cell, i, c, j, e).2,
        |fi, i, c, j, e| k.facet(fi, i, c, j, e).0,
    );
    let m = dense_velocity_matrix(
        space,
        &[],
        |cell, i, c, j, e| {
            let (mass, lap, _) = k.cell(cell, i, c, j, e);
            mass + lap
        },
        |_, _, _, _, _| 0.0,
    );
    let (vals, vecs) = generalized_symmetric_eigen(&a, &m)?;
    let witness = (0..vecs.nrows()).map(|r| vecs[(r, 0)]).collect();
    Ok(KornResult {
        min_eig: vals[0],
        witness,
    })
}

/// Largest `||v||^2_{L2(slip)} / (||Dv||^2 + ||h^-1/2 v.n||^2_slip)` over
/// velocities vanishing on Dirichlet facets, as a square root.
pub fn trace_korn_constant(space: &TaylorHoodSpace) -> Result<f64> {
    let slip: Vec<usize> = space.mesh.facets_with_tag(FacetTag::Slip).map(|(i, _)| i).collect();
    if slip.is_empty() {
        return Ok(0.0);
    }
    let k = Kernels { space };
    let trace = dense_velocity_matrix(
        space,
        &slip,
        |_, _, _, _, _| 0.0,
        |fi, i, c, j, e| k.facet(fi, i, c, j, e).1,
    );
    let norm = dense_velocity_matrix(
        space,
        &slip,
        |cell, i, c, j, e| k.cell(cell, i, c, j, e).2,
        |fi, i, c, j, e| k.facet(fi, i, c, j, e).0 / space.mesh.facets[fi].h,
    );
    let free: Vec<usize> = (0..space.n_velocity()).filter(|&d| !space.is_dirichlet(d)).collect();
    let sub = |m: &Mat<f64>| Mat::from_fn(free.len(), free.len(), |i, j| m[(free[i], free[j])]);
    let (vals, _) = generalized_symmetric_eigen(&sub(&trace), &sub(&norm))?;
    Ok(vals.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Rebuilds a bounding-box structured proxy of at most `PROXY_MAX_N` cells
/// per side, with facet tags transferred from the nearest original facet.
fn proxy_space(space: &TaylorHoodSpace) -> Result<TaylorHoodSpace> {
    let mesh = &space.mesh;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &mesh.vertices {
        for d in 0..2 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    let mids: Vec<(Vec2, Vec2, Option<FacetTag>)> = mesh
        .facets
        .iter()
        .map(|f| (mesh.vertices[f.vertices[0]], mesh.vertices[f.vertices[1]], f.tag))
        .collect();
    let n = PROXY_MAX_N;
    let proxy = Mesh::rectangle(n, n, hi[0] - lo[0], hi[1] - lo[1], Diagonal::Right);
    let shifted = Mesh::from_cells(
        proxy.vertices.iter().map(|v| [v[0] + lo[0], v[1] + lo[1]]).collect(),
        proxy.cells.clone(),
    )?;
    let tagged = shifted.tag_boundary(|m| {
        let dist = |(a, b, _): &(Vec2, Vec2, Option<FacetTag>)| {
            let ab = [b[0] - a[0], b[1] - a[1]];
            let s = (((m[0] - a[0]) * ab[0] + (m[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
            ((m[0] - a[0] - s * ab[0]).powi(2) + (m[1] - a[1] - s * ab[1]).powi(2)).sqrt()
        };
        mids.iter()
            .min_by(|x, y| dist(x).total_cmp(&dist(y)))
            .and_then(|x| x.2)
    })?;
    Ok(TaylorHoodSpace::new(tagged))
}

/// Trace constant on the mesh itself when small, otherwise on a proxy.
pub fn trace_korn_constant_proxy(space: &TaylorHoodSpace) -> Result<f64> {
    if space.mesh.num_cells() <= 2 * PROXY_MAX_N * PROXY_MAX_N {
        trace_korn_constant(space)
    } else {
        trace_korn_constant(&proxy_space(space)?)
    }
}

/// Discrete inf-sup constant of the pair with homogeneous Dirichlet velocity
/// on the whole boundary, computed from the pressure Schur complement.
pub fn infsup_constant(space: &TaylorHoodSpace) -> Result<f64> {
    let n_u = space.n_velocity();
    let n_p = space.n_pressure();
    let mut fixed = vec![false; n_u];
    for f in &space.mesh.facets {
        let nodes = space.cell_nodes[f.cell];
        let i = f.local_edge;
        for l in [(i + 1) % 3, (i + 2) % 3, 3 + i] {
            fixed[2 * nodes[l]] = true;
            fixed[2 * nodes[l] + 1] = true;
        }
    }
    if fixed.iter().all(|&f| !f) {
        return Err(Error::Eigen("velocity space has no Dirichlet constraint".into()));
    }

    // vector Laplacian with identity rows on constrained DOFs
    let mut columns: Vec<Vec<usize>> = (0..n_u).map(|j| vec![j]).collect();
    for nodes in &space.cell_nodes {
        let g: Vec<usize> = nodes.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect();
        for &c in &g {
            columns[c].extend_from_slice(&g);
        }
    }
    let pattern = Arc::new(SparsePattern::from_columns(columns));
    let mut k = SparseMatrix::zeros(pattern.clone());
    // divergence B (n_p x n_u), kept dense by columns of the Schur product
    let mut bt = Mat::<f64>::zeros(n_u, n_p);
    let mut mp = Mat::<f64>::zeros(n_p, n_p);
    let tab = &space.cell_rule;
    for cell in 0..space.mesh.num_cells() {
        let map = space.cell_map(cell);
        let det = map.det.abs();
        let nodes = space.cell_nodes[cell];
        let verts = space.mesh.cells[cell];
        for q in 0..tab.points.len() {
            let w = tab.weights[q] * det;
            let g: [Vec2; 6] = std::array::from_fn(|i| map.grad(tab.p2_grad[q][i]));
            let psi = tab.p1[q];
            for i in 0..6 {
                for j in 0..6 {
                    let gg = w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    for c in 0..2 {
                        let (r, s) = (2 * nodes[i] + c, 2 * nodes[j] + c);
                        if !fixed[r] && !fixed[s] {
                            k.values[pattern.position(r, s).unwrap()] += gg;
                        }
                    }
                }
                for c in 0..2 {
                    let r = 2 * nodes[i] + c;
                    if !fixed[r] {
                        for kk in 0..3 {
                            bt[(r, verts[kk])] += w * psi[kk] * g[i][c];
                        }
                    }
                }
            }
            for a in 0..3 {
                for b in 0..3 {
                    mp[(verts[a], verts[b])] += w * psi[a] * psi[b];
                }
            }
        }
    }
    for (d, &f) in fixed.iter().enumerate() {
        if f {
            k.values[pattern.position(d, d).unwrap()] = 1.0;
        }
    }
    let lu = LuSolver::new(pattern)?.factor(&k)?;
    let mut x = bt.clone();
    lu.solve_many(&mut x)?;
    let mut s = bt.transpose() * &x;
    // deflate constants: S + c (M 1)(M 1)^T / (1^T M 1)
    let m1: Vec<f64> = (0..n_p).map(|i| (0..n_p).map(|j| mp[(i, j)]).sum()).collect();
    let total: f64 = m1.iter().sum();
    let shift = 2.0;
    for i in 0..n_p {
        for j in 0..n_p {
            s[(i, j)] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    let s = Mat::from_fn(n_p, n_p, |i, j| s[(i, j)] + shift * m1[i] * m1[j] / total);
    let (vals, _) = generalized_symmetric_eigen(&s, &mp)?;
    Ok(vals[0].max(0.0).sqrt())
}

/// Penalty from the stability bounds. `c_trk` is only used for `lambda > 0`.
pub fn resolve_alpha(nu: f64, lambda: f64, c_tr: f64, c_trk: f64) -> Result<f64> {
    let d = FACETS_PER_CELL;
    if lambda <= 0.0 {
        return Ok(ALPHA_SAFETY * 2.0 * d * c_tr * c_tr);
    }
    let c_lambda = 2.0 * nu / (c_trk * c_trk);
    if lambda >= c_lambda {
        return Err(Error::Stability { lambda, c_lambda });
    }
    Ok(ALPHA_SAFETY * 2.0 * (c_lambda * d * c_tr * c_tr + lambda) / (c_lambda - lambda))
}

/// Automatic penalty for a space, viscosity and law.
pub fn auto_alpha(space: &TaylorHoodSpace, nu: f64, law: &SlipLaw) -> Result<f64> {
    let c_tr = inverse_trace_constant(space)?;
    let lambda = law.lambda();
    let c_trk = if lambda > 0.0 {
        trace_korn_constant_proxy(space)?
    } else {
        0.0
    };
    resolve_alpha(nu, lambda, c_tr, c_trk)
}

/// All constants for a space; the Korn and inf-sup eigenproblems run on the
/// proxy resolution.
pub fn constants_report(space: &TaylorHoodSpace, nu: f64, law: &SlipLaw, with_infsup: bool) -> Result<ConstantsReport> {
    let c_tr = inverse_trace_constant(space)?;
    let small = space.mesh.num_cells() <= 2 * PROXY_MAX_N * PROXY_MAX_N;
    let proxy;
    let coarse = if small {
        space
    } else {
        proxy = proxy_space(space)?;
        &proxy
    };
    let c_trk = trace_korn_constant(coarse)?;
    let korn = korn_normal_trace_min_eig(coarse)?;
    let infsup = if with_infsup {
        Some(infsup_constant(coarse)?)
    } else {
        None
    };
    let c_lambda = if c_trk > 0.0 {
        2.0 * nu / (c_trk * c_trk)
    } else {
        f64::INFINITY
    };
    Ok(ConstantsReport {
        c_tr,
        c_trk,
        korn_min_eig: korn.min_eig,
        infsup,
        lambda: law.lambda(),
        c_lambda,
        alpha_auto: resolve_alpha(nu, law.lambda(), c_tr, c_trk).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{all_slip, top_wall_slip};

    fn space_with(mesh: Mesh, tags: impl Fn([f64; 2]) -> Option<FacetTag>) -> TaylorHoodSpace {
        TaylorHoodSpace::new(mesh.tag_boundary(tags).unwrap())
    }

    #[test]
    fn inverse_trace_on_reference_triangle_matches_sharp_bound() {
        // sharp P2 bound on a face: (p+1)(p+2)/2 |F|/|K|; the hypotenuse
        // gives 6 * sqrt2 * sqrt2 / (1/2) = 24
        let mesh = Mesh::from_cells(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let c = inverse_trace_constant(&space_with(mesh, all_slip)).unwrap();
        assert!((c * c - 24.0).abs() < 1e-8, "{}", c * c);

        let scaled = Mesh::from_cells(vec![[0.0, 0.0], [7.0, 0.0], [0.0, 7.0]], vec![[0, 1, 2]]).unwrap();
        let cs = inverse_trace_constant(&space_with(scaled, all_slip)).unwrap();
        assert!((c - cs).abs() < 1e-10);
    }

    #[test]
    fn inverse_trace_is_mesh_size_independent() {
        let c8 = inverse_trace_constant(&space_with(Mesh::unit_square(8, Diagonal::Right), top_wall_slip)).unwrap();
        let c16 = inverse_trace_constant(&space_with(Mesh::unit_square(16, Diagonal::Right), top_wall_slip)).unwrap();
        assert!((c8 - c16).abs() < 1e-10);
        let cx = inverse_trace_constant(&space_with(Mesh::unit_square(8, Diagonal::Crossed), top_wall_slip)).unwrap();
        assert!(cx.is_finite() && (cx - c8).abs() > 1e-3);
        // boundary legs of right triangles: 6 * h * h / (h^2 / 2) = 12
        assert!((c8 * c8 - 12.0).abs() < 1e-8);
    }

    #[test]
    fn korn_dichotomy() {
        let full = korn_normal_trace_min_eig(&space_with(Mesh::unit_square(4, Diagonal::Right), all_slip)).unwrap();
        assert!(full.min_eig > 1e-3);
        let top_left = |m: [f64; 2]| {
            Some(if m[1] > 1.0 - 1e-12 || m[0] < 1e-12 {
                FacetTag::Slip
            } else {
                FacetTag::Dirichlet
            })
        };
        let two = korn_normal_trace_min_eig(&space_with(Mesh::unit_square(4, Diagonal::Right), top_left)).unwrap();
        assert!(two.min_eig > 1e-3);

        let sp = space_with(Mesh::unit_square(4, Diagonal::Right), top_wall_slip);
        let one = korn_normal_trace_min_eig(&sp).unwrap();
        assert!(one.min_eig.abs() <= 1e-10, "{}", one.min_eig);
        let w = &one.witness;
        let ux = w[0];
        assert!(ux.abs() > 0.1);
        for k in 0..sp.num_nodes() {
            assert!((w[2 * k] - ux).abs() < 1e-8 && w[2 * k + 1].abs() < 1e-8);
        }
    }

    #[test]
    fn korn_invariant_under_rotation() {
        let sq = korn_normal_trace_min_eig(&space_with(Mesh::unit_square(3, Diagonal::Right), all_slip)).unwrap();
        let base = Mesh::unit_square(3, Diagonal::Right);
        let rot = Mesh::from_cells(base.vertices.iter().map(|v| [-v[1], v[0]]).collect(), base.cells.clone()).unwrap();
        let r = korn_normal_trace_min_eig(&space_with(rot, all_slip)).unwrap();
        assert!((sq.min_eig - r.min_eig).abs() < 1e-10);
    }

    #[test]
    fn infsup_positive_and_robust() {
        let c: Vec<f64> = [4, 8]
            .iter()
            .map(|&n| infsup_constant(&space_with(Mesh::unit_square(n, Diagonal::Right), top_wall_slip)).unwrap())
            .collect();
        assert!(c.iter().all(|&v| v > 0.05));
        assert!((c[0] - c[1]).abs() < 0.2 * c[0].max(c[1]));
        // at most one (the continuous) bound: |div v| <= sqrt2 |grad v|
        assert!(c.iter().all(|&v| v <= 2f64.sqrt()));
    }

    #[test]
    fn resolve_alpha_examples() {
        let c_tr = 12f64.sqrt();
        assert!((resolve_alpha(1.0, 0.0, c_tr, 0.0).unwrap() - 1.1 * 2.0 * 2.0 * 12.0).abs() < 1e-12);
        let c_trk = 0.5;
        let c_lambda = 2.0 / (c_trk * c_trk);
        let near = resolve_alpha(1.0, 0.999 * c_lambda, c_tr, c_trk).unwrap();
        assert!(near.is_finite() && near > 1e4);
        match resolve_alpha(1.0, c_lambda, c_tr, c_trk) {
            Err(Error::Stability { lambda, c_lambda: cl }) => {
                assert_eq!(lambda, c_lambda);
                assert_eq!(cl, c_lambda);
            }
            other => panic!("{other:?}"),
        }
        // monotone in lambda
        let a1 = resolve_alpha(1.0, 0.1, c_tr, c_trk).unwrap();
        let a2 = resolve_alpha(1.0, 1.0, c_tr, c_trk).unwrap();
        assert!(a2 > a1 && a1 > resolve_alpha(1.0, 0.0, c_tr, c_trk).unwrap());
    }

    #[test]
    fn trace_korn_constant_on_proxy_tracks_mesh() {
        let small = space_with(Mesh::unit_square(6, Diagonal::Right), top_wall_slip);
        let direct = trace_korn_constant(&small).unwrap();
        assert!(direct > 0.0 && direct.is_finite());
        let big = space_with(Mesh::unit_square(24, Diagonal::Right), top_wall_slip);
        let proxy = trace_korn_constant_proxy(&big).unwrap();
        let twelve = trace_korn_constant(&space_with(Mesh::unit_square(12, Diagonal::Right), top_wall_slip)).unwrap();
        assert!((proxy - twelve).abs() < 1e-10);
        // no slip facets means no trace term
        let none = space_with(Mesh::unit_square(3, Diagonal::Right), |_| Some(FacetTag::Dirichlet));
        assert_eq!(trace_korn_constant(&none).unwrap(), 0.0);
    }

    #[test]
    fn auto_alpha_for_nonmonotone_law() {
        let sp = space_with(Mesh::unit_square(6, Diagonal::Right), top_wall_slip);
        let law = SlipLaw::leroux_rajagopal(1.0, 0.1, 0.001, -0.75).unwrap();
        let a = auto_alpha(&sp, 1.0, &law).unwrap();
        assert!(a > auto_alpha(&sp, 1.0, &SlipLaw::navier(1.0)).unwrap());
        let report = constants_report(&sp, 1.0, &law, true).unwrap();
        assert_eq!(report.alpha_auto, Some(a));
        assert!(report.infsup.unwrap() > 0.0);
    }
}
