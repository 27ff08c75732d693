//! Taylor-Hood P2/P1 space on a triangulation.
//!
//! Velocity nodes are the mesh vertices followed by the edge midpoints; the
//! two velocity components of node `k` live at DOFs `2k` and `2k + 1`.
//! Pressure DOFs are vertex values.

use crate::mesh::{FacetTag, Mesh};
use crate::quadrature::{IntervalRule, TriangleRule};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// P2 Lagrange basis on the reference triangle. Index `i < 3` is vertex `i`,
/// index `3 + i` the midpoint of the edge opposite vertex `i`.
pub fn p2_values(xi: Vec2) -> [f64; 6] {
    let l = [1.0 - xi[0] - xi[1], xi[0], xi[1]];
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

pub fn p2_gradients(xi: Vec2) -> [Vec2; 6] {
    let l = [1.0 - xi[0] - xi[1], xi[0], xi[1]];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        for d in 0..2 {
            g[i][d] = (4.0 * l[i] - 1.0) * dl[i][d];
        }
    }
    for i in 0..3 {
        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
        for d in 0..2 {
            g[3 + i][d] = 4.0 * (dl[a][d] * l[b] + l[a] * dl[b][d]);
        }
    }
    g
}

pub fn p1_values(xi: Vec2) -> [f64; 3] {
    [1.0 - xi[0] - xi[1], xi[0], xi[1]]
}

pub const P1_GRADIENTS: [Vec2; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// Reference coordinates of the six P2 nodes.
pub const P2_NODES: [Vec2; 6] = [
    [0.0, 0.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [0.5, 0.5],
    [0.0, 0.5],
    [0.5, 0.0],
];

/// Affine map from the reference triangle onto a cell.
#[derive(Clone, Copy, Debug)]
pub struct CellMap {
    pub origin: Vec2,
    pub jac: Mat2,
    /// Inverse transpose of `jac`.
    pub jac_inv_t: Mat2,
    pub det: f64,
}

impl CellMap {
    pub fn new(x0: Vec2, x1: Vec2, x2: Vec2) -> Self {
        let jac = [[x1[0] - x0[0], x2[0] - x0[0]], [x1[1] - x0[1], x2[1] - x0[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let jac_inv_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        Self {
            origin: x0,
            jac,
            jac_inv_t,
            det,
        }
    }

    pub fn to_physical(&self, xi: Vec2) -> Vec2 {
        [
            self.origin[0] + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin[1] + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        ]
    }

    pub fn grad(&self, g: Vec2) -> Vec2 {
        [
            self.jac_inv_t[0][0] * g[0] + self.jac_inv_t[0][1] * g[1],
            self.jac_inv_t[1][0] * g[0] + self.jac_inv_t[1][1] * g[1],
        ]
    }
}

/// Basis values tabulated at the points of a rule.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub p2: Vec<[f64; 6]>,
    pub p2_grad: Vec<[Vec2; 6]>,
    pub p1: Vec<[f64; 3]>,
}

impl Tabulation {
    fn new(points: Vec<Vec2>, weights: Vec<f64>) -> Self {
        Self {
            p2: points.iter().map(|&p| p2_values(p)).collect(),
            p2_grad: points.iter().map(|&p| p2_gradients(p)).collect(),
            p1: points.iter().map(|&p| p1_values(p)).collect(),
            points,
            weights,
        }
    }
}

/// Exact fields used for interpolation and error measurement.
pub trait ExactFields {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2;
    /// `grad[i][j] = d u_i / d x_j`.
    fn velocity_grad(&self, x: Vec2, t: f64) -> Mat2;
    fn pressure(&self, x: Vec2, t: f64) -> f64;
}

/// Velocity, pressure and mean-pressure multiplier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub m: f64,
}

impl SystemState {
    pub fn zeros(space: &TaylorHoodSpace) -> Self {
        Self {
            u: vec![0.0; space.n_velocity()],
            p: vec![0.0; space.n_pressure()],
            m: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct ErrorNorms {
    pub l2_u: f64,
    pub h1_u: f64,
    /// Pressure error modulo constants.
    pub l2_p: f64,
    /// Tangential trace error on slip facets.
    pub l2_tangential: f64,
    /// Normal trace error on slip facets.
    pub l2_normal: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: Vec2,
    pub grad: Mat2,
    pub sym_grad: Mat2,
}

pub struct TaylorHoodSpace {
    pub mesh: Mesh,
    pub node_coords: Vec<Vec2>,
    pub cell_nodes: Vec<[usize; 6]>,
    pub cell_rule: Tabulation,
    /// Facet tabulation per local edge, points ordered from local vertex
    /// `i + 1` to `i + 2`.
    pub facet_rules: [Tabulation; 3],
    dirichlet_dofs: Vec<usize>,
    is_dirichlet: Vec<bool>,
    pressure_integrals: Vec<f64>,
}

impl TaylorHoodSpace {
    pub fn new(mesh: Mesh) -> Self {
        let nv = mesh.num_vertices();
        let mut node_coords = mesh.vertices.clone();
        for e in &mesh.edges {
            let a = mesh.vertices[e[0]];
            let b = mesh.vertices[e[1]];
            node_coords.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
        let cell_nodes: Vec<[usize; 6]> = mesh
            .cells
            .iter()
            .zip(&mesh.cell_edges)
            .map(|(c, e)| [c[0], c[1], c[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();

        let tri = TriangleRule::degree6();
        let cell_rule = Tabulation::new(tri.points, tri.weights);
        let line = IntervalRule::gauss4();
        let facet_rule = |i: usize| {
            let ref_vertices = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
            let a: Vec2 = ref_vertices[(i + 1) % 3];
            let b: Vec2 = ref_vertices[(i + 2) % 3];
            let pts = line
                .points
                .iter()
                .map(|&s| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
                .collect();
            Tabulation::new(pts, line.weights.clone())
        };
        let facet_rules = [facet_rule(0), facet_rule(1), facet_rule(2)];

        let mut is_dirichlet = vec![false; 2 * node_coords.len()];
        for f in mesh.facets.iter().filter(|f| f.tag == Some(FacetTag::Dirichlet)) {
            let i = f.local_edge;
            let nodes = cell_nodes[f.cell];
            for local in [(i + 1) % 3, (i + 2) % 3, 3 + i] {
                is_dirichlet[2 * nodes[local]] = true;
                is_dirichlet[2 * nodes[local] + 1] = true;
            }
        }
        let dirichlet_dofs = (0..is_dirichlet.len()).filter(|&d| is_dirichlet[d]).collect();

        let mut space = Self {
            mesh,
            node_coords,
            cell_nodes,
            cell_rule,
            facet_rules,
            dirichlet_dofs,
            is_dirichlet,
            pressure_integrals: Vec::new(),
        };
        let mut integrals = vec![0.0; nv];
        for k in 0..space.mesh.num_cells() {
            let area = space.cell_map(k).det.abs() / 6.0;
            for &v in &space.mesh.cells[k] {
                integrals[v] += area;
            }
        }
        space.pressure_integrals = integrals;
        space
    }

    pub fn num_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.node_coords.len()
    }

    pub fn n_pressure(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet_dofs
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.is_dirichlet[dof]
    }

    /// `int_Omega psi_k dx` for every pressure basis function.
    pub fn pressure_integrals(&self) -> &[f64] {
        &self.pressure_integrals
    }

    pub fn cell_map(&self, cell: usize) -> CellMap {
        let c = self.mesh.cells[cell];
        CellMap::new(
            self.mesh.vertices[c[0]],
            self.mesh.vertices[c[1]],
            self.mesh.vertices[c[2]],
        )
    }

    /// Coordinates of the node carrying velocity DOF `dof`.
    pub fn dof_coord(&self, dof: usize) -> Vec2 {
        self.node_coords[dof / 2]
    }

    pub fn local_velocity(&self, field: &[f64], cell: usize) -> [Vec2; 6] {
        let nodes = self.cell_nodes[cell];
        let mut out = [[0.0; 2]; 6];
        for (o, &n) in out.iter_mut().zip(&nodes) {
            *o = [field[2 * n], field[2 * n + 1]];
        }
        out
    }

    /// Value, gradient and symmetric gradient of a velocity field at a
    /// reference point of `cell`.
    pub fn evaluate(&self, field: &[f64], cell: usize, xi: Vec2) -> Evaluation {
        let map = self.cell_map(cell);
        let local = self.local_velocity(field, cell);
        let phi = p2_values(xi);
        let dphi = p2_gradients(xi);
        let mut value = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for i in 0..6 {
            let g = map.grad(dphi[i]);
            for c in 0..2 {
                value[c] += local[i][c] * phi[i];
                for d in 0..2 {
                    grad[c][d] += local[i][c] * g[d];
                }
            }
        }
        Evaluation {
            value,
            grad,
            sym_grad: sym(grad),
        }
    }

    pub fn evaluate_pressure(&self, p: &[f64], cell: usize, xi: Vec2) -> f64 {
        let c = self.mesh.cells[cell];
        let psi = p1_values(xi);
        (0..3).map(|i| p[c[i]] * psi[i]).sum()
    }

    /// Point evaluation of a velocity field at a physical point.
    pub fn evaluate_at(&self, field: &[f64], x: Vec2) -> Option<Vec2> {
        let (cell, xi) = self.mesh.locate(x)?;
        Some(self.evaluate(field, cell, xi).value)
    }

    /// Nodal interpolant of a velocity field.
    pub fn interpolate_velocity<F: Fn(Vec2) -> Vec2>(&self, f: F) -> Vec<f64> {
        let mut out = vec![0.0; self.n_velocity()];
        for (k, &x) in self.node_coords.iter().enumerate() {
            let v = f(x);
            out[2 * k] = v[0];
            out[2 * k + 1] = v[1];
        }
        out
    }

    pub fn interpolate_pressure<F: Fn(Vec2) -> f64>(&self, f: F) -> Vec<f64> {
        self.mesh.vertices.iter().map(|&x| f(x)).collect()
    }

    /// Interpolant of exact fields; the pressure is shifted to zero mean.
    pub fn interpolate_state<E: ExactFields + ?Sized>(&self, exact: &E, t: f64) -> SystemState {
        let u = self.interpolate_velocity(|x| exact.velocity(x, t));
        let mut p = self.interpolate_pressure(|x| exact.pressure(x, t));
        let mean = self.pressure_mean(&p);
        p.iter_mut().for_each(|v| *v -= mean);
        SystemState { u, p, m: 0.0 }
    }

    pub fn domain_area(&self) -> f64 {
        self.pressure_integrals.iter().sum()
    }

    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        let integral: f64 = p.iter().zip(&self.pressure_integrals).map(|(a, b)| a * b).sum();
        integral / self.domain_area()
    }

    /// Normal and tangential parts of a vector relative to a unit normal.
    pub fn trace_split(v: Vec2, normal: Vec2) -> (f64, Vec2) {
        let vn = v[0] * normal[0] + v[1] * normal[1];
        (vn, [v[0] - vn * normal[0], v[1] - vn * normal[1]])
    }

    /// Trace of a velocity field on boundary facet `facet` at the facet
    /// quadrature point `q`, split into normal and tangential parts.
    pub fn facet_trace(&self, field: &[f64], facet: usize, q: usize) -> (f64, Vec2) {
        let f = &self.mesh.facets[facet];
        let tab = &self.facet_rules[f.local_edge];
        let ev = self.evaluate(field, f.cell, tab.points[q]);
        Self::trace_split(ev.value, f.normal)
    }

    /// Quadrature approximations of the error norms of `state` against
    /// exact fields at time `t`.
    pub fn error_norms<E: ExactFields + ?Sized>(
        &self,
        state: &SystemState,
        exact: &E,
        t: f64,
    ) -> ErrorNorms {
        let tab = &self.cell_rule;
        let mut l2_u = 0.0;
        let mut h1_u = 0.0;
        let mut p_diff = 0.0;
        let mut p_diff_sq = 0.0;
        let mut area = 0.0;
        for k in 0..self.mesh.num_cells() {
            let map = self.cell_map(k);
            for (q, &xi) in tab.points.iter().enumerate() {
                let w = tab.weights[q] * map.det.abs();
                let x = map.to_physical(xi);
                let ev = self.evaluate(&state.u, k, xi);
                let ue = exact.velocity(x, t);
                let ge = exact.velocity_grad(x, t);
                for c in 0..2 {
                    l2_u += w * (ev.value[c] - ue[c]).powi(2);
                    for d in 0..2 {
                        h1_u += w * (ev.grad[c][d] - ge[c][d]).powi(2);
                    }
                }
                let dp = self.evaluate_pressure(&state.p, k, xi) - exact.pressure(x, t);
                p_diff += w * dp;
                p_diff_sq += w * dp * dp;
                area += w;
            }
        }
        let l2_p = (p_diff_sq - p_diff * p_diff / area).max(0.0).sqrt();

        let mut l2_tangential = 0.0;
        let mut l2_normal = 0.0;
        for (i, f) in self.mesh.facets_with_tag(FacetTag::Slip) {
            let tab = &self.facet_rules[f.local_edge];
            let map = self.cell_map(f.cell);
            for q in 0..tab.points.len() {
                let w = tab.weights[q] * f.h;
                let x = map.to_physical(tab.points[q]);
                let (un, ut) = self.facet_trace(&state.u, i, q);
                let (en, et) = Self::trace_split(exact.velocity(x, t), f.normal);
                l2_normal += w * (un - en).powi(2);
                l2_tangential += w * ((ut[0] - et[0]).powi(2) + (ut[1] - et[1]).powi(2));
            }
        }

        ErrorNorms {
            l2_u: l2_u.sqrt(),
            h1_u: h1_u.sqrt(),
            l2_p,
            l2_tangential: l2_tangential.sqrt(),
            l2_normal: l2_normal.sqrt(),
        }
    }
}

pub fn sym(g: Mat2) -> Mat2 {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{top_wall_slip, Diagonal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(n: usize) -> TaylorHoodSpace {
        TaylorHoodSpace::new(
            Mesh::unit_square(n, Diagonal::Right)
                .tag_boundary(top_wall_slip)
                .unwrap(),
        )
    }

    struct Poly;
    impl ExactFields for Poly {
        fn velocity(&self, x: Vec2, _t: f64) -> Vec2 {
            [x[0] * x[0], -2.0 * x[0] * (x[1] - 1.0)]
        }
        fn velocity_grad(&self, x: Vec2, _t: f64) -> Mat2 {
            [[2.0 * x[0], 0.0], [-2.0 * (x[1] - 1.0), -2.0 * x[0]]]
        }
        fn pressure(&self, x: Vec2, _t: f64) -> f64 {
            x[0] + x[1] - 1.0
        }
    }

    struct TaylorGreenUnit;
    impl ExactFields for TaylorGreenUnit {
        fn velocity(&self, x: Vec2, _t: f64) -> Vec2 {
            let pi = std::f64::consts::PI;
            [
                (pi * x[0]).sin() * (pi * x[1]).cos(),
                -(pi * x[0]).cos() * (pi * x[1]).sin(),
            ]
        }
        fn velocity_grad(&self, x: Vec2, _t: f64) -> Mat2 {
            let pi = std::f64::consts::PI;
            let (sx, cx) = (pi * x[0]).sin_cos();
            let (sy, cy) = (pi * x[1]).sin_cos();
            [[pi * cx * cy, -pi * sx * sy], [pi * sx * sy, -pi * cx * cy]]
        }
        fn pressure(&self, _x: Vec2, _t: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn lagrange_property_and_partition_of_unity() {
        for (j, &node) in P2_NODES.iter().enumerate() {
            let v = p2_values(node);
            for (i, &vi) in v.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((vi - expected).abs() < 1e-15);
            }
        }
        let rule = TriangleRule::degree6();
        for &p in &rule.points {
            assert!((p2_values(p).iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!((p1_values(p).iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let g = p2_gradients(p);
            for d in 0..2 {
                assert!(g.iter().map(|gi| gi[d]).sum::<f64>().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn p2_gradients_match_finite_differences() {
        let xi = [0.23, 0.41];
        let g = p2_gradients(xi);
        let h = 1e-6;
        for d in 0..2 {
            let mut xp = xi;
            let mut xm = xi;
            xp[d] += h;
            xm[d] -= h;
            let vp = p2_values(xp);
            let vm = p2_values(xm);
            for i in 0..6 {
                assert!(((vp[i] - vm[i]) / (2.0 * h) - g[i][d]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_field_has_identity_symmetric_gradient() {
        let s = space(3);
        let u = s.interpolate_velocity(|x| x);
        for k in 0..s.mesh.num_cells() {
            for &xi in &s.cell_rule.points {
                let ev = s.evaluate(&u, k, xi);
                assert!((ev.sym_grad[0][0] - 1.0).abs() < 1e-12);
                assert!((ev.sym_grad[1][1] - 1.0).abs() < 1e-12);
                assert!(ev.sym_grad[0][1].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rigid_rotation_has_zero_symmetric_gradient() {
        let s = space(3);
        let u = s.interpolate_velocity(|x| [x[1], -x[0]]);
        for k in 0..s.mesh.num_cells() {
            for &xi in &s.cell_rule.points {
                let d = s.evaluate(&u, k, xi).sym_grad;
                assert!(d.iter().flatten().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn quadratic_field_gradient() {
        let s = space(4);
        let u = s.interpolate_velocity(|x| [x[0] * x[0], 0.0]);
        for k in 0..s.mesh.num_cells() {
            let map = s.cell_map(k);
            for &xi in &s.cell_rule.points {
                let x = map.to_physical(xi);
                let d = s.evaluate(&u, k, xi).sym_grad;
                assert!((d[0][0] - 2.0 * x[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_split_examples() {
        let (vn, vt) = TaylorHoodSpace::trace_split([3.0, 4.0], [0.0, 1.0]);
        assert_eq!(vn, 4.0);
        assert_eq!(vt, [3.0, 0.0]);
        let (vn, vt) = TaylorHoodSpace::trace_split([0.0, 0.0], [0.0, 1.0]);
        assert_eq!((vn, vt), (0.0, [0.0, 0.0]));
        let (vn, vt) = TaylorHoodSpace::trace_split([1.0, 1.0], [-1.0, 0.0]);
        assert_eq!(vn, -1.0);
        assert_eq!(vt, [0.0, 1.0]);
    }

    #[test]
    fn interpolation_reproduces_linear_fields_at_random_points() {
        let s = space(5);
        let u = s.interpolate_velocity(|x| x);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = [rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
            let v = s.evaluate_at(&u, x).unwrap();
            assert!((v[0] - x[0]).abs() < 1e-13 && (v[1] - x[1]).abs() < 1e-13);
        }
        let zero = s.interpolate_velocity(|_| [0.0, 0.0]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taylor_green_vanishes_at_centre_node() {
        let s = space(2);
        let u = s.interpolate_velocity(|x| TaylorGreenUnit.velocity(x, 0.0));
        let k = s
            .node_coords
            .iter()
            .position(|x| (x[0] - 0.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14)
            .unwrap();
        assert!(u[2 * k].abs() < 1e-15 && u[2 * k + 1].abs() < 1e-15);
    }

    #[test]
    fn interpolation_is_a_projection() {
        let s = space(3);
        let u = s.interpolate_velocity(|x| [x[0].sin(), x[1].exp()]);
        let again = s.interpolate_velocity(|x| s.evaluate_at(&u, x).unwrap());
        for (a, b) in u.iter().zip(&again) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn error_norms_vanish_for_discrete_exact_pair() {
        let s = space(4);
        let state = s.interpolate_state(&Poly, 0.0);
        let e = s.error_norms(&state, &Poly, 0.0);
        assert!(e.l2_u < 1e-12 && e.h1_u < 1e-12 && e.l2_p < 1e-12);
        assert!(e.l2_tangential < 1e-12 && e.l2_normal < 1e-12);
    }

    #[test]
    fn zero_state_error_is_taylor_green_norm() {
        let s = space(16);
        let e = s.error_norms(&SystemState::zeros(&s), &TaylorGreenUnit, 0.0);
        // ||u||^2 = 1/4 + 1/4
        assert!((e.l2_u - 0.5f64.sqrt()).abs() < 1e-6, "{}", e.l2_u);
    }

    #[test]
    fn dirichlet_dofs_cover_dirichlet_facets_once() {
        let s = space(4);
        let dofs = s.dirichlet_dofs();
        let mut sorted = dofs.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), dofs.len());
        // three Dirichlet walls with 2n + 1 nodes each, sharing two corners;
        // the top corners belong to the walls as well
        let n = 4;
        assert_eq!(dofs.len(), 2 * (3 * (2 * n + 1) - 2));
        // top-wall interior nodes are free
        for (k, x) in s.node_coords.iter().enumerate() {
            if (x[1] - 1.0).abs() < 1e-14 && x[0] > 1e-14 && x[0] < 1.0 - 1e-14 {
                assert!(!s.is_dirichlet(2 * k));
            }
        }
    }
}
