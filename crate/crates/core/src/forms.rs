//! Residual and Jacobian of the Nitsche discretisation.
//!
//! Unknowns are packed as `[u (n_u) | p (n_p) | m]`, the trailing multiplier
//! only in [`MeanPressureMode::Multiplier`]. Dirichlet velocity DOFs are
//! eliminated row-wise: their residual is `u_dof - g_D(node, t)`.
//!
//! Momentum rows, tested with `w`:
//!
//! ```text
//! (u - u_old, w)/dt + beta/dt <u - u_old, w>_S + 2 nu (Du, Dw) + b~(u, u, w)
//!   - (p, div w) + <p, w.n>_S + <sigma(u_t, t) + g, w_t>_S
//!   + nu alpha/h <u.n, w.n>_S - 2 nu <(Du n).n, w.n>_S + s 2 nu <(Dw n).n, u.n>_S
//!   - (f, w) - beta <d_t u_b, w>_S
//! ```
//!
//! with `s = -1` (symmetric) or `s = +1` (antisymmetric) and `S` the slip
//! facets. Continuity rows are `-(div u, q) + <u.n, q>_S + m (1, q)`, the
//! sign chosen so that the Stokes part of the Jacobian is symmetric.

use crate::error::{Error, Result};
use crate::fespace::{sym, TaylorHoodSpace, Vec2};
use crate::linalg::{LuSolver, SparseMatrix, SparsePattern};
use crate::mesh::FacetTag;
use crate::sliplaw::SlipLaw;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Symmetric,
    Antisymmetric,
}

impl Variant {
    fn sign(self) -> f64 {
        match self {
            Variant::Symmetric => -1.0,
            Variant::Antisymmetric => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Fixed(f64),
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanPressureMode {
    Multiplier,
    Pinned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NitscheConfig {
    pub nu: f64,
    pub penalty: Penalty,
    pub variant: Variant,
    /// Boundary mass on slip facets, added to the law's own coefficient.
    pub beta: f64,
    pub include_convection: bool,
    pub mean_pressure_mode: MeanPressureMode,
}

impl Default for NitscheConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            penalty: Penalty::Fixed(10.0),
            variant: Variant::Symmetric,
            beta: 0.0,
            include_convection: true,
            mean_pressure_mode: MeanPressureMode::Multiplier,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeMode {
    Steady,
    Unsteady { dt: f64 },
}

/// Data of one (pseudo-)time level.
#[derive(Clone, Copy, Debug)]
pub struct Step<'a> {
    pub t: f64,
    pub mode: TimeMode,
    /// Velocity of the previous level; required when unsteady.
    pub u_old: Option<&'a [f64]>,
}

impl<'a> Step<'a> {
    pub fn steady(t: f64) -> Self {
        Self {
            t,
            mode: TimeMode::Steady,
            u_old: None,
        }
    }

    pub fn unsteady(t: f64, dt: f64, u_old: &'a [f64]) -> Self {
        Self {
            t,
            mode: TimeMode::Unsteady { dt },
            u_old: Some(u_old),
        }
    }
}

pub type Field = Arc<dyn Fn(Vec2, f64) -> Vec2 + Send + Sync>;
/// Boundary field `g(x, n, t)`.
pub type BoundaryField = Arc<dyn Fn(Vec2, Vec2, f64) -> Vec2 + Send + Sync>;

const NL: usize = 15;

struct Layout {
    pattern: Arc<SparsePattern>,
    lu: LuSolver,
    /// Storage positions of the local 15 x 15 block of each cell.
    cell_positions: Vec<[u32; NL * NL]>,
    cell_slip_facets: Vec<Vec<usize>>,
    /// Positions of `(n_u + k, mult)` and `(mult, n_u + k)`.
    mult_positions: Vec<(usize, usize)>,
    diag_positions: Vec<usize>,
}

/// Assembly context: space, parameters, law and data.
#[derive(Clone)]
pub struct Problem {
    pub space: Arc<TaylorHoodSpace>,
    pub config: NitscheConfig,
    /// Resolved penalty.
    pub alpha: f64,
    pub law: SlipLaw,
    pub forcing: Option<Field>,
    pub dirichlet: Option<Field>,
    pub boundary_correction: Option<BoundaryField>,
    layout: Arc<Layout>,
}

/// Terms of the discrete energy balance at one step, tested with the
/// computed velocity itself.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct EnergyTerms {
    /// `(d_t u, u)_B`
    pub time: f64,
    /// `2 nu ||Du||^2`
    pub viscous: f64,
    /// `<sigma, u_t>_S`
    pub slip: f64,
    /// `nu alpha ||h^-1/2 u.n||^2_S`
    pub penalty: f64,
    /// `(f, u)`
    pub forcing: f64,
    /// `beta <d_t u_b, u>_S`
    pub wall: f64,
    /// `b~(u, u, u)`
    pub convection: f64,
    /// `<g, u_t>_S`
    pub correction: f64,
    /// `2 nu <(Du n).n, u.n>_S`, cancels in the antisymmetric variant
    pub consistency: f64,
    /// Net consistency and symmetrization contribution: zero in the
    /// antisymmetric variant, `-2 consistency` in the symmetric one.
    pub symmetrization: f64,
    /// `2 ||Du||^2 - 4 <(Du n).n, u.n>_S + alpha ||h^-1/2 u.n||^2_S`
    pub quadratic_form: f64,
}

impl EnergyTerms {
    /// Discrete energy balance; zero at a converged step.
    pub fn balance(&self) -> f64 {
        self.time + self.viscous + self.slip + self.penalty + self.convection + self.correction
            + self.symmetrization
            - self.forcing
            - self.wall
    }

    /// `|balance|` relative to the sum of the magnitudes of its terms.
    pub fn relative_residual(&self) -> f64 {
        let scale = self.time.abs()
            + self.viscous.abs()
            + self.slip.abs()
            + self.penalty.abs()
            + self.convection.abs()
            + self.correction.abs()
            + self.symmetrization.abs()
            + self.forcing.abs()
            + self.wall.abs();
        if scale == 0.0 {
            0.0
        } else {
            self.balance().abs() / scale
        }
    }
}

/// One sample of the wall functionals.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WallSample {
    pub x: Vec2,
    pub u_tau: Vec2,
    pub sigma: Vec2,
    pub un: f64,
}

impl WallSample {
    pub fn u_tau_abs(&self) -> f64 {
        self.u_tau[0].hypot(self.u_tau[1])
    }

    pub fn sigma_abs(&self) -> f64 {
        self.sigma[0].hypot(self.sigma[1])
    }
}

fn build_layout(space: &TaylorHoodSpace, mode: MeanPressureMode) -> Result<Layout> {
    let n_u = space.n_velocity();
    let n_p = space.n_pressure();
    let mult = matches!(mode, MeanPressureMode::Multiplier);
    let n = n_u + n_p + usize::from(mult);
    let global = |cell: usize| -> [usize; NL] {
        let nodes = space.cell_nodes[cell];
        let verts = space.mesh.cells[cell];
        let mut g = [0; NL];
        for i in 0..6 {
            g[2 * i] = 2 * nodes[i];
            g[2 * i + 1] = 2 * nodes[i] + 1;
        }
        for k in 0..3 {
            g[12 + k] = n_u + verts[k];
        }
        g
    };
    let mut columns: Vec<Vec<usize>> = (0..n).map(|j| vec![j]).collect();
    for cell in 0..space.mesh.num_cells() {
        let g = global(cell);
        for &c in &g {
            columns[c].extend_from_slice(&g);
        }
    }
    if mult {
        for k in 0..n_p {
            columns[n - 1].push(n_u + k);
            columns[n_u + k].push(n - 1);
        }
    }
    let pattern = Arc::new(SparsePattern::from_columns(columns));
    let cell_positions = (0..space.mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let g = global(cell);
            let mut pos = [0u32; NL * NL];
            for r in 0..NL {
                for c in 0..NL {
                    pos[r * NL + c] = pattern.position(g[r], g[c]).unwrap() as u32;
                }
            }
            pos
        })
        .collect();
    let mut cell_slip_facets = vec![Vec::new(); space.mesh.num_cells()];
    for (i, f) in space.mesh.facets_with_tag(FacetTag::Slip) {
        cell_slip_facets[f.cell].push(i);
    }
    let mult_positions = if mult {
        (0..n_p)
            .map(|k| {
                (
                    pattern.position(n_u + k, n - 1).unwrap(),
                    pattern.position(n - 1, n_u + k).unwrap(),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let diag_positions = (0..n).map(|j| pattern.position(j, j).unwrap()).collect();
    let lu = if mult {
        LuSolver::bordered(pattern.clone(), n_u)?
    } else {
        LuSolver::new(pattern.clone())?
    };
    Ok(Layout {
        pattern,
        lu,
        cell_positions,
        cell_slip_facets,
        mult_positions,
        diag_positions,
    })
}

struct Local {
    res: [f64; NL],
    jac: Option<Box<[f64; NL * NL]>>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("n_dofs", &self.n_dofs())
            .field("config", &self.config)
            .field("alpha", &self.alpha)
            .field("law", &self.law)
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Builds the context; `Penalty::Auto` is resolved through the
    /// stability module.
    pub fn new(space: Arc<TaylorHoodSpace>, config: NitscheConfig, law: SlipLaw) -> Result<Self> {
        if !(config.nu > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", config.nu)));
        }
        if !(config.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", config.beta)));
        }
        let alpha = match config.penalty {
            Penalty::Fixed(a) if a > 0.0 => a,
            Penalty::Fixed(a) => {
                return Err(Error::Config(format!("penalty must be positive, got {a}")))
            }
            Penalty::Auto => crate::stability::auto_alpha(&space, config.nu, &law)?,
        };
        let layout = Arc::new(build_layout(&space, config.mean_pressure_mode)?);
        Ok(Self {
            space,
            config,
            alpha,
            law,
            forcing: None,
            dirichlet: None,
            boundary_correction: None,
            layout,
        })
    }

    pub fn with_forcing(mut self, f: Field) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn with_dirichlet(mut self, g: Field) -> Self {
        self.dirichlet = Some(g);
        self
    }

    pub fn with_boundary_correction(mut self, g: BoundaryField) -> Self {
        self.boundary_correction = Some(g);
        self
    }

    pub fn with_law(mut self, law: SlipLaw) -> Self {
        self.law = law;
        self
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.layout.pattern
    }

    pub fn lu_solver(&self) -> &LuSolver {
        &self.layout.lu
    }

    /// Boundary mass coefficient on slip facets.
    pub fn beta_eff(&self) -> f64 {
        self.config.beta + self.law.beta_star()
    }

    fn has_multiplier(&self) -> bool {
        matches!(self.config.mean_pressure_mode, MeanPressureMode::Multiplier)
    }

    pub fn pack(&self, s: &crate::fespace::SystemState) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_dofs());
        x.extend_from_slice(&s.u);
        x.extend_from_slice(&s.p);
        if self.has_multiplier() {
            x.push(s.m);
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> crate::fespace::SystemState {
        let n_u = self.space.n_velocity();
        let n_p = self.space.n_pressure();
        crate::fespace::SystemState {
            u: x[..n_u].to_vec(),
            p: x[n_u..n_u + n_p].to_vec(),
            m: if self.has_multiplier() { x[n_u + n_p] } else { 0.0 },
        }
    }

    /// Packed state with Dirichlet values imposed and everything else zero.
    pub fn initial_guess(&self, t: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.n_dofs()];
        self.impose_dirichlet(&mut x, t);
        x
    }

    pub fn impose_dirichlet(&self, x: &mut [f64], t: f64) {
        if let Some(g) = &self.dirichlet {
            for &d in self.space.dirichlet_dofs() {
                x[d] = g(self.space.dof_coord(d), t)[d % 2];
            }
        } else {
            for &d in self.space.dirichlet_dofs() {
                x[d] = 0.0;
            }
        }
    }

    fn check(&self, x: &[f64], step: &Step) -> Result<()> {
        if x.len() != self.n_dofs() {
            return Err(Error::StateLength {
                expected: self.n_dofs(),
                found: x.len(),
            });
        }
        if let TimeMode::Unsteady { dt } = step.mode {
            if !(dt > 0.0) {
                return Err(Error::NonPositiveStep(dt));
            }
            match step.u_old {
                Some(u) if u.len() == self.space.n_velocity() => {}
                Some(u) => {
                    return Err(Error::StateLength {
                        expected: self.space.n_velocity(),
                        found: u.len(),
                    })
                }
                None => return Err(Error::Config("unsteady step without previous state".into())),
            }
        }
        Ok(())
    }

    fn local(&self, cell: usize, x: &[f64], step: &Step, want_jac: bool) -> Local {
        let space = &*self.space;
        let nu = self.config.nu;
        let conv = self.config.include_convection;
        let n_u = space.n_velocity();
        let map = space.cell_map(cell);
        let det = map.det.abs();
        let ul = space.local_velocity(x, cell);
        let verts = space.mesh.cells[cell];
        let pl = [x[n_u + verts[0]], x[n_u + verts[1]], x[n_u + verts[2]]];
        let (inv_dt, uo) = match step.mode {
            TimeMode::Unsteady { dt } => (1.0 / dt, space.local_velocity(step.u_old.unwrap(), cell)),
            TimeMode::Steady => (0.0, [[0.0; 2]; 6]),
        };
        let t = step.t;

        let mut res = [0.0; NL];
        let mut jac = if want_jac {
            Some(Box::new([0.0; NL * NL]))
        } else {
            None
        };

        let tab = &space.cell_rule;
        for q in 0..tab.points.len() {
            let w = tab.weights[q] * det;
            let phi = &tab.p2[q];
            let psi = &tab.p1[q];
            let mut g = [[0.0; 2]; 6];
            for i in 0..6 {
                g[i] = map.grad(tab.p2_grad[q][i]);
            }
            let mut u = [0.0; 2];
            let mut u_old = [0.0; 2];
            let mut grad = [[0.0; 2]; 2];
            for i in 0..6 {
                for c in 0..2 {
                    u[c] += ul[i][c] * phi[i];
                    u_old[c] += uo[i][c] * phi[i];
                    for d in 0..2 {
                        grad[c][d] += ul[i][c] * g[i][d];
                    }
                }
            }
            let p: f64 = (0..3).map(|k| pl[k] * psi[k]).sum();
            let du = sym(grad);
            let div = grad[0][0] + grad[1][1];
            let f = match &self.forcing {
                Some(f) => f(map.to_physical(tab.points[q]), t),
                None => [0.0, 0.0],
            };
            let u_dot_g: [f64; 6] = std::array::from_fn(|i| u[0] * g[i][0] + u[1] * g[i][1]);
            let adv = [
                u[0] * grad[0][0] + u[1] * grad[0][1],
                u[0] * grad[1][0] + u[1] * grad[1][1],
            ];

            for i in 0..6 {
                for c in 0..2 {
                    let mut r = inv_dt * (u[c] - u_old[c]) * phi[i]
                        + 2.0 * nu * (du[c][0] * g[i][0] + du[c][1] * g[i][1])
                        - p * g[i][c]
                        - f[c] * phi[i];
                    if conv {
                        r += 0.5 * (-u[c] * u_dot_g[i] + phi[i] * adv[c]);
                    }
                    res[2 * i + c] += w * r;
                }
            }
            for k in 0..3 {
                res[12 + k] -= w * div * psi[k];
            }

            if let Some(jac) = jac.as_mut() {
                for i in 0..6 {
                    for c in 0..2 {
                        let row = (2 * i + c) * NL;
                        for j in 0..6 {
                            let gg = g[i][0] * g[j][0] + g[i][1] * g[j][1];
                            let pp = phi[i] * phi[j];
                            for e in 0..2 {
                                let dce = if c == e { 1.0 } else { 0.0 };
                                let mut a = inv_dt * dce * pp
                                    + nu * (dce * gg + g[j][c] * g[i][e]);
                                if conv {
                                    a += -0.5 * (dce * phi[j] * u_dot_g[i] + u[c] * phi[j] * g[i][e])
                                        + 0.5 * phi[i] * (phi[j] * grad[c][e] + dce * u_dot_g[j]);
                                }
                                jac[row + 2 * j + e] += w * a;
                            }
                        }
                        for k in 0..3 {
                            let a = -w * psi[k] * g[i][c];
                            jac[row + 12 + k] += a;
                            jac[(12 + k) * NL + 2 * i + c] += a;
                        }
                    }
                }
            }
        }

        for &fi in &self.layout.cell_slip_facets[cell] {
            self.facet_terms(fi, &map, &ul, &uo, &pl, inv_dt, t, &mut res, jac.as_deref_mut());
        }
        Local { res, jac }
    }

    #[allow(clippy::too_many_arguments)]
    fn facet_terms(
        &self,
        fi: usize,
        map: &crate::fespace::CellMap,
        ul: &[Vec2; 6],
        uo: &[Vec2; 6],
        pl: &[f64; 3],
        inv_dt: f64,
        t: f64,
        res: &mut [f64; NL],
        mut jac: Option<&mut [f64; NL * NL]>,
    ) {
        let space = &*self.space;
        let facet = &space.mesh.facets[fi];
        let n = facet.normal;
        let h = facet.h;
        let nu = self.config.nu;
        let pen = nu * self.alpha / h;
        let s_var = self.config.variant.sign();
        let beta = if inv_dt > 0.0 { self.beta_eff() } else { 0.0 };
        let wall_acc = if beta > 0.0 {
            self.law.wall_acceleration(t, 1.0 / inv_dt)
        } else {
            [0.0, 0.0]
        };
        let tab = &space.facet_rules[facet.local_edge];
        for q in 0..tab.points.len() {
            let w = tab.weights[q] * h;
            let phi = &tab.p2[q];
            let psi = &tab.p1[q];
            let mut g = [[0.0; 2]; 6];
            for i in 0..6 {
                g[i] = map.grad(tab.p2_grad[q][i]);
            }
            let mut u = [0.0; 2];
            let mut u_old = [0.0; 2];
            let mut grad = [[0.0; 2]; 2];
            for i in 0..6 {
                for c in 0..2 {
                    u[c] += ul[i][c] * phi[i];
                    u_old[c] += uo[i][c] * phi[i];
                    for d in 0..2 {
                        grad[c][d] += ul[i][c] * g[i][d];
                    }
                }
            }
            let p: f64 = (0..3).map(|k| pl[k] * psi[k]).sum();
            let du = sym(grad);
            let dnn = n[0] * (du[0][0] * n[0] + du[0][1] * n[1]) + n[1] * (du[1][0] * n[0] + du[1][1] * n[1]);
            let (un, ut) = TaylorHoodSpace::trace_split(u, n);
            let mut traction = self.law.eval(ut, t);
            if let Some(gc) = &self.boundary_correction {
                let x = map.to_physical(tab.points[q]);
                let gv = gc(x, n, t);
                traction[0] += gv[0];
                traction[1] += gv[1];
            }
            // tangential projection of the traction
            let tn = traction[0] * n[0] + traction[1] * n[1];
            let tt = [traction[0] - tn * n[0], traction[1] - tn * n[1]];
            let gn: [f64; 6] = std::array::from_fn(|i| g[i][0] * n[0] + g[i][1] * n[1]);

            for i in 0..6 {
                for c in 0..2 {
                    let r = p * phi[i] * n[c]
                        + tt[c] * phi[i]
                        + pen * un * phi[i] * n[c]
                        - 2.0 * nu * dnn * phi[i] * n[c]
                        + s_var * 2.0 * nu * n[c] * gn[i] * un
                        + beta * (inv_dt * (u[c] - u_old[c]) - wall_acc[c]) * phi[i];
                    res[2 * i + c] += w * r;
                }
            }
            for k in 0..3 {
                res[12 + k] += w * un * psi[k];
            }

            if let Some(jac) = jac.as_deref_mut() {
                let jl = self.law.jacobian(ut, t);
                // P J P with P = I - n n^T
                let proj = [[1.0 - n[0] * n[0], -n[0] * n[1]], [-n[1] * n[0], 1.0 - n[1] * n[1]]];
                let mut pj = [[0.0; 2]; 2];
                for a in 0..2 {
                    for b in 0..2 {
                        let mut s = 0.0;
                        for k in 0..2 {
                            for l in 0..2 {
                                s += proj[a][k] * jl[k][l] * proj[l][b];
                            }
                        }
                        pj[a][b] = s;
                    }
                }
                for i in 0..6 {
                    for c in 0..2 {
                        let row = (2 * i + c) * NL;
                        for j in 0..6 {
                            let pp = phi[i] * phi[j];
                            for e in 0..2 {
                                let dce = if c == e { 1.0 } else { 0.0 };
                                let a = pp * pj[c][e]
                                    + pen * pp * n[e] * n[c]
                                    - 2.0 * nu * n[e] * gn[j] * phi[i] * n[c]
                                    + s_var * 2.0 * nu * n[c] * gn[i] * phi[j] * n[e]
                                    + beta * inv_dt * dce * pp;
                                jac[row + 2 * j + e] += w * a;
                            }
                        }
                        for k in 0..3 {
                            let a = w * psi[k] * phi[i] * n[c];
                            jac[row + 12 + k] += a;
                            jac[(12 + k) * NL + 2 * i + c] += a;
                        }
                    }
                }
            }
        }
    }

    fn assemble(&self, x: &[f64], step: &Step, want_jac: bool) -> Result<(Vec<f64>, Option<SparseMatrix>)> {
        self.check(x, step)?;
        let space = &*self.space;
        let n = self.n_dofs();
        let n_u = space.n_velocity();
        let n_p = space.n_pressure();
        let locals: Vec<Local> = (0..space.mesh.num_cells())
            .into_par_iter()
            .map(|cell| self.local(cell, x, step, want_jac))
            .collect();

        let pinned = matches!(self.config.mean_pressure_mode, MeanPressureMode::Pinned);
        let skip_row = |gr: usize| (gr < n_u && space.is_dirichlet(gr)) || (pinned && gr == n_u);

        let mut res = vec![0.0; n];
        let mut jac = want_jac.then(|| SparseMatrix::zeros(self.layout.pattern.clone()));
        for (cell, local) in locals.iter().enumerate() {
            let nodes = space.cell_nodes[cell];
            let verts = space.mesh.cells[cell];
            let global = |r: usize| {
                if r < 12 {
                    2 * nodes[r / 2] + r % 2
                } else {
                    n_u + verts[r - 12]
                }
            };
            let pos = &self.layout.cell_positions[cell];
            for r in 0..NL {
                let gr = global(r);
                if skip_row(gr) {
                    continue;
                }
                res[gr] += local.res[r];
                if let (Some(jm), Some(lj)) = (jac.as_mut(), local.jac.as_ref()) {
                    for c in 0..NL {
                        jm.values[pos[r * NL + c] as usize] += lj[r * NL + c];
                    }
                }
            }
        }

        let integrals = space.pressure_integrals();
        if self.has_multiplier() {
            let m = x[n - 1];
            let mut mean = 0.0;
            for k in 0..n_p {
                res[n_u + k] += m * integrals[k];
                mean += integrals[k] * x[n_u + k];
            }
            res[n - 1] = mean;
            if let Some(jm) = jac.as_mut() {
                for (k, &(col_pos, row_pos)) in self.layout.mult_positions.iter().enumerate() {
                    jm.values[col_pos] += integrals[k];
                    jm.values[row_pos] += integrals[k];
                }
            }
        }
        if pinned {
            res[n_u] = x[n_u];
            if let Some(jm) = jac.as_mut() {
                jm.values[self.layout.diag_positions[n_u]] = 1.0;
            }
        }
        for &d in space.dirichlet_dofs() {
            let target = match &self.dirichlet {
                Some(g) => g(space.dof_coord(d), step.t)[d % 2],
                None => 0.0,
            };
            res[d] = x[d] - target;
            if let Some(jm) = jac.as_mut() {
                jm.values[self.layout.diag_positions[d]] = 1.0;
            }
        }
        Ok((res, jac))
    }

    pub fn residual(&self, x: &[f64], step: &Step) -> Result<Vec<f64>> {
        Ok(self.assemble(x, step, false)?.0)
    }

    pub fn jacobian(&self, x: &[f64], step: &Step) -> Result<SparseMatrix> {
        Ok(self.assemble(x, step, true)?.1.unwrap())
    }

    pub fn residual_and_jacobian(&self, x: &[f64], step: &Step) -> Result<(Vec<f64>, SparseMatrix)> {
        let (r, j) = self.assemble(x, step, true)?;
        Ok((r, j.unwrap()))
    }

    /// Tangential velocity, traction and normal velocity at the facet
    /// quadrature points of the slip wall, sorted along the wall.
    pub fn boundary_functionals(&self, u: &[f64], t: f64) -> Vec<WallSample> {
        let space = &*self.space;
        let mut out = Vec::new();
        for (fi, f) in space.mesh.facets_with_tag(FacetTag::Slip) {
            let map = space.cell_map(f.cell);
            let tab = &space.facet_rules[f.local_edge];
            for q in 0..tab.points.len() {
                let (un, ut) = space.facet_trace(u, fi, q);
                out.push(WallSample {
                    x: map.to_physical(tab.points[q]),
                    u_tau: ut,
                    sigma: self.law.eval(ut, t),
                    un,
                });
            }
        }
        out.sort_by(|a, b| a.x[0].total_cmp(&b.x[0]).then(a.x[1].total_cmp(&b.x[1])));
        out
    }

    /// `(a, b) + beta <a, b>_S` for velocity coefficient vectors.
    pub fn b_inner(&self, a: &[f64], b: &[f64], beta: f64) -> f64 {
        let space = &*self.space;
        let mut s = 0.0;
        let tab = &space.cell_rule;
        for cell in 0..space.mesh.num_cells() {
            let det = space.cell_map(cell).det.abs();
            let la = space.local_velocity(a, cell);
            let lb = space.local_velocity(b, cell);
            for q in 0..tab.points.len() {
                let va = value(&la, &tab.p2[q]);
                let vb = value(&lb, &tab.p2[q]);
                s += tab.weights[q] * det * (va[0] * vb[0] + va[1] * vb[1]);
            }
        }
        if beta != 0.0 {
            for (_, f) in space.mesh.facets_with_tag(FacetTag::Slip) {
                let tab = &space.facet_rules[f.local_edge];
                let la = space.local_velocity(a, f.cell);
                let lb = space.local_velocity(b, f.cell);
                for q in 0..tab.points.len() {
                    let va = value(&la, &tab.p2[q]);
                    let vb = value(&lb, &tab.p2[q]);
                    s += beta * tab.weights[q] * f.h * (va[0] * vb[0] + va[1] * vb[1]);
                }
            }
        }
        s
    }

    /// Energy balance terms after a step from `u_old` to `u`.
    pub fn energy_terms(&self, u: &[f64], step: &Step) -> EnergyTerms {
        let space = &*self.space;
        let nu = self.config.nu;
        let t = step.t;
        let mut e = EnergyTerms::default();
        let mut dsq = 0.0;
        let tab = &space.cell_rule;
        for cell in 0..space.mesh.num_cells() {
            let map = space.cell_map(cell);
            let det = map.det.abs();
            for q in 0..tab.points.len() {
                let w = tab.weights[q] * det;
                let ev = space.evaluate(u, cell, tab.points[q]);
                let d = ev.sym_grad;
                let dd = d[0][0] * d[0][0] + 2.0 * d[0][1] * d[0][1] + d[1][1] * d[1][1];
                dsq += w * dd;
                if let Some(f) = &self.forcing {
                    let fv = f(map.to_physical(tab.points[q]), t);
                    e.forcing += w * (fv[0] * ev.value[0] + fv[1] * ev.value[1]);
                }
            }
        }
        e.viscous = 2.0 * nu * dsq;
        if self.config.include_convection {
            e.convection = self.trilinear_skew(u, u, u);
        }
        let mut un_sq = 0.0;
        let mut dnn_un = 0.0;
        let (beta, wall_acc) = match step.mode {
            TimeMode::Unsteady { dt } => (self.beta_eff(), self.law.wall_acceleration(t, dt)),
            TimeMode::Steady => (0.0, [0.0, 0.0]),
        };
        for (fi, f) in space.mesh.facets_with_tag(FacetTag::Slip) {
            let map = space.cell_map(f.cell);
            let tab = &space.facet_rules[f.local_edge];
            let n = f.normal;
            for q in 0..tab.points.len() {
                let w = tab.weights[q] * f.h;
                let ev = space.evaluate(u, f.cell, tab.points[q]);
                let (un, ut) = TaylorHoodSpace::trace_split(ev.value, n);
                let d = ev.sym_grad;
                let dnn = n[0] * (d[0][0] * n[0] + d[0][1] * n[1]) + n[1] * (d[1][0] * n[0] + d[1][1] * n[1]);
                let s = self.law.eval(ut, t);
                e.slip += w * (s[0] * ut[0] + s[1] * ut[1]);
                if let Some(gc) = &self.boundary_correction {
                    let gv = gc(map.to_physical(tab.points[q]), n, t);
                    e.correction += w * (gv[0] * ut[0] + gv[1] * ut[1]);
                }
                un_sq += w * un * un / f.h;
                dnn_un += w * dnn * un;
                e.wall += beta * w * (wall_acc[0] * ev.value[0] + wall_acc[1] * ev.value[1]);
                let _ = fi;
            }
        }
        e.penalty = nu * self.alpha * un_sq;
        e.consistency = 2.0 * nu * dnn_un;
        e.symmetrization = (self.config.variant.sign() - 1.0) * e.consistency;
        e.quadratic_form = 2.0 * dsq - 4.0 * dnn_un + self.alpha * un_sq;
        if let TimeMode::Unsteady { dt } = step.mode {
            let u_old = step.u_old.expect("unsteady step needs previous state");
            let diff: Vec<f64> = u.iter().zip(u_old).map(|(a, b)| a - b).collect();
            e.time = self.b_inner(&diff, u, beta) / dt;
        }
        e
    }

    /// `b~(a, b, c) = (-(b (x) a, grad c) + (c (x) a, grad b)) / 2`.
    pub fn trilinear_skew(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let space = &*self.space;
        let tab = &space.cell_rule;
        let mut s = 0.0;
        for cell in 0..space.mesh.num_cells() {
            let det = space.cell_map(cell).det.abs();
            for q in 0..tab.points.len() {
                let xi = tab.points[q];
                let ea = space.evaluate(a, cell, xi);
                let eb = space.evaluate(b, cell, xi);
                let ec = space.evaluate(c, cell, xi);
                let adv_c = advect(ea.value, &ec.grad);
                let adv_b = advect(ea.value, &eb.grad);
                let v = -(eb.value[0] * adv_c[0] + eb.value[1] * adv_c[1])
                    + (ec.value[0] * adv_b[0] + ec.value[1] * adv_b[1]);
                s += tab.weights[q] * det * 0.5 * v;
            }
        }
        s
    }

    /// Unsymmetrised `b(a, b, c) = ((a . grad) b, c)`.
    pub fn trilinear(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let space = &*self.space;
        let tab = &space.cell_rule;
        let mut s = 0.0;
        for cell in 0..space.mesh.num_cells() {
            let det = space.cell_map(cell).det.abs();
            for q in 0..tab.points.len() {
                let xi = tab.points[q];
                let ea = space.evaluate(a, cell, xi);
                let eb = space.evaluate(b, cell, xi);
                let ec = space.evaluate(c, cell, xi);
                let adv = advect(ea.value, &eb.grad);
                s += tab.weights[q] * det * (adv[0] * ec.value[0] + adv[1] * ec.value[1]);
            }
        }
        s
    }
}

fn value(local: &[Vec2; 6], phi: &[f64; 6]) -> Vec2 {
    let mut v = [0.0; 2];
    for i in 0..6 {
        v[0] += local[i][0] * phi[i];
        v[1] += local[i][1] * phi[i];
    }
    v
}

fn advect(a: Vec2, grad: &[[f64; 2]; 2]) -> Vec2 {
    [
        a[0] * grad[0][0] + a[1] * grad[0][1],
        a[0] * grad[1][0] + a[1] * grad[1][1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{all_slip, top_wall_slip, Diagonal, Mesh};
    use crate::solver::{newton_solve, NewtonConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(n: usize, tags: fn([f64; 2]) -> Option<FacetTag>, diag: Diagonal) -> Arc<TaylorHoodSpace> {
        Arc::new(TaylorHoodSpace::new(Mesh::unit_square(n, diag).tag_boundary(tags).unwrap()))
    }

    fn random(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
    }

    fn forcing() -> Field {
        Arc::new(|x: Vec2, t: f64| [x[1] * (1.0 + t), -x[0] * x[0]])
    }

    fn correction() -> BoundaryField {
        Arc::new(|x: Vec2, n: Vec2, t: f64| [x[0] + n[1] * t, 0.3 * x[1] - n[0]])
    }

    fn jacobian_fd_error(problem: &Problem, x: &[f64], step: &Step, rng: &mut ChaCha8Rng) -> f64 {
        let jac = problem.jacobian(x, step).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let v = random(rng, x.len(), 1.0);
            let jv = jac.mul_vec(&v);
            let eps = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
            let rp = problem.residual(&xp, step).unwrap();
            let rm = problem.residual(&xm, step).unwrap();
            let scale = jv.iter().fold(1.0f64, |m, a| m.max(a.abs()));
            for i in 0..x.len() {
                let fd = (rp[i] - rm[i]) / (2.0 * eps);
                worst = worst.max((fd - jv[i]).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let laws = [
            SlipLaw::navier(2.0),
            SlipLaw::fang_regularized(1.6, 1.5, 10.0, 0.05).unwrap(),
            SlipLaw::leroux_rajagopal(1.0, 0.1, 0.001, -0.75).unwrap(),
            SlipLaw::stick_slip_regularized(2.0, 1.0, 0.1).unwrap(),
            SlipLaw::dynamic_moving_wall(1.0, 2.0, 0.01).unwrap(),
        ];
        for (tags, diag) in [(top_wall_slip as fn(_) -> _, Diagonal::Right), (all_slip, Diagonal::Crossed)] {
            let sp = space(3, tags, diag);
            for law in laws {
                for variant in [Variant::Symmetric, Variant::Antisymmetric] {
                    for mode in [MeanPressureMode::Multiplier, MeanPressureMode::Pinned] {
                        let config = NitscheConfig {
                            nu: 0.7,
                            variant,
                            beta: 0.5,
                            mean_pressure_mode: mode,
                            ..Default::default()
                        };
                        let problem = Problem::new(sp.clone(), config, law)
                            .unwrap()
                            .with_forcing(forcing())
                            .with_boundary_correction(correction());
                        let x = random(&mut rng, problem.n_dofs(), 1.0);
                        let u_old = random(&mut rng, sp.n_velocity(), 1.0);
                        let unsteady = Step::unsteady(0.004, 0.002, &u_old);
                        let e = jacobian_fd_error(&problem, &x, &unsteady, &mut rng);
                        assert!(e < 1e-6, "{} {variant:?} {mode:?}: {e}", law.name());
                        let e = jacobian_fd_error(&problem, &x, &Step::steady(0.5), &mut rng);
                        assert!(e < 1e-6, "{} steady: {e}", law.name());
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_stokes_jacobian_is_symmetric_on_free_dofs() {
        let sp = space(4, top_wall_slip, Diagonal::Right);
        let config = NitscheConfig {
            include_convection: false,
            ..Default::default()
        };
        let problem = Problem::new(sp.clone(), config, SlipLaw::navier(3.0)).unwrap();
        let x = vec![0.0; problem.n_dofs()];
        let a = problem.jacobian(&x, &Step::steady(0.0)).unwrap().to_dense();
        let free: Vec<usize> = (0..problem.n_dofs())
            .filter(|&i| i >= sp.n_velocity() || !sp.is_dirichlet(i))
            .collect();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for &i in &free {
            for &j in &free {
                worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
                scale = scale.max(a[(i, j)].abs());
            }
        }
        assert!(worst <= 1e-12 * scale, "{worst} vs {scale}");

        // the antisymmetric variant is not symmetric
        let anti = Problem::new(
            sp.clone(),
            NitscheConfig {
                variant: Variant::Antisymmetric,
                ..config
            },
            SlipLaw::navier(3.0),
        )
        .unwrap();
        let b = anti.jacobian(&x, &Step::steady(0.0)).unwrap().to_dense();
        let asym = free
            .iter()
            .flat_map(|&i| free.iter().map(move |&j| (i, j)))
            .map(|(i, j)| (b[(i, j)] - b[(j, i)]).abs())
            .fold(0.0, f64::max);
        assert!(asym > 1e-3 * scale);
    }

    #[test]
    fn skew_convection_vanishes_on_repeated_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sp = space(3, all_slip, Diagonal::Right);
        let problem = Problem::new(sp.clone(), NitscheConfig::default(), SlipLaw::navier(1.0)).unwrap();
        let n_u = sp.n_velocity();
        for _ in 0..5 {
            let a = random(&mut rng, n_u, 1.0);
            let b = random(&mut rng, n_u, 1.0);
            let c = random(&mut rng, n_u, 1.0);
            let scale = problem.trilinear(&a, &b, &c).abs() + 1.0;
            assert!(problem.trilinear_skew(&a, &b, &b).abs() < 1e-13 * scale);
            let s = problem.trilinear_skew(&a, &b, &c) + problem.trilinear_skew(&a, &c, &b);
            assert!(s.abs() < 1e-13 * scale);
            // b~(a,b,c) = (b(a,b,c) - b(a,c,b)) / 2
            let d = problem.trilinear_skew(&a, &b, &c)
                - 0.5 * (problem.trilinear(&a, &b, &c) - problem.trilinear(&a, &c, &b));
            assert!(d.abs() < 1e-13 * scale);
        }
    }

    #[test]
    fn constant_pressure_does_not_enter_momentum_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sp = space(4, top_wall_slip, Diagonal::Right);
        let law = SlipLaw::fang_regularized(1.6, 1.5, 10.0, 0.01).unwrap();
        let problem = Problem::new(sp.clone(), NitscheConfig::default(), law)
            .unwrap()
            .with_forcing(forcing());
        let x = random(&mut rng, problem.n_dofs(), 1.0);
        let mut y = x.clone();
        for k in 0..sp.n_pressure() {
            y[sp.n_velocity() + k] += 3.5;
        }
        let rx = problem.residual(&x, &Step::steady(0.0)).unwrap();
        let ry = problem.residual(&y, &Step::steady(0.0)).unwrap();
        for i in 0..sp.n_velocity() {
            assert!((rx[i] - ry[i]).abs() < 1e-11, "row {i}");
        }
    }

    #[test]
    fn difference_quotient_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sp = space(3, top_wall_slip, Diagonal::Right);
        let problem = Problem::new(sp.clone(), NitscheConfig::default(), SlipLaw::navier(1.0)).unwrap();
        let dt = 0.005;
        for beta in [0.0, 2.0] {
            let u = random(&mut rng, sp.n_velocity(), 1.0);
            let v = random(&mut rng, sp.n_velocity(), 1.0);
            let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            let lhs = problem.b_inner(&diff, &u, beta) / dt;
            let rhs = (problem.b_inner(&u, &u, beta) - problem.b_inner(&v, &v, beta)
                + problem.b_inner(&diff, &diff, beta))
                / (2.0 * dt);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn energy_identity_holds_after_a_converged_step() {
        let sp = space(6, top_wall_slip, Diagonal::Right);
        let law = SlipLaw::dynamic_moving_wall(1.0, 2.0, 0.01).unwrap();
        let n_u = sp.n_velocity();
        let cfg = NewtonConfig {
            abs_tol: 1e-13,
            rel_tol: 1e-14,
            ..Default::default()
        };
        for variant in [Variant::Antisymmetric, Variant::Symmetric] {
            let config = NitscheConfig {
                variant,
                ..Default::default()
            };
            let problem = Problem::new(sp.clone(), config, law.clone()).unwrap().with_forcing(forcing());
            let mut x = problem.initial_guess(0.0);
            for j in 1..=3 {
                let t = j as f64 * 0.005;
                let u_old = x[..n_u].to_vec();
                let step = Step::unsteady(t, 0.005, &u_old);
                x = newton_solve(&problem, &step, x.clone(), &cfg, j).unwrap().0;
                let e = problem.energy_terms(&x[..n_u], &step);
                assert!(e.relative_residual() < 1e-8, "{variant:?} {e:?}");
                assert!(e.wall.abs() > 0.0 && e.time.abs() > 0.0);
                assert_eq!(e.symmetrization == 0.0, variant == Variant::Antisymmetric);
            }
        }
    }

    #[test]
    fn dirichlet_rows_and_state_checks() {
        let sp = space(2, top_wall_slip, Diagonal::Right);
        let problem = Problem::new(sp.clone(), NitscheConfig::default(), SlipLaw::navier(1.0))
            .unwrap()
            .with_dirichlet(Arc::new(|x: Vec2, t: f64| [x[0] + t, 2.0]));
        let x = vec![1.0; problem.n_dofs()];
        let r = problem.residual(&x, &Step::steady(0.5)).unwrap();
        for &d in sp.dirichlet_dofs() {
            let g = if d % 2 == 0 { sp.dof_coord(d)[0] + 0.5 } else { 2.0 };
            assert_eq!(r[d], 1.0 - g);
        }
        let guess = problem.initial_guess(0.5);
        let r = problem.residual(&guess, &Step::steady(0.5)).unwrap();
        assert!(sp.dirichlet_dofs().iter().all(|&d| r[d] == 0.0));

        assert!(matches!(
            problem.residual(&x[1..], &Step::steady(0.0)),
            Err(Error::StateLength { .. })
        ));
        let u_old = vec![0.0; sp.n_velocity()];
        assert!(matches!(
            problem.residual(&x, &Step::unsteady(0.0, 0.0, &u_old)),
            Err(Error::NonPositiveStep(_))
        ));
        assert!(Problem::new(
            sp,
            NitscheConfig {
                penalty: Penalty::Fixed(-1.0),
                ..Default::default()
            },
            SlipLaw::navier(1.0)
        )
        .is_err());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let sp = space(2, top_wall_slip, Diagonal::Right);
        let problem = Problem::new(sp.clone(), NitscheConfig::default(), SlipLaw::navier(1.0)).unwrap();
        let x: Vec<f64> = (0..problem.n_dofs()).map(|i| i as f64).collect();
        assert_eq!(problem.pack(&problem.unpack(&x)), x);
        assert_eq!(problem.n_dofs(), sp.n_velocity() + sp.n_pressure() + 1);
    }
}
