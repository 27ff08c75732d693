//! Manufactured solutions, forcing synthesis and convergence studies.

use crate::error::{Error, Result};
use crate::fespace::{ErrorNorms, ExactFields, Mat2, TaylorHoodSpace, Vec2};
use crate::forms::{BoundaryField, Field, NitscheConfig, Problem};
use crate::mesh::{top_wall_slip, Diagonal, Mesh};
use crate::sliplaw::SlipLaw;
use crate::solver::{steady_solve, NewtonConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `L (sin pi x cos pi y, -cos pi x sin pi y)`, `p = L/4 (cos 2 pi x + sin 2 pi y)`.
    TaylorGreen,
    /// `20 L (a(x) b(y), -b(x) a(y))` with `a = s^2 (s-1)^2`,
    /// `b = s (s-1)(2s-1)`; `p = 20 L (2x-1)(2y-1)`.
    Polynomial,
    /// `L (x^2, -2x(y-1))`, `p = L (x + y - 1)`; exactly representable.
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScaling {
    Static,
    /// Fields multiplied by `t`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSolution {
    pub family: Family,
    pub amplitude: f64,
    pub scaling: TimeScaling,
}

fn poly_a(s: f64) -> [f64; 3] {
    // a, a', a''
    [
        s * s * (s - 1.0) * (s - 1.0),
        2.0 * s * (s - 1.0) * (2.0 * s - 1.0),
        2.0 * (6.0 * s * s - 6.0 * s + 1.0),
    ]
}

fn poly_b(s: f64) -> [f64; 3] {
    [
        s * (s - 1.0) * (2.0 * s - 1.0),
        6.0 * s * s - 6.0 * s + 1.0,
        12.0 * s - 6.0,
    ]
}

impl ManufacturedSolution {
    pub fn taylor_green(amplitude: f64) -> Self {
        Self {
            family: Family::TaylorGreen,
            amplitude,
            scaling: TimeScaling::Static,
        }
    }

    pub fn polynomial(amplitude: f64) -> Self {
        Self {
            family: Family::Polynomial,
            amplitude,
            scaling: TimeScaling::Static,
        }
    }

    pub fn quadratic(amplitude: f64) -> Self {
        Self {
            family: Family::Quadratic,
            amplitude,
            scaling: TimeScaling::Static,
        }
    }

    pub fn time_linear(mut self) -> Self {
        self.scaling = TimeScaling::Linear;
        self
    }

    fn scale(&self, t: f64) -> (f64, f64) {
        match self.scaling {
            TimeScaling::Static => (1.0, 0.0),
            TimeScaling::Linear => (t, 1.0),
        }
    }

    /// Static velocity profile.
    pub fn u_hat(&self, x: Vec2) -> Vec2 {
        let l = self.amplitude;
        match self.family {
            Family::TaylorGreen => {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                [l * sx * cy, -l * cx * sy]
            }
            Family::Polynomial => {
                let (ax, bx) = (poly_a(x[0]), poly_b(x[0]));
                let (ay, by) = (poly_a(x[1]), poly_b(x[1]));
                [20.0 * l * ax[0] * by[0], -20.0 * l * bx[0] * ay[0]]
            }
            Family::Quadratic => [l * x[0] * x[0], -2.0 * l * x[0] * (x[1] - 1.0)],
        }
    }

    /// `grad[i][j] = d u_i / d x_j` of the static profile.
    pub fn grad_u_hat(&self, x: Vec2) -> Mat2 {
        let l = self.amplitude;
        match self.family {
            Family::TaylorGreen => {
                let (sx, cx) = (PI * x[0]).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                [
                    [l * PI * cx * cy, -l * PI * sx * sy],
                    [l * PI * sx * sy, -l * PI * cx * cy],
                ]
            }
            Family::Polynomial => {
                let (ax, bx) = (poly_a(x[0]), poly_b(x[0]));
                let (ay, by) = (poly_a(x[1]), poly_b(x[1]));
                let k = 20.0 * l;
                [
                    [k * ax[1] * by[0], k * ax[0] * by[1]],
                    [-k * bx[1] * ay[0], -k * bx[0] * ay[1]],
                ]
            }
            Family::Quadratic => [
                [2.0 * l * x[0], 0.0],
                [-2.0 * l * (x[1] - 1.0), -2.0 * l * x[0]],
            ],
        }
    }

    /// Laplacian of the static profile.
    pub fn laplacian_u_hat(&self, x: Vec2) -> Vec2 {
        let l = self.amplitude;
        match self.family {
            Family::TaylorGreen => {
                let u = self.u_hat(x);
                [-2.0 * PI * PI * u[0], -2.0 * PI * PI * u[1]]
            }
            Family::Polynomial => {
                let (ax, bx) = (poly_a(x[0]), poly_b(x[0]));
                let (ay, by) = (poly_a(x[1]), poly_b(x[1]));
                let k = 20.0 * l;
                [
                    k * (ax[2] * by[0] + ax[0] * by[2]),
                    -k * (bx[2] * ay[0] + bx[0] * ay[2]),
                ]
            }
            Family::Quadratic => [2.0 * l, 0.0],
        }
    }

    pub fn p_hat(&self, x: Vec2) -> f64 {
        let l = self.amplitude;
        match self.family {
            Family::TaylorGreen => 0.25 * l * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).sin()),
            Family::Polynomial => 20.0 * l * (2.0 * x[0] - 1.0) * (2.0 * x[1] - 1.0),
            Family::Quadratic => l * (x[0] + x[1] - 1.0),
        }
    }

    pub fn grad_p_hat(&self, x: Vec2) -> Vec2 {
        let l = self.amplitude;
        match self.family {
            Family::TaylorGreen => [
                -0.5 * l * PI * (2.0 * PI * x[0]).sin(),
                0.5 * l * PI * (2.0 * PI * x[1]).cos(),
            ],
            Family::Polynomial => [
                40.0 * l * (2.0 * x[1] - 1.0),
                40.0 * l * (2.0 * x[0] - 1.0),
            ],
            Family::Quadratic => [l, l],
        }
    }

    /// `f = d_t u - 2 nu div Du + (u . grad) u + grad p`.
    pub fn forcing_at(&self, x: Vec2, t: f64, nu: f64, convection: bool) -> Vec2 {
        let (s, ds) = self.scale(t);
        let u = self.u_hat(x);
        let g = self.grad_u_hat(x);
        let lap = self.laplacian_u_hat(x);
        let gp = self.grad_p_hat(x);
        let mut f = [0.0; 2];
        for c in 0..2 {
            f[c] = ds * u[c] + s * (-nu * lap[c] + gp[c]);
            if convection {
                f[c] += s * s * (u[0] * g[c][0] + u[1] * g[c][1]);
            }
        }
        f
    }

    pub fn forcing(&self, nu: f64, convection: bool) -> Field {
        let me = *self;
        Arc::new(move |x, t| me.forcing_at(x, t, nu, convection))
    }

    pub fn dirichlet(&self) -> Field {
        let me = *self;
        Arc::new(move |x, t| me.velocity(x, t))
    }

    /// Wall traction `-2 nu (Du n)_tau` of the exact solution.
    pub fn traction(&self, x: Vec2, n: Vec2, t: f64, nu: f64) -> Vec2 {
        let d = crate::fespace::sym(self.velocity_grad(x, t));
        let dn = [d[0][0] * n[0] + d[0][1] * n[1], d[1][0] * n[0] + d[1][1] * n[1]];
        let (_, dt) = TaylorHoodSpace::trace_split(dn, n);
        [-2.0 * nu * dt[0], -2.0 * nu * dt[1]]
    }

    /// Boundary correction `g = -2 nu (Du n)_tau - sigma(u_tau)` making the
    /// exact solution satisfy the slip condition with `law`.
    pub fn boundary_correction(&self, nu: f64, law: SlipLaw) -> BoundaryField {
        let me = *self;
        Arc::new(move |x, n, t| {
            let tr = me.traction(x, n, t, nu);
            let (_, ut) = TaylorHoodSpace::trace_split(me.velocity(x, t), n);
            let s = law.eval(ut, t);
            [tr[0] - s[0], tr[1] - s[1]]
        })
    }
}

impl ExactFields for ManufacturedSolution {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
        let (s, _) = self.scale(t);
        let u = self.u_hat(x);
        [s * u[0], s * u[1]]
    }

    fn velocity_grad(&self, x: Vec2, t: f64) -> Mat2 {
        let (s, _) = self.scale(t);
        let g = self.grad_u_hat(x);
        [[s * g[0][0], s * g[0][1]], [s * g[1][0], s * g[1][1]]]
    }

    fn pressure(&self, x: Vec2, t: f64) -> f64 {
        self.scale(t).0 * self.p_hat(x)
    }
}

/// Setup of a steady manufactured convergence study on the unit square with
/// a slip top wall.
#[derive(Clone, Copy, Debug)]
pub struct StudySpec {
    pub solution: ManufacturedSolution,
    pub law: SlipLaw,
    pub config: NitscheConfig,
    pub diagonal: Diagonal,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    pub errors: ErrorNorms,
    pub newton_iterations: usize,
    /// Observed rates against the previous level (`NaN` on the first).
    pub rate_l2_u: f64,
    pub rate_h1_u: f64,
    pub rate_l2_p: f64,
    pub rate_l2_un: f64,
}

/// Builds the manufactured steady problem on a mesh of `n` cells per side.
pub fn manufactured_problem(spec: &StudySpec, n: usize) -> Result<Problem> {
    let mesh = Mesh::unit_square(n, spec.diagonal).tag_boundary(top_wall_slip)?;
    let space = Arc::new(TaylorHoodSpace::new(mesh));
    let nu = spec.config.nu;
    Ok(Problem::new(space, spec.config, spec.law)?
        .with_forcing(spec.solution.forcing(nu, spec.config.include_convection))
        .with_dirichlet(spec.solution.dirichlet())
        .with_boundary_correction(spec.solution.boundary_correction(nu, spec.law)))
}

/// Errors and observed rates over nested refinements.
pub fn convergence_study(levels: &[usize], spec: &StudySpec, newton: &NewtonConfig) -> Result<Vec<StudyRow>> {
    if levels.len() < 3 {
        return Err(Error::Config("a convergence study needs at least three levels".into()));
    }
    if levels.windows(2).any(|w| w[0] == 0 || w[1] <= w[0] || w[1] % w[0] != 0) {
        return Err(Error::Config(format!("levels {levels:?} are not nested refinements")));
    }
    let mut rows: Vec<StudyRow> = Vec::new();
    for &n in levels {
        let (problem, x, reports) = steady_solve(|_| manufactured_problem(spec, n), &[1.0], None, newton)?;
        let state = problem.unpack(&x);
        let errors = problem.space.error_norms(&state, &spec.solution, 0.0);
        let h = 1.0 / n as f64;
        let rate = |prev: Option<&StudyRow>, f: fn(&ErrorNorms) -> f64| match prev {
            Some(p) => (f(&p.errors) / f(&errors)).ln() / (p.h / h).ln(),
            None => f64::NAN,
        };
        let prev = rows.last();
        rows.push(StudyRow {
            n,
            h,
            errors,
            newton_iterations: reports.iter().map(|r| r.iterations).sum(),
            rate_l2_u: rate(prev, |e| e.l2_u),
            rate_h1_u: rate(prev, |e| e.h1_u),
            rate_l2_p: rate(prev, |e| e.l2_p),
            rate_l2_un: rate(prev, |e| e.l2_normal),
        });
    }
    Ok(rows)
}

/// Table in the `n,h,err_L2_u,err_H1_u,err_L2_p,err_L2_un,rate_*` layout.
pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("n,h,err_L2_u,err_H1_u,err_L2_p,err_L2_un,rate_L2_u,rate_H1_u,rate_L2_p,rate_L2_un\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.h,
            r.errors.l2_u,
            r.errors.h1_u,
            r.errors.l2_p,
            r.errors.l2_normal,
            r.rate_l2_u,
            r.rate_h1_u,
            r.rate_l2_p,
            r.rate_l2_un
        ));
    }
    out
}
