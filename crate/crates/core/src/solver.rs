//! Newton's method with backtracking, load continuation and backward Euler
//! time marching.

use crate::error::{Error, Result};
use crate::fespace::{SystemState, Vec2};
use crate::forms::{EnergyTerms, Problem, Step, WallSample};
use crate::linalg::{norm, Factorization};
use log::{debug, info};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Backtracking factor in `(0, 1)`.
    pub ls_factor: f64,
    pub ls_max_halvings: usize,
    /// Keep the last factored Jacobian while it still contracts the
    /// residual, across iterations and time steps.
    pub reuse_jacobian: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_iter: 50,
            ls_factor: 0.5,
            ls_max_halvings: 8,
            reuse_jacobian: true,
        }
    }
}

impl NewtonConfig {
    fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("Newton tolerances must be positive".into()));
        }
        if !(self.ls_factor > 0.0 && self.ls_factor < 1.0) {
            return Err(Error::Config(format!(
                "line search factor must lie in (0, 1), got {}",
                self.ls_factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub residual: f64,
    /// Total number of step halvings.
    pub halvings: usize,
    /// Jacobian factorizations performed.
    pub factorizations: usize,
}

/// A stale step is kept only if it reduces the residual at least this much.
const REUSE_CONTRACTION: f64 = 0.5;

/// Solves `R(x) = 0` from `x0`. `label` tags the log lines.
pub fn newton_solve(
    problem: &Problem,
    step: &Step,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    label: usize,
) -> Result<(Vec<f64>, NewtonReport)> {
    newton_solve_with(problem, step, x0, cfg, label, &mut None)
}

/// As [`newton_solve`], starting from a possibly stale factorization in
/// `cache` (used only with `reuse_jacobian`) and leaving the last one there.
pub fn newton_solve_with(
    problem: &Problem,
    step: &Step,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    label: usize,
    cache: &mut Option<Factorization>,
) -> Result<(Vec<f64>, NewtonReport)> {
    cfg.validate()?;
    if !cfg.reuse_jacobian {
        *cache = None;
    }
    let mut x = x0;
    let mut r = problem.residual(&x, step)?;
    let mut rn = norm(&r);
    let mut report = NewtonReport {
        initial_residual: rn,
        residual: rn,
        ..Default::default()
    };
    let tol = cfg.abs_tol.max(cfg.rel_tol * rn);
    if rn <= cfg.abs_tol {
        debug!("step {label} iter 0 resid {rn:.3e} ls 0");
        return Ok((x, report));
    }
    for k in 1..=cfg.max_iter {
        let mut accepted = None;
        if let Some(lu) = cache.as_ref() {
            let mut dx: Vec<f64> = r.iter().map(|v| -v).collect();
            if lu.solve(&mut dx).is_ok() {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                let rt = problem.residual(&trial, step)?;
                let tn = norm(&rt);
                if tn.is_finite() && tn <= REUSE_CONTRACTION * rn {
                    accepted = Some((tn, trial, rt, 0));
                }
            }
        }
        let (tn, trial, rt, m) = match accepted {
            Some(a) => a,
            None => {
                let jac = problem.jacobian(&x, step)?;
                let lu = problem.lu_solver().factor(&jac)?;
                report.factorizations += 1;
                let mut dx: Vec<f64> = r.iter().map(|v| -v).collect();
                lu.solve(&mut dx)?;
                *cache = cfg.reuse_jacobian.then_some(lu);
                match line_search(problem, step, &x, &dx, rn, cfg)? {
                    Some(b) => b,
                    None => {
                        return Err(Error::Divergence {
                            iterations: k,
                            residual: rn,
                            last_iterate: x,
                        })
                    }
                }
            }
        };
        x = trial;
        r = rt;
        rn = tn;
        report.iterations = k;
        report.residual = rn;
        report.halvings += m;
        info!("step {label} iter {k} resid {rn:.6e} ls {m}");
        if rn <= tol {
            return Ok((x, report));
        }
    }
    Err(Error::Divergence {
        iterations: cfg.max_iter,
        residual: rn,
        last_iterate: x,
    })
}

/// Backtracking along `dx`; returns the best finite trial with its residual
/// and the number of halvings, stopping at the first sufficient decrease.
#[allow(clippy::type_complexity)]
fn line_search(
    problem: &Problem,
    step: &Step,
    x: &[f64],
    dx: &[f64],
    rn: f64,
    cfg: &NewtonConfig,
) -> Result<Option<(f64, Vec<f64>, Vec<f64>, usize)>> {
    let mut lambda = 1.0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    for m in 0..=cfg.ls_max_halvings {
        let trial: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + lambda * b).collect();
        let rt = problem.residual(&trial, step)?;
        let tn = norm(&rt);
        if tn.is_finite() && best.as_ref().is_none_or(|b| tn < b.0) {
            best = Some((tn, trial, rt, m));
        }
        if tn.is_finite() && tn <= (1.0 - 1e-4 * lambda) * rn {
            break;
        }
        lambda *= cfg.ls_factor;
    }
    Ok(best)
}

/// Steady solve through a continuation schedule. `build(load)` returns the
/// problem at a load value; the last schedule entry is the target.
pub fn steady_solve<F>(
    build: F,
    schedule: &[f64],
    x0: Option<Vec<f64>>,
    cfg: &NewtonConfig,
) -> Result<(Problem, Vec<f64>, Vec<NewtonReport>)>
where
    F: Fn(f64) -> Result<Problem>,
{
    if schedule.is_empty() {
        return Err(Error::Config("empty continuation schedule".into()));
    }
    let mut reports = Vec::new();
    let mut x = x0;
    let mut last = None;
    for (i, &load) in schedule.iter().enumerate() {
        let problem = build(load)?;
        let guess = match x.take() {
            Some(mut g) => {
                problem.impose_dirichlet(&mut g, 0.0);
                g
            }
            None => problem.initial_guess(0.0),
        };
        let (sol, rep) = newton_solve(&problem, &Step::steady(0.0), guess, cfg, i)
            .map_err(|e| Error::ContinuationFailed {
                load,
                source: Box::new(e),
            })?;
        reports.push(rep);
        x = Some(sol);
        last = Some(problem);
    }
    Ok((last.unwrap(), x.unwrap(), reports))
}

/// Steady solve at `load`, falling back to an evenly spaced continuation
/// with `2, 4, 8, ...` stages when Newton fails from zero.
pub fn steady_solve_auto<F>(
    build: F,
    load: f64,
    cfg: &NewtonConfig,
    max_stages: usize,
) -> Result<(Problem, Vec<f64>, Vec<NewtonReport>)>
where
    F: Fn(f64) -> Result<Problem>,
{
    let mut stages = 1;
    loop {
        let schedule: Vec<f64> = (1..=stages).map(|i| load * i as f64 / stages as f64).collect();
        match steady_solve(&build, &schedule, None, cfg) {
            Ok(out) => return Ok(out),
            Err(Error::ContinuationFailed { .. }) if 2 * stages <= max_stages => {
                info!("continuation with {stages} stages failed, retrying with {}", 2 * stages);
                stages *= 2;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Point probe: value of `u . direction` at `point`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Probe {
    pub point: Vec2,
    pub direction: Vec2,
}

#[derive(Clone, Debug, Default)]
pub struct MarchOptions {
    pub t_end: f64,
    pub dt: f64,
    pub probes: Vec<Probe>,
    /// Times at which wall functionals are stored.
    pub snapshot_times: Vec<f64>,
    pub record_energy: bool,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// `t_j = j dt`, including `t_0 = 0`.
    pub times: Vec<f64>,
    /// `probe_values[p][j]`
    pub probe_values: Vec<Vec<f64>>,
    pub snapshots: Vec<(f64, Vec<WallSample>)>,
    /// Energy terms of steps `1..=m`.
    pub energy: Vec<EnergyTerms>,
    pub newton: Vec<NewtonReport>,
    pub final_state: SystemState,
}

/// Number of steps for `t_end / dt`; rejects non-integer ratios.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    if !(t_end >= 0.0) {
        return Err(Error::Config(format!("final time must be nonnegative, got {t_end}")));
    }
    let m = (t_end / dt).round();
    if (m * dt - t_end).abs() > 1e-9 * t_end.max(dt) {
        return Err(Error::Config(format!(
            "final time {t_end} is not a multiple of the step {dt}"
        )));
    }
    Ok(m as usize)
}

/// Backward Euler from the packed state `x0` at `t = 0`.
pub fn time_march(
    problem: &Problem,
    x0: Vec<f64>,
    opts: &MarchOptions,
    cfg: &NewtonConfig,
) -> Result<Trajectory> {
    let steps = step_count(opts.t_end, opts.dt)?;
    if x0.len() != problem.n_dofs() {
        return Err(Error::StateLength {
            expected: problem.n_dofs(),
            found: x0.len(),
        });
    }
    let space = &problem.space;
    let n_u = space.n_velocity();
    let located: Vec<_> = opts
        .probes
        .iter()
        .map(|p| {
            space
                .mesh
                .locate(p.point)
                .ok_or_else(|| Error::Config(format!("probe point {:?} outside the mesh", p.point)))
        })
        .collect::<Result<_>>()?;
    let probe = |u: &[f64], out: &mut Vec<Vec<f64>>| {
        for (i, (p, &(cell, xi))) in opts.probes.iter().zip(&located).enumerate() {
            let v = space.evaluate(u, cell, xi).value;
            out[i].push(v[0] * p.direction[0] + v[1] * p.direction[1]);
        }
    };
    let snapshot_due = |j: usize| {
        let t = j as f64 * opts.dt;
        opts.snapshot_times
            .iter()
            .any(|&s| (s - t).abs() < 0.5 * opts.dt)
    };

    let mut traj = Trajectory {
        times: vec![0.0],
        probe_values: vec![Vec::with_capacity(steps + 1); opts.probes.len()],
        snapshots: Vec::new(),
        energy: Vec::new(),
        newton: Vec::new(),
        final_state: problem.unpack(&x0),
    };
    probe(&x0[..n_u], &mut traj.probe_values);
    if snapshot_due(0) {
        traj.snapshots.push((0.0, problem.boundary_functionals(&x0[..n_u], 0.0)));
    }

    let mut x = x0;
    let mut cache = None;
    for j in 1..=steps {
        let t = j as f64 * opts.dt;
        let u_old = x[..n_u].to_vec();
        let step = Step::unsteady(t, opts.dt, &u_old);
        let mut guess = x.clone();
        problem.impose_dirichlet(&mut guess, t);
        let (sol, rep) = newton_solve_with(problem, &step, guess, cfg, j, &mut cache).map_err(|e| Error::StepFailed {
            step: j,
            t,
            source: Box::new(e),
        })?;
        x = sol;
        traj.newton.push(rep);
        traj.times.push(t);
        probe(&x[..n_u], &mut traj.probe_values);
        if opts.record_energy {
            traj.energy.push(problem.energy_terms(&x[..n_u], &step));
        }
        if snapshot_due(j) {
            traj.snapshots.push((t, problem.boundary_functionals(&x[..n_u], t)));
        }
    }
    traj.final_state = problem.unpack(&x);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::TaylorHoodSpace;
    use crate::forms::{NitscheConfig, Variant};
    use crate::mesh::{top_wall_slip, Diagonal, Mesh};
    use crate::sliplaw::SlipLaw;
    use std::sync::Arc;

    fn relaxation_problem(n: usize, beta_star: f64) -> Problem {
        let mesh = Mesh::unit_square(n, Diagonal::Right).tag_boundary(top_wall_slip).unwrap();
        let law = SlipLaw::dynamic_moving_wall(1.0, beta_star, 0.01).unwrap();
        let config = NitscheConfig {
            variant: Variant::Antisymmetric,
            ..Default::default()
        };
        Problem::new(Arc::new(TaylorHoodSpace::new(mesh)), config, law).unwrap()
    }

    fn probe_series(problem: &Problem, dt: f64, t_end: f64, cfg: &NewtonConfig) -> Vec<f64> {
        let opts = MarchOptions {
            t_end,
            dt,
            probes: vec![Probe {
                point: [0.5, 1.0],
                direction: [1.0, 0.0],
            }],
            ..Default::default()
        };
        time_march(problem, problem.initial_guess(0.0), &opts, cfg).unwrap().probe_values.remove(0)
    }

    #[test]
    fn step_count_requires_whole_number_of_steps() {
        assert_eq!(step_count(1.0, 0.005).unwrap(), 200);
        assert_eq!(step_count(0.0, 0.1).unwrap(), 0);
        assert!(matches!(step_count(1.0, 0.3), Err(Error::Config(_))));
        assert!(matches!(step_count(1.0, 0.0), Err(Error::NonPositiveStep(_))));
        assert!(step_count(-1.0, 0.1).is_err());
    }

    #[test]
    fn bad_newton_settings_are_rejected() {
        let p = relaxation_problem(2, 0.0);
        let x = p.initial_guess(0.0);
        for cfg in [
            NewtonConfig { abs_tol: 0.0, ..Default::default() },
            NewtonConfig { ls_factor: 1.0, ..Default::default() },
        ] {
            assert!(matches!(newton_solve(&p, &Step::steady(0.0), x.clone(), &cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn warm_start_does_not_change_converged_steps() {
        let p = relaxation_problem(4, 1.0);
        let n_u = p.space.n_velocity();
        let cfg = NewtonConfig::default();
        let mut x = p.initial_guess(0.0);
        for j in 1..=4 {
            let t = j as f64 * 0.005;
            let u_old = x[..n_u].to_vec();
            let step = Step::unsteady(t, 0.005, &u_old);
            let (warm, _) = newton_solve(&p, &step, x.clone(), &cfg, j).unwrap();
            let (cold, _) = newton_solve(&p, &step, p.initial_guess(t), &cfg, j).unwrap();
            let diff = warm.iter().zip(&cold).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = warm.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            assert!(diff <= 1e-8 * scale, "step {j}: {diff:e}");
            x = warm;
        }
    }

    #[test]
    fn jacobian_reuse_reaches_the_same_trajectory() {
        let p = relaxation_problem(4, 2.0);
        let fresh = NewtonConfig {
            reuse_jacobian: false,
            ..Default::default()
        };
        let a = probe_series(&p, 0.005, 0.05, &NewtonConfig::default());
        let b = probe_series(&p, 0.005, 0.05, &fresh);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn probe_converges_at_first_order_in_the_step() {
        let p = relaxation_problem(4, 1.0);
        let cfg = NewtonConfig::default();
        let t_end = 0.1;
        let coarse_dt = 0.0025;
        let series: Vec<Vec<f64>> = [1, 2, 4]
            .iter()
            .map(|&k| {
                let s = probe_series(&p, coarse_dt / k as f64, t_end, &cfg);
                // restrict to the coarse grid
                s.iter().step_by(k).copied().collect()
            })
            .collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e1 = dist(&series[0], &series[1]);
        let e2 = dist(&series[1], &series[2]);
        let rate = (e1 / e2).log2();
        assert!(rate >= 0.9, "rate {rate} from {e1:e} {e2:e}");
    }

    #[test]
    fn continuation_doubles_stages_until_newton_succeeds() {
        let mesh = Mesh::unit_square(4, Diagonal::Right).tag_boundary(top_wall_slip).unwrap();
        let space = Arc::new(TaylorHoodSpace::new(mesh));
        let build = |load: f64| -> Result<Problem> {
            Ok(Problem::new(space.clone(), NitscheConfig::default(), SlipLaw::navier(1.0))?
                .with_forcing(Arc::new(move |x: Vec2, _| [load * 50.0 * x[1] * x[1], 0.0])))
        };
        let strict = NewtonConfig {
            max_iter: 3,
            ..Default::default()
        };
        let (_, x, reports) = steady_solve_auto(build, 1.0, &strict, 64).unwrap();
        assert!(reports.len() > 1 && reports.len().is_power_of_two());
        let (_, x_ref, _) = steady_solve(build, &[1.0], None, &NewtonConfig::default()).unwrap();
        let diff = x.iter().zip(&x_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8);
        assert!(matches!(
            steady_solve_auto(build, 1.0, &NewtonConfig { max_iter: 1, ..Default::default() }, 1),
            Err(Error::ContinuationFailed { .. })
        ));
        assert!(steady_solve(build, &[], None, &strict).is_err());
    }
}
