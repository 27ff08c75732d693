//! Configuration-driven experiment runner: steady non-monotone slip, unsteady
//! stick-slip, dynamic wall slip, convergence tables and stability constants.
//!
//! Every CSV starts with a `# config: {...}` line echoing the resolved
//! configuration, followed by a header row.

use crate::error::{Error, Result};
use crate::fespace::{ErrorNorms, SystemState, TaylorHoodSpace, Vec2};
use crate::forms::{MeanPressureMode, NitscheConfig, Penalty, Problem, Variant, WallSample};
use crate::mesh::{top_wall_slip, Diagonal, FacetTag, Mesh};
use crate::sliplaw::{LawKind, SlipLaw};
use crate::solver::{steady_solve_auto, time_march, MarchOptions, NewtonConfig, NewtonReport, Probe, Trajectory};
use crate::stability::constants_report;
use crate::svg::{plot, Series, PALETTE};
use crate::verify::{convergence_study, study_csv, Family, ManufacturedSolution, StudySpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SmoothNonmonotone,
    NonsmoothNonmonotone,
    StickSlip,
    Dynamic,
    Convergence,
    Constants,
}

/// A number or the string `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSetting {
    Value(f64),
    Named(String),
}

/// Dirichlet data on the no-slip walls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallData {
    Zero,
    /// Trace of the manufactured velocity.
    Exact,
}

/// Flat experiment configuration. Unset optional entries are filled with the
/// experiment's defaults by [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub diagonal: Diagonal,
    pub nu: f64,
    pub dt: f64,
    pub t_end: Option<f64>,
    pub alpha: AlphaSetting,
    pub variant: Variant,
    pub convection: Option<bool>,
    pub mean_pressure: MeanPressureMode,
    pub dirichlet: WallData,
    /// Law name; the experiment's law when unset.
    pub law: Option<String>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub theta: Option<f64>,
    pub k: Option<f64>,
    pub r: Option<f64>,
    pub beta_exp: Option<f64>,
    pub epsilon: Option<f64>,
    pub mu_star: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_star: Option<f64>,
    pub theta_star: Option<f64>,
    pub amplitudes: Option<Vec<f64>>,
    pub gamma_stars: Option<Vec<f64>>,
    pub beta_stars: Option<Vec<f64>>,
    pub snapshot_times: Option<Vec<f64>>,
    pub probe: Vec2,
    pub family: Option<Family>,
    pub levels: Vec<usize>,
    pub max_stages: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub reuse_jacobian: bool,
    pub record_energy: bool,
    pub infsup: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::SmoothNonmonotone,
            n: 75,
            diagonal: Diagonal::Right,
            nu: 1.0,
            dt: 0.005,
            t_end: None,
            alpha: AlphaSetting::Value(10.0),
            variant: Variant::Symmetric,
            convection: None,
            mean_pressure: MeanPressureMode::Multiplier,
            dirichlet: WallData::Zero,
            law: None,
            a: None,
            b: None,
            c: None,
            theta: None,
            k: None,
            r: None,
            beta_exp: None,
            epsilon: None,
            mu_star: None,
            gamma: None,
            gamma_star: None,
            theta_star: None,
            amplitudes: None,
            gamma_stars: None,
            beta_stars: None,
            snapshot_times: None,
            probe: [0.5, 1.0],
            family: None,
            levels: vec![16, 32, 64],
            max_stages: 32,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_iter: 50,
            reuse_jacobian: true,
            record_energy: true,
            infsup: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()))
}

fn fill<T: Clone>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

impl ExperimentConfig {
    /// Parses a JSON object or `key = value` lines (`#` starts a comment),
    /// then applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut map = if text.trim_start().starts_with('{') {
            match serde_json::from_str::<Value>(text)? {
                Value::Object(m) => m,
                _ => return Err(Error::Config("configuration must be an object".into())),
            }
        } else {
            let mut m = Map::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .or_else(|| line.split_once(':'))
                    .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
                m.insert(k.trim().trim_matches('"').to_string(), parse_scalar(v.trim().trim_end_matches(',')));
            }
            m
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            map.insert(k.trim().to_string(), parse_scalar(v));
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Config of an experiment with every default filled in.
    pub fn for_experiment(kind: ExperimentKind) -> Self {
        Self {
            experiment: kind,
            ..Default::default()
        }
        .resolve()
        .expect("defaults are valid")
    }

    /// Fills the experiment-dependent defaults and validates.
    pub fn resolve(mut self) -> Result<Self> {
        use ExperimentKind::*;
        match self.experiment {
            SmoothNonmonotone => {
                fill(&mut self.law, "leroux_rajagopal".into());
                fill(&mut self.amplitudes, vec![1.0, 10.0]);
                fill(&mut self.family, Family::TaylorGreen);
                fill(&mut self.convection, true);
            }
            NonsmoothNonmonotone => {
                fill(&mut self.law, "fang".into());
                fill(&mut self.amplitudes, vec![0.6, 5.0]);
                fill(&mut self.family, Family::Polynomial);
                fill(&mut self.convection, true);
            }
            StickSlip => {
                fill(&mut self.law, "stick_slip".into());
                fill(&mut self.amplitudes, vec![1.0]);
                fill(&mut self.gamma_stars, vec![0.0, 2.0]);
                fill(&mut self.snapshot_times, vec![0.5, 1.5, 2.0]);
                fill(&mut self.t_end, 2.0);
                fill(&mut self.family, Family::Polynomial);
                fill(&mut self.convection, true);
            }
            Dynamic => {
                fill(&mut self.law, "dynamic".into());
                fill(&mut self.gamma_star, 1.0);
                fill(&mut self.beta_stars, vec![0.0, 0.5, 1.0, 2.0]);
                fill(&mut self.t_end, 1.0);
                fill(&mut self.convection, true);
            }
            Convergence => {
                fill(&mut self.law, "navier".into());
                fill(&mut self.amplitudes, vec![1.0]);
                fill(&mut self.family, Family::TaylorGreen);
                fill(&mut self.convection, false);
            }
            Constants => {
                fill(&mut self.law, "navier".into());
                fill(&mut self.convection, true);
            }
        }
        let law = self.law.clone().unwrap();
        match law.as_str() {
            "leroux_rajagopal" => {
                fill(&mut self.a, 1.0);
                fill(&mut self.b, 0.1);
                fill(&mut self.c, 0.001);
                fill(&mut self.theta, -0.75);
            }
            "fang" => {
                fill(&mut self.a, 1.6);
                fill(&mut self.b, 1.5);
                fill(&mut self.beta_exp, 10.0);
                fill(&mut self.epsilon, 2e-4);
            }
            "stick_slip" | "tresca" => {
                fill(&mut self.mu_star, 1.0);
                fill(&mut self.epsilon, 2e-4);
                fill(&mut self.gamma_star, 0.0);
            }
            "dynamic" => {
                fill(&mut self.gamma_star, 1.0);
                fill(&mut self.theta_star, 0.01);
            }
            "navier" => fill(&mut self.gamma, 1.0),
            "power_law" => {
                fill(&mut self.k, 1.0);
                fill(&mut self.r, 1.5);
                fill(&mut self.epsilon, 1e-3);
            }
            other => return Err(Error::Config(format!("unknown law '{other}'"))),
        }
        fill(&mut self.amplitudes, vec![1.0]);
        fill(&mut self.snapshot_times, Vec::new());
        fill(&mut self.gamma_stars, vec![self.gamma_star.unwrap_or(0.0)]);
        fill(&mut self.beta_stars, vec![0.0]);
        fill(&mut self.family, Family::TaylorGreen);

        if self.n == 0 {
            return Err(Error::Config("mesh resolution n must be positive".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if let AlphaSetting::Named(s) = &self.alpha {
            if s != "auto" {
                return Err(Error::Config(format!("alpha must be a number or \"auto\", got '{s}'")));
            }
        }
        if self.max_stages == 0 {
            return Err(Error::Config("max_stages must be positive".into()));
        }
        Ok(self)
    }

    pub fn penalty(&self) -> Penalty {
        match self.alpha {
            AlphaSetting::Value(a) => Penalty::Fixed(a),
            AlphaSetting::Named(_) => Penalty::Auto,
        }
    }

    pub fn nitsche(&self) -> NitscheConfig {
        NitscheConfig {
            nu: self.nu,
            penalty: self.penalty(),
            variant: self.variant,
            beta: 0.0,
            include_convection: self.convection.unwrap_or(true),
            mean_pressure_mode: self.mean_pressure,
        }
    }

    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
            reuse_jacobian: self.reuse_jacobian,
            ..Default::default()
        }
    }

    /// The configured law; `gamma_star` and `beta_star` override the
    /// configured values for sweeps.
    pub fn slip_law(&self, gamma_star: Option<f64>, beta_star: Option<f64>) -> Result<SlipLaw> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("missing law parameter '{name}'")));
        let law = self.law.as_deref().unwrap_or("navier");
        match law {
            "navier" => Ok(SlipLaw::navier(need(self.gamma, "gamma")?)),
            "power_law" => SlipLaw::power_law(need(self.k, "k")?, need(self.r, "r")?, need(self.epsilon, "epsilon")?),
            "leroux_rajagopal" => SlipLaw::leroux_rajagopal(
                need(self.a, "a")?,
                need(self.b, "b")?,
                need(self.c, "c")?,
                need(self.theta, "theta")?,
            ),
            "tresca" => SlipLaw::tresca_regularized(need(self.mu_star, "mu_star")?, need(self.epsilon, "epsilon")?),
            "stick_slip" => SlipLaw::stick_slip_regularized(
                gamma_star.or(self.gamma_star).unwrap_or(0.0),
                need(self.mu_star, "mu_star")?,
                need(self.epsilon, "epsilon")?,
            ),
            "fang" => SlipLaw::fang_regularized(
                need(self.a, "a")?,
                need(self.b, "b")?,
                need(self.beta_exp, "beta_exp")?,
                need(self.epsilon, "epsilon")?,
            ),
            "dynamic" => SlipLaw::dynamic_moving_wall(
                gamma_star.or(self.gamma_star).unwrap_or(1.0),
                beta_star.unwrap_or(0.0),
                need(self.theta_star, "theta_star")?,
            ),
            other => Err(Error::Config(format!("unknown law '{other}'"))),
        }
    }

    fn solution(&self, amplitude: f64) -> ManufacturedSolution {
        ManufacturedSolution {
            family: self.family.unwrap_or(Family::TaylorGreen),
            amplitude,
            scaling: crate::verify::TimeScaling::Static,
        }
    }

    pub fn space(&self) -> Result<Arc<TaylorHoodSpace>> {
        let mesh = Mesh::unit_square(self.n, self.diagonal).tag_boundary(top_wall_slip)?;
        Ok(Arc::new(TaylorHoodSpace::new(mesh)))
    }

    /// Single-line JSON echo.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

/// Unregularised constitutive relation `|sigma|` as a function of `|u_tau|`;
/// for threshold laws the value at zero is the threshold.
pub fn exact_relation(law: &SlipLaw, s: f64) -> f64 {
    match law.kind {
        LawKind::Tresca { mu_star, .. } => mu_star,
        LawKind::StickSlip { gamma_star, mu_star, .. } => gamma_star * s + mu_star,
        LawKind::Fang { a, b, beta_exp, .. } => (a - b) * (-beta_exp * s).exp() + b,
        _ => {
            let v = law.eval([s, 0.0], 0.0);
            v[0].hypot(v[1])
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyOutcome {
    pub amplitude: f64,
    pub problem: Problem,
    pub state: SystemState,
    pub wall: Vec<WallSample>,
    /// Errors against the manufactured solution.
    pub errors: ErrorNorms,
    /// Errors of the interpolant of the manufactured solution.
    pub interpolation: ErrorNorms,
    pub reports: Vec<NewtonReport>,
}

impl SteadyOutcome {
    pub fn max_u_tau(&self) -> f64 {
        self.wall.iter().map(WallSample::u_tau_abs).fold(0.0, f64::max)
    }

    pub fn max_sigma(&self) -> f64 {
        self.wall.iter().map(WallSample::sigma_abs).fold(0.0, f64::max)
    }
}

/// Steady manufactured-forcing run at one amplitude, with load continuation
/// on the amplitude when Newton fails from rest.
pub fn run_steady(cfg: &ExperimentConfig, amplitude: f64) -> Result<SteadyOutcome> {
    let space = cfg.space()?;
    let law = cfg.slip_law(None, None)?;
    let nitsche = cfg.nitsche();
    let convection = nitsche.include_convection;
    let build = |load: f64| -> Result<Problem> {
        let sol = cfg.solution(load);
        let mut p = Problem::new(space.clone(), nitsche, law)?.with_forcing(sol.forcing(cfg.nu, convection));
        if cfg.dirichlet == WallData::Exact {
            p = p.with_dirichlet(sol.dirichlet());
        }
        Ok(p)
    };
    let (problem, x, reports) = steady_solve_auto(build, amplitude, &cfg.newton(), cfg.max_stages)?;
    let state = problem.unpack(&x);
    let exact = cfg.solution(amplitude);
    let errors = space.error_norms(&state, &exact, 0.0);
    let interpolation = space.error_norms(&space.interpolate_state(&exact, 0.0), &exact, 0.0);
    Ok(SteadyOutcome {
        amplitude,
        wall: problem.boundary_functionals(&state.u, 0.0),
        problem,
        state,
        errors,
        interpolation,
        reports,
    })
}

fn wall_tangent(space: &TaylorHoodSpace, point: Vec2) -> Vec2 {
    let mesh = &space.mesh;
    let dist = |f: &crate::mesh::BoundaryFacet| {
        let a = mesh.vertices[f.vertices[0]];
        let b = mesh.vertices[f.vertices[1]];
        let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        (m[0] - point[0]).hypot(m[1] - point[1])
    };
    mesh.facets_with_tag(FacetTag::Slip)
        .min_by(|a, b| dist(a.1).total_cmp(&dist(b.1)))
        .map(|(_, f)| [f.normal[1], -f.normal[0]])
        .unwrap_or([1.0, 0.0])
}

/// Unsteady run from rest with the time-scaled manufactured forcing.
pub fn run_stick_slip(cfg: &ExperimentConfig, gamma_star: f64) -> Result<Trajectory> {
    let space = cfg.space()?;
    let law = cfg.slip_law(Some(gamma_star), None)?;
    let amplitude = cfg.amplitudes.as_ref().and_then(|a| a.first().copied()).unwrap_or(1.0);
    let sol = cfg.solution(amplitude).time_linear();
    let nitsche = cfg.nitsche();
    let mut problem = Problem::new(space.clone(), nitsche, law)?.with_forcing(sol.forcing(cfg.nu, nitsche.include_convection));
    if cfg.dirichlet == WallData::Exact {
        problem = problem.with_dirichlet(sol.dirichlet());
    }
    let opts = MarchOptions {
        t_end: cfg.t_end.unwrap_or(2.0),
        dt: cfg.dt,
        probes: vec![Probe {
            point: cfg.probe,
            direction: wall_tangent(&space, cfg.probe),
        }],
        snapshot_times: cfg.snapshot_times.clone().unwrap_or_default(),
        record_energy: cfg.record_energy,
    };
    let x0 = problem.initial_guess(0.0);
    time_march(&problem, x0, &opts, &cfg.newton())
}

/// Unforced run from rest driven by the moving wall.
pub fn run_dynamic(cfg: &ExperimentConfig, beta_star: f64) -> Result<Trajectory> {
    let space = cfg.space()?;
    let law = cfg.slip_law(None, Some(beta_star))?;
    let problem = Problem::new(space.clone(), cfg.nitsche(), law)?;
    let opts = MarchOptions {
        t_end: cfg.t_end.unwrap_or(1.0),
        dt: cfg.dt,
        probes: vec![Probe {
            point: cfg.probe,
            direction: wall_tangent(&space, cfg.probe),
        }],
        snapshot_times: cfg.snapshot_times.clone().unwrap_or_default(),
        record_energy: cfg.record_energy,
    };
    let x0 = problem.initial_guess(0.0);
    time_march(&problem, x0, &opts, &cfg.newton())
}

/// `t,v_slip` series of the first probe.
pub fn probe_csv(cfg: &ExperimentConfig, traj: &Trajectory) -> String {
    let mut out = format!("# config: {}\nt,v_slip\n", cfg.echo());
    for (t, v) in traj.times.iter().zip(&traj.probe_values[0]) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

/// `x,u_tau,sigma,un` with tangential components along `(n_y, -n_x)`.
pub fn wall_csv(cfg: &ExperimentConfig, wall: &[WallSample], normal: Vec2) -> String {
    let tan = [normal[1], -normal[0]];
    let mut out = format!("# config: {}\nx,u_tau,sigma,un\n", cfg.echo());
    for s in wall {
        let ut = s.u_tau[0] * tan[0] + s.u_tau[1] * tan[1];
        let sg = s.sigma[0] * tan[0] + s.sigma[1] * tan[1];
        out.push_str(&format!("{},{},{},{}\n", s.x[0], ut, sg, s.un));
    }
    out
}

/// `u_tau_abs,sigma_abs,sigma_exact_abs`.
pub fn cr_csv(cfg: &ExperimentConfig, wall: &[WallSample], law: &SlipLaw) -> String {
    let mut out = format!("# config: {}\nu_tau_abs,sigma_abs,sigma_exact_abs\n", cfg.echo());
    for s in wall {
        let u = s.u_tau_abs();
        out.push_str(&format!("{},{},{}\n", u, s.sigma_abs(), exact_relation(law, u)));
    }
    out
}

fn wall_svg(title: &str, wall: &[WallSample]) -> String {
    plot(
        title,
        "x",
        "magnitude",
        &[
            Series::line("|u_tau|", wall.iter().map(|s| (s.x[0], s.u_tau_abs())).collect(), PALETTE[0]),
            Series::line("|sigma|", wall.iter().map(|s| (s.x[0], s.sigma_abs())).collect(), PALETTE[1]),
        ],
    )
}

fn cr_svg(title: &str, wall: &[WallSample], law: &SlipLaw) -> String {
    let smax = wall.iter().map(WallSample::u_tau_abs).fold(0.0, f64::max).max(1e-12);
    let curve: Vec<(f64, f64)> = (0..=200)
        .map(|i| {
            let s = smax * i as f64 / 200.0;
            (s, exact_relation(law, s))
        })
        .collect();
    plot(
        title,
        "|u_tau|",
        "|sigma|",
        &[
            Series::line("exact", curve, PALETTE[1]),
            Series::markers("computed", wall.iter().map(|s| (s.u_tau_abs(), s.sigma_abs())).collect(), PALETTE[0]),
        ],
    )
}

/// Files written and a flat summary of one run.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub entries: BTreeMap<String, Value>,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    fn set(&mut self, key: impl Into<String>, v: impl Into<Value>) {
        self.entries.insert(key.into(), v.into());
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "summary": self.entries,
            "files": self.files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

fn top_normal() -> Vec2 {
    [0.0, 1.0]
}

fn run_steady_experiment(cfg: &ExperimentConfig, out: &mut Writer, sum: &mut RunSummary) -> Result<()> {
    let law = cfg.slip_law(None, None)?;
    let nonsmooth = cfg.experiment == ExperimentKind::NonsmoothNonmonotone;
    for &amp in cfg.amplitudes.as_deref().unwrap_or(&[1.0]) {
        let o = run_steady(cfg, amp)?;
        let tag = format!("L{amp}");
        out.write(&format!("wall_{tag}.csv"), &wall_csv(cfg, &o.wall, top_normal()))?;
        out.write(&format!("cr_{tag}.csv"), &cr_csv(cfg, &o.wall, &law))?;
        out.write(&format!("wall_{tag}.svg"), &wall_svg(&format!("wall profile, amplitude {amp}"), &o.wall))?;
        out.write(&format!("cr_{tag}.svg"), &cr_svg(&format!("slip relation, amplitude {amp}"), &o.wall, &law))?;
        sum.set("dofs", o.problem.n_dofs());
        sum.set(format!("{tag}.alpha"), o.problem.alpha);
        sum.set(format!("{tag}.max_u_tau"), o.max_u_tau());
        sum.set(format!("{tag}.max_sigma"), o.max_sigma());
        sum.set(format!("{tag}.newton_iterations"), o.reports.iter().map(|r| r.iterations).sum::<usize>());
        sum.set(format!("{tag}.continuation_stages"), o.reports.len());
        sum.set(format!("{tag}.l2_error_u"), o.errors.l2_u);
        sum.set(format!("{tag}.l2_error_p"), o.errors.l2_p);
        if nonsmooth {
            let threshold = 1.25 * cfg.nu * amp;
            sum.set(format!("{tag}.interpolation_l2_u"), o.interpolation.l2_u);
            sum.set(format!("{tag}.sigma_threshold"), threshold);
            sum.set(format!("{tag}.no_slip"), o.max_u_tau() <= 1e-3);
        }
    }
    Ok(())
}

fn run_stick_slip_experiment(cfg: &ExperimentConfig, out: &mut Writer, sum: &mut RunSummary) -> Result<()> {
    for &g in cfg.gamma_stars.as_deref().unwrap_or(&[0.0]) {
        let law = cfg.slip_law(Some(g), None)?;
        let traj = run_stick_slip(cfg, g)?;
        for (t, wall) in &traj.snapshots {
            let tag = format!("g{g}_t{t}");
            out.write(&format!("wall_{tag}.csv"), &wall_csv(cfg, wall, top_normal()))?;
            out.write(&format!("cr_{tag}.csv"), &cr_csv(cfg, wall, &law))?;
            out.write(&format!("wall_{tag}.svg"), &wall_svg(&format!("gamma* = {g}, t = {t}"), wall))?;
            out.write(&format!("cr_{tag}.svg"), &cr_svg(&format!("gamma* = {g}, t = {t}"), wall, &law))?;
            sum.set(
                format!("{tag}.max_u_tau"),
                wall.iter().map(WallSample::u_tau_abs).fold(0.0, f64::max),
            );
            sum.set(
                format!("{tag}.max_sigma"),
                wall.iter().map(WallSample::sigma_abs).fold(0.0, f64::max),
            );
        }
        sum.set(format!("g{g}.steps"), traj.newton.len());
        sum.set(format!("g{g}.newton_iterations"), traj.newton.iter().map(|r| r.iterations).sum::<usize>());
        sum.set("dofs", traj.final_state.u.len() + traj.final_state.p.len());
    }
    Ok(())
}

fn energy_csv(cfg: &ExperimentConfig, traj: &Trajectory) -> String {
    let mut out = format!("# config: {}\nt,balance_relative,quadratic_form\n", cfg.echo());
    for (t, e) in traj.times[1..].iter().zip(&traj.energy) {
        out.push_str(&format!("{t},{},{}\n", e.relative_residual(), e.quadratic_form));
    }
    out
}

fn run_dynamic_experiment(cfg: &ExperimentConfig, out: &mut Writer, sum: &mut RunSummary) -> Result<()> {
    let mut series = Vec::new();
    for (k, &b) in cfg.beta_stars.as_deref().unwrap_or(&[0.0]).iter().enumerate() {
        let traj = run_dynamic(cfg, b)?;
        let tag = format!("b{b}");
        out.write(&format!("probe_{tag}.csv"), &probe_csv(cfg, &traj))?;
        if !traj.energy.is_empty() {
            out.write(&format!("energy_{tag}.csv"), &energy_csv(cfg, &traj))?;
            let worst = traj.energy.iter().map(|e| e.relative_residual()).fold(0.0, f64::max);
            let qmin = traj.energy.iter().map(|e| e.quadratic_form).fold(f64::INFINITY, f64::min);
            sum.set(format!("{tag}.energy_residual_max"), worst);
            sum.set(format!("{tag}.quadratic_form_min"), qmin);
        }
        let v = &traj.probe_values[0];
        let max_drop = v.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let last = *v.last().unwrap();
        sum.set(format!("{tag}.probe_final"), last);
        sum.set(format!("{tag}.probe_max"), peak);
        sum.set(format!("{tag}.probe_max_drop"), max_drop);
        sum.set(format!("{tag}.overshoot_ratio"), if last != 0.0 { peak / last } else { f64::NAN });
        sum.set(format!("{tag}.newton_iterations"), traj.newton.iter().map(|r| r.iterations).sum::<usize>());
        series.push(Series::line(
            format!("beta* = {b}"),
            traj.times.iter().copied().zip(v.iter().copied()).collect(),
            PALETTE[k % PALETTE.len()],
        ));
    }
    out.write("probe.svg", &plot("slip velocity at the probe", "t", "u . t", &series))?;
    Ok(())
}

fn run_convergence(cfg: &ExperimentConfig, out: &mut Writer, sum: &mut RunSummary) -> Result<()> {
    let amplitude = cfg.amplitudes.as_ref().and_then(|a| a.first().copied()).unwrap_or(1.0);
    let spec = StudySpec {
        solution: cfg.solution(amplitude),
        law: cfg.slip_law(None, None)?,
        config: cfg.nitsche(),
        diagonal: cfg.diagonal,
    };
    let rows = convergence_study(&cfg.levels, &spec, &cfg.newton())?;
    out.write("convergence.csv", &format!("# config: {}\n{}", cfg.echo(), study_csv(&rows)))?;
    if let Some(last) = rows.last() {
        sum.set("rate_h1_u", last.rate_h1_u);
        sum.set("rate_l2_u", last.rate_l2_u);
        sum.set("rate_l2_p", last.rate_l2_p);
        sum.set("rate_l2_un", last.rate_l2_un);
        sum.set("finest_h1_error", last.errors.h1_u);
    }
    let pts = |f: fn(&crate::verify::StudyRow) -> f64| rows.iter().map(|r| (r.h.log10(), f(r).log10())).collect();
    out.write(
        "convergence.svg",
        &plot(
            "errors against mesh size (log10)",
            "log10 h",
            "log10 error",
            &[
                Series::line("L2 u", pts(|r| r.errors.l2_u), PALETTE[0]),
                Series::line("H1 u", pts(|r| r.errors.h1_u), PALETTE[1]),
                Series::line("L2 p", pts(|r| r.errors.l2_p), PALETTE[2]),
                Series::line("L2 u.n", pts(|r| r.errors.l2_normal), PALETTE[3]),
            ],
        ),
    )?;
    Ok(())
}

fn run_constants(cfg: &ExperimentConfig, out: &mut Writer, sum: &mut RunSummary) -> Result<()> {
    let space = cfg.space()?;
    let law = cfg.slip_law(None, None)?;
    let r = constants_report(&space, cfg.nu, &law, cfg.infsup)?;
    let mut rows: Vec<(&str, Value)> = vec![
        ("c_tr", r.c_tr.into()),
        ("c_trk", r.c_trk.into()),
        ("korn_min_eig", r.korn_min_eig.into()),
        ("lambda", r.lambda.into()),
        ("c_lambda", r.c_lambda.into()),
    ];
    if let Some(i) = r.infsup {
        rows.push(("infsup", i.into()));
    }
    rows.push(("alpha_auto", r.alpha_auto.map_or(Value::Null, Value::from)));
    let mut csv = format!("# config: {}\nkey,value\n", cfg.echo());
    for (k, v) in &rows {
        csv.push_str(&format!("{k},{v}\n"));
        sum.set(*k, v.clone());
    }
    out.write("constants.csv", &csv)?;
    Ok(())
}

/// Runs the configured experiment, writing CSV, SVG and `summary.txt` to
/// the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let cfg = cfg.clone().resolve()?;
    let mut out = Writer::new(&cfg.output_dir)?;
    let mut sum = RunSummary::default();
    sum.set("experiment", serde_json::to_value(cfg.experiment)?);
    sum.set("n", cfg.n);
    match cfg.experiment {
        ExperimentKind::SmoothNonmonotone | ExperimentKind::NonsmoothNonmonotone => {
            run_steady_experiment(&cfg, &mut out, &mut sum)?
        }
        ExperimentKind::StickSlip => run_stick_slip_experiment(&cfg, &mut out, &mut sum)?,
        ExperimentKind::Dynamic => run_dynamic_experiment(&cfg, &mut out, &mut sum)?,
        ExperimentKind::Convergence => run_convergence(&cfg, &mut out, &mut sum)?,
        ExperimentKind::Constants => run_constants(&cfg, &mut out, &mut sum)?,
    }
    let text = format!("# config: {}\n{}", cfg.echo(), sum.to_text());
    out.write("summary.txt", &text)?;
    sum.files = out.files;
    Ok(sum)
}
