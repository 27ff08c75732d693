//! Regularised slip laws `v_tau -> sigma(v_tau, t)` with analytic Jacobians.
//!
//! Every law depends on `v` only through `|v|` and `v` itself, so it commutes
//! with rotations. Laws carry the metadata the penalty selection needs: the
//! growth exponent `r`, the monotonicity defect `lambda` and the dynamic
//! coefficient `beta_star`.

use crate::error::{Error, Result};
use crate::fespace::{Mat2, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LawKind {
    Navier {
        gamma: f64,
    },
    PowerLaw {
        k: f64,
        r: f64,
        epsilon: f64,
    },
    LerouxRajagopal {
        a: f64,
        b: f64,
        c: f64,
        theta: f64,
    },
    Tresca {
        mu_star: f64,
        epsilon: f64,
    },
    StickSlip {
        gamma_star: f64,
        mu_star: f64,
        epsilon: f64,
    },
    Fang {
        a: f64,
        b: f64,
        beta_exp: f64,
        epsilon: f64,
    },
    DynamicMovingWall {
        gamma_star: f64,
        beta_star: f64,
        theta_star: f64,
    },
}

/// Whether the law is treated as coercive or as an explicit relation that
/// relies on the Korn inequality with normal traces instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LawClass {
    Coercive,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlipLaw {
    pub kind: LawKind,
    lambda: f64,
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm2(v: Vec2) -> f64 {
    dot(v, v)
}

/// `s I + t v (x) v`
fn iso_plus_outer(s: f64, t: f64, v: Vec2) -> Mat2 {
    [
        [s + t * v[0] * v[0], t * v[0] * v[1]],
        [t * v[1] * v[0], s + t * v[1] * v[1]],
    ]
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{name} must be positive, got {value}")))
    }
}

fn check_nonnegative(name: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidLaw(format!("{name} must be nonnegative, got {value}")))
    }
}

impl SlipLaw {
    /// Linear friction `sigma = gamma v`. Negative slopes are admitted and
    /// produce the defect `lambda = -gamma`.
    pub fn navier(gamma: f64) -> Self {
        Self {
            kind: LawKind::Navier { gamma },
            lambda: (-gamma).max(0.0),
        }
    }

    /// `sigma = k (eps^2 + |v|^2)^((r - 2) / 2) v`.
    pub fn power_law(k: f64, r: f64, epsilon: f64) -> Result<Self> {
        check_positive("k", k)?;
        check_positive("epsilon", epsilon)?;
        if !(r >= 1.0) {
            return Err(Error::InvalidLaw(format!("exponent r must be >= 1, got {r}")));
        }
        Ok(Self {
            kind: LawKind::PowerLaw { k, r, epsilon },
            lambda: 0.0,
        })
    }

    /// `sigma = (a (1 + b |v|^2)^theta + c) v`; the defect is fitted.
    pub fn leroux_rajagopal(a: f64, b: f64, c: f64, theta: f64) -> Result<Self> {
        check_positive("a", a)?;
        check_positive("b", b)?;
        check_positive("c", c)?;
        let mut law = Self {
            kind: LawKind::LerouxRajagopal { a, b, c, theta },
            lambda: 0.0,
        };
        law.lambda = law.fitted_lambda();
        Ok(law)
    }

    /// `sigma = mu_star v / sqrt(|v|^2 + eps^2)`.
    pub fn tresca_regularized(mu_star: f64, epsilon: f64) -> Result<Self> {
        check_nonnegative("mu_star", mu_star)?;
        check_positive("epsilon", epsilon)?;
        Ok(Self {
            kind: LawKind::Tresca { mu_star, epsilon },
            lambda: 0.0,
        })
    }

    /// `sigma = gamma_star v + mu_star v / sqrt(eps^2 + |v|^2)`.
    pub fn stick_slip_regularized(gamma_star: f64, mu_star: f64, epsilon: f64) -> Result<Self> {
        check_nonnegative("gamma_star", gamma_star)?;
        check_nonnegative("mu_star", mu_star)?;
        check_positive("epsilon", epsilon)?;
        Ok(Self {
            kind: LawKind::StickSlip {
                gamma_star,
                mu_star,
                epsilon,
            },
            lambda: 0.0,
        })
    }

    /// `sigma = mu(|v|) v / sqrt(eps^2 + |v|^2)` with the decaying threshold
    /// `mu(s) = (a - b) exp(-beta_exp s) + b`.
    pub fn fang_regularized(a: f64, b: f64, beta_exp: f64, epsilon: f64) -> Result<Self> {
        check_nonnegative("b", b)?;
        check_nonnegative("beta_exp", beta_exp)?;
        check_positive("epsilon", epsilon)?;
        if !(a > b) {
            return Err(Error::InvalidLaw(format!(
                "threshold must decay: need a > b, got a = {a}, b = {b}"
            )));
        }
        Ok(Self {
            kind: LawKind::Fang {
                a,
                b,
                beta_exp,
                epsilon,
            },
            lambda: beta_exp * (a - b),
        })
    }

    /// Linear friction relative to a wall accelerating to unit speed over
    /// `theta_star`; `beta_star` weights the relaxation term.
    pub fn dynamic_moving_wall(gamma_star: f64, beta_star: f64, theta_star: f64) -> Result<Self> {
        check_nonnegative("gamma_star", gamma_star)?;
        check_nonnegative("beta_star", beta_star)?;
        check_positive("theta_star", theta_star)?;
        Ok(Self {
            kind: LawKind::DynamicMovingWall {
                gamma_star,
                beta_star,
                theta_star,
            },
            lambda: 0.0,
        })
    }

    /// Same law with a different declared monotonicity defect.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LawKind::Navier { .. } => "navier",
            LawKind::PowerLaw { .. } => "power_law",
            LawKind::LerouxRajagopal { .. } => "leroux_rajagopal",
            LawKind::Tresca { .. } => "tresca",
            LawKind::StickSlip { .. } => "stick_slip",
            LawKind::Fang { .. } => "fang",
            LawKind::DynamicMovingWall { .. } => "dynamic",
        }
    }

    /// Growth exponent.
    pub fn r(&self) -> f64 {
        match self.kind {
            LawKind::PowerLaw { r, .. } => r,
            LawKind::Tresca { .. } => 1.0,
            LawKind::StickSlip { gamma_star, .. } if gamma_star == 0.0 => 1.0,
            _ => 2.0,
        }
    }

    pub fn beta_star(&self) -> f64 {
        match self.kind {
            LawKind::DynamicMovingWall { beta_star, .. } => beta_star,
            _ => 0.0,
        }
    }

    pub fn class(&self) -> LawClass {
        match self.kind {
            LawKind::Navier { gamma } if gamma <= 0.0 => LawClass::Explicit,
            LawKind::DynamicMovingWall { gamma_star, .. } if gamma_star <= 0.0 => {
                LawClass::Explicit
            }
            _ => LawClass::Coercive,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self.kind, LawKind::DynamicMovingWall { .. })
    }

    /// Wall velocity `u_b(t)`; zero for static walls.
    pub fn wall_velocity(&self, t: f64) -> Vec2 {
        match self.kind {
            LawKind::DynamicMovingWall { theta_star, .. } => [(t / theta_star).clamp(0.0, 1.0), 0.0],
            _ => [0.0, 0.0],
        }
    }

    /// Backward difference quotient of the wall velocity over `[t - dt, t]`.
    pub fn wall_acceleration(&self, t: f64, dt: f64) -> Vec2 {
        let a = self.wall_velocity(t);
        let b = self.wall_velocity(t - dt);
        [(a[0] - b[0]) / dt, (a[1] - b[1]) / dt]
    }

    /// Threshold `mu(s)` of the decaying-threshold law.
    pub fn fang_threshold(&self, s: f64) -> Option<f64> {
        match self.kind {
            LawKind::Fang { a, b, beta_exp, .. } => Some((a - b) * (-beta_exp * s).exp() + b),
            _ => None,
        }
    }

    /// `(gamma_star, mu_star)` for laws of linear-plus-bounded type.
    fn threshold_bound(&self) -> Option<(f64, f64)> {
        match self.kind {
            LawKind::Tresca { mu_star, .. } => Some((0.0, mu_star)),
            LawKind::StickSlip {
                gamma_star,
                mu_star,
                ..
            } => Some((gamma_star, mu_star)),
            _ => None,
        }
    }

    /// Scalar profile: `sigma(v) = phi(|v|) v`. Returns `(phi, phi'(s) / s)`
    /// so the Jacobian is `phi I + (phi' / s) v (x) v`.
    fn profile(&self, s2: f64) -> (f64, f64) {
        match self.kind {
            LawKind::Navier { gamma } => (gamma, 0.0),
            LawKind::PowerLaw { k, r, epsilon } => {
                let q = epsilon * epsilon + s2;
                let phi = k * q.powf(0.5 * (r - 2.0));
                (phi, k * (r - 2.0) * q.powf(0.5 * (r - 2.0) - 1.0))
            }
            LawKind::LerouxRajagopal { a, b, c, theta } => {
                let q = 1.0 + b * s2;
                (a * q.powf(theta) + c, 2.0 * a * b * theta * q.powf(theta - 1.0))
            }
            LawKind::Tresca { mu_star, epsilon } => {
                let q = s2 + epsilon * epsilon;
                (mu_star / q.sqrt(), -mu_star / (q * q.sqrt()))
            }
            LawKind::StickSlip {
                gamma_star,
                mu_star,
                epsilon,
            } => {
                let q = s2 + epsilon * epsilon;
                (gamma_star + mu_star / q.sqrt(), -mu_star / (q * q.sqrt()))
            }
            LawKind::Fang {
                a,
                b,
                beta_exp,
                epsilon,
            } => {
                let s = s2.sqrt();
                let q = s2 + epsilon * epsilon;
                let e = (-beta_exp * s).exp();
                let mu = (a - b) * e + b;
                let phi = mu / q.sqrt();
                // d/ds [mu(s) / sqrt(q)] / s; the first part is -beta (a-b) e / (s sqrt q),
                // bounded near s = 0 only after multiplying by v (x) v.
                let dmu_over_s = if s > 0.0 {
                    -beta_exp * (a - b) * e / s
                } else {
                    0.0
                };
                (phi, dmu_over_s / q.sqrt() - mu / (q * q.sqrt()))
            }
            LawKind::DynamicMovingWall { gamma_star, .. } => (gamma_star, 0.0),
        }
    }

    /// Traction `sigma(v, t)`.
    pub fn eval(&self, v: Vec2, t: f64) -> Vec2 {
        let w = match self.kind {
            LawKind::DynamicMovingWall { .. } => {
                let ub = self.wall_velocity(t);
                [v[0] - ub[0], v[1] - ub[1]]
            }
            _ => v,
        };
        let (phi, _) = self.profile(norm2(w));
        [phi * w[0], phi * w[1]]
    }

    /// `d sigma / d v` at `(v, t)`.
    pub fn jacobian(&self, v: Vec2, t: f64) -> Mat2 {
        let w = match self.kind {
            LawKind::DynamicMovingWall { .. } => {
                let ub = self.wall_velocity(t);
                [v[0] - ub[0], v[1] - ub[1]]
            }
            _ => v,
        };
        let (phi, dphi) = self.profile(norm2(w));
        iso_plus_outer(phi, dphi, w)
    }

    /// Smallest `lambda >= 0` such that `sigma + lambda v` is monotone, from
    /// the radial and tangential eigenvalues of the Jacobian on a fine grid.
    fn fitted_lambda(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let n = 20_000;
        for i in 0..=n {
            // log-spaced magnitudes from 1e-6 to 1e4
            let s = 10f64.powf(-6.0 + 10.0 * i as f64 / n as f64);
            let (phi, dphi) = self.profile(s * s);
            worst = worst.min(phi).min(phi + dphi * s * s);
        }
        // margin for the grid resolution
        1.01 * (-worst).max(0.0)
    }

    /// Sample-based check of the structural assumptions at `t = 0`.
    pub fn certify(&self, samples: usize, radius: f64) -> Certificate {
        let t = 0.0;
        let lambda = self.lambda;
        let mut rng = ChaCha8Rng::seed_from_u64(0x51_1b_1a_77);
        let scale = match self.kind {
            LawKind::PowerLaw { epsilon, .. }
            | LawKind::Tresca { epsilon, .. }
            | LawKind::StickSlip { epsilon, .. }
            | LawKind::Fang { epsilon, .. } => epsilon,
            _ => 1e-6,
        };
        // magnitudes log-uniform from scale / 10 to radius, uniform directions
        let sample = |rng: &mut ChaCha8Rng| -> Vec2 {
            let lo = (0.1 * scale).ln();
            let hi = radius.ln();
            let s = if rng.random_bool(0.5) {
                rng.random_range(lo..hi).exp()
            } else {
                radius * rng.random::<f64>().sqrt()
            };
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            [s * th.cos(), s * th.sin()]
        };
        let points: Vec<Vec2> = (0..samples).map(|_| sample(&mut rng)).collect();

        let sigma0 = self.eval([0.0, 0.0], t);
        let zero_at_origin = if norm2(sigma0).sqrt() <= 1e-14 {
            Clause::pass(norm2(sigma0).sqrt())
        } else {
            Clause::fail(norm2(sigma0).sqrt(), vec![[0.0, 0.0]])
        };

        // pairs: random partners plus nearby radial and angular perturbations
        let mut min_defect = f64::INFINITY;
        let mut witness = Vec::new();
        let mut sigma_scale: f64 = 1e-300;
        for (i, &v1) in points.iter().enumerate() {
            let partners = [
                points[(i + 1) % points.len()],
                {
                    let f = 1.0 + rng.random_range(-0.2..0.2);
                    [v1[0] * f, v1[1] * f]
                },
                {
                    let th = rng.random_range(-0.3..0.3f64);
                    let (s, c) = th.sin_cos();
                    [c * v1[0] - s * v1[1], s * v1[0] + c * v1[1]]
                },
            ];
            let s1 = self.eval(v1, t);
            sigma_scale = sigma_scale.max(norm2(s1).sqrt() * norm2(v1).sqrt());
            for v2 in partners {
                let s2 = self.eval(v2, t);
                let dv = [v1[0] - v2[0], v1[1] - v2[1]];
                let ds = [s1[0] - s2[0], s1[1] - s2[1]];
                let dv2 = norm2(dv);
                if dv2 == 0.0 {
                    continue;
                }
                let defect = (dot(ds, dv) + lambda * dv2) / dv2;
                if defect < min_defect {
                    min_defect = defect;
                    witness = vec![v1, v2];
                }
            }
        }
        let mono_tol = 1e-9;
        let lambda_monotone = if min_defect >= -mono_tol {
            Clause::pass(min_defect)
        } else {
            Clause::fail(min_defect, witness)
        };

        let r = self.r();
        let coercive = if self.class() == LawClass::Explicit {
            Clause::not_applicable()
        } else {
            let shifted = |v: Vec2| {
                let s = self.eval(v, t);
                dot([s[0] + lambda * v[0], s[1] + lambda * v[1]], v)
            };
            let mut c_fit = f64::INFINITY;
            for &v in &points {
                let g = norm2(v).sqrt().powf(r) - 1.0;
                if g > 0.0 {
                    c_fit = c_fit.min(shifted(v) / g);
                }
            }
            let mut bad = None;
            if c_fit.is_finite() && c_fit > 0.0 {
                for &v in &points {
                    let g = norm2(v).sqrt().powf(r) - 1.0;
                    if shifted(v) < c_fit * g - 1e-12 * (1.0 + c_fit * g.abs()) {
                        bad = Some(v);
                        break;
                    }
                }
            }
            match (c_fit.is_finite() && c_fit > 0.0, bad) {
                (true, None) => Clause::pass(c_fit),
                (_, Some(v)) => Clause::fail(c_fit, vec![v]),
                (false, None) => Clause::fail(c_fit, Vec::new()),
            }
        };

        let bounded = match self.threshold_bound() {
            Some((gamma_star, mu_star)) if r == 1.0 => {
                let bound = gamma_star * radius + mu_star;
                let mut sup: f64 = 0.0;
                let mut arg = [0.0, 0.0];
                for &v in &points {
                    let m = norm2(self.eval(v, t)).sqrt();
                    if m > sup {
                        sup = m;
                        arg = v;
                    }
                }
                if sup <= bound {
                    Clause::pass(sup)
                } else {
                    Clause::fail(sup, vec![arg])
                }
            }
            _ => Clause::not_applicable(),
        };

        Certificate {
            law: self.name(),
            lambda,
            r,
            zero_at_origin,
            lambda_monotone,
            coercive,
            bounded,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clause {
    pub status: ClauseStatus,
    /// Measured quantity: residual, minimum defect, fitted constant or sup.
    pub value: f64,
    pub witness: Vec<Vec2>,
}

impl Clause {
    fn pass(value: f64) -> Self {
        Self {
            status: ClauseStatus::Pass,
            value,
            witness: Vec::new(),
        }
    }

    fn fail(value: f64, witness: Vec<Vec2>) -> Self {
        Self {
            status: ClauseStatus::Fail,
            value,
            witness,
        }
    }

    fn not_applicable() -> Self {
        Self {
            status: ClauseStatus::NotApplicable,
            value: f64::NAN,
            witness: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.status != ClauseStatus::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub law: &'static str,
    pub lambda: f64,
    pub r: f64,
    /// `sigma(0) = 0`.
    pub zero_at_origin: Clause,
    /// `(sigma(v1) - sigma(v2)).(v1 - v2) + lambda |v1 - v2|^2 >= 0`.
    pub lambda_monotone: Clause,
    /// `(sigma(v) + lambda v).v >= c (|v|^r - 1)` with fitted `c > 0`.
    pub coercive: Clause,
    /// `sup |sigma| <= gamma_star radius + mu_star` for `r = 1`.
    pub bounded: Clause,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.clauses().iter().all(|(_, c)| c.ok())
    }

    pub fn clauses(&self) -> [(&'static str, &Clause); 4] {
        [
            ("zero_at_origin", &self.zero_at_origin),
            ("lambda_monotone", &self.lambda_monotone),
            ("coercive", &self.coercive),
            ("bounded", &self.bounded),
        ]
    }

    /// Names of violated clauses.
    pub fn violations(&self) -> Vec<&'static str> {
        self.clauses()
            .iter()
            .filter(|(_, c)| !c.ok())
            .map(|(n, _)| *n)
            .collect()
    }
}
