//! Exponential-Euler marches for deterministic gPAM
//! `(∂_t − Δ) w = g(w) h` and its first and second variations.
//!
//! One step of the mild form reads
//! `w_{n+1} = P w_n + Φ Π[g(w_e) h]`, with `P = e^{Δt Δ}`,
//! `Φ = ∫₀^{Δt} e^{sΔ} ds` (both exact in Fourier), `Π` the dealiased
//! projection and `e = n + 1` (implicit, solved by Picard iteration) or
//! `e = n` (explicit). Variations are the exact derivatives of the
//! discrete map, so finite differences of the solver converge to them.

mod gfunction;
mod linear;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gfunction::GFunction;
pub use linear::{AdjointWeights, Linearization, PaddedPath};

use crate::error::{Error, Result};
use crate::torus_field::{PaddedField, SpectralGrid, TimePath, TorusField};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScheme {
    /// Nonlinearity at the new time level, Picard-iterated per step.
    #[default]
    Implicit,
    /// Nonlinearity frozen at the old time level.
    Explicit,
}

impl StepScheme {
    /// Node at which the nonlinearity of step `n → n+1` is evaluated.
    pub fn eval_node(self, n: usize) -> usize {
        match self {
            StepScheme::Implicit => n + 1,
            StepScheme::Explicit => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid_size: usize,
    pub horizon: f64,
    pub steps: usize,
    pub g: GFunction,
    #[serde(default)]
    pub scheme: StepScheme,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
}

fn default_picard_tol() -> f64 {
    1e-13
}

fn default_picard_max_iter() -> usize {
    200
}

impl SolverConfig {
    pub fn new(grid_size: usize, horizon: f64, steps: usize, g: GFunction) -> Self {
        Self {
            grid_size,
            horizon,
            steps,
            g,
            scheme: StepScheme::Implicit,
            picard_tol: default_picard_tol(),
            picard_max_iter: default_picard_max_iter(),
        }
    }

    pub fn with_scheme(mut self, scheme: StepScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        SpectralGrid::get(self.grid_size)?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.steps < 4 {
            return Err(Error::Config(format!("need at least 4 steps, got {}", self.steps)));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::Config("picard_tol must be positive".into()));
        }
        if self.picard_max_iter == 0 {
            return Err(Error::Config("picard_max_iter must be positive".into()));
        }
        self.g.validate()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub(crate) fn grid(&self) -> Result<Arc<SpectralGrid>> {
        SpectralGrid::get(self.grid_size)
    }

    /// `(P, Φ)` Fourier symbols for one step.
    pub(crate) fn step_symbols(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.grid()?;
        let dt = self.dt();
        let prop = grid.laplace_symbol().iter().map(|&l| (-l * dt).exp()).collect();
        let phi = grid
            .laplace_symbol()
            .iter()
            .map(|&l| if l == 0.0 { dt } else { -(-l * dt).exp_m1() / l })
            .collect();
        Ok((prop, phi))
    }

    fn check_field(&self, f: &TorusField) -> Result<()> {
        if f.n() != self.grid_size {
            return Err(Error::Shape {
                left: self.grid_size,
                right: f.n(),
            });
        }
        Ok(())
    }
}

/// Deterministic gPAM driven by the fixed field `zeta`.
pub fn solve_gpam(zeta: &TorusField, u0: &TorusField, cfg: &SolverConfig) -> Result<TimePath> {
    cfg.validate()?;
    cfg.check_field(zeta)?;
    let forcing = zeta.padded();
    march_nonlinear(u0, &forcing, 0.0, cfg)
}

/// March `(∂_t − Δ) u = g(u) f − κ g′(u) g(u)` with `f` given on the
/// padded grid.
pub(crate) fn march_nonlinear(
    u0: &TorusField,
    forcing: &PaddedField,
    kappa: f64,
    cfg: &SolverConfig,
) -> Result<TimePath> {
    cfg.check_field(u0)?;
    let (prop, phi) = cfg.step_symbols()?;
    let g = &cfg.g;
    let f = forcing.values();
    let rhs = |u: &TorusField| -> TorusField {
        let up = u.padded();
        let vals: Vec<f64> = up
            .values()
            .iter()
            .zip(f)
            .map(|(&x, &fx)| {
                let gx = g.value(x);
                if kappa == 0.0 {
                    gx * fx
                } else {
                    gx * fx - kappa * g.d1(x) * gx
                }
            })
            .collect();
        PaddedField::from_values(up.grid(), vals).project()
    };
    let step_from = |prev: &TorusField, source: &TorusField| -> TorusField {
        let mut next = prev.clone();
        next.apply_multiplier(&prop);
        let mut s = source.clone();
        s.apply_multiplier(&phi);
        next.axpy(1.0, &s).expect("same grid");
        next
    };

    let mut steps = Vec::with_capacity(cfg.steps + 1);
    steps.push(u0.clone());
    let trivial = g.is_zero();
    for n in 0..cfg.steps {
        let prev = &steps[n];
        let next = if trivial {
            let mut next = prev.clone();
            next.apply_multiplier(&prop);
            next
        } else {
            match cfg.scheme {
                StepScheme::Explicit => step_from(prev, &rhs(prev)),
                StepScheme::Implicit => {
                    let mut base = prev.clone();
                    base.apply_multiplier(&prop);
                    let mut u = prev.clone();
                    let mut converged = false;
                    for _ in 0..cfg.picard_max_iter {
                        let mut s = rhs(&u);
                        s.apply_multiplier(&phi);
                        s.axpy(1.0, &base).expect("same grid");
                        let inc = s.sub(&u).expect("same grid").l2_norm();
                        let scale = s.l2_norm();
                        u = s;
                        if !inc.is_finite() {
                            break;
                        }
                        if inc <= cfg.picard_tol * scale.max(1e-300) || inc == 0.0 {
                            converged = true;
                            break;
                        }
                    }
                    if !converged {
                        return Err(Error::PicardDivergence {
                            step: n + 1,
                            iterations: cfg.picard_max_iter,
                        });
                    }
                    u
                }
            }
        };
        if !next.modes().iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::BlowUp { step: n + 1 });
        }
        steps.push(next);
    }
    TimePath::new(steps, cfg.dt())
}

/// `v_{h,k}`: derivative of `h ↦ w_h` in direction `k`.
pub fn solve_first_variation(w: &TimePath, h: &TorusField, k: &TorusField, cfg: &SolverConfig) -> Result<TimePath> {
    Linearization::new(w, h, cfg)?.first_variation(k)
}

/// Part of the second variation driven by `g″(w) v_k v_l h`.
pub fn solve_second_variation_nonsingular(
    w: &TimePath,
    h: &TorusField,
    vk: &TimePath,
    vl: &TimePath,
    cfg: &SolverConfig,
) -> Result<TimePath> {
    let lin = Linearization::new(w, h, cfg)?;
    lin.second_variation_cm(&lin.pad_path(vk)?, &lin.pad_path(vl)?)
}

/// Part of the second variation driven by `g′(w)(v_k l + v_l k)`.
pub fn solve_second_variation_singular(
    w: &TimePath,
    h: &TorusField,
    vk: &TimePath,
    vl: &TimePath,
    k: &TorusField,
    l: &TorusField,
    cfg: &SolverConfig,
) -> Result<TimePath> {
    let lin = Linearization::new(w, h, cfg)?;
    lin.second_variation_wn(&lin.pad_path(vk)?, &lin.pad_path(vl)?, k, l)
}
