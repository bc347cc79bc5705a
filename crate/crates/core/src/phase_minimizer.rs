//! The phase functional `𝓕(h) = F(w_h) + ½‖h‖²`, its adjoint gradient,
//! a multi-start L-BFGS minimiser and diagnostics of the minimiser.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpam_solver::{solve_gpam, Linearization, SolverConfig};
use crate::linalg::{eigen_sym, Matrix};
use crate::observables::Observable;
use crate::torus_field::{TimePath, TorusField};

#[derive(Clone, Debug)]
pub struct PhaseProblem {
    pub cfg: SolverConfig,
    pub u0: TorusField,
    pub observable: Observable,
}

impl PhaseProblem {
    pub fn new(cfg: SolverConfig, u0: TorusField, observable: Observable) -> Result<Self> {
        cfg.validate()?;
        if u0.n() != cfg.grid_size || observable.weight().n() != cfg.grid_size {
            return Err(Error::Shape {
                left: cfg.grid_size,
                right: if u0.n() != cfg.grid_size { u0.n() } else { observable.weight().n() },
            });
        }
        Ok(Self { cfg, u0, observable })
    }

    pub fn solve(&self, h: &TorusField) -> Result<TimePath> {
        solve_gpam(h, &self.u0, &self.cfg)
    }

    pub fn value(&self, h: &TorusField) -> Result<f64> {
        phase_functional(h, &self.observable, &self.u0, &self.cfg)
    }

    pub fn gradient(&self, h: &TorusField) -> Result<TorusField> {
        Ok(self.value_and_gradient(h)?.1)
    }

    /// `(𝓕(h), ∇𝓕(h), w_h)`
    pub fn value_and_gradient(&self, h: &TorusField) -> Result<(f64, TorusField, TimePath)> {
        let w = self.solve(h)?;
        let value = self.observable.eval(&w)? + 0.5 * h.dot(h);
        let kernel = self.observable.d1_riesz_kernel(&w)?;
        let mut grad = h.clone();
        if !kernel.is_zero() && !self.cfg.g.is_zero() {
            let lin = Linearization::new(&w, h, &self.cfg)?;
            let adj = lin.adjoint(&kernel)?;
            grad.axpy(1.0, &lin.source_gradient(&adj))?;
        }
        Ok((value, grad, w))
    }
}

pub fn phase_functional(h: &TorusField, f: &Observable, u0: &TorusField, cfg: &SolverConfig) -> Result<f64> {
    let w = solve_gpam(h, u0, cfg)?;
    Ok(f.eval(&w)? + 0.5 * h.inner_l2(h)?)
}

pub fn phase_gradient(h: &TorusField, f: &Observable, u0: &TorusField, cfg: &SolverConfig) -> Result<TorusField> {
    PhaseProblem::new(cfg.clone(), u0.clone(), f.clone())?.gradient(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Steepest descent with Armijo backtracking.
    GradientDescent,
    /// Limited-memory BFGS directions with Armijo backtracking.
    Lbfgs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub step_rule: StepRule,
    pub memory: usize,
    /// Number of starting points; the first is `h = 0`.
    pub starts: usize,
    pub start_amplitude: f64,
    pub seed: u64,
    /// Compare the adjoint gradient with a central difference every this
    /// many iterations (0 disables).
    pub check_every: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-10,
            step_rule: StepRule::Lbfgs,
            memory: 8,
            starts: 5,
            start_amplitude: 0.5,
            seed: 0,
            check_every: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StartSummary {
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinimizerResult {
    #[serde(skip)]
    pub h_star: Option<TorusField>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Fitted power-law exponent of the shell spectrum, when the fit exists.
    pub spectrum_decay: Option<f64>,
    pub starts: Vec<StartSummary>,
    /// Converged starts ended at values differing by more than the tolerance.
    pub multiple_basins: bool,
    /// Largest relative discrepancy seen by the periodic gradient check.
    pub max_gradient_check_error: f64,
}

impl MinimizerResult {
    pub fn h_star(&self) -> &TorusField {
        self.h_star.as_ref().expect("result carries its minimiser")
    }

    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterExceeded(self.iterations))
        }
    }
}

struct Run {
    h: TorusField,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
    check_error: f64,
}

fn directional_check(p: &PhaseProblem, h: &TorusField, g: &TorusField, seed: u64) -> Result<f64> {
    let k = TorusField::random_smooth(h.n(), seed, 1.0, 1.0)?;
    let eps = 1e-4;
    let mut hp = h.clone();
    hp.axpy(eps, &k)?;
    let mut hm = h.clone();
    hm.axpy(-eps, &k)?;
    let fd = (p.value(&hp)? - p.value(&hm)?) / (2.0 * eps);
    let dd = g.dot(&k);
    Ok((fd - dd).abs() / dd.abs().max(1e-12))
}

fn run_from(p: &PhaseProblem, h0: TorusField, opt: &MinimizeOptions, start: usize) -> Result<Run> {
    let (mut f, mut g, _) = p.value_and_gradient(&h0)?;
    let mut h = h0;
    let mut gn = g.l2_norm();
    let mut history: Vec<(TorusField, TorusField, f64)> = Vec::new();
    let mut check_error: f64 = 0.0;
    let mut it = 0;
    while gn > opt.tol && it < opt.max_iter {
        if opt.check_every > 0 && it % opt.check_every == 0 && gn > 1e-6 {
            let seed = opt.seed ^ ((start as u64) << 32) ^ it as u64;
            check_error = check_error.max(directional_check(p, &h, &g, seed)?);
        }
        it += 1;
        let mut d = match opt.step_rule {
            StepRule::GradientDescent => g.scaled(-1.0),
            StepRule::Lbfgs => two_loop(&g, &history),
        };
        let mut slope = d.dot(&g);
        if !(slope < 0.0) {
            d = g.scaled(-1.0);
            slope = -gn * gn;
            history.clear();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = h.clone();
            trial.axpy(t, &d)?;
            match p.value_and_gradient(&trial) {
                Ok((ft, gt, _)) => {
                    let armijo = ft <= f + 1e-4 * t * slope;
                    // near the minimum the decrease drowns in rounding
                    let flat = ft <= f + 1e-13 * (1.0 + f.abs()) && gt.l2_norm() < gn;
                    if armijo || flat {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                Err(e) if e.is_hypothesis_violation() => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        let Some((hn, fnew, gnew)) = accepted else { break };
        let s = hn.sub(&h)?;
        let y = gnew.sub(&g)?;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.dot(&s).sqrt() * y.dot(&y).sqrt() && sy > 0.0 {
            history.push((s, y, 1.0 / sy));
            if history.len() > opt.memory {
                history.remove(0);
            }
        }
        h = hn;
        f = fnew;
        g = gnew;
        gn = g.l2_norm();
    }
    Ok(Run {
        h,
        value: f,
        grad_norm: gn,
        iterations: it,
        converged: gn <= opt.tol,
        check_error,
    })
}

fn two_loop(g: &TorusField, history: &[(TorusField, TorusField, f64)]) -> TorusField {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y).expect("same grid");
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.last() {
        q.scale(s.dot(y) / y.dot(y));
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s).expect("same grid");
    }
    q.scaled(-1.0)
}

/// Multi-start minimisation of `𝓕`; starts run in parallel and the best
/// converged run wins.
pub fn minimize(p: &PhaseProblem, opt: &MinimizeOptions) -> Result<MinimizerResult> {
    if opt.starts == 0 || !(opt.tol > 0.0) {
        return Err(Error::Config("minimiser needs at least one start and a positive tolerance".into()));
    }
    let n = p.cfg.grid_size;
    let starts = (0..opt.starts)
        .map(|i| {
            if i == 0 {
                TorusField::zeros(n)
            } else {
                TorusField::random_smooth(n, opt.seed.wrapping_add(i as u64), 2.0, opt.start_amplitude)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, h0)| run_from(p, h0, opt, i))
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<StartSummary> = runs
        .iter()
        .map(|r| StartSummary {
            value: r.value,
            grad_norm: r.grad_norm,
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();
    let conv: Vec<f64> = runs.iter().filter(|r| r.converged).map(|r| r.value).collect();
    let multiple_basins = conv.iter().any(|a| conv.iter().any(|b| (a - b).abs() > opt.tol.max(1e-10 * (1.0 + a.abs()))));
    let best = runs
        .into_iter()
        .min_by(|a, b| (!a.converged, a.value).partial_cmp(&(!b.converged, b.value)).expect("finite values"))
        .expect("at least one start");
    let spectrum_decay = match regularity_diagnostic(&best.h, 0.05) {
        Ok(r) => Some(r.exponent),
        Err(Error::DegenerateFit(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MinimizerResult {
        value: best.value,
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        converged: best.converged,
        spectrum_decay,
        starts: summaries,
        multiple_basins,
        max_gradient_check_error: best.check_error,
        h_star: Some(best.h),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// Slope of log shell power against log radius.
    pub exponent: f64,
    /// `(mean radius, mean |ĥ(k)|²)` per populated shell.
    pub shells: Vec<(f64, f64)>,
    /// `(s, ‖h‖_{H^s})`
    pub norms: Vec<(f64, f64)>,
    /// Largest `s` on the scan whose norm is insensitive to discarding
    /// the upper half of the spectrum.
    pub stable_s: Option<f64>,
}

/// Shell-averaged spectrum fit and Sobolev norms of `h`.
pub fn regularity_diagnostic(h: &TorusField, kappa: f64) -> Result<RegularityReport> {
    let n = h.n();
    let grid = h.grid().clone();
    let top = n / 2 - 1;
    let mut sum_r = vec![0.0; top + 1];
    let mut sum_p = vec![0.0; top + 1];
    let mut count = vec![0usize; top + 1];
    for (i, c) in h.modes().iter().enumerate() {
        if !grid.is_active(i) {
            continue;
        }
        let (k1, k2) = grid.wavevector(i);
        let r = ((k1 * k1 + k2 * k2) as f64).sqrt();
        let shell = r.round() as usize;
        if shell == 0 || shell > top {
            continue;
        }
        sum_r[shell] += r;
        sum_p[shell] += c.norm_sqr();
        count[shell] += 1;
    }
    let power: Vec<f64> = (0..=top).map(|s| if count[s] > 0 { sum_p[s] / count[s] as f64 } else { 0.0 }).collect();
    let max = power.iter().cloned().fold(0.0, f64::max);
    let shells: Vec<(f64, f64)> = (1..=top)
        .filter(|&s| count[s] > 0 && power[s] > 1e-28 * max && max > 0.0)
        .map(|s| (sum_r[s] / count[s] as f64, power[s]))
        .collect();
    if shells.len() < 4 {
        return Err(Error::DegenerateFit(shells.len()));
    }
    let xs: Vec<f64> = shells.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = shells.iter().map(|s| s.1.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let exponent = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    let norms = [0.0, 0.5, 1.0 - 2.0 * kappa, 1.0].iter().map(|&s| (s, h.sobolev_norm(s))).collect();

    let quarter = (n / 4) as i64;
    let mut low = h.clone();
    {
        let mask: Vec<f64> = (0..n * n)
            .map(|i| {
                let (k1, k2) = grid.wavevector(i);
                if k1.abs() < quarter && k2.abs() < quarter {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        low.apply_multiplier(&mask);
    }
    let mut stable_s = None;
    for j in 0..=12 {
        let s = 0.25 * j as f64;
        let (full, coarse) = (h.sobolev_norm(s), low.sobolev_norm(s));
        if (full - coarse).abs() <= 0.01 * full {
            stable_s = Some(s);
        } else {
            break;
        }
    }
    Ok(RegularityReport {
        exponent,
        shells,
        norms,
        stable_s,
    })
}

/// `1 + λ_min(A)`; positive exactly when `Id + A` is positive definite on
/// the truncation.
pub fn nondegeneracy_check(a: &Matrix) -> Result<f64> {
    if a.n() == 0 {
        return Ok(1.0);
    }
    Ok(1.0 + eigen_sym(a)?.values[0])
}
