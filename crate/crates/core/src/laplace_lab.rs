//! Monte-Carlo estimators around a fixed minimiser: the renormalised
//! second-order term `λ_δ`, the Hessian `Q̂_δ` and its chaos identities,
//! the Laplace integral `J(ε)` and the ratio `R(ε) = e^{𝓕(𝗁)/ε²} J(ε)`.
//!
//! Samples are computed in parallel and reduced in index order, so every
//! estimate is bit-reproducible whatever the number of workers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpam_solver::{march_nonlinear, AdjointWeights, Linearization, SolverConfig};
use crate::linalg::Matrix;
use crate::noise_and_renorm::{renorm_constant, sample_noise_indexed, MollifierShape, MollifierSpec, NoiseSample};
use crate::observables::Observable;
use crate::phase_minimizer::PhaseProblem;
use crate::torus_field::{BasisFunction, TimePath, TorusField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed_base: u64,
    pub delta: Option<f64>,
    pub mollifier: Option<MollifierShape>,
    pub config_hash: String,
}

impl MCEstimate {
    pub fn from_samples(samples: &[f64], seed_base: u64, mollifier: Option<&MollifierSpec>) -> Self {
        let n = samples.len();
        let (mean, stderr) = mean_stderr(samples);
        Self {
            mean,
            stderr,
            n_samples: n,
            seed_base,
            delta: mollifier.map(|m| m.delta),
            mollifier: mollifier.map(|m| m.shape),
            config_hash: String::new(),
        }
    }

    pub fn with_hash(mut self, hash: &str) -> Self {
        self.config_hash = hash.to_string();
        self
    }

    /// `(mean − target) / √(stderr² + extra²)`
    pub fn z_score(&self, target: f64, extra_stderr: f64) -> f64 {
        let se = self.stderr.hypot(extra_stderr);
        if se == 0.0 {
            if self.mean == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - target) / se
        }
    }
}

/// Sample mean and `sd/√n`, summed in index order.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

fn check_count(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

/// Per-sample pieces of `Q̂_δ = D²F[u1,u1] + DF(ũ2) + DF(g″(w) u1² h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleTerms {
    /// `D²F|_w[u1, u1]`
    pub d2: f64,
    /// `DF|_w(ũ2)`
    pub lambda: f64,
    /// `DF|_w` of the march driven by `g″(w) u1² h`.
    pub cm: f64,
}

impl SampleTerms {
    pub fn q_hat(&self) -> f64 {
        self.d2 + self.lambda + self.cm
    }
}

/// Fixed `(h, w_h)` with the linearisation and the adjoint of `DF|_w`
/// cached for repeated sampling.
pub struct LaplaceLab {
    observable: Observable,
    u0: TorusField,
    h: TorusField,
    lin: Linearization,
    adjoint: AdjointWeights,
}

impl LaplaceLab {
    pub fn new(problem: &PhaseProblem, h: &TorusField) -> Result<Self> {
        let w = problem.solve(h)?;
        Self::from_parts(h, &w, &problem.observable, &problem.u0, &problem.cfg)
    }

    pub fn from_parts(h: &TorusField, w: &TimePath, f: &Observable, u0: &TorusField, cfg: &SolverConfig) -> Result<Self> {
        let lin = Linearization::new(w, h, cfg)?;
        let adjoint = lin.adjoint(&f.d1_riesz_kernel(w)?)?;
        Ok(Self {
            observable: f.clone(),
            u0: u0.clone(),
            h: h.clone(),
            lin,
            adjoint,
        })
    }

    pub fn cfg(&self) -> &SolverConfig {
        self.lin.cfg()
    }

    pub fn w(&self) -> &TimePath {
        self.lin.w()
    }

    pub fn h(&self) -> &TorusField {
        &self.h
    }

    pub fn observable(&self) -> &Observable {
        &self.observable
    }

    pub fn u0(&self) -> &TorusField {
        &self.u0
    }

    /// Source of the `ũ2` equation at node `e`.
    fn u2_source(&self, e: usize, u1: Option<&[f64]>, xi: &[f64], c_delta: f64) -> Option<Vec<f64>> {
        let g1 = self.lin.dg_padded(e);
        let g0 = self.lin.g_padded(e);
        if g1.iter().all(|&x| x == 0.0) {
            return None;
        }
        Some(match u1 {
            Some(u) => g1
                .iter()
                .zip(g0)
                .zip(u.iter().zip(xi))
                .map(|((d, g), (a, x))| 2.0 * d * (a * x - g * c_delta))
                .collect(),
            None => g1.iter().zip(g0).map(|(d, g)| -2.0 * d * g * c_delta).collect(),
        })
    }

    fn cm_source(&self, e: usize, u1: Option<&[f64]>) -> Option<Vec<f64>> {
        let u = u1?;
        let g2 = self.lin.d2g_padded(e);
        Some(
            g2.iter()
                .zip(u)
                .zip(self.lin.h_padded())
                .map(|((g, a), h)| g * a * a * h)
                .collect(),
        )
    }

    /// `u1` and `ũ2` marched explicitly.
    pub fn linear_pair(&self, xi: &TorusField, c_delta: f64) -> Result<(TimePath, TimePath)> {
        let u1 = self.lin.first_variation(xi)?;
        let u1p = self.lin.pad_path(&u1)?;
        let xip = self.lin.pad(xi);
        let u2 = self.lin.march(|e| self.u2_source(e, u1p.node(e), &xip, c_delta))?;
        Ok((u1, u2))
    }

    /// `û2`, the full second-order term, marched explicitly.
    pub fn full_second_order(&self, xi: &TorusField, c_delta: f64) -> Result<(TimePath, TimePath)> {
        let u1 = self.lin.first_variation(xi)?;
        let u1p = self.lin.pad_path(&u1)?;
        let xip = self.lin.pad(xi);
        let u2 = self.lin.march(|e| match (self.u2_source(e, u1p.node(e), &xip, c_delta), self.cm_source(e, u1p.node(e))) {
            (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
            (a, b) => a.or(b),
        })?;
        Ok((u1, u2))
    }

    /// Sample terms through the cached adjoint: one linear march per call.
    pub fn sample_terms(&self, xi: &TorusField, c_delta: f64) -> Result<SampleTerms> {
        let u1 = self.lin.first_variation(xi)?;
        let w = self.lin.w();
        let d2 = self.observable.d2(w, &u1, &u1)?;
        let u1p = self.lin.pad_path(&u1)?;
        let xip = self.lin.pad(xi);
        let lambda = self
            .lin
            .pair_sources(&self.adjoint, |e| self.u2_source(e, u1p.node(e), &xip, c_delta));
        let cm = self.lin.pair_sources(&self.adjoint, |e| self.cm_source(e, u1p.node(e)));
        Ok(SampleTerms { d2, lambda, cm })
    }

    fn terms_for(&self, mollifier: &MollifierSpec, n: usize, seed: u64) -> Result<Vec<(SampleTerms, TorusField)>> {
        check_count(n)?;
        let grid = self.cfg().grid_size;
        let c = renorm_constant(mollifier, grid)?;
        (0..n as u64)
            .into_par_iter()
            .map(|s| {
                let xi = sample_noise_indexed(seed, s, mollifier, grid)?.field;
                Ok((self.sample_terms(&xi, c)?, xi))
            })
            .collect()
    }

    fn map_samples(&self, mollifier: &MollifierSpec, n: usize, seed: u64, pick: impl Fn(&SampleTerms) -> f64 + Sync) -> Result<Vec<f64>> {
        check_count(n)?;
        let grid = self.cfg().grid_size;
        let c = renorm_constant(mollifier, grid)?;
        (0..n as u64)
            .into_par_iter()
            .map(|s| {
                let xi = sample_noise_indexed(seed, s, mollifier, grid)?.field;
                Ok(pick(&self.sample_terms(&xi, c)?))
            })
            .collect()
    }

    /// `λ_δ = E[DF|_w(ũ2)]`
    pub fn estimate_lambda(&self, mollifier: &MollifierSpec, n: usize, seed: u64) -> Result<MCEstimate> {
        let v = self.map_samples(mollifier, n, seed, |t| t.lambda)?;
        Ok(MCEstimate::from_samples(&v, seed, Some(mollifier)))
    }

    /// `E[Q̂_δ]`
    pub fn estimate_hessian_mean(&self, mollifier: &MollifierSpec, n: usize, seed: u64) -> Result<MCEstimate> {
        let v = self.map_samples(mollifier, n, seed, SampleTerms::q_hat)?;
        Ok(MCEstimate::from_samples(&v, seed, Some(mollifier)))
    }

    /// `E[Q̂_δ − DF(ũ2)]`, which equals the attenuated trace of `q`.
    pub fn estimate_q_trace(&self, mollifier: &MollifierSpec, n: usize, seed: u64) -> Result<MCEstimate> {
        let v = self.map_samples(mollifier, n, seed, |t| t.d2 + t.cm)?;
        Ok(MCEstimate::from_samples(&v, seed, Some(mollifier)))
    }

    /// `λ_δ` over decreasing scales with common random numbers.
    pub fn lambda_delta_study(&self, shape: MollifierShape, deltas: &[f64], n: usize, seed: u64) -> Result<LambdaStudy> {
        if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.is_empty() {
            return Err(Error::Domain("deltas must be decreasing".into()));
        }
        let grid = self.cfg().grid_size;
        let specs = deltas.iter().map(|&d| MollifierSpec::new(shape, d)).collect::<Result<Vec<_>>>()?;
        for s in &specs {
            s.check_resolved(grid)?;
        }
        let per: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| self.map_samples(s, n, seed, |t| t.lambda))
            .collect::<Result<_>>()?;
        let rows = specs
            .iter()
            .zip(&per)
            .map(|(s, v)| {
                Ok(LambdaRow {
                    delta: s.delta,
                    c_delta: renorm_constant(s, grid)?,
                    estimate: MCEstimate::from_samples(v, seed, Some(s)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let diffs: Vec<LambdaDiff> = (1..per.len())
            .map(|i| {
                let d: Vec<f64> = per[i].iter().zip(&per[i - 1]).map(|(a, b)| a - b).collect();
                let (mean, stderr) = mean_stderr(&d);
                LambdaDiff {
                    from: deltas[i - 1],
                    to: deltas[i],
                    difference: mean,
                    stderr,
                }
            })
            .collect();
        let decreasing = diffs.windows(2).all(|w| w[1].difference.abs() < w[0].difference.abs());
        Ok(LambdaStudy {
            shape,
            rows,
            diffs,
            decreasing,
        })
    }

    /// MC estimates of `½E[(Q̂ − E Q̂) ξ_δ(e_i) ξ_δ(e_j)]` against
    /// `rhohat_i² rhohat_j² A_ij`.
    pub fn covariance_check(
        &self,
        a: &Matrix,
        basis: &[BasisFunction],
        pairs: &[(usize, usize)],
        mollifier: &MollifierSpec,
        n: usize,
        seed: u64,
    ) -> Result<Vec<CovarianceEntry>> {
        let grid = self.cfg().grid_size;
        for &(i, j) in pairs {
            if i.max(j) >= a.n() || i.max(j) >= basis.len() {
                return Err(Error::BasisTooLarge {
                    requested: i.max(j) + 1,
                    available: a.n().min(basis.len()),
                });
            }
        }
        let fields = basis.iter().map(|b| b.field(grid)).collect::<Result<Vec<_>>>()?;
        let samples = self.terms_for(mollifier, n, seed)?;
        let q: Vec<f64> = samples.iter().map(|(t, _)| t.q_hat()).collect();
        let (qbar, _) = mean_stderr(&q);
        let coords: Vec<Vec<f64>> = samples
            .iter()
            .map(|(_, xi)| fields.iter().map(|e| e.inner_l2(xi)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        pairs
            .iter()
            .map(|&(i, j)| {
                let v: Vec<f64> = q.iter().zip(&coords).map(|(qs, x)| 0.5 * (qs - qbar) * x[i] * x[j]).collect();
                let (mean, stderr) = mean_stderr(&v);
                let ri = mollifier.rhohat(basis[i].k);
                let rj = mollifier.rhohat(basis[j].k);
                let target = ri * ri * rj * rj * a[(i, j)];
                let z = if stderr > 0.0 {
                    (mean - target) / stderr
                } else if mean == target {
                    0.0
                } else {
                    f64::INFINITY
                };
                Ok(CovarianceEntry {
                    i,
                    j,
                    mc: mean,
                    stderr,
                    target,
                    z,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub delta: f64,
    pub c_delta: f64,
    pub estimate: MCEstimate,
}

/// `λ_to − λ_from` with the standard error of the paired differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaDiff {
    pub from: f64,
    pub to: f64,
    pub difference: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaStudy {
    pub shape: MollifierShape,
    pub rows: Vec<LambdaRow>,
    pub diffs: Vec<LambdaDiff>,
    /// Successive `|λ_{δ/2} − λ_δ|` strictly decrease.
    pub decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEntry {
    pub i: usize,
    pub j: usize,
    pub mc: f64,
    pub stderr: f64,
    pub target: f64,
    pub z: f64,
}

/// `u1` and `ũ2` for one noise sample.
pub fn solve_linear_spde_pair(
    h: &TorusField,
    w: &TimePath,
    xi: &NoiseSample,
    c_delta: f64,
    f: &Observable,
    u0: &TorusField,
    cfg: &SolverConfig,
) -> Result<(TimePath, TimePath)> {
    LaplaceLab::from_parts(h, w, f, u0, cfg)?.linear_pair(&xi.field, c_delta)
}

/// `Q̂_δ = D²F[u1,u1] + DF(û2)` with every path marched explicitly.
pub fn sample_hessian_q(
    h: &TorusField,
    w: &TimePath,
    f: &Observable,
    xi: &NoiseSample,
    c_delta: f64,
    u0: &TorusField,
    cfg: &SolverConfig,
) -> Result<f64> {
    let lab = LaplaceLab::from_parts(h, w, f, u0, cfg)?;
    let (u1, u2) = lab.full_second_order(&xi.field, c_delta)?;
    Ok(f.d2(w, &u1, &u1)? + f.d1(w, &u2)?)
}

/// `(∂_t − Δ)û = g(û)(εξ + h) − ε² g′(û) g(û) c_δ`
pub fn simulate_renormalized_gpam(
    epsilon: f64,
    h: &TorusField,
    xi: &TorusField,
    c_delta: f64,
    u0: &TorusField,
    cfg: &SolverConfig,
) -> Result<TimePath> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon must be non-negative, got {epsilon}")));
    }
    cfg.validate()?;
    let mut forcing = h.clone();
    forcing.axpy(epsilon, xi)?;
    march_nonlinear(u0, &forcing.padded(), epsilon * epsilon * c_delta, cfg)
}

/// `E[exp(−F(û^ε)/ε²)]` with `h = 0`, over noise fields from `sample`;
/// solves that explode contribute 0.
pub fn estimate_j_by(
    epsilon: f64,
    c_delta: f64,
    f: &Observable,
    u0: &TorusField,
    cfg: &SolverConfig,
    n: usize,
    sample: impl Fn(u64) -> Result<TorusField> + Sync,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    check_count(n)?;
    let zero = TorusField::zeros(cfg.grid_size)?;
    (0..n as u64)
        .into_par_iter()
        .map(|s| {
            let xi = sample(s)?;
            match simulate_renormalized_gpam(epsilon, &zero, &xi, c_delta, u0, cfg) {
                Ok(u) => Ok((-f.eval(&u)? / (epsilon * epsilon)).exp()),
                Err(e) if e.is_hypothesis_violation() => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn estimate_j(
    epsilon: f64,
    mollifier: &MollifierSpec,
    f: &Observable,
    u0: &TorusField,
    cfg: &SolverConfig,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let c = renorm_constant(mollifier, cfg.grid_size)?;
    let v = estimate_j_by(epsilon, c, f, u0, cfg, n, |s| {
        Ok(sample_noise_indexed(seed, s, mollifier, cfg.grid_size)?.field)
    })?;
    Ok(MCEstimate::from_samples(&v, seed, Some(mollifier)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub epsilon: f64,
    pub j: f64,
    pub j_stderr: f64,
    /// `e^{𝓕(𝗁)/ε²} Ĵ(ε)`
    pub r: f64,
    pub r_stderr: f64,
    pub a0: f64,
    pub abs_error: f64,
    pub n_samples: usize,
    /// Relative standard error of `R` above 50%.
    pub amplification_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTable {
    pub rows: Vec<ExpansionRow>,
    pub delta: f64,
    pub mollifier: MollifierShape,
    pub phase_value: f64,
    /// `|R(ε) − a₀|` decreases along the supplied ε order.
    pub decreasing: bool,
}

/// `R(ε)` against `a₀` for each `ε`, with common random numbers across `ε`.
#[allow(clippy::too_many_arguments)]
pub fn validate_expansion(
    epsilons: &[f64],
    mollifier: &MollifierSpec,
    problem: &PhaseProblem,
    phase_value: f64,
    a0: f64,
    n: usize,
    seed: u64,
) -> Result<ExpansionTable> {
    let rows = epsilons
        .iter()
        .map(|&eps| {
            let est = estimate_j(eps, mollifier, &problem.observable, &problem.u0, &problem.cfg, n, seed)?;
            let amp = (phase_value / (eps * eps)).exp();
            let r = amp * est.mean;
            let r_stderr = amp * est.stderr;
            Ok(ExpansionRow {
                epsilon: eps,
                j: est.mean,
                j_stderr: est.stderr,
                r,
                r_stderr,
                a0,
                abs_error: (r - a0).abs(),
                n_samples: n,
                amplification_warning: !(r_stderr <= 0.5 * r.abs()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decreasing = rows.windows(2).all(|w| w[1].abs_error < w[0].abs_error);
    Ok(ExpansionTable {
        rows,
        delta: mollifier.delta,
        mollifier: mollifier.shape,
        phase_value,
        decreasing,
    })
}
