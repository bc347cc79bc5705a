//! Carleman–Fredholm determinant and assembly of the leading Laplace
//! coefficient `a₀ = exp(−½(Tr q + λ)) · det₂(I + A)^{−1/2}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `Σ [log1p(λ_k) − λ_k]`
pub fn log_det2(eigs: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &l in eigs {
        if !(l > -1.0) {
            return Err(Error::NonDegeneracyViolation { eigenvalue: l });
        }
        acc += l.ln_1p() - l;
    }
    Ok(acc)
}

/// `∏ (1 + λ_k) e^{−λ_k}`
pub fn det2(eigs: &[f64]) -> Result<f64> {
    Ok(log_det2(eigs)?.exp())
}

pub fn a0_assemble(trace_q: f64, lambda: f64, eigs: &[f64]) -> Result<f64> {
    Ok((-0.5 * (trace_q + lambda) - 0.5 * log_det2(eigs)?).exp())
}

/// `e^{−½ E[Q̂]} [∏ (1 + λ_k) e^{−λ_k}]^{−1/2}`, written in terms of the
/// mean of the Hessian rather than its trace/λ split.
pub fn a0_from_mean(expected_q: f64, eigs: &[f64]) -> Result<f64> {
    let mut prod = 1.0;
    for &l in eigs {
        if !(l > -1.0) {
            return Err(Error::NonDegeneracyViolation { eigenvalue: l });
        }
        prod *= (1.0 + l) * (-l).exp();
    }
    Ok((-0.5 * expected_q).exp() / prod.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A0Report {
    pub trace_q: f64,
    pub lambda: f64,
    pub lambda_stderr: f64,
    pub lambda_samples: usize,
    pub eigenvalues: Vec<f64>,
    pub det2: f64,
    pub a0: f64,
    /// First-order error bar on `a0` from the λ standard error.
    pub a0_stderr: f64,
    pub nondegenerate: bool,
    pub truncation_m: usize,
    pub delta: f64,
    pub mollifier: String,
    pub c_delta: f64,
    pub config_hash: String,
}

impl A0Report {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        trace_q: f64,
        lambda: f64,
        lambda_stderr: f64,
        lambda_samples: usize,
        eigenvalues: Vec<f64>,
        delta: f64,
        mollifier: String,
        c_delta: f64,
        config_hash: String,
    ) -> Result<Self> {
        let det2 = det2(&eigenvalues)?;
        let a0 = a0_assemble(trace_q, lambda, &eigenvalues)?;
        Ok(Self {
            trace_q,
            lambda,
            lambda_stderr,
            lambda_samples,
            truncation_m: eigenvalues.len(),
            nondegenerate: eigenvalues.iter().all(|&l| l > -1.0),
            eigenvalues,
            det2,
            a0,
            a0_stderr: 0.5 * a0 * lambda_stderr,
            delta,
            mollifier,
            c_delta,
            config_hash,
        })
    }

    pub fn table(&self) -> String {
        let min_eig = self.eigenvalues.first().copied().unwrap_or(0.0);
        let max_eig = self.eigenvalues.last().copied().unwrap_or(0.0);
        format!(
            "a0           {:.8}  (± {:.2e})\n\
             trace q      {:.8}\n\
             lambda       {:.8}  (± {:.2e}, n = {})\n\
             det2         {:.8}\n\
             eigenvalues  {} in [{:.4e}, {:.4e}]\n\
             delta        {} ({}), c_delta = {:.6}\n\
             config       {}\n",
            self.a0,
            self.a0_stderr,
            self.trace_q,
            self.lambda,
            self.lambda_stderr,
            self.lambda_samples,
            self.det2,
            self.truncation_m,
            min_eig,
            max_eig,
            self.delta,
            self.mollifier,
            self.c_delta,
            self.config_hash
        )
    }
}
