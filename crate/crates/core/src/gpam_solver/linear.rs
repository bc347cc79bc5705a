//! Linear marches around a fixed solution `w_h`, and their adjoint.
//!
//! Every variation equation has the form
//! `v_{n+1} = P v_n + Φ Π[g′(w_e) h v_e + s_e]`, `v_0 = 0`,
//! and differs only in the source `s_e`, which is supplied on the padded
//! grid. The adjoint recursion returns weights `ρ_e = (Φ r_e)~` such that
//! `Σ_n ⟨μ_n, v_n⟩ = Σ_e mean(ρ_e · s_e)` for every source.

use std::sync::Arc;

use super::{SolverConfig, StepScheme};
use crate::error::{Error, Result};
use crate::observables::RieszKernel;
use crate::torus_field::{PaddedField, SpectralGrid, TimePath, TorusField};

/// A path sampled on the padded grid; `None` marks an identically zero node.
#[derive(Clone, Debug)]
pub struct PaddedPath {
    nodes: Vec<Option<Vec<f64>>>,
}

impl PaddedPath {
    pub fn node(&self, n: usize) -> Option<&[f64]> {
        self.nodes[n].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Padded adjoint weights per source node.
#[derive(Clone, Debug)]
pub struct AdjointWeights {
    weights: Vec<Option<Vec<f64>>>,
}

impl AdjointWeights {
    pub fn node(&self, e: usize) -> Option<&[f64]> {
        self.weights[e].as_deref()
    }

    /// Contribution `mean(ρ_e · s)` of a source at node `e`.
    pub fn pair(&self, e: usize, source: &[f64]) -> f64 {
        match &self.weights[e] {
            None => 0.0,
            Some(r) => r.iter().zip(source).map(|(a, b)| a * b).sum::<f64>() / r.len() as f64,
        }
    }
}

/// Cached padded coefficients of the equation linearised at `(w, h)`.
pub struct Linearization {
    cfg: SolverConfig,
    grid: Arc<SpectralGrid>,
    w: TimePath,
    h: TorusField,
    h_pad: Vec<f64>,
    g0: Vec<Vec<f64>>,
    g1: Vec<Vec<f64>>,
    g2: Vec<Vec<f64>>,
    mult: Vec<Option<Vec<f64>>>,
    prop: Vec<f64>,
    phi: Vec<f64>,
}

fn is_zero_field(f: &TorusField) -> bool {
    f.modes().iter().all(|c| c.re == 0.0 && c.im == 0.0)
}

impl Linearization {
    pub fn new(w: &TimePath, h: &TorusField, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if w.n() != cfg.grid_size || h.n() != cfg.grid_size {
            return Err(Error::Shape {
                left: cfg.grid_size,
                right: if w.n() != cfg.grid_size { w.n() } else { h.n() },
            });
        }
        if w.len() != cfg.steps + 1 || (w.dt() - cfg.dt()).abs() > 1e-14 * cfg.dt() {
            return Err(Error::Domain("path does not match the solver time grid".into()));
        }
        let grid = cfg.grid()?;
        let (prop, phi) = cfg.step_symbols()?;
        let h_pad = h.padded().values().to_vec();
        let mut padded_w: Vec<Vec<f64>> = Vec::with_capacity(w.len());
        let steps = w.steps();
        let mut i = 0;
        while i < steps.len() {
            if i + 1 < steps.len() {
                let (a, b) = TorusField::padded_pair(&steps[i], &steps[i + 1])?;
                padded_w.push(a.values().to_vec());
                padded_w.push(b.values().to_vec());
                i += 2;
            } else {
                padded_w.push(steps[i].padded().values().to_vec());
                i += 1;
            }
        }
        let g = &cfg.g;
        let g0: Vec<Vec<f64>> = padded_w.iter().map(|v| v.iter().map(|&x| g.value(x)).collect()).collect();
        let g1: Vec<Vec<f64>> = padded_w.iter().map(|v| v.iter().map(|&x| g.d1(x)).collect()).collect();
        let g2: Vec<Vec<f64>> = padded_w.iter().map(|v| v.iter().map(|&x| g.d2(x)).collect()).collect();
        let h_zero = is_zero_field(h);
        let mult = g1
            .iter()
            .map(|d| {
                if h_zero || d.iter().all(|&x| x == 0.0) {
                    None
                } else {
                    Some(d.iter().zip(&h_pad).map(|(a, b)| a * b).collect())
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            w: w.clone(),
            h: h.clone(),
            h_pad,
            g0,
            g1,
            g2,
            mult,
            prop,
            phi,
        })
    }

    pub fn cfg(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn w(&self) -> &TimePath {
        &self.w
    }

    pub fn h(&self) -> &TorusField {
        &self.h
    }

    pub fn h_padded(&self) -> &[f64] {
        &self.h_pad
    }

    /// `g(w_e)` on the padded grid.
    pub fn g_padded(&self, e: usize) -> &[f64] {
        &self.g0[e]
    }

    /// `g′(w_e)` on the padded grid.
    pub fn dg_padded(&self, e: usize) -> &[f64] {
        &self.g1[e]
    }

    /// `g″(w_e)` on the padded grid.
    pub fn d2g_padded(&self, e: usize) -> &[f64] {
        &self.g2[e]
    }

    pub fn nodes(&self) -> usize {
        self.w.len()
    }

    /// Nodes at which sources enter the march.
    pub fn source_nodes(&self) -> std::ops::Range<usize> {
        match self.cfg.scheme {
            StepScheme::Implicit => 1..self.nodes(),
            StepScheme::Explicit => 0..self.nodes() - 1,
        }
    }

    pub fn pad(&self, f: &TorusField) -> Vec<f64> {
        f.padded().values().to_vec()
    }

    pub fn pad_path(&self, p: &TimePath) -> Result<PaddedPath> {
        self.w.check_compatible(p)?;
        let nodes = p
            .steps()
            .iter()
            .map(|f| if is_zero_field(f) { None } else { Some(self.pad(f)) })
            .collect();
        Ok(PaddedPath { nodes })
    }

    pub(crate) fn project(&self, values: Vec<f64>) -> TorusField {
        PaddedField::from_values(&self.grid, values).project()
    }

    fn step_base(&self, v: &TorusField) -> TorusField {
        let mut b = v.clone();
        b.apply_multiplier(&self.prop);
        b
    }

    /// `Φ Π[mult_e · ṽ + s]`
    fn forced(&self, e: usize, v_pad: Option<&[f64]>, source: Option<&[f64]>) -> Option<TorusField> {
        let np2 = self.h_pad.len();
        let vals: Option<Vec<f64>> = match (self.mult[e].as_deref(), v_pad, source) {
            (Some(m), Some(v), Some(s)) => Some(m.iter().zip(v).zip(s).map(|((a, b), c)| a * b + c).collect()),
            (Some(m), Some(v), None) => Some(m.iter().zip(v).map(|(a, b)| a * b).collect()),
            (_, _, Some(s)) => Some(s.to_vec()),
            _ => None,
        };
        vals.map(|vals| {
            debug_assert_eq!(vals.len(), np2);
            let mut f = self.project(vals);
            f.apply_multiplier(&self.phi);
            f
        })
    }

    /// Generic linear march with padded sources `source(e)`.
    pub fn march(&self, mut source: impl FnMut(usize) -> Option<Vec<f64>>) -> Result<TimePath> {
        let m = self.nodes() - 1;
        let zero = TorusField::zeros_on(&self.grid);
        let mut steps = Vec::with_capacity(m + 1);
        steps.push(zero.clone());
        for n in 0..m {
            let prev: &TorusField = &steps[n];
            let prev_zero = is_zero_field(prev);
            let e = self.cfg.scheme.eval_node(n);
            let s = source(e);
            let next = match self.cfg.scheme {
                StepScheme::Explicit => {
                    let v_pad = if prev_zero || self.mult[e].is_none() { None } else { Some(self.pad(prev)) };
                    let mut next = self.step_base(prev);
                    if let Some(f) = self.forced(e, v_pad.as_deref(), s.as_deref()) {
                        next.axpy(1.0, &f)?;
                    }
                    next
                }
                StepScheme::Implicit => {
                    let base = self.step_base(prev);
                    if self.mult[e].is_none() {
                        let mut next = base;
                        if let Some(f) = self.forced(e, None, s.as_deref()) {
                            next.axpy(1.0, &f)?;
                        }
                        next
                    } else if prev_zero && s.is_none() {
                        base
                    } else {
                        self.picard(n + 1, &base, prev.clone(), |v| {
                            let vp = self.pad(v);
                            self.forced(e, Some(&vp), s.as_deref())
                        })?
                    }
                }
            };
            if !next.modes().iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::BlowUp { step: n + 1 });
            }
            steps.push(next);
        }
        TimePath::new(steps, self.w.dt())
    }

    /// Fixed point of `v = base + F(v)`.
    fn picard(
        &self,
        step: usize,
        base: &TorusField,
        mut v: TorusField,
        map: impl Fn(&TorusField) -> Option<TorusField>,
    ) -> Result<TorusField> {
        for _ in 0..self.cfg.picard_max_iter {
            let mut next = base.clone();
            if let Some(f) = map(&v) {
                next.axpy(1.0, &f)?;
            }
            let inc = next.sub(&v)?.l2_norm();
            let scale = next.l2_norm();
            v = next;
            if !inc.is_finite() {
                break;
            }
            if inc == 0.0 || inc <= self.cfg.picard_tol * scale {
                return Ok(v);
            }
        }
        Err(Error::PicardDivergence {
            step,
            iterations: self.cfg.picard_max_iter,
        })
    }

    pub fn first_variation(&self, k: &TorusField) -> Result<TimePath> {
        let kp = self.pad(k);
        let k_zero = is_zero_field(k);
        self.march(|e| (!k_zero).then(|| self.g0[e].iter().zip(&kp).map(|(a, b)| a * b).collect()))
    }

    /// Source `g″(w) v_k v_l h`.
    pub fn cm_source(&self, e: usize, vk: &PaddedPath, vl: &PaddedPath) -> Option<Vec<f64>> {
        let (a, b) = (vk.node(e)?, vl.node(e)?);
        Some(
            self.g2[e]
                .iter()
                .zip(a)
                .zip(b)
                .zip(&self.h_pad)
                .map(|(((g, x), y), h)| g * x * y * h)
                .collect(),
        )
    }

    /// Source `g′(w)(v_k l + v_l k)`.
    pub fn wn_source(&self, e: usize, vk: &PaddedPath, vl: &PaddedPath, kp: &[f64], lp: &[f64]) -> Option<Vec<f64>> {
        let g1 = &self.g1[e];
        match (vk.node(e), vl.node(e)) {
            (None, None) => None,
            (a, b) => {
                let mut out = vec![0.0; g1.len()];
                if let Some(a) = a {
                    for (o, ((g, x), y)) in out.iter_mut().zip(g1.iter().zip(a).zip(lp)) {
                        *o += g * x * y;
                    }
                }
                if let Some(b) = b {
                    for (o, ((g, x), y)) in out.iter_mut().zip(g1.iter().zip(b).zip(kp)) {
                        *o += g * x * y;
                    }
                }
                Some(out)
            }
        }
    }

    pub fn second_variation_cm(&self, vk: &PaddedPath, vl: &PaddedPath) -> Result<TimePath> {
        self.march(|e| self.cm_source(e, vk, vl))
    }

    pub fn second_variation_wn(&self, vk: &PaddedPath, vl: &PaddedPath, k: &TorusField, l: &TorusField) -> Result<TimePath> {
        let (kp, lp) = (self.pad(k), self.pad(l));
        self.march(|e| self.wn_source(e, vk, vl, &kp, &lp))
    }

    /// The unsplit second variation, driven by both sources at once.
    pub fn second_variation_combined(
        &self,
        vk: &PaddedPath,
        vl: &PaddedPath,
        k: &TorusField,
        l: &TorusField,
    ) -> Result<TimePath> {
        let (kp, lp) = (self.pad(k), self.pad(l));
        self.march(|e| match (self.cm_source(e, vk, vl), self.wn_source(e, vk, vl, &kp, &lp)) {
            (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
            (a, b) => a.or(b),
        })
    }

    /// Backward recursion for the kernel `μ_n = c_n φ`.
    pub fn adjoint(&self, kernel: &RieszKernel) -> Result<AdjointWeights> {
        let m = self.nodes() - 1;
        if kernel.coefficients.len() != m + 1 {
            return Err(Error::Domain("kernel length does not match the path".into()));
        }
        if kernel.phi.n() != self.cfg.grid_size {
            return Err(Error::Shape {
                left: self.cfg.grid_size,
                right: kernel.phi.n(),
            });
        }
        let mut weights: Vec<Option<Vec<f64>>> = vec![None; m + 1];
        if kernel.is_zero() {
            return Ok(AdjointWeights { weights });
        }
        let mu = |n: usize| -> Option<TorusField> {
            let c = kernel.coefficients[n];
            (c != 0.0).then(|| kernel.phi.scaled(c))
        };
        let phi_times = |r: &TorusField| {
            let mut x = r.clone();
            x.apply_multiplier(&self.phi);
            x
        };
        match self.cfg.scheme {
            StepScheme::Implicit => {
                let mut r_next: Option<TorusField> = None;
                for n in (1..=m).rev() {
                    let mut b = match &r_next {
                        Some(r) => self.step_base(r),
                        None => TorusField::zeros_on(&self.grid),
                    };
                    if let Some(x) = mu(n) {
                        b.axpy(1.0, &x)?;
                    }
                    let r = match &self.mult[n] {
                        None => b,
                        Some(mult) => self.picard(n, &b, b.clone(), |r| {
                            let p = self.pad(&phi_times(r));
                            Some(self.project(mult.iter().zip(&p).map(|(a, b)| a * b).collect()))
                        })?,
                    };
                    weights[n] = (!is_zero_field(&r)).then(|| self.pad(&phi_times(&r)));
                    r_next = Some(r);
                }
            }
            StepScheme::Explicit => {
                let mut a = mu(m).unwrap_or_else(|| TorusField::zeros_on(&self.grid));
                for n in (0..m).rev() {
                    let rho = (!is_zero_field(&a)).then(|| self.pad(&phi_times(&a)));
                    let mut next = self.step_base(&a);
                    if let Some(x) = mu(n) {
                        next.axpy(1.0, &x)?;
                    }
                    if let (Some(mult), Some(rho)) = (&self.mult[n], &rho) {
                        next.axpy(1.0, &self.project(mult.iter().zip(rho).map(|(a, b)| a * b).collect()))?;
                    }
                    weights[n] = rho;
                    a = next;
                }
            }
        }
        Ok(AdjointWeights { weights })
    }

    /// Riesz representer of `k ↦ Σ_n ⟨μ_n, v_{h,k}(t_n)⟩`.
    pub fn source_gradient(&self, adj: &AdjointWeights) -> TorusField {
        let mut acc = vec![0.0; self.h_pad.len()];
        let mut any = false;
        for e in self.source_nodes() {
            if let Some(r) = adj.node(e) {
                any = true;
                for ((a, g), x) in acc.iter_mut().zip(&self.g0[e]).zip(r) {
                    *a += g * x;
                }
            }
        }
        if any {
            self.project(acc)
        } else {
            TorusField::zeros_on(&self.grid)
        }
    }

    /// `Σ_e mean(ρ_e · s_e)` over the source nodes.
    pub fn pair_sources(&self, adj: &AdjointWeights, mut source: impl FnMut(usize) -> Option<Vec<f64>>) -> f64 {
        self.source_nodes()
            .filter(|&e| adj.node(e).is_some())
            .map(|e| source(e).map_or(0.0, |s| adj.pair(e, &s)))
            .sum()
    }
}
