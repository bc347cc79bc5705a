//! Real periodic scalar fields on the torus `[0,1)²`.
//!
//! A [`TorusField`] stores the Fourier coefficients with respect to
//! `e_k(x) = exp(2πi k·x)` on an `N×N` mode grid. The Laplacian acts as
//! `-4π²|k|²`. Coefficients are Hermitian (`c(-k) = conj c(k)`) and the
//! Nyquist row and column are identically zero, so the active modes are
//! `|k₁|, |k₂| ≤ N/2 - 1`.
//!
//! Products are evaluated on the `3N/2` padded grid and projected back,
//! which is alias-free for products of two fields on the active set.

mod basis;
pub mod io;
mod spectral;

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftDirection;

pub use basis::{BasisFunction, RealTrigBasis, TrigKind};
pub use spectral::SpectralGrid;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone)]
pub struct TorusField {
    grid: Arc<SpectralGrid>,
    modes: Vec<Complex64>,
}

impl std::fmt::Debug for TorusField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusField")
            .field("n", &self.n())
            .field("l2", &self.l2_norm())
            .finish()
    }
}

impl PartialEq for TorusField {
    fn eq(&self, other: &Self) -> bool {
        self.n() == other.n() && self.modes == other.modes
    }
}

impl TorusField {
    pub fn zeros(n: usize) -> Result<Self> {
        let grid = SpectralGrid::get(n)?;
        Ok(Self {
            modes: vec![ZERO; n * n],
            grid,
        })
    }

    pub(crate) fn zeros_on(grid: &Arc<SpectralGrid>) -> Self {
        Self {
            modes: vec![ZERO; grid.n() * grid.n()],
            grid: grid.clone(),
        }
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        let mut f = Self::zeros(n)?;
        f.modes[0] = Complex64::new(value, 0.0);
        Ok(f)
    }

    /// Build from coefficients in storage order; the result is symmetrised
    /// and Nyquist entries are dropped.
    pub fn from_modes(n: usize, mut modes: Vec<Complex64>) -> Result<Self> {
        let grid = SpectralGrid::get(n)?;
        if modes.len() != n * n {
            return Err(Error::Domain(format!(
                "expected {} coefficients, got {}",
                n * n,
                modes.len()
            )));
        }
        grid.symmetrize(&mut modes);
        Ok(Self { grid, modes })
    }

    /// `amplitude · cos(2π k·x)`.
    pub fn cosine_mode(n: usize, k: (i64, i64), amplitude: f64) -> Result<Self> {
        Self::trig_mode(n, k, Complex64::new(0.5 * amplitude, 0.0))
    }

    /// `amplitude · sin(2π k·x)`.
    pub fn sine_mode(n: usize, k: (i64, i64), amplitude: f64) -> Result<Self> {
        Self::trig_mode(n, k, Complex64::new(0.0, -0.5 * amplitude))
    }

    fn trig_mode(n: usize, k: (i64, i64), coeff: Complex64) -> Result<Self> {
        let mut f = Self::zeros(n)?;
        let idx = f
            .grid
            .index_of(k)
            .ok_or_else(|| Error::Domain(format!("mode {k:?} not on grid {n}")))?;
        if k == (0, 0) {
            f.modes[0] = Complex64::new(2.0 * coeff.re, 0.0);
            return Ok(f);
        }
        let m = f.grid.mirror(idx);
        f.modes[idx] += coeff;
        f.modes[m] += coeff.conj();
        Ok(f)
    }

    /// Sample values on the `N×N` physical grid `x = (j₁, j₂)/N`,
    /// row-major in `j₁`.
    pub fn from_physical(n: usize, values: &[f64]) -> Result<Self> {
        let grid = SpectralGrid::get(n)?;
        if values.len() != n * n {
            return Err(Error::Domain(format!(
                "expected {} samples, got {}",
                n * n,
                values.len()
            )));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.fft_n().process(&mut buf, FftDirection::Forward);
        let scale = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        grid.symmetrize(&mut buf);
        Ok(Self { grid, modes: buf })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub fn modes(&self) -> &[Complex64] {
        &self.modes
    }

    #[cfg(test)]
    pub(crate) fn modes_mut(&mut self) -> &mut [Complex64] {
        &mut self.modes
    }

    /// Coefficient of `e_k`; zero off the active set.
    pub fn coeff(&self, k: (i64, i64)) -> Complex64 {
        self.grid.index_of(k).map_or(ZERO, |i| self.modes[i])
    }

    /// Largest violation of `c(-k) = conj c(k)`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.modes.len())
            .map(|i| (self.modes[self.grid.mirror(i)] - self.modes[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut buf = self.modes.clone();
        self.grid.fft_n().process(&mut buf, FftDirection::Inverse);
        buf.iter().map(|c| c.re).collect()
    }

    /// Values on the `3N/2` padded grid.
    pub fn padded(&self) -> PaddedField {
        let np = self.grid.padded();
        let mut buf = vec![ZERO; np * np];
        for (idx, c) in self.modes.iter().enumerate() {
            if self.grid.is_active(idx) {
                buf[self.grid.padded_index(idx)] = *c;
            }
        }
        self.grid.fft_padded().process(&mut buf, FftDirection::Inverse);
        PaddedField {
            grid: self.grid.clone(),
            values: buf.into_iter().map(|c| c.re).collect(),
        }
    }

    /// Padded values of two fields from a single complex transform.
    pub fn padded_pair(a: &TorusField, b: &TorusField) -> Result<(PaddedField, PaddedField)> {
        a.check_grid(b)?;
        let grid = &a.grid;
        let np = grid.padded();
        let mut buf = vec![ZERO; np * np];
        for idx in 0..a.modes.len() {
            if grid.is_active(idx) {
                let (ca, cb) = (a.modes[idx], b.modes[idx]);
                buf[grid.padded_index(idx)] = Complex64::new(ca.re - cb.im, ca.im + cb.re);
            }
        }
        grid.fft_padded().process(&mut buf, FftDirection::Inverse);
        let (re, im) = buf.into_iter().map(|c| (c.re, c.im)).unzip();
        Ok((
            PaddedField { grid: grid.clone(), values: re },
            PaddedField { grid: grid.clone(), values: im },
        ))
    }

    pub fn check_grid(&self, other: &TorusField) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::Shape {
                left: self.n(),
                right: other.n(),
            });
        }
        Ok(())
    }

    /// Action of the heat semigroup `P_t = exp(tΔ)`.
    pub fn heat_propagate(&self, t: f64) -> Result<TorusField> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("heat flow time must be >= 0, got {t}")));
        }
        let mut out = self.clone();
        for (c, &lam) in out.modes.iter_mut().zip(self.grid.laplace_symbol()) {
            *c *= (-lam * t).exp();
        }
        Ok(out)
    }

    /// Dealiased pointwise product.
    pub fn multiply(&self, other: &TorusField) -> Result<TorusField> {
        let (a, b) = TorusField::padded_pair(self, other)?;
        Ok(a.mul(&b).project())
    }

    /// `(Σ (1+4π²|k|²)^s |c_k|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.modes
            .iter()
            .zip(self.grid.laplace_symbol())
            .map(|(c, &lam)| (1.0 + lam).powf(s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.modes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Real `L²([0,1)²)` pairing via Parseval.
    pub fn inner_l2(&self, other: &TorusField) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self.dot(other))
    }

    pub(crate) fn dot(&self, other: &TorusField) -> f64 {
        self.modes
            .iter()
            .zip(&other.modes)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// Dyadic Littlewood–Paley surrogate of the `C^α` norm:
    /// `max_j 2^{jα} ‖Δ_j f‖_∞`, with block 0 the zero mode and block
    /// `j ≥ 1` the shell `2^{j-1} ≤ |k| < 2^j`.
    pub fn holder_norm_surrogate(&self, alpha: f64) -> f64 {
        let n = self.n();
        let mut blocks: Vec<Vec<Complex64>> = Vec::new();
        for (idx, c) in self.modes.iter().enumerate() {
            if *c == ZERO {
                continue;
            }
            let (k1, k2) = self.grid.wavevector(idx);
            let r = ((k1 * k1 + k2 * k2) as f64).sqrt();
            let j = dyadic_block(r);
            if blocks.len() <= j {
                blocks.resize(j + 1, Vec::new());
            }
            if blocks[j].is_empty() {
                blocks[j] = vec![ZERO; n * n];
            }
            blocks[j][idx] = *c;
        }
        let mut best: f64 = 0.0;
        for (j, modes) in blocks.into_iter().enumerate() {
            if modes.is_empty() {
                continue;
            }
            let block = TorusField {
                grid: self.grid.clone(),
                modes,
            };
            let sup = block.to_physical().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            best = best.max(2f64.powf(j as f64 * alpha) * sup);
        }
        best
    }

    pub fn scaled(&self, a: f64) -> TorusField {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn scale(&mut self, a: f64) {
        self.modes.iter_mut().for_each(|c| *c *= a);
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &TorusField) -> Result<()> {
        self.check_grid(other)?;
        for (x, y) in self.modes.iter_mut().zip(&other.modes) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn add(&self, other: &TorusField) -> Result<TorusField> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &TorusField) -> Result<TorusField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Componentwise product with a real Fourier multiplier.
    pub(crate) fn apply_multiplier(&mut self, symbol: &[f64]) {
        for (c, &m) in self.modes.iter_mut().zip(symbol) {
            *c *= m;
        }
    }
}

/// Dyadic block of a mode with radius `r`.
pub fn dyadic_block(r: f64) -> usize {
    if r < 1.0 {
        0
    } else {
        r.log2().floor() as usize + 1
    }
}

/// Real values on the `3N/2` padded physical grid.
#[derive(Clone)]
pub struct PaddedField {
    grid: Arc<SpectralGrid>,
    values: Vec<f64>,
}

impl PaddedField {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    pub(crate) fn from_values(grid: &Arc<SpectralGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.padded() * grid.padded());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Apply `f` pointwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> PaddedField {
        PaddedField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mul(&self, other: &PaddedField) -> PaddedField {
        PaddedField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    /// Mean over the padded grid of the pointwise product; equals the `L²`
    /// pairing whenever one factor is band-limited to the active set.
    pub fn mean_product(&self, other: &PaddedField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s / self.values.len() as f64
    }

    /// Orthogonal projection onto the active modes.
    pub fn project(&self) -> TorusField {
        let np = self.grid.padded();
        let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.grid.fft_padded().process(&mut buf, FftDirection::Forward);
        let scale = 1.0 / (np * np) as f64;
        let mut out = TorusField::zeros_on(&self.grid);
        for idx in 0..out.modes.len() {
            if self.grid.is_active(idx) {
                out.modes[idx] = buf[self.grid.padded_index(idx)] * scale;
            }
        }
        self.grid.symmetrize(&mut out.modes);
        out
    }

    /// Project two real padded fields with one complex transform.
    pub fn project_pair(a: &PaddedField, b: &PaddedField) -> (TorusField, TorusField) {
        let grid = &a.grid;
        let np = grid.padded();
        let mut buf: Vec<Complex64> = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| Complex64::new(x, y))
            .collect();
        grid.fft_padded().process(&mut buf, FftDirection::Forward);
        let scale = 0.5 / (np * np) as f64;
        let mut fa = TorusField::zeros_on(grid);
        let mut fb = TorusField::zeros_on(grid);
        for idx in 0..fa.modes.len() {
            if !grid.is_active(idx) {
                continue;
            }
            let z = buf[grid.padded_index(idx)];
            let zm = buf[grid.padded_index(grid.mirror(idx))].conj();
            fa.modes[idx] = (z + zm) * scale;
            let d = (z - zm) * scale;
            fb.modes[idx] = Complex64::new(d.im, -d.re);
        }
        grid.symmetrize(&mut fa.modes);
        grid.symmetrize(&mut fb.modes);
        (fa, fb)
    }
}

/// Uniform-step trajectory `u(t_0), …, u(t_M)` on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimePath {
    steps: Vec<TorusField>,
    dt: f64,
}

impl TimePath {
    pub fn new(steps: Vec<TorusField>, dt: f64) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Domain("time path needs at least one node".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let n = steps[0].n();
        if let Some(bad) = steps.iter().find(|f| f.n() != n) {
            return Err(Error::Shape {
                left: n,
                right: bad.n(),
            });
        }
        Ok(Self { steps, dt })
    }

    pub fn zeros(n: usize, nodes: usize, dt: f64) -> Result<Self> {
        let z = TorusField::zeros(n)?;
        Self::new(vec![z; nodes], dt)
    }

    pub fn steps(&self) -> &[TorusField] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<TorusField> {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n(&self) -> usize {
        self.steps[0].n()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.steps.len() - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.steps.len()).map(|i| i as f64 * self.dt).collect()
    }

    pub fn last(&self) -> &TorusField {
        self.steps.last().expect("non-empty path")
    }

    pub fn check_compatible(&self, other: &TimePath) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::Shape {
                left: self.n(),
                right: other.n(),
            });
        }
        if self.len() != other.len() || (self.dt - other.dt).abs() > 1e-15 * self.dt {
            return Err(Error::Domain(format!(
                "time grids differ: {} nodes / dt {} vs {} nodes / dt {}",
                self.len(),
                self.dt,
                other.len(),
                other.dt
            )));
        }
        Ok(())
    }

    /// `self + a · other`, nodewise.
    pub fn axpy(&self, a: f64, other: &TimePath) -> Result<TimePath> {
        self.check_compatible(other)?;
        let steps = self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(x, y)| {
                let mut z = x.clone();
                z.axpy(a, y)?;
                Ok(z)
            })
            .collect::<Result<Vec<_>>>()?;
        TimePath::new(steps, self.dt)
    }

    /// `sup_t ‖u(t)‖_{L²}`.
    pub fn sup_l2(&self) -> f64 {
        self.steps.iter().map(TorusField::l2_norm).fold(0.0, f64::max)
    }

    /// `sup_t ‖u(t) - v(t)‖_{L²}`.
    pub fn sup_l2_distance(&self, other: &TimePath) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .steps
            .iter()
            .zip(&other.steps)
            .map(|(a, b)| {
                a.modes
                    .iter()
                    .zip(&b.modes)
                    .map(|(x, y)| (x - y).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max))
    }
}


impl TorusField {
    /// Random real field with `|c_k| ~ amplitude · (1+|k|²)^{-decay/2}`
    /// Gaussian coefficients, reproducible from `seed`.
    pub fn random_smooth(n: usize, seed: u64, decay: f64, amplitude: f64) -> Result<TorusField> {
        use rand::{Rng, SeedableRng};
        let grid = SpectralGrid::get(n)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut modes = vec![ZERO; n * n];
        for (idx, m) in modes.iter_mut().enumerate() {
            if !grid.is_active(idx) {
                continue;
            }
            let (k1, k2) = grid.wavevector(idx);
            let w = amplitude * (1.0 + (k1 * k1 + k2 * k2) as f64).powf(-0.5 * decay);
            let (a, b): (f64, f64) = (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            *m = Complex64::new(a, b) * w;
        }
        grid.symmetrize(&mut modes);
        Ok(TorusField { grid, modes })
    }
}
