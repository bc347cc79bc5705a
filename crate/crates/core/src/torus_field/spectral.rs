//! FFT plans and mode bookkeeping for one square grid size.
//!
//! Mode storage is the usual FFT order: index `i` along an axis carries the
//! wavenumber `i` for `i < N/2` and `i - N` for `i > N/2`. The Nyquist index
//! `N/2` is stored but always held at zero.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

static GRIDS: Lazy<Mutex<HashMap<usize, Arc<SpectralGrid>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

static PLANNER: Lazy<Mutex<FftPlanner<f64>>> = Lazy::new(|| Mutex::new(FftPlanner::new()));

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.lock().expect("fft planner poisoned").plan_fft(len, direction)
}

/// Square 2D complex FFT of side `len`, applied in place.
pub(crate) struct Fft2 {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(len: usize) -> Self {
        Self {
            len,
            forward: plan(len, FftDirection::Forward),
            inverse: plan(len, FftDirection::Inverse),
        }
    }

    /// Unnormalised transform; `sign = Forward` uses `exp(-2πi jk/len)`.
    pub(crate) fn process(&self, buf: &mut [Complex64], direction: FftDirection) {
        let fft = match direction {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        };
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(buf, &mut scratch);
        transpose_in_place(buf, self.len);
        fft.process_with_scratch(buf, &mut scratch);
        transpose_in_place(buf, self.len);
    }
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Per-grid-size constants shared by every field on that grid.
pub struct SpectralGrid {
    n: usize,
    padded: usize,
    /// Laplacian symbol `4π²|k|²` per storage index.
    laplace_symbol: Vec<f64>,
    /// `false` on the Nyquist row and column.
    active: Vec<bool>,
    /// Storage index of `-k` for each storage index.
    mirror: Vec<usize>,
    /// Storage index in the padded array for each active mode.
    padded_index: Vec<usize>,
    fft_n: Fft2,
    fft_padded: Fft2,
}

impl SpectralGrid {
    /// Shared grid for side `n`; validated to be even and ≥ 8.
    pub fn get(n: usize) -> Result<Arc<SpectralGrid>> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::GridSize(n));
        }
        let mut cache = GRIDS.lock().expect("grid cache poisoned");
        Ok(cache
            .entry(n)
            .or_insert_with(|| Arc::new(SpectralGrid::build(n)))
            .clone())
    }

    fn build(n: usize) -> Self {
        let padded = 3 * n / 2;
        let half = n / 2;
        let mut laplace_symbol = vec![0.0; n * n];
        let mut active = vec![false; n * n];
        let mut mirror = vec![0; n * n];
        let mut padded_index = vec![0; n * n];
        let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
        for i1 in 0..n {
            for i2 in 0..n {
                let idx = i1 * n + i2;
                let (k1, k2) = (wavenumber(i1, n), wavenumber(i2, n));
                laplace_symbol[idx] = four_pi2 * ((k1 * k1 + k2 * k2) as f64);
                active[idx] = i1 != half && i2 != half;
                mirror[idx] = storage(-k1, n) * n + storage(-k2, n);
                padded_index[idx] = storage(k1, padded) * padded + storage(k2, padded);
            }
        }
        Self {
            n,
            padded,
            laplace_symbol,
            active,
            mirror,
            padded_index,
            fft_n: Fft2::new(n),
            fft_padded: Fft2::new(padded),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Side of the 3/2-padded grid used for dealiased products.
    pub fn padded(&self) -> usize {
        self.padded
    }

    pub fn laplace_symbol(&self) -> &[f64] {
        &self.laplace_symbol
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    pub fn mirror(&self, idx: usize) -> usize {
        self.mirror[idx]
    }

    /// Wavenumber pair of a storage index.
    pub fn wavevector(&self, idx: usize) -> (i64, i64) {
        (wavenumber(idx / self.n, self.n), wavenumber(idx % self.n, self.n))
    }

    /// Storage index of a wavevector, if it lies in the active set.
    pub fn index_of(&self, k: (i64, i64)) -> Option<usize> {
        let lim = (self.n / 2) as i64;
        if k.0.abs() >= lim || k.1.abs() >= lim {
            return None;
        }
        Some(storage(k.0, self.n) * self.n + storage(k.1, self.n))
    }

    pub(crate) fn fft_n(&self) -> &Fft2 {
        &self.fft_n
    }

    pub(crate) fn fft_padded(&self) -> &Fft2 {
        &self.fft_padded
    }

    pub(crate) fn padded_index(&self, idx: usize) -> usize {
        self.padded_index[idx]
    }

    /// Zero the Nyquist entries and replace every pair `(c(k), c(-k))` by
    /// its Hermitian average.
    pub(crate) fn symmetrize(&self, modes: &mut [Complex64]) {
        for idx in 0..modes.len() {
            if !self.active[idx] {
                modes[idx] = Complex64::new(0.0, 0.0);
                continue;
            }
            let m = self.mirror[idx];
            if m == idx {
                modes[idx].im = 0.0;
            } else if m > idx {
                let avg = 0.5 * (modes[idx] + modes[m].conj());
                modes[idx] = avg;
                modes[m] = avg.conj();
            }
        }
    }
}

pub(crate) fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

pub(crate) fn storage(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}
