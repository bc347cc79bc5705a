//! Mollified spatial white noise and the Wick constant `c_δ`.
//!
//! Coefficients are drawn per wavevector from a ChaCha stream selected by
//! `(seed, sample index)` and positioned by a key of `k`, so a sample does
//! not depend on the grid size, the mollifier or the order of evaluation.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus_field::{SpectralGrid, TorusField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierShape {
    /// `rhohat(y) = 1` for `y < 1/2`, else 0.
    SharpCutoff,
    /// `rhohat(y) = exp(−2π² y²)`.
    GaussianBump,
}

impl MollifierShape {
    pub fn name(self) -> &'static str {
        match self {
            MollifierShape::SharpCutoff => "sharp_cutoff",
            MollifierShape::GaussianBump => "gaussian_bump",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub shape: MollifierShape,
    pub delta: f64,
}

impl MollifierSpec {
    pub fn new(shape: MollifierShape, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Domain(format!("mollifier scale must be positive, got {delta}")));
        }
        Ok(Self { shape, delta })
    }

    /// Profile as a function of `y = δ|k|`.
    pub fn profile(&self, y: f64) -> f64 {
        match self.shape {
            MollifierShape::SharpCutoff => {
                if y < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            MollifierShape::GaussianBump => {
                let p = std::f64::consts::PI;
                (-2.0 * p * p * y * y).exp()
            }
        }
    }

    pub fn rhohat(&self, k: (i64, i64)) -> f64 {
        let r = ((k.0 * k.0 + k.1 * k.1) as f64).sqrt();
        self.profile(self.delta * r)
    }

    /// Errors unless the profile has decayed to 1e-3 at the Nyquist shell.
    pub fn check_resolved(&self, n: usize) -> Result<()> {
        let value = self.profile(self.delta * (n / 2) as f64);
        if value > 1e-3 {
            return Err(Error::MollifierTooWide { value });
        }
        Ok(())
    }

    /// `rhohat(δk)` in storage order on grid `n`, zero off the active set.
    pub fn multiplier(&self, n: usize) -> Result<Vec<f64>> {
        let grid = SpectralGrid::get(n)?;
        Ok((0..n * n)
            .map(|i| if grid.is_active(i) { self.rhohat(grid.wavevector(i)) } else { 0.0 })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub field: TorusField,
    pub seed: u64,
    pub index: u64,
    pub mollifier: MollifierSpec,
}

fn zigzag(x: i64) -> u64 {
    ((x << 1) ^ (x >> 63)) as u64
}

/// Position of the draws for the pair `±k` (with `k` its canonical member).
fn mode_key(k: (i64, i64)) -> u64 {
    let (a, b) = (zigzag(k.0), zigzag(k.1));
    (a + b) * (a + b + 1) / 2 + b
}

fn canonical(k: (i64, i64)) -> bool {
    k.0 > 0 || (k.0 == 0 && k.1 > 0)
}

/// Two independent standard normals for mode key `key`.
fn normal_pair(rng: &mut ChaCha8Rng, key: u64) -> (f64, f64) {
    rng.set_word_pos(4 * key as u128);
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

/// Sample `index` of the noise stream `seed`, mollified by `mollifier`.
pub fn sample_noise_indexed(seed: u64, index: u64, mollifier: &MollifierSpec, n: usize) -> Result<NoiseSample> {
    mollifier.check_resolved(n)?;
    let grid = SpectralGrid::get(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut modes = vec![Complex64::new(0.0, 0.0); n * n];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for idx in 0..n * n {
        if !grid.is_active(idx) {
            continue;
        }
        let k = grid.wavevector(idx);
        if k == (0, 0) {
            let (z, _) = normal_pair(&mut rng, 0);
            modes[idx] = Complex64::new(mollifier.rhohat(k) * z, 0.0);
        } else if canonical(k) {
            let rho = mollifier.rhohat(k);
            if rho == 0.0 {
                continue;
            }
            let (z1, z2) = normal_pair(&mut rng, mode_key(k));
            let c = Complex64::new(rho * s * z1, rho * s * z2);
            modes[idx] = c;
            modes[grid.mirror(idx)] = c.conj();
        }
    }
    Ok(NoiseSample {
        field: TorusField::from_modes(n, modes)?,
        seed,
        index,
        mollifier: *mollifier,
    })
}

pub fn sample_noise(seed: u64, mollifier: &MollifierSpec, n: usize) -> Result<NoiseSample> {
    sample_noise_indexed(seed, 0, mollifier, n)
}

/// `c_δ = Σ_{k≠0} rhohat(δk)² / (4π²|k|²)` over the active modes.
pub fn renorm_constant(mollifier: &MollifierSpec, n: usize) -> Result<f64> {
    mollifier.check_resolved(n)?;
    let grid = SpectralGrid::get(n)?;
    let sym = grid.laplace_symbol();
    let mut terms: Vec<f64> = (0..n * n)
        .filter(|&i| i != 0 && grid.is_active(i))
        .map(|i| {
            let r = mollifier.rhohat(grid.wavevector(i));
            r * r / sym[i]
        })
        .collect();
    // smallest first, so the sum does not depend on the grid size
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_field::RealTrigBasis;

    fn sharp(delta: f64) -> MollifierSpec {
        MollifierSpec::new(MollifierShape::SharpCutoff, delta).unwrap()
    }

    fn gauss(delta: f64) -> MollifierSpec {
        MollifierSpec::new(MollifierShape::GaussianBump, delta).unwrap()
    }

    #[test]
    fn profiles() {
        for m in [sharp(0.1), gauss(0.1)] {
            assert_eq!(m.rhohat((0, 0)), 1.0);
            for k in [(1, 0), (3, 4), (-7, 2)] {
                let r = m.rhohat(k);
                assert!((0.0..=1.0).contains(&r));
            }
        }
        assert_eq!(sharp(0.1).rhohat((4, 0)), 1.0);
        assert_eq!(sharp(0.1).rhohat((5, 0)), 0.0);
        assert!(MollifierSpec::new(MollifierShape::SharpCutoff, 0.0).is_err());
        assert!(matches!(gauss(1.0 / 32.0).check_resolved(32), Err(Error::MollifierTooWide { .. })));
        assert!(gauss(1.0 / 32.0).check_resolved(48).is_ok());
        assert!(matches!(
            sample_noise(1, &sharp(1.0 / 64.0), 32),
            Err(Error::MollifierTooWide { .. })
        ));
        assert!(renorm_constant(&sharp(1.0 / 64.0), 32).is_err());
    }

    #[test]
    fn wide_mollifier_leaves_the_zero_mode() {
        let m = gauss(50.0);
        let s = sample_noise(3, &m, 16).unwrap();
        let nonzero: Vec<usize> = (0..256).filter(|&i| s.field.modes()[i].norm() != 0.0).collect();
        assert_eq!(nonzero, vec![0]);
        assert_eq!(renorm_constant(&m, 16).unwrap(), 0.0);
    }

    #[test]
    fn replay_and_common_random_numbers() {
        let m = sharp(1.0 / 8.0);
        let a = sample_noise_indexed(9, 4, &m, 16).unwrap();
        let b = sample_noise_indexed(9, 4, &m, 16).unwrap();
        assert_eq!(a.field, b.field);
        assert_ne!(a.field, sample_noise_indexed(9, 5, &m, 16).unwrap().field);
        assert_ne!(a.field, sample_noise_indexed(10, 4, &m, 16).unwrap().field);
        // the same wavevector carries the same draw on every grid and scale
        let c = sample_noise_indexed(9, 4, &sharp(1.0 / 16.0), 32).unwrap();
        for k in [(0, 0), (1, 0), (2, -3), (-1, 1)] {
            assert_eq!(a.field.coeff(k), c.field.coeff(k));
        }
        assert_eq!(a.field.hermitian_defect(), 0.0);
    }

    #[test]
    fn basis_variances_and_isometry() {
        let n = 16;
        let m = gauss(1.0 / 10.0);
        let basis = RealTrigBasis::new(n).unwrap();
        let picks = [0usize, 1, 2, 5, 12];
        let fields = basis.truncated(13).unwrap();
        let samples = 10_000;
        let mut proj = vec![vec![0.0; samples]; picks.len()];
        for s in 0..samples {
            let xi = sample_noise_indexed(77, s as u64, &m, n).unwrap().field;
            for (p, &i) in picks.iter().enumerate() {
                proj[p][s] = xi.inner_l2(&fields[i]).unwrap();
            }
        }
        let nf = samples as f64;
        for (p, &i) in picks.iter().enumerate() {
            let r2 = m.rhohat(basis.functions()[i].k).powi(2);
            let var = proj[p].iter().map(|x| x * x).sum::<f64>() / nf;
            // stderr of the second moment of N(0, r²) is r²·√(2/n)
            let se = r2 * (2.0 / nf).sqrt();
            assert!((var - r2).abs() <= 3.0 * se, "{i}: {var} vs {r2}");
        }
        for a in 0..picks.len() {
            for b in (a + 1)..picks.len() {
                let prods: Vec<f64> = (0..samples).map(|s| proj[a][s] * proj[b][s]).collect();
                let mean = prods.iter().sum::<f64>() / nf;
                let sd = (prods.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
                assert!(mean.abs() <= 3.0 * sd / nf.sqrt());
            }
        }
    }

    #[test]
    fn renorm_constant_matches_monte_carlo() {
        let n = 16;
        let m = gauss(1.0 / 6.0);
        let c = renorm_constant(&m, n).unwrap();
        let four_pi2 = 4.0 * std::f64::consts::PI.powi(2);
        let samples = 10_000;
        let vals: Vec<f64> = (0..samples)
            .map(|s| {
                let xi = sample_noise_indexed(5, s, &m, n).unwrap().field;
                // K∗ξ by dividing each coefficient by 4π²|k|²
                let mut modes = xi.modes().to_vec();
                for (i, c) in modes.iter_mut().enumerate() {
                    let (k1, k2) = ((i / n) as i64, (i % n) as i64);
                    let k1 = if k1 > n as i64 / 2 { k1 - n as i64 } else { k1 };
                    let k2 = if k2 > n as i64 / 2 { k2 - n as i64 } else { k2 };
                    let r2 = (k1 * k1 + k2 * k2) as f64;
                    *c = if r2 == 0.0 { Complex64::new(0.0, 0.0) } else { *c / (four_pi2 * r2) };
                }
                let kxi = TorusField::from_modes(n, modes).unwrap().to_physical();
                let x = xi.to_physical();
                kxi.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / (n * n) as f64
            })
            .collect();
        let nf = samples as f64;
        let mean = vals.iter().sum::<f64>() / nf;
        let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        assert!((mean - c).abs() <= 3.0 * sd / nf.sqrt(), "{mean} vs {c}");
    }

    #[test]
    fn logarithmic_growth_for_sharp_cutoff() {
        let deltas: Vec<f64> = (3..=6).map(|j| 2f64.powi(-j)).collect();
        let cs: Vec<f64> = deltas.iter().map(|&d| renorm_constant(&sharp(d), 128).unwrap()).collect();
        assert!(cs.windows(2).all(|w| w[1] > w[0]));
        let xs: Vec<f64> = deltas.iter().map(|d| (1.0 / d).ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, cs.iter().sum::<f64>() / 4.0);
        let slope = xs.iter().zip(&cs).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let target = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((slope - target).abs() <= 0.1 * target, "slope {slope}");
    }

    #[test]
    fn stable_under_grid_refinement() {
        for m in [sharp(1.0 / 8.0), gauss(1.0 / 8.0), gauss(1.0 / 16.0)] {
            let n0 = if m.shape == MollifierShape::GaussianBump { (1.2 / m.delta) as usize / 2 * 2 + 2 } else { 16 };
            let n0 = n0.max(16);
            let a = renorm_constant(&m, n0).unwrap();
            let b = renorm_constant(&m, 2 * n0).unwrap();
            assert!((a - b).abs() <= 1e-6 * b, "{m:?}: {a} vs {b}");
        }
    }
}
