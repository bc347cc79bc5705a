//! Observables `F(u) = f(ℓ(u))` on trajectories, where `ℓ` is a linear
//! pairing of the path against a test field `φ` (at the final time, or
//! time-averaged by the trapezoid rule) and `f` is a smooth profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus_field::{TimePath, TorusField};

/// Scalar profile `f` with its first two derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Profile {
    /// `f ≡ value`
    Constant { value: f64 },
    /// `f(y) = amplitude · tanh(y / scale)`
    Tanh { amplitude: f64, scale: f64 },
    /// `f(y) = amplitude · cos(frequency · y)`
    Cosine { amplitude: f64, frequency: f64 },
    /// `f(y) = a + b y + c y² / 2`. Unbounded, so it does not satisfy the
    /// boundedness hypothesis; it exists for exactly solvable checks.
    Quadratic { a: f64, b: f64, c: f64 },
}

impl Profile {
    pub fn value(&self, y: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Tanh { amplitude, scale } => amplitude * (y / scale).tanh(),
            Profile::Cosine { amplitude, frequency } => amplitude * (frequency * y).cos(),
            Profile::Quadratic { a, b, c } => a + b * y + 0.5 * c * y * y,
        }
    }

    pub fn d1(&self, y: f64) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::Tanh { amplitude, scale } => {
                let t = (y / scale).tanh();
                amplitude / scale * (1.0 - t * t)
            }
            Profile::Cosine { amplitude, frequency } => -amplitude * frequency * (frequency * y).sin(),
            Profile::Quadratic { b, c, .. } => b + c * y,
        }
    }

    pub fn d2(&self, y: f64) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::Tanh { amplitude, scale } => {
                let t = (y / scale).tanh();
                -2.0 * amplitude / (scale * scale) * t * (1.0 - t * t)
            }
            Profile::Cosine { amplitude, frequency } => {
                -amplitude * frequency * frequency * (frequency * y).cos()
            }
            Profile::Quadratic { c, .. } => c,
        }
    }

    /// Declared global bounds `(M₀, M₁, M₂)` on `|f|, |f′|, |f″|`, or `None`
    /// for unbounded profiles.
    pub fn bounds(&self) -> Option<[f64; 3]> {
        match *self {
            Profile::Constant { value } => Some([value.abs(), 0.0, 0.0]),
            Profile::Tanh { amplitude, scale } => {
                let a = amplitude.abs();
                let s = scale.abs();
                // max |tanh″| = 4/(3√3)
                Some([a, a / s, a / (s * s) * 4.0 / (3.0 * 3f64.sqrt())])
            }
            Profile::Cosine { amplitude, frequency } => {
                let a = amplitude.abs();
                let w = frequency.abs();
                Some([a, a * w, a * w * w])
            }
            Profile::Quadratic { .. } => None,
        }
    }

    /// Check the declared bounds on `samples` equispaced arguments in
    /// `[-range, range]`; `Ok(false)` for unbounded profiles.
    pub fn check_bounds(&self, range: f64, samples: usize) -> Result<bool> {
        let Some([m0, m1, m2]) = self.bounds() else {
            return Ok(false);
        };
        let slack = 1.0 + 1e-12;
        for i in 0..samples {
            let y = -range + 2.0 * range * i as f64 / (samples.max(2) - 1) as f64;
            if self.value(y).abs() > m0 * slack + 1e-300
                || self.d1(y).abs() > m1 * slack + 1e-300
                || self.d2(y).abs() > m2 * slack + 1e-300
            {
                return Err(Error::Domain(format!("profile bound violated at y = {y}")));
            }
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Constant { value } => value.is_finite(),
            Profile::Tanh { amplitude, scale } => amplitude.is_finite() && scale.is_finite() && scale != 0.0,
            Profile::Cosine { amplitude, frequency } => amplitude.is_finite() && frequency.is_finite(),
            Profile::Quadratic { a, b, c } => a.is_finite() && b.is_finite() && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid profile {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// `f(⟨u(T), φ⟩)`
    Endpoint,
    /// `f(∫₀ᵀ ⟨u(t), φ⟩ dt)`, trapezoid rule on the path's time grid.
    TimeAverage,
}

#[derive(Clone, Debug)]
pub struct Observable {
    kind: ObservableKind,
    profile: Profile,
    weight: TorusField,
}

/// `DF|_w[y] = Σ_n coefficients[n] · ⟨φ, y(t_n)⟩`, i.e. the Riesz kernel
/// `μ(t_n) = coefficients[n] · φ`.
#[derive(Clone, Debug)]
pub struct RieszKernel {
    pub phi: TorusField,
    pub coefficients: Vec<f64>,
}

impl RieszKernel {
    /// Kernel field at node `n`.
    pub fn field(&self, n: usize) -> TorusField {
        self.phi.scaled(self.coefficients[n])
    }

    pub fn pair(&self, y: &TimePath) -> Result<f64> {
        if y.len() != self.coefficients.len() {
            return Err(Error::Domain("path length does not match kernel".into()));
        }
        self.phi.check_grid(&y.steps()[0])?;
        Ok(y
            .steps()
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(f, c)| c * self.phi.dot(f))
            .sum())
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|c| *c == 0.0) || self.phi.l2_norm() == 0.0
    }
}

impl Observable {
    pub fn new(kind: ObservableKind, profile: Profile, weight: TorusField) -> Result<Self> {
        profile.validate()?;
        Ok(Self { kind, profile, weight })
    }

    pub fn kind(&self) -> ObservableKind {
        self.kind
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn weight(&self) -> &TorusField {
        &self.weight
    }

    /// Quadrature weights of the pairing over the path's nodes.
    pub fn node_weights(&self, nodes: usize, dt: f64) -> Vec<f64> {
        let mut w = vec![0.0; nodes];
        match self.kind {
            ObservableKind::Endpoint => w[nodes - 1] = 1.0,
            ObservableKind::TimeAverage => {
                if nodes == 1 {
                    return w;
                }
                w.iter_mut().for_each(|x| *x = dt);
                w[0] = 0.5 * dt;
                w[nodes - 1] = 0.5 * dt;
            }
        }
        w
    }

    /// The linear pairing `ℓ(u)`.
    pub fn pairing(&self, u: &TimePath) -> Result<f64> {
        self.weight.check_grid(&u.steps()[0])?;
        let w = self.node_weights(u.len(), u.dt());
        Ok(u
            .steps()
            .iter()
            .zip(&w)
            .filter(|(_, q)| **q != 0.0)
            .map(|(f, q)| q * self.weight.dot(f))
            .sum())
    }

    pub fn eval(&self, u: &TimePath) -> Result<f64> {
        Ok(self.profile.value(self.pairing(u)?))
    }

    /// `DF|_w[y]`
    pub fn d1(&self, w: &TimePath, y: &TimePath) -> Result<f64> {
        w.check_compatible(y)?;
        Ok(self.profile.d1(self.pairing(w)?) * self.pairing(y)?)
    }

    /// `D²F|_w[y1, y2]`
    pub fn d2(&self, w: &TimePath, y1: &TimePath, y2: &TimePath) -> Result<f64> {
        w.check_compatible(y1)?;
        w.check_compatible(y2)?;
        Ok(self.profile.d2(self.pairing(w)?) * (self.pairing(y1)? * self.pairing(y2)?))
    }

    pub fn d1_riesz_kernel(&self, w: &TimePath) -> Result<RieszKernel> {
        let slope = self.profile.d1(self.pairing(w)?);
        let coefficients = self
            .node_weights(w.len(), w.dt())
            .into_iter()
            .map(|q| q * slope)
            .collect();
        Ok(RieszKernel {
            phi: self.weight.clone(),
            coefficients,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_path(n: usize, nodes: usize, seed: u64, amp: f64) -> TimePath {
        let steps = (0..nodes)
            .map(|i| TorusField::random_smooth(n, seed * 1000 + i as u64, 1.5, amp).unwrap())
            .collect();
        TimePath::new(steps, 0.25 / (nodes - 1) as f64).unwrap()
    }

    fn phi(n: usize) -> TorusField {
        TorusField::cosine_mode(n, (1, 0), 1.0)
            .unwrap()
            .add(&TorusField::sine_mode(n, (1, 2), 0.5).unwrap())
            .unwrap()
    }

    fn profiles() -> Vec<Profile> {
        vec![
            Profile::Tanh { amplitude: 0.7, scale: 0.4 },
            Profile::Cosine { amplitude: 0.3, frequency: 2.0 },
            Profile::Quadratic { a: 0.1, b: -0.4, c: 1.3 },
        ]
    }

    #[test]
    fn constant_and_zero_weight_cases() {
        let zero_path = TimePath::zeros(8, 5, 0.01).unwrap();
        let clamp = Observable::new(
            ObservableKind::Endpoint,
            Profile::Tanh { amplitude: 1e-3, scale: 1e-3 },
            phi(8),
        )
        .unwrap();
        assert_eq!(clamp.eval(&zero_path).unwrap(), 0.0);

        let null = Observable::new(ObservableKind::Endpoint, Profile::Cosine { amplitude: 2.0, frequency: 1.0 }, TorusField::zeros(8).unwrap()).unwrap();
        let u = random_path(8, 5, 1, 1.0);
        assert_eq!(null.eval(&u).unwrap(), 2.0);
        assert!(null.d1_riesz_kernel(&u).unwrap().is_zero());
        assert_eq!(null.d1(&u, &random_path(8, 5, 2, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn pairing_matches_physical_quadrature() {
        for kind in [ObservableKind::Endpoint, ObservableKind::TimeAverage] {
            let f = Observable::new(kind, Profile::Quadratic { a: 0.0, b: 1.0, c: 0.0 }, phi(16)).unwrap();
            let u = random_path(16, 9, 3, 1.0);
            let p = phi(16).to_physical();
            let weights = f.node_weights(u.len(), u.dt());
            let oracle: f64 = u
                .steps()
                .iter()
                .zip(&weights)
                .map(|(s, q)| q * s.to_physical().iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() / 256.0)
                .sum();
            assert!((f.eval(&u).unwrap() - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [ObservableKind::Endpoint, ObservableKind::TimeAverage] {
            for profile in profiles() {
                let f = Observable::new(kind, profile.clone(), phi(8)).unwrap();
                let w = random_path(8, 6, 4, 0.5);
                let y = random_path(8, 6, 5, 0.5);
                let y2 = random_path(8, 6, 6, 0.5);
                let eps = 1e-5;
                let fd1 = (f.eval(&w.axpy(eps, &y).unwrap()).unwrap() - f.eval(&w.axpy(-eps, &y).unwrap()).unwrap()) / (2.0 * eps);
                assert!((fd1 - f.d1(&w, &y).unwrap()).abs() <= 1e-7, "{kind:?} {profile:?}");

                let e2 = 1e-3;
                let fd2 = (f.eval(&w.axpy(e2, &y).unwrap()).unwrap() - 2.0 * f.eval(&w).unwrap()
                    + f.eval(&w.axpy(-e2, &y).unwrap()).unwrap())
                    / (e2 * e2);
                assert!((fd2 - f.d2(&w, &y, &y).unwrap()).abs() <= 1e-5, "{kind:?} {profile:?}");
                assert_eq!(f.d2(&w, &y, &y2).unwrap(), f.d2(&w, &y2, &y).unwrap());
                assert_eq!(f.d2(&w, &TimePath::zeros(8, 6, w.dt()).unwrap(), &y).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn riesz_kernel_reproduces_d1() {
        for kind in [ObservableKind::Endpoint, ObservableKind::TimeAverage] {
            let f = Observable::new(kind, Profile::Tanh { amplitude: 0.7, scale: 0.4 }, phi(8)).unwrap();
            let w = random_path(8, 7, 8, 0.5);
            let y = random_path(8, 7, 9, 0.5);
            let kernel = f.d1_riesz_kernel(&w).unwrap();
            let direct = f.d1(&w, &y).unwrap();
            assert!((kernel.pair(&y).unwrap() - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            let by_fields: f64 = (0..y.len()).map(|i| kernel.field(i).inner_l2(&y.steps()[i]).unwrap()).sum();
            assert!((by_fields - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn boundedness_on_random_paths() {
        let profile = Profile::Tanh { amplitude: 0.7, scale: 0.4 };
        assert!(profile.check_bounds(50.0, 10_001).unwrap());
        assert!(Profile::Cosine { amplitude: 0.3, frequency: 2.0 }.check_bounds(50.0, 10_001).unwrap());
        assert!(!Profile::Quadratic { a: 0.0, b: 0.0, c: 1.0 }.check_bounds(1.0, 10).unwrap());
        let f = Observable::new(ObservableKind::Endpoint, profile.clone(), phi(8)).unwrap();
        let m0 = profile.bounds().unwrap()[0];
        for seed in 0..10_000u64 {
            let u = TimePath::new(vec![TorusField::random_smooth(8, seed, 0.0, 20.0).unwrap()], 1.0).unwrap();
            assert!(f.eval(&u).unwrap().abs() <= m0);
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let f = Observable::new(ObservableKind::Endpoint, Profile::Constant { value: 1.0 }, phi(16)).unwrap();
        assert!(matches!(f.eval(&random_path(8, 3, 1, 1.0)), Err(Error::Shape { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn d1_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, s in 0u64..500) {
            let f = Observable::new(ObservableKind::TimeAverage, Profile::Tanh { amplitude: 0.7, scale: 0.4 }, phi(8)).unwrap();
            let w = random_path(8, 5, s, 0.5);
            let y1 = random_path(8, 5, s + 1, 0.5);
            let y2 = random_path(8, 5, s + 2, 0.5);
            let combo = y1.axpy(0.0, &y1).unwrap();
            let combo = TimePath::new(combo.steps().iter().zip(y2.steps()).map(|(p, q)| {
                let mut r = p.scaled(a); r.axpy(b, q).unwrap(); r
            }).collect(), w.dt()).unwrap();
            let lhs = f.d1(&w, &combo).unwrap();
            let rhs = a * f.d1(&w, &y1).unwrap() + b * f.d1(&w, &y2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
