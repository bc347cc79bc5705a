use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in nonlinearities `g` with their first two derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum GFunction {
    Zero,
    /// `g(x) = a + b x`; `a` alone gives additive noise, `b` alone linear PAM.
    Affine { a: f64, b: f64 },
    /// `g(x) = amplitude · sin x`
    Sine { amplitude: f64 },
    /// `g(x) = amplitude · sin³ x`, which vanishes to second order at 0.
    SinCubed { amplitude: f64 },
}

impl GFunction {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            GFunction::Zero => 0.0,
            GFunction::Affine { a, b } => a + b * x,
            GFunction::Sine { amplitude } => amplitude * x.sin(),
            GFunction::SinCubed { amplitude } => {
                let s = x.sin();
                amplitude * s * s * s
            }
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            GFunction::Zero => 0.0,
            GFunction::Affine { b, .. } => b,
            GFunction::Sine { amplitude } => amplitude * x.cos(),
            GFunction::SinCubed { amplitude } => {
                let (s, c) = x.sin_cos();
                3.0 * amplitude * s * s * c
            }
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            GFunction::Zero | GFunction::Affine { .. } => 0.0,
            GFunction::Sine { amplitude } => -amplitude * x.sin(),
            GFunction::SinCubed { amplitude } => {
                let (s, c) = x.sin_cos();
                amplitude * (6.0 * s * c * c - 3.0 * s * s * s)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            GFunction::Zero => true,
            GFunction::Affine { a, b } => a == 0.0 && b == 0.0,
            GFunction::Sine { amplitude } | GFunction::SinCubed { amplitude } => amplitude == 0.0,
        }
    }

    /// Declared bounds `(sup|g|, sup|g′|, sup|g″|)`; `None` when unbounded.
    pub fn bounds(&self) -> Option<[f64; 3]> {
        match *self {
            GFunction::Zero => Some([0.0; 3]),
            GFunction::Affine { a, b } => (b == 0.0).then_some([a.abs(), 0.0, 0.0]),
            GFunction::Sine { amplitude } => Some([amplitude.abs(); 3]),
            // sup |3 s² c| = 2/√3, sup |3 s (2 − 3 s²)| = 3
            GFunction::SinCubed { amplitude } => {
                let a = amplitude.abs();
                Some([a, a * 2.0 / 3f64.sqrt(), 3.0 * a])
            }
        }
    }

    /// `g(0) = g′(0) = g″(0) = 0`, checked by evaluation.
    pub fn vanishes_to_second_order(&self) -> bool {
        self.value(0.0) == 0.0 && self.d1(0.0) == 0.0 && self.d2(0.0) == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GFunction::Zero => true,
            GFunction::Affine { a, b } => a.is_finite() && b.is_finite(),
            GFunction::Sine { amplitude } | GFunction::SinCubed { amplitude } => amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid nonlinearity {self:?}")))
        }
    }
}
