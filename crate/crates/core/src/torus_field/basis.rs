use crate::error::{Error, Result};

use super::TorusField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TrigKind {
    Constant,
    Cos,
    Sin,
}

/// One `L²`-orthonormal real trigonometric function: `1`, `√2 cos(2πk·x)`
/// or `√2 sin(2πk·x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BasisFunction {
    pub k: (i64, i64),
    pub kind: TrigKind,
}

impl BasisFunction {
    pub fn field(&self, n: usize) -> Result<TorusField> {
        let amp = std::f64::consts::SQRT_2;
        match self.kind {
            TrigKind::Constant => TorusField::constant(n, 1.0),
            TrigKind::Cos => TorusField::cosine_mode(n, self.k, amp),
            TrigKind::Sin => TorusField::sine_mode(n, self.k, amp),
        }
    }

    pub fn radius(&self) -> f64 {
        ((self.k.0 * self.k.0 + self.k.1 * self.k.1) as f64).sqrt()
    }
}

/// The real trigonometric basis of the active modes, ordered by `|k|`,
/// then lexicographically in `k`, cosine before sine.
#[derive(Clone, Debug)]
pub struct RealTrigBasis {
    n: usize,
    functions: Vec<BasisFunction>,
}

impl RealTrigBasis {
    pub fn new(n: usize) -> Result<Self> {
        super::SpectralGrid::get(n)?;
        let lim = (n / 2) as i64 - 1;
        let mut ks = Vec::new();
        for k1 in 0..=lim {
            for k2 in -lim..=lim {
                if k1 > 0 || k2 > 0 {
                    ks.push((k1, k2));
                }
            }
        }
        ks.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
        let mut functions = vec![BasisFunction {
            k: (0, 0),
            kind: TrigKind::Constant,
        }];
        for k in ks {
            functions.push(BasisFunction { k, kind: TrigKind::Cos });
            functions.push(BasisFunction { k, kind: TrigKind::Sin });
        }
        Ok(Self { n, functions })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    /// First `m` basis functions as fields.
    pub fn truncated(&self, m: usize) -> Result<Vec<TorusField>> {
        if m > self.len() {
            return Err(Error::BasisTooLarge {
                requested: m,
                available: self.len(),
            });
        }
        self.functions[..m].iter().map(|b| b.field(self.n)).collect()
    }

    /// Coordinates of `f` on the first `m` basis functions.
    pub fn coordinates(&self, f: &TorusField, m: usize) -> Result<Vec<f64>> {
        self.truncated(m)?.iter().map(|e| e.inner_l2(f)).collect()
    }
}
