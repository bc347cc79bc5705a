//! Truncated-basis matrices of the Hessian form `A`, its singular part `Ã`
//! and the trace-class remainder `q = A − Ã`.
//!
//! `A[k,l] = DF(v_{kl}) + D²F[v_k, v_l]` and `Ã[k,l] = DF(v^{wn}_{kl})`.
//! The `DF(·)` terms are evaluated by pairing the second-variation sources
//! with one adjoint solve; [`HessianForm::evaluate`] marches every
//! variation explicitly instead and serves as the reference.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpam_solver::{AdjointWeights, Linearization, PaddedPath, SolverConfig};
use crate::linalg::{eigen_sym, Matrix};
use crate::observables::Observable;
use crate::torus_field::{BasisFunction, RealTrigBasis, TimePath, TorusField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianBundle {
    pub basis: Vec<BasisFunction>,
    pub a: Matrix,
    pub atilde: Matrix,
    pub q: Matrix,
    /// Ascending.
    pub eig_a: Vec<f64>,
    pub trace_q: f64,
    pub trace_atilde: f64,
    pub hs_norm_a: f64,
    /// Frobenius mass of `A` in rows/columns from `M/2` on.
    pub hs_norm_tail_estimate: f64,
}

impl HessianBundle {
    pub fn from_matrices(basis: Vec<BasisFunction>, a: Matrix, atilde: Matrix) -> Result<Self> {
        for m in [&a, &atilde] {
            let asym = m.asymmetry();
            if asym > 1e-10 * m.frobenius().max(1e-300) {
                return Err(Error::NotSymmetric(asym));
            }
        }
        let a = a.symmetrized();
        let atilde = atilde.symmetrized();
        let q = a.sub(&atilde)?;
        let eig_a = eigen_sym(&a)?.values;
        let m = a.n();
        let half = m / 2;
        let mut tail = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i.max(j) >= half {
                    tail += a[(i, j)] * a[(i, j)];
                }
            }
        }
        Ok(Self {
            basis,
            trace_q: q.trace(),
            trace_atilde: atilde.trace(),
            hs_norm_a: a.frobenius(),
            hs_norm_tail_estimate: tail.sqrt(),
            a,
            atilde,
            q,
            eig_a,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.a.n()
    }

    /// Bundle on the first `m` basis functions.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m > self.basis_size() {
            return Err(Error::BasisTooLarge {
                requested: m,
                available: self.basis_size(),
            });
        }
        Self::from_matrices(self.basis[..m].to_vec(), self.a.leading(m), self.atilde.leading(m))
    }
}

/// The bilinear forms at a fixed `(h, w_h)`.
pub struct HessianForm<'a> {
    lin: Linearization,
    observable: &'a Observable,
    adjoint: AdjointWeights,
}

/// Per-direction data reused across pairs.
struct Direction {
    field_pad: Vec<f64>,
    v: TimePath,
    v_pad: PaddedPath,
}

impl<'a> HessianForm<'a> {
    pub fn new(h: &TorusField, w: &TimePath, observable: &'a Observable, cfg: &SolverConfig) -> Result<Self> {
        let lin = Linearization::new(w, h, cfg)?;
        let adjoint = lin.adjoint(&observable.d1_riesz_kernel(w)?)?;
        Ok(Self {
            lin,
            observable,
            adjoint,
        })
    }

    pub fn linearization(&self) -> &Linearization {
        &self.lin
    }

    fn direction(&self, k: &TorusField) -> Result<Direction> {
        let v = self.lin.first_variation(k)?;
        Ok(Direction {
            field_pad: self.lin.pad(k),
            v_pad: self.lin.pad_path(&v)?,
            v,
        })
    }

    /// `(A[k,l], Ã[k,l])` with every variation marched explicitly.
    pub fn evaluate(&self, k: &TorusField, l: &TorusField) -> Result<(f64, f64)> {
        let w = self.lin.w();
        let dk = self.direction(k)?;
        let dl = self.direction(l)?;
        let cm = self.lin.second_variation_cm(&dk.v_pad, &dl.v_pad)?;
        let wn = self.lin.second_variation_wn(&dk.v_pad, &dl.v_pad, k, l)?;
        let d2 = self.observable.d2(w, &dk.v, &dl.v)?;
        let dcm = self.observable.d1(w, &cm)?;
        let dwn = self.observable.d1(w, &wn)?;
        Ok((dcm + dwn + d2, dwn))
    }

    fn pair_entry(&self, wcm: &[Option<Vec<f64>>], wwn: &[Option<Vec<f64>>], di: &Direction, dj: &Direction) -> Result<(f64, f64)> {
        let mut cm = 0.0;
        let mut wn = 0.0;
        for e in self.lin.source_nodes() {
            let (vi, vj) = (di.v_pad.node(e), dj.v_pad.node(e));
            if let (Some(wt), Some(a), Some(b)) = (&wcm[e], vi, vj) {
                let s: f64 = wt.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum();
                cm += s / wt.len() as f64;
            }
            if let Some(wt) = &wwn[e] {
                let mut s = 0.0;
                if let Some(a) = vi {
                    s += wt.iter().zip(a).zip(&dj.field_pad).map(|((w, x), y)| w * x * y).sum::<f64>();
                }
                if let Some(b) = vj {
                    s += wt.iter().zip(b).zip(&di.field_pad).map(|((w, x), y)| w * x * y).sum::<f64>();
                }
                wn += s / wt.len() as f64;
            }
        }
        let d2 = self.observable.d2(self.lin.w(), &di.v, &dj.v)?;
        Ok((cm + wn + d2, wn))
    }

    /// Matrices on the given directions, entries `i ≤ j` computed in
    /// parallel and mirrored.
    pub fn assemble_on(&self, basis: Vec<BasisFunction>, fields: &[TorusField]) -> Result<HessianBundle> {
        let m = fields.len();
        let dirs = fields
            .par_iter()
            .map(|k| self.direction(k))
            .collect::<Result<Vec<_>>>()?;
        let h_pad = self.lin.h_padded();
        let nodes = self.lin.nodes();
        let mut wcm: Vec<Option<Vec<f64>>> = vec![None; nodes];
        let mut wwn: Vec<Option<Vec<f64>>> = vec![None; nodes];
        for e in self.lin.source_nodes() {
            if let Some(rho) = self.adjoint.node(e) {
                let g2 = self.lin.d2g_padded(e);
                let g1 = self.lin.dg_padded(e);
                wcm[e] = Some(rho.iter().zip(g2).zip(h_pad).map(|((r, g), h)| r * g * h).collect());
                wwn[e] = Some(rho.iter().zip(g1).map(|(r, g)| r * g).collect());
            }
        }
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
        let entries = pairs
            .par_iter()
            .map(|&(i, j)| self.pair_entry(&wcm, &wwn, &dirs[i], &dirs[j]))
            .collect::<Result<Vec<_>>>()?;
        let mut a = Matrix::zeros(m);
        let mut at = Matrix::zeros(m);
        for (&(i, j), &(x, y)) in pairs.iter().zip(&entries) {
            a[(i, j)] = x;
            a[(j, i)] = x;
            at[(i, j)] = y;
            at[(j, i)] = y;
        }
        HessianBundle::from_matrices(basis, a, at)
    }
}

/// Bundle on the first `m` real trigonometric basis functions.
pub fn assemble(h: &TorusField, w: &TimePath, observable: &Observable, cfg: &SolverConfig, m: usize) -> Result<HessianBundle> {
    let basis = RealTrigBasis::new(cfg.grid_size)?;
    let fields = basis.truncated(m)?;
    let form = HessianForm::new(h, w, observable, cfg)?;
    form.assemble_on(basis.functions()[..m].to_vec(), &fields)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub basis_size: usize,
    pub hs_norm_a: f64,
    pub trace_q: f64,
    pub trace_atilde: f64,
    pub abs_diag_q: f64,
    pub abs_diag_atilde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailStudy {
    pub rows: Vec<TailRow>,
    /// `|x(M_last) − x(M_prev)| / |x(M_last)|`
    pub hs_rel_change: f64,
    pub trace_q_rel_change: f64,
    pub atilde_trace_monotone: bool,
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a).abs() / b.abs()
    }
}

/// Convergence of norms and traces over nested truncations of one bundle.
pub fn hs_tail_study(bundle: &HessianBundle, sizes: &[usize]) -> Result<TailStudy> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("basis sizes must be increasing".into()));
    }
    let rows = sizes
        .iter()
        .map(|&m| {
            let b = bundle.truncate(m)?;
            Ok(TailRow {
                basis_size: m,
                hs_norm_a: b.hs_norm_a,
                trace_q: b.trace_q,
                trace_atilde: b.trace_atilde,
                abs_diag_q: (0..m).map(|i| b.q[(i, i)].abs()).sum(),
                abs_diag_atilde: (0..m).map(|i| b.atilde[(i, i)].abs()).sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (hs_rel_change, trace_q_rel_change) = match rows.len() {
        1 => (0.0, 0.0),
        n => (
            rel_change(rows[n - 2].hs_norm_a, rows[n - 1].hs_norm_a),
            rel_change(rows[n - 2].trace_q, rows[n - 1].trace_q),
        ),
    };
    let atilde_trace_monotone = rows.windows(2).all(|w| w[1].trace_atilde.abs() > w[0].trace_atilde.abs());
    Ok(TailStudy {
        rows,
        hs_rel_change,
        trace_q_rel_change,
        atilde_trace_monotone,
    })
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    basis_size: usize,
    basis: Vec<BasisFunction>,
    eig_a: Vec<f64>,
    trace_q: f64,
    trace_atilde: f64,
    hs_norm_a: f64,
    hs_norm_tail_estimate: f64,
    config_hash: String,
    blobs: Vec<(String, String)>,
}

fn write_blob(path: &Path, m: &Matrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * m.data().len());
    for x in m.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, n: usize) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != 8 * n * n {
        return Err(Error::Format(format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), 8 * n * n)));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_vec(n, data)
}

/// `<stem>.json` header plus raw little-endian `f64` blobs for `A`, `Ã`, `q`.
pub fn write_bundle(dir: &Path, stem: &str, b: &HessianBundle, config_hash: &str) -> Result<()> {
    let mut blobs = Vec::new();
    for (name, m) in [("A", &b.a), ("Atilde", &b.atilde), ("q", &b.q)] {
        let file = format!("{stem}.{name}.f64");
        write_blob(&dir.join(&file), m)?;
        blobs.push((name.to_string(), file));
    }
    let header = BundleHeader {
        basis_size: b.basis_size(),
        basis: b.basis.clone(),
        eig_a: b.eig_a.clone(),
        trace_q: b.trace_q,
        trace_atilde: b.trace_atilde,
        hs_norm_a: b.hs_norm_a,
        hs_norm_tail_estimate: b.hs_norm_tail_estimate,
        config_hash: config_hash.to_string(),
        blobs,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

pub fn read_bundle(dir: &Path, stem: &str) -> Result<(HessianBundle, String)> {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let header: BundleHeader = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let find = |name: &str| -> Result<Matrix> {
        let file = header
            .blobs
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("bundle lacks blob {name}")))?;
        read_blob(&dir.join(&file.1), header.basis_size)
    };
    let bundle = HessianBundle::from_matrices(header.basis.clone(), find("A")?, find("Atilde")?)?;
    Ok((bundle, header.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpam_solver::{solve_gpam, GFunction, StepScheme};
    use crate::observables::{ObservableKind, Profile};

    struct Case {
        cfg: SolverConfig,
        u0: TorusField,
        h: TorusField,
        f: Observable,
    }

    fn case(g: GFunction, scheme: StepScheme) -> Case {
        let n = 16;
        let cfg = SolverConfig::new(n, 0.1, 8, g).with_scheme(scheme);
        let u0 = TorusField::random_smooth(n, 1, 3.0, 1.5)
            .unwrap()
            .add(&TorusField::constant(n, 0.6).unwrap())
            .unwrap();
        let h = TorusField::random_smooth(n, 2, 3.0, 3.0).unwrap();
        let phi = TorusField::cosine_mode(n, (1, 0), 1.0)
            .unwrap()
            .add(&TorusField::sine_mode(n, (0, 1), 0.7).unwrap())
            .unwrap();
        let f = Observable::new(ObservableKind::Endpoint, Profile::Tanh { amplitude: 0.8, scale: 0.6 }, phi).unwrap();
        Case { cfg, u0, h, f }
    }

    fn w_of(c: &Case, h: &TorusField) -> TimePath {
        solve_gpam(h, &c.u0, &c.cfg).unwrap()
    }

    #[test]
    fn zero_nonlinearity_gives_zero_matrices() {
        let c = case(GFunction::Zero, StepScheme::Implicit);
        let b = assemble(&c.h, &w_of(&c, &c.h), &c.f, &c.cfg, 12).unwrap();
        assert_eq!(b.hs_norm_a, 0.0);
        assert_eq!(b.atilde.frobenius(), 0.0);
        assert_eq!(b.q.frobenius(), 0.0);
        let study = hs_tail_study(&b, &[4, 8, 12]).unwrap();
        assert!(study.rows.iter().all(|r| r.hs_norm_a == 0.0 && r.trace_q == 0.0));
    }

    #[test]
    fn linear_g_has_pure_d2_remainder() {
        let c = case(GFunction::Affine { a: 0.3, b: 0.9 }, StepScheme::Implicit);
        let w = w_of(&c, &c.h);
        let b = assemble(&c.h, &w, &c.f, &c.cfg, 9).unwrap();
        let basis = RealTrigBasis::new(16).unwrap().truncated(9).unwrap();
        let lin = Linearization::new(&w, &c.h, &c.cfg).unwrap();
        let vs: Vec<TimePath> = basis.iter().map(|e| lin.first_variation(e).unwrap()).collect();
        for i in 0..9 {
            for j in 0..9 {
                let d2 = c.f.d2(&w, &vs[i], &vs[j]).unwrap();
                assert!((b.q[(i, j)] - d2).abs() <= 1e-12 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn adjoint_assembly_matches_direct_marches() {
        for scheme in [StepScheme::Implicit, StepScheme::Explicit] {
            let c = case(GFunction::Sine { amplitude: 0.9 }, scheme);
            let w = w_of(&c, &c.h);
            let form = HessianForm::new(&c.h, &w, &c.f, &c.cfg).unwrap();
            let basis = RealTrigBasis::new(16).unwrap();
            let fields = basis.truncated(6).unwrap();
            let b = form.assemble_on(basis.functions()[..6].to_vec(), &fields).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let (a, at) = form.evaluate(&fields[i], &fields[j]).unwrap();
                    assert!((a - b.a[(i, j)]).abs() <= 1e-10 * (1.0 + a.abs()), "{scheme:?}");
                    assert!((at - b.atilde[(i, j)]).abs() <= 1e-10 * (1.0 + at.abs()));
                    // polarisation
                    let (a2, _) = form.evaluate(&fields[j], &fields[i]).unwrap();
                    assert!((a - a2).abs() <= 1e-10 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn diagonal_matches_second_difference_of_the_observable() {
        let c = case(GFunction::SinCubed { amplitude: 1.2 }, StepScheme::Implicit);
        let w = w_of(&c, &c.h);
        let m = 8;
        let b = assemble(&c.h, &w, &c.f, &c.cfg, m).unwrap();
        let fields = RealTrigBasis::new(16).unwrap().truncated(m).unwrap();
        let eps = 1e-2;
        for (i, e) in fields.iter().enumerate() {
            let val = |s: f64| {
                let mut hs = c.h.clone();
                hs.axpy(s, e).unwrap();
                c.f.eval(&w_of(&c, &hs)).unwrap()
            };
            let fd = (-val(2.0 * eps) + 16.0 * val(eps) - 30.0 * val(0.0) + 16.0 * val(-eps) - val(-2.0 * eps)) / (12.0 * eps * eps);
            let a = b.a[(i, i)];
            assert!((fd - a).abs() <= 1e-3 * a.abs(), "{i}: {fd} vs {a}");
        }
    }

    #[test]
    fn form_is_bilinear() {
        let c = case(GFunction::Sine { amplitude: 0.9 }, StepScheme::Implicit);
        let w = w_of(&c, &c.h);
        let form = HessianForm::new(&c.h, &w, &c.f, &c.cfg).unwrap();
        let k = TorusField::random_smooth(16, 5, 1.0, 1.0).unwrap();
        let l = TorusField::random_smooth(16, 6, 1.0, 1.0).unwrap();
        let (base, _) = form.evaluate(&k, &l).unwrap();
        for alpha in [-2.5, 0.3, 7.0] {
            let (scaled, _) = form.evaluate(&k.scaled(alpha), &l).unwrap();
            assert!((scaled - alpha * base).abs() <= 1e-9 * (1.0 + (alpha * base).abs()));
        }
    }

    #[test]
    fn degenerate_observable_gives_zero() {
        let mut c = case(GFunction::Sine { amplitude: 0.9 }, StepScheme::Implicit);
        c.f = Observable::new(ObservableKind::Endpoint, Profile::Constant { value: 2.0 }, c.f.weight().clone()).unwrap();
        let b = assemble(&c.h, &w_of(&c, &c.h), &c.f, &c.cfg, 6).unwrap();
        assert_eq!(b.hs_norm_a, 0.0);
    }

    #[test]
    fn truncation_and_serialisation() {
        let c = case(GFunction::SinCubed { amplitude: 1.2 }, StepScheme::Explicit);
        let b = assemble(&c.h, &w_of(&c, &c.h), &c.f, &c.cfg, 10).unwrap();
        let t = b.truncate(5).unwrap();
        assert_eq!(t.a, b.a.leading(5));
        assert!((t.trace_q - (0..5).map(|i| b.q[(i, i)]).sum::<f64>()).abs() == 0.0);
        assert!(matches!(b.truncate(11), Err(Error::BasisTooLarge { .. })));
        assert!(matches!(
            assemble(&c.h, &w_of(&c, &c.h), &c.f, &c.cfg, 10_000),
            Err(Error::BasisTooLarge { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "hess", &b, "cafe").unwrap();
        let (back, hash) = read_bundle(dir.path(), "hess").unwrap();
        assert_eq!(hash, "cafe");
        assert_eq!(back, b);
    }
}
