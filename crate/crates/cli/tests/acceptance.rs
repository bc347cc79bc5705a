//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. An optional argument filters criteria by number
//! or name substring, comma-separated.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use gpam_core::carleman_fredholm::{a0_assemble, det2, log_det2};
use gpam_core::gpam_solver::{solve_first_variation, solve_gpam, GFunction, Linearization, SolverConfig, StepScheme};
use gpam_core::hessian_assembly::{assemble, hs_tail_study, HessianBundle};
use gpam_core::laplace_lab::{estimate_j, mean_stderr, validate_expansion, LaplaceLab};
use gpam_core::linalg::Matrix;
use gpam_core::noise_and_renorm::{renorm_constant, sample_noise_indexed, MollifierShape, MollifierSpec};
use gpam_core::phase_minimizer::{minimize, nondegeneracy_check, MinimizerResult, PhaseProblem};
use gpam_core::torus_field::RealTrigBasis;
use gpam_core::{Error, TimePath, TorusField};
use gpam_lab::RunConfig;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(name: &str) -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).expect("config loads")
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn unit(f: TorusField) -> TorusField {
    let s = 1.0 / f.l2_norm();
    f.scaled(s)
}

fn scale_path(p: &TimePath, a: f64) -> TimePath {
    TimePath::new(p.steps().iter().map(|f| f.scaled(a)).collect(), p.dt()).unwrap()
}

/// Nonlinear oracle: g = 2 sin³ with a cosine observable, minimised once.
struct Oracle {
    cfg: RunConfig,
    problem: PhaseProblem,
    result: MinimizerResult,
    bundle64: HessianBundle,
    lambda: (f64, f64),
}

fn oracle() -> &'static Oracle {
    static ORACLE: OnceLock<Oracle> = OnceLock::new();
    ORACLE.get_or_init(|| {
        let cfg = config("nonlinear.toml");
        let problem = cfg.problem().unwrap();
        let result = minimize(&problem, &cfg.minimizer).unwrap();
        let h = result.h_star();
        let w = problem.solve(h).unwrap();
        let bundle64 = assemble(h, &w, &problem.observable, &problem.cfg, 64).unwrap();
        let lab = LaplaceLab::new(&problem, h).unwrap();
        let moll = cfg.mollifier;
        let est = lab.estimate_lambda(&moll, cfg.monte_carlo.lambda_samples, cfg.monte_carlo.seed).unwrap();
        Oracle {
            cfg,
            problem,
            result,
            bundle64,
            lambda: (est.mean, est.stderr),
        }
    })
}

fn c1_heat_flow() -> Outcome {
    let t = Instant::now();
    let cfg = SolverConfig::new(32, 0.25, 64, GFunction::Zero);
    let u0 = TorusField::random_smooth(32, 1, 1.5, 2.0).unwrap();
    let zeta = TorusField::random_smooth(32, 2, 0.5, 5.0).unwrap();
    let path = solve_gpam(&zeta, &u0, &cfg).unwrap();
    let err = path
        .times()
        .iter()
        .zip(path.steps())
        .map(|(&s, f)| f.sub(&u0.heat_propagate(s).unwrap()).unwrap().l2_norm())
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(err <= 1e-12 && secs < 1.0, format!("sup L2 error {err:.2e}, {secs:.2}s"))
}

fn c2_first_variation() -> Outcome {
    let eps = [1e-2, 1e-3, 1e-4];
    let mut slopes = Vec::new();
    for trial in 0..10u64 {
        let cfg = SolverConfig::new(16, 0.25, 32, GFunction::Sine { amplitude: 2.0 }).with_scheme(StepScheme::Explicit);
        let u0 = TorusField::random_smooth(16, 100 + trial, 2.0, 1.0).unwrap();
        let h = TorusField::random_smooth(16, 200 + trial, 1.5, 5.0).unwrap();
        let k = unit(TorusField::random_smooth(16, 300 + trial, 1.5, 1.0).unwrap()).scaled(4.0);
        let w = solve_gpam(&h, &u0, &cfg).unwrap();
        let v = solve_first_variation(&w, &h, &k, &cfg).unwrap();
        let errs: Vec<f64> = eps
            .iter()
            .map(|&e| {
                let mut hp = h.clone();
                hp.axpy(e, &k).unwrap();
                let mut hm = h.clone();
                hm.axpy(-e, &k).unwrap();
                let d = solve_gpam(&hp, &u0, &cfg).unwrap().axpy(-1.0, &solve_gpam(&hm, &u0, &cfg).unwrap()).unwrap();
                scale_path(&d, 0.5 / e).sup_l2_distance(&v).unwrap()
            })
            .collect();
        let xs: Vec<f64> = eps.iter().map(|e| e.log10()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.log10()).collect();
        slopes.push(lsq_slope(&xs, &ys));
    }
    let pass = slopes.iter().all(|s| (s - 2.0).abs() <= 0.3);
    let (lo, hi) = slopes.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
    outcome(pass, format!("slopes in [{lo:.3}, {hi:.3}] over 10 pairs"))
}

fn c3_second_variation() -> Outcome {
    let cfg = SolverConfig::new(16, 0.1, 16, GFunction::Sine { amplitude: 0.8 });
    let u0 = TorusField::random_smooth(16, 1, 2.0, 1.0).unwrap().add(&TorusField::constant(16, 0.5).unwrap()).unwrap();
    let h = TorusField::random_smooth(16, 2, 2.0, 3.0).unwrap();
    let k = unit(TorusField::random_smooth(16, 3, 2.0, 1.0).unwrap());
    let l = unit(TorusField::random_smooth(16, 4, 2.0, 1.0).unwrap());
    let w = solve_gpam(&h, &u0, &cfg).unwrap();
    let lin = Linearization::new(&w, &h, &cfg).unwrap();
    let vk = lin.pad_path(&lin.first_variation(&k).unwrap()).unwrap();
    let vl = lin.pad_path(&lin.first_variation(&l).unwrap()).unwrap();
    let split = lin.second_variation_cm(&vk, &vl).unwrap().axpy(1.0, &lin.second_variation_wn(&vk, &vl, &k, &l).unwrap()).unwrap();
    let combined = lin.second_variation_combined(&vk, &vl, &k, &l).unwrap();
    let split_err = split.sup_l2_distance(&combined).unwrap();

    let target = lin.second_variation_combined(&vk, &vk, &k, &k).unwrap();
    let eps = [0.1, 0.05, 0.025];
    let errs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let shifted = |s: f64| {
                let mut hs = h.clone();
                hs.axpy(s, &k).unwrap();
                solve_gpam(&hs, &u0, &cfg).unwrap()
            };
            let d2 = shifted(e).axpy(-2.0, &w).unwrap().axpy(1.0, &shifted(-e)).unwrap();
            scale_path(&d2, 1.0 / (e * e)).sup_l2_distance(&target).unwrap()
        })
        .collect();
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let order = lsq_slope(&xs, &ys);
    outcome(
        split_err <= 1e-11 && (order - 2.0).abs() <= 0.3,
        format!("split error {split_err:.2e}, second-difference order {order:.3}"),
    )
}

fn c4_optimality() -> Outcome {
    let o = oracle();
    let grad = o.result.grad_norm;

    // adjoint gradient against central differences, away from the minimiser
    let p = &o.problem;
    let h = TorusField::random_smooth(32, 41, 2.0, 0.5).unwrap();
    let g = p.gradient(&h).unwrap();
    let mut worst: f64 = 0.0;
    for d in 0..20u64 {
        let k = unit(TorusField::random_smooth(32, 500 + d, 1.5, 1.0).unwrap());
        let e = 1e-5;
        let mut hp = h.clone();
        hp.axpy(e, &k).unwrap();
        let mut hm = h.clone();
        hm.axpy(-e, &k).unwrap();
        let fd = (p.value(&hp).unwrap() - p.value(&hm).unwrap()) / (2.0 * e);
        let ad = g.inner_l2(&k).unwrap();
        worst = worst.max((fd - ad).abs() / ad.abs());
    }

    // additive noise, quadratic profile: h = −(b + c y) r in closed form
    let lq = config("gaussian.toml");
    let lp = lq.problem().unwrap();
    let res = minimize(&lp, &lq.minimizer).unwrap();
    let (t, c, b, y0) = (0.25, 16.0, 1.0, 0.2);
    let lam = 4.0 * PI * PI;
    let s = -(-lam * t).exp_m1() / lam;
    let mut r = TorusField::constant(16, t).unwrap();
    r.axpy(1.0, &TorusField::cosine_mode(16, (1, 0), 0.5 * s).unwrap()).unwrap();
    let r2 = r.l2_norm().powi(2);
    let y = (y0 - b * r2) / (1.0 + c * r2);
    let exact = r.scaled(-(b + c * y));
    let dist = res.h_star().sub(&exact).unwrap().l2_norm();

    outcome(
        grad <= 1e-8 && worst <= 1e-3 && dist <= 1e-6,
        format!("gradient residual {grad:.2e}, worst adjoint/FD rel error {worst:.2e}, LQ minimiser distance {dist:.2e}"),
    )
}

fn c5_hessian_identity() -> Outcome {
    let o = oracle();
    let p = &o.problem;
    let h = o.result.h_star();
    let m = 16;
    let fields = RealTrigBasis::new(32).unwrap().truncated(m).unwrap();
    let eps = 1e-2;
    let mut worst: f64 = 0.0;
    for (i, e) in fields.iter().enumerate() {
        let val = |s: f64| {
            let mut hs = h.clone();
            hs.axpy(s, e).unwrap();
            p.observable.eval(&p.solve(&hs).unwrap()).unwrap()
        };
        let fd = (-val(2.0 * eps) + 16.0 * val(eps) - 30.0 * val(0.0) + 16.0 * val(-eps) - val(-2.0 * eps)) / (12.0 * eps * eps);
        let a = o.bundle64.a[(i, i)];
        worst = worst.max((fd - a).abs() / a.abs());
    }
    outcome(worst <= 1e-3, format!("worst diagonal rel error {worst:.2e} over M_op = {m}"))
}

fn c6_chaos_covariance() -> Outcome {
    let o = oracle();
    let b = o.bundle64.truncate(32).unwrap();
    let lab = LaplaceLab::new(&o.problem, o.result.h_star()).unwrap();
    let moll = MollifierSpec::new(MollifierShape::SharpCutoff, 1.0 / 16.0).unwrap();
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    let entries = lab.covariance_check(&b.a, &b.basis, &pairs, &moll, 20_000, 6).unwrap();
    let worst = entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
    let desc: Vec<String> = entries.iter().map(|e| format!("({},{}) z={:+.2}", e.i, e.j, e.z)).collect();
    outcome(worst <= 3.0, desc.join(", "))
}

fn c7_trace_identity() -> Outcome {
    let o = oracle();
    let lab = LaplaceLab::new(&o.problem, o.result.h_star()).unwrap();
    let q = lab.estimate_hessian_mean(&o.cfg.mollifier, 10_000, 7).unwrap();
    let trq = o.bundle64.truncate(32).unwrap().trace_q;
    let (lam, lam_se) = o.lambda;
    let target = trq + lam;
    let z = (q.mean - target) / q.stderr.hypot(lam_se);
    outcome(
        z.abs() <= 3.0,
        format!("E Q = {:.5} ± {:.5}, tr q + lambda = {target:.5} ± {lam_se:.5}, z = {z:+.2}", q.mean, q.stderr),
    )
}

fn c8_renorm_constant() -> Outcome {
    // Monte-Carlo oracle: spatial mean of (K * ξ_δ) ξ_δ with K the Green's function of −Δ
    let n = 64;
    let moll = MollifierSpec::new(MollifierShape::SharpCutoff, 1.0 / 16.0).unwrap();
    let vals: Vec<f64> = (0..4000u64)
        .map(|s| {
            let xi = sample_noise_indexed(81, s, &moll, n).unwrap().field;
            let mut acc = 0.0;
            for kx in -(n as i64) / 2 + 1..(n as i64) / 2 {
                for ky in -(n as i64) / 2 + 1..(n as i64) / 2 {
                    if (kx, ky) != (0, 0) {
                        acc += xi.coeff((kx, ky)).norm_sqr() / (4.0 * PI * PI * (kx * kx + ky * ky) as f64);
                    }
                }
            }
            acc
        })
        .collect();
    let (mc, se) = mean_stderr(&vals);
    let exact = renorm_constant(&moll, n).unwrap();
    let z = (mc - exact) / se;

    let deltas = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let cs: Vec<f64> = deltas
        .iter()
        .map(|&d| renorm_constant(&MollifierSpec::new(MollifierShape::SharpCutoff, d).unwrap(), 128).unwrap())
        .collect();
    let xs: Vec<f64> = deltas.iter().map(|d| (1.0 / d).ln()).collect();
    let slope = lsq_slope(&xs, &cs);
    let target = 1.0 / (2.0 * PI);
    outcome(
        z.abs() <= 3.0 && (slope - target).abs() <= 0.1 * target,
        format!("c_delta {exact:.5} vs MC {mc:.5} ± {se:.5} (z = {z:+.2}), slope {slope:.5} vs {target:.5}"),
    )
}

fn c9_det2() -> Outcome {
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let raw: Vec<f64> = (0..100).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let sym = nalgebra::DMatrix::from_fn(10, 10, |i, j| 0.5 * (raw[10 * i + j] + raw[10 * j + i]));
        let m = Matrix::from_vec(10, sym.iter().copied().collect()).unwrap();
        let eigs = gpam_core::linalg::eigen_sym(&m).unwrap().values;
        let dense = (nalgebra::DMatrix::identity(10, 10) + &sym).determinant() * (-sym.trace()).exp();
        worst = worst.max((det2(&eigs).unwrap() - dense).abs() / dense.abs());
    }
    let violation = matches!(log_det2(&[0.2, -1.0]), Err(Error::NonDegeneracyViolation { eigenvalue }) if eigenvalue == -1.0)
        && matches!(det2(&[0.5, -1.0, 0.1]), Err(Error::NonDegeneracyViolation { .. }))
        && nondegeneracy_check(&Matrix::from_diagonal(&[0.5, -1.0, 0.1])).unwrap() <= 0.0;
    outcome(worst <= 1e-10 && violation, format!("worst rel error {worst:.2e}, eigenvalue -1 rejected: {violation}"))
}

fn c10_truncation() -> Outcome {
    let study = hs_tail_study(&oracle().bundle64, &[8, 16, 32, 64]).unwrap();
    let traces: Vec<String> = study.rows.iter().map(|r| format!("{:.4}", r.trace_atilde)).collect();
    outcome(
        study.hs_rel_change <= 0.02 && study.trace_q_rel_change <= 0.02 && study.atilde_trace_monotone,
        format!(
            "32->64: hs change {:.2e}, trace q change {:.2e}; trace Atilde over M = 8..64: [{}]",
            study.hs_rel_change,
            study.trace_q_rel_change,
            traces.join(", ")
        ),
    )
}

fn c11_lambda_trend() -> Outcome {
    let cfg = config("lambda_study.toml");
    let problem = cfg.problem().unwrap();
    let res = minimize(&problem, &cfg.minimizer).unwrap();
    let lab = LaplaceLab::new(&problem, res.h_star()).unwrap();
    let n = cfg.monte_carlo.lambda_samples;
    let seed = cfg.monte_carlo.seed;
    let study = lab.lambda_delta_study(MollifierShape::SharpCutoff, &[0.125, 0.0625, 0.03125], n, seed).unwrap();
    let sharp = &study.rows[2].estimate;
    let gauss = lab
        .estimate_lambda(&MollifierSpec::new(MollifierShape::GaussianBump, 0.03125).unwrap(), n, seed + 1)
        .unwrap();
    let z = (gauss.mean - sharp.mean) / gauss.stderr.hypot(sharp.stderr);
    let diffs: Vec<String> = study.diffs.iter().map(|d| format!("{:.2e}", d.difference.abs())).collect();
    outcome(
        study.decreasing && z.abs() <= 3.0,
        format!("|successive differences| [{}], sharp {:.5} vs Gaussian {:.5} (z = {z:+.2})", diffs.join(", "), sharp.mean, gauss.mean),
    )
}

fn c12_expansion() -> Outcome {
    // g ≡ 0: R = a₀ = 1
    let heat = config("heat.toml");
    let hp = heat.problem().unwrap();
    let hres = minimize(&hp, &heat.minimizer).unwrap();
    let trivial = validate_expansion(&[0.5], &heat.mollifier, &hp, hres.value, 1.0, 1000, 12).unwrap();
    let r_trivial = trivial.rows[0].r;

    // additive noise, quadratic profile: a₀ = (1 + c‖r‖²)^{-1/2}
    let lq = config("gaussian.toml");
    let lp = lq.problem().unwrap();
    let lres = minimize(&lp, &lq.minimizer).unwrap();
    let (t, c) = (0.25_f64, 16.0);
    let lam = 4.0 * PI * PI;
    let s = -(-lam * t).exp_m1() / lam;
    let a0_lq = (1.0 + c * (t * t + 0.125 * s * s)).powf(-0.5);
    let j = estimate_j(0.5, &lq.mollifier, &lp.observable, &lp.u0, &lp.cfg, 20_000, 13).unwrap();
    let r_lq = (lres.value / 0.25).exp() * j.mean;

    // nonlinear oracle
    let o = oracle();
    let b = o.bundle64.truncate(o.cfg.hessian.basis_size).unwrap();
    let a0 = a0_assemble(b.trace_q, o.lambda.0, &b.eig_a).unwrap();
    let table = validate_expansion(
        &o.cfg.monte_carlo.epsilons,
        &o.cfg.mollifier,
        &o.problem,
        o.result.value,
        a0,
        o.cfg.monte_carlo.j_samples,
        o.cfg.monte_carlo.seed + 1,
    )
    .unwrap();
    let last = table.rows.last().unwrap();
    let rel_last = last.abs_error / a0;
    let errs: Vec<String> = table.rows.iter().map(|r| format!("eps {}: R {:.4} ± {:.4}", r.epsilon, r.r, r.r_stderr)).collect();

    let trivial_ok = (r_trivial - 1.0).abs() <= 0.02;
    let lq_ok = (r_lq - a0_lq).abs() <= 0.02 * a0_lq;
    outcome(
        trivial_ok && lq_ok && table.decreasing && rel_last <= 0.15,
        format!(
            "g=0 R {r_trivial:.4}; additive R {r_lq:.4} vs a0 {a0_lq:.4}; nonlinear a0 {a0:.4}, {}; decreasing {}, last rel error {rel_last:.2e}",
            errs.join("; "),
            table.decreasing
        ),
    )
}

const SMALL: &str = r#"
[grid]
size = 16
horizon = 0.1
steps = 8
scheme = "explicit"

[g]
name = "sin_cubed"
amplitude = 1.5

[u0]
constant = 1.0
terms = [{ k = [0, 1], kind = "cos", amplitude = 0.3 }]

[observable]
kind = "endpoint"
profile = { name = "cosine", amplitude = -0.3, frequency = 3.0 }
weight = { constant = 1.0, terms = [{ k = [1, 0], kind = "cos", amplitude = 0.5 }] }

[mollifier]
shape = "sharp_cutoff"
delta = 0.125

[solve.zeta]
random = { seed = 4, decay = 2.0, amplitude = 2.0 }

[hessian]
basis_size = 12
tail_sizes = [4, 8, 12]

[minimizer]
starts = 3

[study]
deltas = [0.25, 0.125]

[monte_carlo]
seed = 2
lambda_samples = 300
j_samples = 300
epsilons = [0.5, 0.35]
"#;

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn c13_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path: PathBuf = dir.path().join("run.toml");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let mut failures = Vec::new();
    let mut compared = 0;
    for cmd in ["solve", "minimize", "hessian", "a0", "lambda-study", "validate"] {
        let mut runs = Vec::new();
        for (tag, workers) in [("a", "1"), ("b", "3"), ("c", "3")] {
            let out = dir.path().join(format!("{cmd}-{tag}"));
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_gpam-lab"))
                .args([cmd, "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers])
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("{cmd} exited {:?}", status.status.code()));
            }
            runs.push(files_in(&out));
        }
        compared += runs[0].len();
        if runs[0].is_empty() || runs.iter().any(|r| *r != runs[0]) {
            failures.push(format!("{cmd} differs"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("6 commands x 3 runs (workers 1, 3, 3), {compared} files identical")
        } else {
            failures.join("; ")
        },
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        (1, "solver ground truth", c1_heat_flow),
        (2, "first-variation consistency", c2_first_variation),
        (3, "second-variation split", c3_second_variation),
        (4, "optimality", c4_optimality),
        (5, "hessian identity", c5_hessian_identity),
        (6, "chaos covariance", c6_chaos_covariance),
        (7, "trace identity", c7_trace_identity),
        (8, "renormalisation constant", c8_renorm_constant),
        (9, "det2 correctness", c9_det2),
        (10, "truncation stability", c10_truncation),
        (11, "lambda_delta trend", c11_lambda_trend),
        (12, "end-to-end expansion", c12_expansion),
        (13, "determinism", c13_determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let selected: Vec<&Criterion> = criteria
        .iter()
        .filter(|(n, name, _)| {
            filter
                .as_deref()
                .map_or(true, |f| f.split(',').any(|f| n.to_string() == f || name.contains(f)))
        })
        .collect();
    let mut failed = 0;
    for (n, name, run) in &selected {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n:>2} [{name}]: {verdict} ({}) [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
