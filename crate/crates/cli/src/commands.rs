use std::path::{Path, PathBuf};

use gpam_core::carleman_fredholm::A0Report;
use gpam_core::gpam_solver::solve_gpam;
use gpam_core::hessian_assembly::{assemble, hs_tail_study, write_bundle, HessianBundle};
use gpam_core::laplace_lab::{validate_expansion, LaplaceLab, MCEstimate};
use gpam_core::noise_and_renorm::{renorm_constant, MollifierShape, MollifierSpec};
use gpam_core::phase_minimizer::{minimize, nondegeneracy_check, regularity_diagnostic, MinimizerResult, PhaseProblem, RegularityReport};
use gpam_core::torus_field::io::{field_to_bytes, write_path};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Minimize,
    Hessian,
    A0,
    LambdaStudy,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Minimize => "minimize",
            Command::Hessian => "hessian",
            Command::A0 => "a0",
            Command::LambdaStudy => "lambda-study",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub files: Vec<FileDigest>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    report: &'a T,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes artifacts into one directory and remembers their names.
struct Artifacts {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path, hash: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            files: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.record(name);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), CliError> {
        let doc = Stamped {
            config_hash: &self.hash,
            report,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut out = format!("# config_hash={}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let err = |e: csv::Error| CliError::Io(e.to_string());
            w.write_record(header).map_err(err)?;
            for r in rows {
                w.write_record(r).map_err(err)?;
            }
            w.flush()?;
        }
        self.bytes(name, &out)
    }

    fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    fn finish(self, command: Command) -> Result<RunManifest, CliError> {
        let files = self
            .files
            .iter()
            .map(|name| {
                let bytes = std::fs::read(self.dir.join(name))?;
                Ok(FileDigest {
                    name: name.clone(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = RunManifest {
            command: command.name().to_string(),
            config_hash: self.hash.clone(),
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(format!("{}.manifest.json", command.name()));
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// Run one subcommand, writing its artifacts and manifest into `out`.
pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let mut art = Artifacts::new(out, cfg.hash())?;
    match command {
        Command::Solve => cmd_solve(cfg, &mut art)?,
        Command::Minimize => {
            cmd_minimize(cfg, &mut art)?;
        }
        Command::Hessian => {
            let (problem, res) = converged_minimizer(cfg, &mut art)?;
            hessian_step(cfg, &problem, &res, &mut art)?;
        }
        Command::A0 => {
            a0_step(cfg, &mut art)?;
        }
        Command::LambdaStudy => cmd_lambda_study(cfg, &mut art)?,
        Command::Validate => cmd_validate(cfg, &mut art)?,
    }
    art.finish(command)
}

/// Run twice, the second time into a scratch directory, and require
/// identical artifacts.
pub fn run_verified(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    let first = run(command, cfg, out)?;
    let scratch = out.join(format!(".verify-{}", command.name()));
    let second = run(command, cfg, &scratch);
    let _ = std::fs::remove_dir_all(&scratch);
    let second = second?;
    if first != second {
        let differing: Vec<_> = first
            .files
            .iter()
            .zip(&second.files)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.name.clone())
            .collect();
        return Err(CliError::Verify(format!("rerun differs in {differing:?}")));
    }
    Ok(first)
}

#[derive(Serialize)]
struct SolveSummary {
    grid_size: usize,
    steps: usize,
    sup_l2: f64,
    final_mean: f64,
}

fn cmd_solve(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let n = cfg.grid.size;
    let solver = cfg.solver();
    let zeta = cfg.solve.zeta.build(n)?;
    let u0 = cfg.u0.build(n)?;
    let path = solve_gpam(&zeta, &u0, &solver)?;
    let manifest = write_path(&art.dir, "solution", &path, &art.hash)?;
    art.record(&manifest.data_file);
    art.record("solution.json");
    let summary = SolveSummary {
        grid_size: n,
        steps: cfg.grid.steps,
        sup_l2: path.sup_l2(),
        final_mean: path.last().coeff((0, 0)).re,
    };
    art.json("solve_summary.json", &summary)
}

#[derive(Serialize)]
struct FieldRef {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct MinimizeReport<'a> {
    #[serde(flatten)]
    result: &'a MinimizerResult,
    h_star: FieldRef,
    h_star_l2: f64,
    regularity: Option<RegularityReport>,
}

fn cmd_minimize(cfg: &RunConfig, art: &mut Artifacts) -> Result<(PhaseProblem, MinimizerResult), CliError> {
    let problem = cfg.problem()?;
    let res = minimize(&problem, &cfg.minimizer)?;
    let h = res.h_star();
    let bytes = field_to_bytes(h);
    art.bytes("h_star.tf2d", &bytes)?;
    let report = MinimizeReport {
        result: &res,
        h_star: FieldRef {
            file: "h_star.tf2d".into(),
            sha256: sha256_hex(&bytes),
        },
        h_star_l2: h.l2_norm(),
        regularity: regularity_diagnostic(h, cfg.grid.kappa).ok(),
    };
    art.json("minimizer.json", &report)?;
    Ok((problem, res))
}

fn converged_minimizer(cfg: &RunConfig, art: &mut Artifacts) -> Result<(PhaseProblem, MinimizerResult), CliError> {
    let (problem, res) = cmd_minimize(cfg, art)?;
    Ok((problem, res.ensure_converged()?))
}

fn hessian_step(cfg: &RunConfig, problem: &PhaseProblem, res: &MinimizerResult, art: &mut Artifacts) -> Result<HessianBundle, CliError> {
    let m = cfg.hessian.tail_sizes.iter().copied().fold(cfg.hessian.basis_size, usize::max);
    let h = res.h_star();
    let w = problem.solve(h)?;
    let full = assemble(h, &w, &problem.observable, &problem.cfg, m)?;
    let bundle = full.truncate(cfg.hessian.basis_size)?;
    write_bundle(&art.dir, "hessian", &bundle, &art.hash)?;
    for f in ["hessian.A.f64", "hessian.Atilde.f64", "hessian.q.f64", "hessian.json"] {
        art.record(f);
    }
    if !cfg.hessian.tail_sizes.is_empty() {
        let study = hs_tail_study(&full, &cfg.hessian.tail_sizes)?;
        art.json("tail_study.json", &study)?;
    }
    Ok(bundle)
}

fn mollifier(cfg: &RunConfig) -> Result<MollifierSpec, CliError> {
    let m = MollifierSpec::new(cfg.mollifier.shape, cfg.mollifier.delta)?;
    m.check_resolved(cfg.grid.size)?;
    Ok(m)
}

fn a0_step(cfg: &RunConfig, art: &mut Artifacts) -> Result<(PhaseProblem, MinimizerResult, A0Report), CliError> {
    let moll = mollifier(cfg)?;
    let (problem, res) = converged_minimizer(cfg, art)?;
    let bundle = hessian_step(cfg, &problem, &res, art)?;
    let margin = nondegeneracy_check(&bundle.a)?;
    if margin <= 0.0 {
        return Err(gpam_core::Error::NonDegeneracyViolation { eigenvalue: margin - 1.0 }.into());
    }
    let c_delta = renorm_constant(&moll, cfg.grid.size)?;
    let lab = LaplaceLab::new(&problem, res.h_star())?;
    let lambda = lab.estimate_lambda(&moll, cfg.monte_carlo.lambda_samples, cfg.monte_carlo.seed)?;
    let report = A0Report::build(
        bundle.trace_q,
        lambda.mean,
        lambda.stderr,
        lambda.n_samples,
        bundle.eig_a.clone(),
        moll.delta,
        moll.shape.name().to_string(),
        c_delta,
        art.hash.clone(),
    )?;
    art.json("a0.json", &report)?;
    let table = report.table();
    art.bytes("a0.txt", table.as_bytes())?;
    Ok((problem, res, report))
}

#[derive(Serialize)]
struct ShapeComparison {
    shape: MollifierShape,
    delta: f64,
    estimate: MCEstimate,
    reference: MCEstimate,
    difference: f64,
    joint_stderr: f64,
    z: f64,
}

#[derive(Serialize)]
struct LambdaStudyReport {
    study: gpam_core::laplace_lab::LambdaStudy,
    comparison: Option<ShapeComparison>,
}

fn cmd_lambda_study(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    if cfg.study.deltas.is_empty() {
        return Err(CliError::Config("study.deltas is empty".into()));
    }
    let (problem, res) = converged_minimizer(cfg, art)?;
    let lab = LaplaceLab::new(&problem, res.h_star())?;
    let n = cfg.monte_carlo.lambda_samples;
    let seed = cfg.monte_carlo.seed;
    let shape = cfg.mollifier.shape;
    let study = lab.lambda_delta_study(shape, &cfg.study.deltas, n, seed)?;
    let comparison = match cfg.study.compare_shape {
        Some(other) => {
            let last = study.rows.last().expect("nonempty study");
            let spec = MollifierSpec::new(other, last.delta)?;
            spec.check_resolved(cfg.grid.size)?;
            let est = lab.estimate_lambda(&spec, n, seed.wrapping_add(1))?.with_hash(&art.hash);
            let joint = est.stderr.hypot(last.estimate.stderr);
            let difference = est.mean - last.estimate.mean;
            Some(ShapeComparison {
                shape: other,
                delta: last.delta,
                reference: last.estimate.clone(),
                z: if joint > 0.0 { difference / joint } else if difference == 0.0 { 0.0 } else { f64::INFINITY },
                estimate: est,
                difference,
                joint_stderr: joint,
            })
        }
        None => None,
    };
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| vec![fmt(r.delta), fmt(r.c_delta), fmt(r.estimate.mean), fmt(r.estimate.stderr), r.estimate.n_samples.to_string()])
        .collect();
    art.csv("lambda_study.csv", &["delta", "c_delta", "lambda", "stderr", "n_samples"], &rows)?;
    art.json("lambda_study.json", &LambdaStudyReport { study, comparison })
}

fn cmd_validate(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    if cfg.monte_carlo.epsilons.is_empty() {
        return Err(CliError::Config("monte_carlo.epsilons is empty".into()));
    }
    let (problem, res, a0) = a0_step(cfg, art)?;
    let moll = mollifier(cfg)?;
    let table = validate_expansion(
        &cfg.monte_carlo.epsilons,
        &moll,
        &problem,
        res.value,
        a0.a0,
        cfg.monte_carlo.j_samples,
        cfg.monte_carlo.seed.wrapping_add(1),
    )?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt(r.epsilon),
                fmt(r.j),
                fmt(r.j_stderr),
                fmt(r.r),
                fmt(r.r_stderr),
                fmt(r.a0),
                fmt(r.abs_error),
                r.n_samples.to_string(),
                r.amplification_warning.to_string(),
            ]
        })
        .collect();
    art.csv(
        "expansion.csv",
        &["epsilon", "j", "j_stderr", "r", "r_stderr", "a0", "abs_error", "n_samples", "amplification_warning"],
        &rows,
    )?;
    art.json("expansion.json", &table)
}

/// Check every manifest in `dir`: file digests must match and, when a
/// config is given, so must its hash.
pub fn verify_dir(cfg: Option<&RunConfig>, dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".manifest.json"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Verify(format!("no manifests in {}", dir.display())));
    }
    let expected = cfg.map(RunConfig::hash);
    let mut lines = Vec::new();
    for path in names {
        let text = std::fs::read_to_string(&path)?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Verify(format!("{}: {e}", path.display())))?;
        if let Some(h) = &expected {
            if *h != m.config_hash {
                return Err(CliError::Verify(format!("{}: config hash {} != {}", m.command, m.config_hash, h)));
            }
        }
        for f in &m.files {
            let bytes = std::fs::read(dir.join(&f.name))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(CliError::Verify(format!("{}: digest mismatch", f.name)));
            }
            let textual = f.name.ends_with(".json") || f.name.ends_with(".csv") || f.name.ends_with(".txt");
            if textual && !String::from_utf8_lossy(&bytes).contains(&m.config_hash) {
                return Err(CliError::Verify(format!("{}: config hash not embedded", f.name)));
            }
        }
        lines.push(format!("{}: {} files ok ({})", m.command, m.files.len(), m.config_hash));
    }
    Ok(lines)
}
