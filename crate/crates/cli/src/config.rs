//! Run configuration: one TOML document per run.

use std::path::Path;

use gpam_core::gpam_solver::{GFunction, SolverConfig, StepScheme};
use gpam_core::noise_and_renorm::{MollifierShape, MollifierSpec};
use gpam_core::observables::{Observable, ObservableKind, Profile};
use gpam_core::phase_minimizer::{MinimizeOptions, PhaseProblem};
use gpam_core::TorusField;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub g: GFunction,
    pub u0: FieldSpec,
    pub observable: ObservableSection,
    pub mollifier: MollifierSpec,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub hessian: HessianSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub minimizer: MinimizeOptions,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub size: usize,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default)]
    pub scheme: StepScheme,
    /// Regularity-loss parameter of the Sobolev diagnostic.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub k: [i64; 2],
    pub kind: TermKind,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPart {
    pub seed: u64,
    pub decay: f64,
    pub amplitude: f64,
}

/// `constant + Σ amplitude·cos/sin(2πk·x) + random part`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
    #[serde(default)]
    pub random: Option<RandomPart>,
}

impl FieldSpec {
    pub fn build(&self, n: usize) -> Result<TorusField, CliError> {
        let mut f = TorusField::constant(n, self.constant)?;
        for t in &self.terms {
            let k = (t.k[0], t.k[1]);
            let m = match t.kind {
                TermKind::Cos => TorusField::cosine_mode(n, k, t.amplitude)?,
                TermKind::Sin => TorusField::sine_mode(n, k, t.amplitude)?,
            };
            f.axpy(1.0, &m)?;
        }
        if let Some(r) = &self.random {
            f.axpy(1.0, &TorusField::random_smooth(n, r.seed, r.decay, r.amplitude)?)?;
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSection {
    pub kind: ObservableKind,
    pub profile: Profile,
    pub weight: FieldSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    /// Driving field of `solve`; zero when absent.
    #[serde(default)]
    pub zeta: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianSection {
    pub basis_size: usize,
    #[serde(default)]
    pub tail_sizes: Vec<usize>,
}

impl Default for HessianSection {
    fn default() -> Self {
        Self {
            basis_size: 32,
            tail_sizes: vec![8, 16, 32],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// Decreasing mollifier scales for `lambda-study`.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Second mollifier shape compared at the smallest scale.
    #[serde(default)]
    pub compare_shape: Option<MollifierShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub seed: u64,
    pub lambda_samples: usize,
    pub j_samples: usize,
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            seed: 1,
            lambda_samples: 1000,
            j_samples: 1000,
            epsilons: vec![0.5, 0.35, 0.25],
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.observable.profile_checked()?;
        MollifierSpec::new(self.mollifier.shape, self.mollifier.delta).map_err(|e| CliError::Config(e.to_string()))?;
        if self.hessian.basis_size == 0 {
            return Err(CliError::Config("hessian.basis_size must be positive".into()));
        }
        if self.study.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CliError::Config("study.deltas must be decreasing".into()));
        }
        if self.monte_carlo.lambda_samples < 2 || self.monte_carlo.j_samples < 2 {
            return Err(CliError::Config("Monte-Carlo sample counts must be at least 2".into()));
        }
        if self.monte_carlo.epsilons.iter().any(|&e| !(e > 0.0)) {
            return Err(CliError::Config("epsilons must be positive".into()));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig::new(self.grid.size, self.grid.horizon, self.grid.steps, self.g.clone()).with_scheme(self.grid.scheme)
    }

    pub fn problem(&self) -> Result<PhaseProblem, CliError> {
        let n = self.grid.size;
        let f = Observable::new(self.observable.kind, self.observable.profile.clone(), self.observable.weight.build(n)?)?;
        Ok(PhaseProblem::new(self.solver(), self.u0.build(n)?, f)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

impl ObservableSection {
    fn profile_checked(&self) -> Result<(), CliError> {
        self.profile.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
