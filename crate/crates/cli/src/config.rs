//! Scenario files.
//!
//! ```toml
//! [hawkes]
//! lambda0 = 1.2
//! lambda_bar = 1.0
//! beta = 2.0
//! impact = "linear"        # or "constant"
//! impact_scale = 0.5
//!
//! [marks]
//! family = "exponential"   # exponential | lognormal | discrete
//! total_mass = 1.0
//! mean = 1.0               # lognormal: mu, sigma; discrete: atoms = [[z, w], ...]
//!
//! [economic]
//! r0 = 10.0
//! rho = 1.5
//! cost = 2.5
//! gamma = 0.25
//! horizon = 2.0
//!
//! [run]
//! output_dir = "out"
//! seed = 7
//! n_paths = 100000
//! ```
//!
//! Model parameters have no defaults. Run options that a subcommand needs
//! are checked when that subcommand runs.

use std::fmt;
use std::path::{Path, PathBuf};

use clusterre::optimizer::{CoverInvariance, SweepStart};
use clusterre::{EconomicParams, HawkesParams, ImpactSpec, MarkLaw};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub location: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    hawkes: Spanned<RawHawkes>,
    marks: Spanned<RawMarks>,
    economic: Spanned<RawEconomic>,
    run: Spanned<RawRun>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHawkes {
    lambda0: Spanned<f64>,
    lambda_bar: Spanned<f64>,
    beta: Spanned<f64>,
    impact: Spanned<String>,
    impact_scale: Spanned<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarks {
    family: Spanned<String>,
    total_mass: Option<Spanned<f64>>,
    mean: Option<Spanned<f64>>,
    mu: Option<Spanned<f64>>,
    sigma: Option<Spanned<f64>>,
    atoms: Option<Spanned<Vec<[f64; 2]>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEconomic {
    r0: Spanned<f64>,
    rho: Spanned<f64>,
    cost: Spanned<f64>,
    gamma: Spanned<f64>,
    horizon: Spanned<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    output_dir: Spanned<String>,
    seed: Option<Spanned<u64>>,
    n_paths: Option<Spanned<usize>>,
    moment_grid: Option<Spanned<usize>>,
    contract: Option<Spanned<String>>,
    lambda_grid: Option<Spanned<Vec<f64>>>,
    sweep_start: Option<Spanned<String>>,
    sweep_cover: Option<Spanned<String>>,
    oracle_atoms: Option<Spanned<usize>>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub source: PathBuf,
    pub hash: String,
    pub params: HawkesParams,
    pub econ: EconomicParams,
    pub run: RunOptions,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub moment_grid: Option<usize>,
    pub contract: Option<String>,
    pub lambda_grid: Option<Vec<f64>>,
    pub sweep_start: SweepStart,
    pub sweep_cover: CoverInvariance,
    pub oracle_atoms: usize,
}

/// Resolves byte offsets into `path:line:column`.
struct Locator<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Locator<'_> {
    fn at(&self, offset: usize) -> String {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        format!("{}:{line}:{column}", self.path.display())
    }

    fn error<T>(&self, spanned: &Spanned<T>, key: &str, message: impl fmt::Display) -> ConfigError {
        ConfigError {
            location: self.at(spanned.span().start),
            message: format!("{key}: {message}"),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|e| ConfigError {
            location: path.display().to_string(),
            message: format!("cannot read config: {e}"),
        })?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError {
            location: path.display().to_string(),
            message: format!("config is not valid UTF-8: {e}"),
        })?;
        let mut config = Self::parse(path, &text)?;
        config.hash = sha256_hex(&bytes);
        Ok(config)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let loc = Locator { path, text };
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
            location: e.span().map_or_else(|| path.display().to_string(), |s| loc.at(s.start)),
            message: e.message().to_string(),
        })?;

        let marks = build_marks(&loc, raw.marks.get_ref())?;
        let params = build_hawkes(&loc, &raw.hawkes, marks)?;
        let econ = build_economic(&loc, raw.economic.get_ref())?;
        let run = build_run(&loc, raw.run.get_ref())?;

        Ok(Self {
            source: path.to_path_buf(),
            hash: sha256_hex(text.as_bytes()),
            params,
            econ,
            run,
        })
    }

    /// The seed, or an error naming the subcommand that needs it.
    pub fn require_seed(&self, subcommand: &str) -> Result<u64, ConfigError> {
        self.run.seed.ok_or_else(|| ConfigError {
            location: self.source.display().to_string(),
            message: format!("run.seed: `{subcommand}` is stochastic and needs an explicit seed (pass --seed or set run.seed)"),
        })
    }

    pub fn require<T: Clone>(&self, value: &Option<T>, key: &str, subcommand: &str) -> Result<T, ConfigError> {
        value.clone().ok_or_else(|| ConfigError {
            location: self.source.display().to_string(),
            message: format!("run.{key}: required by `{subcommand}`"),
        })
    }
}

fn core_error<T>(loc: &Locator<'_>, field: &Spanned<T>, key: &str, err: clusterre::Error) -> ConfigError {
    loc.error(field, key, err)
}

fn build_marks(loc: &Locator<'_>, raw: &RawMarks) -> Result<MarkLaw, ConfigError> {
    let need = |v: &Option<Spanned<f64>>, key: &str| -> Result<f64, ConfigError> {
        v.as_ref()
            .map(|s| *s.get_ref())
            .ok_or_else(|| loc.error(&raw.family, &format!("marks.{key}"), format!("required for family `{}`", raw.family.get_ref())))
    };
    let forbid = |present: bool, key: &str| -> Result<(), ConfigError> {
        if present {
            Err(loc.error(&raw.family, &format!("marks.{key}"), format!("not used by family `{}`", raw.family.get_ref())))
        } else {
            Ok(())
        }
    };
    // Attribute constructor errors to the key they name.
    let blame = |err: clusterre::Error| -> ConfigError {
        let field = match &err {
            clusterre::Error::InvalidParameter { name, .. } => match *name {
                "total_mass" => raw.total_mass.as_ref().map(|s| (s.span(), "marks.total_mass")),
                "mean" => raw.mean.as_ref().map(|s| (s.span(), "marks.mean")),
                "mu" => raw.mu.as_ref().map(|s| (s.span(), "marks.mu")),
                "sigma" => raw.sigma.as_ref().map(|s| (s.span(), "marks.sigma")),
                "atoms" => raw.atoms.as_ref().map(|s| (s.span(), "marks.atoms")),
                _ => None,
            },
            _ => None,
        };
        let (span, key) = field.unwrap_or((raw.family.span(), "marks.family"));
        ConfigError {
            location: loc.at(span.start),
            message: format!("{key}: {err}"),
        }
    };

    match raw.family.get_ref().as_str() {
        "exponential" => {
            forbid(raw.mu.is_some() || raw.sigma.is_some(), "mu/sigma")?;
            forbid(raw.atoms.is_some(), "atoms")?;
            let family = clusterre::MarkFamily::Exponential { mean: need(&raw.mean, "mean")? };
            MarkLaw::new(family, need(&raw.total_mass, "total_mass")?).map_err(blame)
        }
        "lognormal" => {
            forbid(raw.mean.is_some(), "mean")?;
            forbid(raw.atoms.is_some(), "atoms")?;
            let family = clusterre::MarkFamily::LogNormal {
                mu: need(&raw.mu, "mu")?,
                sigma: need(&raw.sigma, "sigma")?,
            };
            MarkLaw::new(family, need(&raw.total_mass, "total_mass")?).map_err(blame)
        }
        "discrete" => {
            forbid(raw.mean.is_some() || raw.mu.is_some() || raw.sigma.is_some(), "mean/mu/sigma")?;
            let atoms = raw
                .atoms
                .as_ref()
                .ok_or_else(|| loc.error(&raw.family, "marks.atoms", "required for family `discrete`"))?;
            let atoms: Vec<clusterre::Atom> = atoms.get_ref().iter().map(|&[z, w]| clusterre::Atom::new(z, w)).collect();
            let law = MarkLaw::discrete(atoms).map_err(blame)?;
            if let Some(m) = &raw.total_mass {
                if (m.get_ref() - law.total_mass()).abs() > 1e-12 * law.total_mass() {
                    return Err(loc.error(
                        m,
                        "marks.total_mass",
                        format!("atom weights sum to {}, which must equal total_mass", law.total_mass()),
                    ));
                }
            }
            Ok(law)
        }
        other => Err(loc.error(
            &raw.family,
            "marks.family",
            format!("unknown family `{other}` (expected exponential, lognormal or discrete)"),
        )),
    }
}

fn build_hawkes(loc: &Locator<'_>, section: &Spanned<RawHawkes>, marks: MarkLaw) -> Result<HawkesParams, ConfigError> {
    let raw = section.get_ref();
    let scale = *raw.impact_scale.get_ref();
    let impact = match raw.impact.get_ref().as_str() {
        "linear" => ImpactSpec::Linear(scale),
        "constant" => ImpactSpec::Constant(scale),
        other => {
            return Err(loc.error(&raw.impact, "hawkes.impact", format!("unknown impact `{other}` (expected linear or constant)")))
        }
    };
    HawkesParams::new(*raw.lambda0.get_ref(), *raw.lambda_bar.get_ref(), *raw.beta.get_ref(), impact, marks).map_err(|err| {
        match &err {
            clusterre::Error::InvalidParameter { name, .. } => match *name {
                "lambda0" => core_error(loc, &raw.lambda0, "hawkes.lambda0", err),
                "lambda_bar" => core_error(loc, &raw.lambda_bar, "hawkes.lambda_bar", err),
                "impact" => core_error(loc, &raw.impact_scale, "hawkes.impact_scale", err),
                _ => core_error(loc, &raw.beta, "hawkes.beta", err),
            },
            clusterre::Error::NotErgodic { .. } => core_error(loc, &raw.beta, "hawkes.beta", err),
            _ => core_error(loc, section, "hawkes", err),
        }
    })
}

fn build_economic(loc: &Locator<'_>, raw: &RawEconomic) -> Result<EconomicParams, ConfigError> {
    EconomicParams::new(
        *raw.r0.get_ref(),
        *raw.rho.get_ref(),
        *raw.cost.get_ref(),
        *raw.gamma.get_ref(),
        *raw.horizon.get_ref(),
    )
    .map_err(|err| {
        let (field, key) = match &err {
            clusterre::Error::InvalidParameter { name: "r0", .. } => (&raw.r0, "economic.r0"),
            clusterre::Error::InvalidParameter { name: "rho", .. } => (&raw.rho, "economic.rho"),
            clusterre::Error::InvalidParameter { name: "c", .. } => (&raw.cost, "economic.cost"),
            clusterre::Error::InvalidParameter { name: "gamma", .. } => (&raw.gamma, "economic.gamma"),
            _ => (&raw.horizon, "economic.horizon"),
        };
        core_error(loc, field, key, err)
    })
}

fn build_run(loc: &Locator<'_>, raw: &RawRun) -> Result<RunOptions, ConfigError> {
    let positive = |v: &Option<Spanned<usize>>, key: &str, min: usize| -> Result<Option<usize>, ConfigError> {
        match v {
            Some(s) if *s.get_ref() < min => Err(loc.error(s, key, format!("must be >= {min}, got {}", s.get_ref()))),
            Some(s) => Ok(Some(*s.get_ref())),
            None => Ok(None),
        }
    };
    let sweep_start = match raw.sweep_start.as_ref().map(|s| (s, s.get_ref().as_str())) {
        None | Some((_, "long_run_level")) => SweepStart::LongRunLevel,
        Some((_, "stationary")) => SweepStart::Stationary,
        Some((s, other)) => {
            return Err(loc.error(s, "run.sweep_start", format!("unknown value `{other}` (expected long_run_level or stationary)")))
        }
    };
    let sweep_cover = match raw.sweep_cover.as_ref().map(|s| (s, s.get_ref().as_str())) {
        None | Some((_, "risk_aversion")) => CoverInvariance::RiskAversion,
        Some((_, "report_only")) => CoverInvariance::ReportOnly,
        Some((s, other)) => {
            return Err(loc.error(s, "run.sweep_cover", format!("unknown value `{other}` (expected risk_aversion or report_only)")))
        }
    };
    if let Some(grid) = &raw.lambda_grid {
        crate::commands::check_lambda_grid(grid.get_ref()).map_err(|m| loc.error(grid, "run.lambda_grid", m))?;
    }
    if let Some(c) = &raw.contract {
        crate::contract_spec::parse(c.get_ref()).map_err(|m| loc.error(c, "run.contract", m))?;
    }
    if raw.output_dir.get_ref().is_empty() {
        return Err(loc.error(&raw.output_dir, "run.output_dir", "must not be empty"));
    }
    Ok(RunOptions {
        output_dir: PathBuf::from(raw.output_dir.get_ref()),
        seed: raw.seed.as_ref().map(|s| *s.get_ref()),
        n_paths: positive(&raw.n_paths, "run.n_paths", 2)?,
        moment_grid: positive(&raw.moment_grid, "run.moment_grid", 1)?,
        contract: raw.contract.as_ref().map(|s| s.get_ref().clone()),
        lambda_grid: raw.lambda_grid.as_ref().map(|s| s.get_ref().clone()),
        sweep_start,
        sweep_cover,
        oracle_atoms: positive(&raw.oracle_atoms, "run.oracle_atoms", 2)?.unwrap_or(400),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[hawkes]
lambda0 = 1.2
lambda_bar = 1.0
beta = 2.0
impact = "linear"
impact_scale = 0.5

[marks]
family = "exponential"
total_mass = 1.0
mean = 1.0

[economic]
r0 = 10.0
rho = 1.5
cost = 2.5
gamma = 0.25
horizon = 2.0

[run]
output_dir = "out"
seed = 3
"#;

    #[test]
    fn parses_reference_layout() {
        let c = ScenarioConfig::parse(Path::new("s.toml"), GOOD).unwrap();
        assert_eq!(c.params.beta(), 2.0);
        assert_eq!(c.run.seed, Some(3));
        assert_eq!(c.run.oracle_atoms, 400);
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn errors_point_at_the_offending_line() {
        let bad = GOOD.replace("beta = 2.0", "beta = 0.3");
        let e = ScenarioConfig::parse(Path::new("s.toml"), &bad).unwrap_err();
        assert_eq!(e.location, "s.toml:5:8");
        assert!(e.message.contains("ergodic"), "{e}");

        let bad = GOOD.replace("gamma = 0.25", "gamma = -1.0");
        let e = ScenarioConfig::parse(Path::new("s.toml"), &bad).unwrap_err();
        assert!(e.location.starts_with("s.toml:18:"), "{e}");
    }

    #[test]
    fn model_parameters_have_no_defaults() {
        let bad = GOOD.replace("mean = 1.0\n", "");
        let e = ScenarioConfig::parse(Path::new("s.toml"), &bad).unwrap_err();
        assert!(e.message.contains("marks.mean"), "{e}");
        let bad = GOOD.replace("rho = 1.5\n", "");
        assert!(ScenarioConfig::parse(Path::new("s.toml"), &bad).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = GOOD.replace("[run]\n", "[run]\nsede = 4\n");
        let e = ScenarioConfig::parse(Path::new("s.toml"), &bad).unwrap_err();
        assert!(e.message.contains("sede"), "{e}");
        assert!(e.location.starts_with("s.toml:22:1"), "{e}");
    }
}
