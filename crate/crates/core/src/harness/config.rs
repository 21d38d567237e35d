//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "problem": {
//!     "generator": { "horizon": 1.0, "segments": [{ "t_start": 0.0, "rates": [[-1, 1], [1, -1]] }] },
//!     "mu0": [0.5, 0.5],
//!     "terminal": [1.0, 1.0],
//!     "driver": { "expr": "yp", "lipschitz": 1.0 }
//!   },
//!   "solver": { "steps": 200, "tol": 1e-9, "max_iter": 60, "variant": "y" },
//!   "verification": { "n_paths": 100000, "seed": 1 },
//!   "output_dir": "out"
//! }
//! ```
//!
//! Matrices are row-major; `rates[j][i]` is the jump rate from `i` to `j`.
//! `terminal` is either a vector or an expression in `i` (1-based).
//! `driver` is either `{ "expr", "lipschitz" }` or `{ "named": ... }` with
//! one of `zero_driver`, `pure_meanfield_exp`, `linear_decay`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, DriverExpr, DslError};
use crate::markov_chain::{ChainError, Generator, GeneratorSpec};
use crate::meanfield_bsde::{BsdeError, MeanFieldProblem, TerminalCondition, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid generator: {0}")]
    Generator(#[from] ChainError),
    #[error("invalid {what}: {source}")]
    Expression {
        what: &'static str,
        #[source]
        source: DslError,
    },
    #[error("invalid problem: {0}")]
    Problem(#[from] BsdeError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalSpec {
    Vector(Vec<f64>),
    Expression(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedDriver {
    ZeroDriver,
    PureMeanfieldExp,
    LinearDecay,
}

impl NamedDriver {
    pub fn expr(self) -> (&'static str, f64) {
        match self {
            NamedDriver::ZeroDriver => ("0", 0.0),
            NamedDriver::PureMeanfieldExp => ("yp", 1.0),
            NamedDriver::LinearDecay => ("-y", 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedDriver::ZeroDriver => "zero_driver",
            NamedDriver::PureMeanfieldExp => "pure_meanfield_exp",
            NamedDriver::LinearDecay => "linear_decay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriverSpec {
    Expr { expr: String, lipschitz: f64 },
    Named { named: NamedDriver },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub generator: GeneratorSpec,
    pub mu0: Vec<f64>,
    pub terminal: TerminalSpec,
    pub driver: DriverSpec,
}

/// Second problem for `compare`; shares the chain with the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondProblemSpec {
    pub terminal: TerminalSpec,
    pub driver: DriverSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantSpec {
    Y,
    Zprime,
}

impl From<VariantSpec> for Variant {
    fn from(v: VariantSpec) -> Self {
        match v {
            VariantSpec::Y => Variant::Y,
            VariantSpec::Zprime => Variant::ZPrime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub steps: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub variant: VariantSpec,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            steps: 200,
            tol: 1e-9,
            max_iter: 60,
            variant: VariantSpec::Y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationSpec {
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for VerificationSpec {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeSpec {
    pub steps: Vec<usize>,
    pub reference_steps: usize,
}

impl Default for ConvergeSpec {
    fn default() -> Self {
        Self {
            steps: vec![25, 50, 100, 200],
            reference_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Tree,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub kind: OracleKind,
    pub steps: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            kind: OracleKind::Tree,
            steps: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub second_problem: Option<SecondProblemSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub verification: VerificationSpec,
    #[serde(default)]
    pub converge: ConvergeSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".into()
}

impl ExperimentConfig {
    /// Parse JSON; schema errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: match e.path().to_string() {
                p if p == "." => "<root>".to_string(),
                p => p,
            },
            message: e.inner().to_string(),
        })
    }

    pub fn generator(&self) -> Result<Generator, ConfigError> {
        Ok(Generator::try_from(self.problem.generator.clone())?)
    }

    pub fn problem(&self) -> Result<MeanFieldProblem, ConfigError> {
        let gen = self.generator()?;
        build_problem(gen, &self.problem.mu0, &self.problem.terminal, &self.problem.driver)
    }

    pub fn second(&self) -> Result<MeanFieldProblem, ConfigError> {
        let second = self
            .second_problem
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("compare needs a second_problem".into()))?;
        let gen = self.generator()?;
        build_problem(gen, &self.problem.mu0, &second.terminal, &second.driver)
    }
}

pub fn driver_expr(spec: &DriverSpec) -> Result<DriverExpr, ConfigError> {
    let (text, lipschitz) = match spec {
        DriverSpec::Expr { expr, lipschitz } => (expr.as_str(), *lipschitz),
        DriverSpec::Named { named } => named.expr(),
    };
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err(ConfigError::Invalid(format!(
            "lipschitz must be a nonnegative number, got {lipschitz}"
        )));
    }
    let parsed = dsl::parse_driver(text).map_err(|source| ConfigError::Expression {
        what: "driver",
        source,
    })?;
    Ok(DriverExpr {
        lipschitz,
        ..parsed
    })
}

fn build_problem(
    gen: Generator,
    mu0: &[f64],
    terminal: &TerminalSpec,
    driver: &DriverSpec,
) -> Result<MeanFieldProblem, ConfigError> {
    let n = gen.n();
    let g = match terminal {
        TerminalSpec::Vector(g) => g.clone(),
        TerminalSpec::Expression(text) => {
            dsl::terminal_vector(text, n).map_err(|source| ConfigError::Expression {
                what: "terminal",
                source,
            })?
        }
    };
    let expr = driver_expr(driver)?;
    expr.expr
        .check_components(n)
        .map_err(|source| ConfigError::Expression {
            what: "driver",
            source,
        })?;
    Ok(MeanFieldProblem::new(
        gen,
        DVector::from_vec(mu0.to_vec()),
        TerminalCondition::markovian(g),
        expr.to_driver(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "problem": {
            "generator": {"horizon": 1.0, "segments": [{"t_start": 0.0, "rates": [[-1, 1], [1, -1]]}]},
            "mu0": [0.5, 0.5],
            "terminal": "i",
            "driver": {"named": "pure_meanfield_exp"}
        },
        "solver": {"steps": 50}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.solver.steps, 50);
        assert_eq!(c.solver.tol, 1e-9);
        assert_eq!(c.verification.n_paths, 100_000);
        let p = c.problem().unwrap();
        assert_eq!(p.terminal_vector().unwrap().as_slice(), &[1.0, 2.0]);
        assert_eq!(p.driver.lipschitz(), 1.0);
    }

    #[test]
    fn schema_errors_have_paths() {
        let bad = BASE.replace(r#""steps": 50"#, r#""steps": "many""#);
        match ExperimentConfig::from_json(&bad) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "solver.steps"),
            other => panic!("{other:?}"),
        }
        let bad = BASE.replace(r#""mu0""#, r#""mu_0""#);
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn validation_errors_name_column_and_segment() {
        let bad = BASE.replace("[[-1, 1], [1, -1]]", "[[-1, 1], [1.1, -1]]");
        let c = ExperimentConfig::from_json(&bad).unwrap();
        let msg = c.problem().unwrap_err().to_string();
        assert!(msg.contains("column 1") && msg.contains("segment 1"), "{msg}");
    }

    #[test]
    fn driver_components_are_checked() {
        let bad = BASE.replace(r#"{"named": "pure_meanfield_exp"}"#, r#"{"expr": "z3", "lipschitz": 1}"#);
        let c = ExperimentConfig::from_json(&bad).unwrap();
        assert!(matches!(c.problem(), Err(ConfigError::Expression { .. })));
    }
}
