use nalgebra::DVector;

use super::OracleError;
use crate::markov_chain::{transition_matrix, Generator};

pub const FORMS: [&str; 3] = ["zero_driver", "pure_meanfield_exp", "linear_decay"];

/// Parameters for [`closed_form`]. `zero_driver` needs `gen` and `g`; the
/// other two need `c` and `horizon`.
#[derive(Debug, Clone, Default)]
pub struct ClosedFormParams {
    pub gen: Option<Generator>,
    pub g: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum ClosedForm {
    /// `f ≡ 0`: `u(t) = P(t, T)ᵀ g`, i.e. `exp((T - t)Aᵀ) g` for constant rates.
    ZeroDriver { gen: Generator, g: DVector<f64> },
    /// `f = y'`, `ξ ≡ c`: `u_i(t) = c e^{T-t}`.
    PureMeanfieldExp { c: f64, horizon: f64, n: usize },
    /// `f = -y`, `ξ ≡ c`: `u_i(t) = c e^{-(T-t)}`.
    LinearDecay { c: f64, horizon: f64, n: usize },
}

impl ClosedForm {
    pub fn horizon(&self) -> f64 {
        match self {
            Self::ZeroDriver { gen, .. } => gen.horizon(),
            Self::PureMeanfieldExp { horizon, .. } | Self::LinearDecay { horizon, .. } => *horizon,
        }
    }

    /// Value vector `u(t)`.
    pub fn vector(&self, t: f64) -> DVector<f64> {
        match self {
            Self::ZeroDriver { gen, g } => transition_matrix(gen, t, gen.horizon())
                .expect("t within horizon")
                .tr_mul(g),
            Self::PureMeanfieldExp { c, horizon, n } => {
                DVector::from_element(*n, c * (horizon - t).exp())
            }
            Self::LinearDecay { c, horizon, n } => {
                DVector::from_element(*n, c * (-(horizon - t)).exp())
            }
        }
    }

    pub fn eval(&self, t: f64, state: usize) -> f64 {
        self.vector(t)[state]
    }
}

/// Look up a named analytic solution.
pub fn closed_form(name: &str, params: &ClosedFormParams) -> Result<ClosedForm, OracleError> {
    let scalar = |name: &str| -> Result<(f64, f64), OracleError> {
        let c = params
            .c
            .ok_or_else(|| OracleError::InvalidParams(format!("{name} needs c")))?;
        let horizon = params
            .horizon
            .or(params.gen.as_ref().map(Generator::horizon))
            .ok_or_else(|| OracleError::InvalidParams(format!("{name} needs a horizon")))?;
        if !(horizon > 0.0) || !c.is_finite() {
            return Err(OracleError::InvalidParams(format!(
                "{name}: c = {c}, horizon = {horizon}"
            )));
        }
        Ok((c, horizon))
    };
    let n = params
        .gen
        .as_ref()
        .map(Generator::n)
        .or(params.g.as_ref().map(Vec::len))
        .unwrap_or(1);
    match name {
        "zero_driver" => {
            let gen = params
                .gen
                .clone()
                .ok_or_else(|| OracleError::InvalidParams("zero_driver needs a generator".into()))?;
            let g = params
                .g
                .clone()
                .ok_or_else(|| OracleError::InvalidParams("zero_driver needs g".into()))?;
            if g.len() != gen.n() {
                return Err(OracleError::InvalidParams(format!(
                    "g has length {}, generator has {} states",
                    g.len(),
                    gen.n()
                )));
            }
            Ok(ClosedForm::ZeroDriver {
                gen,
                g: DVector::from_vec(g),
            })
        }
        "pure_meanfield_exp" => {
            let (c, horizon) = scalar(name)?;
            Ok(ClosedForm::PureMeanfieldExp { c, horizon, n })
        }
        "linear_decay" => {
            let (c, horizon) = scalar(name)?;
            Ok(ClosedForm::LinearDecay { c, horizon, n })
        }
        other => Err(OracleError::UnknownForm(other.to_string())),
    }
}
