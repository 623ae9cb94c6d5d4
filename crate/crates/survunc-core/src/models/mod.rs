//! Base survival models behind one uniform contract, plus versioned-JSON
//! persistence for model files.

pub mod cox;
pub mod deepsurv;
pub mod rsf;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SurvivalCurve, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};

pub use cox::{cox_fit, CoxModel};
pub use deepsurv::{deepsurv_fit, DeepSurvConfig, DeepSurvModel};
pub use rsf::{rsf_fit, RsfConfig, SurvivalForest};

/// What a fitted model can do beyond plain prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Stochastic dropout passes are available at inference time.
    pub supports_dropout: bool,
    /// Refitting with a different seed yields a genuinely different model.
    pub supports_reseed: bool,
}

/// Uniform prediction contract for fitted survival models.
///
/// Implementors are constructed by their fit functions, so a value of any
/// implementing type is always fitted.
pub trait SurvivalModel: Send + Sync {
    /// Covariate dimension accepted by the model.
    fn dim(&self) -> usize;

    fn capabilities(&self) -> Capabilities;

    /// The model's own evaluation grid (training event times).
    fn native_grid(&self) -> &TimeGrid;

    /// Survival curve for covariates `x` on the requested grid
    /// (step interpolation from the model's native representation).
    fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve>;

    /// `S(t | x)` at a single time, without materializing a curve.
    fn predict_survival_at(&self, x: &[f64], t: f64) -> Result<f64>;

    /// Curve on the model's native grid.
    fn predict_native(&self, x: &[f64]) -> Result<SurvivalCurve> {
        self.predict_survival(x, &self.native_grid().clone())
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(SurvError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Any of the three concrete model kinds; the unit of persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyModel {
    Cox(CoxModel),
    DeepSurv(DeepSurvModel),
    Rsf(SurvivalForest),
}

impl AnyModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AnyModel::Cox(_) => "cox",
            AnyModel::DeepSurv(_) => "deepsurv",
            AnyModel::Rsf(_) => "rsf",
        }
    }

    fn inner(&self) -> &dyn SurvivalModel {
        match self {
            AnyModel::Cox(m) => m,
            AnyModel::DeepSurv(m) => m,
            AnyModel::Rsf(m) => m,
        }
    }

    /// Refit on `train` with a new seed, keeping every other setting.
    ///
    /// The linear model's fit is deterministic, so its refit ignores the
    /// seed; `val` is required only by the MLP hazard model.
    pub fn refit(
        &self,
        train: &SurvivalDataset,
        val: Option<&SurvivalDataset>,
        seed: u64,
    ) -> Result<AnyModel> {
        match self {
            AnyModel::Cox(m) => {
                log::warn!("linear hazard fit is deterministic; reseeding has no effect");
                Ok(AnyModel::Cox(cox::cox_fit(train, m.tol, m.max_iter)?))
            }
            AnyModel::DeepSurv(m) => {
                let val = val.ok_or_else(|| {
                    SurvError::InvalidArgument(
                        "refitting the MLP hazard model needs a validation set".into(),
                    )
                })?;
                let mut config = m.config.clone();
                config.seed = seed;
                Ok(AnyModel::DeepSurv(deepsurv::deepsurv_fit(
                    train, val, &config,
                )?))
            }
            AnyModel::Rsf(m) => {
                let mut config = m.config.clone();
                config.seed = seed;
                Ok(AnyModel::Rsf(rsf::rsf_fit(train, &config)?))
            }
        }
    }
}

impl SurvivalModel for AnyModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn capabilities(&self) -> Capabilities {
        self.inner().capabilities()
    }

    fn native_grid(&self) -> &TimeGrid {
        match self {
            AnyModel::Cox(m) => m.native_grid(),
            AnyModel::DeepSurv(m) => m.native_grid(),
            AnyModel::Rsf(m) => m.native_grid(),
        }
    }

    fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
        self.inner().predict_survival(x, grid)
    }

    fn predict_survival_at(&self, x: &[f64], t: f64) -> Result<f64> {
        self.inner().predict_survival_at(x, t)
    }
}

const MODEL_FORMAT: &str = "survunc-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: serde_json::Value,
}

/// Write `value` to `path` inside a `{format, version, ...}` JSON envelope.
pub(crate) fn save_envelope(
    format: &str,
    version: u32,
    value: serde_json::Value,
    path: &Path,
) -> Result<()> {
    let envelope = Envelope {
        format: format.to_string(),
        version,
        model: value,
    };
    let json = serde_json::to_string(&envelope)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Read an envelope written by [`save_envelope`], checking format and version.
pub(crate) fn load_envelope(format: &str, version: u32, path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    let envelope: Envelope = serde_json::from_str(&text)?;
    if envelope.format != format {
        return Err(SurvError::Serialization(format!(
            "not a `{format}` file (format tag `{}`)",
            envelope.format
        )));
    }
    if envelope.version != version {
        return Err(SurvError::VersionMismatch {
            expected: version,
            found: envelope.version,
        });
    }
    Ok(envelope.model)
}

/// Write a model to a versioned JSON file (`.survmodel.json`).
pub fn save_model(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    save_envelope(
        MODEL_FORMAT,
        MODEL_VERSION,
        serde_json::to_value(model)?,
        path.as_ref(),
    )
}

/// Load a model saved by [`save_model`]; predictions round-trip bitwise.
pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let value = load_envelope(MODEL_FORMAT, MODEL_VERSION, path.as_ref())?;
    Ok(serde_json::from_value(value)?)
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::data::{SurvivalDataset, SurvivalRecord};
    use rand::Rng;

    /// Small proportional-hazards dataset with exponential baseline
    /// `h(t|x) = rate * exp(beta . x)` and optional uniform censoring.
    pub fn ph_dataset(
        n: usize,
        beta: &[f64],
        rate: f64,
        censor_fraction: f64,
        seed_value: u64,
    ) -> SurvivalDataset {
        let d = beta.len();
        let mut rng = crate::seed::rng(seed_value, "ph-data", 0);
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| crate::seed::standard_normal(&mut rng)).collect();
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let u: f64 = rng.random::<f64>().max(1e-12);
            let t_event = -u.ln() / (rate * eta.exp());
            let (time, event) = if rng.random::<f64>() < censor_fraction {
                (t_event * rng.random::<f64>().max(1e-6), false)
            } else {
                (t_event, true)
            };
            records.push(SurvivalRecord::new(x, time.max(1e-9), event).unwrap());
        }
        let names = (0..d).map(|j| format!("x{j}")).collect();
        SurvivalDataset::from_parts(records, names).unwrap()
    }
}
