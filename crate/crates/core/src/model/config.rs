use serde::{Deserialize, Serialize};

use super::tokenizer::{Vocab, DEFAULT_ALPHABET};
use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Binary interaction prediction (DTI).
    Classification,
    /// Continuous affinity regression (DTA).
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveVariant {
    /// `y d² + (1 − y) max(0, m − d)²` with `d = 1 − cos(e_d, e_p)`.
    CosineMargin,
    /// `max(0, α + ‖f_d − f_p‖ − ‖f_d − f_p⁻‖)` over positive pairs.
    TripletL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub drug_dim: usize,
    pub protein_dim: usize,
    /// Enables the pocket branch.
    pub pocket_dim: Option<usize>,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub lambda_protein: f64,
    pub lambda_pocket: f64,
    pub mode: Mode,
    pub max_len: usize,
    /// Ordered non-special characters of the SMILES vocabulary.
    pub alphabet: String,
    pub latent_dim: usize,
    pub weights: LossWeights,
    pub contrastive: ContrastiveVariant,
    pub margin: f64,
    pub triplet_margin: f64,
    pub unfamiliarity_eps: f64,
    /// Regression only: confidence target is `min(1, |target − pred| / scale)`.
    pub regression_error_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            drug_dim: 64,
            protein_dim: 1280,
            pocket_dim: None,
            hidden_dim: 512,
            output_dim: 256,
            lambda_protein: 1.0,
            lambda_pocket: 2.0,
            mode: Mode::Classification,
            max_len: 128,
            alphabet: DEFAULT_ALPHABET.to_string(),
            latent_dim: 64,
            weights: LossWeights::default(),
            contrastive: ContrastiveVariant::CosineMargin,
            margin: 1.0,
            triplet_margin: 1.0,
            unfamiliarity_eps: 1e-8,
            regression_error_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("drug_dim", self.drug_dim),
            ("protein_dim", self.protein_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
            ("latent_dim", self.latent_dim),
            ("pocket_dim", self.pocket_dim.unwrap_or(1)),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        self.weights.validate()?;
        for (name, v) in [
            ("lambda_protein", self.lambda_protein),
            ("lambda_pocket", self.lambda_pocket),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(self.margin > 0.0) || !(self.triplet_margin > 0.0) {
            return Err(Error::Config("margins must be positive".into()));
        }
        if !(self.unfamiliarity_eps > 0.0) {
            return Err(Error::Config("unfamiliarity_eps must be positive".into()));
        }
        if !(self.regression_error_scale > 0.0) {
            return Err(Error::Config("regression_error_scale must be positive".into()));
        }
        Vocab::new(&self.alphabet)?;
        Ok(())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(&self.alphabet)
    }

    pub fn pockets_enabled(&self) -> bool {
        self.pocket_dim.is_some()
    }
}
