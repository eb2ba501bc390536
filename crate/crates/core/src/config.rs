//! Hyperparameters and architecture switches.

use serde::{Deserialize, Serialize};

use crate::ehr::Vocabulary;
use crate::error::{MesinError, Result};
use crate::params::InitScheme;

/// Which label pairs enter the multi-label margin loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginPairs {
    /// Every (true label, any label) pair, true-vs-true included.
    #[default]
    AllLabels,
    /// Only (true label, non-true label) pairs.
    ExcludeTrue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gamma_lab: f64,
    pub gamma_diag: f64,
    pub gamma_med: f64,
    /// Weight of the binary cross-entropy term.
    pub eta: f64,
    /// Weight of the margin term; `eta + epsilon = 1`.
    pub epsilon: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub threshold: f64,
    pub init: InitScheme,
    pub margin_pairs: MarginPairs,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embed_dim: 128,
            hidden_dim: 128,
            gamma_lab: 1.5,
            gamma_diag: 1.5,
            gamma_med: 1.3,
            eta: 0.99,
            epsilon: 0.01,
            dropout: 0.4,
            batch_size: 10,
            learning_rate: 2e-4,
            epochs: 40,
            threshold: 0.5,
            init: InitScheme::Uniform,
            margin_pairs: MarginPairs::AllLabels,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MesinError::Config(m));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return fail("embed_dim, hidden_dim and batch_size must be positive".into());
        }
        for (name, g) in [
            ("gamma_lab", self.gamma_lab),
            ("gamma_diag", self.gamma_diag),
            ("gamma_med", self.gamma_med),
        ] {
            if !(g.is_finite() && g > 1.0) {
                return fail(format!("{name} must be > 1, got {g}"));
            }
        }
        if !(self.eta >= 0.0 && self.epsilon >= 0.0) || (self.eta + self.epsilon - 1.0).abs() > 1e-12 {
            return fail(format!(
                "loss mixture must satisfy eta + epsilon = 1 with both >= 0 (eta = {}, epsilon = {})",
                self.eta, self.epsilon
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        Ok(())
    }
}

/// How a set of embeddings is reduced to one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Attentional selective module.
    Attention,
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Entmax,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Memory calibration and enhanced input gate.
    Interactive,
    /// Memory calibration only; the input gate ignores the auxiliary input.
    Decomposed,
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Softmax-weighted sum of the visit embeddings.
    Selective,
    /// Concatenation fed straight to the output layer.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sources {
    pub lab: bool,
    pub diag: bool,
    pub med: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub lab_selection: Selection,
    pub diag_selection: Selection,
    pub med_selection: Selection,
    pub attention: AttentionKind,
    pub diag_cell: CellKind,
    pub med_cell: CellKind,
    pub fusion: Fusion,
    pub sources: Sources,
}

pub const VARIANT_NAMES: &[&str] = &[
    "vanilla",
    "vanilla_sum",
    "asm_l",
    "asm_ld",
    "asm_ldm",
    "asm_inlstm_d",
    "asm_inlstm_dm",
    "mesin",
    "mesin_soft",
    "mesin_de",
    "nolab",
    "nodiag",
    "nomed",
    "alldata",
];

impl Default for Variant {
    fn default() -> Self {
        Variant::full()
    }
}

impl Variant {
    pub fn full() -> Self {
        Variant {
            lab_selection: Selection::Attention,
            diag_selection: Selection::Attention,
            med_selection: Selection::Attention,
            attention: AttentionKind::Entmax,
            diag_cell: CellKind::Interactive,
            med_cell: CellKind::Interactive,
            fusion: Fusion::Selective,
            sources: Sources {
                lab: true,
                diag: true,
                med: true,
            },
        }
    }

    /// No selective modules (uniform mean pooling), standard LSTMs, concatenation.
    pub fn vanilla() -> Self {
        Variant {
            lab_selection: Selection::Mean,
            diag_selection: Selection::Mean,
            med_selection: Selection::Mean,
            diag_cell: CellKind::Standard,
            med_cell: CellKind::Standard,
            fusion: Fusion::Concat,
            ..Variant::full()
        }
    }

    /// Look up a registered variant by name; see [`VARIANT_NAMES`].
    pub fn named(name: &str) -> Result<Self> {
        let full = Variant::full();
        let v = match name {
            "vanilla" => Variant::vanilla(),
            "vanilla_sum" => Variant {
                lab_selection: Selection::Sum,
                diag_selection: Selection::Sum,
                med_selection: Selection::Sum,
                ..Variant::vanilla()
            },
            "asm_l" => Variant {
                lab_selection: Selection::Attention,
                ..Variant::vanilla()
            },
            "asm_ld" => Variant {
                lab_selection: Selection::Attention,
                diag_selection: Selection::Attention,
                ..Variant::vanilla()
            },
            "asm_ldm" => Variant {
                lab_selection: Selection::Attention,
                diag_selection: Selection::Attention,
                med_selection: Selection::Attention,
                ..Variant::vanilla()
            },
            "asm_inlstm_d" => Variant {
                fusion: Fusion::Concat,
                med_cell: CellKind::Standard,
                ..full
            },
            "asm_inlstm_dm" => Variant {
                fusion: Fusion::Concat,
                ..full
            },
            "mesin" | "alldata" => full,
            "mesin_soft" => Variant {
                attention: AttentionKind::Softmax,
                ..full
            },
            "mesin_de" => Variant {
                diag_cell: CellKind::Decomposed,
                med_cell: CellKind::Decomposed,
                ..full
            },
            "nolab" => Variant {
                sources: Sources { lab: false, ..full.sources },
                ..full
            },
            "nodiag" => Variant {
                sources: Sources { diag: false, ..full.sources },
                ..full
            },
            "nomed" => Variant {
                sources: Sources { med: false, ..full.sources },
                ..full
            },
            other => {
                return Err(MesinError::Config(format!(
                    "unknown variant {other:?}; valid names: {}",
                    VARIANT_NAMES.join(", ")
                )))
            }
        };
        Ok(v)
    }

    /// Cell actually used by the diagnosis stream (no lab stream means no auxiliary input).
    pub fn effective_diag_cell(&self) -> CellKind {
        if self.sources.lab {
            self.diag_cell
        } else {
            CellKind::Standard
        }
    }

    /// Cell actually used by the medication stream.
    pub fn effective_med_cell(&self) -> CellKind {
        if self.sources.lab || self.sources.diag {
            self.med_cell
        } else {
            CellKind::Standard
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hyper: HyperParams,
    pub vocab: Vocabulary,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let s = self.variant.sources;
        if !(s.lab || s.diag || s.med) {
            return Err(MesinError::Config("at least one data source must be enabled".into()));
        }
        if self.variant.fusion == Fusion::Selective && self.hyper.embed_dim != self.hyper.hidden_dim {
            return Err(MesinError::Config(format!(
                "selective fusion needs embed_dim == hidden_dim (got {} and {})",
                self.hyper.embed_dim, self.hyper.hidden_dim
            )));
        }
        let v = &self.vocab;
        if v.medications == 0 || v.diagnoses == 0 || v.indicators == 0 {
            return Err(MesinError::Config("vocabulary sizes must be positive".into()));
        }
        Ok(())
    }
}
