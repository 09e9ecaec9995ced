//! Contrastive objectives and the training loop.

mod gradcheck;
mod loss;
mod train;

use serde::{Deserialize, Serialize};

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use loss::{combined_loss, combined_loss_on, info_nce, info_nce_on, mil_nce, mil_nce_on, LossVars};
pub use train::{train, StepRecord, TrainItem, TrainReport, TrainingSet};

/// Which transcript views feed the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextViews {
    /// Terse view only (InfoNCE).
    A,
    /// Fluent view only (MIL-NCE).
    W,
    #[default]
    Both,
}

impl TextViews {
    pub fn name(self) -> &'static str {
        match self {
            TextViews::A => "a",
            TextViews::W => "w",
            TextViews::Both => "both",
        }
    }
}

impl std::str::FromStr for TextViews {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" => Ok(TextViews::A),
            "w" => Ok(TextViews::W),
            "both" => Ok(TextViews::Both),
            other => Err(format!("unknown text views {other:?}, expected a, w or both")),
        }
    }
}
