use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How σ weighs the intermediate-domain loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Bernoulli(σ) draw per step: the mixed batch is used or skipped.
    #[default]
    Gate,
    /// Every step, weight σ.
    Weight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaGate {
    sigma: f64,
    mode: SigmaMode,
}

impl SigmaGate {
    pub fn new(sigma: f64, mode: SigmaMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::Config(format!("σ = {sigma} must lie in [0, 1]")));
        }
        Ok(SigmaGate { sigma, mode })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Weight of the mixed loss for one step. Always consumes exactly one
    /// draw so both modes keep the random stream aligned.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self.mode {
            SigmaMode::Gate => {
                if u < self.sigma {
                    1.0
                } else {
                    0.0
                }
            }
            SigmaMode::Weight => self.sigma,
        }
    }
}

/// `ℒ_s + g·ℒ_π` for one step, `g` drawn from the gate.
pub fn combined_step_loss<R: Rng>(source_loss: f64, mixed_loss: f64, gate: &SigmaGate, rng: &mut R) -> f64 {
    source_loss + gate.draw(rng) * mixed_loss
}
