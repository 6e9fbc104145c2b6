use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_L1: f64 = 0.01;
pub const DEFAULT_L2: f64 = 0.01;

/// Weight penalty applied to a group of kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regularizer {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "l1+l2")]
    L1L2,
}

impl Regularizer {
    pub const ALL: [Regularizer; 4] = [
        Regularizer::None,
        Regularizer::L1,
        Regularizer::L2,
        Regularizer::L1L2,
    ];

    pub fn has_l1(self) -> bool {
        matches!(self, Regularizer::L1 | Regularizer::L1L2)
    }

    pub fn has_l2(self) -> bool {
        matches!(self, Regularizer::L2 | Regularizer::L1L2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::L1 => "l1",
            Regularizer::L2 => "l2",
            Regularizer::L1L2 => "l1+l2",
        }
    }

    pub(crate) fn code(self) -> u32 {
        self as u32
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Regularizer::None),
            "l1" => Ok(Regularizer::L1),
            "l2" => Ok(Regularizer::L2),
            "l1+l2" | "l1l2" | "l1_l2" => Ok(Regularizer::L1L2),
            other => Err(Error::Config(format!("unknown regularizer `{other}`"))),
        }
    }
}

/// Architecture and regularisation of a bidirectional LSTM classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub window_len: usize,
    pub n_layers: usize,
    pub hidden_units: usize,
    pub dropout: f64,
    /// Penalty on input kernels and the dense head.
    pub kernel_reg: Regularizer,
    /// Penalty on recurrent kernels.
    pub recurrent_reg: Regularizer,
    pub n_classes: usize,
    #[serde(default = "default_l1")]
    pub l1: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_l1() -> f64 {
    DEFAULT_L1
}

fn default_l2() -> f64 {
    DEFAULT_L2
}

impl ModelConfig {
    pub fn new(input_channels: usize, window_len: usize, n_classes: usize) -> Self {
        ModelConfig {
            input_channels,
            window_len,
            n_layers: 1,
            hidden_units: 16,
            dropout: 0.0,
            kernel_reg: Regularizer::None,
            recurrent_reg: Regularizer::None,
            n_classes,
            l1: DEFAULT_L1,
            l2: DEFAULT_L2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_channels == 0 {
            return fail("input_channels must be positive".into());
        }
        if self.window_len == 0 {
            return fail("window_len must be positive".into());
        }
        if !(1..=4).contains(&self.n_layers) {
            return fail(format!("n_layers must be in 1..=4, got {}", self.n_layers));
        }
        if self.hidden_units == 0 {
            return fail("hidden_units must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.n_classes < 2 {
            return fail(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return fail("penalty weights must be non-negative".into());
        }
        Ok(())
    }

    /// Input width of layer `layer` (0-based).
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_channels
        } else {
            2 * self.hidden_units
        }
    }

    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_units;
        let lstm: usize = (0..self.n_layers)
            .map(|l| 2 * (self.layer_input_dim(l) * 4 * h + h * 4 * h + 4 * h))
            .sum();
        lstm + 2 * h * self.n_classes + self.n_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_layout() {
        let mut c = ModelConfig::new(5, 3, 4);
        c.hidden_units = 2;
        // per direction: 5*8 + 2*8 + 8 = 64; two directions; head 4*4 + 4
        assert_eq!(c.parameter_count(), 128 + 20);
        c.n_layers = 2;
        // second layer input 4: 4*8 + 16 + 8 = 56 per direction
        assert_eq!(c.parameter_count(), 128 + 112 + 20);
    }

    #[test]
    fn validation_rejects_out_of_domain_values() {
        let ok = ModelConfig::new(3, 2, 2);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.n_layers = 5;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = ok;
        c.n_classes = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn regularizer_names_round_trip() {
        for r in Regularizer::ALL {
            assert_eq!(r.name().parse::<Regularizer>().unwrap(), r);
            assert_eq!(Regularizer::from_code(r.code()), Some(r));
        }
    }
}
