use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Encoder dimensions. `u = 2 · gru_hidden` is the width of every
/// per-token layer after the BiGRU; the sentence vector has `r_hops · u`
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_kernel: usize,
    pub char_filters: usize,
    pub gru_hidden: usize,
    pub heads: usize,
    pub d_a: usize,
    pub r_hops: usize,
    pub n_max: usize,
    pub dropout: f64,
    /// Inner width of the position-wise feed-forward layer; defaults to `u`.
    #[serde(default)]
    pub ffn_dim: Option<usize>,
    #[serde(default = "default_highway_layers")]
    pub highway_layers: usize,
}

fn default_highway_layers() -> usize {
    2
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            char_dim: 150,
            char_kernel: 3,
            char_filters: 150,
            gru_hidden: 300,
            heads: 6,
            d_a: 300,
            r_hops: 4,
            n_max: 64,
            dropout: 0.1,
            ffn_dim: None,
            highway_layers: 2,
        }
    }
}

impl EncoderConfig {
    /// Small dimensions for gradient checks and toy runs.
    pub fn tiny() -> Self {
        Self {
            word_dim: 8,
            char_dim: 4,
            char_kernel: 3,
            char_filters: 4,
            gru_hidden: 4,
            heads: 2,
            d_a: 4,
            r_hops: 2,
            n_max: 16,
            dropout: 0.1,
            ffn_dim: None,
            highway_layers: 2,
        }
    }

    pub fn u(&self) -> usize {
        2 * self.gru_hidden
    }

    pub fn head_dim(&self) -> usize {
        self.u() / self.heads
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.char_filters
    }

    pub fn ffn_inner(&self) -> usize {
        self.ffn_dim.unwrap_or_else(|| self.u())
    }

    pub fn final_dim(&self) -> usize {
        self.r_hops * self.u()
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_kernel", self.char_kernel),
            ("char_filters", self.char_filters),
            ("gru_hidden", self.gru_hidden),
            ("heads", self.heads),
            ("d_a", self.d_a),
            ("r_hops", self.r_hops),
            ("n_max", self.n_max),
            ("ffn_dim", self.ffn_inner()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(EncoderError::InvalidConfig(format!("{name} must be positive")));
        }
        if self.u() % self.heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "BiGRU width {} is not divisible by {} heads",
                self.u(),
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.u(), 600);
        assert_eq!(c.input_dim(), 450);
        assert_eq!(c.final_dim(), 2400);
        assert_eq!(c.head_dim(), 100);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = EncoderConfig::tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::tiny();
        c.d_a = 0;
        assert!(c.validate().is_err());
    }
}
