use super::ModelError;
use crate::kv::{join_list, KvError, KvMap};

/// Dropout probabilities for the input embedding, between recurrent layers,
/// and on the final backbone output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutRates {
    pub input: f64,
    pub hidden: f64,
    pub output: f64,
}

impl DropoutRates {
    pub const NONE: Self = Self {
        input: 0.0,
        hidden: 0.0,
        output: 0.0,
    };
}

/// Backbone and mixture-head sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct MoSConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Hidden size of each stacked LSTM layer; the last one is `h`.
    pub layer_sizes: Vec<usize>,
    pub mixtures: usize,
    pub dropout: DropoutRates,
}

impl MoSConfig {
    /// Desk-scale defaults: two layers of 128, `d = 64`, three mixtures.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embedding_dim: 64,
            layer_sizes: vec![128, 128],
            mixtures: 3,
            dropout: DropoutRates {
                input: 0.2,
                hidden: 0.2,
                output: 0.3,
            },
        }
    }

    pub fn hidden_size(&self) -> usize {
        *self.layer_sizes.last().expect("at least one layer")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab_size == 0 || self.embedding_dim == 0 {
            return bad("vocabulary and embedding sizes must be positive".into());
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return bad(format!("invalid layer sizes {:?}", self.layer_sizes));
        }
        if self.mixtures == 0 {
            return bad("at least one mixture component is required".into());
        }
        for p in [self.dropout.input, self.dropout.hidden, self.dropout.output] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

/// How temperature logits are squashed into a positive temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemperatureVariant {
    /// `(softmax(mu) + alpha) / beta`, range `[alpha/beta, (1+alpha)/beta]`.
    SoftmaxBounded,
    /// `lambda^tanh(mu)`, range `(1/lambda, lambda)`.
    PowTanh,
    /// `tanh(mu) + lambda`, range `(lambda - 1, lambda + 1)`.
    TanhShift,
}

impl TemperatureVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::SoftmaxBounded => "softmax",
            Self::PowTanh => "pow-tanh",
            Self::TanhShift => "tanh-shift",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "softmax" | "softmax-bounded" => Some(Self::SoftmaxBounded),
            "pow-tanh" => Some(Self::PowTanh),
            "tanh-shift" => Some(Self::TanhShift),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureConfig {
    pub alpha: f64,
    pub beta: f64,
    pub variant: TemperatureVariant,
    pub lambda: f64,
    /// Inner dimension of the factorized projection `W_tau1 * W_tau2`.
    pub rank: usize,
}

impl TemperatureConfig {
    /// `(alpha, beta) = (1, 0.5)`, temperatures in `[2, 4]`.
    pub fn bounded(rank: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            variant: TemperatureVariant::SoftmaxBounded,
            lambda: 4.0,
            rank,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rank == 0 {
            return Err(ModelError::Config("temperature rank must be positive".into()));
        }
        match self.variant {
            TemperatureVariant::SoftmaxBounded => {
                if !(self.beta > 0.0) {
                    return Err(ModelError::Config(format!("beta must be positive, got {}", self.beta)));
                }
                if !(self.alpha >= 0.0) {
                    return Err(ModelError::Config(format!(
                        "alpha must be non-negative, got {}",
                        self.alpha
                    )));
                }
            }
            TemperatureVariant::PowTanh | TemperatureVariant::TanhShift => {
                if !(self.lambda > 1.0) {
                    return Err(ModelError::Config(format!(
                        "lambda must exceed 1 for {}, got {}",
                        self.variant.name(),
                        self.lambda
                    )));
                }
            }
        }
        Ok(())
    }

    /// Innermost representable values of the open range of the tanh-based
    /// variants, which saturating `tanh` would otherwise reach.
    pub fn open_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        (lo.next_up(), hi.next_down())
    }

    /// Closed range every temperature lies in.
    pub fn bounds(&self) -> (f64, f64) {
        match self.variant {
            TemperatureVariant::SoftmaxBounded => {
                (self.alpha / self.beta, (1.0 + self.alpha) / self.beta)
            }
            TemperatureVariant::PowTanh => (1.0 / self.lambda, self.lambda),
            TemperatureVariant::TanhShift => (self.lambda - 1.0, self.lambda + 1.0),
        }
    }
}

/// What divides the mixture logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureMode {
    /// Plain MoS: logits are used as is.
    None,
    /// Every logit divided by the same fixed scalar.
    Constant(f64),
    /// A learned per-position, per-token temperature vector.
    Contextual(TemperatureConfig),
}

impl TemperatureMode {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Self::None => Ok(()),
            Self::Constant(c) if *c > 0.0 && c.is_finite() => Ok(()),
            Self::Constant(c) => Err(ModelError::Config(format!("constant temperature {c} must be positive"))),
            Self::Contextual(t) => t.validate(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::None => "mos".into(),
            Self::Constant(c) => format!("mos(tau={c})"),
            Self::Contextual(t) => format!("ct-mos({})", t.variant.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mos: MoSConfig,
    pub temperature: TemperatureMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.mos.validate()?;
        self.temperature.validate()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        let m = &self.mos;
        kv.set("vocab_size", m.vocab_size);
        kv.set("embedding_dim", m.embedding_dim);
        kv.set("layers", join_list(&m.layer_sizes));
        kv.set("mixtures", m.mixtures);
        kv.set("dropout_input", m.dropout.input);
        kv.set("dropout_hidden", m.dropout.hidden);
        kv.set("dropout_output", m.dropout.output);
        match self.temperature {
            TemperatureMode::None => kv.set("temperature", "none"),
            TemperatureMode::Constant(c) => {
                kv.set("temperature", "constant");
                kv.set("tau", c);
            }
            TemperatureMode::Contextual(t) => {
                kv.set("temperature", "contextual");
                kv.set("alpha", t.alpha);
                kv.set("beta", t.beta);
                kv.set("variant", t.variant.name());
                kv.set("lambda", t.lambda);
                kv.set("rank", t.rank);
            }
        }
        kv
    }

    /// Reads the keys written by [`ModelConfig::to_kv`]; missing optional
    /// keys take desk-scale defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self, ModelError> {
        let e = |err: KvError| ModelError::Config(err.to_string());
        let vocab_size: usize = kv.require("vocab_size").map_err(e)?;
        let desk = MoSConfig::desk(vocab_size);
        let dropout = DropoutRates {
            input: kv.get_or("dropout_input", desk.dropout.input).map_err(e)?,
            hidden: kv.get_or("dropout_hidden", desk.dropout.hidden).map_err(e)?,
            output: kv.get_or("dropout_output", desk.dropout.output).map_err(e)?,
        };
        let embedding_dim = kv.get_or("embedding_dim", desk.embedding_dim).map_err(e)?;
        let mos = MoSConfig {
            vocab_size,
            embedding_dim,
            layer_sizes: kv.get_list("layers").map_err(e)?.unwrap_or(desk.layer_sizes),
            mixtures: kv.get_or("mixtures", desk.mixtures).map_err(e)?,
            dropout,
        };
        let temperature = match kv.get_str("temperature").unwrap_or("contextual") {
            "none" => TemperatureMode::None,
            "constant" => TemperatureMode::Constant(kv.require("tau").map_err(e)?),
            "contextual" => {
                let base = TemperatureConfig::bounded(embedding_dim);
                let variant = match kv.get_str("variant") {
                    None => base.variant,
                    Some(v) => TemperatureVariant::parse(v)
                        .ok_or_else(|| ModelError::Config(format!("unknown variant {v:?}")))?,
                };
                TemperatureMode::Contextual(TemperatureConfig {
                    alpha: kv.get_or("alpha", base.alpha).map_err(e)?,
                    beta: kv.get_or("beta", base.beta).map_err(e)?,
                    variant,
                    lambda: kv.get_or("lambda", base.lambda).map_err(e)?,
                    rank: kv.get_or("rank", base.rank).map_err(e)?,
                })
            }
            other => return Err(ModelError::Config(format!("unknown temperature mode {other:?}"))),
        };
        let config = Self { mos, temperature };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_per_variant() {
        let mut t = TemperatureConfig::bounded(4);
        assert_eq!(t.bounds(), (2.0, 4.0));
        t.variant = TemperatureVariant::PowTanh;
        assert_eq!(t.bounds(), (0.25, 4.0));
        t.variant = TemperatureVariant::TanhShift;
        t.lambda = 3.0;
        assert_eq!(t.bounds(), (2.0, 4.0));
    }

    #[test]
    fn kv_round_trip() {
        for temperature in [
            TemperatureMode::None,
            TemperatureMode::Constant(0.5),
            TemperatureMode::Contextual(TemperatureConfig {
                variant: TemperatureVariant::TanhShift,
                lambda: 3.0,
                ..TemperatureConfig::bounded(7)
            }),
        ] {
            let c = ModelConfig {
                mos: MoSConfig::desk(321),
                temperature,
            };
            assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut t = TemperatureConfig::bounded(4);
        t.beta = 0.0;
        assert!(t.validate().is_err());
        let mut t = TemperatureConfig::bounded(4);
        t.variant = TemperatureVariant::PowTanh;
        t.lambda = 1.0;
        assert!(t.validate().is_err());
        assert!(TemperatureMode::Constant(0.0).validate().is_err());
        let mut m = MoSConfig::desk(100);
        m.mixtures = 0;
        assert!(m.validate().is_err());
    }
}
