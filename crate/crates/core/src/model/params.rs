use rand::Rng;

use super::{ModelConfig, ModelError, TemperatureMode};
use crate::rng::{fnv1a_extend, stream};
use crate::tensor::Tensor;

/// One LSTM layer; gates are packed in the order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `[in, 4H]`
    pub input: Tensor,
    /// `[H, 4H]`
    pub recurrent: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

/// Factorized temperature projection `down * up`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureWeights {
    /// `[h, r]`
    pub down: Tensor,
    /// `[r, V]`
    pub up: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[V, d]`
    pub embedding: Tensor,
    pub layers: Vec<LstmWeights>,
    /// `[h, d]` projection of the backbone output feeding every component.
    pub latent: Tensor,
    /// `M` matrices of shape `[d, V]`.
    pub components: Vec<Tensor>,
    /// `[h, M]` mixture-weight projection.
    pub prior: Tensor,
    pub temperature: Option<TemperatureWeights>,
}

fn uniform(seed: u64, name: &str, shape: &[usize], bound: f64) -> Tensor {
    let mut rng = stream(seed, &format!("init/{name}"));
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.gen_range(-bound..=bound);
    }
    t
}

impl ModelParams {
    /// All-zero parameters with the shapes `config` declares.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, |_, shape, _| Tensor::zeros(shape))
    }

    /// Embeddings and output matrices uniform in `[-0.1, 0.1]`; recurrent and
    /// projection weights uniform in `±1/sqrt(fan)`. Each tensor draws from
    /// its own named stream, and values are rounded to `f32`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::build(config, |name, shape, bound| uniform(seed, name, shape, bound))?;
        p.round_to_f32();
        Ok(p)
    }

    fn build(
        config: &ModelConfig,
        mut make: impl FnMut(&str, &[usize], f64) -> Tensor,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let m = &config.mos;
        let (v, d, h) = (m.vocab_size, m.embedding_dim, m.hidden_size());
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let embedding = make("embedding", &[v, d], 0.1);
        let mut layers = Vec::with_capacity(m.layer_sizes.len());
        let mut input_size = d;
        for (l, &hs) in m.layer_sizes.iter().enumerate() {
            layers.push(LstmWeights {
                input: make(&format!("lstm.{l}.input"), &[input_size, 4 * hs], fan(hs)),
                recurrent: make(&format!("lstm.{l}.recurrent"), &[hs, 4 * hs], fan(hs)),
                bias: make(&format!("lstm.{l}.bias"), &[4 * hs], fan(hs)),
            });
            input_size = hs;
        }
        let latent = make("latent", &[h, d], fan(h));
        let components = (0..m.mixtures)
            .map(|i| make(&format!("component.{i}"), &[d, v], 0.1))
            .collect();
        let prior = make("prior", &[h, m.mixtures], fan(h));
        let temperature = match config.temperature {
            TemperatureMode::Contextual(t) => Some(TemperatureWeights {
                down: make("temperature.down", &[h, t.rank], fan(h)),
                up: make("temperature.up", &[t.rank, v], fan(t.rank)),
            }),
            _ => None,
        };
        Ok(Self {
            embedding,
            layers,
            latent,
            components,
            prior,
            temperature,
        })
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm.{l}.input"), &layer.input));
            out.push((format!("lstm.{l}.recurrent"), &layer.recurrent));
            out.push((format!("lstm.{l}.bias"), &layer.bias));
        }
        out.push(("latent".into(), &self.latent));
        for (i, c) in self.components.iter().enumerate() {
            out.push((format!("component.{i}"), c));
        }
        out.push(("prior".into(), &self.prior));
        if let Some(t) = &self.temperature {
            out.push(("temperature.down".into(), &t.down));
            out.push(("temperature.up".into(), &t.up));
        }
        out
    }

    /// Same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.input);
            out.push(&mut layer.recurrent);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.latent);
        out.extend(self.components.iter_mut());
        out.push(&mut self.prior);
        if let Some(t) = &mut self.temperature {
            out.push(&mut t.down);
            out.push(&mut t.up);
        }
        out
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sum_squares()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    /// FNV-1a over every value's bit pattern.
    pub fn digest(&self) -> u64 {
        let mut h = crate::rng::fnv1a(b"");
        for (name, t) in self.named() {
            h = fnv1a_extend(h, name.as_bytes());
            for x in t.data() {
                h = fnv1a_extend(h, &x.to_bits().to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MoSConfig, TemperatureConfig};

    fn config() -> ModelConfig {
        ModelConfig {
            mos: MoSConfig {
                vocab_size: 11,
                embedding_dim: 4,
                layer_sizes: vec![5, 3],
                mixtures: 2,
                dropout: crate::model::DropoutRates::NONE,
            },
            temperature: TemperatureMode::Contextual(TemperatureConfig::bounded(4)),
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = ModelParams::init(&config(), 9).unwrap();
        let b = ModelParams::init(&config(), 9).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a, b);
        assert_ne!(a.digest(), ModelParams::init(&config(), 10).unwrap().digest());
    }

    #[test]
    fn shapes_match_config() {
        let p = ModelParams::init(&config(), 1).unwrap();
        let shapes: Vec<(String, Vec<usize>)> =
            p.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let expected = [
            ("embedding", vec![11, 4]),
            ("lstm.0.input", vec![4, 20]),
            ("lstm.0.recurrent", vec![5, 20]),
            ("lstm.0.bias", vec![20]),
            ("lstm.1.input", vec![5, 12]),
            ("lstm.1.recurrent", vec![3, 12]),
            ("lstm.1.bias", vec![12]),
            ("latent", vec![3, 4]),
            ("component.0", vec![4, 11]),
            ("component.1", vec![4, 11]),
            ("prior", vec![3, 2]),
            ("temperature.down", vec![3, 4]),
            ("temperature.up", vec![4, 11]),
        ];
        assert_eq!(shapes.len(), expected.len());
        for ((n, s), (en, es)) in shapes.iter().zip(expected) {
            assert_eq!((n.as_str(), s), (en, &es));
        }
        let emb = p.embedding.data();
        assert!(emb.iter().all(|x| x.abs() <= 0.1));
        assert!(p.named().iter().all(|(_, t)| t.data().iter().all(|&x| x == x as f32 as f64)));
    }

    #[test]
    fn plain_mos_has_no_temperature_weights() {
        let mut c = config();
        c.temperature = TemperatureMode::None;
        let mut p = ModelParams::init(&c, 1).unwrap();
        assert!(p.temperature.is_none());
        assert_eq!(p.named().len(), 11);
        assert_eq!(p.tensors_mut().len(), 11);
    }
}
