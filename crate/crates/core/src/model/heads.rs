//! Output layer for a single position, evaluated directly on slices.

use super::{ModelError, ModelParams, TemperatureConfig, TemperatureVariant};
use crate::autodiff::GraphError;
use crate::tensor::Tensor;

/// Component logits and mixture weights for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLogits {
    /// `M` vectors of length `V`.
    pub logits: Vec<Vec<f64>>,
    /// Non-negative, sums to one.
    pub weights: Vec<f64>,
}

/// `x * W` for a row vector `x` and a `[rows, cols]` matrix.
fn vec_mat(x: &[f64], w: &Tensor, what: &str) -> Result<Vec<f64>, GraphError> {
    let (rows, cols) = w.dims2()?;
    if x.len() != rows {
        return Err(GraphError::Shape(format!(
            "{what}: vector of {} against [{rows}, {cols}]",
            x.len()
        )));
    }
    let mut out = vec![0.0; cols];
    for (r, &xr) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(r)) {
            *o += xr * wv;
        }
    }
    Ok(out)
}

pub(crate) fn softmax_vec(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn mos_head(hidden: &[f64], params: &ModelParams) -> Result<MixtureLogits, ModelError> {
    let latent = vec_mat(hidden, &params.latent, "latent")?;
    let logits = params
        .components
        .iter()
        .map(|w| vec_mat(&latent, w, "component"))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = softmax_vec(&vec_mat(hidden, &params.prior, "prior")?);
    Ok(MixtureLogits { logits, weights })
}

/// Applies the squashing of `config.variant` to temperature logits.
pub fn squash_temperature(mu: &[f64], config: &TemperatureConfig) -> Vec<f64> {
    match config.variant {
        TemperatureVariant::SoftmaxBounded => softmax_vec(mu)
            .into_iter()
            .map(|s| (s + config.alpha) / config.beta)
            .collect(),
        TemperatureVariant::PowTanh => {
            let ln = config.lambda.ln();
            let (lo, hi) = config.open_bounds();
            mu.iter().map(|m| (m.tanh() * ln).exp().clamp(lo, hi)).collect()
        }
        TemperatureVariant::TanhShift => {
            let (lo, hi) = config.open_bounds();
            mu.iter().map(|m| (m.tanh() + config.lambda).clamp(lo, hi)).collect()
        }
    }
}

/// Temperature logits `hidden * down * up`.
pub fn temperature_logits(hidden: &[f64], params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    let t = params
        .temperature
        .as_ref()
        .ok_or_else(|| ModelError::Config("model has no temperature head".into()))?;
    Ok(vec_mat(&vec_mat(hidden, &t.down, "temperature")?, &t.up, "temperature")?)
}

/// Bounded temperature `(softmax(mu) + alpha) / beta` for one position.
pub fn contextual_temperature(
    hidden: &[f64],
    params: &ModelParams,
    config: &TemperatureConfig,
) -> Result<Vec<f64>, ModelError> {
    if config.variant != TemperatureVariant::SoftmaxBounded {
        return Err(ModelError::Config(format!(
            "contextual temperature uses the softmax-bounded form, got {}",
            config.variant.name()
        )));
    }
    config.validate()?;
    Ok(squash_temperature(&temperature_logits(hidden, params)?, config))
}

/// `sum_m weights[m] * softmax(logits[m] / tau)`.
pub fn ct_mos_distribution(
    logits: &[Vec<f64>],
    weights: &[f64],
    tau: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if let Some((i, t)) = tau.iter().enumerate().find(|(_, t)| !(**t > 0.0)) {
        return Err(GraphError::Contract(format!("temperature {t} at index {i} is not positive")).into());
    }
    mix(logits, weights, Some(tau))
}

/// Plain mixture of softmaxes.
pub fn mos_distribution(logits: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>, ModelError> {
    mix(logits, weights, None)
}

fn mix(logits: &[Vec<f64>], weights: &[f64], tau: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
    let v = logits.first().map(Vec::len).unwrap_or(0);
    if logits.len() != weights.len()
        || v == 0
        || logits.iter().any(|z| z.len() != v)
        || tau.is_some_and(|t| t.len() != v)
    {
        return Err(GraphError::Shape(format!(
            "{} components for {} weights, vocabulary {v}",
            logits.len(),
            weights.len()
        ))
        .into());
    }
    let mut out = vec![0.0; v];
    for (z, &w) in logits.iter().zip(weights) {
        let scaled: Vec<f64> = match tau {
            Some(t) => z.iter().zip(t).map(|(z, t)| z / t).collect(),
            None => z.clone(),
        };
        for (o, s) in out.iter_mut().zip(softmax_vec(&scaled)) {
            *o += s * w;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DropoutRates, ModelConfig, MoSConfig, TemperatureMode};
    use proptest::prelude::*;

    fn model(mixtures: usize, vocab: usize) -> ModelParams {
        let config = ModelConfig {
            mos: MoSConfig {
                vocab_size: vocab,
                embedding_dim: 3,
                layer_sizes: vec![4],
                mixtures,
                dropout: DropoutRates::NONE,
            },
            temperature: TemperatureMode::Contextual(TemperatureConfig::bounded(3)),
        };
        ModelParams::init(&config, 5).unwrap()
    }

    const H: [f64; 4] = [0.7, -1.3, 0.2, 2.1];

    #[test]
    fn single_component_weight_is_one() {
        let m = mos_head(&H, &model(1, 6)).unwrap();
        assert_eq!(m.weights, vec![1.0]);
        assert_eq!(m.logits.len(), 1);
    }

    #[test]
    fn zero_prior_is_uniform() {
        let mut p = model(4, 6);
        p.prior = Tensor::zeros(p.prior.shape());
        let m = mos_head(&H, &p).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.25));
    }

    #[test]
    fn mixture_is_normalized() {
        let p = model(3, 9);
        let m = mos_head(&H, &p).unwrap();
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let probs = mos_distribution(&m.logits, &m.weights).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hidden_size_mismatch_is_shape_error() {
        let p = model(2, 5);
        assert!(matches!(
            mos_head(&[1.0, 2.0], &p),
            Err(ModelError::Graph(GraphError::Shape(_)))
        ));
    }

    #[test]
    fn zero_projection_gives_uniform_temperature() {
        let mut p = model(2, 10);
        let t = p.temperature.as_mut().unwrap();
        t.up = Tensor::zeros(t.up.shape());
        let tau = contextual_temperature(&H, &p, &TemperatureConfig::bounded(3)).unwrap();
        for x in tau {
            assert!((x - (0.1 + 1.0) / 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn near_uniform_at_ten_thousand_tokens() {
        let mu = vec![0.0; 10_000];
        let tau = squash_temperature(&mu, &TemperatureConfig::bounded(1));
        assert!((tau[0] - (2.0 + 2e-4)).abs() < 1e-12);
        let mut mu = vec![0.0; 10_000];
        mu[7] = -0.876;
        let tau = squash_temperature(&mu, &TemperatureConfig::bounded(1));
        assert!((tau[7] - (2.0 + 8.34e-5)).abs() < 1e-6, "{}", tau[7]);
    }

    #[test]
    fn bad_beta_or_variant_is_config_error() {
        let p = model(2, 5);
        let mut c = TemperatureConfig::bounded(3);
        c.beta = 0.0;
        assert!(matches!(contextual_temperature(&H, &p, &c), Err(ModelError::Config(_))));
        let mut c = TemperatureConfig::bounded(3);
        c.variant = TemperatureVariant::PowTanh;
        assert!(matches!(contextual_temperature(&H, &p, &c), Err(ModelError::Config(_))));
    }

    #[test]
    fn identity_temperature_single_component() {
        let z = vec![vec![0.3, -1.0, 2.5, 0.0]];
        let p = ct_mos_distribution(&z, &[1.0], &[1.0; 4]).unwrap();
        assert_eq!(p, softmax_vec(&z[0]));
    }

    #[test]
    fn constant_temperature_is_scaled_logits() {
        let z = vec![vec![0.3, -1.0, 2.5], vec![1.0, 0.5, -0.5]];
        let w = [0.4, 0.6];
        let c = 3.0;
        let scaled: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|x| x / c).collect()).collect();
        assert_eq!(
            ct_mos_distribution(&z, &w, &[c; 3]).unwrap(),
            mos_distribution(&scaled, &w).unwrap()
        );
    }

    #[test]
    fn non_positive_temperature_is_contract_error() {
        let z = vec![vec![0.3, -1.0]];
        assert!(matches!(
            ct_mos_distribution(&z, &[1.0], &[1.0, 0.0]),
            Err(ModelError::Graph(GraphError::Contract(_)))
        ));
    }

    /// Straight-line evaluation of a two-component, five-token instance,
    /// summed with compensated arithmetic.
    #[test]
    fn matches_straight_line_oracle() {
        let z: [[f64; 5]; 2] = [
            [0.5, -1.25, 2.0, 0.0, 0.75],
            [-0.3, 0.9, 1.1, -2.2, 0.05],
        ];
        let pi = [0.35, 0.65];
        let tau = [2.1, 3.7, 2.5, 3.99, 2.0];
        let mut expected = [0.0f64; 5];
        for m in 0..2 {
            let e: Vec<f64> = (0..5).map(|i| (z[m][i] / tau[i]).exp()).collect();
            let mut s = 0.0;
            let mut comp = 0.0;
            for x in &e {
                let y = x - comp;
                let t = s + y;
                comp = (t - s) - y;
                s = t;
            }
            for i in 0..5 {
                expected[i] += pi[m] * e[i] / s;
            }
        }
        let got = ct_mos_distribution(&z.map(|r| r.to_vec()), &pi, &tau).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-15, "{g} vs {e}");
        }
    }

    proptest! {
        #[test]
        fn temperature_bounds_survive_extreme_inputs(
            mu in proptest::collection::vec(-1e300f64..1e300, 1..40),
        ) {
            let c = TemperatureConfig::bounded(1);
            let tau = squash_temperature(&mu, &c);
            let (lo, hi) = c.bounds();
            let sum: f64 = tau.iter().sum();
            prop_assert!(tau.iter().all(|&t| t >= lo && t <= hi));
            prop_assert!((sum - (1.0 + mu.len() as f64 * c.alpha) / c.beta).abs() < 1e-9);
        }

        #[test]
        fn ablation_variants_stay_in_range(mu in proptest::collection::vec(-1e300f64..1e300, 1..20)) {
            for (variant, lambda) in [(TemperatureVariant::PowTanh, 4.0), (TemperatureVariant::TanhShift, 3.0)] {
                let mut c = TemperatureConfig::bounded(1);
                c.variant = variant;
                c.lambda = lambda;
                let (lo, hi) = c.bounds();
                for t in squash_temperature(&mu, &c) {
                    prop_assert!(t > lo && t < hi);
                }
            }
        }

        #[test]
        fn ct_mos_is_a_distribution(
            z in proptest::collection::vec(proptest::collection::vec(-30f64..30.0, 6), 1..4),
            raw_w in proptest::collection::vec(0.01f64..1.0, 4),
            tau in proptest::collection::vec(0.05f64..10.0, 6),
        ) {
            let w: Vec<f64> = raw_w[..z.len()].to_vec();
            let s: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / s).collect();
            let p = ct_mos_distribution(&z, &w, &tau).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
