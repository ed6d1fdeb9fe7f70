use rand::Rng;

use super::{ModelConfig, ModelError, ModelParams, MoSConfig, TemperatureMode, TemperatureVariant};
use crate::autodiff::{Graph, GraphError, NodeId};
use crate::corpus::CorpusBatch;
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Hidden and cell state of every layer, each `[batch, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl RecurrentState {
    pub fn zeros(config: &MoSConfig, batch_size: usize) -> Self {
        Self {
            layers: config
                .layer_sizes
                .iter()
                .map(|&h| (Tensor::zeros(&[batch_size, h]), Tensor::zeros(&[batch_size, h])))
                .collect(),
        }
    }

    fn check(&self, config: &MoSConfig, batch_size: usize) -> Result<(), GraphError> {
        let ok = self.layers.len() == config.layer_sizes.len()
            && self.layers.iter().zip(&config.layer_sizes).all(|((h, c), &n)| {
                h.shape() == [batch_size, n] && c.shape() == [batch_size, n]
            });
        if ok {
            Ok(())
        } else {
            Err(GraphError::Contract(format!(
                "recurrent state does not match layers {:?} at batch size {batch_size}",
                config.layer_sizes
            )))
        }
    }
}

/// Locked dropout masks: one `[batch, k]` mask per site, reused at every
/// timestep. Kept entries hold `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub input: Option<Tensor>,
    /// Between layer `l` and `l + 1`.
    pub between: Vec<Option<Tensor>>,
    pub output: Option<Tensor>,
}

fn bernoulli_mask(rng: &mut StreamRng, p: f64, rows: usize, cols: usize) -> Option<Tensor> {
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mut t = Tensor::zeros(&[rows, cols]);
    for x in t.data_mut() {
        *x = if rng.gen::<f64>() < p { 0.0 } else { keep };
    }
    Some(t)
}

impl DropoutMasks {
    pub fn none(config: &MoSConfig) -> Self {
        Self {
            input: None,
            between: vec![None; config.layer_sizes.len() - 1],
            output: None,
        }
    }

    pub fn sample(config: &MoSConfig, batch_size: usize, rng: &mut StreamRng) -> Self {
        let r = config.dropout;
        let input = bernoulli_mask(rng, r.input, batch_size, config.embedding_dim);
        let between = config.layer_sizes[..config.layer_sizes.len() - 1]
            .iter()
            .map(|&h| bernoulli_mask(rng, r.hidden, batch_size, h))
            .collect();
        let output = bernoulli_mask(rng, r.output, batch_size, config.hidden_size());
        Self {
            input,
            between,
            output,
        }
    }
}

/// Graph handles for every parameter tensor, mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub embedding: NodeId,
    /// `(input, recurrent, bias)` per layer.
    pub layers: Vec<(NodeId, NodeId, NodeId)>,
    pub latent: NodeId,
    pub components: Vec<NodeId>,
    pub prior: NodeId,
    pub temperature: Option<(NodeId, NodeId)>,
}

impl ParamNodes {
    /// Adds every tensor as a leaf; gradient-receiving when `trainable`.
    pub fn register(graph: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        Self {
            embedding: leaf(&params.embedding),
            layers: params
                .layers
                .iter()
                .map(|l| (leaf(&l.input), leaf(&l.recurrent), leaf(&l.bias)))
                .collect(),
            latent: leaf(&params.latent),
            components: params.components.iter().map(&mut leaf).collect(),
            prior: leaf(&params.prior),
            temperature: params.temperature.as_ref().map(|t| (leaf(&t.down), leaf(&t.up))),
        }
    }

    /// Same order as [`ModelParams::named`].
    pub fn all(&self) -> Vec<NodeId> {
        let mut out = vec![self.embedding];
        for &(a, b, c) in &self.layers {
            out.extend([a, b, c]);
        }
        out.push(self.latent);
        out.extend(&self.components);
        out.push(self.prior);
        if let Some((a, b)) = self.temperature {
            out.extend([a, b]);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    /// Final-layer outputs `[T * B, h]`, time-major, before output dropout.
    pub outputs: NodeId,
    /// The same outputs with the output mask applied.
    pub dropped: NodeId,
    pub state: RecurrentState,
}

fn tile_rows(mask: &Tensor, times: usize) -> Tensor {
    let (r, c) = mask.dims2().expect("mask is a matrix");
    let mut data = Vec::with_capacity(r * c * times);
    for _ in 0..times {
        data.extend_from_slice(mask.data());
    }
    Tensor::matrix(r * times, c, data).expect("consistent tiling")
}

fn apply_mask(
    graph: &mut Graph,
    x: NodeId,
    mask: Option<&Tensor>,
    times: usize,
) -> Result<NodeId, GraphError> {
    match mask {
        None => Ok(x),
        Some(m) => {
            let m = graph.constant(tile_rows(m, times));
            graph.mul(x, m)
        }
    }
}

/// Runs the embedding and the stacked LSTM over one batch.
pub fn forward_backbone(
    graph: &mut Graph,
    nodes: &ParamNodes,
    config: &MoSConfig,
    batch: &CorpusBatch,
    state: &RecurrentState,
    masks: &DropoutMasks,
) -> Result<BackboneOutput, ModelError> {
    let (b, steps) = (batch.batch_size, batch.bptt);
    state.check(config, b)?;
    if masks.between.len() + 1 != config.layer_sizes.len() {
        return Err(GraphError::Contract("dropout masks do not match layers".into()).into());
    }
    let time_major: Vec<usize> = (0..steps).flat_map(|t| batch.inputs_at(t)).collect();
    let emb = graph.gather_rows(nodes.embedding, &time_major)?;
    let mut layer_input = apply_mask(graph, emb, masks.input.as_ref(), steps)?;

    let mut new_state = Vec::with_capacity(config.layer_sizes.len());
    for (l, &hs) in config.layer_sizes.iter().enumerate() {
        let (w_in, w_rec, bias) = nodes.layers[l];
        let projected = graph.matmul(layer_input, w_in)?;
        let projected = graph.add_row(projected, bias)?;
        let (h0, c0) = &state.layers[l];
        let mut h = graph.constant(h0.clone());
        let mut c = graph.constant(c0.clone());
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = graph.slice_rows(projected, t * b, (t + 1) * b)?;
            let r = graph.matmul(h, w_rec)?;
            let gates = graph.add(x, r)?;
            let i = graph.slice_cols(gates, 0, hs)?;
            let i = graph.sigmoid(i);
            let f = graph.slice_cols(gates, hs, 2 * hs)?;
            let f = graph.sigmoid(f);
            let g = graph.slice_cols(gates, 2 * hs, 3 * hs)?;
            let g = graph.tanh(g);
            let o = graph.slice_cols(gates, 3 * hs, 4 * hs)?;
            let o = graph.sigmoid(o);
            let fc = graph.mul(f, c)?;
            let ig = graph.mul(i, g)?;
            c = graph.add(fc, ig)?;
            let tc = graph.tanh(c);
            h = graph.mul(o, tc)?;
            outputs.push(h);
        }
        new_state.push((graph.value(h).clone(), graph.value(c).clone()));
        let stacked = graph.concat_rows(&outputs)?;
        layer_input = match masks.between.get(l) {
            Some(m) => apply_mask(graph, stacked, m.as_ref(), steps)?,
            None => stacked,
        };
    }
    let outputs = layer_input;
    let dropped = apply_mask(graph, outputs, masks.output.as_ref(), steps)?;
    Ok(BackboneOutput {
        outputs,
        dropped,
        state: RecurrentState { layers: new_state },
    })
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// Next-token distribution `[N, V]`.
    pub probs: NodeId,
    /// Mixture weights `[N, M]`.
    pub prior: NodeId,
    /// Per-position temperatures `[N, V]` for a contextual head.
    pub temperature: Option<NodeId>,
}

/// Mixture head on backbone outputs `hidden` (`[N, h]`).
pub fn output_distribution(
    graph: &mut Graph,
    nodes: &ParamNodes,
    config: &ModelConfig,
    hidden: NodeId,
) -> Result<HeadOutput, ModelError> {
    let latent = graph.matmul(hidden, nodes.latent)?;
    let prior_logits = graph.matmul(hidden, nodes.prior)?;
    let prior = graph.softmax(prior_logits, 1)?;

    let temperature = match config.temperature {
        TemperatureMode::Contextual(tc) => {
            let (down, up) = nodes
                .temperature
                .ok_or_else(|| ModelError::Config("contextual mode without temperature weights".into()))?;
            let r = graph.matmul(hidden, down)?;
            let mu = graph.matmul(r, up)?;
            Some(match tc.variant {
                TemperatureVariant::SoftmaxBounded => {
                    let s = graph.softmax(mu, 1)?;
                    let s = graph.add_scalar(s, tc.alpha);
                    graph.div_scalar(s, tc.beta)
                }
                TemperatureVariant::PowTanh => {
                    let t = graph.tanh(mu);
                    let t = graph.scale(t, tc.lambda.ln());
                    let t = graph.exp(t);
                    let (lo, hi) = tc.open_bounds();
                    graph.clamp(t, lo, hi)
                }
                TemperatureVariant::TanhShift => {
                    let t = graph.tanh(mu);
                    let t = graph.add_scalar(t, tc.lambda);
                    let (lo, hi) = tc.open_bounds();
                    graph.clamp(t, lo, hi)
                }
            })
        }
        _ => None,
    };

    let mut probs: Option<NodeId> = None;
    for (m, &w) in nodes.components.iter().enumerate() {
        let z = graph.matmul(latent, w)?;
        let u = match (config.temperature, temperature) {
            (_, Some(tau)) => graph.div(z, tau)?,
            (TemperatureMode::Constant(c), None) => graph.div_scalar(z, c),
            _ => z,
        };
        let s = graph.softmax(u, 1)?;
        let weight = graph.slice_cols(prior, m, m + 1)?;
        let weighted = graph.scale_rows(s, weight)?;
        probs = Some(match probs {
            None => weighted,
            Some(acc) => graph.add(acc, weighted)?,
        });
    }
    Ok(HeadOutput {
        probs: probs.expect("at least one component"),
        prior,
        temperature,
    })
}

/// Everything one forward pass over a batch produces.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub nodes: ParamNodes,
    pub backbone: BackboneOutput,
    pub head: HeadOutput,
}

/// Registers `params`, runs the backbone and the output head on the
/// dropped-out backbone outputs.
pub fn forward(
    graph: &mut Graph,
    params: &ModelParams,
    config: &ModelConfig,
    batch: &CorpusBatch,
    state: &RecurrentState,
    masks: &DropoutMasks,
    trainable: bool,
) -> Result<ForwardPass, ModelError> {
    let nodes = ParamNodes::register(graph, params, trainable);
    let backbone = forward_backbone(graph, &nodes, &config.mos, batch, state, masks)?;
    let head = output_distribution(graph, &nodes, config, backbone.dropped)?;
    Ok(ForwardPass {
        nodes,
        backbone,
        head,
    })
}
