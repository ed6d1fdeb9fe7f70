//! Regularized training objective: loss-scaled cross-entropy plus
//! activation, temporal-activation and weight penalties.

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::model::{ForwardPass, ModelConfig, TemperatureMode};
use crate::tensor::Tensor;

/// Floor applied inside the logarithm of the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub activation: f64,
    pub temporal: f64,
    pub weight_decay: f64,
    /// Multiply the cross-entropy by the mean temperature.
    pub ls_enabled: bool,
    /// Treat that factor as a constant for differentiation.
    pub ls_detached: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            activation: 2.0,
            temporal: 1.0,
            weight_decay: 1.2e-6,
            ls_enabled: true,
            ls_detached: true,
        }
    }
}

impl LossWeights {
    /// Cross-entropy alone.
    pub const CE_ONLY: Self = Self {
        activation: 0.0,
        temporal: 0.0,
        weight_decay: 0.0,
        ls_enabled: false,
        ls_detached: true,
    };

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("activation", self.activation),
            ("temporal", self.temporal),
            ("weight decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} coefficient must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub ls_factor: f64,
    pub ar: f64,
    pub tar: f64,
    pub wd: f64,
    /// Targets whose probability hit the log floor.
    pub floor_hits: usize,
}

impl LossBreakdown {
    /// `ls_factor * ce + weighted penalties`, recomputed from the parts.
    pub fn assembled(&self, w: &LossWeights) -> f64 {
        self.ls_factor * self.ce + w.activation * self.ar + w.temporal * self.tar + w.weight_decay * self.wd
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub ce: NodeId,
    pub ls_factor: NodeId,
    pub ar: NodeId,
    pub tar: NodeId,
    pub wd: NodeId,
}

/// Where the loss-scaling factor comes from.
#[derive(Debug, Clone, Copy)]
pub enum ScaleSource {
    /// Mean of a `[N, V]` temperature node.
    Temperature(NodeId),
    /// A fixed value, e.g. a constant temperature or `1` for plain MoS.
    Fixed(f64),
}

/// Graph handles the objective reads.
#[derive(Debug, Clone)]
pub struct LossInputs {
    /// `[N, V]` next-token distribution.
    pub probs: NodeId,
    pub scale: ScaleSource,
    /// Final-layer outputs `[T * B, h]`, time-major, without dropout.
    pub outputs: NodeId,
    /// The same outputs after the output mask.
    pub dropped: NodeId,
    pub batch_size: usize,
    pub params: Vec<NodeId>,
}

impl LossInputs {
    pub fn from_forward(pass: &ForwardPass, config: &ModelConfig, batch_size: usize) -> Self {
        let scale = match (pass.head.temperature, config.temperature) {
            (Some(t), _) => ScaleSource::Temperature(t),
            (None, TemperatureMode::Constant(c)) => ScaleSource::Fixed(c),
            _ => ScaleSource::Fixed(1.0),
        };
        Self {
            probs: pass.head.probs,
            scale,
            outputs: pass.backbone.outputs,
            dropped: pass.backbone.dropped,
            batch_size,
            params: pass.nodes.all(),
        }
    }
}

/// Mean of `-ln max(P[i, targets[i]], floor)` over rows.
pub fn cross_entropy(graph: &mut Graph, probs: NodeId, targets: &[usize]) -> Result<NodeId, GraphError> {
    let picked = graph.pick(probs, targets)?;
    let logp = graph.ln_floor(picked, LOG_FLOOR);
    let mean = graph.mean(logp);
    Ok(graph.scale(mean, -1.0))
}

/// Graph-free cross-entropy: `(mean nll, floor hits)`.
pub fn cross_entropy_value(probs: &Tensor, targets: &[usize]) -> Result<(f64, usize), GraphError> {
    let (n, k) = probs.dims2()?;
    if targets.len() != n || targets.iter().any(|&t| t >= k) {
        return Err(GraphError::Shape(format!("{} targets for [{n}, {k}]", targets.len())));
    }
    let (nll, hits) = nll_sum(probs, targets);
    Ok((nll / n as f64, hits))
}

/// Summed negative log-likelihood of `targets` and the number of floored
/// entries; shapes are assumed consistent.
pub(crate) fn nll_sum(probs: &Tensor, targets: &[usize]) -> (f64, usize) {
    let k = probs.shape()[probs.rank() - 1];
    let mut hits = 0;
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let p = probs.data()[i * k + t];
        if !(p > LOG_FLOOR) {
            hits += 1;
        }
        total -= p.max(LOG_FLOOR).ln();
    }
    (total, hits)
}

fn mean_square(graph: &mut Graph, x: NodeId) -> Result<NodeId, GraphError> {
    let sq = graph.mul(x, x)?;
    Ok(graph.mean(sq))
}

/// Builds the full objective and reads off its parts.
pub fn total_loss(
    graph: &mut Graph,
    inputs: &LossInputs,
    targets: &[usize],
    weights: &LossWeights,
) -> Result<(LossNodes, LossBreakdown), GraphError> {
    weights.validate().map_err(GraphError::Contract)?;
    let hits_before = graph.floor_hits();
    let ce = cross_entropy(graph, inputs.probs, targets)?;
    let floor_hits = graph.floor_hits() - hits_before;

    let ls_factor = match (weights.ls_enabled, inputs.scale) {
        (false, _) => graph.constant(Tensor::scalar(1.0)),
        (true, ScaleSource::Fixed(c)) => graph.constant(Tensor::scalar(c)),
        (true, ScaleSource::Temperature(t)) => {
            let m = graph.mean(t);
            if weights.ls_detached {
                graph.detach(m)
            } else {
                m
            }
        }
    };

    let ar = mean_square(graph, inputs.dropped)?;

    let (rows, _) = graph.value(inputs.outputs).dims2()?;
    let b = inputs.batch_size;
    if b == 0 || rows % b != 0 {
        return Err(GraphError::Contract(format!("{rows} output rows for batch size {b}")));
    }
    let tar = if rows > b {
        let later = graph.slice_rows(inputs.outputs, b, rows)?;
        let earlier = graph.slice_rows(inputs.outputs, 0, rows - b)?;
        let diff = graph.sub(later, earlier)?;
        mean_square(graph, diff)?
    } else {
        graph.constant(Tensor::scalar(0.0))
    };

    let mut wd: Option<NodeId> = None;
    for &p in &inputs.params {
        let sq = graph.mul(p, p)?;
        let s = graph.sum(sq);
        wd = Some(match wd {
            None => s,
            Some(acc) => graph.add(acc, s)?,
        });
    }
    let wd = wd.unwrap_or_else(|| graph.constant(Tensor::scalar(0.0)));

    let scaled = graph.mul(ls_factor, ce)?;
    let war = graph.scale(ar, weights.activation);
    let wtar = graph.scale(tar, weights.temporal);
    let wwd = graph.scale(wd, weights.weight_decay);
    let total = graph.add(scaled, war)?;
    let total = graph.add(total, wtar)?;
    let total = graph.add(total, wwd)?;

    let v = |id: NodeId| graph.value(id).item();
    let breakdown = LossBreakdown {
        total: v(total),
        ce: v(ce),
        ls_factor: v(ls_factor),
        ar: v(ar),
        tar: v(tar),
        wd: v(wd),
        floor_hits,
    };
    Ok((
        LossNodes {
            total,
            ce,
            ls_factor,
            ar,
            tar,
            wd,
        },
        breakdown,
    ))
}
