//! Block-partitioned feedforward Q-network.
//!
//! Every layer's weight matrix is split into agent-indexed blocks: block
//! `(r, c)` connects agent `c`'s input partition to agent `r`'s output
//! partition, and biases belong to the diagonal by construction. The final
//! layer has one 3-action head per agent, and the joint Q-value of a joint
//! action is the sum of the per-agent head values, so the joint argmax
//! factorizes into per-head argmaxes.
//!
//! Updates are plain gradient descent on the per-head squared TD errors; a
//! diagonal mask freezes the off-diagonal blocks, which is what decouples
//! the agents when no spill-back links their dynamics.

pub mod replay;

use crate::ExecMode;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Number of fixed accumulation chunks for batch gradients. Chunk
/// boundaries never depend on the thread count, so sequential and parallel
/// execution produce bit-identical sums.
const GRADIENT_CHUNKS: usize = 8;

#[derive(Debug, Error)]
pub enum QError {
    #[error("observation length {got} does not match network input {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Codec(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// out += self * x
    fn matvec_accum(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, out_r) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            *out_r += acc;
        }
    }

    /// out += self^T * g
    fn matvec_transpose_accum(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &gv) in g.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gv;
            }
        }
    }

    /// self += g ⊗ x (outer product accumulate)
    fn outer_accum(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &gv) in g.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += gv * xv;
            }
        }
    }
}

/// Which blocks a gradient step may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMask {
    /// Every block.
    Full,
    /// Only the diagonal blocks; biases are diagonal by construction and
    /// are always updated.
    Diagonal,
}

/// One layer: blocks in row-major agent order plus a full bias vector whose
/// partition follows `out_parts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayer {
    pub in_parts: Vec<usize>,
    pub out_parts: Vec<usize>,
    /// `blocks[r * in_parts.len() + c]` maps input partition c to output
    /// partition r.
    pub blocks: Vec<Mat>,
    pub bias: Vec<f64>,
}

impl BlockLayer {
    fn zeros(in_parts: &[usize], out_parts: &[usize]) -> Self {
        let blocks = out_parts
            .iter()
            .flat_map(|&o| in_parts.iter().map(move |&i| Mat::zeros(o, i)))
            .collect();
        Self {
            in_parts: in_parts.to_vec(),
            out_parts: out_parts.to_vec(),
            blocks,
            bias: vec![0.0; out_parts.iter().sum()],
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_parts.iter().sum()
    }

    pub fn out_len(&self) -> usize {
        self.out_parts.iter().sum()
    }

    pub fn block(&self, r: usize, c: usize) -> &Mat {
        &self.blocks[r * self.in_parts.len() + c]
    }

    fn block_mut(&mut self, r: usize, c: usize) -> &mut Mat {
        &mut self.blocks[r * self.in_parts.len() + c]
    }

    pub(crate) fn offsets(parts: &[usize]) -> Vec<usize> {
        let mut offs = Vec::with_capacity(parts.len() + 1);
        offs.push(0);
        for &p in parts {
            offs.push(offs.last().unwrap() + p);
        }
        offs
    }

    /// z = W x + b, block by block in fixed order.
    fn affine(&self, x: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.bias);
        let in_offs = Self::offsets(&self.in_parts);
        let out_offs = Self::offsets(&self.out_parts);
        for r in 0..self.out_parts.len() {
            for c in 0..self.in_parts.len() {
                self.block(r, c).matvec_accum(
                    &x[in_offs[c]..in_offs[c + 1]],
                    &mut z[out_offs[r]..out_offs[r + 1]],
                );
            }
        }
    }
}

/// Weights and biases of the whole network. Hidden layers use a rectifier,
/// the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub layers: Vec<BlockLayer>,
}

/// Forward values kept around for backpropagation. `post[0]` is the input;
/// `post[l + 1]` is layer `l`'s activation output.
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

impl BlockParams {
    /// A network of zeros with the given per-agent layer sizing.
    ///
    /// `input_parts` are the per-agent observation lengths; each of the
    /// `hidden_layers` hidden layers gets `hidden_per_agent` units per agent
    /// and the output layer gets `actions_per_agent` units per agent.
    pub fn zeros(
        input_parts: &[usize],
        hidden_layers: usize,
        hidden_per_agent: usize,
        actions_per_agent: usize,
    ) -> Self {
        let n = input_parts.len();
        let hidden = vec![hidden_per_agent; n];
        let out = vec![actions_per_agent; n];
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut prev: Vec<usize> = input_parts.to_vec();
        for _ in 0..hidden_layers {
            layers.push(BlockLayer::zeros(&prev, &hidden));
            prev = hidden.clone();
        }
        layers.push(BlockLayer::zeros(&prev, &out));
        Self { layers }
    }

    /// Glorot-uniform initialization, block by block: entries drawn from
    /// ±sqrt(6 / (fan_in + fan_out)) with the block's own fan sizes. Draw
    /// order is fixed (layers, then row-major blocks) so runs are
    /// reproducible per seed.
    pub fn init_glorot<R: Rng>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            let n_in = layer.in_parts.len();
            for r in 0..layer.out_parts.len() {
                for c in 0..n_in {
                    let fan_in = layer.in_parts[c];
                    let fan_out = layer.out_parts[r];
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for w in &mut layer.block_mut(r, c).data {
                        *w = rng.gen_range(-bound..bound);
                    }
                }
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Zeroes every off-diagonal block; used for structurally independent
    /// per-agent learners.
    pub fn zero_off_diagonal(&mut self) {
        for layer in &mut self.layers {
            let n_in = layer.in_parts.len();
            for r in 0..layer.out_parts.len() {
                for c in 0..n_in {
                    if r != c {
                        layer.block_mut(r, c).data.iter_mut().for_each(|w| *w = 0.0);
                    }
                }
            }
        }
    }

    pub fn n_agents(&self) -> usize {
        self.layers.last().unwrap().out_parts.len()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].in_len()
    }

    pub fn actions_per_agent(&self) -> usize {
        self.layers.last().unwrap().out_parts[0]
    }

    /// Offsets of the per-agent heads inside the output vector.
    pub fn head_offsets(&self) -> Vec<usize> {
        BlockLayer::offsets(&self.layers.last().unwrap().out_parts)
    }

    pub fn forward_trace(&self, obs: &[f64]) -> Result<ForwardTrace, QError> {
        if obs.len() != self.input_len() {
            return Err(QError::DimensionMismatch {
                got: obs.len(),
                expected: self.input_len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(obs.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_len()];
            layer.affine(post.last().unwrap(), &mut z);
            let activated = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            post.push(activated);
        }
        Ok(ForwardTrace { pre, post })
    }

    /// Per-agent Q-value heads for one observation.
    pub fn forward(&self, obs: &[f64]) -> Result<Vec<Vec<f64>>, QError> {
        let trace = self.forward_trace(obs)?;
        let offs = self.head_offsets();
        let out = trace.output();
        Ok((0..self.n_agents())
            .map(|r| out[offs[r]..offs[r + 1]].to_vec())
            .collect())
    }

    /// Accumulates into `grad` the gradient of
    /// `sum_r (target_r - Q_r(obs, action_r))^2`
    /// with respect to every weight and bias.
    pub fn backward_accum(
        &self,
        trace: &ForwardTrace,
        actions: &[usize],
        head_deltas: &[f64],
        grad: &mut BlockParams,
    ) {
        let last = self.layers.len() - 1;
        let offs = self.head_offsets();
        // dL/dz for the linear output layer.
        let mut upstream = vec![0.0; self.layers[last].out_len()];
        for (r, (&a, &delta)) in actions.iter().zip(head_deltas).enumerate() {
            upstream[offs[r] + a] = -2.0 * delta;
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let glayer = &mut grad.layers[l];
            let x = &trace.post[l];
            let in_offs = BlockLayer::offsets(&layer.in_parts);
            let out_offs = BlockLayer::offsets(&layer.out_parts);
            for (gb, &g) in glayer.bias.iter_mut().zip(&upstream) {
                *gb += g;
            }
            for r in 0..layer.out_parts.len() {
                for c in 0..layer.in_parts.len() {
                    glayer.block_mut(r, c).outer_accum(
                        &upstream[out_offs[r]..out_offs[r + 1]],
                        &x[in_offs[c]..in_offs[c + 1]],
                    );
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through the weights, then through the rectifier.
            let mut downstream = vec![0.0; layer.in_len()];
            for r in 0..layer.out_parts.len() {
                for c in 0..layer.in_parts.len() {
                    layer.block(r, c).matvec_transpose_accum(
                        &upstream[out_offs[r]..out_offs[r + 1]],
                        &mut downstream[in_offs[c]..in_offs[c + 1]],
                    );
                }
            }
            for (d, &z) in downstream.iter_mut().zip(&trace.pre[l - 1]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            upstream = downstream;
        }
    }

    /// Gradient of the per-head squared-error loss for a single sample.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        actions: &[usize],
        head_deltas: &[f64],
    ) -> BlockParams {
        let mut grad = self.zeros_like();
        self.backward_accum(trace, actions, head_deltas, &mut grad);
        grad
    }

    pub fn zeros_like(&self) -> BlockParams {
        BlockParams {
            layers: self
                .layers
                .iter()
                .map(|l| BlockLayer::zeros(&l.in_parts, &l.out_parts))
                .collect(),
        }
    }

    /// θ ← θ − α·g on the blocks selected by the mask. Biases always move.
    pub fn apply_update(&mut self, grad: &BlockParams, learning_rate: f64, mask: UpdateMask) {
        for (layer, glayer) in self.layers.iter_mut().zip(&grad.layers) {
            for (b, &g) in layer.bias.iter_mut().zip(&glayer.bias) {
                *b -= learning_rate * g;
            }
            let n_in = layer.in_parts.len();
            for r in 0..layer.out_parts.len() {
                for c in 0..n_in {
                    if mask == UpdateMask::Diagonal && r != c {
                        continue;
                    }
                    let block = layer.block_mut(r, c);
                    for (w, &g) in block.data.iter_mut().zip(&glayer.block(r, c).data) {
                        *w -= learning_rate * g;
                    }
                }
            }
        }
    }

    /// Scales `self` (used as a gradient) so its global L2 norm does not
    /// exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let values: Vec<f64> = self.iter_values().collect();
        if let Some(scale) = clip_scale(&values, max_norm) {
            self.scale(scale);
        }
    }

    /// Clips a gradient according to the update mask. A full update is one
    /// joint learner, so the clip is global; a diagonal update treats each
    /// agent's block group (its diagonal blocks plus its bias slices) as an
    /// independent learner and clips each group separately. Off-diagonal
    /// entries are zeroed first in diagonal mode so the measured norm is the
    /// norm of the step actually taken.
    pub fn clip_masked(&mut self, mask: UpdateMask, max_norm: f64) {
        match mask {
            UpdateMask::Full => {
                self.clip_global_norm(max_norm);
            }
            UpdateMask::Diagonal => {
                self.zero_off_diagonal();
                let n = self.n_agents();
                for agent in 0..n {
                    let group: Vec<f64> = self
                        .layers
                        .iter()
                        .flat_map(|layer| {
                            let offs = BlockLayer::offsets(&layer.out_parts);
                            layer
                                .block(agent, agent)
                                .data
                                .iter()
                                .copied()
                                .chain(layer.bias[offs[agent]..offs[agent + 1]].iter().copied())
                                .collect::<Vec<f64>>()
                        })
                        .collect();
                    if let Some(scale) = clip_scale(&group, max_norm) {
                        for layer in &mut self.layers {
                            let offs = BlockLayer::offsets(&layer.out_parts);
                            layer
                                .block_mut(agent, agent)
                                .data
                                .iter_mut()
                                .for_each(|w| *w *= scale);
                            layer.bias[offs[agent]..offs[agent + 1]]
                                .iter_mut()
                                .for_each(|b| *b *= scale);
                        }
                    }
                }
            }
        }
    }

    /// Adds `alpha * other` into `self` entry-wise.
    pub fn axpy(&mut self, alpha: f64, other: &BlockParams) {
        for (layer, olayer) in self.layers.iter_mut().zip(&other.layers) {
            for (b, &o) in layer.bias.iter_mut().zip(&olayer.bias) {
                *b += alpha * o;
            }
            for (block, oblock) in layer.blocks.iter_mut().zip(&olayer.blocks) {
                for (w, &o) in block.data.iter_mut().zip(&oblock.data) {
                    *w += alpha * o;
                }
            }
        }
    }

    /// Scales every entry.
    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.bias.iter_mut().for_each(|b| *b *= factor);
            for block in &mut layer.blocks {
                block.data.iter_mut().for_each(|w| *w *= factor);
            }
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.blocks
                .iter()
                .flat_map(|b| b.data.iter().copied())
                .chain(l.bias.iter().copied())
        })
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(f64::is_finite)
    }

    /// FNV-1a hash over the exact bit patterns of every parameter, in fixed
    /// order. Equal digests mean bit-identical parameters.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.iter_values() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Scale factor that brings the L2 norm of `values` down to `max_norm`, or
/// `None` when no clipping applies. When the squared sum overflows, the
/// norm is recomputed on entries normalized by their max magnitude so the
/// clip preserves direction instead of zeroing the step; a gradient that is
/// itself non-finite is left alone for the divergence guard to catch.
fn clip_scale(values: &[f64], max_norm: f64) -> Option<f64> {
    let mut sq = 0.0;
    for &v in values {
        sq += v * v;
    }
    if sq.is_finite() {
        let norm = sq.sqrt();
        (norm > max_norm && norm > 0.0).then(|| max_norm / norm)
    } else {
        let max_abs = values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        if !max_abs.is_finite() {
            return None;
        }
        let s = values
            .iter()
            .map(|&v| {
                let r = v / max_abs;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        Some((max_norm / max_abs) / s)
    }
}

/// Online network plus its periodically synced target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub online: BlockParams,
    pub target: BlockParams,
}

impl QNetwork {
    pub fn new(online: BlockParams) -> Self {
        let target = online.clone();
        Self { online, target }
    }

    /// θ⁻ ← θ (deep copy, never an alias).
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// Joint bootstrap target `y = team_reward + γ Σ_r max_a Q_r(s', a; θ⁻)`,
/// or the team reward alone on terminal transitions.
pub fn td_target(
    net: &QNetwork,
    team_reward: f64,
    next_obs: &[f64],
    terminal: bool,
    gamma: f64,
) -> Result<f64, QError> {
    if terminal {
        return Ok(team_reward);
    }
    let heads = net.target.forward(next_obs)?;
    let bootstrap: f64 = heads.iter().map(|h| max_value(h)).sum();
    Ok(team_reward + gamma * bootstrap)
}

fn max_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One sample of a training batch, viewed per network.
#[derive(Debug, Clone, Copy)]
pub struct BatchSample<'a> {
    pub obs: &'a [f64],
    pub next_obs: &'a [f64],
    /// Taken action index per head.
    pub actions: &'a [usize],
    /// Reward per head.
    pub rewards: &'a [f64],
    pub terminal: bool,
}

pub struct BatchResult {
    /// Gradient of the mean per-sample loss.
    pub grad: BlockParams,
    /// Joint TD error (sum of head errors) per sample, in batch order.
    pub joint_deltas: Vec<f64>,
    /// Mean over the batch of `sum_r delta_r^2`.
    pub mean_loss: f64,
}

/// Mean-loss gradient over a batch with deterministic chunked accumulation:
/// the batch is split into fixed chunks, each chunk accumulates its samples
/// in order, and the chunk partials fold in chunk order, so sequential and
/// parallel execution agree bit for bit.
pub fn batch_gradient(
    net: &QNetwork,
    samples: &[BatchSample],
    gamma: f64,
    mode: ExecMode,
) -> Result<BatchResult, QError> {
    let chunk_len = samples.len().div_ceil(GRADIENT_CHUNKS).max(1);
    let chunks: Vec<&[BatchSample]> = samples.chunks(chunk_len).collect();

    let partials: Vec<ChunkPartial> = match mode {
        ExecMode::Sequential => chunks
            .iter()
            .map(|c| chunk_partial(net, c, gamma))
            .collect::<Result<_, _>>()?,
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            chunks
                .par_iter()
                .map(|c| chunk_partial(net, c, gamma))
                .collect::<Result<_, _>>()?
        }
    };

    let mut grad = net.online.zeros_like();
    let mut joint_deltas = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    for partial in partials {
        grad.axpy(1.0, &partial.grad);
        joint_deltas.extend(partial.joint_deltas);
        loss_sum += partial.loss_sum;
    }
    let scale = 1.0 / samples.len() as f64;
    grad.scale(scale);
    Ok(BatchResult {
        grad,
        joint_deltas,
        mean_loss: loss_sum * scale,
    })
}

struct ChunkPartial {
    grad: BlockParams,
    joint_deltas: Vec<f64>,
    loss_sum: f64,
}

fn chunk_partial(
    net: &QNetwork,
    samples: &[BatchSample],
    gamma: f64,
) -> Result<ChunkPartial, QError> {
    let mut grad = net.online.zeros_like();
    let mut joint_deltas = Vec::with_capacity(samples.len());
    let mut loss_sum = 0.0;
    let offs = net.online.head_offsets();
    for sample in samples {
        let trace = net.online.forward_trace(sample.obs)?;
        let out = trace.output();
        let mut head_deltas = Vec::with_capacity(sample.actions.len());
        if sample.terminal {
            for (r, (&a, &reward)) in sample.actions.iter().zip(sample.rewards).enumerate() {
                head_deltas.push(reward - out[offs[r] + a]);
            }
        } else {
            let next = net.target.forward_trace(sample.next_obs)?;
            let next_out = next.output();
            for (r, (&a, &reward)) in sample.actions.iter().zip(sample.rewards).enumerate() {
                let boot = max_value(&next_out[offs[r]..offs[r + 1]]);
                head_deltas.push(reward + gamma * boot - out[offs[r] + a]);
            }
        }
        joint_deltas.push(head_deltas.iter().sum());
        loss_sum += head_deltas.iter().map(|d| d * d).sum::<f64>();
        net.online
            .backward_accum(&trace, sample.actions, &head_deltas, &mut grad);
    }
    Ok(ChunkPartial {
        grad,
        joint_deltas,
        loss_sum,
    })
}

const CHECKPOINT_VERSION: u32 = 1;

/// Versioned parameter checkpoint; values round-trip bit-exactly through
/// the shortest-representation float encoding.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub algorithm: String,
    pub nets: Vec<BlockParams>,
}

pub fn save_checkpoint(path: &Path, algorithm: &str, nets: &[BlockParams]) -> Result<(), QError> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        algorithm: algorithm.to_string(),
        nets: nets.to_vec(),
    };
    serde_json::to_writer(&mut writer, &checkpoint)?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, QError> {
    let file = std::fs::File::open(path)?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(QError::Version(checkpoint.version));
    }
    Ok(checkpoint)
}
