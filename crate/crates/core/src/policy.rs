//! Neural bid strategies.
//!
//! A small fully connected network maps an `m`-dimensional valuation to bids.
//! Hidden layers use SeLU, the bid outputs use ReLU. Forward and reverse-mode
//! passes are hand-rolled over a flat parameter vector so gradient estimators
//! can treat the policy as `θ ∈ R^d`.
//!
//! Batch gradients are reduced with pairwise (tree) summation over fixed-size
//! row chunks. Besides better rounding behavior, this makes the batch mean
//! decompose exactly: for power-of-two batches, averaging the two half-batch
//! gradients reproduces the full-batch gradient bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::{AdamState, OptimizerConfig};

/// SeLU constants (the standard self-normalizing values).
pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_SCALE: f64 = 1.0507009873554805;

/// Rows per reduction chunk in the batched backward pass.
const CHUNK_ROWS: usize = 256;

#[inline]
fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * (x.exp() - 1.0)
    }
}

#[inline]
fn selu_prime(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

/// What the network's output row means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyHead {
    /// Pure bid function: `m` outputs, all ReLU-clamped.
    Deterministic,
    /// Gaussian mixed strategy: `2m` outputs; the first `m` are ReLU-clamped
    /// bid means, the last `m` parameterize the standard deviation through a
    /// softplus and stay linear so the deviation can shrink freely.
    Gaussian,
}

impl PolicyHead {
    fn name(self) -> &'static str {
        match self {
            PolicyHead::Deterministic => "deterministic",
            PolicyHead::Gaussian => "gaussian",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(PolicyHead::Deterministic),
            "gaussian" => Ok(PolicyHead::Gaussian),
            other => Err(Error::config(format!("unknown policy head `{other}`"))),
        }
    }
}

/// MLP bid strategy over a flat parameter vector.
///
/// Parameter layout per layer: the `(fan_in, fan_out)` weight matrix in
/// row-major order, followed by `fan_out` biases.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    layer_sizes: Vec<usize>,
    head: PolicyHead,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass; consumed by [`PolicyNet::backward`].
#[derive(Debug)]
pub struct ForwardCache {
    /// Input rows.
    input: Array2<f64>,
    /// Pre-activations per layer.
    pre: Vec<Array2<f64>>,
    /// Post-activations per hidden layer (inputs to the next layer).
    post: Vec<Array2<f64>>,
}

impl PolicyNet {
    /// Default architecture for an `m`-item auction: `(m, 10, 10, m)`, with a
    /// doubled output head for Gaussian mixed strategies.
    pub fn default_layer_sizes(n_items: usize, head: PolicyHead) -> Vec<usize> {
        let out = match head {
            PolicyHead::Deterministic => n_items,
            PolicyHead::Gaussian => 2 * n_items,
        };
        vec![n_items, 10, 10, out]
    }

    /// Seeded fan-in-scaled uniform initialization.
    pub fn init(layer_sizes: &[usize], head: PolicyHead, rng: &mut impl Rng) -> Result<Self> {
        Self::validate_shape(layer_sizes, head)?;
        let count = Self::count_params(layer_sizes);
        let mut params = Vec::with_capacity(count);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in + 1) * fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(PolicyNet {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params,
        })
    }

    /// Seeded init that redraws until every bid output responds on a probe
    /// grid over `[0, v_max]`.
    ///
    /// A bid column whose output-layer preactivation is negative across the
    /// whole input range is gated to zero by the ReLU and receives zero
    /// gradient, so neither pretraining nor self-play can revive it.
    /// Rejection keeps the init deterministic under the seed while ruling
    /// that case out.
    pub fn init_alive(
        layer_sizes: &[usize],
        head: PolicyHead,
        v_max: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let m = layer_sizes[0];
        let probes = 64;
        let probe = Array2::from_shape_fn((probes, m), |(r, _)| {
            v_max * (r + 1) as f64 / probes as f64
        });
        for _ in 0..1000 {
            let net = Self::init(layer_sizes, head, rng)?;
            let bids = net.bids(probe.view())?;
            let all_alive = (0..m).all(|k| bids.column(k).iter().any(|&b| b > 0.0));
            if all_alive {
                return Ok(net);
            }
        }
        Err(Error::config(
            "could not draw a live initialization in 1000 tries".to_string(),
        ))
    }

    /// Construct from an explicit parameter vector.
    pub fn from_params(layer_sizes: &[usize], head: PolicyHead, params: Vec<f64>) -> Result<Self> {
        Self::validate_shape(layer_sizes, head)?;
        let expected = Self::count_params(layer_sizes);
        if params.len() != expected {
            return Err(Error::config(format!(
                "expected {expected} parameters for layers {layer_sizes:?}, got {}",
                params.len()
            )));
        }
        Ok(PolicyNet {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params,
        })
    }

    fn validate_shape(layer_sizes: &[usize], head: PolicyHead) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(format!(
                "layer sizes must be >= 2 nonzero entries, got {layer_sizes:?}"
            )));
        }
        let (m, out) = (layer_sizes[0], *layer_sizes.last().unwrap());
        let expected_out = match head {
            PolicyHead::Deterministic => m,
            PolicyHead::Gaussian => 2 * m,
        };
        if out != expected_out {
            return Err(Error::config(format!(
                "{} head over {m} items needs {expected_out} outputs, got {out}",
                head.name()
            )));
        }
        Ok(())
    }

    /// `Σ (fan_in + 1) · fan_out` over consecutive layers.
    pub fn count_params(layer_sizes: &[usize]) -> usize {
        layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> PolicyHead {
        self.head
    }

    pub fn n_items(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Columns of the output that are ReLU-clamped bid coordinates.
    fn relu_cols(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Weight matrix and bias of layer `l` as views into the flat vector.
    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let mut offset = 0;
        for w in self.layer_sizes.windows(2).take(l) {
            offset += (w[0] + 1) * w[1];
        }
        let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = ArrayView2::from_shape(
            (fan_in, fan_out),
            &self.params[offset..offset + fan_in * fan_out],
        )
        .expect("layout");
        let b = &self.params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        (w, b)
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn check_input(&self, input: &ArrayView2<'_, f64>) -> Result<()> {
        if input.ncols() != self.layer_sizes[0] {
            return Err(Error::shape(
                format!("(_, {})", self.layer_sizes[0]),
                format!("(_, {})", input.ncols()),
            ));
        }
        Ok(())
    }

    fn apply_output_activation(&self, pre: &Array2<f64>) -> Array2<f64> {
        let relu_cols = self.relu_cols();
        let mut out = pre.clone();
        for mut row in out.rows_mut() {
            for k in 0..relu_cols {
                if row[k] < 0.0 {
                    row[k] = 0.0;
                }
            }
        }
        out
    }

    /// Forward pass without recording activations.
    pub fn forward_nocache(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let n_layers = self.n_layers();
        let mut act = input.to_owned();
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = act.dot(&w);
            for mut row in z.rows_mut() {
                for (zv, bv) in row.iter_mut().zip(b) {
                    *zv += bv;
                }
            }
            if l + 1 < n_layers {
                z.mapv_inplace(selu);
                act = z;
            } else {
                return Ok(self.apply_output_activation(&z));
            }
        }
        unreachable!()
    }

    /// Forward pass recording pre-activations for [`PolicyNet::backward`].
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&input)?;
        let n_layers = self.n_layers();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post = Vec::with_capacity(n_layers - 1);
        let mut act = input.to_owned();
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = act.dot(&w);
            for mut row in z.rows_mut() {
                for (zv, bv) in row.iter_mut().zip(b) {
                    *zv += bv;
                }
            }
            pre.push(z.clone());
            if l + 1 < n_layers {
                z.mapv_inplace(selu);
                post.push(z.clone());
                act = z;
            }
        }
        let output = self.apply_output_activation(pre.last().unwrap());
        Ok((
            output,
            ForwardCache {
                input: input.to_owned(),
                pre,
                post,
            },
        ))
    }

    /// Deterministic bids for a batch of valuations: the first `m` output
    /// columns (the full output for deterministic heads, the mean head for
    /// Gaussian ones).
    pub fn bids(&self, values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let out = self.forward_nocache(values)?;
        Ok(out.slice(s![.., ..self.n_items()]).to_owned())
    }

    /// Reverse-mode gradient of `Σ_batch loss` with respect to the flat
    /// parameter vector, given `∂loss/∂output` per row.
    ///
    /// Chunked over rows with pairwise combination, so half-batch splits
    /// recompose exactly (see module docs).
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let rows = cache.input.nrows();
        if upstream.nrows() != rows || upstream.ncols() != self.out_dim() {
            return Err(Error::shape(
                format!("({rows}, {})", self.out_dim()),
                format!("({}, {})", upstream.nrows(), upstream.ncols()),
            ));
        }
        let n_chunks = rows.div_ceil(CHUNK_ROWS).max(1);
        let mut partials = Vec::with_capacity(n_chunks);
        for c in 0..n_chunks {
            let lo = c * CHUNK_ROWS;
            let hi = ((c + 1) * CHUNK_ROWS).min(rows);
            partials.push(self.backward_chunk(cache, &upstream, lo, hi));
        }
        Ok(pairwise_merge(partials))
    }

    /// Gradient contribution of the cache rows `lo..hi` only.
    pub(crate) fn backward_rows(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        lo: usize,
        hi: usize,
    ) -> Vec<f64> {
        self.backward_chunk(cache, &upstream, lo, hi)
    }

    fn backward_chunk(
        &self,
        cache: &ForwardCache,
        upstream: &ArrayView2<'_, f64>,
        lo: usize,
        hi: usize,
    ) -> Vec<f64> {
        let n_layers = self.n_layers();
        let relu_cols = self.relu_cols();
        let mut grad = vec![0.0; self.params.len()];

        // delta at the output: upstream gated by the output activation
        let z_out = cache.pre[n_layers - 1].slice(s![lo..hi, ..]);
        let mut delta = upstream.slice(s![lo..hi, ..]).to_owned();
        for (mut drow, zrow) in delta.rows_mut().into_iter().zip(z_out.rows()) {
            for k in 0..drow.len() {
                if k < relu_cols && zrow[k] <= 0.0 {
                    drow[k] = 0.0;
                }
            }
        }

        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(off);
            off += (w[0] + 1) * w[1];
        }

        for l in (0..n_layers).rev() {
            let a_prev = if l == 0 {
                cache.input.slice(s![lo..hi, ..])
            } else {
                cache.post[l - 1].slice(s![lo..hi, ..])
            };
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            // dW = a_prevᵀ · delta, db = column sums of delta
            let dw = a_prev.t().dot(&delta);
            let base = offsets[l];
            for i in 0..fan_in {
                for j in 0..fan_out {
                    grad[base + i * fan_out + j] = dw[[i, j]];
                }
            }
            let db_base = base + fan_in * fan_out;
            for j in 0..fan_out {
                grad[db_base + j] = delta.column(j).sum();
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut next = delta.dot(&w.t());
                let z_prev = cache.pre[l - 1].slice(s![lo..hi, ..]);
                for (mut drow, zrow) in next.rows_mut().into_iter().zip(z_prev.rows()) {
                    for (d, &z) in drow.iter_mut().zip(zrow) {
                        *d *= selu_prime(z);
                    }
                }
                delta = next;
            }
        }
        grad
    }

    /// Versioned text serialization of the architecture and parameters.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        writeln!(out, "smoothmkt-policy v1").unwrap();
        writeln!(
            out,
            "layer_sizes: {}",
            self.layer_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        )
        .unwrap();
        writeln!(out, "head: {}", self.head.name()).unwrap();
        writeln!(out, "hidden_activation: selu").unwrap();
        writeln!(out, "output_activation: relu").unwrap();
        writeln!(out, "params: {}", self.params.len()).unwrap();
        for p in &self.params {
            // `{}` prints the shortest representation that round-trips
            writeln!(out, "{p}").unwrap();
        }
        std::fs::write(path, out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read policy file: {e}")))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "smoothmkt-policy v1" {
            return Err(Error::config(format!("unsupported policy header `{header}`")));
        }
        let mut layer_sizes = Vec::new();
        let mut head = PolicyHead::Deterministic;
        let mut count = 0usize;
        for line in lines.by_ref() {
            if let Some(rest) = line.strip_prefix("layer_sizes: ") {
                layer_sizes = rest
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::config(format!("bad layer sizes: {e}")))?;
            } else if let Some(rest) = line.strip_prefix("head: ") {
                head = PolicyHead::parse(rest.trim())?;
            } else if let Some(rest) = line.strip_prefix("params: ") {
                count = rest
                    .trim()
                    .parse()
                    .map_err(|e| Error::config(format!("bad parameter count: {e}")))?;
                break;
            }
        }
        let params: Vec<f64> = lines
            .take(count)
            .map(|l| l.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::config(format!("bad parameter value: {e}")))?;
        Self::from_params(&layer_sizes, head, params)
    }
}

/// Pairwise (tree) merge of partial gradient vectors over contiguous ranges:
/// the top-level operands are exactly the reductions of the two contiguous
/// halves, so chunk-aligned half-batch splits recompose bit for bit.
fn pairwise_merge(parts: Vec<Vec<f64>>) -> Vec<f64> {
    fn reduce(parts: &[Vec<f64>]) -> Vec<f64> {
        match parts {
            [single] => single.clone(),
            _ => {
                let mid = parts.len() / 2;
                let mut left = reduce(&parts[..mid]);
                let right = reduce(&parts[mid..]);
                for (a, b) in left.iter_mut().zip(right) {
                    *a += b;
                }
                left
            }
        }
    }
    debug_assert!(!parts.is_empty());
    reduce(&parts)
}

/// Supervised pretraining toward the truthful strategy.
///
/// Each iteration draws a fresh uniform batch and takes one adaptive-moment
/// descent step on the mean squared error between the network output and the
/// target: the valuations themselves for deterministic heads, and
/// `[valuations, aux_target]` for Gaussian heads (the deviation head trains
/// toward a constant). Returns the per-iteration MSE trace.
pub fn pretrain(
    net: &mut PolicyNet,
    v_max: f64,
    iterations: usize,
    batch_size: usize,
    opt: &OptimizerConfig,
    aux_target: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    opt.validate()?;
    let m = net.n_items();
    let out_dim = net.out_dim();
    let mut adam = AdamState::new(*opt, net.param_count());
    let mut history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let values = Array2::from_shape_simple_fn((batch_size, m), || rng.gen::<f64>() * v_max);
        let (out, cache) = net.forward(values.view())?;
        let mut target = Array2::from_elem((batch_size, out_dim), aux_target);
        target.slice_mut(s![.., ..m]).assign(&values);
        let diff = &out - &target;
        let denom = (batch_size * out_dim) as f64;
        let mse = diff.iter().map(|d| d * d).sum::<f64>() / denom;
        history.push(mse);
        let upstream = diff.mapv(|d| 2.0 * d / denom);
        let grad = net.backward(&cache, upstream.view())?;
        adam.descend(net.params_mut(), &grad);
    }
    Ok(history)
}

/// Mean squared error of the bid head against the truthful strategy on a
/// fresh uniform sample.
pub fn truthful_mse(net: &PolicyNet, v_max: f64, n_eval: usize, rng: &mut impl Rng) -> Result<f64> {
    let m = net.n_items();
    let values = Array2::from_shape_simple_fn((n_eval, m), || rng.gen::<f64>() * v_max);
    let bids = net.bids(values.view())?;
    let diff = &bids - &values;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / (n_eval * m) as f64)
}

/// Per-output-coordinate MSE against the truthful strategy.
pub fn truthful_mse_per_item(
    net: &PolicyNet,
    v_max: f64,
    n_eval: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let m = net.n_items();
    let values = Array2::from_shape_simple_fn((n_eval, m), || rng.gen::<f64>() * v_max);
    let bids = net.bids(values.view())?;
    let diff = &bids - &values;
    Ok((0..m)
        .map(|k| diff.column(k).iter().map(|d| d * d).sum::<f64>() / n_eval as f64)
        .collect())
}
