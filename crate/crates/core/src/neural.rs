//! Fully connected state-action value network.
//!
//! Hidden layers use ReLU, the output layer is affine. All parameters live in
//! one flat [`ParameterVector`]; layer `l` with fan-in `n` and fan-out `m`
//! occupies `m·n` weights in row-major order (`w[o·n + i]` connects input `i`
//! to unit `o`) followed by `m` biases, layers in input-to-output order.
//!
//! Two code paths compute the same quantities: [`QNetwork::forward`] and
//! [`QNetwork::backward`] walk one sample with plain loops, while
//! [`QNetwork::forward_batch`] and [`QNetwork::backward_batch`] run a whole
//! minibatch through matrix products in a reusable [`BatchWorkspace`].

use std::io::{Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SystemState};
use crate::rng::RngStream;
use crate::solver::ByteReader;

pub const HIDDEN_LAYERS: [usize; 3] = [64, 32, 16];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl NetworkShape {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        Ok(Self { input, hidden, output })
    }

    /// `F·(Δ+2)` inputs, hidden widths 64/32/16, `F+1` outputs.
    pub fn for_model(config: &ModelConfig) -> Self {
        Self {
            input: feature_len(config),
            hidden: HIDDEN_LAYERS.to_vec(),
            output: config.num_actions(),
        }
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let dims = self.dims();
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| (i + 1) * o).sum()
    }

    /// Start offsets of each layer's weights and biases.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.layers()
            .iter()
            .map(|&(i, o)| {
                let w = at;
                at += i * o;
                let b = at;
                at += o;
                (w, b)
            })
            .collect()
    }
}

/// Flattened weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Normalized state encoding: per content `A/Â`, then `Q^δ/N_f` for every
/// queue, then `G/N_f`.
pub fn features(state: &SystemState, config: &ModelConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(feature_len(config));
    features_into(state, config, &mut out);
    out
}

pub fn features_into(state: &SystemState, config: &ModelConfig, out: &mut Vec<f64>) {
    out.clear();
    let cap = f64::from(config.aoi_cap());
    for (s, &n) in state.per_content.iter().zip(config.users()) {
        let n = f64::from(n);
        out.push(f64::from(s.aoi) / cap);
        out.extend(s.queues.iter().map(|&q| f64::from(q) / n));
        out.push(f64::from(s.new_arrivals) / n);
    }
}

pub fn feature_len(config: &ModelConfig) -> usize {
    config.num_contents() * (config.window() + 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: NetworkShape,
    params: ParameterVector,
}

impl QNetwork {
    pub fn zeros(shape: NetworkShape) -> Self {
        let n = shape.param_count();
        Self {
            shape,
            params: ParameterVector::zeros(n),
        }
    }

    /// Weights uniform on `(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn init_uniform(shape: NetworkShape, rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(shape);
        for ((fan_in, fan_out), (w, _)) in net.shape.layers().into_iter().zip(net.shape.offsets()) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params.0[w..w + fan_in * fan_out] {
                // uniform() is in [0, 1); reject the single point mapping to -bound
                let mut u = rng.uniform();
                while u == 0.0 {
                    u = rng.uniform();
                }
                *p = bound * (2.0 * u - 1.0);
            }
        }
        net
    }

    pub fn from_parameters(shape: NetworkShape, params: ParameterVector) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::InvalidConfig(format!(
                "{} parameters for a shape needing {}",
                params.len(),
                shape.param_count()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn parameters(&self) -> &ParameterVector {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    /// Deep copy used to refresh the target network.
    pub fn copy_parameters(&self) -> QNetwork {
        self.clone()
    }

    /// Activations of every layer for one sample; the last entry is the
    /// output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.shape.input, "feature length mismatch");
        let layers = self.shape.layers();
        let offsets = self.shape.offsets();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for (l, (&(n_in, n_out), &(w, b))) in layers.iter().zip(&offsets).enumerate() {
            let input = &acts[l];
            let last = l + 1 == layers.len();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &self.params.0[w + o * n_in..w + (o + 1) * n_in];
                    let z = self.params.0[b + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.activations(x).pop().expect("at least one layer")
    }

    /// Gradient of `upstream · output[action]` with respect to all
    /// parameters.
    pub fn backward(&self, x: &[f64], action: usize, upstream: f64) -> Result<ParameterVector> {
        if action >= self.shape.output {
            return Err(Error::InvalidAction {
                action,
                max: self.shape.output - 1,
            });
        }
        let acts = self.activations(x);
        let layers = self.shape.layers();
        let offsets = self.shape.offsets();
        let mut grad = ParameterVector::zeros(self.params.len());
        let mut delta = vec![0.0; self.shape.output];
        delta[action] = upstream;
        for l in (0..layers.len()).rev() {
            let (n_in, n_out) = layers[l];
            let (w, b) = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                grad.0[b + o] = delta[o];
                for i in 0..n_in {
                    grad.0[w + o * n_in + i] = delta[o] * input[i];
                }
            }
            if l > 0 {
                delta = (0..n_in)
                    .map(|i| {
                        if input[i] > 0.0 {
                            (0..n_out).map(|o| delta[o] * self.params.0[w + o * n_in + i]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(grad)
    }

    /// `θ ← θ − β·∇`.
    pub fn sgd_apply(&mut self, gradient: &ParameterVector, learning_rate: f64) {
        assert_eq!(gradient.len(), self.params.len(), "gradient length mismatch");
        for (p, g) in self.params.0.iter_mut().zip(&gradient.0) {
            *p -= learning_rate * g;
        }
    }

    fn weights(&self, l: usize) -> ArrayView2<'_, f64> {
        let (n_in, n_out) = self.shape.layers()[l];
        let (w, _) = self.shape.offsets()[l];
        ArrayView2::from_shape((n_out, n_in), &self.params.0[w..w + n_in * n_out]).expect("layer shape")
    }

    /// Outputs for every row of `xs`.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut ws = BatchWorkspace::new(&self.shape, xs.nrows());
        ws.input_mut().assign(&xs);
        self.forward_workspace(&mut ws);
        ws.output().to_owned()
    }

    /// Runs the rows stored in `ws.input_mut()` through the network, keeping
    /// every activation for a following [`QNetwork::backward_batch`].
    pub fn forward_workspace(&self, ws: &mut BatchWorkspace) {
        let layers = self.shape.layers();
        let offsets = self.shape.offsets();
        for l in 0..layers.len() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            general_mat_mul(1.0, input, &self.weights(l).t(), 0.0, out);
            let (_, b) = offsets[l];
            let bias = &self.params.0[b..b + layers[l].1];
            let last = l + 1 == layers.len();
            for mut row in out.rows_mut() {
                for (z, &bi) in row.iter_mut().zip(bias) {
                    *z += bi;
                    if !last && *z < 0.0 {
                        *z = 0.0;
                    }
                }
            }
        }
    }

    /// Gradient of `Σ_k upstream[k] · output[k, actions[k]]` for the batch
    /// last passed through [`QNetwork::forward_workspace`], written into
    /// `grad`.
    pub fn backward_batch(
        &self,
        ws: &mut BatchWorkspace,
        actions: &[usize],
        upstream: &[f64],
        grad: &mut ParameterVector,
    ) -> Result<()> {
        let rows = ws.rows;
        assert_eq!(actions.len(), rows);
        assert_eq!(upstream.len(), rows);
        assert_eq!(grad.len(), self.params.len());
        let layers = self.shape.layers();
        let offsets = self.shape.offsets();
        let last = layers.len() - 1;
        {
            let d = &mut ws.deltas[last];
            d.fill(0.0);
            for (k, (&a, &g)) in actions.iter().zip(upstream).enumerate() {
                if a >= self.shape.output {
                    return Err(Error::InvalidAction {
                        action: a,
                        max: self.shape.output - 1,
                    });
                }
                d[[k, a]] = g;
            }
        }
        for l in (0..=last).rev() {
            let (n_in, n_out) = layers[l];
            let (w, b) = offsets[l];
            {
                let delta = &ws.deltas[l];
                let input = &ws.acts[l];
                let mut dw = ArrayViewMut2::from_shape((n_out, n_in), &mut grad.0[w..w + n_in * n_out])
                    .expect("layer shape");
                general_mat_mul(1.0, &delta.t(), input, 0.0, &mut dw);
                for (gb, col) in grad.0[b..b + n_out].iter_mut().zip(delta.axis_iter(Axis(1))) {
                    *gb = col.sum();
                }
            }
            if l > 0 {
                let (lower, upper) = ws.deltas.split_at_mut(l);
                let prev = &mut lower[l - 1];
                general_mat_mul(1.0, &upper[0], &self.weights(l), 0.0, prev);
                prev.zip_mut_with(&ws.acts[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
        }
        Ok(())
    }
}

/// Preallocated activations and backpropagated errors for one batch size.
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    rows: usize,
    /// `acts[0]` is the input batch, `acts[l+1]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
    /// `deltas[l]` is the loss gradient at the pre-activation of layer `l`.
    deltas: Vec<Array2<f64>>,
}

impl BatchWorkspace {
    pub fn new(shape: &NetworkShape, rows: usize) -> Self {
        let dims = shape.dims();
        Self {
            rows,
            acts: dims.iter().map(|&d| Array2::zeros((rows, d))).collect(),
            deltas: dims[1..].iter().map(|&d| Array2::zeros((rows, d))).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.acts[0].view_mut()
    }

    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.acts.last().expect("output layer").view()
    }

    pub fn set_input_row(&mut self, row: usize, x: &[f64]) {
        self.acts[0]
            .slice_mut(s![row, ..])
            .iter_mut()
            .zip(x)
            .for_each(|(d, &v)| *d = v);
    }
}

/// Index of the smallest value, first one on ties.
pub fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"AOIQNET\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Policy and target parameters with the model they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub policy: QNetwork,
    pub target: QNetwork,
}

impl Checkpoint {
    /// Layout (little-endian): magic, version `u32`, config length `u32` +
    /// canonical config, layer count + 1 as `u32`, every dimension as `u32`,
    /// parameter count `u64`, policy parameters then target parameters as
    /// `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let canonical = self.config.canonical();
        let dims = self.policy.shape.dims();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(canonical.len() as u32).to_le_bytes());
        out.extend_from_slice(canonical.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.policy.params.len() as u64).to_le_bytes());
        for p in self.policy.params.0.iter().chain(&self.target.params.0) {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let canonical =
            std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = ModelConfig::from_canonical(canonical)?;
        let n_dims = r.u32()? as usize;
        if n_dims < 2 {
            return Err(Error::Format("checkpoint needs at least two dimensions".into()));
        }
        let dims = (0..n_dims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let shape = NetworkShape::new(dims[0], dims[1..n_dims - 1].to_vec(), dims[n_dims - 1])?;
        let count = r.u64()? as usize;
        if count != shape.param_count() {
            return Err(Error::Format("parameter count does not match the shape".into()));
        }
        let mut read = || (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>();
        let policy = QNetwork::from_parameters(shape.clone(), ParameterVector(read()?))?;
        let target = QNetwork::from_parameters(shape, ParameterVector(read()?))?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, policy, target })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::initial_state;

    fn small_shape() -> NetworkShape {
        NetworkShape::new(4, vec![5, 3], 2).unwrap()
    }

    fn random_input(rng: &mut RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn parameter_count() {
        let config = ModelConfig::default_operating_point(1.0).unwrap();
        let shape = NetworkShape::for_model(&config);
        assert_eq!(shape.dims(), vec![6, 64, 32, 16, 2]);
        assert_eq!(shape.param_count(), 7 * 64 + 65 * 32 + 33 * 16 + 17 * 2);
    }

    #[test]
    fn init_support_and_determinism() {
        let shape = small_shape();
        let a = QNetwork::init_uniform(shape.clone(), &mut RngStream::from_seed(3));
        let b = QNetwork::init_uniform(shape.clone(), &mut RngStream::from_seed(3));
        assert_eq!(a, b);
        for ((n_in, n_out), (w, bias)) in shape.layers().into_iter().zip(shape.offsets()) {
            let bound = 1.0 / (n_in as f64).sqrt();
            assert!(a.params.0[w..w + n_in * n_out].iter().all(|p| p.abs() < bound));
            assert!(a.params.0[bias..bias + n_out].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(small_shape());
        assert_eq!(net.forward(&[0.3, 0.1, 0.9, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn bias_free_network_is_positively_homogeneous() {
        let net = QNetwork::init_uniform(small_shape(), &mut RngStream::from_seed(8));
        let x = [0.2, 0.7, 0.1, 0.5];
        let y = net.forward(&x);
        let scaled: Vec<f64> = x.iter().map(|v| v * 3.5).collect();
        for (a, b) in net.forward(&scaled).iter().zip(&y) {
            assert!((a - 3.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_by_hand() {
        // 2 -> 2 (ReLU) -> 1
        let shape = NetworkShape::new(2, vec![2], 1).unwrap();
        let params = vec![
            1.0, -2.0, 0.5, 0.25, // W1 rows
            0.1, -0.2, // b1
            3.0, -1.0, // W2
            0.5, // b2
        ];
        let net = QNetwork::from_parameters(shape, ParameterVector(params)).unwrap();
        // h = relu([1 - 2·2 + 0.1, 0.5 + 0.5 - 0.2]) = [0, 0.8]; y = -0.8 + 0.5
        let y = net.forward(&[1.0, 2.0]);
        assert!((y[0] - (-0.3)).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient_and_bias_gets_upstream() {
        let net = QNetwork::init_uniform(small_shape(), &mut RngStream::from_seed(1));
        let x = [0.4, 0.2, 0.6, 0.8];
        assert!(net.backward(&x, 1, 0.0).unwrap().0.iter().all(|&g| g == 0.0));
        let g = net.backward(&x, 1, 2.5).unwrap();
        let (_, b_out) = *net.shape.offsets().last().unwrap();
        assert_eq!(g.0[b_out + 1], 2.5);
        assert_eq!(g.0[b_out], 0.0);
        assert!(net.backward(&x, 2, 1.0).is_err());
    }

    #[test]
    fn sgd_step_on_scalar_quadratic() {
        // One affine output with no hidden layer acts as a single parameter
        // when the input is zero: output = bias.
        let shape = NetworkShape::new(1, vec![], 1).unwrap();
        let mut net = QNetwork::zeros(shape);
        // d/dθ ½(θ − 3)² at θ = 0 is −3.
        let grad = net.backward(&[0.0], 0, net.forward(&[0.0])[0] - 3.0).unwrap();
        net.sgd_apply(&grad, 0.1);
        assert!((net.params.0[1] - 0.3).abs() < 1e-15);
        let before = net.clone();
        net.sgd_apply(&grad, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn copy_is_independent() {
        let mut net = QNetwork::init_uniform(small_shape(), &mut RngStream::from_seed(2));
        let target = net.copy_parameters();
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], 0, 1.0).unwrap();
        net.sgd_apply(&g, 0.5);
        assert_ne!(net, target);
        assert_eq!(target, QNetwork::init_uniform(small_shape(), &mut RngStream::from_seed(2)));
    }

    #[test]
    fn batch_path_matches_single_sample_path() {
        let shape = NetworkShape::new(6, vec![64, 32, 16], 3).unwrap();
        let net = QNetwork::init_uniform(shape.clone(), &mut RngStream::from_seed(5));
        let mut rng = RngStream::from_seed(6);
        let rows = 17;
        let mut ws = BatchWorkspace::new(&shape, rows);
        let xs: Vec<Vec<f64>> = (0..rows).map(|_| random_input(&mut rng, 6)).collect();
        let actions: Vec<usize> = (0..rows).map(|_| rng.below(3)).collect();
        let upstream: Vec<f64> = (0..rows).map(|_| rng.uniform() - 0.5).collect();
        for (k, x) in xs.iter().enumerate() {
            ws.set_input_row(k, x);
        }
        net.forward_workspace(&mut ws);
        for (k, x) in xs.iter().enumerate() {
            for (a, b) in ws.output().row(k).iter().zip(net.forward(x)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let mut grad = ParameterVector::zeros(shape.param_count());
        net.backward_batch(&mut ws, &actions, &upstream, &mut grad).unwrap();
        let mut summed = vec![0.0; shape.param_count()];
        for k in 0..rows {
            let g = net.backward(&xs[k], actions[k], upstream[k]).unwrap();
            summed.iter_mut().zip(&g.0).for_each(|(s, v)| *s += v);
        }
        for (a, b) in grad.0.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn features_are_normalized() {
        let config = ModelConfig::new(2, 10, vec![2, 4], vec![0.5, 0.5], 1.0).unwrap();
        let mut s = initial_state(&config);
        s.per_content[1].aoi = 10;
        s.per_content[1].queues = vec![4, 1];
        s.per_content[1].new_arrivals = 2;
        let x = features(&s, &config);
        assert_eq!(x, vec![0.1, 0.0, 0.0, 0.0, 1.0, 1.0, 0.25, 0.5]);
    }

    #[test]
    fn argmin_prefers_first() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), 1);
        assert_eq!(argmin(&[2.0, 2.0]), 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let config = ModelConfig::default_operating_point(2.0).unwrap();
        let shape = NetworkShape::for_model(&config);
        let mut rng = RngStream::from_seed(9);
        let cp = Checkpoint {
            config,
            policy: QNetwork::init_uniform(shape.clone(), &mut rng),
            target: QNetwork::init_uniform(shape, &mut rng),
        };
        let bytes = cp.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), cp);
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
    }
}
