//! Fully connected feed-forward network with manual backpropagation.
//!
//! Layers compute `z = σ(W·z_prev + bias)`; the output layer is linear so
//! targets can take any real value. Forward passes cache pre- and
//! post-activations per layer, which the backward pass consumes to produce
//! exact parameter gradients by the chain rule.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative as a function of the pre-activation.
    fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected relu or tanh)"
            ))),
        }
    }
}

/// Multilayer perceptron. `weights[l]` has shape `dims[l+1] × dims[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Per-layer intermediates cached by a forward pass.
///
/// `post[0]` is the input batch; `pre[l]` and `post[l+1]` belong to weight
/// layer `l`.
pub struct ForwardTrace {
    pre: Vec<Mat>,
    post: Vec<Mat>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.post[0].rows()
    }
}

/// Parameter gradients mirroring an [`Mlp`]'s shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Mat>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .all(|w| w.data().iter().all(|v| v.is_finite()))
            && self
                .d_biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Seeded initialization: weights uniform in ±√(6/(fan_in+fan_out)),
    /// biases zero. The same seed always yields bit-identical parameters.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output dims, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("layer dims must be >= 1, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_weight_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Direct parameter access, used by gradient checks and custom update
    /// rules. Shapes must not change.
    pub fn weights_mut(&mut self) -> &mut [Mat] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Forward pass over a batch (one sample per row). Returns the output
    /// batch and the cached trace for backpropagation.
    pub fn forward(&self, x: &Mat) -> Result<(Mat, ForwardTrace)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("input batch contains a non-finite value".into()));
        }
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut post = Vec::with_capacity(layers + 1);
        post.push(x.clone());
        for l in 0..layers {
            let mut z = post[l].matmul(&self.weights[l].transpose())?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&self.biases[l]) {
                    *v += b;
                }
            }
            let activated = if l + 1 < layers {
                let mut a = z.clone();
                for v in a.data_mut() {
                    *v = self.activation.apply(*v);
                }
                a
            } else {
                z.clone() // linear output layer
            };
            pre.push(z);
            post.push(activated);
        }
        let y = post.last().unwrap().clone();
        Ok((y, ForwardTrace { pre, post }))
    }

    /// Output batch without keeping the trace.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        Ok(self.forward(x)?.0)
    }

    /// Backpropagates `grad_output` (∂loss/∂output, one row per sample)
    /// through the cached trace, returning gradients for every weight and
    /// bias.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &Mat) -> Result<Gradients> {
        let layers = self.weights.len();
        if trace.pre.len() != layers || trace.post.len() != layers + 1 {
            return Err(Error::Shape("trace does not match this network".into()));
        }
        let batch = trace.batch_size();
        if grad_output.rows() != batch || grad_output.cols() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                batch,
                self.output_dim()
            )));
        }
        let mut d_weights = vec![Mat::zeros(0, 0); layers];
        let mut d_biases = vec![Vec::new(); layers];
        let mut delta = grad_output.clone();
        for l in (0..layers).rev() {
            // dW = deltaᵀ · post[l], db = column sums of delta
            d_weights[l] = delta.transpose().matmul(&trace.post[l])?;
            let mut db = vec![0.0; self.dims[l + 1]];
            for i in 0..delta.rows() {
                for (acc, v) in db.iter_mut().zip(delta.row(i)) {
                    *acc += v;
                }
            }
            d_biases[l] = db;
            if l > 0 {
                let mut prev = delta.matmul(&self.weights[l])?;
                let pre = &trace.pre[l - 1];
                for (v, z) in prev.data_mut().iter_mut().zip(pre.data()) {
                    *v *= self.activation.grad(*z);
                }
                delta = prev;
            }
        }
        Ok(Gradients {
            d_weights,
            d_biases,
        })
    }

    /// Plain gradient-descent update, mostly useful for small deterministic
    /// experiments; training uses [`AdamState`].
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.d_weights) {
            for (v, d) in w.data_mut().iter_mut().zip(g.data()) {
                *v -= lr * d;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.d_biases) {
            for (v, d) in b.iter_mut().zip(g) {
                *v -= lr * d;
            }
        }
    }

    /// Writes a versioned checkpoint; [`Mlp::load`] round-trips it
    /// bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            network: self.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Mlp> {
        let text = fs::read_to_string(path)?;
        let file: Checkpoint = serde_json::from_str(&text)?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint version {} unsupported (expected {})",
                file.format_version, CHECKPOINT_VERSION
            )));
        }
        let net = file.network;
        // shapes must chain correctly
        if net.weights.len() != net.dims.len() - 1 || net.biases.len() != net.weights.len() {
            return Err(Error::Schema("checkpoint layer count mismatch".into()));
        }
        for (l, w) in net.weights.iter().enumerate() {
            if w.rows() != net.dims[l + 1] || w.cols() != net.dims[l] || net.biases[l].len() != w.rows()
            {
                return Err(Error::Schema(format!("checkpoint layer {l} has wrong shape")));
            }
        }
        Ok(net)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    network: Mlp,
}

/// Adam optimizer state: first/second moment accumulators mirroring the
/// network parameters, plus the step counter for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_weights: Vec<Mat>,
    v_weights: Vec<Mat>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> AdamState {
        AdamState {
            m_weights: net.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            v_weights: net.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            m_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction. Rejects non-finite gradients
    /// before touching any parameter.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.d_weights.len() != net.weights.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let hp = AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            learning_rate: self.learning_rate,
            corr1: 1.0 - self.beta1.powi(t),
            corr2: 1.0 - self.beta2.powi(t),
        };
        for l in 0..net.weights.len() {
            if grads.d_weights[l].rows() != net.weights[l].rows()
                || grads.d_weights[l].cols() != net.weights[l].cols()
                || grads.d_biases[l].len() != net.biases[l].len()
            {
                return Err(Error::Shape(format!("gradient shape mismatch at layer {l}")));
            }
            update_slice(
                net.weights[l].data_mut(),
                grads.d_weights[l].data(),
                self.m_weights[l].data_mut(),
                self.v_weights[l].data_mut(),
                &hp,
            );
            update_slice(
                &mut net.biases[l],
                &grads.d_biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
                &hp,
            );
        }
        Ok(())
    }
}

struct AdamHyper {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    learning_rate: f64,
    corr1: f64,
    corr2: f64,
}

fn update_slice(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], hp: &AdamHyper) {
    for i in 0..params.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grads[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
        let m_hat = m[i] / hp.corr1;
        let v_hat = v[i] / hp.corr2;
        params[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = Mlp::init(&[3, 12, 12, 3], Activation::Relu, 42).unwrap();
        let b = Mlp::init(&[3, 12, 12, 3], Activation::Relu, 42).unwrap();
        for (wa, wb) in a.weights().iter().zip(b.weights()) {
            for (x, y) in wa.data().iter().zip(wb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let c = Mlp::init(&[3, 12, 12, 3], Activation::Relu, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn table_architectures_have_expected_shapes() {
        let reactor = Mlp::init(&[3, 12, 12, 3], Activation::Relu, 0).unwrap();
        assert_eq!(reactor.num_weight_layers(), 3);
        assert_eq!(reactor.weights()[0].rows(), 12);
        let plant = Mlp::init(&[4, 32, 32, 5], Activation::Relu, 0).unwrap();
        assert_eq!(plant.weights()[1].rows(), 32);
        assert_eq!(plant.weights()[2].rows(), 5);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(Mlp::init(&[3], Activation::Relu, 0).is_err());
        assert!(Mlp::init(&[3, 0, 2], Activation::Relu, 0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Mlp::init(&[2, 4, 3], Activation::Relu, 0).unwrap();
        for w in &mut net.weights {
            for v in w.data_mut() {
                *v = 0.0;
            }
        }
        let x = Mat::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let y = net.predict(&x).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_affine_map() {
        let mut net = Mlp::init(&[2, 2], Activation::Tanh, 7).unwrap();
        net.weights[0] = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        net.biases[0] = vec![0.1, -0.2];
        let x = Mat::from_rows(&[vec![3.0, -1.0]]).unwrap();
        let y = net.predict(&x).unwrap();
        assert!((y[(0, 0)] - (3.0 - 2.0 + 0.1)).abs() < 1e-15);
        assert!((y[(0, 1)] - (-3.0 - 0.5 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let net = Mlp::init(&[2, 2], Activation::Relu, 0).unwrap();
        let mut x = Mat::zeros(1, 2);
        x.data_mut()[1] = f64::INFINITY;
        assert!(matches!(net.predict(&x), Err(Error::Data(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let net = Mlp::init(&[3, 5, 2], Activation::Tanh, 1).unwrap();
        let x = Mat::from_rows(&[vec![0.3, -0.1, 0.9]]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let g = net.backward(&trace, &Mat::zeros(1, 2)).unwrap();
        assert!(g.d_weights.iter().all(|w| w.max_abs() == 0.0));
        assert!(g.d_biases.iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_layer_mse_gradient_is_error_times_input() {
        // loss = ½‖ŷ - y‖² on one sample: ∂/∂W = (ŷ-y)·xᵀ
        let mut net = Mlp::init(&[2, 2], Activation::Tanh, 3).unwrap();
        net.weights[0] = Mat::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.0]]).unwrap();
        net.biases[0] = vec![0.0, 0.0];
        let x = Mat::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let target = [0.0, 1.0];
        let (y, trace) = net.forward(&x).unwrap();
        let err = [y[(0, 0)] - target[0], y[(0, 1)] - target[1]];
        let upstream = Mat::from_rows(&[err.to_vec()]).unwrap();
        let g = net.backward(&trace, &upstream).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = err[i] * x[(0, j)];
                assert!((g.d_weights[0][(i, j)] - expected).abs() < 1e-14);
            }
            assert!((g.d_biases[0][i] - err[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = Mlp::init(&[2, 3, 1], Activation::Relu, 5).unwrap();
        let before = net.clone();
        let grads = Gradients {
            d_weights: net.weights().iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            d_biases: net.biases().iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        let mut adam = AdamState::new(&net, 1e-4);
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = Mlp::init(&[1, 1], Activation::Relu, 0).unwrap();
        net.weights[0] = Mat::from_rows(&[vec![1.0]]).unwrap();
        net.biases[0] = vec![0.0];
        let grads = Gradients {
            d_weights: vec![Mat::from_rows(&[vec![1.0]]).unwrap()],
            d_biases: vec![vec![0.0]],
        };
        let mut adam = AdamState::new(&net, 1e-4);
        adam.step(&mut net, &grads).unwrap();
        let delta = 1.0 - net.weights[0][(0, 0)];
        assert!((delta - 1e-4).abs() < 1e-7);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut net = Mlp::init(&[1, 1], Activation::Relu, 0).unwrap();
        let mut bad = Mat::zeros(1, 1);
        bad.data_mut()[0] = f64::NAN;
        let grads = Gradients {
            d_weights: vec![bad],
            d_biases: vec![vec![0.0]],
        };
        let mut adam = AdamState::new(&net, 1e-4);
        assert!(matches!(
            adam.step(&mut net, &grads),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let net = Mlp::init(&[2, 3, 2], Activation::Relu, 1).unwrap();
        let dir = std::env::temp_dir().join("kktnn_ckpt_version_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        net.save(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"format_version\": 1", "\"format_version\": 999", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Mlp::load(&path), Err(Error::Schema(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let net = Mlp::init(&[3, 12, 12, 3], Activation::Tanh, 99).unwrap();
        let dir = std::env::temp_dir().join("kktnn_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        net.save(&path).unwrap();
        let loaded = Mlp::load(&path).unwrap();
        assert_eq!(loaded.dims(), net.dims());
        assert_eq!(loaded.activation(), net.activation());
        for (a, b) in loaded.weights().iter().zip(net.weights()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
