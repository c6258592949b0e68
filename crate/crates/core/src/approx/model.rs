//! Linear models and multilayer perceptrons with hand-written backprop.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::Prng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Relu,
}

/// Weight initialization scheme. Biases are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    UniformFanIn,
    /// Standard normal draws (randomized-reward networks).
    StandardNormal,
}

/// Fully connected network. Parameters live in one flat vector, laid out per
/// layer as the weight matrix (out x in, row major) followed by the bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    output_activation: OutputActivation,
    params: Vec<f64>,
}

/// Cached per-layer outputs from a forward pass, consumed by `backward`.
pub struct MlpTape {
    /// layer_outputs[0] is the input batch; the last entry is the output.
    layer_outputs: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.layer_outputs.last().unwrap()
    }
}

impl Mlp {
    pub fn new(
        sizes: &[usize],
        activation: Activation,
        output_activation: OutputActivation,
        init: InitScheme,
        rng: &mut Prng,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::bad_param("sizes", "need at least input and output"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::bad_param("sizes", "layer sizes must be positive"));
        }
        let n_params: usize = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let mut params = vec![0.0; n_params];
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in params.iter_mut().skip(offset).take(fan_out * fan_in) {
                *p = match init {
                    InitScheme::UniformFanIn => rng.random_range(-bound..bound),
                    InitScheme::StandardNormal => standard_normal(rng),
                };
            }
            offset += fan_out * fan_in + fan_out; // biases stay zero
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activation,
            output_activation,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// (weight view, bias view) of layer `l`.
    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let mut offset = 0;
        for w in self.sizes.windows(2).take(l) {
            offset += w[1] * w[0] + w[1];
        }
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape(
            (fan_out, fan_in),
            &self.params[offset..offset + fan_out * fan_in],
        )
        .unwrap();
        let b = ArrayView1::from_shape(
            fan_out,
            &self.params[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out],
        )
        .unwrap();
        (w, b)
    }

    fn apply_hidden(&self, z: &mut Array2<f64>) {
        match self.activation {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    fn apply_output(&self, z: &mut Array2<f64>) {
        match self.output_activation {
            OutputActivation::Identity => {}
            OutputActivation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            OutputActivation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_tape(x).layer_outputs.pop().unwrap()
    }

    /// Forward pass that keeps per-layer outputs for backprop.
    pub fn forward_tape(&self, x: &Array2<f64>) -> MlpTape {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let mut outputs = Vec::with_capacity(self.n_layers() + 1);
        outputs.push(x.clone());
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let mut z = outputs[l].dot(&w.t());
            z += &b;
            if l + 1 == self.n_layers() {
                self.apply_output(&mut z);
            } else {
                self.apply_hidden(&mut z);
            }
            outputs.push(z);
        }
        MlpTape {
            layer_outputs: outputs,
        }
    }

    pub fn forward_single(&self, x: &Array1<f64>) -> Array1<f64> {
        let batch = x.view().insert_axis(Axis(0)).to_owned();
        self.forward_batch(&batch).row(0).to_owned()
    }

    fn hidden_deriv(&self, y: f64) -> f64 {
        match self.activation {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn output_deriv(&self, y: f64) -> f64 {
        match self.output_activation {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => y * (1.0 - y),
            OutputActivation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Backpropagate `upstream` (dLoss/dOutput, one row per sample) through
    /// the tape. Returns flat parameter gradients summed over the batch and
    /// the gradient with respect to the input batch.
    pub fn backward(&self, tape: &MlpTape, upstream: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let n_layers = self.n_layers();
        let out = tape.output();
        assert_eq!(upstream.dim(), out.dim(), "upstream shape mismatch");

        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        delta.zip_mut_with(out, |d, y| *d *= self.output_deriv(*y));

        for l in (0..n_layers).rev() {
            let (w, _) = self.layer(l);
            let input = &tape.layer_outputs[l];
            let dw = delta.t().dot(input); // (out, in)
            let db = delta.sum_axis(Axis(0));

            let mut offset = 0;
            for ws in self.sizes.windows(2).take(l) {
                offset += ws[1] * ws[0] + ws[1];
            }
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            grads[offset..offset + fan_out * fan_in]
                .copy_from_slice(dw.as_slice().expect("row-major grad"));
            grads[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out]
                .copy_from_slice(db.as_slice().unwrap());

            let prev = delta.dot(&w); // (batch, in)
            if l > 0 {
                let mut next_delta = prev;
                next_delta.zip_mut_with(input, |d, y| *d *= self.hidden_deriv(*y));
                delta = next_delta;
            } else {
                return (grads, prev);
            }
        }
        unreachable!("loop always returns at layer 0")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mlp: Mlp = serde_json::from_str(text)?;
        let expected: usize = mlp.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        if mlp.sizes.len() < 2 || mlp.params.len() != expected {
            return Err(Error::InvalidConfig(
                "checkpoint parameter count does not match layer sizes".into(),
            ));
        }
        Ok(mlp)
    }
}

fn standard_normal(rng: &mut Prng) -> f64 {
    // Box-Muller; uses two uniforms per draw, which keeps the stream layout
    // obvious and platform-stable.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Linear function without bias: f(x) = w . x.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Array1<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            w: Array1::zeros(dim),
        }
    }

    pub fn from_weights(w: Array1<f64>) -> Self {
        LinearModel { w }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn forward(&self, x: &ArrayView1<f64>) -> f64 {
        self.w.dot(x)
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Array1<f64> {
        x.dot(&self.w)
    }

    /// d(sum_i upstream_i * f(x_i))/dw = X^T upstream.
    pub fn grad_batch(x: &Array2<f64>, upstream: &Array1<f64>) -> Array1<f64> {
        x.t().dot(upstream)
    }
}

/// Mean squared error over all entries (batch and output dims) plus the
/// matching upstream gradient `2 (pred - target) / (N * D)`.
pub fn mse_loss_and_upstream(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.dim(), target.dim());
    let n = (pred.nrows() * pred.ncols()) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let upstream = diff * (2.0 / n);
    (loss, upstream)
}

/// Max relative error between an analytic gradient and central finite
/// differences of `loss` at `params`, probing every coordinate.
///
/// Relative error uses `|a - b| / (max(|a|, |b|) + 1e-6)`; the offset keeps
/// roundoff noise from dominating near-zero gradient coordinates.
pub fn finite_diff_max_rel_err(
    loss: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = loss(&work);
        work[i] = orig - step;
        let minus = loss(&work);
        work[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        let err = (fd - analytic[i]).abs() / (fd.abs().max(analytic[i].abs()) + 1e-6);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_input(rng: &mut Prng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn linear_model_forward_and_grad() {
        let m = LinearModel::from_weights(Array1::from_vec(vec![1.0, -2.0, 0.5]));
        let x = Array1::from_vec(vec![2.0, 1.0, 4.0]);
        assert_eq!(m.forward(&x.view()), 2.0);
        let batch = Array2::from_shape_vec((2, 3), vec![1., 0., 0., 0., 1., 0.]).unwrap();
        let up = Array1::from_vec(vec![3.0, -1.0]);
        let g = LinearModel::grad_batch(&batch, &up);
        assert_eq!(g.to_vec(), vec![3.0, -1.0, 0.0]);
    }

    #[test]
    fn zero_weight_mlp_outputs_bias() {
        let mut rng = rng::master(0);
        let mut mlp = Mlp::new(
            &[3, 4, 4, 2],
            Activation::Tanh,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            &mut rng,
        )
        .unwrap();
        let zero = vec![0.0; mlp.n_params()];
        mlp.set_params(&zero);
        let x = random_input(&mut rng, 5, 3);
        let y = mlp.forward_batch(&x);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn initialization_is_fan_in_bounded_and_seeded() {
        let mut rng_a = rng::master(9);
        let mut rng_b = rng::master(9);
        let a = Mlp::new(
            &[10, 32, 32, 10],
            Activation::Tanh,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            &mut rng_a,
        )
        .unwrap();
        let b = Mlp::new(
            &[10, 32, 32, 10],
            Activation::Tanh,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            &mut rng_b,
        )
        .unwrap();
        assert_eq!(a.params(), b.params());
        let bound = 1.0 / 10f64.sqrt();
        let (w0, b0) = a.layer(0);
        assert!(w0.iter().all(|v| v.abs() <= bound));
        assert!(b0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Random MLPs with every activation pairing, scalar loss =
        // weighted sum of outputs at random probe points.
        let mut rng = rng::master(17);
        let cases = [
            (Activation::Tanh, OutputActivation::Identity),
            (Activation::Relu, OutputActivation::Identity),
            (Activation::Tanh, OutputActivation::Sigmoid),
        ];
        for (act, out_act) in cases {
            for _ in 0..4 {
                let mlp = Mlp::new(
                    &[4, 8, 8, 3],
                    act,
                    out_act,
                    InitScheme::UniformFanIn,
                    &mut rng,
                )
                .unwrap();
                let x = random_input(&mut rng, 6, 4);
                let coef = random_input(&mut rng, 6, 3);
                let tape = mlp.forward_tape(&x);
                let (grads, _) = mlp.backward(&tape, &coef);
                let mut probe = mlp.clone();
                let mut loss = |p: &[f64]| {
                    probe.set_params(p);
                    (&probe.forward_batch(&x) * &coef).sum()
                };
                let err =
                    finite_diff_max_rel_err(&mut loss, mlp.params(), &grads, 1e-5);
                assert!(err < 1e-4, "max rel err {err} for {act:?}/{out_act:?}");
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = rng::master(23);
        let mlp = Mlp::new(
            &[5, 7, 7, 2],
            Activation::Tanh,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            &mut rng,
        )
        .unwrap();
        let x = random_input(&mut rng, 3, 5);
        let coef = random_input(&mut rng, 3, 2);
        let tape = mlp.forward_tape(&x);
        let (_, dx) = mlp.backward(&tape, &coef);

        let flat: Vec<f64> = x.iter().copied().collect();
        let analytic: Vec<f64> = dx.iter().copied().collect();
        let mut loss = |p: &[f64]| {
            let xs = Array2::from_shape_vec((3, 5), p.to_vec()).unwrap();
            (&mlp.forward_batch(&xs) * &coef).sum()
        };
        let err = finite_diff_max_rel_err(&mut loss, &flat, &analytic, 1e-5);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn mse_helper_matches_definition() {
        let pred = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let target = Array2::zeros((2, 2));
        let (loss, upstream) = mse_loss_and_upstream(&pred, &target);
        assert!((loss - (1.0 + 4.0 + 9.0 + 16.0) / 4.0).abs() < 1e-12);
        assert!((upstream[[1, 1]] - 2.0 * 4.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = rng::master(2);
        let mlp = Mlp::new(
            &[3, 5, 2],
            Activation::Relu,
            OutputActivation::Sigmoid,
            InitScheme::UniformFanIn,
            &mut rng,
        )
        .unwrap();
        let text = mlp.to_json().unwrap();
        let back = Mlp::from_json(&text).unwrap();
        assert_eq!(back.params(), mlp.params());
        let x = Array1::from_vec(vec![0.3, -0.2, 0.9]);
        assert_eq!(back.forward_single(&x), mlp.forward_single(&x));
        // Truncated checkpoints are rejected.
        let bad = text.replace("\"sizes\":[3,5,2]", "\"sizes\":[3,6,2]");
        assert!(Mlp::from_json(&bad).is_err());
    }

    #[test]
    fn dimension_mismatch_panics() {
        let mut rng = rng::master(3);
        let mlp = Mlp::new(
            &[3, 4, 2],
            Activation::Tanh,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            &mut rng,
        )
        .unwrap();
        let bad = random_input(&mut rng, 2, 5);
        assert!(std::panic::catch_unwind(|| mlp.forward_batch(&bad)).is_err());
    }
}
