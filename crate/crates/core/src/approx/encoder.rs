//! Encoder-decoder feature learning.
//!
//! The encoder maps a one-hot state-action (or state) input to an F-vector;
//! three decoder heads reconstruct the next state (as a one-hot target), the
//! action, and the reward. The frozen encoder then serves as a feature map.

use ndarray::{Array1, Array2};

use super::model::{mse_loss_and_upstream, Activation, InitScheme, LinearModel, Mlp, OutputActivation};
use super::optim::{Optimizer, OptimizerSpec};
use crate::dataset::{Dataset, Transition};
use crate::features::{EncoderInput, FeatureMap};
use crate::rng::{self, Prng};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub lambda_next: f64,
    pub lambda_action: f64,
    pub lambda_reward: f64,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerSpec,
    pub seed: u64,
    pub input: EncoderInput,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
}

impl EncoderConfig {
    /// Desk-scale defaults: loss weights 1/1/0.1 and small hidden layers.
    pub fn new(feature_dim: usize, steps: usize, batch: usize, seed: u64) -> Self {
        EncoderConfig {
            feature_dim,
            lambda_next: 1.0,
            lambda_action: 1.0,
            lambda_reward: 0.1,
            steps,
            batch,
            optimizer: OptimizerSpec::adam(1e-3),
            seed,
            input: EncoderInput::OneHotStateAction,
            encoder_hidden: vec![32],
            head_hidden: vec![32],
        }
    }
}

/// Encoder plus decoder heads with jointly optimized parameters.
#[derive(Debug, Clone)]
pub struct EncoderDecoder {
    pub encoder: Mlp,
    pub next_state_head: Mlp,
    pub action_head: Mlp,
    /// Linear in the encoding, no bias.
    pub reward_head: LinearModel,
    pub lambda_next: f64,
    pub lambda_action: f64,
    pub lambda_reward: f64,
    input: EncoderInput,
    n_states: usize,
    n_actions: usize,
}

impl EncoderDecoder {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        config: &EncoderConfig,
        rng: &mut Prng,
    ) -> Result<Self> {
        let in_dim = match config.input {
            EncoderInput::OneHotStateAction => n_states * n_actions,
            EncoderInput::OneHotState => n_states,
        };
        let mut enc_sizes = vec![in_dim];
        enc_sizes.extend_from_slice(&config.encoder_hidden);
        enc_sizes.push(config.feature_dim);
        let encoder = Mlp::new(
            &enc_sizes,
            Activation::Relu,
            OutputActivation::Relu,
            InitScheme::UniformFanIn,
            rng,
        )?;
        let mut next_sizes = vec![config.feature_dim];
        next_sizes.extend_from_slice(&config.head_hidden);
        next_sizes.push(n_states);
        let next_state_head = Mlp::new(
            &next_sizes,
            Activation::Relu,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            rng,
        )?;
        let mut act_sizes = vec![config.feature_dim];
        act_sizes.extend_from_slice(&config.head_hidden);
        act_sizes.push(n_actions);
        let action_head = Mlp::new(
            &act_sizes,
            Activation::Relu,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            rng,
        )?;
        Ok(EncoderDecoder {
            encoder,
            next_state_head,
            action_head,
            reward_head: LinearModel::zeros(config.feature_dim),
            lambda_next: config.lambda_next,
            lambda_action: config.lambda_action,
            lambda_reward: config.lambda_reward,
            input: config.input,
            n_states,
            n_actions,
        })
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params()
            + self.next_state_head.n_params()
            + self.action_head.n_params()
            + self.reward_head.dim()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(self.encoder.params());
        out.extend_from_slice(self.next_state_head.params());
        out.extend_from_slice(self.action_head.params());
        out.extend(self.reward_head.w.iter());
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut at = 0;
        let n = self.encoder.n_params();
        self.encoder.set_params(&params[at..at + n]);
        at += n;
        let n = self.next_state_head.n_params();
        self.next_state_head.set_params(&params[at..at + n]);
        at += n;
        let n = self.action_head.n_params();
        self.action_head.set_params(&params[at..at + n]);
        at += n;
        self.reward_head = LinearModel::from_weights(Array1::from_vec(params[at..].to_vec()));
    }

    fn input_batch(&self, batch: &[Transition]) -> Array2<f64> {
        let in_dim = self.encoder.input_dim();
        let mut x = Array2::zeros((batch.len(), in_dim));
        for (i, t) in batch.iter().enumerate() {
            match self.input {
                EncoderInput::OneHotStateAction => x[[i, t.s * self.n_actions + t.a]] = 1.0,
                EncoderInput::OneHotState => x[[i, t.s]] = 1.0,
            }
        }
        x
    }

    /// Weighted reconstruction loss on a batch.
    pub fn loss(&self, batch: &[Transition]) -> f64 {
        self.loss_and_grads(batch).0
    }

    /// Loss plus the gradient over the joint flat parameter vector.
    pub fn loss_and_grads(&self, batch: &[Transition]) -> (f64, Vec<f64>) {
        let n = batch.len();
        assert!(n > 0, "empty batch");
        let x = self.input_batch(batch);
        let mut next_target = Array2::zeros((n, self.n_states));
        let mut action_target = Array2::zeros((n, self.n_actions));
        let mut reward_target = Array1::zeros(n);
        for (i, t) in batch.iter().enumerate() {
            next_target[[i, t.s_next]] = 1.0;
            action_target[[i, t.a]] = 1.0;
            reward_target[i] = t.r;
        }

        let enc_tape = self.encoder.forward_tape(&x);
        let phi = enc_tape.output().clone();

        let next_tape = self.next_state_head.forward_tape(&phi);
        let (next_loss, mut next_up) = mse_loss_and_upstream(next_tape.output(), &next_target);
        next_up *= self.lambda_next;
        let (next_grads, d_phi_next) = self.next_state_head.backward(&next_tape, &next_up);

        let act_tape = self.action_head.forward_tape(&phi);
        let (act_loss, mut act_up) = mse_loss_and_upstream(act_tape.output(), &action_target);
        act_up *= self.lambda_action;
        let (act_grads, d_phi_act) = self.action_head.backward(&act_tape, &act_up);

        let reward_pred = self.reward_head.forward_batch(&phi);
        let reward_diff = &reward_pred - &reward_target;
        let reward_loss = reward_diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
        let reward_up = &reward_diff * (2.0 * self.lambda_reward / n as f64);
        let reward_grads = LinearModel::grad_batch(&phi, &reward_up);
        // d phi from the reward head: outer(upstream, w).
        let mut d_phi_reward = Array2::zeros(phi.dim());
        for i in 0..n {
            if reward_up[i] != 0.0 {
                let mut row = d_phi_reward.row_mut(i);
                row.assign(&(&self.reward_head.w * reward_up[i]));
            }
        }

        let d_phi = &d_phi_next + &d_phi_act + &d_phi_reward;
        let (enc_grads, _) = self.encoder.backward(&enc_tape, &d_phi);

        let total = self.lambda_next * next_loss
            + self.lambda_action * act_loss
            + self.lambda_reward * reward_loss;
        let mut grads = Vec::with_capacity(self.n_params());
        grads.extend(enc_grads);
        grads.extend(next_grads);
        grads.extend(act_grads);
        grads.extend(reward_grads.iter());
        (total, grads)
    }

    /// Freeze the encoder into a feature map.
    pub fn into_feature_map(self) -> Result<FeatureMap> {
        FeatureMap::learned(self.encoder, self.input, self.n_states, self.n_actions)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderTrainResult {
    pub map: FeatureMap,
    pub loss_curve: Vec<f64>,
}

/// Train the encoder-decoder on minibatches (uniform with replacement) and
/// return the frozen encoder as a feature map plus the recorded loss curve.
///
/// `steps == 0` returns the seeded random initialization.
pub fn train_encoder(dataset: &Dataset, config: &EncoderConfig) -> Result<EncoderTrainResult> {
    dataset.require_transitions()?;
    if config.batch == 0 {
        return Err(Error::bad_param("batch", "must be >= 1"));
    }
    let mut rng = rng::master(config.seed);
    let mut model = EncoderDecoder::new(dataset.meta.n_states, dataset.meta.n_actions, config, &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer)?;
    let mut params = model.params_flat();
    let mut loss_curve = Vec::with_capacity(config.steps);
    let mut batch = Vec::with_capacity(config.batch);
    for _ in 0..config.steps {
        batch.clear();
        for _ in 0..config.batch {
            let idx = rng::sample_index(&mut rng, dataset.len());
            batch.push(dataset.transitions[idx]);
        }
        let (loss, grads) = model.loss_and_grads(&batch);
        loss_curve.push(loss);
        optimizer.step(&mut params, &grads);
        model.set_params_flat(&params);
    }
    Ok(EncoderTrainResult {
        map: model.into_feature_map()?,
        loss_curve,
    })
}
