//! TD learning of the feature-space successor representation with a frozen
//! target network.

use ndarray::{Array1, Array2};

use super::srdice::ExpectationMode;
use super::KeyInterner;
use crate::approx::{Activation, InitScheme, Mlp, Optimizer, OptimizerSpec, OutputActivation};
use crate::dataset::Dataset;
use crate::features::{FeatureMap, SrModel};
use crate::mdp::Policy;
use crate::rng::{self, Prng};
use crate::{Error, Result};

/// Parameterization of the learned SR.
#[derive(Debug, Clone)]
pub enum SrModelKind {
    /// One parameter row per state-action pair (tabular in the pairs,
    /// F-dimensional in the accumulated features).
    Table,
    /// Network from the input features to the F-dimensional SR.
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl SrModelKind {
    /// The two-hidden-layer tanh network used by the random-walk runs.
    pub fn small_tanh() -> Self {
        SrModelKind::Mlp {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SrTdConfig {
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerSpec,
    /// Copy the online parameters into the target every this many steps;
    /// `None` never updates the target (fixed-random-target diagnostic mode).
    pub target_update_every: Option<usize>,
    pub gamma: f64,
    pub seed: u64,
    /// Bootstrap-action treatment: draw a' from the policy per minibatch
    /// element, or sum the target over actions weighted by the policy.
    /// Sampling leaves a constant-step-size noise floor; the exact sum is
    /// the cheap, noise-free choice on small action spaces.
    pub next_action: ExpectationMode,
}

#[derive(Clone)]
enum SrParams {
    Table(Array2<f64>),
    Net(Mlp),
}

impl SrParams {
    fn params(&self) -> &[f64] {
        match self {
            SrParams::Table(t) => t.as_slice().unwrap(),
            SrParams::Net(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            SrParams::Table(t) => t.as_slice_mut().unwrap(),
            SrParams::Net(m) => m.params_mut(),
        }
    }

    fn copy_from(&mut self, other: &SrParams) {
        match (self, other) {
            (SrParams::Table(a), SrParams::Table(b)) => a.assign(b),
            (SrParams::Net(a), SrParams::Net(b)) => a.set_params(b.params()),
            _ => unreachable!("online and target share a kind"),
        }
    }

    /// psi rows for the given state-action keys; `inputs` holds the
    /// per-pair network inputs.
    fn psi_rows(&self, keys: &[usize], inputs: &Array2<f64>, f_dim: usize) -> Array2<f64> {
        match self {
            SrParams::Table(t) => {
                let mut out = Array2::zeros((keys.len(), f_dim));
                for (slot, &k) in keys.iter().enumerate() {
                    out.row_mut(slot).assign(&t.row(k));
                }
                out
            }
            SrParams::Net(m) => {
                let mut x = Array2::zeros((keys.len(), inputs.ncols()));
                for (slot, &k) in keys.iter().enumerate() {
                    x.row_mut(slot).assign(&inputs.row(k));
                }
                m.forward_batch(&x)
            }
        }
    }
}

/// Snapshot of a learned SR, usable wherever an exact one is.
#[derive(Clone)]
pub struct LearnedSr {
    params: SrParams,
    inputs: Array2<f64>,
    n_actions: usize,
    f_dim: usize,
}

impl SrModel for LearnedSr {
    fn feature_dim(&self) -> usize {
        self.f_dim
    }

    fn psi(&self, s: usize, a: usize) -> Array1<f64> {
        let key = s * self.n_actions + a;
        match &self.params {
            SrParams::Table(t) => t.row(key).to_owned(),
            SrParams::Net(m) => m.forward_single(&self.inputs.row(key).to_owned()),
        }
    }
}

/// A sampled TD minibatch: transition indices plus the next action drawn
/// from the target policy for each element (empty in exact mode, where the
/// action sum is taken analytically).
pub struct SrTdBatch {
    pub idx: Vec<usize>,
    pub next_actions: Vec<usize>,
}

/// Step-wise SR TD learner; the experiment runner drives it and snapshots
/// ratios between steps.
pub struct SrTdLearner {
    online: SrParams,
    target: SrParams,
    optimizer: Optimizer,
    config: SrTdConfig,
    rng: Prng,
    steps_done: usize,
    last_loss: f64,
    // dataset views
    sa_keys: Vec<usize>,
    next_states: Vec<usize>,
    pi: Policy,
    inputs: Array2<f64>,
    phi_targets: Array2<f64>,
    f_dim: usize,
    n_actions: usize,
    interner_sa: KeyInterner,
    interner_next: KeyInterner,
}

impl SrTdLearner {
    pub fn new(
        dataset: &Dataset,
        map: &FeatureMap,
        pi: &Policy,
        config: SrTdConfig,
        kind: SrModelKind,
    ) -> Result<Self> {
        dataset.require_transitions()?;
        if config.batch == 0 {
            return Err(Error::bad_param("batch", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::bad_param("gamma", "must be in [0, 1)"));
        }
        let n_states = map.n_states();
        let n_actions = map.n_actions();
        if pi.n_states() != n_states || pi.n_actions() != n_actions {
            return Err(Error::DimensionMismatch(
                "policy does not match feature map dimensions".into(),
            ));
        }
        let f_dim = map.dim();
        let phi_targets = map.phi_all();
        // Network input is the same per-pair feature vector the SR
        // accumulates; the table variant indexes parameters directly.
        let inputs = phi_targets.clone();
        let mut rng = rng::master(config.seed);
        let online = match &kind {
            SrModelKind::Table => SrParams::Table(Array2::zeros((n_states * n_actions, f_dim))),
            SrModelKind::Mlp { hidden, activation } => {
                let mut sizes = vec![inputs.ncols()];
                sizes.extend_from_slice(hidden);
                sizes.push(f_dim);
                SrParams::Net(Mlp::new(
                    &sizes,
                    *activation,
                    OutputActivation::Identity,
                    InitScheme::UniformFanIn,
                    &mut rng,
                )?)
            }
        };
        let target = online.clone();
        Ok(SrTdLearner {
            online,
            target,
            optimizer: Optimizer::new(config.optimizer)?,
            config,
            rng,
            steps_done: 0,
            last_loss: f64::NAN,
            sa_keys: dataset
                .transitions
                .iter()
                .map(|t| t.s * n_actions + t.a)
                .collect(),
            next_states: dataset.transitions.iter().map(|t| t.s_next).collect(),
            pi: pi.clone(),
            inputs,
            phi_targets,
            f_dim,
            n_actions,
            interner_sa: KeyInterner::new(n_states * n_actions),
            interner_next: KeyInterner::new(n_states * n_actions),
        })
    }

    pub fn config(&self) -> &SrTdConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Sample a minibatch: transition indices uniform with replacement, next
    /// actions drawn from the target policy per element (sampled mode only).
    pub fn sample_batch(&mut self) -> SrTdBatch {
        let n = self.sa_keys.len();
        let mut idx = Vec::with_capacity(self.config.batch);
        let mut next_actions = Vec::new();
        for _ in 0..self.config.batch {
            let i = rng::sample_index(&mut self.rng, n);
            idx.push(i);
            if self.config.next_action == ExpectationMode::Sampled {
                next_actions.push(self.pi.sample_action(&mut self.rng, self.next_states[i]));
            }
        }
        SrTdBatch { idx, next_actions }
    }

    /// TD loss and parameter gradient for a batch (target network frozen).
    ///
    /// Loss is the mean over batch elements of the squared residual
    /// `phi(s,a) + gamma psi'(s',a') - psi(s,a)` summed over feature
    /// dimensions.
    pub fn loss_and_grads(&mut self, batch: &SrTdBatch) -> (f64, Vec<f64>) {
        let n = batch.idx.len();
        let norm = 1.0 / n as f64;
        self.interner_sa.reset();
        self.interner_next.reset();
        let mut sa_slots = Vec::with_capacity(n);
        // Per-element bootstrap terms as (target slot, weight) pairs.
        let mut next_pairs: Vec<(usize, f64)> = Vec::new();
        let mut next_offsets = Vec::with_capacity(n + 1);
        next_offsets.push(0);
        for (j, &i) in batch.idx.iter().enumerate() {
            sa_slots.push(self.interner_sa.intern(self.sa_keys[i]));
            match self.config.next_action {
                ExpectationMode::Sampled => {
                    let key = self.next_states[i] * self.n_actions + batch.next_actions[j];
                    next_pairs.push((self.interner_next.intern(key), 1.0));
                }
                ExpectationMode::Exact => {
                    let s_next = self.next_states[i];
                    for a_next in 0..self.n_actions {
                        let p = self.pi.probs()[[s_next, a_next]];
                        if p != 0.0 {
                            let key = s_next * self.n_actions + a_next;
                            next_pairs.push((self.interner_next.intern(key), p));
                        }
                    }
                }
            }
            next_offsets.push(next_pairs.len());
        }
        let psi_online =
            self.online
                .psi_rows(self.interner_sa.keys(), &self.inputs, self.f_dim);
        let psi_target =
            self.target
                .psi_rows(self.interner_next.keys(), &self.inputs, self.f_dim);

        let mut upstream = Array2::<f64>::zeros((self.interner_sa.len(), self.f_dim));
        let mut loss = 0.0;
        for j in 0..n {
            let key = self.sa_keys[batch.idx[j]];
            let sa = sa_slots[j];
            let pairs = &next_pairs[next_offsets[j]..next_offsets[j + 1]];
            for d in 0..self.f_dim {
                let mut bootstrap = 0.0;
                for &(slot, weight) in pairs {
                    bootstrap += weight * psi_target[[slot, d]];
                }
                let err = psi_online[[sa, d]]
                    - (self.phi_targets[[key, d]] + self.config.gamma * bootstrap);
                loss += err * err * norm;
                upstream[[sa, d]] += 2.0 * err * norm;
            }
        }

        let grads = match &self.online {
            SrParams::Table(t) => {
                let mut g = vec![0.0; t.len()];
                for (slot, &key) in self.interner_sa.keys().iter().enumerate() {
                    for d in 0..self.f_dim {
                        g[key * self.f_dim + d] = upstream[[slot, d]];
                    }
                }
                g
            }
            SrParams::Net(m) => {
                let x = self.interner_sa.gather_rows(&self.inputs);
                let tape = m.forward_tape(&x);
                m.backward(&tape, &upstream).0
            }
        };
        (loss, grads)
    }

    /// One TD step: sample, update, refresh the target on schedule.
    pub fn step(&mut self) -> f64 {
        let batch = self.sample_batch();
        let (loss, grads) = self.loss_and_grads(&batch);
        self.optimizer.step(self.online.params_mut(), &grads);
        self.steps_done += 1;
        if let Some(every) = self.config.target_update_every {
            if every > 0 && self.steps_done % every == 0 {
                self.target.copy_from(&self.online);
            }
        }
        self.last_loss = loss;
        loss
    }

    pub fn run_all(&mut self) {
        for _ in self.steps_done..self.config.steps {
            self.step();
        }
    }

    /// Snapshot of the current SR.
    pub fn sr(&self) -> LearnedSr {
        LearnedSr {
            params: self.online.clone(),
            inputs: self.inputs.clone(),
            n_actions: self.n_actions,
            f_dim: self.f_dim,
        }
    }

    pub(crate) fn set_online_params(&mut self, params: &[f64]) {
        self.online.params_mut().copy_from_slice(params);
    }

    pub(crate) fn online_params(&self) -> Vec<f64> {
        self.online.params().to_vec()
    }
}

/// Run TD to completion and return the learned SR.
pub fn learn_sr_td(
    dataset: &Dataset,
    map: &FeatureMap,
    pi: &Policy,
    config: SrTdConfig,
    kind: SrModelKind,
) -> Result<LearnedSr> {
    let mut learner = SrTdLearner::new(dataset, map, pi, config, kind)?;
    learner.run_all();
    Ok(learner.sr())
}
