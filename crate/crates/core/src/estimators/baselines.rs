//! Deep-RL value baselines: SR regression (recover the reward, evaluate
//! through the SR) and TD policy evaluation with a frozen target.

use ndarray::{Array1, Array2};

use super::srdice::GRAM_CUTOFF;
use super::{estimate_return_direct, KeyInterner, SrLinearValue, ValueEstimate};
use crate::approx::{
    Activation, InitScheme, LinearModel, Mlp, Optimizer, OptimizerSpec, OutputActivation,
};
use crate::dataset::Dataset;
use crate::features::{feature_matrix, FeatureMap, SrModel};
use crate::linalg::gram_pinv;
use crate::mdp::{Discount, Policy};
use crate::rng::{self, Prng};
use crate::{Error, Result};

/// How the reward-recovery weights are fit in the SR baseline.
#[derive(Debug, Clone)]
pub enum RegressionMode {
    /// Pseudo-inverse least squares (minimum-norm on rank-deficient Grams).
    LeastSquares,
    /// Minibatch SGD on the squared reward error.
    Sgd {
        optimizer: OptimizerSpec,
        steps: usize,
        batch: usize,
        seed: u64,
    },
}

/// SR-based value baseline: fit `w` so `w . phi(s,a)` recovers the reward,
/// then evaluate `(1 - gamma) mean_{s0} E_pi[w . psi(s0, a0)]`.
pub fn deep_sr_baseline(
    dataset: &Dataset,
    sr: &dyn SrModel,
    map: &FeatureMap,
    pi: &Policy,
    gamma: Discount,
    mode: &RegressionMode,
) -> Result<(Array1<f64>, ValueEstimate)> {
    dataset.require_transitions()?;
    dataset.require_start_states()?;
    let phi = feature_matrix(map, dataset)?;
    let rewards = Array1::from_iter(dataset.transitions.iter().map(|t| t.r));
    let w = match mode {
        RegressionMode::LeastSquares => {
            let gram = phi.t().dot(&phi);
            gram_pinv(&gram, GRAM_CUTOFF)?.dot(&phi.t().dot(&rewards))
        }
        RegressionMode::Sgd {
            optimizer,
            steps,
            batch,
            seed,
        } => {
            if *batch == 0 {
                return Err(Error::bad_param("batch", "must be >= 1"));
            }
            let mut rng = rng::master(*seed);
            let mut opt = Optimizer::new(*optimizer)?;
            let mut w = Array1::<f64>::zeros(map.dim());
            let mut grad = Array1::<f64>::zeros(map.dim());
            for _ in 0..*steps {
                grad.fill(0.0);
                for _ in 0..*batch {
                    let i = rng::sample_index(&mut rng, dataset.len());
                    let row = phi.row(i);
                    let err = row.dot(&w) - rewards[i];
                    grad.scaled_add(2.0 * err / *batch as f64, &row);
                }
                opt.step(w.as_slice_mut().unwrap(), grad.as_slice().unwrap());
            }
            w
        }
    };
    let mut estimate = estimate_return_direct(
        &SrLinearValue { sr, w: &w },
        pi,
        &dataset.start_states,
        gamma,
    )?;
    estimate.method = "deep_sr".into();
    Ok((w, estimate))
}

/// Q-function parameterization for TD evaluation.
#[derive(Debug, Clone)]
pub enum QRepresentation {
    /// One parameter per state-action pair.
    Tabular,
    /// Q(s,a) = w . phi(s,a).
    Linear(FeatureMap),
    /// Q(s,a) = net(phi(s,a)).
    Mlp {
        map: FeatureMap,
        hidden: Vec<usize>,
        activation: Activation,
    },
}

#[derive(Debug, Clone)]
pub struct DeepTdConfig {
    pub steps: usize,
    pub batch: usize,
    pub optimizer: OptimizerSpec,
    pub target_update_every: Option<usize>,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Clone)]
enum QParams {
    Table(Array2<f64>),
    Linear(LinearModel),
    Net(Mlp),
}

impl QParams {
    fn params(&self) -> &[f64] {
        match self {
            QParams::Table(t) => t.as_slice().unwrap(),
            QParams::Linear(l) => l.w.as_slice().unwrap(),
            QParams::Net(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            QParams::Table(t) => t.as_slice_mut().unwrap(),
            QParams::Linear(l) => l.w.as_slice_mut().unwrap(),
            QParams::Net(m) => m.params_mut(),
        }
    }

    fn copy_from(&mut self, other: &QParams) {
        self.params_mut().copy_from_slice(other.params());
    }

    fn q_keys(&self, keys: &[usize], inputs: Option<&Array2<f64>>, n_actions: usize) -> Vec<f64> {
        match self {
            QParams::Table(t) => keys.iter().map(|&k| t[[k / n_actions, k % n_actions]]).collect(),
            QParams::Linear(l) => {
                let inputs = inputs.expect("linear Q needs features");
                keys.iter().map(|&k| l.w.dot(&inputs.row(k))).collect()
            }
            QParams::Net(m) => {
                let inputs = inputs.expect("net Q needs features");
                let mut x = Array2::zeros((keys.len(), inputs.ncols()));
                for (slot, &k) in keys.iter().enumerate() {
                    x.row_mut(slot).assign(&inputs.row(k));
                }
                m.forward_batch(&x).column(0).to_vec()
            }
        }
    }
}

/// Step-wise TD policy evaluation with a frozen target.
pub struct DeepTdLearner {
    online: QParams,
    target: QParams,
    optimizer: Optimizer,
    config: DeepTdConfig,
    rng: Prng,
    steps_done: usize,
    last_loss: f64,
    sa_keys: Vec<usize>,
    next_states: Vec<usize>,
    rewards: Vec<f64>,
    start_states: Vec<usize>,
    pi: Policy,
    inputs: Option<Array2<f64>>,
    n_actions: usize,
    interner_sa: KeyInterner,
    interner_next: KeyInterner,
}

/// Sampled TD minibatch.
pub struct TdBatch {
    pub idx: Vec<usize>,
    pub next_actions: Vec<usize>,
}

impl DeepTdLearner {
    pub fn new(
        dataset: &Dataset,
        pi: &Policy,
        config: DeepTdConfig,
        representation: &QRepresentation,
    ) -> Result<Self> {
        dataset.require_transitions()?;
        dataset.require_start_states()?;
        if config.batch == 0 {
            return Err(Error::bad_param("batch", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&config.gamma) {
            return Err(Error::bad_param("gamma", "must be in [0, 1)"));
        }
        let n_states = pi.n_states();
        let n_actions = pi.n_actions();
        let mut rng = rng::master(config.seed);
        let (online, inputs) = match representation {
            QRepresentation::Tabular => (QParams::Table(Array2::zeros((n_states, n_actions))), None),
            QRepresentation::Linear(map) => {
                (QParams::Linear(LinearModel::zeros(map.dim())), Some(map.phi_all()))
            }
            QRepresentation::Mlp {
                map,
                hidden,
                activation,
            } => {
                let mut sizes = vec![map.dim()];
                sizes.extend_from_slice(hidden);
                sizes.push(1);
                let net = Mlp::new(
                    &sizes,
                    *activation,
                    OutputActivation::Identity,
                    InitScheme::UniformFanIn,
                    &mut rng,
                )?;
                (QParams::Net(net), Some(map.phi_all()))
            }
        };
        let target = online.clone();
        Ok(DeepTdLearner {
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
            rewards: dataset.transitions.iter().map(|t| t.r).collect(),
            start_states: dataset.start_states.clone(),
            pi: pi.clone(),
            inputs,
            n_actions,
            interner_sa: KeyInterner::new(n_states * n_actions),
            interner_next: KeyInterner::new(n_states * n_actions),
        })
    }

    pub fn sample_batch(&mut self) -> TdBatch {
        let n = self.sa_keys.len();
        let mut idx = Vec::with_capacity(self.config.batch);
        let mut next_actions = Vec::with_capacity(self.config.batch);
        for _ in 0..self.config.batch {
            let i = rng::sample_index(&mut self.rng, n);
            idx.push(i);
            next_actions.push(self.pi.sample_action(&mut self.rng, self.next_states[i]));
        }
        TdBatch { idx, next_actions }
    }

    /// Mean squared TD error `(r + gamma Q'(s',a') - Q(s,a))^2` and its
    /// gradient in the online parameters.
    pub fn loss_and_grads(&mut self, batch: &TdBatch) -> (f64, Vec<f64>) {
        let n = batch.idx.len();
        self.interner_sa.reset();
        self.interner_next.reset();
        let mut sa_slots = Vec::with_capacity(n);
        let mut next_slots = Vec::with_capacity(n);
        for (&i, &a_next) in batch.idx.iter().zip(&batch.next_actions) {
            sa_slots.push(self.interner_sa.intern(self.sa_keys[i]));
            next_slots.push(
                self.interner_next
                    .intern(self.next_states[i] * self.n_actions + a_next),
            );
        }
        let q_online = self.online.q_keys(
            self.interner_sa.keys(),
            self.inputs.as_ref(),
            self.n_actions,
        );
        let q_target = self.target.q_keys(
            self.interner_next.keys(),
            self.inputs.as_ref(),
            self.n_actions,
        );

        let mut upstream = Array2::<f64>::zeros((self.interner_sa.len(), 1));
        let mut loss = 0.0;
        for j in 0..n {
            let i = batch.idx[j];
            let err =
                q_online[sa_slots[j]] - (self.rewards[i] + self.config.gamma * q_target[next_slots[j]]);
            loss += err * err / n as f64;
            upstream[[sa_slots[j], 0]] += 2.0 * err / n as f64;
        }

        let grads = match &self.online {
            QParams::Table(t) => {
                let mut g = vec![0.0; t.len()];
                for (slot, &key) in self.interner_sa.keys().iter().enumerate() {
                    g[key] = upstream[[slot, 0]];
                }
                g
            }
            QParams::Linear(l) => {
                let inputs = self.inputs.as_ref().unwrap();
                let mut g = vec![0.0; l.w.len()];
                for (slot, &key) in self.interner_sa.keys().iter().enumerate() {
                    let row = inputs.row(key);
                    for (gi, x) in g.iter_mut().zip(row.iter()) {
                        *gi += upstream[[slot, 0]] * x;
                    }
                }
                g
            }
            QParams::Net(m) => {
                let inputs = self.inputs.as_ref().unwrap();
                let x = self.interner_sa.gather_rows(inputs);
                let tape = m.forward_tape(&x);
                m.backward(&tape, &upstream).0
            }
        };
        (loss, grads)
    }

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

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    /// Dense Q table from the current online parameters.
    pub fn q_table(&self, n_states: usize) -> Array2<f64> {
        let keys: Vec<usize> = (0..n_states * self.n_actions).collect();
        let vals = self
            .online
            .q_keys(&keys, self.inputs.as_ref(), self.n_actions);
        Array2::from_shape_vec((n_states, self.n_actions), vals).unwrap()
    }

    /// Direct value estimate from the recorded start states.
    pub fn value_estimate(&self) -> Result<ValueEstimate> {
        let n_states = self.pi.n_states();
        let q = self.q_table(n_states);
        let mut est = estimate_return_direct(
            &q,
            &self.pi,
            &self.start_states,
            Discount::new(self.config.gamma)?,
        )?;
        est.method = "deep_td".into();
        est.diagnostics.steps = self.steps_done;
        Ok(est)
    }

    pub(crate) fn online_params(&self) -> Vec<f64> {
        self.online.params().to_vec()
    }

    pub(crate) fn set_online_params(&mut self, p: &[f64]) {
        self.online.params_mut().copy_from_slice(p);
    }
}

/// TD policy evaluation run to completion.
pub fn deep_td(
    dataset: &Dataset,
    pi: &Policy,
    config: DeepTdConfig,
    representation: &QRepresentation,
) -> Result<(ValueEstimate, Array2<f64>)> {
    let n_states = pi.n_states();
    let mut learner = DeepTdLearner::new(dataset, pi, config, representation)?;
    learner.run_all();
    Ok((learner.value_estimate()?, learner.q_table(n_states)))
}
