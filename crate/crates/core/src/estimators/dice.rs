//! Minimax density-ratio baselines: DualDICE and GradientDICE.
//!
//! Both learn a ratio network `w` against an auxiliary network `f` (plus a
//! scalar `u` for GradientDICE) by alternating single gradient updates, one
//! shared minibatch per time step. Network evaluation deduplicates repeated
//! state-action inputs within a batch, which changes nothing mathematically
//! but keeps small-state-space runs cheap.

use ndarray::Array2;

use super::srdice::ExpectationMode;
use super::{KeyInterner, NetRatio};
use crate::approx::{Activation, InitScheme, Mlp, Optimizer, OptimizerSpec, OutputActivation};
use crate::dataset::Dataset;
use crate::features::FeatureMap;
use crate::mdp::Policy;
use crate::rng::{self, Prng};
use crate::{Error, Result};

/// Runs whose objective exceeds this magnitude (or leaves the finite range)
/// are recorded as diverged rather than crashing the harness.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct DiceConfig {
    pub steps: usize,
    pub batch: usize,
    pub f_optimizer: OptimizerSpec,
    pub w_optimizer: OptimizerSpec,
    /// GradientDICE's scalar normalization variable.
    pub u_optimizer: OptimizerSpec,
    /// GradientDICE's normalization penalty weight.
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Start-action treatment in the `f(s0, a0)` terms.
    pub start_mode: ExpectationMode,
    /// Architecture shared by `f` and `w`.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl DiceConfig {
    /// Random-walk defaults: two hidden tanh layers of 32, SGD everywhere.
    pub fn toy(lr_nets: f64, lr_u: f64, gamma: f64, steps: usize, batch: usize, seed: u64) -> Self {
        DiceConfig {
            steps,
            batch,
            f_optimizer: OptimizerSpec::sgd(lr_nets),
            w_optimizer: OptimizerSpec::sgd(lr_nets),
            u_optimizer: OptimizerSpec::sgd(lr_u),
            lambda: 1.0,
            gamma,
            seed,
            start_mode: ExpectationMode::Sampled,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
        }
    }
}

/// One shared minibatch: transition indices, next actions drawn from the
/// target policy, and weighted start-state terms (one weight per action in
/// exact mode, a single sampled action otherwise).
pub struct DiceBatch {
    pub idx: Vec<usize>,
    pub next_actions: Vec<usize>,
    /// Flattened (state-action key, weight) start entries; weights per start
    /// sample sum to 1.
    pub start_entries: Vec<(usize, f64)>,
    pub n_start: usize,
}

/// Dataset views shared by both learners.
struct DiceData {
    sa_keys: Vec<usize>,
    next_states: Vec<usize>,
    start_pool: Vec<usize>,
    pi: Policy,
    inputs: Array2<f64>,
    n_actions: usize,
}

impl DiceData {
    fn new(dataset: &Dataset, map: &FeatureMap, pi: &Policy) -> Result<Self> {
        dataset.require_transitions()?;
        dataset.require_start_states()?;
        if map.n_states() != pi.n_states() || map.n_actions() != pi.n_actions() {
            return Err(Error::DimensionMismatch(
                "feature map does not match policy dimensions".into(),
            ));
        }
        Ok(DiceData {
            sa_keys: dataset
                .transitions
                .iter()
                .map(|t| t.s * pi.n_actions() + t.a)
                .collect(),
            next_states: dataset.transitions.iter().map(|t| t.s_next).collect(),
            start_pool: dataset.start_states.clone(),
            pi: pi.clone(),
            inputs: map.phi_all(),
            n_actions: pi.n_actions(),
        })
    }

    fn sample_batch(&self, rng: &mut Prng, batch: usize, start_mode: ExpectationMode) -> DiceBatch {
        let n = self.sa_keys.len();
        let mut idx = Vec::with_capacity(batch);
        let mut next_actions = Vec::with_capacity(batch);
        for _ in 0..batch {
            let i = rng::sample_index(rng, n);
            idx.push(i);
            next_actions.push(self.pi.sample_action(rng, self.next_states[i]));
        }
        let mut start_entries = Vec::new();
        for _ in 0..batch {
            let s0 = self.start_pool[rng::sample_index(rng, self.start_pool.len())];
            match start_mode {
                ExpectationMode::Sampled => {
                    let a0 = self.pi.sample_action(rng, s0);
                    start_entries.push((s0 * self.n_actions + a0, 1.0));
                }
                ExpectationMode::Exact => {
                    for a0 in 0..self.n_actions {
                        let p = self.pi.probs()[[s0, a0]];
                        if p != 0.0 {
                            start_entries.push((s0 * self.n_actions + a0, p));
                        }
                    }
                }
            }
        }
        DiceBatch {
            idx,
            next_actions,
            start_entries,
            n_start: batch,
        }
    }

    fn net(&self, config: &DiceConfig, rng: &mut Prng) -> Result<Mlp> {
        let mut sizes = vec![self.inputs.ncols()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(1);
        Mlp::new(
            &sizes,
            config.activation,
            OutputActivation::Identity,
            InitScheme::UniformFanIn,
            rng,
        )
    }

    /// Forward a network over the distinct keys of an interner.
    fn forward_keys(&self, net: &Mlp, interner: &KeyInterner) -> Vec<f64> {
        let x = interner.gather_rows(&self.inputs);
        net.forward_batch(&x).column(0).to_vec()
    }
}

/// DualDICE: `min_f max_w E[w (f - gamma f') - 0.5 w^2] - (1-gamma) E[f0]`.
pub struct DualDiceLearner {
    f: Mlp,
    w: Mlp,
    opt_f: Optimizer,
    opt_w: Optimizer,
    config: DiceConfig,
    data: DiceData,
    rng: Prng,
    steps_done: usize,
    diverged_at: Option<usize>,
    last_objective: f64,
    map: FeatureMap,
}

impl DualDiceLearner {
    pub fn new(dataset: &Dataset, map: &FeatureMap, pi: &Policy, config: DiceConfig) -> Result<Self> {
        let data = DiceData::new(dataset, map, pi)?;
        let mut rng = rng::master(config.seed);
        let f = data.net(&config, &mut rng)?;
        let w = data.net(&config, &mut rng)?;
        Ok(DualDiceLearner {
            opt_f: Optimizer::new(config.f_optimizer)?,
            opt_w: Optimizer::new(config.w_optimizer)?,
            f,
            w,
            config,
            data,
            rng,
            steps_done: 0,
            diverged_at: None,
            last_objective: f64::NAN,
            map: map.clone(),
        })
    }

    pub fn sample_batch(&mut self) -> DiceBatch {
        self.data
            .sample_batch(&mut self.rng, self.config.batch, self.config.start_mode)
    }

    /// Interned per-element views used by the objective and both gradients.
    fn views(&self, batch: &DiceBatch) -> DualDiceViews {
        let mut f_in = KeyInterner::new(self.data.inputs.nrows());
        let mut w_in = KeyInterner::new(self.data.inputs.nrows());
        let mut sa_f = Vec::with_capacity(batch.idx.len());
        let mut sa_w = Vec::with_capacity(batch.idx.len());
        let mut next_f = Vec::with_capacity(batch.idx.len());
        for (&i, &a_next) in batch.idx.iter().zip(&batch.next_actions) {
            let sa_key = self.data.sa_keys[i];
            sa_f.push(f_in.intern(sa_key));
            sa_w.push(w_in.intern(sa_key));
            next_f.push(f_in.intern(self.data.next_states[i] * self.data.n_actions + a_next));
        }
        let start_f: Vec<usize> = batch
            .start_entries
            .iter()
            .map(|&(key, _)| f_in.intern(key))
            .collect();
        let f_vals = self.data.forward_keys(&self.f, &f_in);
        let w_vals = self.data.forward_keys(&self.w, &w_in);
        DualDiceViews {
            f_in,
            w_in,
            sa_f,
            sa_w,
            next_f,
            start_f,
            f_vals,
            w_vals,
        }
    }

    /// Saddle objective at the current parameters.
    pub fn objective(&self, batch: &DiceBatch) -> f64 {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mut acc = 0.0;
        for j in 0..batch.idx.len() {
            let w = v.w_vals[v.sa_w[j]];
            let residual = v.f_vals[v.sa_f[j]] - self.config.gamma * v.f_vals[v.next_f[j]];
            acc += w * residual - 0.5 * w * w;
        }
        let mut start = 0.0;
        for (slot, &(_, weight)) in v.start_f.iter().zip(&batch.start_entries) {
            start += weight * v.f_vals[*slot];
        }
        acc / n - (1.0 - self.config.gamma) * start / batch.n_start as f64
    }

    /// dJ/d(f params) at the current parameters.
    pub fn f_grads(&self, batch: &DiceBatch) -> Vec<f64> {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mut upstream = Array2::<f64>::zeros((v.f_in.len(), 1));
        for j in 0..batch.idx.len() {
            let w = v.w_vals[v.sa_w[j]];
            upstream[[v.sa_f[j], 0]] += w / n;
            upstream[[v.next_f[j], 0]] -= self.config.gamma * w / n;
        }
        let start_scale = (1.0 - self.config.gamma) / batch.n_start as f64;
        for (slot, &(_, weight)) in v.start_f.iter().zip(&batch.start_entries) {
            upstream[[*slot, 0]] -= start_scale * weight;
        }
        let x = v.f_in.gather_rows(&self.data.inputs);
        let tape = self.f.forward_tape(&x);
        self.f.backward(&tape, &upstream).0
    }

    /// dJ/d(w params) at the current parameters.
    pub fn w_grads(&self, batch: &DiceBatch) -> Vec<f64> {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mut upstream = Array2::<f64>::zeros((v.w_in.len(), 1));
        for j in 0..batch.idx.len() {
            let w = v.w_vals[v.sa_w[j]];
            let residual = v.f_vals[v.sa_f[j]] - self.config.gamma * v.f_vals[v.next_f[j]];
            upstream[[v.sa_w[j], 0]] += (residual - w) / n;
        }
        let x = v.w_in.gather_rows(&self.data.inputs);
        let tape = self.w.forward_tape(&x);
        self.w.backward(&tape, &upstream).0
    }

    /// One time step: update `f` (descent), then `w` (ascent), on a shared
    /// minibatch. No-op after divergence.
    pub fn step(&mut self) -> f64 {
        if self.diverged_at.is_some() {
            self.steps_done += 1;
            return self.last_objective;
        }
        let batch = self.sample_batch();
        let gf = self.f_grads(&batch);
        self.opt_f.step(self.f.params_mut(), &gf);
        let mut gw = self.w_grads(&batch);
        for g in &mut gw {
            *g = -*g;
        }
        self.opt_w.step(self.w.params_mut(), &gw);
        let objective = self.objective(&batch);
        self.steps_done += 1;
        if !objective.is_finite() || objective.abs() > DIVERGENCE_THRESHOLD {
            self.diverged_at = Some(self.steps_done);
        }
        self.last_objective = objective;
        objective
    }

    pub fn run_all(&mut self) {
        for _ in self.steps_done..self.config.steps {
            self.step();
        }
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    pub fn ratio(&self) -> NetRatio {
        NetRatio {
            net: self.w.clone(),
            map: self.map.clone(),
        }
    }

    pub(crate) fn set_f_params(&mut self, p: &[f64]) {
        self.f.set_params(p);
    }

    pub(crate) fn set_w_params(&mut self, p: &[f64]) {
        self.w.set_params(p);
    }

    pub(crate) fn f_params(&self) -> Vec<f64> {
        self.f.params().to_vec()
    }

    pub(crate) fn w_params(&self) -> Vec<f64> {
        self.w.params().to_vec()
    }
}

struct DualDiceViews {
    f_in: KeyInterner,
    w_in: KeyInterner,
    sa_f: Vec<usize>,
    sa_w: Vec<usize>,
    next_f: Vec<usize>,
    start_f: Vec<usize>,
    f_vals: Vec<f64>,
    w_vals: Vec<f64>,
}

/// Train DualDICE to completion and return the ratio network.
pub fn dualdice(
    dataset: &Dataset,
    map: &FeatureMap,
    pi: &Policy,
    config: DiceConfig,
) -> Result<(NetRatio, Option<usize>)> {
    let mut learner = DualDiceLearner::new(dataset, map, pi, config)?;
    learner.run_all();
    Ok((learner.ratio(), learner.diverged_at()))
}

/// GradientDICE:
/// `min_w max_{f,u} (1-gamma) E[f0] + gamma E[w f'] - E[w f]
///   + lambda (E[u w - u] - 0.5 u^2)`.
pub struct GradientDiceLearner {
    f: Mlp,
    w: Mlp,
    u: f64,
    opt_f: Optimizer,
    opt_w: Optimizer,
    opt_u: Optimizer,
    config: DiceConfig,
    data: DiceData,
    rng: Prng,
    steps_done: usize,
    diverged_at: Option<usize>,
    last_objective: f64,
    map: FeatureMap,
}

struct GradientDiceViews {
    f_in: KeyInterner,
    w_in: KeyInterner,
    sa_f: Vec<usize>,
    sa_w: Vec<usize>,
    next_f: Vec<usize>,
    start_f: Vec<usize>,
    f_vals: Vec<f64>,
    w_vals: Vec<f64>,
}

impl GradientDiceLearner {
    pub fn new(dataset: &Dataset, map: &FeatureMap, pi: &Policy, config: DiceConfig) -> Result<Self> {
        if config.lambda < 0.0 {
            return Err(Error::bad_param("lambda", "must be non-negative"));
        }
        let data = DiceData::new(dataset, map, pi)?;
        let mut rng = rng::master(config.seed);
        let f = data.net(&config, &mut rng)?;
        let w = data.net(&config, &mut rng)?;
        Ok(GradientDiceLearner {
            opt_f: Optimizer::new(config.f_optimizer)?,
            opt_w: Optimizer::new(config.w_optimizer)?,
            opt_u: Optimizer::new(config.u_optimizer)?,
            f,
            w,
            u: 0.0,
            config,
            data,
            rng,
            steps_done: 0,
            diverged_at: None,
            last_objective: f64::NAN,
            map: map.clone(),
        })
    }

    pub fn sample_batch(&mut self) -> DiceBatch {
        self.data
            .sample_batch(&mut self.rng, self.config.batch, self.config.start_mode)
    }

    fn views(&self, batch: &DiceBatch) -> GradientDiceViews {
        let mut f_in = KeyInterner::new(self.data.inputs.nrows());
        let mut w_in = KeyInterner::new(self.data.inputs.nrows());
        let mut sa_f = Vec::with_capacity(batch.idx.len());
        let mut sa_w = Vec::with_capacity(batch.idx.len());
        let mut next_f = Vec::with_capacity(batch.idx.len());
        for (&i, &a_next) in batch.idx.iter().zip(&batch.next_actions) {
            let sa_key = self.data.sa_keys[i];
            sa_f.push(f_in.intern(sa_key));
            sa_w.push(w_in.intern(sa_key));
            next_f.push(f_in.intern(self.data.next_states[i] * self.data.n_actions + a_next));
        }
        let start_f: Vec<usize> = batch
            .start_entries
            .iter()
            .map(|&(key, _)| f_in.intern(key))
            .collect();
        let f_vals = self.data.forward_keys(&self.f, &f_in);
        let w_vals = self.data.forward_keys(&self.w, &w_in);
        GradientDiceViews {
            f_in,
            w_in,
            sa_f,
            sa_w,
            next_f,
            start_f,
            f_vals,
            w_vals,
        }
    }

    pub fn objective(&self, batch: &DiceBatch) -> f64 {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mut start = 0.0;
        for (slot, &(_, weight)) in v.start_f.iter().zip(&batch.start_entries) {
            start += weight * v.f_vals[*slot];
        }
        let mut flow = 0.0;
        let mut norm = 0.0;
        for j in 0..batch.idx.len() {
            let w = v.w_vals[v.sa_w[j]];
            flow += self.config.gamma * w * v.f_vals[v.next_f[j]] - w * v.f_vals[v.sa_f[j]];
            norm += self.u * w - self.u;
        }
        (1.0 - self.config.gamma) * start / batch.n_start as f64
            + flow / n
            + self.config.lambda * (norm / n - 0.5 * self.u * self.u)
    }

    pub fn w_grads(&self, batch: &DiceBatch) -> Vec<f64> {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mut upstream = Array2::<f64>::zeros((v.w_in.len(), 1));
        for j in 0..batch.idx.len() {
            let coeff = self.config.gamma * v.f_vals[v.next_f[j]] - v.f_vals[v.sa_f[j]]
                + self.config.lambda * self.u;
            upstream[[v.sa_w[j], 0]] += coeff / n;
        }
        let x = v.w_in.gather_rows(&self.data.inputs);
        let tape = self.w.forward_tape(&x);
        self.w.backward(&tape, &upstream).0
    }

    pub fn u_grad(&self, batch: &DiceBatch) -> f64 {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mean_w: f64 = (0..batch.idx.len())
            .map(|j| v.w_vals[v.sa_w[j]])
            .sum::<f64>()
            / n;
        self.config.lambda * (mean_w - 1.0 - self.u)
    }

    pub fn f_grads(&self, batch: &DiceBatch) -> Vec<f64> {
        let v = self.views(batch);
        let n = batch.idx.len() as f64;
        let mut upstream = Array2::<f64>::zeros((v.f_in.len(), 1));
        let start_scale = (1.0 - self.config.gamma) / batch.n_start as f64;
        for (slot, &(_, weight)) in v.start_f.iter().zip(&batch.start_entries) {
            upstream[[*slot, 0]] += start_scale * weight;
        }
        for j in 0..batch.idx.len() {
            let w = v.w_vals[v.sa_w[j]];
            upstream[[v.next_f[j], 0]] += self.config.gamma * w / n;
            upstream[[v.sa_f[j], 0]] -= w / n;
        }
        let x = v.f_in.gather_rows(&self.data.inputs);
        let tape = self.f.forward_tape(&x);
        self.f.backward(&tape, &upstream).0
    }

    /// One time step: update `w` (descent), `u` (ascent), `f` (ascent), on a
    /// shared minibatch, recomputing forward values between sub-updates.
    pub fn step(&mut self) -> f64 {
        if self.diverged_at.is_some() {
            self.steps_done += 1;
            return self.last_objective;
        }
        let batch = self.sample_batch();
        let gw = self.w_grads(&batch);
        self.opt_w.step(self.w.params_mut(), &gw);
        let gu = self.u_grad(&batch);
        let mut u_slice = [self.u];
        self.opt_u.step(&mut u_slice, &[-gu]);
        self.u = u_slice[0];
        let mut gf = self.f_grads(&batch);
        for g in &mut gf {
            *g = -*g;
        }
        self.opt_f.step(self.f.params_mut(), &gf);
        let objective = self.objective(&batch);
        self.steps_done += 1;
        if !objective.is_finite() || objective.abs() > DIVERGENCE_THRESHOLD {
            self.diverged_at = Some(self.steps_done);
        }
        self.last_objective = objective;
        objective
    }

    pub fn run_all(&mut self) {
        for _ in self.steps_done..self.config.steps {
            self.step();
        }
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn ratio(&self) -> NetRatio {
        NetRatio {
            net: self.w.clone(),
            map: self.map.clone(),
        }
    }

    pub(crate) fn set_f_params(&mut self, p: &[f64]) {
        self.f.set_params(p);
    }

    pub(crate) fn set_w_params(&mut self, p: &[f64]) {
        self.w.set_params(p);
    }

    pub(crate) fn set_u(&mut self, u: f64) {
        self.u = u;
    }

    pub(crate) fn f_params(&self) -> Vec<f64> {
        self.f.params().to_vec()
    }

    pub(crate) fn w_params(&self) -> Vec<f64> {
        self.w.params().to_vec()
    }
}

/// Train GradientDICE to completion and return the ratio network.
pub fn gradientdice(
    dataset: &Dataset,
    map: &FeatureMap,
    pi: &Policy,
    config: DiceConfig,
) -> Result<(NetRatio, Option<usize>)> {
    let mut learner = GradientDiceLearner::new(dataset, map, pi, config)?;
    learner.run_all();
    Ok((learner.ratio(), learner.diverged_at()))
}
