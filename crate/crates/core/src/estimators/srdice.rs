//! SR-DICE: density-ratio estimation from the successor representation.
//!
//! Tabular closed form, feature-space closed form (pseudo-inverse), and the
//! stochastic-gradient version of the same convex objective.

use ndarray::{Array1, Array2};

use super::{LinearRatio, TabularRatio};
use crate::approx::{Optimizer, OptimizerSpec};
use crate::dataset::{empirical_counts, Dataset};
use crate::features::{feature_matrix, sr_start_matrix, FeatureMap, SrModel};
use crate::linalg::gram_pinv;
use crate::mdp::{Discount, Policy, TabularSR};
use crate::rng::{self};
use crate::{Error, Result};

/// Relative singular-value cutoff for Gram pseudo-inverses. Dependent
/// feature sets make the Gram matrix rank-deficient by construction.
pub(crate) const GRAM_CUTOFF: f64 = 1e-10;

/// How the expectations in a stochastic objective are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationMode {
    /// Minibatch estimates with policy actions sampled per element.
    Sampled,
    /// Exact sums: full dataset weighting and policy-weighted action sums.
    Exact,
}

/// Tabular SR-DICE ratios from any (possibly inexact) tabular SR:
///
/// `r*(s,a) = (1 - gamma) |D| / count(s,a) * mean_{s0 in D0} pi(a|s) Psi(s|s0)`
///
/// for pairs present in the dataset; absent pairs are masked.
pub fn srdice_tabular_ratios(
    dataset: &Dataset,
    sr_hat: &TabularSR,
    pi: &Policy,
    gamma: Discount,
) -> Result<TabularRatio> {
    dataset.require_transitions()?;
    dataset.require_start_states()?;
    let (ns, na) = (dataset.meta.n_states, dataset.meta.n_actions);
    if sr_hat.psi.dim() != (ns, ns) {
        return Err(Error::DimensionMismatch(format!(
            "SR is {:?}, expected ({ns}, {ns})",
            sr_hat.psi.dim()
        )));
    }
    let counts = empirical_counts(dataset)?;
    let total = counts.total as f64;
    let n0 = dataset.start_states.len() as f64;

    // mean over recorded start states of Psi(s | s0)
    let mut mean_sr = Array1::<f64>::zeros(ns);
    for &s0 in &dataset.start_states {
        for s in 0..ns {
            mean_sr[s] += sr_hat.psi[[s0, s]];
        }
    }
    mean_sr /= n0;

    let mut table = Array2::zeros((ns, na));
    let mut defined = Array2::from_elem((ns, na), false);
    let scale = 1.0 - gamma.value();
    for s in 0..ns {
        for a in 0..na {
            let count = counts.counts[[s, a]];
            if count > 0 {
                table[[s, a]] = scale * (total / count as f64) * pi.probs()[[s, a]] * mean_sr[s];
                defined[[s, a]] = true;
            }
        }
    }
    Ok(TabularRatio { table, defined })
}

/// Precomputed pieces of the closed-form weight solve, reusable across
/// repeated evaluations with an evolving SR (the Gram pseudo-inverse depends
/// only on the dataset and feature map).
pub struct ClosedFormSolver {
    gram_pinv: Array2<f64>,
    scale: f64,
    start_states: Vec<usize>,
}

impl ClosedFormSolver {
    pub fn new(dataset: &Dataset, gamma: Discount, map: &FeatureMap) -> Result<Self> {
        dataset.require_transitions()?;
        dataset.require_start_states()?;
        let phi = feature_matrix(map, dataset)?;
        let gram = phi.t().dot(&phi);
        let gram_pinv = gram_pinv(&gram, GRAM_CUTOFF)?;
        let scale = (1.0 - gamma.value()) * dataset.len() as f64
            / dataset.start_states.len() as f64;
        Ok(ClosedFormSolver {
            gram_pinv,
            scale,
            start_states: dataset.start_states.clone(),
        })
    }

    /// `w* = (1 - gamma) |D| / |D0| * (Phi^T Phi)^+ Psi^T 1`.
    pub fn solve(&self, sr: &dyn SrModel, pi: &Policy) -> Result<Array1<f64>> {
        let psi_matrix = sr_start_matrix(sr, pi, &self.start_states)?;
        let column_sums = psi_matrix.sum_axis(ndarray::Axis(0));
        Ok(self.gram_pinv.dot(&column_sums) * self.scale)
    }
}

/// Closed-form SR-DICE weights for a feature-space SR.
pub fn srdice_closed_form_w(
    dataset: &Dataset,
    sr: &dyn SrModel,
    pi: &Policy,
    gamma: Discount,
    map: &FeatureMap,
) -> Result<LinearRatio> {
    let solver = ClosedFormSolver::new(dataset, gamma, map)?;
    Ok(LinearRatio {
        w: solver.solve(sr, pi)?,
        map: map.clone(),
    })
}

/// Full-batch objective
/// `J(w) = 1/(2|D|) sum (w.phi)^2 - (1-gamma)/|D0| sum_{s0,a0} pi(a0|s0) w.psi(s0,a0)`.
pub fn srdice_w_objective_full(
    w: &Array1<f64>,
    dataset: &Dataset,
    sr: &dyn SrModel,
    pi: &Policy,
    gamma: Discount,
    map: &FeatureMap,
) -> Result<f64> {
    dataset.require_transitions()?;
    dataset.require_start_states()?;
    let phi = feature_matrix(map, dataset)?;
    let proj = phi.dot(w);
    let quad = proj.iter().map(|v| v * v).sum::<f64>() / (2.0 * dataset.len() as f64);
    let psi_matrix = sr_start_matrix(sr, pi, &dataset.start_states)?;
    let linear = psi_matrix.dot(w).sum() / dataset.start_states.len() as f64;
    Ok(quad - (1.0 - gamma.value()) * linear)
}

/// Full-batch gradient of the objective above (exact action expectation).
pub fn srdice_w_gradient_full(
    w: &Array1<f64>,
    dataset: &Dataset,
    sr: &dyn SrModel,
    pi: &Policy,
    gamma: Discount,
    map: &FeatureMap,
) -> Result<Array1<f64>> {
    dataset.require_transitions()?;
    dataset.require_start_states()?;
    let phi = feature_matrix(map, dataset)?;
    let proj = phi.dot(w);
    let quad_grad = phi.t().dot(&proj) / dataset.len() as f64;
    let psi_matrix = sr_start_matrix(sr, pi, &dataset.start_states)?;
    let linear_grad =
        psi_matrix.sum_axis(ndarray::Axis(0)) / dataset.start_states.len() as f64;
    Ok(quad_grad - linear_grad * (1.0 - gamma.value()))
}

#[derive(Debug, Clone)]
pub struct IterativeWConfig {
    pub optimizer: OptimizerSpec,
    pub steps: usize,
    pub batch: usize,
    pub expectation: ExpectationMode,
    pub seed: u64,
}

/// Gradient-based minimization of the SR-DICE weight objective.
///
/// Sampled mode follows the stochastic recipe: a minibatch of transitions
/// (uniform with replacement) drives the quadratic term and an independent
/// minibatch of start states with policy-sampled actions drives the linear
/// term. Exact mode replaces both expectations with their exact sums (full
/// dataset, full start set, policy-weighted actions), making every step
/// deterministic; the batch size is then irrelevant.
pub fn srdice_iterative_w(
    dataset: &Dataset,
    sr: &dyn SrModel,
    pi: &Policy,
    gamma: Discount,
    map: &FeatureMap,
    config: &IterativeWConfig,
) -> Result<LinearRatio> {
    dataset.require_transitions()?;
    dataset.require_start_states()?;
    if config.steps == 0 {
        return Err(Error::bad_param("steps", "must be >= 1"));
    }
    if config.batch == 0 {
        return Err(Error::bad_param("batch", "must be >= 1"));
    }
    let f_dim = map.dim();
    let phi = feature_matrix(map, dataset)?;
    let n_actions = pi.n_actions();
    let n_states = pi.n_states();
    // Frozen SR: precompute per-pair rows and exact per-state expectations.
    let mut psi_table = Array2::zeros((n_states * n_actions, f_dim));
    for s in 0..n_states {
        for a in 0..n_actions {
            psi_table.row_mut(s * n_actions + a).assign(&sr.psi(s, a));
        }
    }

    let mut rng = rng::master(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer)?;
    let mut w = Array1::<f64>::zeros(f_dim);
    let scale = 1.0 - gamma.value();

    match config.expectation {
        ExpectationMode::Exact => {
            let gram = phi.t().dot(&phi) / dataset.len() as f64;
            let mut linear = Array1::<f64>::zeros(f_dim);
            for &s0 in &dataset.start_states {
                for a0 in 0..n_actions {
                    let p = pi.probs()[[s0, a0]];
                    if p != 0.0 {
                        linear.scaled_add(p, &psi_table.row(s0 * n_actions + a0));
                    }
                }
            }
            linear *= scale / dataset.start_states.len() as f64;
            for _ in 0..config.steps {
                let grad = gram.dot(&w) - &linear;
                optimizer.step(w.as_slice_mut().unwrap(), grad.as_slice().unwrap());
            }
        }
        ExpectationMode::Sampled => {
            let mut grad = Array1::<f64>::zeros(f_dim);
            for _ in 0..config.steps {
                grad.fill(0.0);
                for _ in 0..config.batch {
                    let idx = rng::sample_index(&mut rng, dataset.len());
                    let row = phi.row(idx);
                    let proj = row.dot(&w);
                    grad.scaled_add(proj / config.batch as f64, &row);
                }
                for _ in 0..config.batch {
                    let s0 = dataset.start_states
                        [rng::sample_index(&mut rng, dataset.start_states.len())];
                    let a0 = pi.sample_action(&mut rng, s0);
                    grad.scaled_add(
                        -scale / config.batch as f64,
                        &psi_table.row(s0 * n_actions + a0),
                    );
                }
                optimizer.step(w.as_slice_mut().unwrap(), grad.as_slice().unwrap());
            }
        }
    }
    Ok(LinearRatio {
        w,
        map: map.clone(),
    })
}
