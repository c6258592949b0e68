//! Transition datasets: behavior-policy rollouts, exhaustive construction,
//! empirical counting, and the JSONL on-disk format.
//!
//! The file layout is one header line with the collection metadata, one line
//! per transition, and a final line listing the recorded start states.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::mdp::{Policy, TabularMDP};
use crate::rng::{self};
use crate::{Error, Result};

/// One step of experience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Collection metadata carried in the JSONL header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub seed: Option<u64>,
    pub env: String,
    pub behavior: String,
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions: usize,
}

/// A bag of transitions plus the recorded episode start states, the sole
/// input to every estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub start_states: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn require_start_states(&self) -> Result<()> {
        if self.start_states.is_empty() {
            Err(Error::EmptyStartStates)
        } else {
            Ok(())
        }
    }

    pub fn require_transitions(&self) -> Result<()> {
        if self.transitions.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }

    /// Mean reward over all transitions.
    pub fn mean_reward(&self) -> f64 {
        if self.transitions.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.r).sum::<f64>() / self.transitions.len() as f64
    }

    /// Copy with every transition's reward replaced by `reward[(s, a)]`
    /// (randomized-reward protocol).
    pub fn with_rewards_from(&self, reward: &Array2<f64>) -> Dataset {
        let mut out = self.clone();
        for t in &mut out.transitions {
            t.r = reward[[t.s, t.a]];
        }
        out
    }

    /// Append another dataset's transitions and start states.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.transitions.extend_from_slice(&other.transitions);
        out.start_states.extend_from_slice(&other.start_states);
        out
    }
}

/// Integer state-action visit counts for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCounts {
    pub counts: Array2<usize>,
    pub total: usize,
}

impl EmpiricalCounts {
    /// Empirical distribution `d^D(s,a) = counts / total`.
    pub fn distribution(&self) -> Array2<f64> {
        self.counts.mapv(|c| c as f64 / self.total as f64)
    }
}

/// Simulate episodes under a behavior policy.
///
/// Episodes start from the MDP's initial distribution, run for
/// `episode_len` steps (clipped to the MDP horizon when one is declared) and
/// restart until `n_steps` transitions have been recorded. Each episode's
/// first state is appended to `start_states`. Deterministic given `seed`.
pub fn rollout(
    mdp: &TabularMDP,
    behavior: &Policy,
    n_steps: usize,
    episode_len: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_steps == 0 {
        return Err(Error::bad_param("n_steps", "must be >= 1"));
    }
    if episode_len == 0 {
        return Err(Error::bad_param("episode_len", "must be >= 1"));
    }
    if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(
            "behavior policy does not match MDP dimensions".into(),
        ));
    }
    let effective_len = match mdp.horizon() {
        Some(h) => episode_len.min(h),
        None => episode_len,
    };
    let mut rng = rng::master(seed);
    let mut transitions = Vec::with_capacity(n_steps);
    let mut start_states = Vec::new();
    'outer: loop {
        let s0 = rng::sample_categorical(&mut rng, mdp.initial_dist().as_slice().unwrap());
        start_states.push(s0);
        let mut s = s0;
        for _ in 0..effective_len {
            let a = behavior.sample_action(&mut rng, s);
            let next_probs: Vec<f64> =
                (0..mdp.n_states()).map(|sn| mdp.transition()[[s, a, sn]]).collect();
            let s_next = rng::sample_categorical(&mut rng, &next_probs);
            transitions.push(Transition {
                s,
                a,
                r: mdp.reward()[[s, a]],
                s_next,
            });
            if transitions.len() == n_steps {
                break 'outer;
            }
            s = s_next;
        }
    }
    Ok(Dataset {
        transitions,
        start_states,
        meta: DatasetMeta {
            kind: "dataset".into(),
            seed: Some(seed),
            env: "custom".into(),
            behavior: "rollout".into(),
            gamma: 0.0,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
        },
    })
}

/// Build a dataset containing every state-action pair exactly
/// `copies_per_pair` times, so the empirical distribution is exactly uniform.
///
/// Next states are enumerated when the MDP is deterministic and sampled
/// otherwise (hence the seed). Start states are the support of the initial
/// distribution.
pub fn exhaustive_dataset(mdp: &TabularMDP, copies_per_pair: usize, seed: u64) -> Result<Dataset> {
    if copies_per_pair == 0 {
        return Err(Error::bad_param("copies_per_pair", "must be >= 1"));
    }
    let mut rng = rng::master(seed);
    let mut transitions = Vec::with_capacity(mdp.n_states() * mdp.n_actions() * copies_per_pair);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let probs: Vec<f64> =
                (0..mdp.n_states()).map(|sn| mdp.transition()[[s, a, sn]]).collect();
            let deterministic_next = probs.iter().position(|&p| p == 1.0);
            for _ in 0..copies_per_pair {
                let s_next = match deterministic_next {
                    Some(sn) => sn,
                    None => rng::sample_categorical(&mut rng, &probs),
                };
                transitions.push(Transition {
                    s,
                    a,
                    r: mdp.reward()[[s, a]],
                    s_next,
                });
            }
        }
    }
    let start_states: Vec<usize> = (0..mdp.n_states())
        .filter(|&s| mdp.initial_dist()[s] > 0.0)
        .collect();
    Ok(Dataset {
        transitions,
        start_states,
        meta: DatasetMeta {
            kind: "dataset".into(),
            seed: Some(seed),
            env: "custom".into(),
            behavior: "exhaustive".into(),
            gamma: 0.0,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
        },
    })
}

/// Exact integer visit counts; dividing by `total` yields `d^D`.
pub fn empirical_counts(dataset: &Dataset) -> Result<EmpiricalCounts> {
    dataset.require_transitions()?;
    let mut counts = Array2::zeros((dataset.meta.n_states, dataset.meta.n_actions));
    for t in &dataset.transitions {
        if t.s >= dataset.meta.n_states || t.a >= dataset.meta.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "transition ({}, {}) out of bounds for ({}, {})",
                t.s, t.a, dataset.meta.n_states, dataset.meta.n_actions
            )));
        }
        counts[[t.s, t.a]] += 1;
    }
    Ok(EmpiricalCounts {
        counts,
        total: dataset.transitions.len(),
    })
}

// --- JSONL format -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StartStatesLine {
    start_states: Vec<usize>,
}

impl Dataset {
    /// Serialize to the JSONL wire format (header, transitions, start states).
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.meta)?);
        out.push('\n');
        for t in &self.transitions {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&StartStatesLine {
            start_states: self.start_states.clone(),
        })?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty dataset file".into()))?;
        let meta: DatasetMeta = serde_json::from_str(header)?;
        if meta.kind != "dataset" {
            return Err(Error::InvalidConfig(format!(
                "expected kind \"dataset\", got {:?}",
                meta.kind
            )));
        }
        let mut transitions = Vec::new();
        let mut start_states = None;
        for line in lines {
            if line.contains("\"start_states\"") {
                let parsed: StartStatesLine = serde_json::from_str(line)?;
                start_states = Some(parsed.start_states);
            } else {
                transitions.push(serde_json::from_str::<Transition>(line)?);
            }
        }
        let start_states = start_states
            .ok_or_else(|| Error::InvalidConfig("missing start_states line".into()))?;
        Ok(Dataset {
            transitions,
            start_states,
            meta,
        })
    }

    pub fn write_jsonl(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read_jsonl(path: &std::path::Path) -> Result<Self> {
        Dataset::from_jsonl(&std::fs::read_to_string(path)?)
    }
}
