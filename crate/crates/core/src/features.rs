//! Deterministic feature maps over state-action pairs, the classic
//! random-walk feature sets, and the exact feature-space successor
//! representation.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::approx::Mlp;
use crate::dataset::Dataset;
use crate::linalg::LuFactors;
use crate::mdp::{Discount, Policy, TabularMDP};
use crate::{Error, Result};

/// The three feature sets of the 5-state random-walk domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToyFeatures {
    /// One-hot encoding of the state.
    Tabular,
    /// Inverse of a one-hot: 1/2 everywhere except 0 at the state's slot.
    Inverted,
    /// 3 features that cannot represent all 5 states exactly.
    Dependent,
}

/// State feature vectors for the toy kinds. States are indexed 0..5.
pub fn toy_state_features(kind: ToyFeatures, state: usize) -> Result<Vec<f64>> {
    if state >= 5 {
        return Err(Error::bad_param(
            "state",
            format!("toy features are defined for 5 states, got index {state}"),
        ));
    }
    Ok(match kind {
        ToyFeatures::Tabular => {
            let mut v = vec![0.0; 5];
            v[state] = 1.0;
            v
        }
        ToyFeatures::Inverted => {
            let mut v = vec![0.5; 5];
            v[state] = 0.0;
            v
        }
        ToyFeatures::Dependent => {
            let r2 = std::f64::consts::FRAC_1_SQRT_2;
            let r3 = 1.0 / 3.0f64.sqrt();
            match state {
                0 => vec![1.0, 0.0, 0.0],
                1 => vec![r2, r2, 0.0],
                2 => vec![r3, r3, r3],
                3 => vec![0.0, r2, r2],
                _ => vec![0.0, 0.0, 1.0],
            }
        }
    })
}

/// How state features and the action combine into phi(s, a).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCombiner {
    /// state_features (x) onehot(a); dimension F_state * A.
    KroneckerOnehot,
    /// [state_features; onehot(a)]; dimension F_state + A.
    ConcatOnehot,
    /// phi(s, a) ignores the action.
    None,
}

/// Input convention for learned encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInput {
    OneHotStateAction,
    OneHotState,
}

#[derive(Debug, Clone)]
enum MapKind {
    /// One-hot over state-action pairs; F = S * A.
    TabularSA,
    /// State features from a fixed S x F_state matrix, combined with the
    /// action via the declared combiner. Covers tabular-state, inverted,
    /// dependent and custom matrices.
    StateMatrix {
        matrix: Array2<f64>,
        combiner: ActionCombiner,
    },
    /// Frozen encoder network applied to a one-hot input.
    Learned { encoder: Mlp, input: EncoderInput },
}

/// A deterministic embedding of state-action pairs into fixed-dimension
/// real vectors.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    kind: MapKind,
    n_states: usize,
    n_actions: usize,
    dim: usize,
    description: String,
}

impl FeatureMap {
    /// One-hot over the S * A pairs.
    pub fn tabular_sa(n_states: usize, n_actions: usize) -> Self {
        FeatureMap {
            kind: MapKind::TabularSA,
            n_states,
            n_actions,
            dim: n_states * n_actions,
            description: "tabular_sa".into(),
        }
    }

    /// One-hot state features for any state count.
    pub fn tabular_state(n_states: usize, n_actions: usize, combiner: ActionCombiner) -> Self {
        let matrix = Array2::eye(n_states);
        Self::from_state_matrix(matrix, n_actions, combiner, "tabular_state")
            .expect("identity state matrix is valid")
    }

    /// One of the toy feature sets; requires a 5-state MDP.
    pub fn toy(
        kind: ToyFeatures,
        n_states: usize,
        n_actions: usize,
        combiner: ActionCombiner,
    ) -> Result<Self> {
        if n_states != 5 {
            return Err(Error::bad_param(
                "n_states",
                format!("toy feature sets require 5 states, got {n_states}"),
            ));
        }
        let f_state = match kind {
            ToyFeatures::Dependent => 3,
            _ => 5,
        };
        let mut matrix = Array2::zeros((5, f_state));
        for s in 0..5 {
            let row = toy_state_features(kind, s)?;
            for (j, v) in row.iter().enumerate() {
                matrix[[s, j]] = *v;
            }
        }
        let name = match kind {
            ToyFeatures::Tabular => "toy_tabular",
            ToyFeatures::Inverted => "toy_inverted",
            ToyFeatures::Dependent => "toy_dependent",
        };
        Self::from_state_matrix(matrix, n_actions, combiner, name)
    }

    /// Custom state-feature matrix (S x F_state).
    pub fn custom(matrix: Array2<f64>, n_actions: usize, combiner: ActionCombiner) -> Result<Self> {
        Self::from_state_matrix(matrix, n_actions, combiner, "custom")
    }

    fn from_state_matrix(
        matrix: Array2<f64>,
        n_actions: usize,
        combiner: ActionCombiner,
        name: &str,
    ) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::bad_param("matrix", "must be non-empty"));
        }
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::bad_param("matrix", "entries must be finite"));
        }
        let n_states = matrix.nrows();
        let f_state = matrix.ncols();
        let dim = match combiner {
            ActionCombiner::KroneckerOnehot => f_state * n_actions,
            ActionCombiner::ConcatOnehot => f_state + n_actions,
            ActionCombiner::None => f_state,
        };
        Ok(FeatureMap {
            kind: MapKind::StateMatrix { matrix, combiner },
            n_states,
            n_actions,
            dim,
            description: format!("{name}+{combiner:?}"),
        })
    }

    /// Frozen encoder network as a feature map.
    pub fn learned(
        encoder: Mlp,
        input: EncoderInput,
        n_states: usize,
        n_actions: usize,
    ) -> Result<Self> {
        let expected_in = match input {
            EncoderInput::OneHotStateAction => n_states * n_actions,
            EncoderInput::OneHotState => n_states,
        };
        if encoder.input_dim() != expected_in {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects input {} but the one-hot convention gives {expected_in}",
                encoder.input_dim()
            )));
        }
        let dim = encoder.output_dim();
        Ok(FeatureMap {
            kind: MapKind::Learned { encoder, input },
            n_states,
            n_actions,
            dim,
            description: "learned".into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Evaluate phi(s, a).
    pub fn phi(&self, s: usize, a: usize) -> Array1<f64> {
        debug_assert!(s < self.n_states && a < self.n_actions);
        match &self.kind {
            MapKind::TabularSA => {
                let mut v = Array1::zeros(self.dim);
                v[s * self.n_actions + a] = 1.0;
                v
            }
            MapKind::StateMatrix { matrix, combiner } => {
                let row = matrix.row(s);
                match combiner {
                    ActionCombiner::KroneckerOnehot => {
                        let f = matrix.ncols();
                        let mut v = Array1::zeros(self.dim);
                        for (j, x) in row.iter().enumerate() {
                            v[a * f + j] = *x;
                        }
                        v
                    }
                    ActionCombiner::ConcatOnehot => {
                        let f = matrix.ncols();
                        let mut v = Array1::zeros(self.dim);
                        for (j, x) in row.iter().enumerate() {
                            v[j] = *x;
                        }
                        v[f + a] = 1.0;
                        v
                    }
                    ActionCombiner::None => row.to_owned(),
                }
            }
            MapKind::Learned { encoder, input } => {
                let in_dim = encoder.input_dim();
                let mut x = Array1::zeros(in_dim);
                match input {
                    EncoderInput::OneHotStateAction => x[s * self.n_actions + a] = 1.0,
                    EncoderInput::OneHotState => x[s] = 1.0,
                }
                encoder.forward_single(&x)
            }
        }
    }

    /// All phi(s, a) rows, indexed by `s * n_actions + a`.
    pub fn phi_all(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_states * self.n_actions, self.dim));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out.row_mut(s * self.n_actions + a).assign(&self.phi(s, a));
            }
        }
        out
    }

    /// Load a custom map from a JSON document with a state-feature matrix
    /// and a declared combiner.
    pub fn custom_from_json(text: &str, n_actions: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Wire {
            matrix: Vec<Vec<f64>>,
            action_combiner: ActionCombiner,
        }
        let wire: Wire = serde_json::from_str(text)?;
        let rows = wire.matrix.len();
        if rows == 0 {
            return Err(Error::InvalidConfig("feature matrix has no rows".into()));
        }
        let cols = wire.matrix[0].len();
        let mut matrix = Array2::zeros((rows, cols));
        for (i, row) in wire.matrix.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::InvalidConfig(format!(
                    "feature matrix row {i} has length {}, expected {cols}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                matrix[[i, j]] = *v;
            }
        }
        Self::custom(matrix, n_actions, wire.action_combiner)
    }
}

/// Anything that can report a successor-feature vector for a state-action
/// pair: exact tables and learned approximators alike.
pub trait SrModel {
    fn feature_dim(&self) -> usize;
    fn psi(&self, s: usize, a: usize) -> Array1<f64>;
}

/// Exact feature-space successor representation stored as a dense
/// `(S * A, F)` table, rows indexed by `s * n_actions + a`.
#[derive(Debug, Clone)]
pub struct FeatureSR {
    pub table: Array2<f64>,
    pub n_actions: usize,
}

impl SrModel for FeatureSR {
    fn feature_dim(&self) -> usize {
        self.table.ncols()
    }

    fn psi(&self, s: usize, a: usize) -> Array1<f64> {
        self.table.row(s * self.n_actions + a).to_owned()
    }
}

/// Exact feature SR: solves `(I - gamma P_sa) psi = Phi_all` where `P_sa` is
/// the state-action transition matrix under the policy.
pub fn exact_feature_sr(
    mdp: &TabularMDP,
    pi: &Policy,
    gamma: Discount,
    map: &FeatureMap,
) -> Result<FeatureSR> {
    if map.n_states() != mdp.n_states() || map.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch(
            "feature map does not match MDP dimensions".into(),
        ));
    }
    let g = gamma.value();
    let sa = mdp.n_states() * mdp.n_actions();
    let p = mdp.state_action_transition_matrix(pi);
    let mut system: Array2<f64> = Array2::eye(sa);
    system.scaled_add(-g, &p);
    let table = LuFactors::new(&system)?.solve_multi(&map.phi_all())?;
    Ok(FeatureSR {
        table,
        n_actions: mdp.n_actions(),
    })
}

/// Feature matrix of a dataset: one phi(s, a) row per transition, in
/// dataset order.
pub fn feature_matrix(map: &FeatureMap, dataset: &Dataset) -> Result<Array2<f64>> {
    dataset.require_transitions()?;
    let mut out = Array2::zeros((dataset.len(), map.dim()));
    for (i, t) in dataset.transitions.iter().enumerate() {
        out.row_mut(i).assign(&map.phi(t.s, t.a));
    }
    Ok(out)
}

/// Start-state SR matrix: `|D0| * A` rows, ordered start-index major and
/// action minor, each row `pi(a0|s0) * psi(s0, a0)`.
pub fn sr_start_matrix(
    sr: &dyn SrModel,
    pi: &Policy,
    start_states: &[usize],
) -> Result<Array2<f64>> {
    if start_states.is_empty() {
        return Err(Error::EmptyStartStates);
    }
    let a_count = pi.n_actions();
    let mut out = Array2::zeros((start_states.len() * a_count, sr.feature_dim()));
    for (i, &s0) in start_states.iter().enumerate() {
        for a0 in 0..a_count {
            let weight = pi.probs()[[s0, a0]];
            let mut row = out.row_mut(i * a_count + a0);
            if weight != 0.0 {
                row.assign(&(sr.psi(s0, a0) * weight));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::exhaustive_dataset;
    use crate::rng;

    #[test]
    fn toy_vectors_match_published_values() {
        // x2 inverted
        assert_eq!(
            toy_state_features(ToyFeatures::Inverted, 1).unwrap(),
            vec![0.5, 0.0, 0.5, 0.5, 0.5]
        );
        // x3 dependent
        let r3 = 1.0 / 3.0f64.sqrt();
        assert_eq!(
            toy_state_features(ToyFeatures::Dependent, 2).unwrap(),
            vec![r3, r3, r3]
        );
        // x1 tabular: one-hot at position 0
        assert_eq!(
            toy_state_features(ToyFeatures::Tabular, 0).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert!(toy_state_features(ToyFeatures::Tabular, 5).is_err());
    }

    #[test]
    fn toy_maps_reject_wrong_state_count() {
        assert!(
            FeatureMap::toy(ToyFeatures::Inverted, 4, 2, ActionCombiner::KroneckerOnehot).is_err()
        );
    }

    #[test]
    fn tabular_state_kronecker_is_state_action_onehot() {
        let map = FeatureMap::tabular_state(5, 2, ActionCombiner::KroneckerOnehot);
        assert_eq!(map.dim(), 10);
        for s in 0..5 {
            for a in 0..2 {
                let v = map.phi(s, a);
                assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
                assert_eq!(v[a * 5 + s], 1.0);
            }
        }
        // Purity: repeated calls identical.
        assert_eq!(map.phi(3, 1), map.phi(3, 1));
    }

    #[test]
    fn dependent_kronecker_rows_are_orthogonal_across_actions() {
        let map =
            FeatureMap::toy(ToyFeatures::Dependent, 5, 2, ActionCombiner::KroneckerOnehot).unwrap();
        assert_eq!(map.dim(), 6);
        let left_end = map.phi(0, 0);
        let right_end = map.phi(4, 1);
        assert_eq!(left_end.dot(&right_end), 0.0);
        // Direct computation of the full 10x6 matrix: row (s,a) places the
        // 3 state features in the action's block.
        let all = map.phi_all();
        assert_eq!(all.dim(), (10, 6));
        for s in 0..5 {
            let feats = toy_state_features(ToyFeatures::Dependent, s).unwrap();
            for a in 0..2 {
                for j in 0..3 {
                    assert_eq!(all[[s * 2 + a, a * 3 + j]], feats[j]);
                    assert_eq!(all[[s * 2 + a, (1 - a) * 3 + j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn concat_combiner_appends_action_onehot() {
        let map =
            FeatureMap::toy(ToyFeatures::Inverted, 5, 2, ActionCombiner::ConcatOnehot).unwrap();
        assert_eq!(map.dim(), 7);
        let v = map.phi(1, 1);
        assert_eq!(v.to_vec(), vec![0.5, 0.0, 0.5, 0.5, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn feature_sr_at_gamma_zero_is_phi() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let map =
            FeatureMap::toy(ToyFeatures::Inverted, 5, 2, ActionCombiner::KroneckerOnehot).unwrap();
        let sr = exact_feature_sr(&mdp, &pi, Discount::new(0.0).unwrap(), &map).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let diff = &sr.psi(s, a) - &map.phi(s, a);
                assert!(diff.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn feature_sr_with_tabular_sa_is_resolvent_row() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = Discount::new(0.9).unwrap();
        let map = FeatureMap::tabular_sa(5, 2);
        let sr = exact_feature_sr(&mdp, &pi, gamma, &map).unwrap();
        let p = mdp.state_action_transition_matrix(&pi);
        let mut system: Array2<f64> = Array2::eye(10);
        system.scaled_add(-0.9, &p);
        let inv = crate::linalg::invert(&system).unwrap();
        let diff = &sr.table - &inv;
        assert!(diff.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn feature_sr_matches_truncated_series() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = Discount::new(0.9).unwrap();
        let map =
            FeatureMap::toy(ToyFeatures::Inverted, 5, 2, ActionCombiner::KroneckerOnehot).unwrap();
        let sr = exact_feature_sr(&mdp, &pi, gamma, &map).unwrap();

        // Truncated series: sum_t gamma^t (P_sa)^t Phi_all.
        let p = mdp.state_action_transition_matrix(&pi);
        let phi_all = map.phi_all();
        let mut acc = Array2::<f64>::zeros(phi_all.dim());
        let mut current = phi_all.clone();
        let mut scale = 1.0;
        for _ in 0..5_000 {
            acc.scaled_add(scale, &current);
            current = p.dot(&current);
            scale *= 0.9;
        }
        let diff = &sr.table - &acc;
        assert!(diff.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn feature_sr_satisfies_bellman_identity() {
        let mut rng = rng::master(31);
        let mdp = TabularMDP::random(&mut rng, 5, 3);
        let pi = Policy::random(&mut rng, 5, 3);
        let gamma = Discount::new(0.85).unwrap();
        let map = FeatureMap::tabular_state(5, 3, ActionCombiner::KroneckerOnehot);
        let sr = exact_feature_sr(&mdp, &pi, gamma, &map).unwrap();
        let p = mdp.state_action_transition_matrix(&pi);
        let recon = &map.phi_all() + &(p.dot(&sr.table) * 0.85);
        let diff = &sr.table - &recon;
        assert!(diff.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn feature_sr_start_expectation_recovers_occupancy() {
        // (1 - gamma) E_{d0, pi}[psi(s0, a0)] equals vectorized d^pi when the
        // features are the state-action one-hot.
        use crate::mdp::exact_occupancy;
        let mut rng = rng::master(33);
        for _ in 0..10 {
            let mdp = TabularMDP::random(&mut rng, 6, 2);
            let pi = Policy::random(&mut rng, 6, 2);
            let gamma = Discount::new(0.92).unwrap();
            let map = FeatureMap::tabular_sa(6, 2);
            let sr = exact_feature_sr(&mdp, &pi, gamma, &map).unwrap();
            let occ = exact_occupancy(&mdp, &pi, gamma).unwrap();
            let mut expect = Array1::<f64>::zeros(12);
            for s0 in 0..6 {
                for a0 in 0..2 {
                    let w = mdp.initial_dist()[s0] * pi.probs()[[s0, a0]];
                    if w != 0.0 {
                        expect.scaled_add(w, &sr.psi(s0, a0));
                    }
                }
            }
            expect *= 1.0 - 0.92;
            for s in 0..6 {
                for a in 0..2 {
                    assert!((expect[s * 2 + a] - occ.get(s, a)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn matrices_have_documented_shapes() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let map =
            FeatureMap::toy(ToyFeatures::Tabular, 5, 2, ActionCombiner::KroneckerOnehot).unwrap();
        let mut data = exhaustive_dataset(&mdp, 1, 0).unwrap();
        data.transitions.truncate(1);
        data.start_states.truncate(1);
        let phi = feature_matrix(&map, &data).unwrap();
        assert_eq!(phi.dim(), (1, 10));
        let sr = exact_feature_sr(&mdp, &pi, Discount::new(0.9).unwrap(), &map).unwrap();
        let psi_mat = sr_start_matrix(&sr, &pi, &data.start_states).unwrap();
        assert_eq!(psi_mat.dim(), (2, 10));
    }

    #[test]
    fn deterministic_policy_zeroes_unchosen_action_rows() {
        let mdp = TabularMDP::random_walk5();
        let mut probs = ndarray::Array2::zeros((5, 2));
        for s in 0..5 {
            probs[[s, 0]] = 1.0;
        }
        let pi = Policy::new(probs).unwrap();
        let map =
            FeatureMap::toy(ToyFeatures::Inverted, 5, 2, ActionCombiner::KroneckerOnehot).unwrap();
        let sr = exact_feature_sr(&mdp, &pi, Discount::new(0.9).unwrap(), &map).unwrap();
        let psi_mat = sr_start_matrix(&sr, &pi, &[0, 2]).unwrap();
        assert_eq!(psi_mat.dim(), (4, 10));
        // Rows for action 1 have policy weight 0.
        assert!(psi_mat.row(1).iter().all(|v| *v == 0.0));
        assert!(psi_mat.row(3).iter().all(|v| *v == 0.0));
        assert!(psi_mat.row(0).iter().any(|v| *v != 0.0));
        let _ = mdp;
    }

    #[test]
    fn custom_map_loads_from_json() {
        let text = r#"{"matrix": [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], "action_combiner": "concat_onehot"}"#;
        let map = FeatureMap::custom_from_json(text, 2).unwrap();
        assert_eq!(map.n_states(), 3);
        assert_eq!(map.dim(), 4);
        assert_eq!(map.phi(2, 1).to_vec(), vec![0.5, 0.5, 0.0, 1.0]);
    }
}
