//! Finite MDPs, policies, and exact ground-truth solvers.
//!
//! The solvers here double as test oracles for every estimator in the crate:
//! occupancies, successor representations, value functions and density
//! ratios all come from dense linear solves rather than simulation.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, LuFactors};
use crate::rng::Prng;
use crate::{Error, Result};

const DIST_TOL: f64 = 1e-12;

/// Discount factor, strictly below 1 so the discounted objective is finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discount(f64);

impl Discount {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::bad_param(
                "gamma",
                format!("must be in [0, 1), got {gamma}"),
            ));
        }
        Ok(Discount(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Full dynamics/reward/initial-distribution specification of a finite MDP.
///
/// `transition[[s, a, s']]` is `p(s'|s,a)`, `reward[[s, a]]` the scalar
/// reward, `initial_dist[s]` the start-state distribution. `horizon`, when
/// present, only truncates episodes during data collection; the exact
/// solvers always compute infinite-horizon discounted quantities.
#[derive(Debug, Clone)]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    transition: Array3<f64>,
    reward: Array2<f64>,
    initial_dist: Array1<f64>,
    horizon: Option<usize>,
}

impl TabularMDP {
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        initial_dist: Array1<f64>,
        horizon: Option<usize>,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::bad_param("n_states/n_actions", "must be positive"));
        }
        if n_next != n_states {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor is ({n_states}, {n_actions}, {n_next}); last axis must match n_states"
            )));
        }
        if n_states * n_actions > linalg::MAX_STATE_ACTION {
            return Err(Error::bad_param(
                "n_states * n_actions",
                format!("exceeds dense-solver cap {}", linalg::MAX_STATE_ACTION),
            ));
        }
        if reward.dim() != (n_states, n_actions) {
            return Err(Error::DimensionMismatch(format!(
                "reward is {:?}, expected ({n_states}, {n_actions})",
                reward.dim()
            )));
        }
        if initial_dist.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "initial_dist has length {}, expected {n_states}",
                initial_dist.len()
            )));
        }
        if let Some(h) = horizon {
            if h == 0 {
                return Err(Error::bad_param("horizon", "must be positive when set"));
            }
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut sum = 0.0;
                for sn in 0..n_states {
                    let p = transition[[s, a, sn]];
                    if p < 0.0 {
                        return Err(Error::invalid_dist(
                            format!("transition({s},{a})"),
                            format!("negative probability {p}"),
                        ));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > DIST_TOL {
                    return Err(Error::invalid_dist(
                        format!("transition({s},{a})"),
                        format!("sums to {sum}"),
                    ));
                }
            }
        }
        check_dist("initial_dist", initial_dist.as_slice().unwrap())?;
        Ok(TabularMDP {
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist,
            horizon,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    /// Same MDP with the reward table swapped out (used by the randomized
    /// reward protocol).
    pub fn with_reward(&self, reward: Array2<f64>) -> Result<Self> {
        TabularMDP::new(
            self.transition.clone(),
            reward,
            self.initial_dist.clone(),
            self.horizon,
        )
    }

    /// State-to-state transition matrix under a policy:
    /// `P_pi(s, s') = sum_a pi(a|s) p(s'|s,a)`.
    pub fn state_transition_matrix(&self, pi: &Policy) -> Array2<f64> {
        let mut p = Array2::zeros((self.n_states, self.n_states));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = pi.probs()[[s, a]];
                if w == 0.0 {
                    continue;
                }
                for sn in 0..self.n_states {
                    p[[s, sn]] += w * self.transition[[s, a, sn]];
                }
            }
        }
        p
    }

    /// State-action transition matrix under a policy, indexed by
    /// `s * n_actions + a`: `P[(s,a), (s',a')] = p(s'|s,a) pi(a'|s')`.
    pub fn state_action_transition_matrix(&self, pi: &Policy) -> Array2<f64> {
        let sa = self.n_states * self.n_actions;
        let mut p = Array2::zeros((sa, sa));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = s * self.n_actions + a;
                for sn in 0..self.n_states {
                    let pt = self.transition[[s, a, sn]];
                    if pt == 0.0 {
                        continue;
                    }
                    for an in 0..self.n_actions {
                        p[[row, sn * self.n_actions + an]] = pt * pi.probs()[[sn, an]];
                    }
                }
            }
        }
        p
    }

    /// The 5-state random-walk chain: action 0 steps left, action 1 steps
    /// right, the left end self-loops under action 0 and the right end under
    /// action 1 (the usual reading of this domain; the textbook description
    /// names a nonexistent action for the right self-loop). Episodes start
    /// in the leftmost state; reward is 1 in the rightmost state.
    pub fn random_walk5() -> Self {
        let n = 5;
        let mut transition = Array3::zeros((n, 2, n));
        for s in 0..n {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            transition[[s, 0, left]] = 1.0;
            transition[[s, 1, right]] = 1.0;
        }
        let mut reward = Array2::zeros((n, 2));
        reward[[n - 1, 0]] = 1.0;
        reward[[n - 1, 1]] = 1.0;
        let mut initial = Array1::zeros(n);
        initial[0] = 1.0;
        TabularMDP::new(transition, reward, initial, None).expect("builtin chain is valid")
    }

    /// Random dense MDP for property tests and sweeps. Transition rows and
    /// the initial distribution are normalized exponential draws (strictly
    /// positive), rewards are uniform in [-1, 1].
    pub fn random(rng: &mut Prng, n_states: usize, n_actions: usize) -> Self {
        let mut transition = Array3::zeros((n_states, n_actions, n_states));
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = random_simplex(rng, n_states);
                for (sn, v) in row.iter().enumerate() {
                    transition[[s, a, sn]] = *v;
                }
            }
        }
        let mut reward = Array2::zeros((n_states, n_actions));
        for r in reward.iter_mut() {
            *r = rng.random_range(-1.0..1.0);
        }
        let initial = Array1::from_vec(random_simplex(rng, n_states));
        TabularMDP::new(transition, reward, initial, None).expect("random MDP is valid")
    }

    /// Random MDP whose initial distribution is a point mass on state 0.
    pub fn random_deterministic_start(rng: &mut Prng, n_states: usize, n_actions: usize) -> Self {
        let mut mdp = Self::random(rng, n_states, n_actions);
        let mut d0 = Array1::zeros(n_states);
        d0[0] = 1.0;
        mdp.initial_dist = d0;
        mdp
    }
}

fn check_dist(context: &str, probs: &[f64]) -> Result<()> {
    let mut sum = 0.0;
    for &p in probs {
        if p < 0.0 {
            return Err(Error::invalid_dist(context, format!("negative entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::invalid_dist(context, format!("sums to {sum}")));
    }
    Ok(())
}

fn random_simplex(rng: &mut Prng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

/// A stochastic policy: `probs[[s, a]] = pi(a|s)`, rows sum to 1.
#[derive(Debug, Clone)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.rows().into_iter().enumerate() {
            check_dist(&format!("policy row {s}"), row.as_slice().unwrap())?;
        }
        Ok(Policy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Random policy with strictly positive rows.
    pub fn random(rng: &mut Prng, n_states: usize, n_actions: usize) -> Self {
        let mut probs = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            let row = random_simplex(rng, n_actions);
            for (a, v) in row.iter().enumerate() {
                probs[[s, a]] = *v;
            }
        }
        Policy { probs }
    }

    /// Convex mixture `(1 - weight) * self + weight * other`, used to express
    /// "acts randomly with probability p" behaviors analytically.
    pub fn mix(&self, other: &Policy, weight: f64) -> Result<Policy> {
        if self.probs.dim() != other.probs.dim() {
            return Err(Error::DimensionMismatch(
                "policies have different shapes".into(),
            ));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::bad_param("weight", "must be in [0, 1]"));
        }
        Policy::new(&self.probs * (1.0 - weight) + &other.probs * weight)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn sample_action(&self, rng: &mut Prng, s: usize) -> usize {
        crate::rng::sample_categorical(rng, self.probs.row(s).as_slice().unwrap())
    }
}

/// Discounted state-action occupancy `d^pi(s,a)`; sums to 1.
#[derive(Debug, Clone)]
pub struct OccupancyTable {
    pub d: Array2<f64>,
}

impl OccupancyTable {
    /// Occupancy of a state-action pair.
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[[s, a]]
    }

    pub fn total(&self) -> f64 {
        self.d.sum()
    }
}

/// Tabular successor representation: `psi[[s, s']]` is the expected
/// discounted number of visits to `s'` starting from `s`.
#[derive(Debug, Clone)]
pub struct TabularSR {
    pub psi: Array2<f64>,
}

/// Exact discounted state-action occupancy.
///
/// Solves `(I - gamma P_pi^T) rho = (1 - gamma) d_0` and returns
/// `d(s,a) = rho(s) pi(a|s)`.
pub fn exact_occupancy(mdp: &TabularMDP, pi: &Policy, gamma: Discount) -> Result<OccupancyTable> {
    let g = gamma.value();
    let n = mdp.n_states();
    let p = mdp.state_transition_matrix(pi);
    let mut system = Array2::eye(n);
    system.scaled_add(-g, &p.t());
    let rhs = mdp.initial_dist() * (1.0 - g);
    let rho = LuFactors::new(&system)?.solve(&rhs)?;
    let mut d = Array2::zeros((n, mdp.n_actions()));
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            d[[s, a]] = rho[s] * pi.probs()[[s, a]];
        }
    }
    Ok(OccupancyTable { d })
}

/// Exact tabular successor representation `Psi = (I - gamma P_pi)^{-1}`.
pub fn exact_tabular_sr(mdp: &TabularMDP, pi: &Policy, gamma: Discount) -> Result<TabularSR> {
    let g = gamma.value();
    let n = mdp.n_states();
    let p = mdp.state_transition_matrix(pi);
    let mut system = Array2::eye(n);
    system.scaled_add(-g, &p);
    let psi = linalg::invert(&system)?;
    Ok(TabularSR { psi })
}

/// Normalized expected per-step reward `R(pi) = sum_{s,a} d^pi(s,a) r(s,a)`.
pub fn exact_return(mdp: &TabularMDP, pi: &Policy, gamma: Discount) -> Result<f64> {
    let occ = exact_occupancy(mdp, pi, gamma)?;
    Ok((&occ.d * mdp.reward()).sum())
}

/// Exact state values `V^pi`, from `(I - gamma P_pi) V = r_pi`.
pub fn exact_v_values(mdp: &TabularMDP, pi: &Policy, gamma: Discount) -> Result<Array1<f64>> {
    let g = gamma.value();
    let n = mdp.n_states();
    let p = mdp.state_transition_matrix(pi);
    let mut system = Array2::eye(n);
    system.scaled_add(-g, &p);
    let r_pi = Array1::from_iter(
        (0..n).map(|s| (0..mdp.n_actions()).map(|a| pi.probs()[[s, a]] * mdp.reward()[[s, a]]).sum()),
    );
    LuFactors::new(&system)?.solve(&r_pi)
}

/// Exact action values `Q^pi(s,a) = r(s,a) + gamma sum_s' p(s'|s,a) V^pi(s')`.
///
/// Solving for `V` first keeps the linear system at state-space size; the
/// result satisfies the state-action Bellman identity to solver precision.
pub fn exact_q_values(mdp: &TabularMDP, pi: &Policy, gamma: Discount) -> Result<Array2<f64>> {
    let g = gamma.value();
    let v = exact_v_values(mdp, pi, gamma)?;
    let mut q = mdp.reward().clone();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mut acc = 0.0;
            for sn in 0..mdp.n_states() {
                acc += mdp.transition()[[s, a, sn]] * v[sn];
            }
            q[[s, a]] += g * acc;
        }
    }
    Ok(q)
}

/// Density ratios `d^pi / d^D` with an explicit validity mask.
///
/// Entries where the sampling distribution is zero are carried as masked
/// rather than as infinities, so downstream metrics can skip them
/// deterministically. Pairs with `d^pi > 0` but `d^D = 0` are additionally
/// reported as support violations.
#[derive(Debug, Clone)]
pub struct RatioOracle {
    pub ratio: Array2<f64>,
    pub defined: Array2<bool>,
    pub support_violations: Vec<(usize, usize)>,
}

impl RatioOracle {
    /// Ratio value with masked entries reported as 0.
    pub fn get_or_zero(&self, s: usize, a: usize) -> f64 {
        if self.defined[[s, a]] {
            self.ratio[[s, a]]
        } else {
            0.0
        }
    }

    pub fn n_defined(&self) -> usize {
        self.defined.iter().filter(|d| **d).count()
    }
}

/// Exact density ratio of the target occupancy against an arbitrary sampling
/// distribution `d_d` over state-action pairs.
pub fn exact_ratio_oracle(
    mdp: &TabularMDP,
    pi: &Policy,
    gamma: Discount,
    d_d: &Array2<f64>,
) -> Result<RatioOracle> {
    if d_d.dim() != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::DimensionMismatch(format!(
            "sampling distribution is {:?}, expected ({}, {})",
            d_d.dim(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let mut sum = 0.0;
    for &p in d_d.iter() {
        if p < 0.0 {
            return Err(Error::invalid_dist("d_D", format!("negative entry {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_dist("d_D", format!("sums to {sum}")));
    }

    let occ = exact_occupancy(mdp, pi, gamma)?;
    let (ns, na) = d_d.dim();
    let mut ratio = Array2::zeros((ns, na));
    let mut defined = Array2::from_elem((ns, na), false);
    let mut violations = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            if d_d[[s, a]] > 0.0 {
                ratio[[s, a]] = occ.d[[s, a]] / d_d[[s, a]];
                defined[[s, a]] = true;
            } else if occ.d[[s, a]] > 0.0 {
                violations.push((s, a));
            }
        }
    }
    Ok(RatioOracle {
        ratio,
        defined,
        support_violations: violations,
    })
}

// --- JSON wire format -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MdpWire {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    initial_dist: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct PolicyWire {
    probs: Vec<Vec<f64>>,
}

impl TabularMDP {
    pub fn to_json(&self) -> Result<String> {
        let wire = MdpWire {
            n_states: self.n_states,
            n_actions: self.n_actions,
            transition: (0..self.n_states)
                .map(|s| {
                    (0..self.n_actions)
                        .map(|a| (0..self.n_states).map(|sn| self.transition[[s, a, sn]]).collect())
                        .collect()
                })
                .collect(),
            reward: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.reward[[s, a]]).collect())
                .collect(),
            initial_dist: self.initial_dist.to_vec(),
            horizon: self.horizon,
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: MdpWire = serde_json::from_str(text)?;
        let (ns, na) = (wire.n_states, wire.n_actions);
        let mut transition = Array3::zeros((ns, na, ns));
        if wire.transition.len() != ns {
            return Err(Error::DimensionMismatch("transition outer length".into()));
        }
        for (s, per_action) in wire.transition.iter().enumerate() {
            if per_action.len() != na {
                return Err(Error::DimensionMismatch(format!(
                    "transition[{s}] has {} actions, expected {na}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(Error::DimensionMismatch(format!(
                        "transition[{s}][{a}] has length {}, expected {ns}",
                        row.len()
                    )));
                }
                for (sn, p) in row.iter().enumerate() {
                    transition[[s, a, sn]] = *p;
                }
            }
        }
        let mut reward = Array2::zeros((ns, na));
        for (s, row) in wire.reward.iter().enumerate() {
            for (a, r) in row.iter().enumerate() {
                reward[[s, a]] = *r;
            }
        }
        TabularMDP::new(
            transition,
            reward,
            Array1::from_vec(wire.initial_dist),
            wire.horizon,
        )
    }
}

impl Policy {
    pub fn to_json(&self) -> Result<String> {
        let wire = PolicyWire {
            probs: self.probs.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&wire)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: PolicyWire = serde_json::from_str(text)?;
        let n_states = wire.probs.len();
        if n_states == 0 {
            return Err(Error::DimensionMismatch("policy has no rows".into()));
        }
        let n_actions = wire.probs[0].len();
        let mut probs = Array2::zeros((n_states, n_actions));
        for (s, row) in wire.probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "policy row {s} has length {}, expected {n_actions}",
                    row.len()
                )));
            }
            for (a, p) in row.iter().enumerate() {
                probs[[s, a]] = *p;
            }
        }
        Policy::new(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Truncated power-series occupancy: the defining series evaluated
    /// directly, independent of the linear solve.
    pub(crate) fn occupancy_by_series(
        mdp: &TabularMDP,
        pi: &Policy,
        gamma: f64,
        terms: usize,
    ) -> Array2<f64> {
        let p = mdp.state_transition_matrix(pi);
        let mut state_dist = mdp.initial_dist().clone();
        let mut rho = Array1::<f64>::zeros(mdp.n_states());
        let mut scale = 1.0 - gamma;
        for _ in 0..terms {
            rho.scaled_add(scale, &state_dist);
            state_dist = p.t().dot(&state_dist);
            scale *= gamma;
        }
        let mut d = Array2::zeros((mdp.n_states(), mdp.n_actions()));
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                d[[s, a]] = rho[s] * pi.probs()[[s, a]];
            }
        }
        d
    }

    /// Truncated series for the tabular SR: sum of `gamma^t P_pi^t`.
    fn sr_by_series(mdp: &TabularMDP, pi: &Policy, gamma: f64, terms: usize) -> Array2<f64> {
        let p = mdp.state_transition_matrix(pi);
        let n = mdp.n_states();
        let mut acc = Array2::<f64>::zeros((n, n));
        let mut power = Array2::<f64>::eye(n);
        let mut scale = 1.0;
        for _ in 0..terms {
            acc.scaled_add(scale, &power);
            power = power.dot(&p);
            scale *= gamma;
        }
        acc
    }

    fn max_abs<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
        it.fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn occupancy_at_gamma_zero_is_initial_times_policy() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let occ = exact_occupancy(&mdp, &pi, Discount::new(0.0).unwrap()).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                let expect = mdp.initial_dist()[s] * pi.probs()[[s, a]];
                assert!((occ.get(s, a) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn occupancy_matches_truncated_series_on_random_walk() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = Discount::new(0.99).unwrap();
        let occ = exact_occupancy(&mdp, &pi, gamma).unwrap();
        let series = occupancy_by_series(&mdp, &pi, 0.99, 10_000);
        let diff = max_abs((occ.d.clone() - &series).iter());
        assert!(diff < 1e-8, "max diff {diff}");
        assert!((occ.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn occupancy_of_self_loop_policy_is_initial_dist() {
        // Policy always picks action 0; make action 0 a self-loop everywhere.
        let n = 4;
        let mut transition = Array3::zeros((n, 2, n));
        for s in 0..n {
            transition[[s, 0, s]] = 1.0;
            transition[[s, 1, (s + 1) % n]] = 1.0;
        }
        let reward = Array2::zeros((n, 2));
        let initial = Array1::from_vec(vec![0.4, 0.3, 0.2, 0.1]);
        let mdp = TabularMDP::new(transition, reward, initial.clone(), None).unwrap();
        let mut probs = Array2::zeros((n, 2));
        for s in 0..n {
            probs[[s, 0]] = 1.0;
        }
        let pi = Policy::new(probs).unwrap();
        let occ = exact_occupancy(&mdp, &pi, Discount::new(0.7).unwrap()).unwrap();
        for s in 0..n {
            assert!((occ.get(s, 0) - initial[s]).abs() < 1e-12);
            assert!(occ.get(s, 1).abs() < 1e-15);
        }
    }

    #[test]
    fn sr_is_identity_at_gamma_zero() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let sr = exact_tabular_sr(&mdp, &pi, Discount::new(0.0).unwrap()).unwrap();
        let eye: Array2<f64> = Array2::eye(5);
        assert!(max_abs((sr.psi.clone() - eye).iter()) < 1e-12);
    }

    #[test]
    fn sr_rows_sum_to_geometric_series() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let sr = exact_tabular_sr(&mdp, &pi, Discount::new(0.99).unwrap()).unwrap();
        for row in sr.psi.rows() {
            assert!((row.sum() - 100.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sr_matches_truncated_series() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let sr = exact_tabular_sr(&mdp, &pi, Discount::new(0.9).unwrap()).unwrap();
        let series = sr_by_series(&mdp, &pi, 0.9, 5_000);
        assert!(max_abs((sr.psi.clone() - &series).iter()) < 1e-8);
    }

    #[test]
    fn sr_satisfies_bellman_identity() {
        let mut rng = rng::master(21);
        for _ in 0..10 {
            let mdp = TabularMDP::random(&mut rng, 6, 3);
            let pi = Policy::random(&mut rng, 6, 3);
            let gamma = Discount::new(0.9).unwrap();
            let sr = exact_tabular_sr(&mdp, &pi, gamma).unwrap();
            let p = mdp.state_transition_matrix(&pi);
            let eye: Array2<f64> = Array2::eye(6);
            let recon = eye + 0.9 * p.dot(&sr.psi);
            assert!(max_abs((sr.psi.clone() - recon).iter()) < 1e-8);
        }
    }

    #[test]
    fn constant_reward_returns_constant() {
        let mut rng = rng::master(2);
        let mdp = TabularMDP::random(&mut rng, 7, 3);
        let mdp = mdp
            .with_reward(Array2::from_elem((7, 3), 2.5))
            .unwrap();
        let pi = Policy::random(&mut rng, 7, 3);
        let r = exact_return(&mdp, &pi, Discount::new(0.95).unwrap()).unwrap();
        assert!((r - 2.5).abs() < 1e-10);
        let zero = mdp.with_reward(Array2::zeros((7, 3))).unwrap();
        assert_eq!(exact_return(&zero, &pi, Discount::new(0.95).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn return_matches_monte_carlo_on_random_walk() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = 0.99;
        let truth = exact_return(&mdp, &pi, Discount::new(gamma).unwrap()).unwrap();

        // Monte-Carlo oracle: discounted episode returns, normalized.
        let mut rng = rng::master(123);
        let episodes = 100_000;
        let horizon = 1_500; // gamma^1500 ~ 3e-7, negligible tail
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..episodes {
            let mut s = rng::sample_categorical(&mut rng, mdp.initial_dist().as_slice().unwrap());
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = pi.sample_action(&mut rng, s);
                ret += disc * mdp.reward()[[s, a]];
                disc *= gamma;
                s = rng::sample_categorical(
                    &mut rng,
                    mdp.transition()
                        .index_axis(ndarray::Axis(0), s)
                        .index_axis(ndarray::Axis(0), a)
                        .as_slice()
                        .unwrap(),
                );
            }
            let norm = (1.0 - gamma) * ret;
            sum += norm;
            sumsq += norm * norm;
        }
        let mean = sum / episodes as f64;
        let var = (sumsq / episodes as f64 - mean * mean).max(0.0);
        let stderr = (var / episodes as f64).sqrt();
        assert!(
            (mean - truth).abs() < 3.0 * stderr + 1e-6,
            "mc {mean} vs exact {truth} (3se {})",
            3.0 * stderr
        );
    }

    #[test]
    fn q_values_at_gamma_zero_equal_reward() {
        let mut rng = rng::master(4);
        let mdp = TabularMDP::random(&mut rng, 5, 2);
        let pi = Policy::random(&mut rng, 5, 2);
        let q = exact_q_values(&mdp, &pi, Discount::new(0.0).unwrap()).unwrap();
        assert!(max_abs((q - mdp.reward()).iter()) < 1e-14);
    }

    #[test]
    fn q_values_of_unit_reward_hit_geometric_sum() {
        let mut rng = rng::master(5);
        let mdp = TabularMDP::random(&mut rng, 5, 2)
            .with_reward(Array2::ones((5, 2)))
            .unwrap();
        let pi = Policy::random(&mut rng, 5, 2);
        let q = exact_q_values(&mdp, &pi, Discount::new(0.8).unwrap()).unwrap();
        for v in q.iter() {
            assert!((v - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn q_values_satisfy_bellman_and_recover_return() {
        let mut rng = rng::master(6);
        for _ in 0..20 {
            let mdp = TabularMDP::random(&mut rng, 6, 3);
            let pi = Policy::random(&mut rng, 6, 3);
            let gamma = Discount::new(0.93).unwrap();
            let q = exact_q_values(&mdp, &pi, gamma).unwrap();
            // Bellman identity over the state-action space.
            for s in 0..6 {
                for a in 0..3 {
                    let mut next = 0.0;
                    for sn in 0..6 {
                        for an in 0..3 {
                            next += mdp.transition()[[s, a, sn]]
                                * pi.probs()[[sn, an]]
                                * q[[sn, an]];
                        }
                    }
                    let resid = q[[s, a]] - (mdp.reward()[[s, a]] + 0.93 * next);
                    assert!(resid.abs() < 1e-9);
                }
            }
            // (1 - gamma) E_{d0, pi}[Q] equals the occupancy-weighted return.
            let mut start_value = 0.0;
            for s in 0..6 {
                for a in 0..3 {
                    start_value += mdp.initial_dist()[s] * pi.probs()[[s, a]] * q[[s, a]];
                }
            }
            let lhs = (1.0 - 0.93) * start_value;
            let rhs = exact_return(&mdp, &pi, gamma).unwrap();
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn sr_occupancy_identity_on_random_mdps() {
        // d^pi(s,a) = (1 - gamma) E_{s0}[Psi(s|s0)] pi(a|s)
        let mut rng = rng::master(7);
        for _ in 0..50 {
            let mdp = TabularMDP::random(&mut rng, 5, 3);
            let pi = Policy::random(&mut rng, 5, 3);
            let gamma = Discount::new(0.9).unwrap();
            let occ = exact_occupancy(&mdp, &pi, gamma).unwrap();
            let sr = exact_tabular_sr(&mdp, &pi, gamma).unwrap();
            for s in 0..5 {
                let mean_sr: f64 = (0..5).map(|s0| mdp.initial_dist()[s0] * sr.psi[[s0, s]]).sum();
                for a in 0..3 {
                    let expect = (1.0 - 0.9) * mean_sr * pi.probs()[[s, a]];
                    assert!((occ.get(s, a) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ratio_oracle_is_one_on_policy() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = Discount::new(0.99).unwrap();
        let occ = exact_occupancy(&mdp, &pi, gamma).unwrap();
        let oracle = exact_ratio_oracle(&mdp, &pi, gamma, &occ.d).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                if oracle.defined[[s, a]] {
                    assert!((oracle.ratio[[s, a]] - 1.0).abs() < 1e-9);
                }
            }
        }
        assert!(oracle.support_violations.is_empty());
    }

    #[test]
    fn ratio_oracle_scales_under_uniform_sampling() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = Discount::new(0.99).unwrap();
        let uniform = Array2::from_elem((5, 2), 0.1);
        let oracle = exact_ratio_oracle(&mdp, &pi, gamma, &uniform).unwrap();
        let occ = exact_occupancy(&mdp, &pi, gamma).unwrap();
        let series = occupancy_by_series(&mdp, &pi, 0.99, 10_000);
        for s in 0..5 {
            for a in 0..2 {
                assert!(oracle.defined[[s, a]]);
                assert!((oracle.ratio[[s, a]] - 10.0 * occ.get(s, a)).abs() < 1e-10);
                assert!((oracle.ratio[[s, a]] - 10.0 * series[[s, a]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ratio_oracle_reports_support_violations() {
        let mdp = TabularMDP::random_walk5();
        let pi = Policy::uniform(5, 2);
        let gamma = Discount::new(0.99).unwrap();
        // Sampling distribution that misses state 4 entirely.
        let mut d_d = Array2::from_elem((5, 2), 1.0 / 8.0);
        d_d[[4, 0]] = 0.0;
        d_d[[4, 1]] = 0.0;
        let oracle = exact_ratio_oracle(&mdp, &pi, gamma, &d_d).unwrap();
        assert!(oracle.support_violations.contains(&(4, 0)));
        assert!(oracle.support_violations.contains(&(4, 1)));
        assert!(!oracle.defined[[4, 0]]);
        assert_eq!(oracle.get_or_zero(4, 0), 0.0);
    }

    #[test]
    fn mdp_json_round_trip() {
        let mdp = TabularMDP::random_walk5();
        let text = mdp.to_json().unwrap();
        let back = TabularMDP::from_json(&text).unwrap();
        assert_eq!(back.n_states(), 5);
        assert_eq!(back.n_actions(), 2);
        assert_eq!(back.transition(), mdp.transition());
        assert_eq!(back.reward(), mdp.reward());
        let pi = Policy::uniform(5, 2);
        let round = Policy::from_json(&pi.to_json().unwrap()).unwrap();
        assert_eq!(round.probs(), pi.probs());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        // Transition row that does not sum to 1.
        let mut transition = Array3::zeros((2, 1, 2));
        transition[[0, 0, 0]] = 0.5;
        transition[[1, 0, 1]] = 1.0;
        let bad = TabularMDP::new(
            transition,
            Array2::zeros((2, 1)),
            Array1::from_vec(vec![1.0, 0.0]),
            None,
        );
        assert!(matches!(bad, Err(Error::InvalidDistribution { .. })));
        assert!(Discount::new(1.0).is_err());
        assert!(Discount::new(-0.1).is_err());
        assert!(Policy::new(Array2::from_elem((2, 2), 0.3)).is_err());
    }

    #[test]
    fn mixture_policy_is_row_stochastic() {
        let mut rng = rng::master(9);
        let a = Policy::random(&mut rng, 4, 3);
        let b = Policy::uniform(4, 3);
        let mix = a.mix(&b, 0.2).unwrap();
        for row in mix.probs().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        for s in 0..4 {
            for act in 0..3 {
                let expect = 0.8 * a.probs()[[s, act]] + 0.2 / 3.0;
                assert!((mix.probs()[[s, act]] - expect).abs() < 1e-12);
            }
        }
    }
}
