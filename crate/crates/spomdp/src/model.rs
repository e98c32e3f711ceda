//! The learned sPOMDP model and its belief machinery.
//!
//! A model is a set of SDE-defined states over the environment's action and
//! observation alphabets, plus a Dirichlet soft-count tensor `gamma` indexed
//! `[action][from][to]`. Normalizing a gamma row yields the transition
//! estimate `T`; observation probabilities are fixed to the epsilon structure
//! around each state's first observation (the paper learns transitions only).
//!
//! The belief over model states follows the standard discrete Bayes filter:
//! predict with `T`, correct with the observation column, normalize.

use ndarray::{Array1, Array2, Array3};
use std::collections::HashMap;

use crate::env::{ActId, ObsId};
use crate::sde::Sde;
use crate::ModelError;

/// Model state: a dense id plus the SDE that disambiguates it.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub id: usize,
    pub sde: Sde,
}

impl ModelState {
    pub fn first_observation(&self) -> ObsId {
        self.sde.first_observation()
    }

    pub fn outcome_sequence(&self) -> Vec<ObsId> {
        self.sde.outcome_sequence()
    }
}

#[derive(Debug, Clone)]
pub struct SpomdpModel {
    states: Vec<ModelState>,
    actions: Vec<String>,
    observations: Vec<String>,
    gamma: Array3<f64>,
    epsilon_model: f64,
    learning_rate: f64,
    by_sde: HashMap<Sde, usize>,
}

impl SpomdpModel {
    /// Fresh model: one state per observation, all-ones gamma.
    pub fn init(
        observations: &[String],
        actions: &[String],
        epsilon_model: f64,
        learning_rate: f64,
    ) -> Result<Self, ModelError> {
        if observations.len() < 2 {
            return Err(ModelError::TooFewObservations(observations.len()));
        }
        if actions.is_empty() {
            return Err(ModelError::NoActions);
        }
        if !(epsilon_model > 1.0 / observations.len() as f64 && epsilon_model <= 1.0) {
            return Err(ModelError::BadEpsilon(epsilon_model));
        }
        if learning_rate < 0.0 {
            return Err(ModelError::BadLearningRate(learning_rate));
        }
        let sdes = (0..observations.len()).map(Sde::pure).collect();
        Ok(Self::with_sdes(
            sdes,
            observations.to_vec(),
            actions.to_vec(),
            epsilon_model,
            learning_rate,
        ))
    }

    /// Model over an explicit SDE set (used by splitting); gamma reset to 1.
    pub fn with_sdes(
        sdes: Vec<Sde>,
        observations: Vec<String>,
        actions: Vec<String>,
        epsilon_model: f64,
        learning_rate: f64,
    ) -> Self {
        let m = sdes.len();
        let states: Vec<ModelState> = sdes
            .into_iter()
            .enumerate()
            .map(|(id, sde)| ModelState { id, sde })
            .collect();
        let by_sde = states.iter().map(|s| (s.sde.clone(), s.id)).collect();
        SpomdpModel {
            gamma: Array3::ones((actions.len(), m, m)),
            states,
            actions,
            observations,
            epsilon_model,
            learning_rate,
            by_sde,
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn states(&self) -> &[ModelState] {
        &self.states
    }

    pub fn state(&self, id: usize) -> &ModelState {
        &self.states[id]
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn observation_names(&self) -> &[String] {
        &self.observations
    }

    pub fn epsilon_model(&self) -> f64 {
        self.epsilon_model
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn gamma(&self) -> &Array3<f64> {
        &self.gamma
    }

    /// Direct count access for tests and trainer-level credits.
    pub fn gamma_mut(&mut self) -> &mut Array3<f64> {
        &mut self.gamma
    }

    pub fn gamma_row_sum(&self, action: ActId, from: usize) -> f64 {
        self.gamma.slice(ndarray::s![action, from, ..]).sum()
    }

    /// The state whose SDE equals `sde`, if one is live in this model.
    pub fn state_for_sde(&self, sde: &Sde) -> Option<usize> {
        self.by_sde.get(sde).copied()
    }

    /// Longest SDE execution length in the model.
    pub fn max_sde_len(&self) -> usize {
        self.states.iter().map(|s| s.sde.len()).max().unwrap_or(0)
    }

    /// Model states whose first observation is `obs`, in id order.
    pub fn states_matching_observation(&self, obs: ObsId) -> Vec<usize> {
        self.states
            .iter()
            .filter(|s| s.first_observation() == obs)
            .map(|s| s.id)
            .collect()
    }

    /// Transition tensor `T[a][m][m'] = gamma / row sum`.
    pub fn transition_probs(&self) -> Array3<f64> {
        let mut t = self.gamma.clone();
        for a in 0..self.n_actions() {
            for m in 0..self.n_states() {
                let sum = self.gamma_row_sum(a, m);
                let mut row = t.slice_mut(ndarray::s![a, m, ..]);
                row /= sum;
            }
        }
        t
    }

    /// One normalized transition row.
    pub fn transition_row(&self, action: ActId, from: usize) -> Array1<f64> {
        let sum = self.gamma_row_sum(action, from);
        self.gamma.slice(ndarray::s![action, from, ..]).map(|g| g / sum)
    }

    /// Observation tensor: each state's row is the epsilon structure around
    /// its first observation.
    pub fn observation_probs(&self) -> Array2<f64> {
        let k = self.n_observations();
        let off = if self.epsilon_model >= 1.0 {
            0.0
        } else {
            (1.0 - self.epsilon_model) / (k - 1) as f64
        };
        let mut om = Array2::from_elem((self.n_states(), k), off);
        for s in &self.states {
            om[[s.id, s.first_observation()]] = self.epsilon_model;
        }
        om
    }

    /// Probability of observing `obs` from model state `m`.
    pub fn observation_prob(&self, m: usize, obs: ObsId) -> f64 {
        if self.states[m].first_observation() == obs {
            self.epsilon_model
        } else if self.epsilon_model >= 1.0 {
            0.0
        } else {
            (1.0 - self.epsilon_model) / (self.n_observations() - 1) as f64
        }
    }

    /// Confidence of `(m, a)`: gamma row sum over the number of model states.
    pub fn confidence(&self, m: usize, action: ActId) -> f64 {
        self.gamma_row_sum(action, m) / self.n_states() as f64
    }

    pub fn min_confidence(&self) -> f64 {
        let mut min = f64::INFINITY;
        for a in 0..self.n_actions() {
            for m in 0..self.n_states() {
                min = min.min(self.confidence(m, a));
            }
        }
        min
    }

    pub fn all_confident(&self, confidence_factor: f64) -> bool {
        self.min_confidence() >= confidence_factor
    }

    /// Normalized transition rows for one action as a matrix (a snapshot of
    /// `T[action]` before an update).
    pub fn transition_slice(&self, action: ActId) -> Array2<f64> {
        let m_count = self.n_states();
        let mut t = Array2::zeros((m_count, m_count));
        for m in 0..m_count {
            let sum = self.gamma_row_sum(action, m);
            for m2 in 0..m_count {
                t[[m, m2]] = self.gamma[[action, m, m2]] / sum;
            }
        }
        t
    }

    /// Destination weights for the plain counting rule: indicator of model
    /// states whose first observation matches the current observation.
    pub fn observation_indicator(&self, obs: ObsId) -> Array1<f64> {
        Array1::from_iter(
            self.states
                .iter()
                .map(|s| if s.first_observation() == obs { 1.0 } else { 0.0 }),
        )
    }
}

/// The shared credit kernel behind both posterior update rules and the
/// trainer's identified/smoothed variants: raw increments
/// `bsel[m] * w[m'] * t_action[m][m']` are normalized to total 1 and scaled
/// by `eta` before entering `gamma[action]`. All-zero raws are a no-op.
pub fn apply_credit(
    gamma: &mut Array3<f64>,
    action: ActId,
    bsel: &Array1<f64>,
    w: &Array1<f64>,
    t_action: &Array2<f64>,
    eta: f64,
) {
    let m_count = bsel.len();
    let mut raw = Array2::<f64>::zeros((m_count, m_count));
    let mut total = 0.0;
    for m in 0..m_count {
        if bsel[m] == 0.0 {
            continue;
        }
        for m2 in 0..m_count {
            let v = bsel[m] * w[m2] * t_action[[m, m2]];
            raw[[m, m2]] = v;
            total += v;
        }
    }
    if total <= 0.0 {
        return;
    }
    let scale = eta / total;
    for m in 0..m_count {
        for m2 in 0..m_count {
            if raw[[m, m2]] != 0.0 {
                gamma[[action, m, m2]] += scale * raw[[m, m2]];
            }
        }
    }
}

/// Probability distribution over model states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(Array1<f64>);

impl Belief {
    pub fn uniform(n: usize) -> Self {
        Belief(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn delta(n: usize, at: usize) -> Self {
        let mut b = Array1::zeros(n);
        b[at] = 1.0;
        Belief(b)
    }

    /// Belief conditioned on a single observation from an uninformative
    /// prior: the observation column of the model, normalized. Used to seed
    /// a trial and after a model split.
    pub fn from_observation(model: &SpomdpModel, obs: ObsId) -> Self {
        let mut b = Array1::from_iter((0..model.n_states()).map(|m| model.observation_prob(m, obs)));
        let sum = b.sum();
        if sum > 0.0 {
            b /= sum;
        } else {
            b.fill(1.0 / model.n_states() as f64);
        }
        Belief(b)
    }

    pub fn from_probs(probs: Array1<f64>) -> Result<Self, ModelError> {
        let sum = probs.sum();
        if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::BadBelief(sum));
        }
        Ok(Belief(probs))
    }

    pub fn probs(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the strict maximum; `None` when the maximum is attained at
    /// two or more entries (exact tie).
    pub fn unique_argmax(&self) -> Option<usize> {
        let max = self.0.iter().cloned().fold(f64::MIN, f64::max);
        let mut at = None;
        for (i, &p) in self.0.iter().enumerate() {
            if p == max {
                if at.is_some() {
                    return None;
                }
                at = Some(i);
            }
        }
        at
    }

    /// Policy-level localization: the argmax, unless the second-largest
    /// entry is within `band` of it (a contested belief counts as
    /// unlocalized even when the float maximum is technically unique).
    pub fn localized_state(&self, band: f64) -> Option<usize> {
        let mut best = f64::MIN;
        let mut second = f64::MIN;
        let mut at = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > best {
                second = best;
                best = p;
                at = i;
            } else if p > second {
                second = p;
            }
        }
        if self.0.len() > 1 && second >= band * best {
            None
        } else {
            Some(at)
        }
    }

    /// Normalized Shannon entropy over the effectively nonzero entries
    /// (entries above 1% of the maximum), with logarithm base equal to their
    /// count; 0 when only one entry remains.
    pub fn entropy_normalized(&self) -> f64 {
        let max = self.0.iter().cloned().fold(f64::MIN, f64::max);
        let floor = max * 1e-2;
        let nz: Vec<f64> = self.0.iter().cloned().filter(|&p| p > floor).collect();
        if nz.len() <= 1 {
            return 0.0;
        }
        let sum: f64 = nz.iter().sum();
        let h: f64 = nz
            .iter()
            .map(|&p| {
                let q = p / sum;
                -q * q.ln()
            })
            .sum();
        h / (nz.len() as f64).ln()
    }
}

/// One step of the discrete Bayes filter: predict with `T[action]`, correct
/// with the observation column, normalize.
pub fn belief_update(
    model: &SpomdpModel,
    belief: &Belief,
    action: ActId,
    observation: ObsId,
) -> Result<Belief, ModelError> {
    let m_count = model.n_states();
    let mut next = Array1::<f64>::zeros(m_count);
    for m in 0..m_count {
        let b = belief.probs()[m];
        if b == 0.0 {
            continue;
        }
        let row = model.transition_row(action, m);
        for m2 in 0..m_count {
            next[m2] += b * row[m2];
        }
    }
    for m2 in 0..m_count {
        next[m2] *= model.observation_prob(m2, observation);
    }
    let sum = next.sum();
    if sum <= 0.0 {
        return Err(ModelError::DegeneratePosterior);
    }
    next /= sum;
    Ok(Belief(next))
}

/// Transition-posterior update per the original counting rule: every model
/// state pair `(m, m')` with `m'` matching the current observation receives
/// a raw increment `T[a][m][m'] * b(m)`; raw increments are normalized to
/// total 1 and scaled by the learning rate.
pub fn update_posterior_baseline(
    model: &mut SpomdpModel,
    belief: &Belief,
    action: ActId,
    observation: ObsId,
) {
    let w = model.observation_indicator(observation);
    let bsel = belief.probs().clone();
    let t_action = model.transition_slice(action);
    let eta = model.learning_rate();
    apply_credit(model.gamma_mut(), action, &bsel, &w, &t_action, eta);
}

/// The argmax-gated variant: identical, except only the unique belief-argmax
/// state's row is updated; an exact tie for the maximum is a no-op.
pub fn update_posterior_argmax(
    model: &mut SpomdpModel,
    belief: &Belief,
    action: ActId,
    observation: ObsId,
) {
    let Some(src) = belief.unique_argmax() else {
        return;
    };
    let w = model.observation_indicator(observation);
    let mut bsel = Array1::zeros(belief.len());
    bsel[src] = belief.probs()[src];
    let t_action = model.transition_slice(action);
    let eta = model.learning_rate();
    apply_credit(model.gamma_mut(), action, &bsel, &w, &t_action, eta);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn fresh(n_obs: usize, n_act: usize) -> SpomdpModel {
        let obs: Vec<String> = (0..n_obs).map(|i| format!("o{i}")).collect();
        let act: Vec<String> = (0..n_act).map(|i| format!("a{i}")).collect();
        SpomdpModel::init(&obs, &act, 0.99, 1.0).unwrap()
    }

    #[test]
    fn init_one_state_per_observation() {
        let model = fresh(2, 2);
        assert_eq!(model.n_states(), 2);
        assert_eq!(model.state(0).sde, Sde::pure(0));
        assert_eq!(model.state(1).sde, Sde::pure(1));
        assert_eq!(model.gamma().shape(), &[2, 2, 2]);
        assert!(model.gamma().iter().all(|&g| g == 1.0));

        let model3 = fresh(3, 1);
        assert_eq!(model3.n_states(), 3);

        // derived T is uniform right after init
        let t = model3.transition_probs();
        for v in t.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn init_rejects_degenerate_alphabets() {
        assert!(SpomdpModel::init(&names(&["only"]), &names(&["a"]), 0.99, 1.0).is_err());
        assert!(SpomdpModel::init(&names(&["a", "b"]), &[], 0.99, 1.0).is_err());
    }

    #[test]
    fn transition_probs_normalize_gamma() {
        let mut model = fresh(4, 1);
        // row [1,1,3,1] -> [1/6, 1/6, 1/2, 1/6]
        model.gamma[[0, 0, 2]] = 3.0;
        let row = model.transition_row(0, 0);
        assert_abs_diff_eq!(row[0], 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row[2], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn observation_probs_epsilon_structure() {
        let model = fresh(2, 1);
        let om = model.observation_probs();
        assert_abs_diff_eq!(om[[0, 0]], 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(om[[0, 1]], 0.01, epsilon = 1e-12);
        for m in 0..2 {
            assert_abs_diff_eq!(om.row(m).sum(), 1.0, epsilon = 1e-12);
        }

        let obs = names(&["a", "b"]);
        let act = names(&["x"]);
        let one_hot = SpomdpModel::init(&obs, &act, 1.0, 1.0).unwrap();
        assert_eq!(one_hot.observation_probs()[[1, 1]], 1.0);
        assert_eq!(one_hot.observation_probs()[[1, 0]], 0.0);
    }

    #[test]
    fn belief_update_deterministic_propagation() {
        let obs = names(&["a", "b"]);
        let act = names(&["x"]);
        let mut model = SpomdpModel::init(&obs, &act, 1.0, 1.0).unwrap();
        // force T one-hot 0 -> 1
        model.gamma[[0, 0, 1]] = 1e12;
        let b = Belief::delta(2, 0);
        let next = belief_update(&model, &b, 0, 1).unwrap();
        assert_abs_diff_eq!(next.probs()[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn belief_update_hand_case() {
        // uniform T, uniform prior, epsilon 0.99, observe the symbol state 0
        // favors: posterior [0.99, 0.01]
        let model = fresh(2, 1);
        let b = Belief::uniform(2);
        let next = belief_update(&model, &b, 0, 0).unwrap();
        assert_abs_diff_eq!(next.probs()[0], 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(next.probs()[1], 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(next.probs().sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn entropy_normalized_conventions() {
        assert_eq!(Belief(array![1.0, 0.0, 0.0, 0.0]).entropy_normalized(), 0.0);
        assert_abs_diff_eq!(
            Belief(array![0.5, 0.5, 0.0, 0.0]).entropy_normalized(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            Belief(array![0.25, 0.25, 0.25, 0.25]).entropy_normalized(),
            1.0,
            epsilon = 1e-12
        );
        // entries below 1% of the max count as zero
        let near = Belief(array![0.495, 0.495, 0.005, 0.005]);
        assert_abs_diff_eq!(near.entropy_normalized(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn confidence_fresh_and_hand_value() {
        let model = fresh(4, 2);
        for a in 0..2 {
            for m in 0..4 {
                assert_eq!(model.confidence(m, a), 1.0);
            }
        }
        let mut model = fresh(4, 1);
        model.gamma[[0, 0, 1]] = 1.944;
        model.gamma[[0, 0, 2]] = 1.056;
        assert_abs_diff_eq!(model.confidence(0, 0), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn baseline_update_single_match() {
        // delta belief at m0, only m2 matches the observation, eta 1:
        // the single raw increment normalizes to a full unit of mass.
        let mut model = fresh(3, 1);
        let b = Belief::delta(3, 0);
        update_posterior_baseline(&mut model, &b, 0, 2);
        assert_abs_diff_eq!(model.gamma()[[0, 0, 2]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(model.gamma().sum() - 9.0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn baseline_update_two_matches_split_by_t() {
        // Delta belief at m0, exactly two destinations (m2, m3) match the
        // observation, T row [0.05, 0.05, 0.85, 0.05]: raw increments 0.85
        // and 0.05 normalize to 0.85/0.90 and 0.05/0.90.
        let mut model = SpomdpModel::with_sdes(
            vec![
                Sde::pure(0),
                Sde::pure(2),
                Sde::new(1, vec![(0, 0)]),
                Sde::new(1, vec![(0, 1)]),
            ],
            names(&["a", "b", "c"]),
            names(&["x"]),
            0.99,
            1.0,
        );
        let total = 1e7;
        model.gamma[[0, 0, 0]] = 0.05 * total;
        model.gamma[[0, 0, 1]] = 0.05 * total;
        model.gamma[[0, 0, 2]] = 0.85 * total;
        model.gamma[[0, 0, 3]] = 0.05 * total;
        let b = Belief::delta(4, 0);
        update_posterior_baseline(&mut model, &b, 0, 1);
        let d2 = model.gamma()[[0, 0, 2]] - 0.85 * total;
        let d3 = model.gamma()[[0, 0, 3]] - 0.05 * total;
        assert_abs_diff_eq!(d2, 0.85 / 0.90, epsilon = 1e-6);
        assert_abs_diff_eq!(d3, 0.05 / 0.90, epsilon = 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let obs = names(&["a", "b"]);
        let act = names(&["x"]);
        let mut model = SpomdpModel::init(&obs, &act, 0.99, 0.0).unwrap();
        let before = model.gamma().clone();
        update_posterior_baseline(&mut model, &Belief::delta(2, 0), 0, 1);
        assert_eq!(model.gamma(), &before);
    }

    #[test]
    fn argmax_update_tie_is_noop() {
        let mut model = fresh(4, 1);
        let before = model.gamma().clone();
        let tied = Belief(array![0.5, 0.5, 0.0, 0.0]);
        update_posterior_argmax(&mut model, &tied, 0, 2);
        assert_eq!(model.gamma(), &before);
    }

    #[test]
    fn argmax_update_gates_source_rows() {
        let mut model = fresh(4, 1);
        let b = Belief(array![0.7, 0.1, 0.1, 0.1]);
        update_posterior_argmax(&mut model, &b, 0, 2);
        // only row 0 changed, and by a full unit after normalization
        assert_abs_diff_eq!(model.gamma()[[0, 0, 2]], 2.0, epsilon = 1e-12);
        for m in 1..4 {
            for m2 in 0..4 {
                assert_eq!(model.gamma()[[0, m, m2]], 1.0);
            }
        }
    }

    #[test]
    fn argmax_equals_baseline_on_delta_beliefs() {
        let mut a = fresh(4, 2);
        let mut b = fresh(4, 2);
        let belief = Belief::delta(4, 2);
        update_posterior_baseline(&mut a, &belief, 1, 3);
        update_posterior_argmax(&mut b, &belief, 1, 3);
        for (x, y) in a.gamma().iter().zip(b.gamma().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn states_matching_observation_partitions() {
        let model = fresh(3, 1);
        assert_eq!(model.states_matching_observation(0), vec![0]);
        let all: Vec<usize> = (0..3)
            .flat_map(|o| model.states_matching_observation(o))
            .collect();
        assert_eq!(all.len(), model.n_states());
    }
}
