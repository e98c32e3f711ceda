//! Ground-truth alpha-epsilon environments.
//!
//! An environment has a finite state set, and for every `(state, action)`
//! pair a single most likely successor that occurs with probability `alpha`;
//! the remaining mass is spread uniformly over all other states. Each state
//! likewise emits one most likely observation with probability `epsilon`,
//! rest uniform. The environment is the sampling oracle the learner
//! interacts with; it is immutable after construction.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::EnvError;

/// Environment state identifier (dense, `0..n`).
pub type StateId = usize;
/// Observation symbol index into the environment's observation list.
pub type ObsId = usize;
/// Action symbol index into the environment's action list.
pub type ActId = usize;

/// One sampled interaction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvStepRecord {
    pub prior_state: StateId,
    pub action: ActId,
    pub next_state: StateId,
    pub observation: ObsId,
}

/// A directed alpha-epsilon POMDP environment.
#[derive(Debug, Clone)]
pub struct AlphaEpsilonEnv {
    actions: Vec<String>,
    observations: Vec<String>,
    /// `[state][action] -> successor`
    most_likely_transition: Vec<Vec<StateId>>,
    /// `[state] -> observation`
    most_likely_observation: Vec<ObsId>,
    alpha: f64,
    epsilon: f64,
    initial_state: Option<StateId>,
}

/// The alpha-epsilon distribution: `weight` on `favored_index`, the rest
/// spread uniformly over the other entries.
pub fn make_alpha_epsilon_distribution(
    favored_index: usize,
    size: usize,
    weight: f64,
) -> Result<Vec<f64>, EnvError> {
    if size < 2 {
        return Err(EnvError::Invalid(format!(
            "distribution needs at least 2 entries, got {size}"
        )));
    }
    if favored_index >= size {
        return Err(EnvError::Invalid(format!(
            "favored index {favored_index} out of range for size {size}"
        )));
    }
    if weight <= 1.0 / size as f64 || weight > 1.0 {
        return Err(EnvError::Degenerate { weight, size });
    }
    let rest = (1.0 - weight) / (size - 1) as f64;
    let mut row = vec![rest; size];
    row[favored_index] = weight;
    Ok(row)
}

impl AlphaEpsilonEnv {
    pub fn n_states(&self) -> usize {
        self.most_likely_observation.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    pub fn observation_names(&self) -> &[String] {
        &self.observations
    }

    pub fn initial_state(&self) -> Option<StateId> {
        self.initial_state
    }

    pub fn most_likely_transition(&self, state: StateId, action: ActId) -> StateId {
        self.most_likely_transition[state][action]
    }

    pub fn most_likely_observation(&self, state: StateId) -> ObsId {
        self.most_likely_observation[state]
    }

    /// Full transition tensor indexed `[action][state][next_state]`.
    pub fn transition_matrix(&self) -> Array3<f64> {
        let n = self.n_states();
        let mut t = Array3::zeros((self.n_actions(), n, n));
        for a in 0..self.n_actions() {
            for s in 0..n {
                let row =
                    make_alpha_epsilon_distribution(self.most_likely_transition[s][a], n, self.alpha)
                        .expect("validated on construction");
                for (s2, p) in row.into_iter().enumerate() {
                    t[[a, s, s2]] = p;
                }
            }
        }
        t
    }

    /// Observation tensor indexed `[state][observation]`.
    pub fn observation_matrix(&self) -> Array2<f64> {
        let n = self.n_states();
        let k = self.n_observations();
        let mut om = Array2::zeros((n, k));
        for s in 0..n {
            let row = make_alpha_epsilon_distribution(self.most_likely_observation[s], k, self.epsilon)
                .expect("validated on construction");
            for (o, p) in row.into_iter().enumerate() {
                om[[s, o]] = p;
            }
        }
        om
    }

    /// Sample an observation emitted at `state`.
    pub fn sample_observation<R: Rng>(&self, state: StateId, rng: &mut R) -> ObsId {
        sample_alpha_epsilon(
            self.most_likely_observation[state],
            self.n_observations(),
            self.epsilon,
            rng,
        )
    }

    /// Take `action` from `state`: sample the successor, then its observation.
    pub fn step<R: Rng>(&self, state: StateId, action: ActId, rng: &mut R) -> Result<EnvStepRecord, EnvError> {
        if state >= self.n_states() {
            return Err(EnvError::Invalid(format!("state {state} out of range")));
        }
        if action >= self.n_actions() {
            return Err(EnvError::Invalid(format!("action {action} out of range")));
        }
        let next_state = sample_alpha_epsilon(
            self.most_likely_transition[state][action],
            self.n_states(),
            self.alpha,
            rng,
        );
        let observation = self.sample_observation(next_state, rng);
        Ok(EnvStepRecord {
            prior_state: state,
            action,
            next_state,
            observation,
        })
    }
}

/// Draw from the alpha-epsilon distribution without materializing it: the
/// favored index with probability `weight`, otherwise uniform over the rest.
fn sample_alpha_epsilon<R: Rng>(favored: usize, size: usize, weight: f64, rng: &mut R) -> usize {
    if rng.gen::<f64>() < weight {
        favored
    } else {
        let k = rng.gen_range(0..size - 1);
        if k >= favored {
            k + 1
        } else {
            k
        }
    }
}

/// On-disk environment description (JSON).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub states: Vec<EnvStateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<StateId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvStateConfig {
    pub id: StateId,
    pub observation: String,
    /// action name -> successor state id
    pub transitions: BTreeMap<String, StateId>,
}

impl EnvConfig {
    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        serde_json::from_str(text).map_err(|e| EnvError::Parse(e.to_string()))
    }

    /// All invariant violations, empty when the config is well formed.
    /// Validation never fails outright; it reports everything it finds.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let n = self.states.len();
        if n < 2 {
            problems.push(format!("need at least 2 states, got {n}"));
        }
        if self.actions.is_empty() {
            problems.push("action set is empty".into());
        }
        if self.observations.len() < 2 {
            problems.push(format!(
                "need at least 2 observations, got {}",
                self.observations.len()
            ));
        }
        for (i, name) in self.actions.iter().enumerate() {
            if name.is_empty() {
                problems.push(format!("action {i} has an empty name"));
            }
            if self.actions[..i].contains(name) {
                problems.push(format!("duplicate action name {name:?}"));
            }
        }
        for (i, name) in self.observations.iter().enumerate() {
            if name.is_empty() {
                problems.push(format!("observation {i} has an empty name"));
            }
            if self.observations[..i].contains(name) {
                problems.push(format!("duplicate observation name {name:?}"));
            }
        }
        if n >= 2 && !(self.alpha > 1.0 / n as f64 && self.alpha <= 1.0) {
            problems.push(format!(
                "alpha {} outside (1/{}, 1]: the most likely transition must be unique",
                self.alpha, n
            ));
        }
        let k = self.observations.len();
        if k >= 2 && !(self.epsilon > 1.0 / k as f64 && self.epsilon <= 1.0) {
            problems.push(format!(
                "epsilon {} outside (1/{}, 1]: the most likely observation must be unique",
                self.epsilon, k
            ));
        }
        let mut seen = vec![false; n];
        for st in &self.states {
            if st.id >= n {
                problems.push(format!("state id {} not in 0..{n}", st.id));
                continue;
            }
            if seen[st.id] {
                problems.push(format!("duplicate state id {}", st.id));
            }
            seen[st.id] = true;
            if !self.observations.contains(&st.observation) {
                problems.push(format!(
                    "state {} names unknown observation {:?}",
                    st.id, st.observation
                ));
            }
            for action in &self.actions {
                match st.transitions.get(action) {
                    None => problems.push(format!(
                        "state {} is missing a transition for action {action:?}",
                        st.id
                    )),
                    Some(&succ) if succ >= n => problems.push(format!(
                        "state {} action {action:?} points at invalid state {succ}",
                        st.id
                    )),
                    Some(_) => {}
                }
            }
            for action in st.transitions.keys() {
                if !self.actions.contains(action) {
                    problems.push(format!(
                        "state {} has a transition for unknown action {action:?}",
                        st.id
                    ));
                }
            }
        }
        for (id, s) in seen.iter().enumerate() {
            if !s {
                problems.push(format!("state id {id} is never defined"));
            }
        }
        if let Some(init) = self.initial_state {
            if init >= n {
                problems.push(format!("initial_state {init} not in 0..{n}"));
            }
        }
        problems
    }

    /// Build a validated environment; the first violation becomes the error.
    pub fn build(&self) -> Result<AlphaEpsilonEnv, EnvError> {
        let problems = self.validate();
        if let Some(first) = problems.into_iter().next() {
            return Err(EnvError::Invalid(first));
        }
        let n = self.states.len();
        let mut most_likely_transition = vec![vec![0; self.actions.len()]; n];
        let mut most_likely_observation = vec![0; n];
        for st in &self.states {
            most_likely_observation[st.id] = self
                .observations
                .iter()
                .position(|o| *o == st.observation)
                .expect("validated");
            for (ai, action) in self.actions.iter().enumerate() {
                most_likely_transition[st.id][ai] = st.transitions[action];
            }
        }
        Ok(AlphaEpsilonEnv {
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            most_likely_transition,
            most_likely_observation,
            alpha: self.alpha,
            epsilon: self.epsilon,
            initial_state: self.initial_state,
        })
    }

    /// Same config with alpha/epsilon overridden (used by CLI flags and sweeps).
    pub fn with_noise(&self, alpha: f64, epsilon: f64) -> Self {
        let mut c = self.clone();
        c.alpha = alpha;
        c.epsilon = epsilon;
        c
    }
}

/// Builder for environments defined in code (tests, shipped examples).
pub fn env_from_tables(
    alpha: f64,
    epsilon: f64,
    actions: &[&str],
    observations: &[&str],
    obs_of: &[ObsId],
    transitions: &[Vec<StateId>], // [action][state]
) -> EnvConfig {
    let states = obs_of
        .iter()
        .enumerate()
        .map(|(id, &o)| EnvStateConfig {
            id,
            observation: observations[o].to_string(),
            transitions: actions
                .iter()
                .enumerate()
                .map(|(ai, a)| (a.to_string(), transitions[ai][id]))
                .collect(),
        })
        .collect();
    EnvConfig {
        alpha,
        epsilon,
        actions: actions.iter().map(|s| s.to_string()).collect(),
        observations: observations.iter().map(|s| s.to_string()).collect(),
        states,
        initial_state: None,
    }
}
