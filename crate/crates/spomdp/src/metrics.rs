//! Model quality against the ground-truth environment.
//!
//! A learned model is graded by mapping each model state to the environment
//! state whose noise-free dynamics reproduce the SDE's outcome sequence.
//! When that mapping is a bijection, the environment's most likely
//! transitions induce a theoretical transition tensor over model states to
//! compare against.

use ndarray::Array3;

use crate::env::{AlphaEpsilonEnv, StateId};
use crate::model::SpomdpModel;
use crate::sde::Sde;

/// Environment states whose noise-free execution (most likely transitions
/// and observations only) reproduces the SDE's outcome sequence.
pub fn noise_free_matches(env: &AlphaEpsilonEnv, sde: &Sde) -> Vec<StateId> {
    let mut out = Vec::new();
    'states: for s in 0..env.n_states() {
        if env.most_likely_observation(s) != sde.first_observation() {
            continue;
        }
        let mut cur = s;
        for &(a, o) in sde.steps() {
            cur = env.most_likely_transition(cur, a);
            if env.most_likely_observation(cur) != o {
                continue 'states;
            }
        }
        out.push(s);
    }
    out
}

/// The model-to-environment state bijection, if the SDE set induces one.
pub fn state_bijection(model: &SpomdpModel, env: &AlphaEpsilonEnv) -> Option<Vec<StateId>> {
    if model.n_states() != env.n_states() {
        return None;
    }
    let mut mapping = Vec::with_capacity(model.n_states());
    for state in model.states() {
        let matches = noise_free_matches(env, &state.sde);
        if matches.len() != 1 {
            return None;
        }
        mapping.push(matches[0]);
    }
    let mut seen = vec![false; env.n_states()];
    for &s in &mapping {
        if seen[s] {
            return None;
        }
        seen[s] = true;
    }
    Some(mapping)
}

/// Theoretical transition tensor over model states induced by the
/// environment's most likely transitions, when a bijection exists.
pub fn ground_truth_transitions(
    model: &SpomdpModel,
    env: &AlphaEpsilonEnv,
) -> Option<Array3<f64>> {
    let mapping = state_bijection(model, env)?;
    let m_count = model.n_states();
    let mut inverse = vec![0usize; env.n_states()];
    for (m, &s) in mapping.iter().enumerate() {
        inverse[s] = m;
    }
    let alpha = env.alpha();
    let off = (1.0 - alpha) / (m_count - 1) as f64;
    let mut t = Array3::from_elem((model.n_actions(), m_count, m_count), off);
    for a in 0..model.n_actions() {
        for m in 0..m_count {
            let image = inverse[env.most_likely_transition(mapping[m], a)];
            t[[a, m, image]] = alpha;
        }
    }
    Some(t)
}

/// Error and correctness report for a learned model.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Mean absolute difference to the theoretical transitions; absent when
    /// no bijection exists.
    pub mean_abs_error: Option<f64>,
    /// Per-transition absolute differences, same shape as the tensors.
    pub differences: Option<Array3<f64>>,
    /// A bijection exists and every learned row's argmax agrees with the
    /// environment's most likely transition under it.
    pub correctness: bool,
}

pub fn model_error(model: &SpomdpModel, env: &AlphaEpsilonEnv) -> ErrorReport {
    let Some(theory) = ground_truth_transitions(model, env) else {
        return ErrorReport {
            mean_abs_error: None,
            differences: None,
            correctness: false,
        };
    };
    let learned = model.transition_probs();
    let diff = (&learned - &theory).mapv(f64::abs);
    let mean = diff.sum() / diff.len() as f64;
    let mut structure_ok = true;
    for a in 0..model.n_actions() {
        for m in 0..model.n_states() {
            let argmax_of = |t: &Array3<f64>| {
                let mut best = 0;
                for m2 in 0..model.n_states() {
                    if t[[a, m, m2]] > t[[a, m, best]] {
                        best = m2;
                    }
                }
                best
            };
            if argmax_of(&learned) != argmax_of(&theory) {
                structure_ok = false;
            }
        }
    }
    ErrorReport {
        mean_abs_error: Some(mean),
        differences: Some(diff),
        correctness: structure_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::env_from_tables;
    use crate::model::SpomdpModel;
    use approx::assert_abs_diff_eq;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn shape_env(alpha: f64) -> AlphaEpsilonEnv {
        env_from_tables(
            alpha,
            0.99,
            &["x", "y"],
            &["square", "diamond"],
            &[0, 0, 1, 1],
            &[vec![2, 0, 1, 2], vec![1, 3, 3, 0]],
        )
        .build()
        .unwrap()
    }

    /// The known-correct SDE set for the shape environment above.
    fn correct_model(eta: f64) -> SpomdpModel {
        SpomdpModel::with_sdes(
            vec![
                Sde::new(0, vec![(0, 1)]),          // env 0: x -> diamond
                Sde::new(0, vec![(0, 0)]),          // env 1: x -> square
                Sde::new(1, vec![(0, 0), (0, 0)]),  // env 2: x,x -> square, square
                Sde::new(1, vec![(0, 1)]),          // env 3: x -> diamond
            ],
            names(&["square", "diamond"]),
            names(&["x", "y"]),
            0.99,
            eta,
        )
    }

    #[test]
    fn bijection_found_for_correct_sdes() {
        let env = shape_env(0.85);
        let model = correct_model(1.0);
        let mapping = state_bijection(&model, &env).unwrap();
        assert_eq!(mapping, vec![0, 1, 2, 3]);
        let t = ground_truth_transitions(&model, &env).unwrap();
        // rows are alpha-epsilon rows
        for a in 0..2 {
            for m in 0..4 {
                let row: Vec<f64> = (0..4).map(|m2| t[[a, m, m2]]).collect();
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    row.iter().cloned().fold(f64::MIN, f64::max),
                    0.85,
                    epsilon = 1e-12
                );
            }
        }
        // env 0 under x goes to env 2 (model state 2)
        assert_abs_diff_eq!(t[[0, 0, 2]], 0.85, epsilon = 1e-12);
    }

    #[test]
    fn initial_model_has_no_bijection() {
        let env = shape_env(0.85);
        let model =
            SpomdpModel::init(&names(&["square", "diamond"]), &names(&["x", "y"]), 0.99, 1.0)
                .unwrap();
        assert!(state_bijection(&model, &env).is_none());
        let report = model_error(&model, &env);
        assert!(report.mean_abs_error.is_none());
        assert!(!report.correctness);
    }

    #[test]
    fn deterministic_env_rows_are_one_hot() {
        let env = env_from_tables(
            1.0,
            1.0,
            &["x"],
            &["a", "b"],
            &[0, 1],
            &[vec![1, 0]],
        )
        .build()
        .unwrap();
        let model = SpomdpModel::init(&names(&["a", "b"]), &names(&["x"]), 1.0, 1.0).unwrap();
        let t = ground_truth_transitions(&model, &env).unwrap();
        assert_eq!(t[[0, 0, 1]], 1.0);
        assert_eq!(t[[0, 0, 0]], 0.0);
    }

    #[test]
    fn uniform_model_error_value() {
        // uniform 0.25 rows against alpha-epsilon rows [0.85, 0.05, 0.05, 0.05]:
        // per-row mean |diff| = (0.6 + 3 * 0.2) / 4 = 0.3
        let env = shape_env(0.85);
        let model = correct_model(1.0); // gamma all ones -> uniform T
        let report = model_error(&model, &env);
        assert_abs_diff_eq!(report.mean_abs_error.unwrap(), 0.3, epsilon = 1e-12);
        assert!(!report.correctness); // uniform rows have no matching argmax structure
    }

    #[test]
    fn exact_model_has_zero_error() {
        let env = shape_env(0.85);
        let mut model = correct_model(1.0);
        let theory = ground_truth_transitions(&model, &env).unwrap();
        let scale = 1e6;
        for a in 0..2 {
            for m in 0..4 {
                for m2 in 0..4 {
                    model.gamma_mut()[[a, m, m2]] = theory[[a, m, m2]] * scale;
                }
            }
        }
        let report = model_error(&model, &env);
        assert_abs_diff_eq!(report.mean_abs_error.unwrap(), 0.0, epsilon = 1e-12);
        assert!(report.correctness);
    }
}
