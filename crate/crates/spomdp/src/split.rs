//! Latent-state detection and model splitting.
//!
//! A model state that stands for several environment states betrays itself
//! through transition rows whose outcomes are more mixed than the
//! alpha-epsilon noise floor permits. When a row is flagged, the state is
//! replaced by two new states whose SDEs extend the old observation by the
//! flagged action and the SDEs of the row's two most likely successors.

use ndarray::Array1;

use crate::env::ActId;
use crate::model::SpomdpModel;
use crate::sde::Sde;
use crate::SplitError;

/// Noise-floor multiplier for the split decision statistic.
const NOISE_SIGMA: f64 = 3.0;

/// Per-pair gain values with the winning pair.
#[derive(Debug, Clone)]
pub struct GainReport {
    /// `gains[m][a]`, the split-decision statistic.
    pub gains: Vec<Vec<f64>>,
    pub best_state: usize,
    pub best_action: ActId,
    pub best_gain: f64,
}

/// Base-2 Shannon entropy.
fn entropy2(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum()
}

/// Excess entropy of a transition row over the ideal alpha-epsilon row with
/// the same support size: zero exactly when the row is as deterministic as
/// the environment permits, large when the row is multimodal.
pub fn raw_gain(row: &[f64], alpha: f64) -> f64 {
    let k = row.len();
    if k < 2 {
        return 0.0;
    }
    let off = (1.0 - alpha) / (k - 1) as f64;
    let mut ideal = vec![off; k];
    ideal[0] = alpha;
    (entropy2(row) - entropy2(&ideal)).max(0.0)
}

/// The split-decision statistic for one `(state, action)` row.
///
/// Works on the observation-class marginal of the row (the outcome classes
/// an observer can actually distinguish), compared against a decision ideal:
/// the alpha-epsilon class marginal pushed through the observation noise
/// channel, mixed toward uniform by an allowance for belief-attribution
/// noise that grows with transition noise. Small-sample bias and a
/// three-sigma estimation floor are subtracted, so the statistic reads zero
/// until the evidence genuinely exceeds what noise explains.
fn decision_gain(
    marginal: &[f64],
    row_mass: f64,
    class_sizes: &[usize],
    m_count: usize,
    alpha: f64,
    epsilon: f64,
) -> f64 {
    let k = marginal.len();
    if k < 2 || m_count < 2 {
        return 0.0;
    }
    let mode_class = argmax(marginal);

    // ideal class marginal: alpha on the mode state, remainder uniform,
    // summed over each class's members
    let per_other = (1.0 - alpha) / (m_count - 1) as f64;
    let mut ideal: Vec<f64> = class_sizes.iter().map(|&s| s as f64 * per_other).collect();
    ideal[mode_class] += alpha - per_other;

    // observation channel: epsilon on the true class, rest uniform
    let off = if epsilon >= 1.0 { 0.0 } else { (1.0 - epsilon) / (k - 1) as f64 };
    let mut smeared = vec![0.0; k];
    for (c, &p) in ideal.iter().enumerate() {
        for (o, s) in smeared.iter_mut().enumerate() {
            *s += p * if o == c { epsilon } else { off };
        }
    }

    // attribution allowance: mix toward uniform, capped at one half
    let mix = (6.0 * (1.0 - alpha)).min(0.5);
    let uniform = 1.0 / k as f64;
    let ideal_att: Vec<f64> = smeared
        .iter()
        .map(|&p| (1.0 - mix) * p + mix * uniform)
        .collect();

    let h = entropy2(marginal);
    let mut g = h - entropy2(&ideal_att);

    // Miller-Madow small-sample bias
    g -= (k - 1) as f64 / (row_mass * std::f64::consts::LN_2);

    // delta-method noise floor on the entropy estimate
    let second_moment: f64 = marginal
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2() * p.log2())
        .sum();
    let var = ((second_moment - h * h) / row_mass).max(0.0);
    g -= NOISE_SIGMA * var.sqrt();

    g.max(0.0)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Evaluate the split statistic for every `(state, action)` pair of `model`
/// (optionally against external counts, e.g. a verification tensor).
/// `alpha` is the configured environment noise; when unknown, the mean of
/// per-row maxima of `T` substitutes.
pub fn compute_gains(model: &SpomdpModel, alpha: Option<f64>) -> GainReport {
    compute_gains_on(model, model.gamma(), alpha)
}

pub fn compute_gains_on(
    model: &SpomdpModel,
    gamma: &ndarray::Array3<f64>,
    alpha: Option<f64>,
) -> GainReport {
    let m_count = model.n_states();
    let n_actions = model.n_actions();
    let k = model.n_observations();

    let mut class_sizes = vec![0usize; k];
    for s in model.states() {
        class_sizes[s.first_observation()] += 1;
    }

    let alpha = alpha.unwrap_or_else(|| {
        // parameter-free fallback: mean of per-row maxima
        let mut total = 0.0;
        for a in 0..n_actions {
            for m in 0..m_count {
                let sum: f64 = (0..m_count).map(|m2| gamma[[a, m, m2]]).sum();
                let max = (0..m_count)
                    .map(|m2| gamma[[a, m, m2]] / sum)
                    .fold(f64::MIN, f64::max);
                total += max;
            }
        }
        total / (n_actions * m_count) as f64
    });

    let mut gains = vec![vec![0.0; n_actions]; m_count];
    let (mut best_state, mut best_action, mut best_gain) = (0, 0, f64::MIN);
    for a in 0..n_actions {
        for m in 0..m_count {
            let mass: f64 = (0..m_count).map(|m2| gamma[[a, m, m2]]).sum();
            let mut marginal = vec![0.0; k];
            for (m2, state) in model.states().iter().enumerate() {
                marginal[state.first_observation()] += gamma[[a, m, m2]] / mass;
            }
            let g = decision_gain(
                &marginal,
                mass,
                &class_sizes,
                m_count,
                alpha,
                model.epsilon_model(),
            );
            gains[m][a] = g;
            if g > best_gain {
                best_gain = g;
                best_state = m;
                best_action = a;
            }
        }
    }
    GainReport {
        gains,
        best_state,
        best_action,
        best_gain,
    }
}

/// How to split `(target, action)`: the two most likely successor states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub target: usize,
    pub action: ActId,
    pub successors: (usize, usize),
}

/// Top-2 successors of the row `T[action][target]`, ties toward lower ids.
pub fn make_split_spec(model: &SpomdpModel, target: usize, action: ActId) -> SplitSpec {
    let row: Array1<f64> = model.transition_row(action, target);
    let mut top1 = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[top1] {
            top1 = i;
        }
    }
    let mut top2 = usize::MAX;
    for (i, &p) in row.iter().enumerate() {
        if i == top1 {
            continue;
        }
        if top2 == usize::MAX || p > row[top2] {
            top2 = i;
        }
    }
    SplitSpec {
        target,
        action,
        successors: (top1, top2),
    }
}

/// Replace the target state with two new states whose SDEs are
/// `[o(target), action] ++ sde(successor)`. All other states carry over;
/// gamma resets to ones (the new state space invalidates old counts).
pub fn split_model(model: &SpomdpModel, spec: &SplitSpec) -> Result<SpomdpModel, SplitError> {
    let target = &model.state(spec.target);
    let head = target.first_observation();
    let new_a = model
        .state(spec.successors.0)
        .sde
        .extend_front(head, spec.action);
    let new_b = model
        .state(spec.successors.1)
        .sde
        .extend_front(head, spec.action);
    if new_a == new_b {
        return Err(SplitError::DuplicateSde);
    }
    let mut sdes: Vec<Sde> = Vec::with_capacity(model.n_states() + 1);
    for s in model.states() {
        if s.id != spec.target {
            sdes.push(s.sde.clone());
        }
    }
    if sdes.contains(&new_a) || sdes.contains(&new_b) {
        return Err(SplitError::DuplicateSde);
    }
    sdes.push(new_a);
    sdes.push(new_b);
    Ok(SpomdpModel::with_sdes(
        sdes,
        model.observation_names().to_vec(),
        model.action_names().to_vec(),
        model.epsilon_model(),
        model.learning_rate(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn raw_gain_zero_on_ideal_row() {
        assert_eq!(raw_gain(&[0.85, 0.05, 0.05, 0.05], 0.85), 0.0);
    }

    #[test]
    fn raw_gain_multimodal_row() {
        // H([.45,.45,.05,.05]) = 1.46900, H([.85,.05,.05,.05]) = 0.84758
        let g = raw_gain(&[0.45, 0.45, 0.05, 0.05], 0.85);
        assert_abs_diff_eq!(g, 0.62141, epsilon = 1e-4);
        assert!(g > 0.01);
    }

    #[test]
    fn raw_gain_uniform_is_maximal() {
        let uniform = raw_gain(&[0.25; 4], 0.85);
        for row in [
            [0.4, 0.2, 0.2, 0.2],
            [0.45, 0.45, 0.05, 0.05],
            [0.7, 0.1, 0.1, 0.1],
        ] {
            assert!(uniform >= raw_gain(&row, 0.85));
        }
    }

    #[test]
    fn raw_gain_permutation_invariant() {
        let a = raw_gain(&[0.45, 0.05, 0.45, 0.05], 0.85);
        let b = raw_gain(&[0.05, 0.45, 0.05, 0.45], 0.85);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn decision_gain_fires_on_latent_signature() {
        // fresh 2-state model has uniform rows: class marginal [0.5, 0.5]
        // with a decisive mass behind it must fire
        let mut model =
            SpomdpModel::init(&names(&["a", "b"]), &names(&["x"]), 0.99, 1.0).unwrap();
        for m in 0..2 {
            for m2 in 0..2 {
                model.gamma_mut()[[0, m, m2]] = 250.0;
            }
        }
        let report = compute_gains(&model, Some(0.85));
        assert!(report.best_gain > 0.01, "gain {}", report.best_gain);
    }

    #[test]
    fn decision_gain_quiet_on_resolved_rows() {
        // rows matching the alpha-epsilon structure with plenty of mass
        let mut model =
            SpomdpModel::init(&names(&["a", "b", "c"]), &names(&["x"]), 0.99, 1.0).unwrap();
        let mass = 1000.0;
        for m in 0..3 {
            for m2 in 0..3 {
                let p = if m2 == (m + 1) % 3 { 0.85 } else { 0.075 };
                model.gamma_mut()[[0, m, m2]] = p * mass;
            }
        }
        let report = compute_gains(&model, Some(0.85));
        assert!(report.best_gain < 0.01, "gain {}", report.best_gain);
    }

    #[test]
    fn split_spec_top_two() {
        let mut model =
            SpomdpModel::init(&names(&["a", "b", "c", "d"]), &names(&["x"]), 0.99, 1.0).unwrap();
        let g = model.gamma_mut();
        for (m2, v) in [0.45, 0.45, 0.05, 0.05].iter().enumerate() {
            g[[0, 0, m2]] = v * 100.0;
        }
        let spec = make_split_spec(&model, 0, 0);
        assert_eq!(spec.successors, (0, 1));

        let g = model.gamma_mut();
        for (m2, v) in [0.1, 0.2, 0.7, 0.0].iter().enumerate() {
            g[[0, 1, m2]] = v * 100.0 + 1.0;
        }
        let spec = make_split_spec(&model, 1, 0);
        assert_eq!(spec.successors, (2, 1));

        // tied second place: lower id wins
        let g = model.gamma_mut();
        for (m2, v) in [0.2, 0.6, 0.2, 0.0].iter().enumerate() {
            g[[0, 2, m2]] = v * 100.0 + 1.0;
        }
        let spec = make_split_spec(&model, 2, 0);
        assert_eq!(spec.successors, (1, 0));
    }

    #[test]
    fn split_concatenates_full_sdes() {
        // o(m) = a-class, action x, successors [a,y,b] and [b]:
        // new SDEs [a,x,a,y,b] and [a,x,b]
        use crate::sde::Sde;
        let model = SpomdpModel::with_sdes(
            vec![Sde::pure(0), Sde::new(0, vec![(1, 1)]), Sde::pure(1)],
            names(&["a", "b"]),
            names(&["x", "y"]),
            0.99,
            1.0,
        );
        let spec = SplitSpec {
            target: 0,
            action: 0,
            successors: (1, 2),
        };
        let split = split_model(&model, &spec).unwrap();
        assert_eq!(split.n_states(), 4);
        let sdes: Vec<&Sde> = split.states().iter().map(|s| &s.sde).collect();
        assert!(sdes.contains(&&Sde::new(0, vec![(0, 0), (1, 1)])));
        assert!(sdes.contains(&&Sde::new(0, vec![(0, 1)])));
        // both new states keep the head observation
        for s in split.states() {
            if s.sde.len() > 0 && !model.states().iter().any(|old| old.sde == s.sde) {
                assert_eq!(s.first_observation(), 0);
            }
        }
        // gamma reset
        assert!(split.gamma().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn split_rejects_duplicates() {
        use crate::sde::Sde;
        // splitting [a] on x toward ([a,x,b], [b]) would recreate [a,x,b]
        let model = SpomdpModel::with_sdes(
            vec![Sde::pure(0), Sde::new(0, vec![(0, 1)]), Sde::pure(1)],
            names(&["a", "b"]),
            names(&["x"]),
            0.99,
            1.0,
        );
        let spec = SplitSpec {
            target: 0,
            action: 0,
            successors: (2, 2),
        };
        assert!(split_model(&model, &spec).is_err());
        let spec = SplitSpec {
            target: 0,
            action: 0,
            successors: (2, 1),
        };
        // [a,x] ++ [b] = [a,x,b] already lives in the model
        assert!(split_model(&model, &spec).is_err());
    }

    #[test]
    fn split_grows_by_one() {
        let model =
            SpomdpModel::init(&names(&["a", "b"]), &names(&["x"]), 0.99, 1.0).unwrap();
        let spec = SplitSpec {
            target: 0,
            action: 0,
            successors: (0, 1),
        };
        let split = split_model(&model, &spec).unwrap();
        assert_eq!(split.n_states(), model.n_states() + 1);
    }
}
