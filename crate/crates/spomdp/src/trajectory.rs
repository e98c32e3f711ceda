//! Trajectory-anchored transition counting.
//!
//! Every executed step is held briefly in a rolling window and matched
//! against the model's SDEs. A completed match identifies the model state at
//! the window's start, which retroactively resolves the source of the
//! window's first step and the destination of the step that entered the
//! window. The belief is re-anchored by replaying the filter from the
//! identified state. Steps leave the window with exactly one posterior
//! credit each: identified endpoints become one-hot factors, unidentified
//! destinations fall back to the observation-class indicator weighted by the
//! likelihood of the steps observed afterwards (fixed-lag smoothing), and
//! unidentified sources use the filtered pre-step belief under the
//! configured update rule.

use ndarray::{Array1, Array2, Array3};
use std::collections::VecDeque;

use crate::env::{ActId, ObsId};
use crate::model::{apply_credit, Belief, SpomdpModel};
use crate::sde::Sde;

/// Which transition-posterior update rule the trainer applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorRule {
    /// Original counting rule: every source weighted by belief.
    Baseline,
    /// Argmax-gated rule: only the unique belief-argmax source row updates;
    /// exact ties update nothing.
    Argmax,
}

/// One executed step awaiting its posterior credit.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub belief_pre: Belief,
    /// `T[action]` snapshot (rows normalized) taken before the step.
    pub t_action: Array2<f64>,
    pub action: ActId,
    pub obs_before: ObsId,
    pub obs_after: ObsId,
    pub source_id: Option<usize>,
    pub dest_id: Option<usize>,
}

/// Identification produced by a window match: the agent was at `state` this
/// many steps ago.
#[derive(Debug, Clone, Copy)]
pub struct Anchor {
    pub state: usize,
    pub steps_ago: usize,
}

#[derive(Debug, Default)]
pub struct Tracker {
    records: VecDeque<StepRecord>,
}

impl Tracker {
    pub fn new() -> Self {
        Tracker { records: VecDeque::new() }
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Append a step, match SDE windows ending at it, and return the most
    /// recent identification if any window completed.
    pub fn push(&mut self, model: &SpomdpModel, mut record: StepRecord) -> Option<Anchor> {
        // pure (observation-only) states identify endpoints outright
        if record.source_id.is_none() {
            record.source_id = model.state_for_sde(&Sde::pure(record.obs_before));
        }
        if record.dest_id.is_none() {
            record.dest_id = model.state_for_sde(&Sde::pure(record.obs_after));
        }
        self.records.push_back(record);

        let n = self.records.len();
        let mut best: Option<Anchor> = None;
        for state in model.states() {
            let k = state.sde.len();
            if k == 0 || k > n {
                continue;
            }
            let start = n - k;
            if self.records[start].obs_before != state.sde.first_observation() {
                continue;
            }
            let matches = state
                .sde
                .steps()
                .iter()
                .enumerate()
                .all(|(i, &(a, o))| {
                    let r = &self.records[start + i];
                    r.action == a && r.obs_after == o
                });
            if !matches {
                continue;
            }
            // the agent was at this state when the window began
            self.records[start].source_id = Some(state.id);
            if start > 0 {
                self.records[start - 1].dest_id = Some(state.id);
            }
            let anchor = Anchor { state: state.id, steps_ago: k };
            if best.map_or(true, |b| anchor.steps_ago < b.steps_ago) {
                best = Some(anchor);
            }
        }
        best
    }

    /// The last `n` records, oldest first (for belief replays).
    pub fn tail(&self, n: usize) -> impl Iterator<Item = &StepRecord> {
        let len = self.records.len();
        self.records.iter().skip(len - n)
    }

    /// Credit and drop records beyond the matcher horizon.
    pub fn finalize_excess(
        &mut self,
        model: &mut SpomdpModel,
        rule: PosteriorRule,
        extra_gamma: Option<&mut Array3<f64>>,
    ) {
        let horizon = model.max_sde_len();
        self.finalize_to(horizon, model, rule, extra_gamma);
    }

    /// Credit and drop every held record.
    pub fn flush(
        &mut self,
        model: &mut SpomdpModel,
        rule: PosteriorRule,
        extra_gamma: Option<&mut Array3<f64>>,
    ) {
        self.finalize_to(0, model, rule, extra_gamma);
    }

    fn finalize_to(
        &mut self,
        keep: usize,
        model: &mut SpomdpModel,
        rule: PosteriorRule,
        mut extra_gamma: Option<&mut Array3<f64>>,
    ) {
        while self.records.len() > keep {
            let record = self.records.pop_front().expect("nonempty");
            let smoothing = if record.dest_id.is_none() && !self.records.is_empty() {
                Some(self.future_likelihood(model))
            } else {
                None
            };
            apply_step_credit(model, &record, smoothing.as_ref(), rule, extra_gamma.as_deref_mut());
        }
    }

    /// Likelihood of the currently held (future) records for each candidate
    /// state occupied just after the departing step.
    fn future_likelihood(&self, model: &SpomdpModel) -> Array1<f64> {
        let m_count = model.n_states();
        let mut like = Array1::<f64>::ones(m_count);
        let t = model.transition_probs();
        for rec in self.records.iter().rev() {
            let mut next = Array1::<f64>::zeros(m_count);
            for m in 0..m_count {
                let mut acc = 0.0;
                for m2 in 0..m_count {
                    acc += t[[rec.action, m, m2]]
                        * model.observation_prob(m2, rec.obs_after)
                        * like[m2];
                }
                next[m] = acc;
            }
            like = next;
        }
        like
    }
}

/// Post one record's credit into the model counts (and optionally a second
/// tensor accumulating the same credits).
pub fn apply_step_credit(
    model: &mut SpomdpModel,
    record: &StepRecord,
    smoothing: Option<&Array1<f64>>,
    rule: PosteriorRule,
    extra_gamma: Option<&mut Array3<f64>>,
) {
    let m_count = model.n_states();
    let bsel = match record.source_id {
        Some(src) => {
            let mut b = Array1::zeros(m_count);
            b[src] = 1.0;
            b
        }
        None => match rule {
            PosteriorRule::Baseline => record.belief_pre.probs().clone(),
            PosteriorRule::Argmax => {
                let Some(src) = record.belief_pre.unique_argmax() else {
                    return;
                };
                let mut b = Array1::zeros(m_count);
                b[src] = record.belief_pre.probs()[src];
                b
            }
        },
    };
    let w = match record.dest_id {
        Some(dst) => {
            let mut w = Array1::zeros(m_count);
            w[dst] = 1.0;
            w
        }
        None => {
            let indicator = model.observation_indicator(record.obs_after);
            match smoothing {
                Some(like) => {
                    let weighted = &indicator * like;
                    if weighted.sum() > 0.0 {
                        weighted
                    } else {
                        indicator
                    }
                }
                None => indicator,
            }
        }
    };
    let eta = model.learning_rate();
    if let Some(extra) = extra_gamma {
        apply_credit(extra, record.action, &bsel, &w, &record.t_action, eta);
    }
    apply_credit(model.gamma_mut(), record.action, &bsel, &w, &record.t_action, eta);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SpomdpModel;
    use ndarray::array;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn record(model: &SpomdpModel, action: ActId, before: ObsId, after: ObsId) -> StepRecord {
        let m = model.n_states();
        StepRecord {
            belief_pre: Belief::uniform(m),
            t_action: Array2::from_elem((m, m), 1.0 / m as f64),
            action,
            obs_before: before,
            obs_after: after,
            source_id: None,
            dest_id: None,
        }
    }

    #[test]
    fn pure_states_identify_endpoints() {
        let model =
            SpomdpModel::init(&names(&["a", "b"]), &names(&["x"]), 0.99, 1.0).unwrap();
        let mut tracker = Tracker::new();
        let anchor = tracker.push(&model, record(&model, 0, 0, 1));
        assert!(anchor.is_none()); // no multi-step SDEs to match
        let rec = tracker.records.front().unwrap();
        assert_eq!(rec.source_id, Some(0));
        assert_eq!(rec.dest_id, Some(1));
    }

    #[test]
    fn window_match_identifies_start_and_previous_destination() {
        // model with [b] and [a, x, b]: executing (x: a -> b) completes the
        // two-observation window and claims its start
        let model = SpomdpModel::with_sdes(
            vec![Sde::pure(1), Sde::new(0, vec![(0, 1)])],
            names(&["a", "b"]),
            names(&["x"]),
            0.99,
            1.0,
        );
        let mut tracker = Tracker::new();
        // a step landing on observation a (the future window's start)
        tracker.push(&model, record(&model, 0, 1, 0));
        // the matching step
        let anchor = tracker.push(&model, record(&model, 0, 0, 1));
        let anchor = anchor.expect("window completed");
        assert_eq!(anchor.state, 1);
        assert_eq!(anchor.steps_ago, 1);
        assert_eq!(tracker.records[1].source_id, Some(1));
        // the step that entered the window now has a hard destination
        assert_eq!(tracker.records[0].dest_id, Some(1));
    }

    #[test]
    fn credits_sum_to_learning_rate_per_step() {
        let mut model =
            SpomdpModel::init(&names(&["a", "b"]), &names(&["x"]), 0.99, 1.0).unwrap();
        let mut tracker = Tracker::new();
        for i in 0..5 {
            tracker.push(&model, record(&model, 0, i % 2, (i + 1) % 2));
        }
        let before = model.gamma().sum();
        tracker.flush(&mut model, PosteriorRule::Baseline, None);
        let after = model.gamma().sum();
        assert!((after - before - 5.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_rule_drops_tied_unidentified_sources() {
        let model_ro =
            SpomdpModel::init(&names(&["a", "b"]), &names(&["x"]), 0.99, 1.0).unwrap();
        let mut model = model_ro.clone();
        let mut rec = record(&model, 0, 0, 1);
        rec.source_id = None;
        rec.dest_id = None;
        rec.belief_pre = Belief::from_probs(array![0.5, 0.5]).unwrap();
        let before = model.gamma().clone();
        apply_step_credit(&mut model, &rec, None, PosteriorRule::Argmax, None);
        assert_eq!(model.gamma(), &before);
    }
}
