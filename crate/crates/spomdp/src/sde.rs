//! Stochastic distinguishing experiments.
//!
//! An SDE is an alternating sequence of observations and actions that begins
//! and ends with an observation: `[o0, a1, o1, ..., ak, ok]`. Successfully
//! executing one (taking its actions and seeing exactly its observations)
//! identifies the model state the agent started from. We store the head
//! observation plus `(action, observation)` pairs, which makes the
//! alternation invariant structural.

use crate::env::{ActId, ObsId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sde {
    first: ObsId,
    steps: Vec<(ActId, ObsId)>,
}

impl Sde {
    pub fn new(first: ObsId, steps: Vec<(ActId, ObsId)>) -> Self {
        Sde { first, steps }
    }

    /// The single-observation SDE `[o]`.
    pub fn pure(obs: ObsId) -> Self {
        Sde { first: obs, steps: Vec::new() }
    }

    pub fn first_observation(&self) -> ObsId {
        self.first
    }

    pub fn steps(&self) -> &[(ActId, ObsId)] {
        &self.steps
    }

    /// Number of actions (the SDE's execution length).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = ActId> + '_ {
        self.steps.iter().map(|&(a, _)| a)
    }

    /// The outcome sequence: all observations in order, head included.
    pub fn outcome_sequence(&self) -> Vec<ObsId> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(self.first);
        out.extend(self.steps.iter().map(|&(_, o)| o));
        out
    }

    /// What remains after consuming the first `consumed` steps; itself a
    /// well-formed SDE.
    pub fn suffix(&self, consumed: usize) -> Sde {
        if consumed == 0 {
            return self.clone();
        }
        Sde {
            first: self.steps[consumed - 1].1,
            steps: self.steps[consumed..].to_vec(),
        }
    }

    /// The SDE `[o, a] ++ self`, i.e. this experiment extended backwards by
    /// one observation-action step. This is the split concatenation rule.
    pub fn extend_front(&self, obs: ObsId, action: ActId) -> Sde {
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.push((action, self.first));
        steps.extend_from_slice(&self.steps);
        Sde { first: obs, steps }
    }

    /// Render with symbol tables, e.g. `[square, x, diamond]`.
    pub fn display(&self, observations: &[String], actions: &[String]) -> String {
        let mut out = format!("[{}", observations[self.first]);
        for &(a, o) in &self.steps {
            out.push_str(&format!(", {}, {}", actions[a], observations[o]));
        }
        out.push(']');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_sequence_is_observation_subsequence() {
        let sde = Sde::new(0, vec![(1, 1), (0, 0)]);
        assert_eq!(sde.outcome_sequence(), vec![0, 1, 0]);
        assert_eq!(sde.first_observation(), 0);
        assert_eq!(sde.actions().collect::<Vec<_>>(), vec![1, 0]);
    }

    #[test]
    fn extend_front_keeps_alternation() {
        // [diamond] extended by (square, x) -> [square, x, diamond]
        let base = Sde::pure(1);
        let ext = base.extend_front(0, 0);
        assert_eq!(ext.first_observation(), 0);
        assert_eq!(ext.steps(), &[(0, 1)]);
        assert_eq!(ext.outcome_sequence(), vec![0, 1]);

        // [square, y, diamond] extended by (square, x)
        let longer = Sde::new(0, vec![(1, 1)]).extend_front(0, 0);
        assert_eq!(longer.outcome_sequence(), vec![0, 0, 1]);
        assert_eq!(longer.steps(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn suffixes() {
        let sde = Sde::new(0, vec![(1, 1), (0, 0)]);
        assert_eq!(sde.suffix(0), sde);
        assert_eq!(sde.suffix(1), Sde::new(1, vec![(0, 0)]));
        assert_eq!(sde.suffix(2), Sde::pure(0));
    }

    #[test]
    fn display_uses_symbols() {
        let obs = vec!["square".to_string(), "diamond".to_string()];
        let act = vec!["x".to_string(), "y".to_string()];
        let sde = Sde::new(0, vec![(0, 1)]);
        assert_eq!(sde.display(&obs, &act), "[square, x, diamond]");
    }
}
