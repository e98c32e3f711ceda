//! Action selection: the baseline random/SDE policy and the confidence-driven
//! navigation policy with its experiment-path tree search.
//!
//! Policies produce batches of actions for the trainer to execute; they do
//! not touch the environment themselves. The navigation policy has three
//! stages — localize, experiment, travel — and returns actions from exactly
//! one stage per call.

use rand::Rng;
use std::collections::VecDeque;

use crate::env::{ActId, ObsId};
use crate::model::{Belief, SpomdpModel};

/// Second-largest belief entry within this factor of the maximum counts as a
/// contested (unlocalized) belief for policy decisions.
pub const LOCALIZATION_BAND: f64 = 0.4;

/// What produced a batch of actions; recorded in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    Baseline,
    Localize,
    Experiment,
    Travel,
    Fallback,
    Verify,
}

impl PolicyMode {
    pub fn label(self) -> &'static str {
        match self {
            PolicyMode::Baseline => "baseline",
            PolicyMode::Localize => "localize",
            PolicyMode::Experiment => "experiment",
            PolicyMode::Travel => "travel",
            PolicyMode::Fallback => "fallback",
            PolicyMode::Verify => "verify",
        }
    }
}

/// Navigation policy parameters.
#[derive(Debug, Clone, Copy)]
pub struct NavConfig {
    pub confidence_factor: f64,
    pub localization_threshold: f64,
    pub explore: f64,
}

/// The agent's mutable view of a trial: current observation, belief, the
/// experiment flag, and the queue of pending actions.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub current_observation: ObsId,
    pub belief: Belief,
    pub performed_experiment: bool,
    pub pending: VecDeque<(ActId, PolicyMode)>,
}

impl AgentContext {
    pub fn new(model: &SpomdpModel, observation: ObsId) -> Self {
        AgentContext {
            current_observation: observation,
            belief: Belief::from_observation(model, observation),
            performed_experiment: false,
            pending: VecDeque::new(),
        }
    }

    /// Reset belief and flags against a (possibly new) model, keeping the
    /// current observation.
    pub fn reseed(&mut self, model: &SpomdpModel) {
        self.belief = Belief::from_observation(model, self.current_observation);
        self.performed_experiment = false;
        self.pending.clear();
    }

    /// The model state the agent treats as its position, if localized.
    pub fn current_state(&self) -> Option<usize> {
        self.belief.localized_state(LOCALIZATION_BAND)
    }
}

/// One refill of the baseline policy: the actions of an SDE matching the
/// current observation, or (with probability `explore`) the same number of
/// uniformly random actions. A pure-observation SDE contributes one random
/// action.
pub fn baseline_policy_extend<R: Rng>(
    model: &SpomdpModel,
    ctx: &AgentContext,
    explore: f64,
    rng: &mut R,
) -> Vec<ActId> {
    let matching = model.states_matching_observation(ctx.current_observation);
    debug_assert!(!matching.is_empty(), "initial SDEs cover every observation");
    let pick = matching[rng.gen_range(0..matching.len())];
    let sde = &model.state(pick).sde;
    let count = sde.len().max(1);
    if rng.gen::<f64>() < explore {
        (0..count)
            .map(|_| rng.gen_range(0..model.n_actions()))
            .collect()
    } else if sde.is_empty() {
        vec![rng.gen_range(0..model.n_actions())]
    } else {
        sde.actions().collect()
    }
}

/// Output of one navigation-policy call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NavBatch {
    Actions {
        actions: Vec<ActId>,
        mode: PolicyMode,
        /// For localize batches: the state whose SDE opens the batch.
        sde_state: Option<usize>,
    },
    /// Experiments remain but no path reaches one; the caller must revert to
    /// the baseline policy.
    NoExperimentsReachable,
}

/// One refill of the navigation policy. Stage order: localize when the last
/// experiment left the belief spread (or the belief is contested), otherwise
/// experiment on the first low-confidence action at the current state,
/// otherwise travel one step toward the best reachable experiment.
pub fn navigation_policy<R: Rng>(
    model: &SpomdpModel,
    ctx: &mut AgentContext,
    cfg: &NavConfig,
    rng: &mut R,
) -> NavBatch {
    let cur = ctx.current_state();
    let needs_localize = (ctx.performed_experiment
        && ctx.belief.entropy_normalized() > cfg.localization_threshold)
        || cur.is_none();
    if needs_localize {
        let matching = model.states_matching_observation(ctx.current_observation);
        let pick = matching[rng.gen_range(0..matching.len())];
        let sde = &model.state(pick).sde;
        let mut actions: Vec<ActId> = sde.actions().collect();
        if ctx.performed_experiment {
            // random actions in case latent states exist
            for _ in 0..model.n_states().saturating_sub(1) {
                actions.push(rng.gen_range(0..model.n_actions()));
            }
            ctx.performed_experiment = false;
        } else if actions.is_empty() {
            // a pure-observation SDE takes no steps; contribute one random
            // action so the batch always progresses
            actions.push(rng.gen_range(0..model.n_actions()));
        }
        return NavBatch::Actions {
            actions,
            mode: PolicyMode::Localize,
            sde_state: Some(pick),
        };
    }
    let cur = cur.expect("checked above");
    for a in 0..model.n_actions() {
        if model.confidence(cur, a) < cfg.confidence_factor {
            ctx.performed_experiment = true;
            return NavBatch::Actions {
                actions: vec![a],
                mode: PolicyMode::Experiment,
                sde_state: None,
            };
        }
    }
    match get_path_to_experiment(model, ctx, cfg) {
        // only the first action: the path is recalculated after every step
        Some(path) => NavBatch::Actions {
            actions: vec![path[0]],
            mode: PolicyMode::Travel,
            sde_state: None,
        },
        None => NavBatch::NoExperimentsReachable,
    }
}

/// Reward of an experiment edge: the parent's path probability times the
/// transition's confidence over `confidence_factor - 1`.
pub fn node_reward(parent_probability: f64, conf: f64, confidence_factor: f64) -> f64 {
    parent_probability * conf / (confidence_factor - 1.0)
}

#[derive(Debug, Clone)]
struct PlanNode {
    state: usize,
    reward: f64,
    probability: f64,
    path: Vec<ActId>,
    ancestors: Vec<usize>,
}

/// Tree search for the action path to the highest-reward reachable
/// experiment (grown level by level to depth `|M|`). `None` when no state
/// needs experiments or none is reachable.
pub fn get_path_to_experiment(
    model: &SpomdpModel,
    ctx: &AgentContext,
    cfg: &NavConfig,
) -> Option<Vec<ActId>> {
    let cur = ctx.current_state()?;
    let m_count = model.n_states();
    let n_actions = model.n_actions();
    let any_needed = (0..m_count)
        .any(|m| (0..n_actions).any(|a| model.confidence(m, a) < cfg.confidence_factor));
    if !any_needed {
        return None;
    }
    let t = model.transition_probs();
    let entropy_ok = ctx.belief.entropy_normalized() < cfg.localization_threshold;

    let root = PlanNode {
        state: cur,
        reward: 0.0,
        probability: 1.0,
        path: Vec::new(),
        ancestors: vec![cur],
    };
    let mut best: Option<PlanNode> = None;
    let mut level = vec![root];
    for _depth in 0..m_count {
        let mut next_level = Vec::new();
        for node in &level {
            if node.reward != 0.0 {
                // experiments terminate a path
                continue;
            }
            for a in 0..n_actions {
                let mut dest = 0;
                let mut max_p = f64::MIN;
                for m2 in 0..m_count {
                    let p = t[[a, node.state, m2]];
                    if p > max_p {
                        max_p = p;
                        dest = m2;
                    }
                }
                let prob = max_p * node.probability;
                let conf = model.confidence(node.state, a);
                if conf >= cfg.confidence_factor {
                    if entropy_ok && !node.ancestors.contains(&dest) {
                        let mut path = node.path.clone();
                        path.push(a);
                        let mut ancestors = node.ancestors.clone();
                        ancestors.push(dest);
                        next_level.push(PlanNode {
                            state: dest,
                            reward: 0.0,
                            probability: prob,
                            path,
                            ancestors,
                        });
                    }
                } else {
                    let reward = node_reward(node.probability, conf, cfg.confidence_factor);
                    let mut path = node.path.clone();
                    path.push(a);
                    let mut ancestors = node.ancestors.clone();
                    ancestors.push(dest);
                    let candidate = PlanNode {
                        state: dest,
                        reward,
                        probability: prob,
                        path,
                        ancestors,
                    };
                    let better = match &best {
                        None => true,
                        Some(b) => candidate.reward > b.reward,
                    };
                    if better {
                        best = Some(candidate.clone());
                    }
                    next_level.push(candidate);
                }
            }
        }
        if next_level.is_empty() {
            break;
        }
        level = next_level;
    }
    best.map(|node| node.path)
}
