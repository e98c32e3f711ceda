//! The outer learning loop: learn transitions to a confidence target,
//! evaluate the split signal, split, repeat — plus the policy-comparison
//! harness the experiments are built on.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{ActId, AlphaEpsilonEnv, EnvConfig, StateId};
use crate::metrics::{model_error, ErrorReport};
use crate::model::{belief_update, Belief, SpomdpModel};
use crate::policy::{
    baseline_policy_extend, navigation_policy, AgentContext, NavBatch, NavConfig, PolicyMode,
};
use crate::split::{compute_gains, compute_gains_on, make_split_spec, split_model, GainReport};
use crate::trajectory::{PosteriorRule, StepRecord, Tracker};

/// Consecutive localization batches without an experiment before the
/// navigation policy reverts to baseline exploration (the agent cannot stay
/// localized; see the fallback discussion in the training chapter).
const DELOCALIZATION_PATIENCE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Baseline,
    Navigation,
}

/// All knobs of one learning run. Defaults mirror the reference experiment
/// settings.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub policy: PolicyKind,
    pub posterior: PosteriorRule,
    pub explore: f64,
    pub confidence_factor: f64,
    pub localization_threshold: f64,
    pub max_actions: usize,
    pub gain_threshold: f64,
    pub patience: usize,
    pub learning_rate: f64,
    pub fallback_eval_interval: usize,
    pub seed: u64,
    /// Record per-step trace rows (slower; used by the CLI `run` command).
    pub record_steps: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            alpha: 0.85,
            epsilon: 0.99,
            policy: PolicyKind::Navigation,
            posterior: PosteriorRule::Argmax,
            explore: 0.5,
            confidence_factor: 250.0,
            localization_threshold: 0.75,
            max_actions: 75_000,
            gain_threshold: 0.01,
            patience: 0,
            learning_rate: 1.0,
            fallback_eval_interval: 1000,
            seed: 7,
            record_steps: false,
        }
    }
}

impl TrainerConfig {
    pub fn nav_config(&self) -> NavConfig {
        NavConfig {
            confidence_factor: self.confidence_factor,
            localization_threshold: self.localization_threshold,
            explore: self.explore,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Converged,
    ActionCap,
}

#[derive(Debug, Clone)]
pub struct StepTraceRow {
    pub step: usize,
    pub mode: PolicyMode,
    pub action: ActId,
    pub observation: usize,
    pub model_size: usize,
    pub confidence_min: f64,
    pub running_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SplitTraceRow {
    pub actions_at_split: usize,
    pub new_size: usize,
}

/// Per-run log: step rows (optional), split events, and the final outcome.
#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub steps: Vec<StepTraceRow>,
    pub splits: Vec<SplitTraceRow>,
    pub total_actions: usize,
    pub outcome: Option<RunOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseOutcome {
    TargetMet,
    FallbackTriggered,
    ActionCap,
}

/// A single trial: one environment, one model, one seeded random source.
/// Strictly single-writer; independent trials may run in parallel.
pub struct Session<'a> {
    env: &'a AlphaEpsilonEnv,
    cfg: &'a TrainerConfig,
    pub model: SpomdpModel,
    pub ctx: AgentContext,
    env_state: StateId,
    rng: ChaCha8Rng,
    tracker: Tracker,
    actions: usize,
    verify_gamma: Option<Array3<f64>>,
    pub trace: TrainingTrace,
}

impl<'a> Session<'a> {
    pub fn new(env: &'a AlphaEpsilonEnv, cfg: &'a TrainerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let env_state = env
            .initial_state()
            .unwrap_or_else(|| rng.gen_range(0..env.n_states()));
        let model = SpomdpModel::init(
            env.observation_names(),
            env.action_names(),
            cfg.epsilon,
            cfg.learning_rate,
        )
        .expect("validated environment alphabets");
        let observation = env.sample_observation(env_state, &mut rng);
        let ctx = AgentContext::new(&model, observation);
        Session {
            env,
            cfg,
            model,
            ctx,
            env_state,
            rng,
            tracker: Tracker::new(),
            actions: 0,
            verify_gamma: None,
            trace: TrainingTrace::default(),
        }
    }

    pub fn actions_taken(&self) -> usize {
        self.actions
    }

    fn at_cap(&self) -> bool {
        self.actions >= self.cfg.max_actions
    }

    /// Execute one action against the environment: filter the belief, record
    /// the step for trajectory matching, re-anchor on a completed window, and
    /// let aged-out records post their credits.
    pub fn exec_action(&mut self, action: ActId, mode: PolicyMode) {
        let belief_pre = self.ctx.belief.clone();
        let t_action = self.model.transition_slice(action);
        let obs_before = self.ctx.current_observation;
        let rec = self
            .env
            .step(self.env_state, action, &mut self.rng)
            .expect("valid ids");
        self.env_state = rec.next_state;
        self.actions += 1;
        let obs = rec.observation;

        let next_belief = belief_update(&self.model, &self.ctx.belief, action, obs)
            .expect("positive posterior with epsilon < 1 and gamma >= 1");
        self.ctx.belief = next_belief;
        self.ctx.current_observation = obs;

        let anchor = self.tracker.push(
            &self.model,
            StepRecord {
                belief_pre,
                t_action,
                action,
                obs_before,
                obs_after: obs,
                source_id: None,
                dest_id: None,
            },
        );
        if let Some(anchor) = anchor {
            // replay the filter from the identified position
            let mut b = Belief::delta(self.model.n_states(), anchor.state);
            let replay: Vec<(ActId, usize)> = self
                .tracker
                .tail(anchor.steps_ago)
                .map(|r| (r.action, r.obs_after))
                .collect();
            for (a, o) in replay {
                b = belief_update(&self.model, &b, a, o).expect("positive posterior");
            }
            self.ctx.belief = b;
        }
        self.tracker.finalize_excess(
            &mut self.model,
            self.cfg.posterior,
            self.verify_gamma.as_mut(),
        );

        if self.cfg.record_steps {
            let error = model_error(&self.model, self.env).mean_abs_error;
            self.trace.steps.push(StepTraceRow {
                step: self.actions,
                mode,
                action,
                observation: obs,
                model_size: self.model.n_states(),
                confidence_min: self.model.min_confidence(),
                running_error: error,
            });
        }
    }

    /// Post all held credits (phase and split boundaries).
    pub fn flush(&mut self) {
        self.tracker
            .flush(&mut self.model, self.cfg.posterior, self.verify_gamma.as_mut());
    }

    /// Execute one SDE against the environment; success means every outcome
    /// matched. Execution aborts at the first mismatch (the experiment has
    /// already failed) and at the action cap.
    pub fn run_sde(&mut self, state: usize, mode: PolicyMode) -> bool {
        let sde = self.model.state(state).sde.clone();
        if self.ctx.current_observation != sde.first_observation() {
            return false;
        }
        if sde.is_empty() {
            // an observation-only experiment localizes on the spot
            self.ctx.belief = Belief::delta(self.model.n_states(), state);
            return true;
        }
        for &(action, expected) in sde.steps() {
            if self.at_cap() {
                return false;
            }
            self.exec_action(action, mode);
            if self.ctx.current_observation != expected {
                return false;
            }
        }
        true
    }

    /// One baseline-policy batch (also used for fallback and verification).
    fn baseline_batch(&mut self, mode: PolicyMode) {
        let matching = self
            .model
            .states_matching_observation(self.ctx.current_observation);
        let pick = matching[self.rng.gen_range(0..matching.len())];
        let sde_len = self.model.state(pick).sde.len();
        if self.rng.gen::<f64>() < self.cfg.explore {
            for _ in 0..sde_len.max(1) {
                if self.at_cap() {
                    return;
                }
                let a = self.rng.gen_range(0..self.model.n_actions());
                self.exec_action(a, mode);
            }
        } else {
            self.run_sde(pick, mode);
            if sde_len == 0 && !self.at_cap() {
                // a pure-observation SDE contributes one random action
                let a = self.rng.gen_range(0..self.model.n_actions());
                self.exec_action(a, mode);
            }
        }
    }

    /// One navigation-policy batch. Returns false when no experiment is
    /// reachable (caller reverts to baseline). The bool in `.1` reports
    /// whether this batch performed an experiment.
    fn navigation_batch(&mut self) -> (bool, bool) {
        let nav_cfg = self.cfg.nav_config();
        match navigation_policy(&self.model, &mut self.ctx, &nav_cfg, &mut self.rng) {
            NavBatch::NoExperimentsReachable => (false, false),
            NavBatch::Actions { actions, mode, sde_state } => {
                let experimented = mode == PolicyMode::Experiment;
                match sde_state {
                    Some(state) => {
                        // run the SDE part with early abort on a mismatch;
                        // trailing random actions still execute
                        let sde_len = self.model.state(state).sde.len();
                        self.run_sde(state, mode);
                        for &a in &actions[sde_len..] {
                            if self.at_cap() {
                                break;
                            }
                            self.exec_action(a, mode);
                        }
                    }
                    None => {
                        for &a in &actions {
                            if self.at_cap() {
                                break;
                            }
                            self.exec_action(a, mode);
                        }
                    }
                }
                (true, experimented)
            }
        }
    }

    /// Drive the configured policy until every `(state, action)` pair meets
    /// the confidence target, a fallback gain evaluation fires, or the
    /// action cap is reached.
    pub fn learn_transitions_phase(&mut self) -> PhaseOutcome {
        let mut fallback = self.cfg.policy == PolicyKind::Baseline;
        let mut fallback_is_native = fallback;
        let mut fallback_actions = 0usize;
        let mut idle_localizations = 0usize;
        while !self.at_cap() {
            if self.model.all_confident(self.cfg.confidence_factor) {
                return PhaseOutcome::TargetMet;
            }
            if fallback {
                let mode = if fallback_is_native {
                    PolicyMode::Baseline
                } else {
                    PolicyMode::Fallback
                };
                let before = self.actions;
                self.baseline_batch(mode);
                fallback_actions += self.actions - before;
                if !fallback_is_native && fallback_actions >= self.cfg.fallback_eval_interval {
                    fallback_actions = 0;
                    self.flush();
                    let report = compute_gains(&self.model, Some(self.cfg.alpha));
                    if report.best_gain > self.cfg.gain_threshold {
                        return PhaseOutcome::FallbackTriggered;
                    }
                }
            } else {
                let (reachable, experimented) = self.navigation_batch();
                if !reachable {
                    fallback = true;
                    continue;
                }
                if experimented {
                    idle_localizations = 0;
                } else {
                    idle_localizations += 1;
                    if idle_localizations > DELOCALIZATION_PATIENCE {
                        // the belief distributes too much to experiment;
                        // revert to the traditional policy
                        fallback = true;
                    }
                }
            }
        }
        PhaseOutcome::ActionCap
    }

    /// Continue baseline exploration after a rejected split until a gain
    /// evaluation fires again or the cap is reached.
    fn fallback_until_gain(&mut self) -> bool {
        let mut spent = 0usize;
        while !self.at_cap() {
            let before = self.actions;
            self.baseline_batch(PolicyMode::Fallback);
            spent += self.actions - before;
            if spent >= self.cfg.fallback_eval_interval {
                spent = 0;
                self.flush();
                let report = compute_gains(&self.model, Some(self.cfg.alpha));
                if report.best_gain > self.cfg.gain_threshold {
                    return true;
                }
            }
        }
        false
    }

    /// Gather one fallback interval of occupancy-balanced evidence in a
    /// dedicated count tensor and evaluate the split signal on it. The
    /// navigation policy's focused exploration can hide a latent state's
    /// outcome mixture behind visit imbalance; convergence is only accepted
    /// on evidence gathered the way the baseline policy walks.
    fn verification_gains(&mut self) -> Option<GainReport> {
        self.verify_gamma = Some(Array3::ones(self.model.gamma().raw_dim()));
        let mut spent = 0usize;
        while !self.at_cap() && spent < self.cfg.fallback_eval_interval {
            let before = self.actions;
            self.baseline_batch(PolicyMode::Verify);
            spent += self.actions - before;
        }
        self.flush();
        let verify = self.verify_gamma.take().expect("set above");
        if self.at_cap() {
            return None;
        }
        Some(compute_gains_on(&self.model, &verify, Some(self.cfg.alpha)))
    }

    fn apply_split(&mut self, report: &GainReport) -> bool {
        let spec = make_split_spec(&self.model, report.best_state, report.best_action);
        match split_model(&self.model, &spec) {
            Ok(next) => {
                self.flush();
                self.tracker.clear();
                self.model = next;
                self.ctx.reseed(&self.model);
                self.trace.splits.push(SplitTraceRow {
                    actions_at_split: self.actions,
                    new_size: self.model.n_states(),
                });
                true
            }
            Err(_) => false,
        }
    }

    /// The full outer loop. Convergence is declared after `patience + 1`
    /// consecutive sub-threshold gain evaluations.
    pub fn learn_environment(&mut self) -> RunOutcome {
        let mut low_evaluations = 0usize;
        let outcome = loop {
            if self.at_cap() {
                break RunOutcome::ActionCap;
            }
            match self.learn_transitions_phase() {
                PhaseOutcome::ActionCap => break RunOutcome::ActionCap,
                PhaseOutcome::TargetMet | PhaseOutcome::FallbackTriggered => {}
            }
            self.flush();
            let report = compute_gains(&self.model, Some(self.cfg.alpha));
            if report.best_gain > self.cfg.gain_threshold {
                low_evaluations = 0;
                if !self.apply_split(&report) && !self.fallback_until_gain() {
                    break RunOutcome::ActionCap;
                }
                continue;
            }
            if self.cfg.policy == PolicyKind::Navigation {
                match self.verification_gains() {
                    None => break RunOutcome::ActionCap,
                    Some(verified) if verified.best_gain > self.cfg.gain_threshold => {
                        low_evaluations = 0;
                        if !self.apply_split(&verified) && !self.fallback_until_gain() {
                            break RunOutcome::ActionCap;
                        }
                        continue;
                    }
                    Some(_) => {}
                }
            }
            low_evaluations += 1;
            if low_evaluations > self.cfg.patience {
                break RunOutcome::Converged;
            }
        };
        self.flush();
        self.trace.total_actions = self.actions;
        self.trace.outcome = Some(outcome);
        outcome
    }
}

/// Run one full trial against an environment.
pub fn learn_environment(
    env: &AlphaEpsilonEnv,
    cfg: &TrainerConfig,
) -> (SpomdpModel, TrainingTrace, RunOutcome) {
    let mut session = Session::new(env, cfg);
    let outcome = session.learn_environment();
    let Session { model, trace, .. } = session;
    (model, trace, outcome)
}

/// One row of a policy comparison.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub policy: PolicyKind,
    pub trial: usize,
    pub seed: u64,
    pub total_actions: usize,
    pub actions_at_splits: Vec<usize>,
    pub converged: bool,
    pub success: bool,
    pub final_error: Option<f64>,
}

/// Aggregates for one policy arm.
#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub mean_actions: f64,
    pub stddev_actions: f64,
    pub success_rate: f64,
    /// Mean/stddev of the final error over successful trials only.
    pub mean_error: Option<f64>,
    pub stddev_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub rows: Vec<TrialResult>,
    pub baseline: PolicySummary,
    pub navigation: PolicySummary,
    /// navigation mean actions / baseline mean actions
    pub action_ratio: f64,
}

fn summarize(policy: PolicyKind, rows: &[TrialResult]) -> PolicySummary {
    let mine: Vec<&TrialResult> = rows.iter().filter(|r| r.policy == policy).collect();
    let n = mine.len().max(1) as f64;
    let mean_actions = mine.iter().map(|r| r.total_actions as f64).sum::<f64>() / n;
    let var_actions = mine
        .iter()
        .map(|r| (r.total_actions as f64 - mean_actions).powi(2))
        .sum::<f64>()
        / n;
    let success_rate = mine.iter().filter(|r| r.success).count() as f64 / n;
    let errors: Vec<f64> = mine
        .iter()
        .filter(|r| r.success)
        .filter_map(|r| r.final_error)
        .collect();
    let (mean_error, stddev_error) = if errors.is_empty() {
        (None, None)
    } else {
        let m = errors.iter().sum::<f64>() / errors.len() as f64;
        let v = errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / errors.len() as f64;
        (Some(m), Some(v.sqrt()))
    };
    PolicySummary {
        policy,
        mean_actions,
        stddev_actions: var_actions.sqrt(),
        success_rate,
        mean_error,
        stddev_error,
    }
}

/// Run both policy arms over the same seed list and tabulate the comparison.
/// The baseline arm pairs with the original update rule, the navigation arm
/// with the argmax-gated rule.
pub fn compare_policies(
    env_cfg: &EnvConfig,
    template: &TrainerConfig,
    trials: usize,
) -> Result<ComparisonTable, crate::EnvError> {
    let env = env_cfg.build()?;
    let mut rows = Vec::with_capacity(trials * 2);
    for (policy, posterior) in [
        (PolicyKind::Baseline, PosteriorRule::Baseline),
        (PolicyKind::Navigation, PosteriorRule::Argmax),
    ] {
        for trial in 0..trials {
            let mut cfg = template.clone();
            cfg.policy = policy;
            cfg.posterior = posterior;
            cfg.seed = template.seed.wrapping_add(trial as u64);
            cfg.record_steps = false;
            let (model, trace, outcome) = learn_environment(&env, &cfg);
            let report: ErrorReport = model_error(&model, &env);
            rows.push(TrialResult {
                policy,
                trial,
                seed: cfg.seed,
                total_actions: trace.total_actions,
                actions_at_splits: trace.splits.iter().map(|s| s.actions_at_split).collect(),
                converged: outcome == RunOutcome::Converged,
                success: report.correctness,
                final_error: report.mean_abs_error,
            });
        }
    }
    let baseline = summarize(PolicyKind::Baseline, &rows);
    let navigation = summarize(PolicyKind::Navigation, &rows);
    let action_ratio = navigation.mean_actions / baseline.mean_actions;
    Ok(ComparisonTable {
        rows,
        baseline,
        navigation,
        action_ratio,
    })
}
