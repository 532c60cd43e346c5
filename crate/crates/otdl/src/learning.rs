//! Temporal-difference learning on afterstates.
//!
//! The policy maximises the one-step return `r + V(s')` where `s'` is the
//! afterstate (the board after sliding, before the random spawn), and
//! learning bootstraps afterstate values: the 1-step error for step `t` is
//! `δ_t = r_{t+1} + V(s'_{t+1}) − V(s'_t)`, with a target of 0 at episode
//! end. Variants implemented here: n-step and truncated λ-returns,
//! temporal coherence (per-weight learning-rate modulation), optimistic
//! initialization with a delayed switch to temporal coherence, and the
//! rectified/ReLU update rules for recovering from pessimistic values.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use crate::engine::{Action, Board, Engine, SlideOutcome};
use crate::network::{CoherenceStore, Evaluator, MultistageNetwork, NTupleNetwork, TileThreshold};
use crate::rng::SplitMix64;

#[derive(Error, Debug)]
pub enum LearnError {
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
}

/// One executed step: the state the player saw, the action taken, the merge
/// reward, and the afterstate left behind before the spawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: Board,
    pub action: Action,
    pub reward: u64,
    pub afterstate: Board,
}

/// What follows an afterstate when computing its 1-step target.
#[derive(Clone, Copy, Debug)]
pub enum NextStep {
    /// The next transition's reward and afterstate.
    Step { reward: u64, afterstate: Board },
    /// Episode over: the target is 0.
    Terminal,
}

/// Update rule applied to each visited afterstate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// 1-step TD.
    Td0,
    /// n-step TD: n rewards plus a bootstrap n afterstates ahead.
    NStep(u32),
    /// Truncated λ-return over the given horizon.
    TdLambda { lambda: f64, horizon: u32 },
    /// 1-step TD with temporal-coherence learning-rate modulation.
    TemporalCoherence,
    /// 1-step TD with a rectified bootstrap target.
    RectifiedTd,
    /// Rectified TD that also skips updates for negative current values.
    ReluTd,
}

/// Whether updates are applied as transitions complete or replayed from the
/// episode end backwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    Forward,
    Backward,
}

/// Exploration mixed into action selection, annealed linearly to zero over
/// the training run.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// Pure greedy selection.
    None,
    /// Random legal action with probability `initial·(1−progress)`.
    EpsilonGreedy { initial: f64 },
    /// Boltzmann selection over 1-step returns with temperature
    /// `initial·(1−progress)`, scaled by a running mean absolute return.
    Softmax { initial: f64 },
}

/// Learning-rate decay breakpoint: from `at_fraction` of the run onwards the
/// step size becomes `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrBreakpoint {
    pub at_fraction: f64,
    pub alpha: f64,
}

/// Full configuration of a training run.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LearnerConfig {
    pub algorithm: UpdateRule,
    pub update_order: UpdateOrder,
    /// Base step size α; the per-weight share is α/F.
    pub alpha: f64,
    /// Decay breakpoints, ordered by fraction.
    pub lr_decay: Vec<LrBreakpoint>,
    /// Optimistic initial value; every weight starts at `v_init/F` so every
    /// position starts worth exactly `v_init`. Zero disables.
    pub v_init: f64,
    /// Final fraction of the run trained with temporal coherence instead of
    /// the base algorithm (the switch happens at `floor((1−f)·total)`).
    pub tc_fraction: f64,
    /// Zero the coherence accumulators every this many episodes, snapshotting
    /// the network just before each reset.
    pub coherence_reset_every: Option<u64>,
    pub total_episodes: u64,
    /// Evaluate greedily every this many episodes and append a curve point.
    pub eval_every: Option<u64>,
    pub eval_episodes: u64,
    pub exploration: Exploration,
    /// Parallel self-play workers sharing the network lock-free. Runs are
    /// bit-reproducible only with a single worker.
    pub workers: u32,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            algorithm: UpdateRule::Td0,
            update_order: UpdateOrder::Forward,
            alpha: 0.1,
            lr_decay: Vec::new(),
            v_init: 0.0,
            tc_fraction: 0.0,
            coherence_reset_every: None,
            total_episodes: 1000,
            eval_every: None,
            eval_episodes: 100,
            exploration: Exploration::None,
            workers: 1,
            seed: 0,
        }
    }
}

/// Standard optimistic value used by the optimistic-TD recipes.
pub const DEFAULT_V_INIT: f64 = 320_000.0;

impl LearnerConfig {
    /// Optimistic TD: α = 0.1 decayed to 0.01 and 0.001 at 50% and 75% of
    /// the run, weights optimistic at 320000.
    pub fn optimistic_td(total_episodes: u64) -> LearnerConfig {
        LearnerConfig {
            alpha: 0.1,
            lr_decay: vec![
                LrBreakpoint { at_fraction: 0.5, alpha: 0.01 },
                LrBreakpoint { at_fraction: 0.75, alpha: 0.001 },
            ],
            v_init: DEFAULT_V_INIT,
            total_episodes,
            ..LearnerConfig::default()
        }
    }

    /// Optimistic TC: temporal coherence throughout, α = 1 with no decay.
    pub fn optimistic_tc(total_episodes: u64) -> LearnerConfig {
        LearnerConfig {
            algorithm: UpdateRule::TemporalCoherence,
            alpha: 1.0,
            v_init: DEFAULT_V_INIT,
            tc_fraction: 1.0,
            total_episodes,
            ..LearnerConfig::default()
        }
    }

    /// Optimistic TD with a temporal-coherence fine-tuning tail (default
    /// 10% of the run).
    pub fn optimistic_td_tc(total_episodes: u64) -> LearnerConfig {
        LearnerConfig { tc_fraction: 0.10, ..LearnerConfig::optimistic_td(total_episodes) }
    }

    /// Step size in effect at `progress` ∈ [0,1].
    pub fn alpha_at(&self, progress: f64) -> f64 {
        let mut alpha = self.alpha;
        for bp in &self.lr_decay {
            if progress >= bp.at_fraction {
                alpha = bp.alpha;
            }
        }
        alpha
    }

    /// First episode index trained with temporal coherence (total when the
    /// run has no TC phase).
    pub fn tc_start_episode(&self) -> u64 {
        if self.algorithm == UpdateRule::TemporalCoherence {
            return 0;
        }
        if self.tc_fraction <= 0.0 {
            return self.total_episodes;
        }
        ((1.0 - self.tc_fraction) * self.total_episodes as f64).floor() as u64
    }

    fn uses_tc(&self) -> bool {
        self.tc_start_episode() < self.total_episodes
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let err = |msg: String| Err(LearnError::InvalidConfig(msg));
        if self.total_episodes == 0 {
            return err("total_episodes must be positive".into());
        }
        if !(self.alpha > 0.0) {
            return err("alpha must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tc_fraction) {
            return err(format!("tc_fraction {} outside [0,1]", self.tc_fraction));
        }
        match self.algorithm {
            UpdateRule::NStep(0) => return err("n-step TD needs n >= 1".into()),
            UpdateRule::TdLambda { lambda, horizon } => {
                if !(0.0..=1.0).contains(&lambda) {
                    return err(format!("lambda {lambda} outside [0,1]"));
                }
                if horizon == 0 {
                    return err("lambda-return horizon must be >= 1".into());
                }
            }
            _ => {}
        }
        let mut last = 0.0f64;
        for bp in &self.lr_decay {
            if !(0.0..=1.0).contains(&bp.at_fraction) || bp.at_fraction < last {
                return err("lr_decay breakpoints must be sorted fractions in [0,1]".into());
            }
            if !(bp.alpha > 0.0) {
                return err("lr_decay alphas must be positive".into());
            }
            last = bp.at_fraction;
        }
        if self.coherence_reset_every == Some(0) {
            return err("coherence_reset_every must be positive".into());
        }
        if self.coherence_reset_every.is_some() && !self.uses_tc() {
            return err("coherence resets configured but the run has no temporal-coherence phase".into());
        }
        if self.eval_every == Some(0) {
            return err("eval_every must be positive".into());
        }
        if self.eval_every.is_some() && self.eval_episodes == 0 {
            return err("eval_episodes must be positive when eval_every is set".into());
        }
        match self.exploration {
            Exploration::EpsilonGreedy { initial } if !(0.0..=1.0).contains(&initial) => {
                return err(format!("epsilon {initial} outside [0,1]"));
            }
            Exploration::Softmax { initial } if !(initial > 0.0) => {
                return err("softmax temperature must be positive".into());
            }
            _ => {}
        }
        if self.workers == 0 {
            return err("workers must be >= 1".into());
        }
        Ok(())
    }
}

/// Outcome of one self-play episode.
#[derive(Clone, Copy, Debug, Default)]
pub struct EpisodeOutcome {
    pub score: u64,
    pub max_exponent: u8,
    pub moves: u64,
}

/// Running scale estimate used by softmax exploration: the mean absolute
/// 1-step return seen so far (1 until the first observation).
#[derive(Clone, Debug, Default)]
pub struct ExplorationState {
    sum_abs: f64,
    count: u64,
}

impl ExplorationState {
    pub fn observe(&mut self, best_return: f64) {
        self.sum_abs += best_return.abs();
        self.count += 1;
    }

    pub fn scale(&self) -> f64 {
        if self.count == 0 {
            1.0
        } else {
            (self.sum_abs / self.count as f64).max(1e-9)
        }
    }
}

/// Greedy action: the legal action maximising `r + V(s')`, ties broken by
/// canonical order. `None` on terminal states.
#[inline]
pub fn greedy_action<V: Evaluator + ?Sized>(
    engine: &Engine,
    board: Board,
    value: &V,
) -> Option<(Action, SlideOutcome)> {
    let mut best: Option<(Action, SlideOutcome, f64)> = None;
    for a in Action::ALL {
        let out = engine.slide(board, a);
        if !out.moved {
            continue;
        }
        let ret = out.reward as f64 + value.value(out.after);
        match &best {
            Some((_, _, best_ret)) if ret <= *best_ret => {}
            _ => best = Some((a, out, ret)),
        }
    }
    best.map(|(a, out, _)| (a, out))
}

/// Policy action under the configured exploration, annealed by `progress`.
/// Also feeds the running return scale used by softmax temperatures.
pub fn select_action<V: Evaluator + ?Sized>(
    engine: &Engine,
    board: Board,
    value: &V,
    exploration: Exploration,
    progress: f64,
    state: &mut ExplorationState,
    rng: &mut SplitMix64,
) -> Option<(Action, SlideOutcome)> {
    let mut actions: [(Action, SlideOutcome, f64); 4] = [(
        Action::Up,
        SlideOutcome { after: board, reward: 0, moved: false },
        0.0,
    ); 4];
    let mut n = 0usize;
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = usize::MAX;
    for a in Action::ALL {
        let out = engine.slide(board, a);
        if !out.moved {
            continue;
        }
        let ret = out.reward as f64 + value.value(out.after);
        actions[n] = (a, out, ret);
        if ret > best {
            best = ret;
            best_idx = n;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    state.observe(best);
    let anneal = (1.0 - progress).max(0.0);
    let pick = match exploration {
        Exploration::None => best_idx,
        Exploration::EpsilonGreedy { initial } => {
            let eps = initial * anneal;
            if rng.next_f64() < eps {
                rng.next_below(n as u64) as usize
            } else {
                best_idx
            }
        }
        Exploration::Softmax { initial } => {
            let t = initial * anneal;
            if t <= 1e-12 {
                best_idx
            } else {
                let scale = t * state.scale();
                let mut weights = [0.0f64; 4];
                let mut total = 0.0;
                for i in 0..n {
                    let w = ((actions[i].2 - best) / scale).exp();
                    weights[i] = w;
                    total += w;
                }
                let mut u = rng.next_f64() * total;
                let mut chosen = n - 1;
                for (i, w) in weights.iter().enumerate().take(n) {
                    u -= w;
                    if u < 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
        }
    };
    let (a, out, _) = actions[pick];
    Some((a, out))
}

/// 1-step TD update of `V(s'_t)` toward `r_{t+1} + V(s'_{t+1})` (or 0 at
/// episode end). Returns the error δ.
pub fn td0_update(net: &NTupleNetwork, afterstate: Board, next: NextStep, alpha: f64) -> f64 {
    let target = match next {
        NextStep::Step { reward, afterstate: next_after } => reward as f64 + net.value(next_after),
        NextStep::Terminal => 0.0,
    };
    let delta = target - net.value(afterstate);
    net.update(afterstate, alpha * delta);
    delta
}

/// n-step return for the afterstate preceding `suffix[0]`: the next `n`
/// rewards plus the value of the n-th afterstate ahead. Truncates to the
/// Monte-Carlo return when the episode ends first.
pub fn nstep_return<V: Evaluator + ?Sized>(suffix: &[Transition], n: usize, value: &V) -> f64 {
    debug_assert!(n >= 1);
    let take = n.min(suffix.len());
    let mut ret: f64 = suffix[..take].iter().map(|t| t.reward as f64).sum();
    if suffix.len() >= n {
        ret += value.value(suffix[n - 1].afterstate);
    }
    ret
}

/// Truncated λ-return over `horizon` steps: the λ-weighted mix of the
/// 1..=horizon step returns, with all weight collapsing onto the final term
/// at λ = 1 and onto the 1-step return at λ = 0.
pub fn lambda_return<V: Evaluator + ?Sized>(
    suffix: &[Transition],
    lambda: f64,
    horizon: usize,
    value: &V,
) -> f64 {
    debug_assert!(horizon >= 1);
    let mut total = 0.0;
    let mut weight = 1.0; // λ^(k−1)
    for k in 1..horizon {
        total += (1.0 - lambda) * weight * nstep_return(suffix, k, value);
        weight *= lambda;
    }
    total + weight * nstep_return(suffix, horizon, value)
}

/// Temporal-coherence update: each looked-up weight moves by
/// `(α/F)·β_i·δ` where `β_i = |E_i|/A_i` (1 for fresh weights), computed
/// from the pre-update accumulators; afterwards every looked-up weight
/// accumulates `E += δ`, `A += |δ|`. Returns δ.
pub fn tc_update(
    net: &NTupleNetwork,
    coherence: &CoherenceStore,
    afterstate: Board,
    next: NextStep,
    alpha: f64,
) -> f64 {
    let target = match next {
        NextStep::Step { reward, afterstate: next_after } => reward as f64 + net.value(next_after),
        NextStep::Terminal => 0.0,
    };
    let delta = target - net.value(afterstate);
    apply_tc_adjustment(net, coherence, afterstate, alpha, delta);
    delta
}

/// Shared TC application: weight shares scaled by pre-update β, then the
/// error is accumulated. Split from [`tc_update`] so multistage training can
/// use externally computed errors.
pub(crate) fn apply_tc_adjustment(
    net: &NTupleNetwork,
    coherence: &CoherenceStore,
    afterstate: Board,
    alpha: f64,
    delta: f64,
) {
    // Two passes so every β reflects the pre-update accumulators even if a
    // feature repeats within one update.
    let mut hits: [(u16, u32, f32); 64] = [(0, 0, 0.0); 64];
    let mut n = 0usize;
    net.for_each_feature(afterstate, |t, i| {
        hits[n] = (t as u16, i, coherence.beta(t, i) as f32);
        n += 1;
    });
    let share = alpha * delta / n as f64;
    for &(t, i, beta) in &hits[..n] {
        net.add_to_cell(t as usize, i, share * beta as f64);
    }
    for &(t, i, _) in &hits[..n] {
        coherence.accumulate(t as usize, i, delta);
    }
}

/// Rectified TD: bootstraps on `max(V(s'_{t+1}), 0)` while still moving the
/// raw current value. Returns δ.
pub fn rectified_td_update(net: &NTupleNetwork, afterstate: Board, next: NextStep, alpha: f64) -> f64 {
    let target = match next {
        NextStep::Step { reward, afterstate: next_after } => {
            reward as f64 + net.value(next_after).max(0.0)
        }
        NextStep::Terminal => 0.0,
    };
    let delta = target - net.value(afterstate);
    net.update(afterstate, alpha * delta);
    delta
}

/// ReLU TD: like rectified TD, but afterstates whose current value is
/// negative are left untouched (returns `None`). A current value of exactly
/// zero still updates.
pub fn relu_td_update(
    net: &NTupleNetwork,
    afterstate: Board,
    next: NextStep,
    alpha: f64,
) -> Option<f64> {
    let current = net.value(afterstate);
    if current < 0.0 {
        return None;
    }
    let target = match next {
        NextStep::Step { reward, afterstate: next_after } => {
            reward as f64 + net.value(next_after).max(0.0)
        }
        NextStep::Terminal => 0.0,
    };
    let delta = target - current;
    net.update(afterstate, alpha * delta);
    Some(delta)
}

/// Value source for an episode: either the network being trained, or a
/// multistage stack in which exactly one stage is trained.
enum EpisodeValue<'a> {
    Single(&'a NTupleNetwork),
    Staged { msn: &'a MultistageNetwork, stage: usize },
}

impl EpisodeValue<'_> {
    #[inline]
    fn value(&self, b: Board) -> f64 {
        match self {
            EpisodeValue::Single(net) => net.value(b),
            EpisodeValue::Staged { msn, .. } => msn.value(b),
        }
    }

    fn trained(&self) -> &NTupleNetwork {
        match self {
            EpisodeValue::Single(net) => net,
            EpisodeValue::Staged { msn, stage } => msn.stage(*stage),
        }
    }
}

struct EpisodeContext<'a> {
    engine: &'a Engine,
    value: EpisodeValue<'a>,
    coherence: Option<&'a CoherenceStore>,
    config: &'a LearnerConfig,
    alpha: f64,
    use_tc: bool,
    progress: f64,
}

impl EpisodeContext<'_> {
    /// Applies the configured rule to the transition at `t` given the full
    /// trajectory so far (forward mode calls this once `t`'s lookahead is
    /// complete; backward mode calls it from the end).
    fn apply_update(&self, trajectory: &[Transition], t: usize) {
        let after = trajectory[t].afterstate;
        let net = self.value.trained();
        let suffix = &trajectory[t + 1..];
        let next = match suffix.first() {
            Some(next) => NextStep::Step { reward: next.reward, afterstate: next.afterstate },
            None => NextStep::Terminal,
        };
        if self.use_tc {
            let coherence = self.coherence.expect("TC phase allocates coherence");
            let target = match next {
                NextStep::Step { reward, afterstate } => {
                    reward as f64 + self.value.value(afterstate)
                }
                NextStep::Terminal => 0.0,
            };
            let delta = target - self.value.value(after);
            apply_tc_adjustment(net, coherence, after, self.alpha, delta);
            return;
        }
        match self.config.algorithm {
            UpdateRule::Td0 | UpdateRule::TemporalCoherence => {
                let target = match next {
                    NextStep::Step { reward, afterstate } => {
                        reward as f64 + self.value.value(afterstate)
                    }
                    NextStep::Terminal => 0.0,
                };
                let delta = target - self.value.value(after);
                net.update(after, self.alpha * delta);
            }
            UpdateRule::NStep(n) => {
                let target = nstep_return(suffix, n as usize, &|b: Board| self.value.value(b));
                let delta = target - self.value.value(after);
                net.update(after, self.alpha * delta);
            }
            UpdateRule::TdLambda { lambda, horizon } => {
                let target = lambda_return(suffix, lambda, horizon as usize, &|b: Board| {
                    self.value.value(b)
                });
                let delta = target - self.value.value(after);
                net.update(after, self.alpha * delta);
            }
            UpdateRule::RectifiedTd => {
                let target = match next {
                    NextStep::Step { reward, afterstate } => {
                        reward as f64 + self.value.value(afterstate).max(0.0)
                    }
                    NextStep::Terminal => 0.0,
                };
                let delta = target - self.value.value(after);
                net.update(after, self.alpha * delta);
            }
            UpdateRule::ReluTd => {
                let current = self.value.value(after);
                if current < 0.0 {
                    return;
                }
                let target = match next {
                    NextStep::Step { reward, afterstate } => {
                        reward as f64 + self.value.value(afterstate).max(0.0)
                    }
                    NextStep::Terminal => 0.0,
                };
                net.update(after, self.alpha * (target - current));
            }
        }
    }

    /// Steps the update rule needs to look ahead in forward mode.
    fn lookahead(&self) -> usize {
        if self.use_tc {
            return 1;
        }
        match self.config.algorithm {
            UpdateRule::NStep(n) => n as usize,
            UpdateRule::TdLambda { horizon, .. } => horizon as usize,
            _ => 1,
        }
    }

    fn run(
        &self,
        start: Board,
        rng: &mut SplitMix64,
        exploration_state: &mut ExplorationState,
        trajectory: &mut Vec<Transition>,
    ) -> EpisodeOutcome {
        trajectory.clear();
        let engine = self.engine;
        let mut board = start;
        let mut score = 0u64;
        let lookahead = self.lookahead();
        let forward = self.config.update_order == UpdateOrder::Forward;
        loop {
            let picked = select_action(
                engine,
                board,
                &|b: Board| self.value.value(b),
                self.config.exploration,
                self.progress,
                exploration_state,
                rng,
            );
            let Some((action, out)) = picked else { break };
            trajectory.push(Transition { state: board, action, reward: out.reward, afterstate: out.after });
            score += out.reward;
            if forward {
                let t = trajectory.len() - 1;
                if t >= lookahead {
                    self.apply_update(trajectory, t - lookahead);
                }
            }
            match engine.spawn_random(out.after, rng) {
                Ok(spawn) => board = spawn.board,
                Err(_) => break,
            }
        }
        if forward {
            // Flush the tail whose lookahead ran past the episode end.
            let len = trajectory.len();
            let first_pending = len.saturating_sub(lookahead);
            for t in first_pending..len {
                self.apply_update(trajectory, t);
            }
        } else {
            for t in (0..trajectory.len()).rev() {
                self.apply_update(trajectory, t);
            }
        }
        EpisodeOutcome {
            score,
            max_exponent: board.max_exponent(),
            moves: trajectory.len() as u64,
        }
    }
}

/// Plays and learns from a single episode under `config`, with `progress`
/// selecting the step size, exploration anneal, and TC phase. Returns the
/// outcome and the executed trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    engine: &Engine,
    net: &NTupleNetwork,
    config: &LearnerConfig,
    episode_index: u64,
    coherence: Option<&CoherenceStore>,
    exploration_state: &mut ExplorationState,
    rng: &mut SplitMix64,
) -> (EpisodeOutcome, Vec<Transition>) {
    let progress = episode_index as f64 / config.total_episodes as f64;
    let ctx = EpisodeContext {
        engine,
        value: EpisodeValue::Single(net),
        coherence,
        config,
        alpha: config.alpha_at(progress),
        use_tc: episode_index >= config.tc_start_episode(),
        progress,
    };
    let mut trajectory = Vec::new();
    let start = engine.initial_state(rng);
    let outcome = ctx.run(start, rng, exploration_state, &mut trajectory);
    (outcome, trajectory)
}

/// One point on a learning curve, produced by a greedy evaluation pause.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LearningCurvePoint {
    pub episodes: u64,
    pub avg_score: f64,
    pub max_score: u64,
    pub rate_2048: f64,
    pub rate_8192: f64,
    pub rate_16384: f64,
    pub rate_32768: f64,
}

/// Summary of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub episodes: u64,
    pub moves: u64,
    pub seconds: f64,
    /// First episode index (0-based) on which each exponent was reached.
    pub first_reach: [Option<u64>; 17],
    pub curve: Vec<LearningCurvePoint>,
    pub snapshots_taken: u32,
}

impl TrainReport {
    pub fn moves_per_second(&self) -> f64 {
        if self.seconds > 0.0 {
            self.moves as f64 / self.seconds
        } else {
            0.0
        }
    }

    /// First episode reaching a tile of the given value, if any.
    pub fn first_reach_tile(&self, tile: u64) -> Option<u64> {
        let exp = tile.trailing_zeros() as usize;
        self.first_reach.get(exp).copied().flatten()
    }
}

#[derive(Default)]
struct SharedStats {
    moves: AtomicU64,
    // first episode index per exponent, u64::MAX when unseen
    first_reach: [AtomicU64; 17],
}

impl SharedStats {
    fn new() -> Self {
        let stats = SharedStats { moves: AtomicU64::new(0), first_reach: Default::default() };
        for slot in &stats.first_reach {
            slot.store(u64::MAX, Ordering::Relaxed);
        }
        stats
    }

    fn record(&self, episode: u64, outcome: &EpisodeOutcome) {
        self.moves.fetch_add(outcome.moves, Ordering::Relaxed);
        for e in 1..=outcome.max_exponent {
            self.first_reach[e as usize].fetch_min(episode, Ordering::Relaxed);
        }
    }
}

/// Sink invoked with the network (and episode count) just before each
/// coherence reset.
pub type SnapshotSink<'a> = dyn FnMut(u64, &NTupleNetwork) + 'a;

/// Trains `net` in place according to `config`.
///
/// Applies optimistic initialization up front when `v_init` is nonzero,
/// anneals the step size and exploration, switches to temporal coherence for
/// the configured tail of the run, resets coherence accumulators on schedule
/// (snapshotting just before each reset), and pauses for greedy evaluations
/// to build the learning curve. With `workers > 1` episodes run on that many
/// threads against the shared tables; only single-worker runs are
/// bit-reproducible.
pub fn train(
    engine: &Engine,
    net: &NTupleNetwork,
    config: &LearnerConfig,
    coherence: Option<&CoherenceStore>,
    mut snapshot_sink: Option<&mut SnapshotSink<'_>>,
) -> Result<TrainReport, LearnError> {
    config.validate()?;
    let owned_coherence;
    let coherence = if config.uses_tc() && coherence.is_none() {
        owned_coherence = Some(CoherenceStore::for_network(net));
        owned_coherence.as_ref()
    } else {
        coherence
    };
    if let Some(store) = coherence {
        if !store.matches(net) {
            return Err(LearnError::InvalidConfig(
                "coherence store shape differs from network tables".into(),
            ));
        }
    }

    if config.v_init != 0.0 {
        net.init_optimistic(config.v_init);
    }

    let mut report = TrainReport::default();
    let started = Instant::now();
    let mut rng = SplitMix64::new(config.seed);
    let mut eval_rng = rng.split();
    let stats = SharedStats::new();
    let eval_scores = Mutex::new(Vec::<EpisodeOutcome>::new());

    // Episode indices at which the run must pause: evaluations and
    // coherence resets.
    let mut events: Vec<u64> = Vec::new();
    if let Some(every) = config.eval_every {
        let mut at = every;
        while at <= config.total_episodes {
            events.push(at);
            at += every;
        }
    }
    if let Some(every) = config.coherence_reset_every {
        let mut at = every;
        while at < config.total_episodes {
            events.push(at);
            at += every;
        }
    }
    events.push(config.total_episodes);
    events.sort_unstable();
    events.dedup();

    let mut segment_start = 0u64;
    for &segment_end in &events {
        if segment_end > segment_start {
            run_segment(
                engine,
                net,
                config,
                coherence,
                &stats,
                segment_start,
                segment_end,
                &mut rng,
            );
            segment_start = segment_end;
        }
        let at = segment_end;
        if config.coherence_reset_every.map(|e| at % e == 0 && at < config.total_episodes) == Some(true)
        {
            if let Some(sink) = snapshot_sink.as_deref_mut() {
                sink(at, net);
            }
            report.snapshots_taken += 1;
            if let Some(store) = coherence {
                store.reset();
            }
        }
        let eval_due = match config.eval_every {
            Some(every) => at % every == 0 || at == config.total_episodes,
            None => false,
        };
        if eval_due && at > 0 {
            let mut outcomes = eval_scores.lock().unwrap();
            outcomes.clear();
            for _ in 0..config.eval_episodes {
                outcomes.push(play_greedy_episode(
                    engine,
                    &|b: Board| net.value(b),
                    &mut eval_rng,
                ));
            }
            report.curve.push(curve_point(at, &outcomes));
        }
    }

    report.episodes = config.total_episodes;
    report.moves = stats.moves.load(Ordering::Relaxed);
    for (e, slot) in stats.first_reach.iter().enumerate() {
        let v = slot.load(Ordering::Relaxed);
        report.first_reach[e] = (v != u64::MAX).then_some(v);
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    engine: &Engine,
    net: &NTupleNetwork,
    config: &LearnerConfig,
    coherence: Option<&CoherenceStore>,
    stats: &SharedStats,
    start: u64,
    end: u64,
    rng: &mut SplitMix64,
) {
    let episode_body = |episode: u64, rng: &mut SplitMix64, expl: &mut ExplorationState, buf: &mut Vec<Transition>| {
        let progress = episode as f64 / config.total_episodes as f64;
        let ctx = EpisodeContext {
            engine,
            value: EpisodeValue::Single(net),
            coherence,
            config,
            alpha: config.alpha_at(progress),
            use_tc: episode >= config.tc_start_episode(),
            progress,
        };
        let start_board = engine.initial_state(rng);
        let outcome = ctx.run(start_board, rng, expl, buf);
        stats.record(episode, &outcome);
    };

    if config.workers <= 1 {
        let mut expl = ExplorationState::default();
        let mut buf = Vec::new();
        for episode in start..end {
            episode_body(episode, rng, &mut expl, &mut buf);
        }
    } else {
        let next = AtomicU64::new(start);
        std::thread::scope(|scope| {
            for w in 0..config.workers {
                let mut worker_rng = rng.split();
                // Decorrelate workers further by their index.
                for _ in 0..w {
                    worker_rng.next_u64();
                }
                let next = &next;
                let body = &episode_body;
                scope.spawn(move || {
                    let mut expl = ExplorationState::default();
                    let mut buf = Vec::new();
                    loop {
                        let episode = next.fetch_add(1, Ordering::Relaxed);
                        if episode >= end {
                            break;
                        }
                        body(episode, &mut worker_rng, &mut expl, &mut buf);
                    }
                });
            }
        });
    }
}

fn curve_point(episodes: u64, outcomes: &[EpisodeOutcome]) -> LearningCurvePoint {
    let n = outcomes.len().max(1) as f64;
    let rate = |exp: u8| outcomes.iter().filter(|o| o.max_exponent >= exp).count() as f64 / n;
    LearningCurvePoint {
        episodes,
        avg_score: outcomes.iter().map(|o| o.score as f64).sum::<f64>() / n,
        max_score: outcomes.iter().map(|o| o.score).max().unwrap_or(0),
        rate_2048: rate(11),
        rate_8192: rate(13),
        rate_16384: rate(14),
        rate_32768: rate(15),
    }
}

/// Plays one greedy episode without learning.
pub fn play_greedy_episode<V: Evaluator + ?Sized>(
    engine: &Engine,
    value: &V,
    rng: &mut SplitMix64,
) -> EpisodeOutcome {
    let mut board = engine.initial_state(rng);
    let mut outcome = EpisodeOutcome::default();
    while let Some((_, out)) = greedy_action(engine, board, value) {
        outcome.score += out.reward;
        outcome.moves += 1;
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => board = spawn.board,
            Err(_) => {
                board = out.after;
                break;
            }
        }
    }
    outcome.max_exponent = board.max_exponent();
    outcome
}

/// Plays one episode choosing uniformly among legal actions.
pub fn play_random_episode(engine: &Engine, rng: &mut SplitMix64) -> EpisodeOutcome {
    let mut board = engine.initial_state(rng);
    let mut outcome = EpisodeOutcome::default();
    loop {
        let legal: Vec<Action> = engine.legal_actions(board).iter().collect();
        if legal.is_empty() {
            break;
        }
        let action = legal[rng.next_below(legal.len() as u64) as usize];
        let out = engine.slide(board, action);
        outcome.score += out.reward;
        outcome.moves += 1;
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => board = spawn.board,
            Err(_) => {
                board = out.after;
                break;
            }
        }
    }
    outcome.max_exponent = board.max_exponent();
    outcome
}

/// Plays one episode always taking the action with the highest immediate
/// merge reward (ties broken canonically).
pub fn play_max_reward_episode(engine: &Engine, rng: &mut SplitMix64) -> EpisodeOutcome {
    let mut board = engine.initial_state(rng);
    let mut outcome = EpisodeOutcome::default();
    loop {
        let mut best: Option<(SlideOutcome, u64)> = None;
        for a in Action::ALL {
            let out = engine.slide(board, a);
            if out.moved && best.map(|(_, r)| out.reward > r).unwrap_or(true) {
                best = Some((out, out.reward));
            }
        }
        let Some((out, _)) = best else { break };
        outcome.score += out.reward;
        outcome.moves += 1;
        match engine.spawn_random(out.after, rng) {
            Ok(spawn) => board = spawn.board,
            Err(_) => {
                board = out.after;
                break;
            }
        }
    }
    outcome.max_exponent = board.max_exponent();
    outcome
}

/// Greedy self-play pool of stage-entry states: for each episode, the first
/// state whose tiles contain `threshold` is recorded.
pub fn harvest_stage_starts<V: Evaluator + ?Sized>(
    engine: &Engine,
    value: &V,
    threshold: &TileThreshold,
    episodes: u64,
    rng: &mut SplitMix64,
) -> Vec<Board> {
    let mut pool = Vec::new();
    for _ in 0..episodes {
        let mut board = engine.initial_state(rng);
        loop {
            if threshold.contained_in(&board.exponent_counts()) {
                pool.push(board);
                break;
            }
            let Some((_, out)) = greedy_action(engine, board, value) else { break };
            match engine.spawn_random(out.after, rng) {
                Ok(spawn) => board = spawn.board,
                Err(_) => break,
            }
        }
    }
    pool
}

/// Trains one stage of a multistage network: episodes start from states
/// sampled uniformly out of `start_pool`, greedy/exploratory play and TD
/// targets use the staged value function (routing by board content), and
/// every update writes only to stage `stage`'s tables.
pub fn multistage_train(
    engine: &Engine,
    msn: &MultistageNetwork,
    stage: usize,
    start_pool: &[Board],
    config: &LearnerConfig,
    coherence: Option<&CoherenceStore>,
) -> Result<TrainReport, LearnError> {
    config.validate()?;
    if stage >= msn.stage_count() {
        return Err(LearnError::InvalidConfig(format!(
            "stage {stage} out of range for {} stages",
            msn.stage_count()
        )));
    }
    if start_pool.is_empty() {
        return Err(LearnError::InvalidConfig("empty start pool".into()));
    }
    let owned_coherence;
    let coherence = if config.uses_tc() && coherence.is_none() {
        owned_coherence = Some(CoherenceStore::for_network(msn.stage(stage)));
        owned_coherence.as_ref()
    } else {
        coherence
    };
    if let Some(store) = coherence {
        if !store.matches(msn.stage(stage)) {
            return Err(LearnError::InvalidConfig(
                "coherence store shape differs from stage tables".into(),
            ));
        }
    }
    if config.v_init != 0.0 {
        msn.stage(stage).init_optimistic(config.v_init);
    }

    let mut report = TrainReport::default();
    let started = Instant::now();
    let mut rng = SplitMix64::new(config.seed);
    let stats = SharedStats::new();
    let mut expl = ExplorationState::default();
    let mut buf = Vec::new();
    for episode in 0..config.total_episodes {
        let progress = episode as f64 / config.total_episodes as f64;
        let ctx = EpisodeContext {
            engine,
            value: EpisodeValue::Staged { msn, stage },
            coherence,
            config,
            alpha: config.alpha_at(progress),
            use_tc: episode >= config.tc_start_episode(),
            progress,
        };
        let start = start_pool[rng.next_below(start_pool.len() as u64) as usize];
        let outcome = ctx.run(start, &mut rng, &mut expl, &mut buf);
        stats.record(episode, &outcome);
        if let Some(every) = config.coherence_reset_every {
            if (episode + 1) % every == 0 && episode + 1 < config.total_episodes {
                report.snapshots_taken += 1;
                if let Some(store) = coherence {
                    store.reset();
                }
            }
        }
    }
    report.episodes = config.total_episodes;
    report.moves = stats.moves.load(Ordering::Relaxed);
    for (e, slot) in stats.first_reach.iter().enumerate() {
        let v = slot.load(Ordering::Relaxed);
        report.first_reach[e] = (v != u64::MAX).then_some(v);
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TupleDef;

    fn engine() -> &'static Engine {
        Engine::shared_4x4()
    }

    fn row_tuples() -> Vec<TupleDef> {
        vec![
            TupleDef::new(vec![0, 1, 2, 3]).unwrap(),
            TupleDef::new(vec![4, 5, 6, 7]).unwrap(),
            TupleDef::new(vec![8, 9, 10, 11]).unwrap(),
            TupleDef::new(vec![12, 13, 14, 15]).unwrap(),
        ]
    }

    fn small_net() -> NTupleNetwork {
        NTupleNetwork::new(engine(), row_tuples(), true).unwrap()
    }

    /// Non-symmetric net: one lookup per tuple, each in its own table, so
    /// features never coincide and `update(b, v)` sets `V(b) = v` exactly.
    fn flat_net() -> NTupleNetwork {
        NTupleNetwork::new(engine(), row_tuples(), false).unwrap()
    }

    fn board_with_value(net: &NTupleNetwork, v: f64) -> Board {
        // Give one concrete board the exact value v by setting its features.
        let b = Board::from_exponents(&[1, 2, 3, 4, 5, 6, 7, 8, 1, 2, 3, 4, 5, 6, 7, 8]);
        net.update(b, v);
        b
    }

    #[test]
    fn td0_error_is_fourteen() {
        let net = flat_net();
        let current = board_with_value(&net, 90.0);
        let next = Board::from_exponents(&[2; 16]);
        net.update(next, 100.0);
        let delta = td0_update(
            &net,
            current,
            NextStep::Step { reward: 4, afterstate: next },
            0.0, // alpha 0: only measure the error
        );
        assert!((delta - 14.0).abs() < 1e-9);
    }

    #[test]
    fn td0_terminal_target_is_zero() {
        let net = flat_net();
        let current = board_with_value(&net, 90.0);
        let delta = td0_update(&net, current, NextStep::Terminal, 0.0);
        assert!((delta + 90.0).abs() < 1e-9);
    }

    #[test]
    fn td0_moves_value_by_alpha_delta() {
        let net = flat_net();
        let current = board_with_value(&net, 90.0);
        let delta = td0_update(&net, current, NextStep::Terminal, 0.1);
        assert!((delta + 90.0).abs() < 1e-9);
        assert!((net.value(current) - 81.0).abs() < 1e-9, "90 + 0.1·(−90)");
    }

    fn transition(reward: u64, afterstate: Board) -> Transition {
        Transition { state: Board::EMPTY, action: Action::Up, reward, afterstate }
    }

    #[test]
    fn nstep_return_example() {
        let net = flat_net();
        let last = board_with_value(&net, 50.0);
        let mid = Board::from_exponents(&[3; 16]);
        let suffix = [transition(4, mid), transition(8, last)];
        let got = nstep_return(&suffix, 2, &net);
        assert!((got - 62.0).abs() < 1e-9);
    }

    #[test]
    fn nstep_truncates_to_monte_carlo() {
        let net = flat_net();
        let suffix = [transition(4, Board::from_exponents(&[1; 16]))];
        // n = 5 but the episode ends after one reward: return is just 4.
        let got = nstep_return(&suffix, 5, &net);
        assert!((got - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_return_example() {
        // R(1) = 10, R(2) = 20, λ = 0.5, horizon 2 -> 0.5·10 + 0.5·20 = 15.
        let net = flat_net();
        let a = board_with_value(&net, 10.0); // makes R(1) = 0 + V(a) = 10
        let b = Board::from_exponents(&[4; 16]);
        net.update(b, 20.0); // R(2) = 0 + 0 + V(b) = 20
        let suffix = [transition(0, a), transition(0, b)];
        let got = lambda_return(&suffix, 0.5, 2, &net);
        assert!((got - 15.0).abs() < 1e-9);
    }

    #[test]
    fn lambda_zero_is_one_step_and_one_is_full_horizon() {
        let net = flat_net();
        let a = board_with_value(&net, 10.0);
        let b = Board::from_exponents(&[4; 16]);
        net.update(b, 20.0);
        let suffix = [transition(0, a), transition(0, b)];
        assert!((lambda_return(&suffix, 0.0, 2, &net) - 10.0).abs() < 1e-9);
        assert!((lambda_return(&suffix, 1.0, 2, &net) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn tc_update_tracks_accumulators() {
        let net = flat_net();
        let store = CoherenceStore::for_network(&net);
        let b = Board::from_exponents(&[1, 2, 3, 4, 5, 6, 7, 8, 1, 2, 3, 4, 5, 6, 7, 8]);
        let next = Board::from_exponents(&[2; 16]);
        net.update(next, 4.0);
        // Fresh weights: β = 1 everywhere, so the value moves by α·δ.
        let delta = tc_update(&net, &store, b, NextStep::Step { reward: 0, afterstate: next }, 1.0);
        assert!((delta - 4.0).abs() < 1e-9);
        assert!((net.value(b) - 4.0).abs() < 1e-9);
        net.for_each_feature(b, |t, i| {
            assert_eq!(store.error_sum(t, i), 4.0);
            assert_eq!(store.magnitude_sum(t, i), 4.0);
        });
        // An equal and opposite error (terminal target 0 against V = 4)
        // zeroes the error sum: the weights freeze afterwards.
        let delta2 = tc_update(&net, &store, b, NextStep::Terminal, 1.0);
        assert!((delta2 + 4.0).abs() < 1e-9);
        net.for_each_feature(b, |t, i| {
            assert_eq!(store.error_sum(t, i), 0.0);
            assert_eq!(store.magnitude_sum(t, i), 8.0);
            assert_eq!(store.beta(t, i), 0.0);
        });
    }

    #[test]
    fn rectified_td_examples() {
        let net = flat_net();
        // Next value −10 rectifies to 0: δ = 0 + 0 − 5 = −5.
        let cur = board_with_value(&net, 5.0);
        let next = Board::from_exponents(&[5; 16]);
        net.update(next, -10.0);
        let d = rectified_td_update(&net, cur, NextStep::Step { reward: 0, afterstate: next }, 0.0);
        assert!((d + 5.0).abs() < 1e-9);
        // Negative current value with target 0: δ = +3 (recovery).
        let net2 = flat_net();
        let cur2 = board_with_value(&net2, -3.0);
        let next2 = Board::from_exponents(&[5; 16]);
        net2.update(next2, -1.0);
        let d2 = rectified_td_update(&net2, cur2, NextStep::Step { reward: 0, afterstate: next2 }, 0.0);
        assert!((d2 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn relu_td_skips_negative_current_values() {
        let net = flat_net();
        let cur = board_with_value(&net, -5.0);
        assert!(relu_td_update(&net, cur, NextStep::Terminal, 0.1).is_none());
        assert!((net.value(cur) + 5.0).abs() < 1e-9, "untouched");

        // V = 5, next value −2 (rectified to 0), r = 4: δ = −1.
        let net2 = flat_net();
        let cur2 = board_with_value(&net2, 5.0);
        let next2 = Board::from_exponents(&[5; 16]);
        net2.update(next2, -2.0);
        let d = relu_td_update(&net2, cur2, NextStep::Step { reward: 4, afterstate: next2 }, 0.0);
        assert_eq!(d, Some(-1.0));

        // V = 0 takes the update branch.
        let net3 = flat_net();
        let cur3 = Board::from_exponents(&[1, 2, 3, 4, 5, 6, 7, 8, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(relu_td_update(&net3, cur3, NextStep::Terminal, 0.1).is_some());
    }

    #[test]
    fn config_validation_catches_contradictions() {
        let mut cfg = LearnerConfig { total_episodes: 10, ..LearnerConfig::default() };
        assert!(cfg.validate().is_ok());
        cfg.coherence_reset_every = Some(5);
        // Resets without any TC phase are a contradiction.
        assert!(cfg.validate().is_err());
        cfg.tc_fraction = 0.5;
        assert!(cfg.validate().is_ok());
        cfg.eval_every = Some(2);
        cfg.eval_episodes = 0;
        assert!(cfg.validate().is_err());
        cfg.eval_episodes = 10;
        assert!(cfg.validate().is_ok());
        cfg.algorithm = UpdateRule::NStep(0);
        assert!(cfg.validate().is_err());
        cfg.algorithm = UpdateRule::TdLambda { lambda: 1.5, horizon: 3 };
        assert!(cfg.validate().is_err());
        cfg.algorithm = UpdateRule::Td0;
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tc_switch_episode_uses_floor() {
        let cfg = LearnerConfig {
            tc_fraction: 0.10,
            total_episodes: 995,
            ..LearnerConfig::default()
        };
        assert_eq!(cfg.tc_start_episode(), 895); // floor(0.9·995) = floor(895.5)
        let pure_tc = LearnerConfig::optimistic_tc(100);
        assert_eq!(pure_tc.tc_start_episode(), 0);
    }

    #[test]
    fn greedy_action_breaks_ties_canonically() {
        // Zero network: all returns equal the merge reward; on a fresh board
        // with no merges everything ties at 0 and Up-most wins among legal.
        let b = Board::from_exponents(&[0, 0, 0, 0, 0, 1, 2, 0, 0, 2, 1, 0, 0, 0, 0, 0]);
        let (a, _) = greedy_action(engine(), b, &crate::network::ZeroEvaluator).unwrap();
        assert_eq!(a, Action::Up);
    }

    #[test]
    fn training_improves_over_random_play() {
        // A tiny sanity run: 300 TD episodes should already beat random play.
        let net = small_net();
        let cfg = LearnerConfig {
            total_episodes: 300,
            alpha: 0.1,
            seed: 11,
            ..LearnerConfig::default()
        };
        let report = train(engine(), &net, &cfg, None, None).unwrap();
        assert_eq!(report.episodes, 300);
        assert!(report.moves > 0);

        let mut rng = SplitMix64::new(5);
        let trained: f64 = (0..50)
            .map(|_| play_greedy_episode(engine(), &net, &mut rng).score as f64)
            .sum::<f64>()
            / 50.0;
        let random: f64 =
            (0..50).map(|_| play_random_episode(engine(), &mut rng).score as f64).sum::<f64>() / 50.0;
        assert!(
            trained > random * 1.5,
            "trained avg {trained} should clearly beat random avg {random}"
        );
    }

    #[test]
    fn single_worker_training_is_deterministic() {
        let run = || {
            let net = small_net();
            let cfg = LearnerConfig {
                total_episodes: 50,
                seed: 77,
                eval_every: Some(25),
                eval_episodes: 5,
                ..LearnerConfig::default()
            };
            let report = train(engine(), &net, &cfg, None, None).unwrap();
            (report.moves, report.curve, net.value(Board::from_exponents(&[1; 16])))
        };
        let (moves_a, curve_a, v_a) = run();
        let (moves_b, curve_b, v_b) = run();
        assert_eq!(moves_a, moves_b);
        assert_eq!(curve_a, curve_b);
        assert_eq!(v_a.to_bits(), v_b.to_bits());
    }

    #[test]
    fn optimistic_init_applied_by_train() {
        let net = small_net();
        let cfg = LearnerConfig {
            total_episodes: 1,
            v_init: 320_000.0,
            ..LearnerConfig::default()
        };
        train(engine(), &net, &cfg, None, None).unwrap();
        // After one episode most of the table is still at the optimistic
        // level: an arbitrary unseen feature keeps v_init/F.
        assert!((net.cell(0, 0xFFFF) - 320_000.0 / 32.0).abs() < 1e-6);
    }

    #[test]
    fn snapshots_taken_before_each_reset() {
        let net = small_net();
        let cfg = LearnerConfig {
            algorithm: UpdateRule::TemporalCoherence,
            tc_fraction: 1.0,
            alpha: 1.0,
            total_episodes: 100,
            coherence_reset_every: Some(30),
            seed: 3,
            ..LearnerConfig::default()
        };
        let store = CoherenceStore::for_network(&net);
        let mut episodes_seen = Vec::new();
        let mut sink = |at: u64, _net: &NTupleNetwork| episodes_seen.push(at);
        let report = train(engine(), &net, &cfg, Some(&store), Some(&mut sink)).unwrap();
        assert_eq!(episodes_seen, vec![30, 60, 90]);
        assert_eq!(report.snapshots_taken, 3);
    }

    #[test]
    fn parallel_training_runs() {
        let net = small_net();
        let cfg = LearnerConfig {
            total_episodes: 200,
            workers: 3,
            seed: 9,
            ..LearnerConfig::default()
        };
        let report = train(engine(), &net, &cfg, None, None).unwrap();
        assert_eq!(report.episodes, 200);
        assert!(report.moves > 0);
    }

    #[test]
    fn exploration_anneals_to_greedy() {
        let mut state = ExplorationState::default();
        let mut rng = SplitMix64::new(1);
        let b = Board::from_exponents(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        // At progress 1 the epsilon anneals to zero: always the greedy pick.
        for _ in 0..100 {
            let (a, _) = select_action(
                engine(),
                b,
                &crate::network::ZeroEvaluator,
                Exploration::EpsilonGreedy { initial: 1.0 },
                1.0,
                &mut state,
                &mut rng,
            )
            .unwrap();
            let (g, _) = greedy_action(engine(), b, &crate::network::ZeroEvaluator).unwrap();
            assert_eq!(a, g);
        }
    }

    #[test]
    fn harvest_collects_only_threshold_states() {
        let net = small_net();
        let mut rng = SplitMix64::new(21);
        // Low threshold (a 64-tile) so short games reach it.
        let threshold = TileThreshold::from_tiles(&[64]).unwrap();
        let pool = harvest_stage_starts(engine(), &net, &threshold, 50, &mut rng);
        assert!(!pool.is_empty());
        for b in &pool {
            assert!(threshold.contained_in(&b.exponent_counts()));
        }
    }

    #[test]
    fn multistage_train_updates_only_target_stage() {
        let e = engine();
        let tuples = vec![
            TupleDef::new(vec![0, 1, 2, 3]).unwrap(),
            TupleDef::new(vec![4, 5, 6, 7]).unwrap(),
            TupleDef::new(vec![8, 9, 10, 11]).unwrap(),
            TupleDef::new(vec![12, 13, 14, 15]).unwrap(),
        ];
        let stages: Vec<NTupleNetwork> =
            (0..2).map(|_| NTupleNetwork::new(e, tuples.clone(), true).unwrap()).collect();
        let msn = MultistageNetwork::new(
            stages,
            vec![TileThreshold::EMPTY, TileThreshold::from_tiles(&[64]).unwrap()],
        )
        .unwrap();
        let mut rng = SplitMix64::new(2);
        let pool = harvest_stage_starts(
            e,
            &|b: Board| msn.value(b),
            &TileThreshold::from_tiles(&[64]).unwrap(),
            20,
            &mut rng,
        );
        let cfg = LearnerConfig { total_episodes: 50, seed: 4, ..LearnerConfig::default() };
        let stage0_before: f64 = (0..64).map(|i| msn.stage(0).cell(0, i)).sum();
        multistage_train(e, &msn, 1, &pool, &cfg, None).unwrap();
        let stage0_after: f64 = (0..64).map(|i| msn.stage(0).cell(0, i)).sum();
        assert_eq!(stage0_before.to_bits(), stage0_after.to_bits(), "stage 0 untouched");
        let stage1_touched = (0..msn.stage(1).table_len(0))
            .any(|i| msn.stage(1).cell(0, i as u32) != 0.0);
        assert!(stage1_touched, "stage 1 received updates");
    }

    #[test]
    fn backward_and_forward_td0_both_learn() {
        for order in [UpdateOrder::Forward, UpdateOrder::Backward] {
            let net = small_net();
            let cfg = LearnerConfig {
                update_order: order,
                total_episodes: 200,
                seed: 31,
                ..LearnerConfig::default()
            };
            train(engine(), &net, &cfg, None, None).unwrap();
            let mut rng = SplitMix64::new(8);
            let avg: f64 = (0..30)
                .map(|_| play_greedy_episode(engine(), &net, &mut rng).score as f64)
                .sum::<f64>()
                / 30.0;
            assert!(avg > 800.0, "{order:?} avg {avg}");
        }
    }

    #[test]
    fn nstep_and_lambda_runs_complete() {
        for algorithm in [
            UpdateRule::NStep(5),
            UpdateRule::TdLambda { lambda: 0.5, horizon: 8 },
            UpdateRule::RectifiedTd,
            UpdateRule::ReluTd,
        ] {
            let net = small_net();
            let cfg = LearnerConfig {
                algorithm,
                total_episodes: 50,
                seed: 13,
                ..LearnerConfig::default()
            };
            let report = train(engine(), &net, &cfg, None, None).unwrap();
            assert_eq!(report.episodes, 50);
        }
    }
}
