//! Dialogue loop, rewards, DQN training, evaluation and the SER sweep.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineState, ExecFailure, ImageEngine, ImageSource};
use crate::ontology::{ActionSpace, Ontology, SemanticFrame, Slot, SlotValue, SystemAction};
use crate::policy::{
    rule_action, select_action, train_step, AdamState, Checkpoint, CheckpointMeta, DqnConfig, QNetwork, ReplayBuffer,
    SyncUnit, Transition, DEFAULT_TAU,
};
use crate::simulator::{dialogue_status, sample_goals, ConfidenceModel, DialogueStatus, ErrorDomains, SimConfig, SimEvent, UserSimulator};
use crate::tracker::{BeliefState, UserAct, UserResponse, VectorLayout, LAYOUT_VERSION};
use crate::vision::{Dataset, DatasetConfig, Scene, VOCABULARY};

pub const SWEEP_SERS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
pub const CSV_HEADER: &str = "policy,ser,turn,reward,goal,success";

// Distinct random streams so training, evaluation and exploration never share draws.
const TRAIN_STREAM: u64 = 1 << 32;
const EVAL_STREAM: u64 = 2 << 32;
const LEARNER_STREAM: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("episode length must be at least one turn")]
    ZeroTurns,
    #[error("evaluation needs at least one dialogue")]
    NoDialogues,
    #[error("dataset has no {0} scenes")]
    EmptySplit(&'static str),
    #[error("bad configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardFunction {
    /// −1 per turn, +20 on success.
    Terminal,
    /// Terminal reward plus `goal_reward` per completed original goal and
    /// `−incorrect_penalty` per incorrect edit.
    Shaped { goal_reward: f64, incorrect_penalty: f64 },
}

impl Default for RewardFunction {
    fn default() -> Self {
        RewardFunction::Terminal
    }
}

pub const SUCCESS_REWARD: f64 = 20.0;
pub const TURN_PENALTY: f64 = 1.0;

impl RewardFunction {
    pub fn shaped_default() -> Self {
        RewardFunction::Shaped { goal_reward: 5.0, incorrect_penalty: 5.0 }
    }

    /// Reward for one system turn.
    pub fn turn_reward(&self, success: bool, events: &[SimEvent]) -> f64 {
        let mut r = -TURN_PENALTY + if success { SUCCESS_REWARD } else { 0.0 };
        if let RewardFunction::Shaped { goal_reward, incorrect_penalty } = *self {
            for e in events {
                match e {
                    SimEvent::GoalCompleted { original: true } => r += goal_reward,
                    SimEvent::GoalCompleted { original: false } => {}
                    SimEvent::IncorrectEdit => r -= incorrect_penalty,
                }
            }
        }
        r
    }
}

/// `20·1(success) − T`, the total of the terminal reward function.
pub fn reward_terminal(success: bool, turns: usize) -> Result<f64, HarnessError> {
    if turns == 0 {
        return Err(HarnessError::ZeroTurns);
    }
    Ok(if success { SUCCESS_REWARD } else { 0.0 } - TURN_PENALTY * turns as f64)
}

/// How the training SER evolves over dialogues. Evaluation always uses the
/// configured SER.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curriculum {
    #[default]
    Fixed,
    /// SER drawn uniformly from `[0, ser]` per dialogue.
    Mixed,
    /// SER raised linearly from 0 to `ser` over the exploration anneal, then held.
    Ramp,
}

impl Curriculum {
    pub fn training_ser(&self, target: f64, progress: f64, rng: &mut impl Rng) -> f64 {
        match self {
            Curriculum::Fixed => target,
            Curriculum::Mixed => rng.random::<f64>() * target,
            Curriculum::Ramp => target * progress.clamp(0.0, 1.0),
        }
    }
}

/// Every knob of an experiment. Defaults are the published settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset_seed: u64,
    pub ser: f64,
    pub theta: f64,
    pub theta_drops_intent: bool,
    pub max_turns: usize,
    pub train_dialogues: usize,
    pub eval_dialogues: usize,
    pub reward: RewardFunction,
    pub dqn: DqnConfig,
    pub tau: f64,
    pub include_turn: bool,
    pub confidence: ConfidenceModel,
    pub iou_threshold: f64,
    /// Let the error channel confuse image paths as well.
    pub corrupt_image_path: bool,
    /// SER schedule used while training.
    pub curriculum: Curriculum,
    /// Dialogues per point of the learning curve.
    pub curve_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset_seed: DatasetConfig::default().seed,
            ser: 0.0,
            theta: 0.5,
            theta_drops_intent: false,
            max_turns: 20,
            train_dialogues: 15_000,
            eval_dialogues: 500,
            reward: RewardFunction::Terminal,
            dqn: DqnConfig::default(),
            tau: DEFAULT_TAU,
            include_turn: false,
            confidence: ConfidenceModel::default(),
            iou_threshold: 0.5,
            corrupt_image_path: false,
            curriculum: Curriculum::Fixed,
            curve_window: 500,
        }
    }
}

impl RunConfig {
    pub fn sim_config(&self, ser: f64) -> SimConfig {
        SimConfig {
            ser,
            theta: self.theta,
            theta_drops_intent: self.theta_drops_intent,
            confidence: self.confidence,
            iou_threshold: self.iou_threshold,
            corrupt_image_path: self.corrupt_image_path,
        }
    }

    pub fn layout(&self) -> VectorLayout {
        VectorLayout { include_turn: self.include_turn, max_turns: self.max_turns }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(HarnessError::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("ser", self.ser)?;
        unit("theta", self.theta)?;
        unit("iou_threshold", self.iou_threshold)?;
        if self.max_turns == 0 {
            return Err(HarnessError::Config("max_turns must be positive".into()));
        }
        if self.dqn.batch_size == 0 || self.dqn.replay_capacity < self.dqn.batch_size {
            return Err(HarnessError::Config("replay capacity must hold at least one batch".into()));
        }
        Ok(())
    }
}

/// Immutable pieces shared by every dialogue.
#[derive(Debug, Clone)]
pub struct World {
    pub ontology: Arc<Ontology>,
    pub dataset: Arc<Dataset>,
    pub domains: Arc<ErrorDomains>,
    pub actions: ActionSpace,
}

impl World {
    pub fn new(ontology: Ontology, dataset: Dataset) -> Self {
        let ids = Arc::new(dataset.scene_ids().map(String::from).collect());
        let domains = Arc::new(ErrorDomains::new(&ontology, &VOCABULARY, ids));
        let actions = ontology.action_space();
        Self { ontology: Arc::new(ontology), dataset: Arc::new(dataset), domains, actions }
    }

    pub fn standard(dataset_seed: u64) -> Self {
        Self::new(Ontology::default(), Dataset::generate(DatasetConfig { seed: dataset_seed, ..DatasetConfig::default() }))
    }

    pub fn engine(&self) -> ImageEngine {
        ImageEngine::new(self.dataset.clone() as Arc<dyn ImageSource>)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
}

/// One transcript line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub speaker: Speaker,
    pub content: String,
    pub engine: EngineState,
}

impl fmt::Display for TurnRecord {
    /// `turn<TAB>speaker<TAB>content<TAB>flags`, flags as five 0/1 digits in
    /// engine-feature order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let speaker = match self.speaker {
            Speaker::System => "system",
            Speaker::User => "user",
        };
        let flags: String = self.engine.as_array().iter().map(|b| if *b { '1' } else { '0' }).collect();
        write!(f, "{}\t{}\t{}\t{}", self.turn, speaker, self.content, flags)
    }
}

pub fn describe_response(r: &UserResponse) -> String {
    let act = match r.act {
        UserAct::Inform => "inform".to_string(),
        UserAct::Affirm(s) => format!("affirm({s})"),
        UserAct::Deny(s) => format!("deny({s})"),
        UserAct::NotApplicable(s) => format!("not_applicable({s})"),
        UserAct::Silent => "silent".to_string(),
    };
    if r.frame.is_empty() {
        act
    } else {
        format!("{act} {}", r.frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub transcript: Vec<TurnRecord>,
    pub turns: usize,
    pub rewards: Vec<f64>,
    pub goals: usize,
    pub success: bool,
    pub total_reward: f64,
}

impl EpisodeRecord {
    pub fn transcript_log(&self) -> String {
        let mut out = String::new();
        for line in &self.transcript {
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

/// What the system side did with an action.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemEffect {
    pub executed: Option<(SemanticFrame, Result<(), ExecFailure>)>,
}

/// Route a system action through vision and the engine and fold the
/// system-side consequences into the belief. Shared by simulation and live
/// sessions.
pub fn perform_system_action(
    action: SystemAction,
    belief: &mut BeliefState,
    engine: &mut ImageEngine,
    dataset: &Dataset,
) -> SystemEffect {
    let mut effect = SystemEffect { executed: None };
    match action {
        SystemAction::Query => {
            let object = belief.stored(Slot::Object).and_then(SlotValue::as_text).map(str::to_string);
            let click = belief.stored(Slot::GestureClick).and_then(SlotValue::as_click);
            let scene = engine.image_path().and_then(|p| dataset.scene(p));
            if let (Some(scene), true) = (scene, engine.is_open()) {
                let masks = object.as_deref().map(|o| scene.query(o, click)).unwrap_or_default();
                if let Some(top) = masks.first() {
                    let frame = SemanticFrame::new().with(Slot::ObjectMaskStr, SlotValue::Mask(top.clone()));
                    belief.update_with_frame(&frame, &Default::default()).expect("masks are always in domain");
                }
                engine.load_candidates(masks).expect("engine is open");
            }
            belief.queried_object = object;
        }
        SystemAction::Execute(intent) => {
            let frame = belief.execution_frame(intent);
            let result = engine.execute(&frame);
            match &result {
                Ok(()) => {
                    belief.reset_user();
                    engine.clear_candidates();
                }
                Err(f) if f.is_state_failure() => belief.clear_slot(Slot::Intent),
                Err(_) => {}
            }
            effect.executed = Some((frame, result));
        }
        SystemAction::Request(_) | SystemAction::Confirm(_) => {}
    }
    belief.engine = engine.engine_features();
    effect
}

/// Result of one turn.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub status: DialogueStatus,
    pub events: Vec<SimEvent>,
}

/// System side of a dialogue: belief, engine and the transcript. Simulated
/// dialogues and live sessions both drive one of these, so their transcripts
/// are comparable line for line.
#[derive(Debug, Clone)]
pub struct DialogueManager {
    pub belief: BeliefState,
    pub engine: ImageEngine,
    dataset: Arc<Dataset>,
    transcript: Vec<TurnRecord>,
    log: bool,
}

impl DialogueManager {
    pub fn new(world: &World) -> Self {
        Self {
            belief: BeliefState::new(world.ontology.clone()),
            engine: world.engine(),
            dataset: world.dataset.clone(),
            transcript: Vec::new(),
            log: true,
        }
    }

    pub fn turn(&self) -> usize {
        self.belief.turn
    }

    pub fn transcript(&self) -> &[TurnRecord] {
        &self.transcript
    }

    pub fn transcript_log(&self) -> String {
        self.transcript.iter().map(|l| format!("{l}\n")).collect()
    }

    /// Take one system turn.
    pub fn system_turn(&mut self, action: SystemAction) -> SystemEffect {
        self.belief.turn += 1;
        let effect = perform_system_action(action, &mut self.belief, &mut self.engine, &self.dataset);
        self.record(Speaker::System, action.to_string());
        effect
    }

    /// Fold a user response into the belief.
    pub fn user_turn(&mut self, response: &UserResponse) -> Result<(), crate::tracker::TrackerError> {
        self.belief.apply_response(response)?;
        self.record(Speaker::User, describe_response(response));
        Ok(())
    }

    fn record(&mut self, speaker: Speaker, content: String) {
        if self.log {
            self.transcript.push(TurnRecord { turn: self.belief.turn, speaker, content, engine: self.belief.engine });
        }
    }
}

/// One simulated dialogue in progress.
pub struct Dialogue<'w> {
    world: &'w World,
    layout: VectorLayout,
    reward_fn: RewardFunction,
    max_turns: usize,
    pub manager: DialogueManager,
    pub simulator: UserSimulator,
    rng: ChaCha8Rng,
    rewards: Vec<f64>,
    status: DialogueStatus,
}

impl<'w> Dialogue<'w> {
    pub fn new(world: &'w World, scene: &Scene, config: &RunConfig, ser: f64, mut rng: ChaCha8Rng) -> Self {
        let agenda = sample_goals(&world.ontology, scene, &mut rng);
        let simulator = UserSimulator::new(config.sim_config(ser), world.domains.clone(), agenda);
        Self {
            world,
            layout: config.layout(),
            reward_fn: config.reward,
            max_turns: config.max_turns,
            manager: DialogueManager::new(world),
            simulator,
            rng,
            rewards: Vec::new(),
            status: DialogueStatus::Ongoing,
        }
    }

    /// Skip transcript bookkeeping (training hot path).
    pub fn without_transcript(mut self) -> Self {
        self.manager.log = false;
        self
    }

    pub fn status(&self) -> DialogueStatus {
        self.status
    }

    pub fn turn(&self) -> usize {
        self.manager.turn()
    }

    pub fn belief(&self) -> &BeliefState {
        &self.manager.belief
    }

    pub fn state(&self) -> Vec<f64> {
        self.manager.belief.vectorize(&self.layout)
    }

    /// Play one system action and the user's reply. Returns the reply too
    /// (none once the agenda is empty).
    pub fn step_with_response(&mut self, action_index: usize) -> (StepOutcome, Option<UserResponse>) {
        assert_eq!(self.status, DialogueStatus::Ongoing, "dialogue already finished");
        let action = self.world.actions.get(action_index).expect("action index in range");
        let effect = self.manager.system_turn(action);
        let events = match &effect.executed {
            Some((frame, result)) => self.simulator.observe_execution(frame, result),
            None => Vec::new(),
        };
        let mut reply = None;
        if !self.simulator.agenda().is_empty() {
            let stated = match action {
                SystemAction::Confirm(slot) => self.manager.belief.stored(slot).cloned(),
                _ => None,
            };
            let response = self.simulator.respond(action, stated.as_ref(), &mut self.rng);
            self.manager.user_turn(&response).expect("simulator emits in-domain values");
            reply = Some(response);
        }
        self.status = dialogue_status(self.simulator.agenda(), self.turn(), self.max_turns);
        let reward = self.reward_fn.turn_reward(self.status == DialogueStatus::Success, &events);
        self.rewards.push(reward);
        (StepOutcome { reward, status: self.status, events }, reply)
    }

    pub fn step(&mut self, action_index: usize) -> StepOutcome {
        self.step_with_response(action_index).0
    }

    pub fn into_record(self) -> EpisodeRecord {
        let success = self.status == DialogueStatus::Success;
        EpisodeRecord {
            turns: self.manager.turn(),
            total_reward: self.rewards.iter().sum(),
            rewards: self.rewards,
            goals: self.simulator.agenda().original_completed(),
            success,
            transcript: self.manager.transcript,
        }
    }
}

/// Something that picks an action index from the belief and its vector.
pub trait DialoguePolicy {
    fn choose(&mut self, belief: &BeliefState, state: &[f64]) -> usize;

    fn label(&self) -> &str;
}

pub struct RulePolicy {
    pub tau: f64,
    actions: ActionSpace,
}

impl RulePolicy {
    pub fn new(ontology: &Ontology, tau: f64) -> Self {
        Self { tau, actions: ontology.action_space() }
    }
}

impl DialoguePolicy for RulePolicy {
    fn choose(&mut self, belief: &BeliefState, _state: &[f64]) -> usize {
        let action = rule_action(belief, self.tau);
        self.actions.index_of(action).expect("rule actions are in the action space")
    }

    fn label(&self) -> &str {
        "rule"
    }
}

/// Greedy policy over a Q-network.
pub struct GreedyDqn {
    pub network: QNetwork,
}

impl DialoguePolicy for GreedyDqn {
    fn choose(&mut self, _belief: &BeliefState, state: &[f64]) -> usize {
        crate::policy::argmax(&self.network.forward(state))
    }

    fn label(&self) -> &str {
        "dqn"
    }
}

/// Any closure works as a policy (scripted baselines, tests).
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&BeliefState, &[f64]) -> usize> DialoguePolicy for FnPolicy<F> {
    fn choose(&mut self, belief: &BeliefState, state: &[f64]) -> usize {
        (self.0)(belief, state)
    }

    fn label(&self) -> &str {
        "scripted"
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run one dialogue to completion on `scene`.
pub fn run_dialogue(
    world: &World,
    policy: &mut dyn DialoguePolicy,
    scene: &Scene,
    config: &RunConfig,
    ser: f64,
    rng: ChaCha8Rng,
) -> EpisodeRecord {
    let mut dialogue = Dialogue::new(world, scene, config, ser, rng);
    while dialogue.status() == DialogueStatus::Ongoing {
        let state = dialogue.state();
        let a = policy.choose(dialogue.belief(), &state);
        dialogue.step(a);
    }
    dialogue.into_record()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub turn: f64,
    pub reward: f64,
    pub goal: f64,
    pub success: f64,
    pub dialogues: usize,
}

impl Metrics {
    pub fn from_episodes<'a>(episodes: impl IntoIterator<Item = &'a EpisodeRecord>) -> Self {
        let (mut n, mut turn, mut reward, mut goal, mut success) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for e in episodes {
            n += 1;
            turn += e.turns as f64;
            reward += e.total_reward;
            goal += e.goals as f64;
            success += if e.success { 1.0 } else { 0.0 };
        }
        let d = n.max(1) as f64;
        Self { turn: turn / d, reward: reward / d, goal: goal / d, success: success / d, dialogues: n }
    }
}

/// Dialogue `i` of an evaluation: the scene and simulator stream depend only
/// on `(seed, i)`, so every policy faces the same users.
pub fn evaluation_dialogue_rng(seed: u64, i: usize) -> ChaCha8Rng {
    stream_rng(seed, EVAL_STREAM + i as u64)
}

/// Greedy evaluation over `n` test-scene dialogues.
pub fn evaluate_episodes(
    world: &World,
    policy: &mut dyn DialoguePolicy,
    config: &RunConfig,
    ser: f64,
    n: usize,
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    if n == 0 {
        return Err(HarnessError::NoDialogues);
    }
    let test = world.dataset.test();
    if test.is_empty() {
        return Err(HarnessError::EmptySplit("test"));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = evaluation_dialogue_rng(config.seed, i);
            let scene = &test[rng.random_range(0..test.len())];
            run_dialogue(world, policy, scene, config, ser, rng)
        })
        .collect())
}

pub fn evaluate(world: &World, policy: &mut dyn DialoguePolicy, config: &RunConfig, ser: f64, n: usize) -> Result<Metrics, HarnessError> {
    Ok(Metrics::from_episodes(&evaluate_episodes(world, policy, config, ser, n)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub dialogue: usize,
    pub epsilon: f64,
    pub success: f64,
    pub reward: f64,
    pub turns: f64,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("dialogue,epsilon,success,reward,turns\n");
    for p in curve {
        let _ = writeln!(out, "{},{:.4},{:.4},{:.4},{:.4}", p.dialogue, p.epsilon, p.success, p.reward, p.turns);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: QNetwork,
    pub adam: AdamState,
    pub curve: Vec<CurvePoint>,
    pub train_steps: u64,
    pub target_syncs: u64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, world: &World, config: &RunConfig) -> Checkpoint {
        Checkpoint {
            network: self.network.clone(),
            adam: Some(self.adam.clone()),
            meta: CheckpointMeta {
                ontology_hash: world.ontology.fingerprint(),
                layout_version: LAYOUT_VERSION,
                include_turn: config.include_turn,
                ser: config.ser,
                seed: config.seed,
                dialogues: config.train_dialogues as u64,
            },
        }
    }
}

/// Initial network for `config`, deterministic in the seed.
pub fn initial_network(world: &World, config: &RunConfig) -> QNetwork {
    let mut rng = stream_rng(config.seed, LEARNER_STREAM + 1);
    QNetwork::he_init(config.layout().len(&world.ontology), config.dqn.hidden, world.actions.len(), &mut rng)
}

/// Train a DQN against the simulator at `config.ser` on training scenes.
pub fn train_dqn(world: &World, config: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let train = world.dataset.train();
    if train.is_empty() {
        return Err(HarnessError::EmptySplit("train"));
    }
    let dqn = &config.dqn;
    let mut online = initial_network(world, config);
    let mut target = online.clone();
    let mut adam = AdamState::new(online.params().len(), dqn.learning_rate);
    let mut buffer = ReplayBuffer::new(dqn.replay_capacity);
    let mut learner = stream_rng(config.seed, LEARNER_STREAM);
    let (mut steps, mut syncs) = (0u64, 0u64);
    let mut curve = Vec::new();
    let window = config.curve_window.max(1);
    let (mut w_success, mut w_reward, mut w_turns) = (0.0, 0.0, 0.0);
    let n = config.train_dialogues;

    for d in 0..n {
        let epsilon = dqn.epsilon(d, n);
        let mut rng = stream_rng(config.seed, TRAIN_STREAM + d as u64);
        let scene = &train[rng.random_range(0..train.len())];
        let progress = if n == 0 { 1.0 } else { d as f64 / (dqn.anneal_fraction * n as f64).max(1.0) };
        let ser = config.curriculum.training_ser(config.ser, progress, &mut rng);
        let mut dialogue = Dialogue::new(world, scene, config, ser, rng).without_transcript();
        let mut state = dialogue.state();
        let mut total = 0.0;
        loop {
            let action = select_action(&online.forward(&state), epsilon, &mut learner);
            let outcome = dialogue.step(action);
            total += outcome.reward;
            let next = dialogue.state();
            let terminal = outcome.status != DialogueStatus::Ongoing;
            buffer.push(Transition { state, action, reward: outcome.reward, next_state: next.clone(), terminal });
            state = next;
            if train_step(&mut online, &target, &mut adam, &buffer, dqn.batch_size, dqn.gamma, &mut learner).is_some() {
                steps += 1;
                if dqn.sync_unit == SyncUnit::TrainSteps && steps % dqn.sync_every as u64 == 0 {
                    target = online.clone();
                    syncs += 1;
                }
            }
            if terminal {
                break;
            }
        }
        if dqn.sync_unit == SyncUnit::Dialogues && (d + 1) % dqn.sync_every == 0 {
            target = online.clone();
            syncs += 1;
        }
        let record = dialogue.turn();
        w_success += if dialogue.status() == DialogueStatus::Success { 1.0 } else { 0.0 };
        w_reward += total;
        w_turns += record as f64;
        if (d + 1) % window == 0 || d + 1 == n {
            let k = ((d % window) + 1) as f64;
            curve.push(CurvePoint { dialogue: d + 1, epsilon, success: w_success / k, reward: w_reward / k, turns: w_turns / k });
            (w_success, w_reward, w_turns) = (0.0, 0.0, 0.0);
        }
    }
    Ok(TrainOutcome { network: online, adam, curve, train_steps: steps, target_syncs: syncs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub ser: f64,
    pub metrics: Metrics,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(out, "{},{:.1},{:.4},{:.4},{:.4},{:.4}", r.policy, r.ser, m.turn, m.reward, m.goal, m.success);
    }
    out
}

/// Evaluate the rule policy and a DQN trained at each SER. `progress` is
/// called after every row.
pub fn ser_sweep(
    world: &World,
    config: &RunConfig,
    sers: &[f64],
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::new();
    for &ser in sers {
        let mut rule = RulePolicy::new(&world.ontology, config.tau);
        let row = SweepRow { policy: "rule".into(), ser, metrics: evaluate(world, &mut rule, config, ser, config.eval_dialogues)? };
        progress(&row);
        rows.push(row);
        let cell = RunConfig { ser, ..config.clone() };
        let trained = train_dqn(world, &cell)?;
        let mut dqn = GreedyDqn { network: trained.network };
        let row = SweepRow { policy: "dqn".into(), ser, metrics: evaluate(world, &mut dqn, config, ser, config.eval_dialogues)? };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Success-vs-SER line chart of a sweep as a standalone SVG.
pub fn success_plot_svg(rows: &[SweepRow]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let max_ser = rows.iter().map(|r| r.ser).fold(0.5_f64, f64::max);
    let px = |ser: f64| pad + (w - 2.0 * pad) * ser / max_ser;
    let py = |succ: f64| h - pad - (h - 2.0 * pad) * succ;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<path d=\"M{pad} {pad} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        h - pad,
        w - pad
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>", pad - 4.0, py(v) + 4.0);
    }
    for (policy, colour, y) in [("rule", "#d62728", 14.0), ("dqn", "#1f77b4", 28.0)] {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.policy == policy)
            .map(|r| format!("{:.1},{:.1}", px(r.ser), py(r.metrics.success)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(svg, "<polyline points=\"{}\" stroke=\"{colour}\" fill=\"none\" stroke-width=\"2\"/>", pts.join(" "));
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{y}\" fill=\"{colour}\">{policy}</text>", w - pad - 30.0);
    }
    for r in rows.iter().filter(|r| r.policy == "rule") {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{:.1}</text>", px(r.ser), h - pad + 14.0, r.ser);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">SER</text>", w / 2.0, h - 8.0);
    svg.push_str("</svg>\n");
    svg
}

/// Reference bands for the published operating points.
pub mod bands {
    pub const LOW_SER_SUCCESS: f64 = 0.97;
    pub const LOW_SER_GOALS: f64 = 2.95;
    /// Mean turns at SER ≤ 0.1 must fall in the published 7.2–7.5 widened by 1.5.
    pub const LOW_SER_TURNS: (f64, f64) = (5.7, 9.0);
    pub const RULE_HIGH_SER_MAX: f64 = 0.30;
    pub const DQN_HIGH_SER_MIN: f64 = 0.80;
    pub const HIGH_SER_MARGIN: f64 = 0.4;
    pub const TREND_NOISE: f64 = 0.05;
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Violations of the single-cell bands for `policy` ("rule" or "dqn") at `ser`.
pub fn check_cell(policy: &str, ser: f64, m: &Metrics) -> Vec<String> {
    let mut out = Vec::new();
    if ser <= 0.1 + 1e-9 {
        if m.success < bands::LOW_SER_SUCCESS {
            out.push(format!("{policy} @ SER {ser}: success {:.3} < {}", m.success, bands::LOW_SER_SUCCESS));
        }
        if m.goal < bands::LOW_SER_GOALS {
            out.push(format!("{policy} @ SER {ser}: goals {:.3} < {}", m.goal, bands::LOW_SER_GOALS));
        }
        let (lo, hi) = bands::LOW_SER_TURNS;
        if m.turn < lo || m.turn > hi {
            out.push(format!("{policy} @ SER {ser}: turns {:.2} outside [{lo}, {hi}]", m.turn));
        }
    }
    if near(ser, 0.5) {
        if policy == "rule" && m.success > bands::RULE_HIGH_SER_MAX {
            out.push(format!("rule @ SER 0.5: success {:.3} > {}", m.success, bands::RULE_HIGH_SER_MAX));
        }
        if policy == "dqn" {
            if m.success < bands::DQN_HIGH_SER_MIN {
                out.push(format!("dqn @ SER 0.5: success {:.3} < {}", m.success, bands::DQN_HIGH_SER_MIN));
            }
            if m.reward <= 0.0 {
                out.push(format!("dqn @ SER 0.5: mean reward {:.2} is not positive", m.reward));
            }
        }
    }
    out
}

/// Cell bands plus the cross-cell comparisons of a sweep.
pub fn check_sweep(rows: &[SweepRow]) -> Vec<String> {
    let mut out: Vec<String> = rows.iter().flat_map(|r| check_cell(&r.policy, r.ser, &r.metrics)).collect();
    let find = |policy: &str, ser: f64| rows.iter().find(|r| r.policy == policy && near(r.ser, ser)).map(|r| r.metrics);
    for ser in [0.3, 0.4, 0.5] {
        if let (Some(rule), Some(dqn)) = (find("rule", ser), find("dqn", ser)) {
            let margin = if near(ser, 0.5) { bands::HIGH_SER_MARGIN } else { 0.0 };
            if dqn.success < rule.success + margin {
                out.push(format!(
                    "SER {ser}: dqn success {:.3} does not exceed rule {:.3} by {margin}",
                    dqn.success, rule.success
                ));
            }
        }
    }
    let rule: Vec<&SweepRow> = rows.iter().filter(|r| r.policy == "rule").collect();
    for pair in rule.windows(2) {
        if pair[1].metrics.success > pair[0].metrics.success + bands::TREND_NOISE {
            out.push(format!(
                "rule success rises from {:.3} (SER {}) to {:.3} (SER {})",
                pair[0].metrics.success, pair[0].ser, pair[1].metrics.success, pair[1].ser
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Intent;

    fn world() -> World {
        World::standard(DatasetConfig::default().seed)
    }

    #[test]
    fn terminal_reward_examples() {
        assert_eq!(reward_terminal(true, 7).unwrap(), 13.0);
        assert_eq!(reward_terminal(false, 20).unwrap(), -20.0);
        assert!(matches!(reward_terminal(true, 0), Err(HarnessError::ZeroTurns)));
    }

    #[test]
    fn shaped_reward_adds_event_terms() {
        let f = RewardFunction::shaped_default();
        let events = [SimEvent::GoalCompleted { original: true }, SimEvent::IncorrectEdit];
        assert_eq!(f.turn_reward(false, &events), -1.0);
        assert_eq!(f.turn_reward(true, &events[..1]), 24.0);
        assert_eq!(RewardFunction::Terminal.turn_reward(false, &events), -1.0);
    }

    #[test]
    fn rule_policy_succeeds_without_errors() {
        let w = world();
        let config = RunConfig::default();
        let mut rule = RulePolicy::new(&w.ontology, config.tau);
        let eps = evaluate_episodes(&w, &mut rule, &config, 0.0, 50).unwrap();
        for e in &eps {
            assert!(e.success, "{}", e.transcript_log());
            assert_eq!(e.goals, 3);
            assert!(e.turns <= 12);
        }
    }

    #[test]
    fn never_executing_fails_at_the_limit() {
        let w = world();
        let config = RunConfig::default();
        let idx = w.actions.index_of(SystemAction::Request(Slot::Intent)).unwrap();
        let mut p = FnPolicy(move |_: &BeliefState, _: &[f64]| idx);
        let e = &evaluate_episodes(&w, &mut p, &config, 0.0, 1).unwrap()[0];
        assert!(!e.success);
        assert_eq!(e.turns, 20);
        assert_eq!(e.total_reward, -20.0);
    }

    #[test]
    fn episodes_are_deterministic() {
        let w = world();
        let config = RunConfig::default();
        let mut rule = RulePolicy::new(&w.ontology, config.tau);
        let a = evaluate_episodes(&w, &mut rule, &config, 0.3, 20).unwrap();
        let b = evaluate_episodes(&w, &mut rule, &config, 0.3, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transcript_format() {
        let w = world();
        let config = RunConfig::default();
        let mut rule = RulePolicy::new(&w.ontology, config.tau);
        let e = &evaluate_episodes(&w, &mut rule, &config, 0.0, 1).unwrap()[0];
        let log = e.transcript_log();
        let first = log.lines().next().unwrap();
        assert_eq!(first, "1\tsystem\trequest(intent)\t00000");
        assert!(log.lines().any(|l| l.contains("execute(close)")));
        assert!(log.lines().any(|l| l.contains("\tquery\t")), "{log}");
    }

    #[test]
    fn zero_training_dialogues_returns_initialisation() {
        let w = world();
        let config = RunConfig { train_dialogues: 0, ..RunConfig::default() };
        let out = train_dqn(&w, &config).unwrap();
        assert_eq!(out.network, initial_network(&w, &config));
        assert!(out.curve.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_syncs_on_schedule() {
        let w = world();
        let config = RunConfig { train_dialogues: 30, curve_window: 10, ..RunConfig::default() };
        let a = train_dqn(&w, &config).unwrap();
        let b = train_dqn(&w, &config).unwrap();
        assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
        assert_eq!(a.network, b.network);
        assert_eq!(a.target_syncs, a.train_steps / 100);
        assert!(a.network.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn failed_state_execute_clears_intent() {
        let w = world();
        let mut belief = BeliefState::new(w.ontology.clone());
        let mut engine = w.engine();
        belief.update_with_frame(&SemanticFrame::new().with_intent(Intent::Undo), &Default::default()).unwrap();
        let effect = perform_system_action(SystemAction::Execute(Intent::Undo), &mut belief, &mut engine, &w.dataset);
        assert!(matches!(effect.executed, Some((_, Err(ExecFailure::NotOpen)))));
        assert!(belief.intent().is_none());
    }
}
