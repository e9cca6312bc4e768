//! Live dialogue sessions where a person plays the user.
//!
//! A session holds one hidden adjust goal on an already opened test scene.
//! Each user event (utterance, click or box) is folded into the belief, then
//! the policy takes exactly one system action through the same
//! [`DialogueManager`] the simulator harness uses.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ExecFailure, Mask};
use crate::harness::{DialogueManager, DialoguePolicy, GreedyDqn, RulePolicy, World};
use crate::nlu::parse_with_domain;
use crate::ontology::{Intent, SemanticFrame, Slot, SlotValue, SystemAction};
use crate::policy::{load_checkpoint, Checkpoint, CheckpointError, DEFAULT_TAU};
use crate::simulator::{sample_goals, UserGoal};
use crate::tracker::{BeliefState, TrackerError, UserAct, UserResponse, VectorLayout};
use crate::vision::{Click, VOCABULARY};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is finished")]
    Finished,
    #[error("coordinates ({x}, {y}) are outside the {width}x{height} image")]
    OutOfBounds { x: i64, y: i64, width: usize, height: usize },
    #[error("box must have positive width and height")]
    EmptyBox,
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("dataset has no test scenes")]
    NoScenes,
    #[error("no image is open")]
    NoImage,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_turns: usize,
    /// Box-vs-mask IoU needed for the edited region to count as the goal's.
    pub iou_threshold: f64,
    /// Confidence attached to parsed utterance values.
    pub nlu_confidence: f64,
    pub tau: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { max_turns: 10, iou_threshold: 0.5, nlu_confidence: 0.9, tau: DEFAULT_TAU }
    }
}

/// A user input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserEvent {
    Utterance { text: String },
    Click { x: i64, y: i64 },
    Box { x: i64, y: i64, w: i64, h: i64 },
}

pub enum SessionPolicy {
    Rule(RulePolicy),
    Dqn { policy: GreedyDqn, layout: VectorLayout },
}

impl SessionPolicy {
    pub fn rule(world: &World, tau: f64) -> Self {
        SessionPolicy::Rule(RulePolicy::new(&world.ontology, tau))
    }

    pub fn dqn(checkpoint: Checkpoint) -> Self {
        let layout = VectorLayout { include_turn: checkpoint.meta.include_turn, ..VectorLayout::default() };
        SessionPolicy::Dqn { policy: GreedyDqn { network: checkpoint.network }, layout }
    }

    pub fn from_checkpoint_file(world: &World, path: impl AsRef<Path>) -> Result<Self, SessionError> {
        Ok(Self::dqn(load_checkpoint(path, &world.ontology)?))
    }

    pub fn label(&self) -> &'static str {
        match self {
            SessionPolicy::Rule(_) => "rule",
            SessionPolicy::Dqn { .. } => "dqn",
        }
    }

    fn choose(&mut self, belief: &BeliefState) -> usize {
        match self {
            SessionPolicy::Rule(p) => p.choose(belief, &[]),
            SessionPolicy::Dqn { policy, layout } => {
                let state = belief.vectorize(layout);
                policy.choose(belief, &state)
            }
        }
    }
}

impl fmt::Debug for SessionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The goal as shown to the person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalDescriptor {
    pub intent: Intent,
    pub image_path: String,
    pub attribute: String,
    pub adjust_value: i32,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub turn: usize,
    pub speaker: crate::harness::Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub turn: usize,
    pub action: SystemAction,
    pub prompt: String,
    /// Current image as base64 PNG.
    pub image: Option<String>,
    /// Candidate masks as base64 PNGs, best first.
    pub candidates: Vec<String>,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub policy: String,
    pub scene_id: Option<String>,
    pub goal: Option<GoalDescriptor>,
    pub transcript: Vec<SessionEntry>,
    pub image: Option<String>,
    pub candidates: Vec<String>,
    pub turn: usize,
    pub max_turns: usize,
    pub done: bool,
    pub success: bool,
}

pub type Parser = Arc<dyn Fn(&str) -> SemanticFrame + Send + Sync>;

/// The stock parser over the world's vocabulary, scene ids and value domain.
pub fn default_parser(world: &Arc<World>) -> Parser {
    let world = world.clone();
    Arc::new(move |text: &str| {
        parse_with_domain(text, &VOCABULARY, world.dataset.scene_ids(), world.ontology.adjust_values())
    })
}

const AFFIRM_WORDS: [&str; 8] = ["yes", "yeah", "yep", "correct", "right", "sure", "ok", "okay"];
const DENY_WORDS: [&str; 5] = ["no", "nope", "wrong", "incorrect", "not"];

pub struct Session {
    id: String,
    world: Arc<World>,
    policy: SessionPolicy,
    config: SessionConfig,
    goal: Option<UserGoal>,
    scene_id: Option<String>,
    manager: DialogueManager,
    parser: Parser,
    transcript: Vec<SessionEntry>,
    last_action: Option<SystemAction>,
    done: bool,
    success: bool,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("policy", &self.policy)
            .field("scene_id", &self.scene_id)
            .field("turn", &self.manager.turn())
            .field("done", &self.done)
            .finish()
    }
}

impl Session {
    /// Sample an adjust goal on a test scene (or `scene_id`) and open the image.
    pub fn create(
        id: impl Into<String>,
        world: Arc<World>,
        policy: SessionPolicy,
        scene_id: Option<&str>,
        seed: u64,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = match scene_id {
            Some(sid) => world.dataset.scene(sid).ok_or_else(|| SessionError::UnknownScene(sid.to_string()))?,
            None => {
                let test = world.dataset.test();
                if test.is_empty() {
                    return Err(SessionError::NoScenes);
                }
                &test[rng.random_range(0..test.len())]
            }
        };
        let goal = sample_goals(&world.ontology, scene, &mut rng)
            .goals()
            .find(|g| g.intent() == Intent::Adjust)
            .cloned()
            .expect("sampled agendas carry an adjust goal");
        let scene_id = scene.spec.scene_id.clone();
        let mut manager = DialogueManager::new(&world);
        let open = SemanticFrame::new().with_intent(Intent::Open).with(Slot::ImagePath, SlotValue::Text(scene_id.clone()));
        manager.engine.execute(&open).expect("dataset scenes always open");
        manager.belief.engine = manager.engine.engine_features();
        let parser = default_parser(&world);
        Ok(Self {
            id: id.into(),
            world,
            policy,
            config,
            goal: Some(goal),
            scene_id: Some(scene_id),
            manager,
            parser,
            transcript: Vec::new(),
            last_action: None,
            done: false,
            success: false,
        })
    }

    /// A goal-less session starting from a closed engine, driven by
    /// structured responses. Used to replay simulator traces.
    pub fn scripted(id: impl Into<String>, world: Arc<World>, policy: SessionPolicy, max_turns: usize) -> Self {
        let manager = DialogueManager::new(&world);
        let parser = default_parser(&world);
        Self {
            id: id.into(),
            world,
            policy,
            config: SessionConfig { max_turns, ..SessionConfig::default() },
            goal: None,
            scene_id: None,
            manager,
            parser,
            transcript: Vec::new(),
            last_action: None,
            done: false,
            success: false,
        }
    }

    /// Replace the utterance parser (tests inject faulty parses).
    pub fn set_parser(&mut self, parser: Parser) {
        self.parser = parser;
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn goal(&self) -> Option<&UserGoal> {
        self.goal.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn manager(&self) -> &DialogueManager {
        &self.manager
    }

    pub fn goal_descriptor(&self) -> Option<GoalDescriptor> {
        let g = self.goal.as_ref()?;
        Some(GoalDescriptor {
            intent: g.intent(),
            image_path: self.scene_id.clone().unwrap_or_default(),
            attribute: g.value(Slot::Attribute)?.as_text()?.to_string(),
            adjust_value: g.value(Slot::AdjustValue)?.as_int()?,
            object: g.value(Slot::Object)?.as_text()?.to_string(),
        })
    }

    /// Handle one user event and take one system action.
    pub fn user_event(&mut self, event: &UserEvent) -> Result<TurnResult, SessionError> {
        if self.done {
            return Err(SessionError::Finished);
        }
        let response = self.interpret(event)?;
        let text = match event {
            UserEvent::Utterance { text } => text.clone(),
            UserEvent::Click { x, y } => format!("click ({x}, {y})"),
            UserEvent::Box { x, y, w, h } => format!("box ({x}, {y}, {w}, {h})"),
        };
        self.transcript.push(SessionEntry { turn: self.manager.turn(), speaker: crate::harness::Speaker::User, text });
        self.manager.user_turn(&response)?;
        Ok(self.system_turn())
    }

    /// Fold a structured response (if any) and take one system action.
    pub fn scripted_turn(&mut self, response: Option<&UserResponse>) -> Result<TurnResult, SessionError> {
        if self.done {
            return Err(SessionError::Finished);
        }
        if let Some(r) = response {
            self.scripted_observe(r)?;
        }
        Ok(self.system_turn())
    }

    /// Fold a structured response without acting.
    pub fn scripted_observe(&mut self, response: &UserResponse) -> Result<(), SessionError> {
        self.manager.user_turn(response)?;
        Ok(())
    }

    fn image_dims(&self) -> Result<(usize, usize), SessionError> {
        let img = self.manager.engine.image().ok_or(SessionError::NoImage)?;
        Ok((img.width(), img.height()))
    }

    fn interpret(&self, event: &UserEvent) -> Result<UserResponse, SessionError> {
        match event {
            UserEvent::Utterance { text } => {
                let frame = (self.parser)(text);
                let confidences: BTreeMap<Slot, f64> = frame.slots().map(|s| (s, self.config.nlu_confidence)).collect();
                let mut response = UserResponse::inform(frame, confidences);
                if let Some(SystemAction::Confirm(slot)) = self.last_action {
                    if self.manager.belief.stored(slot).is_some() {
                        let words: Vec<String> =
                            text.split(|c: char| !c.is_alphanumeric()).map(str::to_lowercase).collect();
                        if words.iter().any(|w| DENY_WORDS.contains(&w.as_str())) {
                            response.act = UserAct::Deny(slot);
                        } else if words.iter().any(|w| AFFIRM_WORDS.contains(&w.as_str())) {
                            response.act = UserAct::Affirm(slot);
                        }
                    }
                }
                Ok(response)
            }
            UserEvent::Click { x, y } => {
                let (width, height) = self.image_dims()?;
                let (cx, cy) = check_point(*x, *y, width, height)?;
                let frame = SemanticFrame::new().with(Slot::GestureClick, SlotValue::Click(Click::new(cx as u32, cy as u32)));
                Ok(UserResponse::inform(frame, BTreeMap::new()))
            }
            UserEvent::Box { x, y, w, h } => {
                let (width, height) = self.image_dims()?;
                if *w <= 0 || *h <= 0 {
                    return Err(SessionError::EmptyBox);
                }
                let (bx, by) = check_point(*x, *y, width, height)?;
                check_point(x + w - 1, y + h - 1, width, height)?;
                let mask = Mask::rect(width, height, bx, by, *w as usize, *h as usize);
                let frame = SemanticFrame::new().with(Slot::ObjectMaskStr, SlotValue::Mask(mask));
                Ok(UserResponse::inform(frame, BTreeMap::from([(Slot::ObjectMaskStr, 1.0)])))
            }
        }
    }

    fn system_turn(&mut self) -> TurnResult {
        let index = self.policy.choose(&self.manager.belief);
        let action = self.world.actions.get(index).expect("policy picks a valid action");
        // Confirm prompts quote the value as it was before the turn.
        let stated = match action {
            SystemAction::Confirm(slot) => self.manager.belief.stored(slot).cloned(),
            _ => None,
        };
        let queried = self.manager.belief.stored(Slot::Object).and_then(SlotValue::as_text).map(str::to_string);
        let effect = self.manager.system_turn(action);
        let prompt = match (&action, &effect.executed) {
            (SystemAction::Execute(_), Some((frame, result))) => {
                if let (Some(goal), Ok(())) = (&self.goal, result) {
                    match frame.intent() {
                        Some(Intent::Adjust) => {
                            self.done = true;
                            self.success = goal.matches(frame, self.config.iou_threshold);
                        }
                        Some(Intent::Close) => self.done = true,
                        _ => {}
                    }
                }
                execute_summary(frame, result)
            }
            (SystemAction::Query, _) => {
                let n = self.manager.engine.candidates().len();
                match queried {
                    Some(o) => format!("Query: object={o}, {n} candidate(s) found."),
                    None => "Query: no object given.".to_string(),
                }
            }
            _ => prompt_for(action, stated.as_ref()),
        };
        if self.manager.turn() >= self.config.max_turns {
            self.done = true;
        }
        self.last_action = Some(action);
        let turn = self.manager.turn();
        self.transcript.push(SessionEntry { turn, speaker: crate::harness::Speaker::System, text: prompt.clone() });
        TurnResult {
            turn,
            action,
            prompt,
            image: self.image(),
            candidates: self.candidates(),
            done: self.done,
            success: self.success,
        }
    }

    fn image(&self) -> Option<String> {
        self.manager.engine.image().map(|i| i.to_base64_png())
    }

    fn candidates(&self) -> Vec<String> {
        self.manager.engine.candidates().iter().map(Mask::to_base64_png).collect()
    }

    /// Read-only view for rendering.
    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            policy: self.policy.label().to_string(),
            scene_id: self.scene_id.clone(),
            goal: self.goal_descriptor(),
            transcript: self.transcript.clone(),
            image: self.image(),
            candidates: self.candidates(),
            turn: self.manager.turn(),
            max_turns: self.config.max_turns,
            done: self.done,
            success: self.success,
        }
    }
}

fn check_point(x: i64, y: i64, width: usize, height: usize) -> Result<(usize, usize), SessionError> {
    if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
        return Err(SessionError::OutOfBounds { x, y, width, height });
    }
    Ok((x as usize, y as usize))
}

/// Template prompt for Request and Confirm actions.
pub fn prompt_for(action: SystemAction, stated: Option<&SlotValue>) -> String {
    match action {
        SystemAction::Request(Slot::Intent) => "What do you want to do?".to_string(),
        SystemAction::Request(Slot::GestureClick) => "What gesture_click do you want? Click on the image.".to_string(),
        SystemAction::Request(Slot::ObjectMaskStr) => "What object_mask_str do you want? Draw a box on the image.".to_string(),
        SystemAction::Request(slot) => format!("What {slot} do you want?"),
        SystemAction::Confirm(slot) => match stated {
            Some(v) => format!("Do you want {}?", SemanticFrame::new().with(slot, v.clone())),
            None => format!("Do you want to set {slot}?"),
        },
        SystemAction::Query => "Query".to_string(),
        SystemAction::Execute(intent) => format!("Execute: intent={intent}"),
    }
}

/// `Execute: intent=adjust, attribute=…, adjust_value=10, …`, with the
/// failure reason appended when the engine refused.
pub fn execute_summary(frame: &SemanticFrame, result: &Result<(), ExecFailure>) -> String {
    match result {
        Ok(()) => format!("Execute: {frame}"),
        Err(e) => format!("Execute: {frame} (failed: {e})"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::DatasetConfig;

    fn world() -> Arc<World> {
        Arc::new(World::standard(DatasetConfig::default().seed))
    }

    #[test]
    fn prompts() {
        assert_eq!(prompt_for(SystemAction::Request(Slot::Attribute), None), "What attribute do you want?");
        assert_eq!(
            prompt_for(SystemAction::Confirm(Slot::AdjustValue), Some(&SlotValue::Int(10))),
            "Do you want adjust_value=10?"
        );
        let frame = SemanticFrame::new().with_intent(Intent::Adjust).with(Slot::AdjustValue, SlotValue::Int(10));
        assert_eq!(execute_summary(&frame, &Ok(())), "Execute: intent=adjust, adjust_value=10");
    }

    #[test]
    fn fresh_session_is_open_with_adjust_goal() {
        let w = world();
        let s = Session::create("s1", w.clone(), SessionPolicy::rule(&w, DEFAULT_TAU), None, 3, SessionConfig::default()).unwrap();
        let snap = s.snapshot();
        assert_eq!(snap.turn, 0);
        assert!(snap.transcript.is_empty());
        assert_eq!(snap.goal.unwrap().intent, Intent::Adjust);
        assert!(snap.image.unwrap().starts_with("iVBOR"));
    }

    #[test]
    fn affirm_words_only_after_confirm() {
        let w = world();
        let mut s = Session::create("s", w.clone(), SessionPolicy::rule(&w, DEFAULT_TAU), None, 1, SessionConfig::default()).unwrap();
        let r = s.interpret(&UserEvent::Utterance { text: "yes".into() }).unwrap();
        assert_eq!(r.act, UserAct::Inform);
        s.manager
            .belief
            .update_with_frame(&SemanticFrame::new().with_intent(Intent::Adjust), &BTreeMap::from([(Slot::Intent, 0.5)]))
            .unwrap();
        s.last_action = Some(SystemAction::Confirm(Slot::Intent));
        let r = s.interpret(&UserEvent::Utterance { text: "Yes.".into() }).unwrap();
        assert_eq!(r.act, UserAct::Affirm(Slot::Intent));
        let r = s.interpret(&UserEvent::Utterance { text: "no, undo it".into() }).unwrap();
        assert_eq!(r.act, UserAct::Deny(Slot::Intent));
    }
}
