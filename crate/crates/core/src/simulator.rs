//! Agenda-based multimodal multi-goal user simulator with a semantic error
//! channel.
//!
//! The simulator holds an ordered agenda of goals. Each goal is announced
//! once with a first-pass frame (slots dropped with probability θ) as the
//! user's answer to whatever the system does next; after that the user only
//! answers Request/Confirm actions. Informed speech values pass through the
//! error channel, which replaces a value with a different one with
//! probability SER and attaches an observed confidence.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{ExecResult, Mask};
use crate::ontology::{dependent_slots, Intent, Ontology, SemanticFrame, Slot, SlotValue, SystemAction};
use crate::tracker::{UserAct, UserResponse};
use crate::vision::{Click, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalOrigin {
    Original,
    InsertedUndo,
    InsertedRedo,
}

/// An intent with the full assignment of its subtree. Adjust goals carry the
/// target object name and its ground-truth mask under `object_mask_str`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGoal {
    pub slots: SemanticFrame,
    pub origin: GoalOrigin,
}

impl UserGoal {
    pub fn new(intent: Intent, origin: GoalOrigin) -> Self {
        Self { slots: SemanticFrame::new().with_intent(intent), origin }
    }

    pub fn open(scene_id: &str) -> Self {
        let mut g = Self::new(Intent::Open, GoalOrigin::Original);
        g.slots.insert(Slot::ImagePath, SlotValue::Text(scene_id.to_string()));
        g
    }

    pub fn adjust(attribute: &str, value: i32, object: &str, mask: Mask) -> Self {
        let mut g = Self::new(Intent::Adjust, GoalOrigin::Original);
        g.slots.insert(Slot::Attribute, SlotValue::Text(attribute.to_string()));
        g.slots.insert(Slot::AdjustValue, SlotValue::Int(value));
        g.slots.insert(Slot::Object, SlotValue::Text(object.to_string()));
        g.slots.insert(Slot::ObjectMaskStr, SlotValue::Mask(mask));
        g
    }

    pub fn intent(&self) -> Intent {
        self.slots.intent().expect("goals always carry an intent")
    }

    pub fn value(&self, slot: Slot) -> Option<&SlotValue> {
        self.slots.get(slot)
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.value(Slot::ObjectMaskStr).and_then(SlotValue::as_mask)
    }

    /// Speech slots of the goal, in ontology order, excluding the intent.
    pub fn speech_slots(&self) -> Vec<Slot> {
        Slot::ALL.iter().copied().filter(|s| *s != Slot::Intent && !s.is_gesture() && self.slots.contains(*s)).collect()
    }

    /// Does an executed frame accomplish this goal? Masks match by IoU.
    pub fn matches(&self, executed: &SemanticFrame, iou_threshold: f64) -> bool {
        executed.intent() == Some(self.intent())
            && dependent_slots(self.intent()).iter().all(|slot| match (self.value(*slot), executed.get(*slot)) {
                (Some(SlotValue::Mask(goal)), Some(SlotValue::Mask(got))) => goal.iou(got) >= iou_threshold,
                (Some(goal), Some(got)) => goal == got,
                _ => false,
            })
    }

    /// Would the user accept `stated` as the value of `slot`?
    pub fn accepts(&self, slot: Slot, stated: &SlotValue, iou_threshold: f64) -> bool {
        match (slot, stated) {
            (Slot::GestureClick, SlotValue::Click(c)) => self.mask().is_some_and(|m| m.contains(c.x as usize, c.y as usize)),
            (_, SlotValue::Mask(m)) => self.mask().is_some_and(|goal| goal.iou(m) >= iou_threshold),
            _ => self.value(slot) == Some(stated),
        }
    }

    /// Whether `slot` has a value under this goal (clicks come from the mask).
    pub fn has_slot(&self, slot: Slot) -> bool {
        match slot {
            Slot::GestureClick => self.mask().is_some(),
            s => self.slots.contains(s),
        }
    }
}

/// Ordered goals; the head is the one the user is pursuing.
#[derive(Debug, Clone, PartialEq)]
pub struct Agenda {
    goals: VecDeque<UserGoal>,
    head_announced: bool,
    original_completed: usize,
}

impl Agenda {
    pub fn new(goals: Vec<UserGoal>) -> Self {
        Self { goals: goals.into(), head_announced: false, original_completed: 0 }
    }

    pub fn head(&self) -> Option<&UserGoal> {
        self.goals.front()
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn goals(&self) -> impl Iterator<Item = &UserGoal> {
        self.goals.iter()
    }

    /// Original goals executed so far (the Goal metric).
    pub fn original_completed(&self) -> usize {
        self.original_completed
    }

    pub fn head_announced(&self) -> bool {
        self.head_announced
    }

    fn pop(&mut self) -> Option<UserGoal> {
        let g = self.goals.pop_front()?;
        if g.origin == GoalOrigin::Original {
            self.original_completed += 1;
        }
        self.head_announced = false;
        Some(g)
    }

    fn push_front(&mut self, goal: UserGoal) {
        self.goals.push_front(goal);
        self.head_announced = false;
    }
}

/// `[Open(scene), Adjust(random attribute, value, object), Close]`.
pub fn sample_goals(ontology: &Ontology, scene: &Scene, rng: &mut impl Rng) -> Agenda {
    let attribute = ontology.attributes().choose(rng).expect("attributes declared");
    let value = *ontology.adjust_values().choose(rng).expect("adjust values declared");
    let index = rng.random_range(0..scene.spec.objects.len());
    let object = &scene.spec.objects[index];
    Agenda::new(vec![
        UserGoal::open(scene.id()),
        UserGoal::adjust(attribute, value, &object.name, scene.masks[index].clone()),
        UserGoal::new(Intent::Close, GoalOrigin::Original),
    ])
}

/// How the observed confidence of an informed value is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceModel {
    /// Independent of corruption: uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Correct values score in `correct`. A corrupted value is flagged
    /// (scored in `flagged`) except with probability `min(1, unflagged_factor · SER)`,
    /// when it scores like a correct one: recognisers get confidently wrong
    /// as the input degrades.
    Calibrated { correct: (f64, f64), flagged: (f64, f64), unflagged_factor: f64 },
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel::Calibrated { correct: (0.8, 0.95), flagged: (0.3, 0.8), unflagged_factor: 2.0 }
    }
}

impl ConfidenceModel {
    pub fn sample(&self, corrupted: bool, ser: f64, rng: &mut impl Rng) -> f64 {
        let uniform = |(lo, hi): (f64, f64), rng: &mut dyn rand::RngCore| lo + (hi - lo) * rng.random::<f64>();
        match *self {
            ConfidenceModel::Uniform { lo, hi } => uniform((lo, hi), rng),
            ConfidenceModel::Calibrated { correct, flagged, unflagged_factor } => {
                if !corrupted || rng.random::<f64>() < (unflagged_factor * ser).min(1.0) {
                    uniform(correct, rng)
                } else {
                    uniform(flagged, rng)
                }
            }
        }
    }
}

/// Value domains the error channel draws replacements from.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDomains {
    pub intents: Vec<Intent>,
    pub attributes: Vec<String>,
    pub adjust_values: Vec<i32>,
    pub objects: Vec<String>,
    pub image_paths: Arc<Vec<String>>,
}

impl ErrorDomains {
    pub fn new(ontology: &Ontology, objects: &[&str], image_paths: Arc<Vec<String>>) -> Self {
        Self {
            intents: ontology.intents().to_vec(),
            attributes: ontology.attributes().to_vec(),
            adjust_values: ontology.adjust_values().to_vec(),
            objects: objects.iter().map(|s| s.to_string()).collect(),
            image_paths,
        }
    }

    /// A uniformly chosen value of `slot`'s domain different from `value`.
    /// `None` for gesture slots and singleton domains.
    pub fn replacement(&self, slot: Slot, value: &SlotValue, rng: &mut impl Rng) -> Option<SlotValue> {
        fn other<T: PartialEq + Clone>(items: &[T], current: &T, rng: &mut impl Rng) -> Option<T> {
            let n = items.iter().filter(|x| *x != current).count();
            if n == 0 {
                return None;
            }
            let k = rng.random_range(0..n);
            items.iter().filter(|x| *x != current).nth(k).cloned()
        }
        Some(match (slot, value) {
            (Slot::Intent, SlotValue::Intent(i)) => SlotValue::Intent(other(&self.intents, i, rng)?),
            (Slot::Attribute, SlotValue::Text(a)) => SlotValue::Text(other(&self.attributes, a, rng)?),
            (Slot::AdjustValue, SlotValue::Int(v)) => SlotValue::Int(other(&self.adjust_values, v, rng)?),
            (Slot::Object, SlotValue::Text(o)) => SlotValue::Text(other(&self.objects, o, rng)?),
            (Slot::ImagePath, SlotValue::Text(p)) => SlotValue::Text(other(&self.image_paths, p, rng)?),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorChannel {
    pub ser: f64,
    /// Whether image paths are confusable too (by default they are
    /// selected, not recognised, and pass unchanged).
    pub corrupt_image_path: bool,
}

impl ErrorChannel {
    pub fn new(ser: f64) -> Self {
        Self { ser, corrupt_image_path: false }
    }
}

/// Replace each speech value independently with probability SER. Returns
/// the corrupted frame and the slots that were changed.
pub fn corrupt(frame: &SemanticFrame, channel: ErrorChannel, domains: &ErrorDomains, rng: &mut impl Rng) -> (SemanticFrame, Vec<Slot>) {
    let mut out = SemanticFrame::new();
    let mut changed = Vec::new();
    for (slot, value) in frame.iter() {
        let mut v = value.clone();
        let confusable = !slot.is_gesture() && (slot != Slot::ImagePath || channel.corrupt_image_path);
        if confusable && channel.ser > 0.0 && rng.random::<f64>() < channel.ser {
            if let Some(r) = domains.replacement(slot, value, rng) {
                v = r;
                changed.push(slot);
            }
        }
        out.insert(slot, v);
    }
    (out, changed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub ser: f64,
    /// Per-slot drop probability in the first-pass announcement.
    pub theta: f64,
    /// Whether θ may also drop the intent from the announcement.
    pub theta_drops_intent: bool,
    pub confidence: ConfidenceModel,
    /// Minimum IoU for a mask to count as the goal's region.
    pub iou_threshold: f64,
    pub corrupt_image_path: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { ser: 0.0, theta: 0.5, theta_drops_intent: false, confidence: ConfidenceModel::default(), iou_threshold: 0.5, corrupt_image_path: false }
    }
}

/// Outcome of an Execute as seen by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEvent {
    GoalCompleted { original: bool },
    IncorrectEdit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueStatus {
    Ongoing,
    Success,
    Failure,
}

pub fn dialogue_status(agenda: &Agenda, turn: usize, max_turns: usize) -> DialogueStatus {
    if agenda.is_empty() {
        DialogueStatus::Success
    } else if turn >= max_turns {
        DialogueStatus::Failure
    } else {
        DialogueStatus::Ongoing
    }
}

/// One simulated user for one dialogue.
#[derive(Debug, Clone)]
pub struct UserSimulator {
    config: SimConfig,
    domains: Arc<ErrorDomains>,
    agenda: Agenda,
}

impl UserSimulator {
    pub fn new(config: SimConfig, domains: Arc<ErrorDomains>, agenda: Agenda) -> Self {
        Self { config, domains, agenda }
    }

    pub fn agenda(&self) -> &Agenda {
        &self.agenda
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn channel(&self) -> ErrorChannel {
        ErrorChannel { ser: self.config.ser, corrupt_image_path: self.config.corrupt_image_path }
    }

    /// Pass speech values through the error channel and attach confidences;
    /// gesture values keep confidence 1.
    pub fn transmit(&self, frame: &SemanticFrame, rng: &mut impl Rng) -> (SemanticFrame, BTreeMap<Slot, f64>) {
        let (observed, changed) = corrupt(frame, self.channel(), &self.domains, rng);
        let confidences = observed
            .slots()
            .map(|slot| {
                let c = if slot.is_gesture() { 1.0 } else { self.config.confidence.sample(changed.contains(&slot), self.config.ser, rng) };
                (slot, c)
            })
            .collect();
        (observed, confidences)
    }

    /// Announcement of `goal` before the error channel.
    pub fn first_pass_frame(&self, goal: &UserGoal, rng: &mut impl Rng) -> SemanticFrame {
        let theta = self.config.theta;
        let mut frame = SemanticFrame::new();
        if !self.config.theta_drops_intent || rng.random::<f64>() >= theta {
            frame.insert(Slot::Intent, SlotValue::Intent(goal.intent()));
        }
        for slot in goal.speech_slots() {
            if rng.random::<f64>() >= theta {
                frame.insert(slot, goal.value(slot).expect("speech slot present").clone());
            }
        }
        frame
    }

    /// The user's reply to `action`. `stated` is the system's stored value for
    /// the slot of a Confirm.
    pub fn respond(&mut self, action: SystemAction, stated: Option<&SlotValue>, rng: &mut impl Rng) -> UserResponse {
        let Some(goal) = self.agenda.head().cloned() else {
            return UserResponse::silent();
        };
        if !self.agenda.head_announced {
            self.agenda.head_announced = true;
            let frame = self.first_pass_frame(&goal, rng);
            let (frame, confidences) = self.transmit(&frame, rng);
            return UserResponse::inform(frame, confidences);
        }
        match action {
            SystemAction::Request(slot) => match self.true_value(&goal, slot, rng) {
                Some(value) => self.inform_one(slot, value, rng, UserAct::Inform),
                None => UserResponse { act: UserAct::NotApplicable(slot), ..UserResponse::silent() },
            },
            SystemAction::Confirm(slot) => {
                let Some(stated) = stated else {
                    return UserResponse::silent();
                };
                if goal.accepts(slot, stated, self.config.iou_threshold) {
                    UserResponse { act: UserAct::Affirm(slot), ..UserResponse::silent() }
                } else {
                    match self.true_value(&goal, slot, rng) {
                        Some(value) => self.inform_one(slot, value, rng, UserAct::Deny(slot)),
                        None => UserResponse { act: UserAct::Deny(slot), ..UserResponse::silent() },
                    }
                }
            }
            SystemAction::Query | SystemAction::Execute(_) => UserResponse::silent(),
        }
    }

    fn inform_one(&self, slot: Slot, value: SlotValue, rng: &mut impl Rng, act: UserAct) -> UserResponse {
        let (frame, confidences) = self.transmit(&SemanticFrame::new().with(slot, value), rng);
        UserResponse { act, frame, confidences }
    }

    fn true_value(&self, goal: &UserGoal, slot: Slot, rng: &mut impl Rng) -> Option<SlotValue> {
        match slot {
            Slot::GestureClick => {
                let mask = goal.mask()?;
                let n = mask.count();
                let k = rng.random_range(0..n);
                let (x, y) = mask.pixels().nth(k).expect("index below count");
                Some(SlotValue::Click(Click::new(x as u32, y as u32)))
            }
            s => goal.value(s).cloned(),
        }
    }

    /// Update the agenda after an Execute.
    pub fn observe_execution(&mut self, executed: &SemanticFrame, result: &ExecResult) -> Vec<SimEvent> {
        if result.is_err() {
            return Vec::new();
        }
        let Some(goal) = self.agenda.head() else {
            return Vec::new();
        };
        if goal.matches(executed, self.config.iou_threshold) {
            let g = self.agenda.pop().expect("head exists");
            return vec![SimEvent::GoalCompleted { original: g.origin == GoalOrigin::Original }];
        }
        match executed.intent() {
            Some(Intent::Adjust | Intent::Redo) => self.agenda.push_front(UserGoal::new(Intent::Undo, GoalOrigin::InsertedUndo)),
            Some(Intent::Undo) => self.agenda.push_front(UserGoal::new(Intent::Redo, GoalOrigin::InsertedRedo)),
            // Open and close leave the image itself untouched; nothing to revert.
            _ => {}
        }
        vec![SimEvent::IncorrectEdit]
    }
}
