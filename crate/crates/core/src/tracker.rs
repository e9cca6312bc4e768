//! Multimodal belief tracking and the fixed-length policy input vector.
//!
//! Vector layout (default ontology, 23 entries):
//!
//! | index | feature |
//! |-------|---------|
//! | 0–5   | intent distribution: open, adjust, close, undo, redo, none |
//! | 6–9   | attribute distribution: brightness, saturation, contrast, none |
//! | 10–11 | adjust_value presence, confidence |
//! | 12–13 | object presence, confidence |
//! | 14–15 | image_path presence, confidence |
//! | 16    | gesture_click present |
//! | 17    | object_mask_str present |
//! | 18–22 | engine: image_loaded, has_previous_history, has_next_history, candidates_loaded, session_closed |
//! | 23    | turn / max_turns (only with the optional turn feature) |
//!
//! `imgdial layout` prints the same table for any ontology.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineState;
use crate::ontology::{dependent_slots, Intent, Ontology, SemanticFrame, Slot, SlotValue};

/// Bumped whenever the vector layout changes; recorded in checkpoints.
pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("value `{value}` is outside the domain of {slot}")]
    OutOfDomain { slot: Slot, value: String },
    #[error("confidence {0} is outside [0, 1]")]
    BadConfidence(f64),
    #[error("no stored value for {0}")]
    NoStoredValue(Slot),
}

/// Dialogue act of a user turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", content = "slot", rename_all = "snake_case")]
pub enum UserAct {
    Inform,
    Affirm(Slot),
    /// Denial; the frame may carry a corrective inform for the same slot.
    Deny(Slot),
    /// The requested slot does not belong to the user's current goal.
    NotApplicable(Slot),
    Silent,
}

/// One user turn as seen by the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct UserResponse {
    pub act: UserAct,
    pub frame: SemanticFrame,
    pub confidences: BTreeMap<Slot, f64>,
}

impl UserResponse {
    pub fn silent() -> Self {
        Self { act: UserAct::Silent, frame: SemanticFrame::new(), confidences: BTreeMap::new() }
    }

    pub fn inform(frame: SemanticFrame, confidences: BTreeMap<Slot, f64>) -> Self {
        Self { act: UserAct::Inform, frame, confidences }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeliefKind {
    /// Probability distribution over a small domain plus `none` (last entry).
    Distribution,
    /// Top hypothesis with a confidence.
    Hypothesis,
    /// Gesture payload; presence is binary.
    Presence,
}

pub fn belief_kind(slot: Slot) -> BeliefKind {
    match slot {
        Slot::Intent | Slot::Attribute => BeliefKind::Distribution,
        Slot::AdjustValue | Slot::Object | Slot::ImagePath => BeliefKind::Hypothesis,
        Slot::GestureClick | Slot::ObjectMaskStr => BeliefKind::Presence,
    }
}

/// Belief over one slot. `value` is the stored best hypothesis used by
/// Confirm/Execute/Query; `probs` only exists for distribution slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBelief {
    kind: BeliefKind,
    value: Option<SlotValue>,
    confidence: f64,
    probs: Vec<f64>,
}

impl SlotBelief {
    fn new(kind: BeliefKind, domain: usize) -> Self {
        let mut b = Self { kind, value: None, confidence: 0.0, probs: Vec::new() };
        if kind == BeliefKind::Distribution {
            b.probs = vec![0.0; domain + 1];
        }
        b.clear();
        b
    }

    fn clear(&mut self) {
        self.value = None;
        self.confidence = 0.0;
        if let Some(last) = self.probs.len().checked_sub(1) {
            self.probs.iter_mut().for_each(|p| *p = 0.0);
            self.probs[last] = 1.0;
        }
    }

    /// Place `conf` on domain entry `index` and spread the rest uniformly.
    fn set_distribution(&mut self, index: usize, conf: f64) {
        let others = (self.probs.len() - 1) as f64;
        for (i, p) in self.probs.iter_mut().enumerate() {
            *p = if i == index { conf } else { (1.0 - conf) / others };
        }
    }

    pub fn kind(&self) -> BeliefKind {
        self.kind
    }

    pub fn value(&self) -> Option<&SlotValue> {
        self.value.as_ref()
    }

    pub fn is_present(&self) -> bool {
        self.value.is_some()
    }

    /// Confidence in the stored value: 0 when absent, 1 for gestures.
    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn distribution(&self) -> &[f64] {
        &self.probs
    }
}

/// Belief state `B = B^u ⊕ B^e` plus the tracker's memory of the last query.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    ontology: Arc<Ontology>,
    slots: BTreeMap<Slot, SlotBelief>,
    pub engine: EngineState,
    /// Object name most recently sent to the vision engine.
    pub queried_object: Option<String>,
    pub turn: usize,
}

impl BeliefState {
    pub fn new(ontology: Arc<Ontology>) -> Self {
        let slots = Slot::ALL
            .iter()
            .map(|s| {
                let domain = match s {
                    Slot::Intent => ontology.intents().len(),
                    Slot::Attribute => ontology.attributes().len(),
                    _ => 0,
                };
                (*s, SlotBelief::new(belief_kind(*s), domain))
            })
            .collect();
        Self { ontology, slots, engine: EngineState::default(), queried_object: None, turn: 0 }
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn slot(&self, slot: Slot) -> &SlotBelief {
        &self.slots[&slot]
    }

    pub fn stored(&self, slot: Slot) -> Option<&SlotValue> {
        self.slots[&slot].value.as_ref()
    }

    pub fn confidence(&self, slot: Slot) -> f64 {
        self.slots[&slot].confidence
    }

    pub fn intent(&self) -> Option<Intent> {
        self.stored(Slot::Intent).and_then(SlotValue::as_intent)
    }

    /// Stored values for `intent` and its argument slots, as sent to the engine.
    pub fn execution_frame(&self, intent: Intent) -> SemanticFrame {
        let mut frame = SemanticFrame::new().with_intent(intent);
        for slot in dependent_slots(intent) {
            if let Some(v) = self.stored(*slot) {
                frame.insert(*slot, v.clone());
            }
        }
        frame
    }

    fn domain_index(&self, slot: Slot, value: &SlotValue) -> Option<usize> {
        match (slot, value) {
            (Slot::Intent, SlotValue::Intent(i)) => self.ontology.intents().iter().position(|x| x == i),
            (Slot::Attribute, SlotValue::Text(a)) => self.ontology.attributes().iter().position(|x| x == a),
            _ => None,
        }
    }

    /// Fold an observed frame into the belief. Slots missing from
    /// `confidences` are taken at confidence 1. The whole update is
    /// rejected if any value is out of domain.
    pub fn update_with_frame(&mut self, observed: &SemanticFrame, confidences: &BTreeMap<Slot, f64>) -> Result<(), TrackerError> {
        for (slot, value) in observed.iter() {
            let bad = || TrackerError::OutOfDomain { slot, value: value.to_string() };
            self.ontology.validate_value(slot, value).map_err(|_| bad())?;
            if let Some(c) = confidences.get(&slot) {
                if !(0.0..=1.0).contains(c) {
                    return Err(TrackerError::BadConfidence(*c));
                }
            }
        }
        for (slot, value) in observed.iter() {
            let conf = confidences.get(&slot).copied().unwrap_or(1.0);
            let index = self.domain_index(slot, value);
            let belief = self.slots.get_mut(&slot).expect("all slots tracked");
            match belief.kind {
                BeliefKind::Distribution => belief.set_distribution(index.expect("validated"), conf),
                BeliefKind::Hypothesis => {}
                BeliefKind::Presence => {
                    belief.value = Some(value.clone());
                    belief.confidence = 1.0;
                    continue;
                }
            }
            belief.value = Some(value.clone());
            belief.confidence = conf;
        }
        Ok(())
    }

    /// Outcome of a Confirm: affirm pins the stored value at confidence 1,
    /// deny clears the slot back to its prior.
    pub fn apply_confirm_result(&mut self, slot: Slot, affirmed: bool) -> Result<(), TrackerError> {
        let index = match self.stored(slot) {
            None => return Err(TrackerError::NoStoredValue(slot)),
            Some(v) => self.domain_index(slot, v),
        };
        let belief = self.slots.get_mut(&slot).expect("all slots tracked");
        if affirmed {
            belief.confidence = 1.0;
            if let Some(i) = index {
                belief.set_distribution(i, 1.0);
            }
        } else {
            belief.clear();
        }
        Ok(())
    }

    /// Fold a whole user turn into the belief. A not-applicable answer is
    /// taken as evidence that the believed intent is wrong.
    pub fn apply_response(&mut self, response: &UserResponse) -> Result<(), TrackerError> {
        match response.act {
            UserAct::Affirm(slot) => self.apply_confirm_result(slot, true)?,
            UserAct::Deny(slot) => {
                if self.stored(slot).is_some() {
                    self.apply_confirm_result(slot, false)?;
                }
            }
            UserAct::NotApplicable(_) => self.clear_slot(Slot::Intent),
            UserAct::Inform | UserAct::Silent => {}
        }
        self.update_with_frame(&response.frame, &response.confidences)
    }

    pub fn clear_slot(&mut self, slot: Slot) {
        self.slots.get_mut(&slot).expect("all slots tracked").clear();
        if slot == Slot::Object {
            self.queried_object = None;
        }
    }

    /// Forget everything the user said (after a goal has been executed).
    pub fn reset_user(&mut self) {
        self.slots.values_mut().for_each(SlotBelief::clear);
        self.queried_object = None;
    }

    pub fn vectorize(&self, layout: &VectorLayout) -> Vec<f64> {
        let mut v = Vec::with_capacity(layout.len(&self.ontology));
        self.vectorize_into(layout, &mut v);
        v
    }

    pub fn vectorize_into(&self, layout: &VectorLayout, v: &mut Vec<f64>) {
        v.clear();
        v.extend_from_slice(&self.slots[&Slot::Intent].probs);
        v.extend_from_slice(&self.slots[&Slot::Attribute].probs);
        for slot in OPEN_SLOTS {
            let b = &self.slots[&slot];
            v.push(if b.is_present() { 1.0 } else { 0.0 });
            v.push(b.confidence);
        }
        for slot in GESTURE_SLOTS {
            v.push(if self.slots[&slot].is_present() { 1.0 } else { 0.0 });
        }
        v.extend(self.engine.as_array().iter().map(|f| if *f { 1.0 } else { 0.0 }));
        if layout.include_turn {
            v.push((self.turn as f64 / layout.max_turns.max(1) as f64).min(1.0));
        }
    }
}

const OPEN_SLOTS: [Slot; 3] = [Slot::AdjustValue, Slot::Object, Slot::ImagePath];
const GESTURE_SLOTS: [Slot; 2] = [Slot::GestureClick, Slot::ObjectMaskStr];

/// Options affecting the policy input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorLayout {
    pub include_turn: bool,
    pub max_turns: usize,
}

impl Default for VectorLayout {
    fn default() -> Self {
        Self { include_turn: false, max_turns: 20 }
    }
}

impl VectorLayout {
    pub fn len(&self, ontology: &Ontology) -> usize {
        self.describe(ontology).len()
    }

    pub fn is_empty(&self, ontology: &Ontology) -> bool {
        self.len(ontology) == 0
    }

    /// Index → human-readable meaning.
    pub fn describe(&self, ontology: &Ontology) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(ontology.intents().iter().map(|i| format!("intent={i}")));
        out.push("intent=none".into());
        out.extend(ontology.attributes().iter().map(|a| format!("attribute={a}")));
        out.push("attribute=none".into());
        for slot in OPEN_SLOTS {
            out.push(format!("{slot}.present"));
            out.push(format!("{slot}.confidence"));
        }
        out.extend(GESTURE_SLOTS.iter().map(|s| format!("{s}.present")));
        out.extend(EngineState::NAMES.iter().map(|n| format!("engine.{n}")));
        if self.include_turn {
            out.push("turn/max_turns".into());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Mask;
    use crate::vision::Click;
    use proptest::prelude::*;

    fn belief() -> BeliefState {
        BeliefState::new(Arc::new(Ontology::default()))
    }

    fn conf(slot: Slot, c: f64) -> BTreeMap<Slot, f64> {
        BTreeMap::from([(slot, c)])
    }

    #[test]
    fn fresh_belief_vector() {
        let v = belief().vectorize(&VectorLayout::default());
        assert_eq!(v.len(), 23);
        assert_eq!(&v[..6], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(v[10..].iter().all(|x| *x == 0.0));
        assert_eq!(v, belief().vectorize(&VectorLayout::default()));
        let with_turn = VectorLayout { include_turn: true, max_turns: 20 };
        assert_eq!(belief().vectorize(&with_turn).len(), 24);
    }

    #[test]
    fn certain_intent_is_point_mass() {
        let mut b = belief();
        b.update_with_frame(&SemanticFrame::new().with_intent(Intent::Adjust), &conf(Slot::Intent, 1.0)).unwrap();
        assert_eq!(b.slot(Slot::Intent).distribution(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_remainder_rule() {
        let mut b = belief();
        let frame = SemanticFrame::new().with(Slot::Attribute, SlotValue::Text("brightness".into()));
        b.update_with_frame(&frame, &conf(Slot::Attribute, 0.7)).unwrap();
        let d = b.slot(Slot::Attribute).distribution();
        assert!((d[0] - 0.7).abs() < 1e-12);
        for p in &d[1..] {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn gestures_are_binary() {
        let mut b = belief();
        let frame = SemanticFrame::new().with(Slot::GestureClick, SlotValue::Click(Click::new(3, 4)));
        b.update_with_frame(&frame, &conf(Slot::GestureClick, 0.3)).unwrap();
        assert_eq!(b.confidence(Slot::GestureClick), 1.0);
        assert_eq!(b.vectorize(&VectorLayout::default())[16], 1.0);
    }

    #[test]
    fn out_of_domain_update_is_rejected_whole() {
        let mut b = belief();
        let frame = SemanticFrame::new()
            .with(Slot::Object, SlotValue::Text("man".into()))
            .with(Slot::Attribute, SlotValue::Text("sharpness".into()));
        assert!(matches!(b.update_with_frame(&frame, &BTreeMap::new()), Err(TrackerError::OutOfDomain { .. })));
        assert!(b.stored(Slot::Object).is_none());
    }

    #[test]
    fn confirm_results() {
        let mut b = belief();
        let frame = SemanticFrame::new()
            .with(Slot::Attribute, SlotValue::Text("contrast".into()))
            .with(Slot::Object, SlotValue::Text("dog".into()));
        let confs = BTreeMap::from([(Slot::Attribute, 0.6), (Slot::Object, 0.6)]);
        b.update_with_frame(&frame, &confs).unwrap();
        b.apply_confirm_result(Slot::Attribute, true).unwrap();
        assert_eq!(b.confidence(Slot::Attribute), 1.0);
        assert_eq!(b.slot(Slot::Attribute).distribution()[2], 1.0);
        b.apply_confirm_result(Slot::Object, false).unwrap();
        assert!(b.stored(Slot::Object).is_none());
        assert_eq!(b.confidence(Slot::Object), 0.0);
        assert_eq!(b.apply_confirm_result(Slot::ImagePath, true), Err(TrackerError::NoStoredValue(Slot::ImagePath)));
    }

    #[test]
    fn execution_frame_uses_stored_arguments() {
        let mut b = belief();
        let frame = SemanticFrame::new()
            .with(Slot::Attribute, SlotValue::Text("contrast".into()))
            .with(Slot::ObjectMaskStr, SlotValue::Mask(Mask::empty(4, 4)))
            .with(Slot::Object, SlotValue::Text("dog".into()));
        b.update_with_frame(&frame, &BTreeMap::new()).unwrap();
        let exec = b.execution_frame(Intent::Adjust);
        assert_eq!(exec.len(), 3);
        assert!(!exec.contains(Slot::Object));
    }

    #[test]
    fn layout_table_matches_vector() {
        let o = Ontology::default();
        let layout = VectorLayout::default();
        let names = layout.describe(&o);
        assert_eq!(names.len(), 23);
        assert_eq!(names[5], "intent=none");
        assert_eq!(names[17], "object_mask_str.present");
        assert_eq!(names[22], "engine.session_closed");
        let reduced = Arc::new(o.without_intent(Intent::Close));
        assert_eq!(BeliefState::new(reduced.clone()).vectorize(&layout).len(), layout.len(&reduced));
    }

    fn arb_update() -> impl Strategy<Value = (Slot, SlotValue, f64)> {
        let intent = prop::sample::select(Intent::ALL.to_vec()).prop_map(|i| (Slot::Intent, SlotValue::Intent(i)));
        let attr = prop::sample::select(vec!["brightness", "saturation", "contrast"])
            .prop_map(|a| (Slot::Attribute, SlotValue::Text(a.to_string())));
        let value = prop::sample::select(crate::ontology::DEFAULT_ADJUST_VALUES.to_vec())
            .prop_map(|v| (Slot::AdjustValue, SlotValue::Int(v)));
        let obj = Just((Slot::Object, SlotValue::Text("cat".into())));
        let click = (0u32..64, 0u32..64).prop_map(|(x, y)| (Slot::GestureClick, SlotValue::Click(Click::new(x, y))));
        (prop_oneof![intent, attr, value, obj, click], 0.0f64..=1.0).prop_map(|((s, v), c)| (s, v, c))
    }

    proptest! {
        #[test]
        fn vector_stays_in_unit_range_and_distributions_normalised(
            updates in proptest::collection::vec((arb_update(), any::<Option<bool>>()), 1..20)
        ) {
            let mut b = belief();
            let layout = VectorLayout::default();
            for ((slot, value, c), confirm) in updates {
                b.update_with_frame(&SemanticFrame::new().with(slot, value), &conf(slot, c)).unwrap();
                if let Some(affirm) = confirm {
                    b.apply_confirm_result(slot, affirm).unwrap();
                }
                let v = b.vectorize(&layout);
                prop_assert_eq!(v.len(), 23);
                prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
                for s in [Slot::Intent, Slot::Attribute] {
                    let sum: f64 = b.slot(s).distribution().iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn certain_update_puts_exact_one(i in 0usize..5) {
            let mut b = belief();
            b.update_with_frame(&SemanticFrame::new().with_intent(Intent::ALL[i]), &conf(Slot::Intent, 1.0)).unwrap();
            prop_assert_eq!(b.vectorize(&VectorLayout::default())[i], 1.0);
        }
    }
}
