//! Dialogue policies: the hand-written rule cascade and a DQN.

mod checkpoint;
mod dqn;
mod qnet;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta};
pub use dqn::{argmax, select_action, td_targets, train_step, AdamState, DqnConfig, ReplayBuffer, SyncUnit, TrainStep, Transition};
pub use qnet::QNetwork;

use crate::ontology::{dependent_slots, Slot, SlotValue, SystemAction};
use crate::tracker::BeliefState;

/// Confirmation threshold shared by the rule policy.
pub const DEFAULT_TAU: f64 = 0.8;

/// The rule cascade:
///
/// 1. no intent → `Request(intent)`; unsure intent → `Confirm(intent)`;
/// 2. request the first missing argument in ontology order. The region is
///    resolved through the object: unknown object → `Request(object)`,
///    unsure object → `Confirm(object)`, object not yet queried → `Query`,
///    queried but still no region → `Request(object_mask_str)`;
/// 3. confirm any argument below `tau`;
/// 4. `Execute(intent)`.
pub fn rule_action(belief: &BeliefState, tau: f64) -> SystemAction {
    let Some(intent) = belief.intent() else {
        return SystemAction::Request(Slot::Intent);
    };
    if belief.confidence(Slot::Intent) < tau {
        return SystemAction::Confirm(Slot::Intent);
    }
    let args = dependent_slots(intent);
    for slot in args {
        if belief.stored(*slot).is_some() {
            continue;
        }
        if *slot != Slot::ObjectMaskStr {
            return SystemAction::Request(*slot);
        }
        let Some(object) = belief.stored(Slot::Object).and_then(SlotValue::as_text) else {
            return SystemAction::Request(Slot::Object);
        };
        if belief.confidence(Slot::Object) < tau {
            return SystemAction::Confirm(Slot::Object);
        }
        if belief.queried_object.as_deref() != Some(object) {
            return SystemAction::Query;
        }
        return SystemAction::Request(Slot::ObjectMaskStr);
    }
    if let Some(slot) = args.iter().find(|s| belief.confidence(**s) < tau) {
        return SystemAction::Confirm(*slot);
    }
    SystemAction::Execute(intent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{Intent, Ontology, SemanticFrame};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn belief(frame: SemanticFrame, conf: f64) -> BeliefState {
        let mut b = BeliefState::new(Arc::new(Ontology::default()));
        let confs: BTreeMap<Slot, f64> = frame.slots().map(|s| (s, conf)).collect();
        b.update_with_frame(&frame, &confs).unwrap();
        b
    }

    fn adjust_frame() -> SemanticFrame {
        SemanticFrame::new()
            .with_intent(Intent::Adjust)
            .with(Slot::Attribute, SlotValue::Text("brightness".into()))
            .with(Slot::AdjustValue, SlotValue::Int(10))
            .with(Slot::Object, SlotValue::Text("man".into()))
    }

    #[test]
    fn empty_belief_requests_intent() {
        assert_eq!(rule_action(&belief(SemanticFrame::new(), 1.0), DEFAULT_TAU), SystemAction::Request(Slot::Intent));
    }

    #[test]
    fn known_object_without_candidates_queries() {
        assert_eq!(rule_action(&belief(adjust_frame(), 1.0), DEFAULT_TAU), SystemAction::Query);
        let mut b = belief(adjust_frame(), 1.0);
        b.queried_object = Some("man".into());
        assert_eq!(rule_action(&b, DEFAULT_TAU), SystemAction::Request(Slot::ObjectMaskStr));
    }

    #[test]
    fn certain_close_executes() {
        let b = belief(SemanticFrame::new().with_intent(Intent::Close), 1.0);
        assert_eq!(rule_action(&b, DEFAULT_TAU), SystemAction::Execute(Intent::Close));
    }

    #[test]
    fn unsure_values_are_confirmed() {
        assert_eq!(rule_action(&belief(adjust_frame(), 0.5), DEFAULT_TAU), SystemAction::Confirm(Slot::Intent));
        let mut b = belief(adjust_frame(), 0.5);
        b.apply_confirm_result(Slot::Intent, true).unwrap();
        assert_eq!(rule_action(&b, DEFAULT_TAU), SystemAction::Confirm(Slot::Object));
        let b = belief(SemanticFrame::new().with_intent(Intent::Open), 0.9);
        assert_eq!(rule_action(&b, DEFAULT_TAU), SystemAction::Request(Slot::ImagePath));
    }

    #[test]
    fn pure_function_of_belief() {
        let b = belief(adjust_frame(), 0.85);
        assert_eq!(rule_action(&b, DEFAULT_TAU), rule_action(&b.clone(), DEFAULT_TAU));
    }
}
