use std::sync::Arc;

use imgdial_core::engine::Mask;
use imgdial_core::harness::{evaluation_dialogue_rng, Dialogue, GreedyDqn, RulePolicy, RunConfig, DialoguePolicy, World, train_dqn};
use imgdial_core::ontology::{Intent, SemanticFrame, Slot, SlotValue, SystemAction};
use imgdial_core::policy::{Checkpoint, CheckpointMeta};
use imgdial_core::session::{Session, SessionConfig, SessionError, SessionPolicy, UserEvent};
use imgdial_core::simulator::DialogueStatus;
use imgdial_core::tracker::LAYOUT_VERSION;
use imgdial_core::vision::DatasetConfig;
use rand::Rng;

fn world() -> Arc<World> {
    Arc::new(World::standard(DatasetConfig::default().seed))
}

fn bbox(mask: &Mask) -> (i64, i64, i64, i64) {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.contains(x, y) {
                (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            }
        }
    }
    (x0 as i64, y0 as i64, (x1 - x0 + 1) as i64, (y1 - y0 + 1) as i64)
}

fn goal_utterance(session: &Session) -> String {
    let g = session.goal_descriptor().unwrap();
    let verb = if g.adjust_value < 0 { "decrease" } else { "increase" };
    format!("{verb} the {}'s {} by {}", g.object, g.attribute, g.adjust_value.abs())
}

fn goal_box(session: &Session) -> UserEvent {
    let (x, y, w, h) = bbox(session.goal().unwrap().mask().unwrap());
    UserEvent::Box { x, y, w, h }
}

fn rule(w: &Arc<World>) -> SessionPolicy {
    SessionPolicy::rule(w, 0.8)
}

#[test]
fn same_seed_same_goal() {
    let w = world();
    let a = Session::create("a", w.clone(), rule(&w), None, 11, SessionConfig::default()).unwrap();
    let b = Session::create("b", w.clone(), rule(&w), None, 11, SessionConfig::default()).unwrap();
    assert_eq!(a.goal_descriptor(), b.goal_descriptor());
    assert!(matches!(
        Session::create("c", w.clone(), rule(&w), Some("no_such_scene"), 1, SessionConfig::default()),
        Err(SessionError::UnknownScene(_))
    ));
}

#[test]
fn bad_checkpoint_path_is_an_error() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing.bin");
    assert!(matches!(SessionPolicy::from_checkpoint_file(&w, &path), Err(SessionError::Checkpoint(_))));
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(SessionPolicy::from_checkpoint_file(&w, &path).is_err());
}

#[test]
fn utterance_then_box_succeeds_in_two_turns_rule() {
    let w = world();
    let mut s = Session::create("t3", w.clone(), rule(&w), None, 5, SessionConfig::default()).unwrap();
    let first = s.user_event(&UserEvent::Utterance { text: goal_utterance(&s) }).unwrap();
    assert!(!first.done);
    let second = s.user_event(&goal_box(&s)).unwrap();
    assert!(matches!(second.action, SystemAction::Execute(Intent::Adjust)), "{second:?}");
    assert!(second.prompt.starts_with("Execute: intent=adjust"));
    assert!(second.done && second.success);
    assert_eq!(second.turn, 2);
    assert!(matches!(s.user_event(&UserEvent::Utterance { text: "hi".into() }), Err(SessionError::Finished)));
}

#[test]
fn saturation_request_then_box_with_dqn() {
    let w = world();
    let config = RunConfig { ser: 0.0, ..RunConfig::default() };
    let trained = train_dqn(&w, &config).unwrap();
    let ckpt = trained.checkpoint(&w, &config);
    let mut s = Session::create("dqn", w.clone(), SessionPolicy::dqn(ckpt), None, 5, SessionConfig::default()).unwrap();
    let utter = goal_utterance(&s);
    let r1 = s.user_event(&UserEvent::Utterance { text: utter }).unwrap();
    assert!(!r1.done, "{r1:?}");
    let r2 = s.user_event(&goal_box(&s)).unwrap();
    assert!(matches!(r2.action, SystemAction::Execute(Intent::Adjust)), "{:?}", s.snapshot().transcript);
    assert!(r2.done && r2.success);
    assert_eq!(r2.turn, 2);
    let g = s.goal_descriptor().unwrap();
    assert!(r2.prompt.contains(&format!("adjust_value={}", g.adjust_value)), "{}", r2.prompt);
}

#[test]
fn faulty_parse_executes_wrong_sign_and_fails() {
    let w = world();
    // Find a session whose goal decreases the value.
    let mut s = (0..200)
        .map(|seed| Session::create("t5", w.clone(), rule(&w), None, seed, SessionConfig::default()).unwrap())
        .find(|s| s.goal_descriptor().unwrap().adjust_value < 0)
        .unwrap();
    let g = s.goal_descriptor().unwrap();
    let faulty = SemanticFrame::new()
        .with_intent(Intent::Adjust)
        .with(Slot::Attribute, SlotValue::Text(g.attribute.clone()))
        .with(Slot::AdjustValue, SlotValue::Int(-g.adjust_value))
        .with(Slot::Object, SlotValue::Text(g.object.clone()));
    s.set_parser(Arc::new(move |_: &str| faulty.clone()));
    s.user_event(&UserEvent::Utterance { text: format!("make the {} {}% less bright", g.object, -g.adjust_value) }).unwrap();
    let r = s.user_event(&goal_box(&s)).unwrap();
    assert!(r.prompt.contains(&format!("adjust_value={}", -g.adjust_value)), "{}", r.prompt);
    assert!(r.done && !r.success);
}

#[test]
fn coordinates_are_checked() {
    let w = world();
    let mut s = Session::create("c", w.clone(), rule(&w), None, 2, SessionConfig::default()).unwrap();
    assert!(matches!(s.user_event(&UserEvent::Click { x: -1, y: 5 }), Err(SessionError::OutOfBounds { .. })));
    assert!(matches!(s.user_event(&UserEvent::Box { x: 60, y: 0, w: 10, h: 4 }), Err(SessionError::OutOfBounds { .. })));
    assert!(matches!(s.user_event(&UserEvent::Box { x: 1, y: 1, w: 0, h: 4 }), Err(SessionError::EmptyBox)));
    assert_eq!(s.snapshot().turn, 0, "rejected events take no turn");
    s.user_event(&UserEvent::Click { x: 3, y: 5 }).unwrap();
}

#[test]
fn snapshot_after_one_event_and_stability() {
    let w = world();
    let mut s = Session::create("p", w.clone(), rule(&w), None, 4, SessionConfig::default()).unwrap();
    s.user_event(&UserEvent::Utterance { text: "hello".into() }).unwrap();
    let snap = s.snapshot();
    assert_eq!(snap.transcript.len(), 2);
    assert_eq!(snap, s.snapshot());
}

#[test]
fn never_exceeds_ten_turns() {
    let w = world();
    let mut s = Session::create("m", w.clone(), rule(&w), None, 9, SessionConfig::default()).unwrap();
    let mut turns = 0;
    while !s.is_done() {
        let r = s.user_event(&UserEvent::Utterance { text: "hmm".into() }).unwrap();
        turns = r.turn;
    }
    assert_eq!(turns, 10);
    assert!(!s.snapshot().success);
    assert!(s.user_event(&UserEvent::Utterance { text: "hmm".into() }).is_err());
}

/// Feeding a simulator trace into a scripted session reproduces the
/// simulated transcript byte for byte.
#[test]
fn scripted_session_replays_simulated_dialogues() {
    let w = world();
    let config = RunConfig::default();
    let net = imgdial_core::harness::initial_network(&w, &config);
    let ckpt = Checkpoint {
        network: net.clone(),
        adam: None,
        meta: CheckpointMeta {
            ontology_hash: w.ontology.fingerprint(),
            layout_version: LAYOUT_VERSION,
            include_turn: false,
            ser: 0.0,
            seed: 0,
            dialogues: 0,
        },
    };
    for (i, ser) in [(0usize, 0.0), (1, 0.3), (2, 0.5), (3, 0.3)] {
        let policies: [(Box<dyn DialoguePolicy>, SessionPolicy); 2] = [
            (Box::new(RulePolicy::new(&w.ontology, 0.8)), SessionPolicy::rule(&w, 0.8)),
            (Box::new(GreedyDqn { network: net.clone() }), SessionPolicy::dqn(ckpt.clone())),
        ];
        for (mut sim_policy, session_policy) in policies {
            let mut rng = evaluation_dialogue_rng(config.seed, i);
            let test = w.dataset.test();
            let scene = &test[rng.random_range(0..test.len())];
            let mut d = Dialogue::new(&w, scene, &config, ser, rng);
            let mut replies = Vec::new();
            while d.status() == DialogueStatus::Ongoing {
                let state = d.state();
                let a = sim_policy.choose(d.belief(), &state);
                replies.push(d.step_with_response(a).1);
            }
            let expected = d.manager.transcript_log();
            let mut s = Session::scripted("r", w.clone(), session_policy, config.max_turns);
            for reply in &replies {
                s.scripted_turn(None).unwrap();
                if let Some(r) = reply {
                    s.scripted_observe(r).unwrap();
                }
            }
            assert_eq!(s.manager().transcript_log(), expected);
            assert_eq!(s.manager().engine.checksum(), d.manager.engine.checksum());
        }
    }
}
