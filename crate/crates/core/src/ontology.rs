//! Domain ontology: intents, slots, value domains and the argument tree.
//!
//! ```text
//! open   ── image_path
//! adjust ── attribute
//!        ── adjust_value
//!        ── object_mask_str ── object
//!                           ── gesture_click
//! close, undo, redo (no arguments)
//! ```
//!
//! The ontology also fixes the system action space. Actions are enumerated as
//! `Request(s)` for every slot, `Confirm(s)` for every slot, `Query`, then
//! `Execute(i)` for every declared intent, always in declaration order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::Mask;
use crate::vision::Click;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("unknown intent `{0}`")]
    UnknownIntent(String),
    #[error("unknown slot `{0}`")]
    UnknownSlot(String),
    #[error("intent `{0}` is not declared in this ontology")]
    UndeclaredIntent(Intent),
    #[error("value `{value}` is outside the domain of slot `{slot}`")]
    ValueOutOfDomain { slot: Slot, value: String },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Open,
    Adjust,
    Close,
    Undo,
    Redo,
}

impl Intent {
    pub const ALL: [Intent; 5] = [Intent::Open, Intent::Adjust, Intent::Close, Intent::Undo, Intent::Redo];

    pub fn name(self) -> &'static str {
        match self {
            Intent::Open => "open",
            Intent::Adjust => "adjust",
            Intent::Close => "close",
            Intent::Undo => "undo",
            Intent::Redo => "redo",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intent {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Intent::ALL
            .into_iter()
            .find(|i| i.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| OntologyError::UnknownIntent(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Intent,
    ImagePath,
    Attribute,
    AdjustValue,
    Object,
    GestureClick,
    ObjectMaskStr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Speech,
    Gesture,
}

impl Slot {
    pub const ALL: [Slot; 7] = [
        Slot::Intent,
        Slot::ImagePath,
        Slot::Attribute,
        Slot::AdjustValue,
        Slot::Object,
        Slot::GestureClick,
        Slot::ObjectMaskStr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Intent => "intent",
            Slot::ImagePath => "image_path",
            Slot::Attribute => "attribute",
            Slot::AdjustValue => "adjust_value",
            Slot::Object => "object",
            Slot::GestureClick => "gesture_click",
            Slot::ObjectMaskStr => "object_mask_str",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Slot::GestureClick | Slot::ObjectMaskStr => Modality::Gesture,
            _ => Modality::Speech,
        }
    }

    pub fn is_gesture(self) -> bool {
        self.modality() == Modality::Gesture
    }

    /// Slots whose values are inputs to `Query` rather than execution arguments.
    pub fn children(self) -> &'static [Slot] {
        match self {
            Slot::ObjectMaskStr => &[Slot::Object, Slot::GestureClick],
            _ => &[],
        }
    }

    pub fn index(self) -> usize {
        Slot::ALL.iter().position(|s| *s == self).expect("slot listed in ALL")
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Slot {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| OntologyError::UnknownSlot(s.to_string()))
    }
}

/// Direct argument slots of an intent, in the fixed order used everywhere
/// (policy cascade, executed frames, verbalization).
pub fn dependent_slots(intent: Intent) -> &'static [Slot] {
    match intent {
        Intent::Open => &[Slot::ImagePath],
        Intent::Adjust => &[Slot::Attribute, Slot::AdjustValue, Slot::ObjectMaskStr],
        Intent::Close | Intent::Undo | Intent::Redo => &[],
    }
}

/// Argument slots of `intent` that `frame` does not fill.
pub fn missing_arguments(intent: Intent, frame: &SemanticFrame) -> Vec<Slot> {
    dependent_slots(intent).iter().copied().filter(|s| !frame.contains(*s)).collect()
}

/// A value carried by a slot.
#[derive(Debug, Clone, PartialEq)]
pub enum SlotValue {
    Intent(Intent),
    Text(String),
    Int(i32),
    Click(Click),
    Mask(Mask),
}

impl SlotValue {
    pub fn as_intent(&self) -> Option<Intent> {
        match self {
            SlotValue::Intent(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            SlotValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i32> {
        match self {
            SlotValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_click(&self) -> Option<Click> {
        match self {
            SlotValue::Click(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_mask(&self) -> Option<&Mask> {
        match self {
            SlotValue::Mask(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotValue::Intent(i) => write!(f, "{i}"),
            SlotValue::Text(s) => f.write_str(s),
            SlotValue::Int(v) => write!(f, "{v}"),
            SlotValue::Click(c) => write!(f, "({},{})", c.x, c.y),
            SlotValue::Mask(m) => f.write_str(&m.to_base64_png()),
        }
    }
}

/// Partial assignment of slot values exchanged in one turn. The intent is
/// carried under [`Slot::Intent`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticFrame {
    values: BTreeMap<Slot, SlotValue>,
}

impl SemanticFrame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: Slot, value: SlotValue) -> Self {
        self.values.insert(slot, value);
        self
    }

    pub fn with_intent(self, intent: Intent) -> Self {
        self.with(Slot::Intent, SlotValue::Intent(intent))
    }

    pub fn insert(&mut self, slot: Slot, value: SlotValue) -> Option<SlotValue> {
        self.values.insert(slot, value)
    }

    pub fn remove(&mut self, slot: Slot) -> Option<SlotValue> {
        self.values.remove(&slot)
    }

    pub fn get(&self, slot: Slot) -> Option<&SlotValue> {
        self.values.get(&slot)
    }

    pub fn contains(&self, slot: Slot) -> bool {
        self.values.contains_key(&slot)
    }

    pub fn intent(&self) -> Option<Intent> {
        self.get(Slot::Intent).and_then(SlotValue::as_intent)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slot, &SlotValue)> {
        self.values.iter().map(|(s, v)| (*s, v))
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.values.keys().copied()
    }

    /// Merge `other` into `self`; values in `other` win.
    pub fn merge(&mut self, other: SemanticFrame) {
        self.values.extend(other.values);
    }
}

impl fmt::Display for SemanticFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (slot, value) in self.iter() {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            match value {
                // Masks print as the leading characters of their encoding.
                SlotValue::Mask(m) => {
                    let enc = m.to_base64_png();
                    write!(f, "{slot}={}", &enc[..enc.len().min(5)])?
                }
                other => write!(f, "{slot}={other}")?,
            }
        }
        Ok(())
    }
}

/// One system action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "act", content = "arg", rename_all = "snake_case")]
pub enum SystemAction {
    Request(Slot),
    Confirm(Slot),
    Query,
    Execute(Intent),
}

impl fmt::Display for SystemAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemAction::Request(s) => write!(f, "request({s})"),
            SystemAction::Confirm(s) => write!(f, "confirm({s})"),
            SystemAction::Query => f.write_str("query"),
            SystemAction::Execute(i) => write!(f, "execute({i})"),
        }
    }
}

/// The ontology's action list with index lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    actions: Vec<SystemAction>,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<SystemAction> {
        self.actions.get(index).copied()
    }

    pub fn index_of(&self, action: SystemAction) -> Option<usize> {
        self.actions.iter().position(|a| *a == action)
    }

    pub fn as_slice(&self) -> &[SystemAction] {
        &self.actions
    }
}

pub const DEFAULT_ATTRIBUTES: [&str; 3] = ["brightness", "saturation", "contrast"];
pub const DEFAULT_ADJUST_VALUES: [i32; 10] = [-50, -40, -30, -20, -10, 10, 20, 30, 40, 50];

/// Declared intents and the closed value domains. Slots and the dependency
/// tree are fixed; reduced ontologies drop intents or shrink domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    intents: Vec<Intent>,
    attributes: Vec<String>,
    adjust_values: Vec<i32>,
}

impl Default for Ontology {
    fn default() -> Self {
        Self {
            intents: Intent::ALL.to_vec(),
            attributes: DEFAULT_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            adjust_values: DEFAULT_ADJUST_VALUES.to_vec(),
        }
    }
}

impl Ontology {
    pub fn new(intents: Vec<Intent>, attributes: Vec<String>, adjust_values: Vec<i32>) -> Self {
        Self { intents, attributes, adjust_values }
    }

    pub fn intents(&self) -> &[Intent] {
        &self.intents
    }

    pub fn slots(&self) -> &'static [Slot] {
        &Slot::ALL
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn adjust_values(&self) -> &[i32] {
        &self.adjust_values
    }

    pub fn declares(&self, intent: Intent) -> bool {
        self.intents.contains(&intent)
    }

    pub fn without_intent(mut self, intent: Intent) -> Self {
        self.intents.retain(|i| *i != intent);
        self
    }

    pub fn enumerate_actions(&self) -> Vec<SystemAction> {
        let mut actions = Vec::with_capacity(2 * Slot::ALL.len() + 1 + self.intents.len());
        actions.extend(Slot::ALL.iter().map(|s| SystemAction::Request(*s)));
        actions.extend(Slot::ALL.iter().map(|s| SystemAction::Confirm(*s)));
        actions.push(SystemAction::Query);
        actions.extend(self.intents.iter().map(|i| SystemAction::Execute(*i)));
        actions
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace { actions: self.enumerate_actions() }
    }

    /// Check that every value in `frame` lies in its slot's domain.
    pub fn validate_frame(&self, frame: &SemanticFrame) -> Result<(), OntologyError> {
        for (slot, value) in frame.iter() {
            self.validate_value(slot, value)?;
        }
        Ok(())
    }

    pub fn validate_value(&self, slot: Slot, value: &SlotValue) -> Result<(), OntologyError> {
        let ok = match (slot, value) {
            (Slot::Intent, SlotValue::Intent(i)) => self.declares(*i),
            (Slot::Attribute, SlotValue::Text(a)) => self.attributes.iter().any(|x| x == a),
            (Slot::AdjustValue, SlotValue::Int(v)) => self.adjust_values.contains(v),
            (Slot::ImagePath | Slot::Object, SlotValue::Text(_)) => true,
            (Slot::GestureClick, SlotValue::Click(_)) => true,
            (Slot::ObjectMaskStr, SlotValue::Mask(_)) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(OntologyError::ValueOutOfDomain { slot, value: value.to_string() })
        }
    }

    /// Canonical text form; see [`Ontology::from_config_str`].
    pub fn to_config_string(&self) -> String {
        let join = |items: Vec<String>| items.join(", ");
        format!(
            "intents = {}\nattribute = {}\nadjust_value = {}\n",
            join(self.intents.iter().map(|i| i.name().to_string()).collect()),
            join(self.attributes.clone()),
            join(self.adjust_values.iter().map(|v| v.to_string()).collect()),
        )
    }

    /// Parse the `key = v1, v2, ...` config format. Blank lines and lines
    /// starting with `#` are ignored; keys are `intents`, `attribute` and
    /// `adjust_value`, and omitted keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self, OntologyError> {
        let mut ontology = Ontology::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| OntologyError::Config { line: n + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = values`".into()))?;
            let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            match key.trim() {
                "intents" => {
                    ontology.intents = items.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
                }
                "attribute" => ontology.attributes = items.iter().map(|s| s.to_string()).collect(),
                "adjust_value" => {
                    ontology.adjust_values = items
                        .iter()
                        .map(|s| s.parse::<i32>().map_err(|e| err(format!("bad integer `{s}`: {e}"))))
                        .collect::<Result<_, _>>()?;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(ontology)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    /// Short stable fingerprint of the canonical config.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_config_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
