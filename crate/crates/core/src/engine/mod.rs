//! Image edit engine: masked attribute adjustments with snapshot history.

mod codec;
mod raster;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{missing_arguments, Intent, SemanticFrame, Slot};

pub use raster::{apply_adjust, Attribute, Mask, Raster, Rgb, DEFAULT_HEIGHT, DEFAULT_WIDTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("expected {}x{} pixels, found {found}", expected.0, expected.1)]
    Dimensions { expected: (usize, usize), found: usize },
    #[error("mask is {}x{} but image is {}x{}", mask.0, mask.1, image.0, image.1)]
    MaskMismatch { image: (usize, usize), mask: (usize, usize) },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("codec: {0}")]
    Codec(String),
    #[error("no image is open")]
    NotOpen,
}

/// Why an `execute` call was refused. The engine is untouched in every case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum ExecFailure {
    MissingArgument(Slot),
    NoHistory,
    NoRedo,
    NotOpen,
    UnknownAttribute(String),
    UnknownImage(String),
    MaskMismatch,
}

impl ExecFailure {
    /// True for failures caused by engine state rather than an incomplete frame.
    pub fn is_state_failure(&self) -> bool {
        !matches!(self, ExecFailure::MissingArgument(_))
    }
}

impl fmt::Display for ExecFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecFailure::MissingArgument(s) => write!(f, "missing_argument({s})"),
            ExecFailure::NoHistory => f.write_str("no_history"),
            ExecFailure::NoRedo => f.write_str("no_redo"),
            ExecFailure::NotOpen => f.write_str("not_open"),
            ExecFailure::UnknownAttribute(a) => write!(f, "unknown_attribute({a})"),
            ExecFailure::UnknownImage(p) => write!(f, "unknown_image({p})"),
            ExecFailure::MaskMismatch => f.write_str("mask_mismatch"),
        }
    }
}

pub type ExecResult = Result<(), ExecFailure>;

/// Binary engine features exposed to the policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineState {
    pub image_loaded: bool,
    pub has_previous_history: bool,
    pub has_next_history: bool,
    pub candidates_loaded: bool,
    pub session_closed: bool,
}

impl EngineState {
    pub const NAMES: [&'static str; 5] =
        ["image_loaded", "has_previous_history", "has_next_history", "candidates_loaded", "session_closed"];

    pub fn as_array(&self) -> [bool; 5] {
        [
            self.image_loaded,
            self.has_previous_history,
            self.has_next_history,
            self.candidates_loaded,
            self.session_closed,
        ]
    }
}

/// Resolves `image_path` values to images.
pub trait ImageSource: Send + Sync {
    fn load_image(&self, image_path: &str) -> Option<Raster>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub frame: SemanticFrame,
    pub before: Raster,
}

/// Executed edits with an undo cursor; entries at or above the cursor are redoable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EditHistory {
    entries: Vec<HistoryEntry>,
    cursor: usize,
}

impl EditHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    fn push(&mut self, entry: HistoryEntry) {
        self.entries.truncate(self.cursor);
        self.entries.push(entry);
        self.cursor = self.entries.len();
    }
}

#[derive(Debug, Clone, Copy)]
struct Edit {
    attribute: Attribute,
    value: i32,
}

#[derive(Clone)]
pub struct ImageEngine {
    source: Arc<dyn ImageSource>,
    image_path: Option<String>,
    image: Option<Raster>,
    history: EditHistory,
    candidates: Vec<Mask>,
    closed: bool,
}

impl fmt::Debug for ImageEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageEngine")
            .field("image_path", &self.image_path)
            .field("history", &self.history.len())
            .field("cursor", &self.history.cursor)
            .field("candidates", &self.candidates.len())
            .field("closed", &self.closed)
            .finish()
    }
}

impl ImageEngine {
    pub fn new(source: Arc<dyn ImageSource>) -> Self {
        Self { source, image_path: None, image: None, history: EditHistory::default(), candidates: Vec::new(), closed: false }
    }

    pub fn image(&self) -> Option<&Raster> {
        self.image.as_ref()
    }

    pub fn image_path(&self) -> Option<&str> {
        self.image_path.as_deref()
    }

    pub fn history(&self) -> &EditHistory {
        &self.history
    }

    pub fn candidates(&self) -> &[Mask] {
        &self.candidates
    }

    pub fn is_open(&self) -> bool {
        self.image.is_some() && !self.closed
    }

    pub fn engine_features(&self) -> EngineState {
        EngineState {
            image_loaded: self.image.is_some(),
            has_previous_history: self.history.cursor > 0,
            has_next_history: self.history.cursor < self.history.len(),
            candidates_loaded: !self.candidates.is_empty(),
            session_closed: self.closed,
        }
    }

    /// Hash over image, history layout and flags; used to prove failed
    /// executes leave the engine untouched.
    pub fn checksum(&self) -> u64 {
        let mut h = self.image.as_ref().map_or(0, Raster::checksum);
        for entry in &self.history.entries {
            h = h.rotate_left(7) ^ entry.before.checksum();
        }
        let flags = self.engine_features().as_array();
        h ^ ((self.history.cursor as u64) << 40)
            ^ ((self.history.len() as u64) << 48)
            ^ flags.iter().enumerate().fold(0u64, |acc, (i, f)| acc | (u64::from(*f) << i))
    }

    /// Replace the displayed candidates. An empty list clears them.
    pub fn load_candidates(&mut self, masks: Vec<Mask>) -> Result<(), EngineError> {
        if !self.is_open() {
            return Err(EngineError::NotOpen);
        }
        self.candidates = masks;
        Ok(())
    }

    pub fn clear_candidates(&mut self) {
        self.candidates.clear();
    }

    pub fn execute(&mut self, frame: &SemanticFrame) -> ExecResult {
        let intent = frame.intent().ok_or(ExecFailure::MissingArgument(Slot::Intent))?;
        if let Some(slot) = missing_arguments(intent, frame).first() {
            return Err(ExecFailure::MissingArgument(*slot));
        }
        match intent {
            Intent::Open => {
                let path = frame
                    .get(Slot::ImagePath)
                    .and_then(|v| v.as_text())
                    .ok_or(ExecFailure::MissingArgument(Slot::ImagePath))?;
                let image = self.source.load_image(path).ok_or_else(|| ExecFailure::UnknownImage(path.to_string()))?;
                self.image = Some(image);
                self.image_path = Some(path.to_string());
                self.history = EditHistory::default();
                self.candidates.clear();
                self.closed = false;
            }
            Intent::Adjust => {
                let edit = parse_edit(frame)?;
                let mask = frame
                    .get(Slot::ObjectMaskStr)
                    .and_then(|v| v.as_mask())
                    .ok_or(ExecFailure::MissingArgument(Slot::ObjectMaskStr))?;
                let image = self.open_image()?;
                let next = apply_adjust(image, mask, edit.attribute, edit.value).map_err(|_| ExecFailure::MaskMismatch)?;
                let before = std::mem::replace(self.image.as_mut().expect("open"), next);
                self.history.push(HistoryEntry { frame: frame.clone(), before });
            }
            Intent::Undo => {
                self.open_image()?;
                if self.history.cursor == 0 {
                    return Err(ExecFailure::NoHistory);
                }
                self.history.cursor -= 1;
                let entry = &self.history.entries[self.history.cursor];
                self.image = Some(entry.before.clone());
            }
            Intent::Redo => {
                let image = self.open_image()?;
                if self.history.cursor >= self.history.len() {
                    return Err(ExecFailure::NoRedo);
                }
                let entry = &self.history.entries[self.history.cursor];
                let edit = parse_edit(&entry.frame)?;
                let mask = entry.frame.get(Slot::ObjectMaskStr).and_then(|v| v.as_mask()).expect("recorded mask");
                let next = apply_adjust(image, mask, edit.attribute, edit.value).map_err(|_| ExecFailure::MaskMismatch)?;
                self.image = Some(next);
                self.history.cursor += 1;
            }
            Intent::Close => {
                self.open_image()?;
                self.closed = true;
                self.candidates.clear();
            }
        }
        Ok(())
    }

    fn open_image(&self) -> Result<&Raster, ExecFailure> {
        match &self.image {
            Some(img) if !self.closed => Ok(img),
            _ => Err(ExecFailure::NotOpen),
        }
    }
}

fn parse_edit(frame: &SemanticFrame) -> Result<Edit, ExecFailure> {
    let attribute = frame
        .get(Slot::Attribute)
        .and_then(|v| v.as_text())
        .ok_or(ExecFailure::MissingArgument(Slot::Attribute))?;
    let attribute = attribute.parse().map_err(|_| ExecFailure::UnknownAttribute(attribute.to_string()))?;
    let value = frame
        .get(Slot::AdjustValue)
        .and_then(|v| v.as_int())
        .ok_or(ExecFailure::MissingArgument(Slot::AdjustValue))?;
    Ok(Edit { attribute, value })
}
