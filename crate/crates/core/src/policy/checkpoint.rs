//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "IMGDQN\0\0"
//! format version   u32      (currently 1)
//! layout version   u32      belief-vector layout the network was trained on
//! include_turn     u8       1 if the optional turn feature is appended
//! ontology hash    u32 length + UTF-8 bytes
//! training SER     f64
//! seed             u64
//! dialogues        u64      training dialogues run
//! input hidden actions      3 × u32
//! params           (hidden·input + hidden + actions·hidden + actions) × f64,
//!                  ordered W1 (row-major) | b1 | W2 (row-major) | b2
//! has_adam         u8
//! [adam]           step u64, lr beta1 beta2 eps 4 × f64, m and v (params × f64 each)
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::dqn::AdamState;
use super::qnet::QNetwork;
use crate::ontology::Ontology;
use crate::tracker::LAYOUT_VERSION;

const MAGIC: &[u8; 8] = b"IMGDQN\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    FormatVersion(u32),
    #[error("checkpoint uses belief layout v{found}, this build expects v{expected}")]
    LayoutVersion { found: u32, expected: u32 },
    #[error("checkpoint was trained for ontology {found}, current ontology is {expected}")]
    OntologyMismatch { found: String, expected: String },
    #[error("checkpoint input size {found} does not match belief vector length {expected}")]
    InputSize { found: usize, expected: usize },
    #[error("truncated or malformed checkpoint")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub ontology_hash: String,
    pub layout_version: u32,
    pub include_turn: bool,
    pub ser: f64,
    pub seed: u64,
    pub dialogues: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: QNetwork,
    pub adam: Option<AdamState>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.meta.layout_version.to_le_bytes());
        out.push(u8::from(self.meta.include_turn));
        out.extend_from_slice(&(self.meta.ontology_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.ontology_hash.as_bytes());
        out.extend_from_slice(&self.meta.ser.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&self.meta.dialogues.to_le_bytes());
        let net = &self.network;
        for d in [net.input(), net.hidden(), net.actions()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_floats(&mut out, net.params());
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                put_floats(&mut out, &[a.lr, a.beta1, a.beta2, a.eps]);
                put_floats(&mut out, &a.m);
                put_floats(&mut out, &a.v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::FormatVersion(version));
        }
        let layout_version = r.u32()?;
        let include_turn = r.take(1)?[0] != 0;
        let hash_len = r.u32()? as usize;
        let ontology_hash = String::from_utf8(r.take(hash_len)?.to_vec()).map_err(|_| CheckpointError::Truncated)?;
        let ser = r.f64()?;
        let seed = r.u64()?;
        let dialogues = r.u64()?;
        let (input, hidden, actions) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let count = QNetwork::param_count(input, hidden, actions);
        let network = QNetwork::from_params(input, hidden, actions, r.floats(count)?).ok_or(CheckpointError::Truncated)?;
        let adam = match r.take(1)?[0] {
            0 => None,
            _ => {
                let step = r.u64()?;
                let h = r.floats(4)?;
                Some(AdamState { lr: h[0], beta1: h[1], beta2: h[2], eps: h[3], step, m: r.floats(count)?, v: r.floats(count)? })
            }
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(Self { network, adam, meta: CheckpointMeta { ontology_hash, layout_version, include_turn, ser, seed, dialogues } })
    }

    /// Reject checkpoints trained for a different ontology or belief layout.
    pub fn check_compatible(&self, ontology: &Ontology, input_len: usize) -> Result<(), CheckpointError> {
        if self.meta.layout_version != LAYOUT_VERSION {
            return Err(CheckpointError::LayoutVersion { found: self.meta.layout_version, expected: LAYOUT_VERSION });
        }
        let expected = ontology.fingerprint();
        if self.meta.ontology_hash != expected {
            return Err(CheckpointError::OntologyMismatch { found: self.meta.ontology_hash.clone(), expected });
        }
        if self.network.input() != input_len {
            return Err(CheckpointError::InputSize { found: self.network.input(), expected: input_len });
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

/// Read a checkpoint and verify it against `ontology`.
pub fn load_checkpoint(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Checkpoint, CheckpointError> {
    let ckpt = Checkpoint::from_bytes(&fs::read(path)?)?;
    let layout = crate::tracker::VectorLayout { include_turn: ckpt.meta.include_turn, ..Default::default() };
    ckpt.check_compatible(ontology, layout.len(ontology))?;
    Ok(ckpt)
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        (0..n).map(|_| self.f64()).collect()
    }
}
