//! Conversational image editing: ontology, image engine, ground-truth vision,
//! belief tracking, user simulation, dialogue policies and the experiment harness.

pub mod engine;
pub mod ontology;
pub mod vision;
pub mod nlu;
pub mod tracker;
pub mod simulator;
pub mod policy;
pub mod harness;
pub mod session;
