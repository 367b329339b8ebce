//! Synthesis of combined transmission and distribution network models.

pub mod caseio;
pub mod cli;
pub mod netmodel;
pub mod oltc;
pub mod opf;
pub mod powerflow;
pub mod sparse;
pub mod synth;
