//! Core of the Atelier prompting-proficiency evaluation platform.
//!
//! The crate is organised by subsystem:
//!
//! * [`task`] – benchmark tasks, the challenge-primitive composition grammar
//!   and paired prompt/image checklists.
//! * [`memory`] – agreement-gated exemplar memories and exact top-K retrieval.
//! * [`clients`] – adapters for chat judges/prompters, embedders and
//!   text-to-image backends, plus deterministic mocks.
//! * [`judge`] – the agentic judge: safety gates, skill routing, subjective
//!   and objective skills, and result aggregation.
//! * [`bench`] – the prompting-proficiency protocol (best-of-N runner,
//!   reports and the stability sweep).
//! * [`meta`] – meta-evaluation of the judge against gold annotations.

pub mod bench;
pub mod clients;
pub mod image;
pub mod judge;
pub mod memory;
pub mod meta;
pub mod task;

pub use image::{ImageData, ImageRef, Modality};
pub use task::{Task, TaskCategory};
