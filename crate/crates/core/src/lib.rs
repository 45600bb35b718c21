//! Two-stage tool calling with contrastive self-verification.
//!
//! The pipeline splits a tool call into selection (pick one tool out of a
//! candidate list) and parameterization (fill in the chosen tool's
//! parameters). Each stage double-checks itself: selection re-asks the model
//! a generated contrastive question about its top two choices, and
//! parameterization reconciles two independent predictions per parameter
//! through a multiple-choice prompt.
//!
//! The crate also generates the synthetic training corpus for the selection
//! stage ([`datagen`]) and scores predicted calls against gold calls by
//! canonical equivalence ([`eval`]).

pub mod backend;
pub mod datagen;
pub mod eval;
pub mod paramgen;
pub mod prompts;
pub mod registry;
pub mod selector;
pub mod similarity;

pub use backend::{
    BackendError, BackendRouter, GenerationRequest, GenerationResponse, HttpBackend,
    SamplingParams, ScriptedBackend, StageTag, TextBackend, Transcript,
};
