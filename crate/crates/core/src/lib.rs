//! Paraphrase-aligned machine translation toolchain.
//!
//! The pipeline has two phases. The first back-translates the target side of
//! a bitext into the source language with a few-shot prompt, yielding
//! structure-aligned paraphrase pairs `(X, X')`. The second mixes those pairs
//! with ordinary translation pairs into an instruction-tuning dataset for an
//! external LoRA trainer. Inference and evaluation (ROUGE-L, COMET) close the
//! loop.

pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod digest;
pub mod experiment;
pub mod gateway;
pub mod lang;
pub mod metrics;
mod pool;
pub mod prompt;
pub mod synthesis;
pub mod translate;

pub use corpus::{ParallelCorpus, ParallelPair, SplitSpec, SplitStrategy};
pub use lang::{Direction, LangCode};
pub use prompt::{RenderedPrompt, ShotPair, TemplateId};
