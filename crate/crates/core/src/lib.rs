//! Unsupervised reference resolution for instructional videos.
//!
//! Each video is a transcript of actions (predicate plus argument
//! entities, each with a caption time-stamp) and a sequence of frame
//! features. The resolver infers an action graph: which earlier action's
//! outcome every entity refers to, and which frames each action occupies.
//! Inference alternates hard assignments (local search over references,
//! exact dynamic-programming alignment) with refitting a linguistic model
//! and a visual embedding of action subgraphs.

pub mod codec;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod linguistic;
pub mod math;
pub mod optimizer;
pub mod simulator;
pub mod transcript;
pub mod visual;

pub use error::{Error, Result};
