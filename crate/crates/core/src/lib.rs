//! A desk-scale laboratory for learning visual recognition by asking
//! questions.
//!
//! An agent keeps a probabilistic scene-graph memory, asks templated
//! questions that compile to functional programs, receives answers from an
//! oracle that executes those programs on the ground-truth scene, trains a
//! simulated visual system on what it learned, and learns the question
//! policy itself with advantage actor-critic.

pub mod harness;
pub mod memory;
pub mod nnet;
pub mod policy;
pub mod qdsl;
pub mod scene;
pub mod seeding;
pub mod trainer;
pub mod vision;

pub use memory::{GraphMemory, Provenance, VisualGraph};
pub use qdsl::{compose_program, execute, parse_program, OracleAnswer, Program, QuestionAction};
pub use scene::{AttributeSchema, Dataset, Scene, SceneGenConfig};
