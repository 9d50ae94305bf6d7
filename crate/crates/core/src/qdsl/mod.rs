//! Question programs: composition from agent actions, text form, and oracle
//! execution.

mod compose;
mod exec;
mod parse;
mod program;
mod transcript;

pub use compose::{
    compose_program, description_order, dominant_relation, is_closest_in_relation, ComposeError,
    ComposedQuestion, QuestionAction,
};
pub use exec::{execute, AnswerKind, ExecError, OracleAnswer};
pub use parse::{parse_program, serialize_program, ParseError};
pub use program::{Extreme, Node, Program, StructureError};
pub use transcript::{TranscriptError, TranscriptLine};
