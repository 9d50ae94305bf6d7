//! The oracle: executes a program against a ground-truth scene.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::{Extreme, Node, Program};
use crate::scene::{AttributeSchema, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OracleAnswer {
    Value { concept: usize, value: usize },
    Ambiguous,
    Invalid,
}

impl OracleAnswer {
    pub fn kind(&self) -> AnswerKind {
        match self {
            OracleAnswer::Value { .. } => AnswerKind::Value,
            OracleAnswer::Ambiguous => AnswerKind::Ambiguous,
            OracleAnswer::Invalid => AnswerKind::Invalid,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, OracleAnswer::Value { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Value,
    Ambiguous,
    Invalid,
}

impl AnswerKind {
    pub fn token(&self) -> &'static str {
        match self {
            AnswerKind::Value => "value",
            AnswerKind::Ambiguous => "ambiguous_question",
            AnswerKind::Invalid => "invalid_question",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        [AnswerKind::Value, AnswerKind::Ambiguous, AnswerKind::Invalid]
            .into_iter()
            .find(|k| k.token() == s)
    }
}

impl fmt::Display for AnswerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Errors in the program itself, as opposed to a question the oracle rejects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("unknown concept {0:?}")]
    UnknownConcept(String),
    #[error("unknown value {value:?} for concept {concept:?}")]
    UnknownValue { concept: String, value: String },
    #[error("malformed program: {0}")]
    Malformed(String),
}

/// A `unique` that did not resolve to exactly one object.
enum Halt {
    Answer(OracleAnswer),
    Error(ExecError),
}

impl From<ExecError> for Halt {
    fn from(e: ExecError) -> Self {
        Halt::Error(e)
    }
}

struct Executor<'a> {
    scene: &'a Scene,
    schema: &'a AttributeSchema,
}

impl Executor<'_> {
    fn concept(&self, name: &str) -> Result<usize, ExecError> {
        self.schema
            .concept_index(name)
            .ok_or_else(|| ExecError::UnknownConcept(name.to_string()))
    }

    fn set(&self, node: &Node) -> Result<Vec<usize>, Halt> {
        match node {
            Node::Scene => Ok((0..self.scene.len()).collect()),
            Node::FilterAttr {
                concept,
                value,
                input,
            } => {
                let c = self.concept(concept)?;
                let v = self
                    .schema
                    .value_index(c, value)
                    .ok_or_else(|| ExecError::UnknownValue {
                        concept: concept.clone(),
                        value: value.clone(),
                    })?;
                let mut s = self.set(input)?;
                s.retain(|&o| self.scene.objects[o].attributes[c] == v);
                Ok(s)
            }
            Node::FilterPosition { position, input } => {
                let holder = position.holder(&self.scene.boxes());
                let mut s = self.set(input)?;
                s.retain(|&o| Some(o) == holder);
                Ok(s)
            }
            Node::FilterRelation { .. } => Ok(self.relate(node)?.1),
            Node::FilterExtreme { extreme, input } => {
                let (anchor, s) = self.relate(input)?;
                let a = &self.scene.objects[anchor].location;
                match extreme {
                    Extreme::Closest => Ok(s
                        .into_iter()
                        .min_by(|&x, &y| {
                            let dx = self.scene.objects[x].location.center_distance(a);
                            let dy = self.scene.objects[y].location.center_distance(a);
                            dx.total_cmp(&dy)
                        })
                        .into_iter()
                        .collect()),
                }
            }
            Node::Unique(_) | Node::Query { .. } => {
                Err(ExecError::Malformed("expected an object set".into()).into())
            }
        }
    }

    /// Evaluates a `filter_relation`, returning its anchor and result set.
    fn relate(&self, node: &Node) -> Result<(usize, Vec<usize>), Halt> {
        let Node::FilterRelation {
            relation,
            anchor,
            input,
        } = node
        else {
            return Err(ExecError::Malformed("filter_extreme must wrap filter_relation".into()).into());
        };
        let anchor = self.object(anchor)?;
        let a = self.scene.objects[anchor].location;
        let mut s = self.set(input)?;
        s.retain(|&o| o != anchor && relation.holds(&self.scene.objects[o].location, &a));
        Ok((anchor, s))
    }

    fn object(&self, node: &Node) -> Result<usize, Halt> {
        let Node::Unique(inner) = node else {
            return Err(ExecError::Malformed("expected unique".into()).into());
        };
        let s = self.set(inner)?;
        match s.len() {
            1 => Ok(s[0]),
            0 => Err(Halt::Answer(OracleAnswer::Invalid)),
            _ => Err(Halt::Answer(OracleAnswer::Ambiguous)),
        }
    }
}

/// Runs `program` on the ground-truth scene.
pub fn execute(program: &Program, scene: &Scene, schema: &AttributeSchema) -> Result<OracleAnswer, ExecError> {
    let ex = Executor { scene, schema };
    let Node::Query { concept, input } = program.root() else {
        return Err(ExecError::Malformed("root must be a query".into()));
    };
    let c = ex.concept(concept)?;
    match ex.object(input) {
        Ok(o) => Ok(OracleAnswer::Value {
            concept: c,
            value: scene.objects[o].attributes[c],
        }),
        Err(Halt::Answer(a)) => Ok(a),
        Err(Halt::Error(e)) => Err(e),
    }
}
