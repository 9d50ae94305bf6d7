use std::fmt;

use thiserror::Error;

use crate::scene::{Position, Relation};

/// Refinement applied to the objects standing in a relation to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extreme {
    /// The member nearest the anchor by center distance.
    Closest,
}

impl Extreme {
    pub fn token(&self) -> &'static str {
        match self {
            Extreme::Closest => "closest",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        (s == "closest").then_some(Extreme::Closest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Scene,
    FilterAttr {
        concept: String,
        value: String,
        input: Box<Node>,
    },
    FilterPosition {
        position: Position,
        input: Box<Node>,
    },
    FilterRelation {
        relation: Relation,
        anchor: Box<Node>,
        input: Box<Node>,
    },
    FilterExtreme {
        extreme: Extreme,
        input: Box<Node>,
    },
    Unique(Box<Node>),
    Query {
        concept: String,
        input: Box<Node>,
    },
}

impl Node {
    pub fn filter_attr(concept: &str, value: &str, input: Node) -> Node {
        Node::FilterAttr {
            concept: concept.to_string(),
            value: value.to_string(),
            input: Box::new(input),
        }
    }

    pub fn unique(input: Node) -> Node {
        Node::Unique(Box::new(input))
    }

    pub fn size(&self) -> usize {
        match self {
            Node::Scene => 1,
            Node::FilterAttr { input, .. }
            | Node::FilterPosition { input, .. }
            | Node::FilterExtreme { input, .. }
            | Node::Unique(input)
            | Node::Query { input, .. } => 1 + input.size(),
            Node::FilterRelation { anchor, input, .. } => 1 + anchor.size() + input.size(),
        }
    }

    fn count_relations(&self) -> usize {
        match self {
            Node::Scene => 0,
            Node::FilterAttr { input, .. }
            | Node::FilterPosition { input, .. }
            | Node::FilterExtreme { input, .. }
            | Node::Unique(input)
            | Node::Query { input, .. } => input.count_relations(),
            Node::FilterRelation { anchor, input, .. } => {
                1 + anchor.count_relations() + input.count_relations()
            }
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Scene => f.write_str("scene"),
            Node::FilterAttr {
                concept,
                value,
                input,
            } => write!(f, "filter_{concept}({value}, {input})"),
            Node::FilterPosition { position, input } => {
                write!(f, "filter_position({position}, {input})")
            }
            Node::FilterRelation {
                relation,
                anchor,
                input,
            } => write!(f, "filter_relation({relation}, {anchor}, {input})"),
            Node::FilterExtreme { extreme, input } => {
                write!(f, "filter_extreme({}, {input})", extreme.token())
            }
            Node::Unique(input) => write!(f, "unique({input})"),
            Node::Query { concept, input } => write!(f, "query_{concept}({input})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed program: {0}")]
pub struct StructureError(pub String);

/// A single attribute question: `query_<concept>(unique(...))` with at most
/// one relation hop.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    root: Node,
}

impl Program {
    pub fn new(root: Node) -> Result<Self, StructureError> {
        let p = Self { root };
        p.validate()?;
        Ok(p)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn queried_concept(&self) -> &str {
        match &self.root {
            Node::Query { concept, .. } => concept,
            _ => unreachable!("validated"),
        }
    }

    pub fn is_one_hop(&self) -> bool {
        self.root.count_relations() == 1
    }

    pub fn validate(&self) -> Result<(), StructureError> {
        let Node::Query { input, .. } = &self.root else {
            return Err(StructureError("root must be a query".into()));
        };
        let Node::Unique(body) = input.as_ref() else {
            return Err(StructureError("query must wrap a unique".into()));
        };
        if self.root.count_relations() > 1 {
            return Err(StructureError("at most one relation hop is allowed".into()));
        }
        check_set(body)
    }

    pub fn serialize(&self) -> String {
        self.root.to_string()
    }
}

/// Every node below the target's `unique` must denote a set of objects.
fn check_set(node: &Node) -> Result<(), StructureError> {
    match node {
        Node::Scene => Ok(()),
        Node::FilterAttr { input, .. } | Node::FilterPosition { input, .. } => check_set(input),
        Node::FilterRelation { anchor, input, .. } => {
            match anchor.as_ref() {
                Node::Unique(inner) => check_set(inner)?,
                _ => return Err(StructureError("relation anchor must be a unique".into())),
            }
            check_set(input)
        }
        Node::FilterExtreme { input, .. } => match input.as_ref() {
            Node::FilterRelation { .. } => check_set(input),
            _ => Err(StructureError("filter_extreme must wrap filter_relation".into())),
        },
        Node::Unique(_) => Err(StructureError("unique used where a set is expected".into())),
        Node::Query { .. } => Err(StructureError("query used where a set is expected".into())),
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
