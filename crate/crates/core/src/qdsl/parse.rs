//! Recursive-descent parser for the call-syntax program text.

use thiserror::Error;

use super::program::{Extreme, Node, Program, StructureError};
use crate::scene::{Position, Relation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected end of input at byte {pos}")]
    UnexpectedEof { pos: usize },
    #[error("unexpected {found:?} at byte {pos}, expected {expected}")]
    Unexpected {
        pos: usize,
        found: String,
        expected: &'static str,
    },
    #[error("unknown function {name:?} at byte {pos}")]
    UnknownFunction { pos: usize, name: String },
    #[error("{name} takes {expected} argument(s), got {found} at byte {pos}")]
    Arity {
        pos: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("bad argument {arg:?} to {name} at byte {pos}")]
    BadArgument { pos: usize, name: String, arg: String },
    #[error(transparent)]
    Structure(#[from] StructureError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    Open,
    Close,
    Comma,
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-'
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok<'_>)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            b',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            _ if is_ident_byte(b) => {
                let start = i;
                while i < bytes.len() && is_ident_byte(bytes[i]) {
                    i += 1;
                }
                out.push((start, Tok::Ident(&src[start..i])));
            }
            _ => {
                let found = src[i..].chars().next().unwrap_or('?').to_string();
                return Err(ParseError::Unexpected {
                    pos: i,
                    found,
                    expected: "identifier or punctuation",
                });
            }
        }
    }
    Ok(out)
}

/// One call argument: either a bare word or a nested expression.
enum Arg<'a> {
    Word(usize, &'a str),
    Expr(usize, Node),
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    at: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(usize, Tok<'a>)> {
        self.toks.get(self.at)
    }

    fn pos(&self) -> usize {
        self.peek().map(|t| t.0).unwrap_or(self.end)
    }

    fn next(&mut self) -> Result<(usize, Tok<'a>), ParseError> {
        let t = self
            .toks
            .get(self.at)
            .cloned()
            .ok_or(ParseError::UnexpectedEof { pos: self.end })?;
        self.at += 1;
        Ok(t)
    }

    /// `ident` or `ident '(' arg (',' arg)* ')'`.
    fn arg(&mut self) -> Result<Arg<'a>, ParseError> {
        let (pos, tok) = self.next()?;
        let Tok::Ident(name) = tok else {
            return Err(ParseError::Unexpected {
                pos,
                found: describe(&tok),
                expected: "identifier",
            });
        };
        if !matches!(self.peek(), Some((_, Tok::Open))) {
            return Ok(Arg::Word(pos, name));
        }
        self.next()?;
        let mut args = vec![self.arg()?];
        loop {
            let (p, t) = self.next()?;
            match t {
                Tok::Comma => args.push(self.arg()?),
                Tok::Close => break,
                other => {
                    return Err(ParseError::Unexpected {
                        pos: p,
                        found: describe(&other),
                        expected: "',' or ')'",
                    })
                }
            }
        }
        Ok(Arg::Expr(pos, build(pos, name, args)?))
    }
}

fn describe(tok: &Tok<'_>) -> String {
    match tok {
        Tok::Ident(s) => s.to_string(),
        Tok::Open => "(".into(),
        Tok::Close => ")".into(),
        Tok::Comma => ",".into(),
    }
}

fn expr(name: &str, arg: Arg<'_>) -> Result<Node, ParseError> {
    match arg {
        Arg::Expr(_, n) => Ok(n),
        Arg::Word(_, "scene") => Ok(Node::Scene),
        Arg::Word(pos, w) => Err(ParseError::BadArgument {
            pos,
            name: name.to_string(),
            arg: w.to_string(),
        }),
    }
}

fn word<'a>(name: &str, arg: Arg<'a>) -> Result<(usize, &'a str), ParseError> {
    match arg {
        Arg::Word(pos, w) => Ok((pos, w)),
        Arg::Expr(pos, n) => Err(ParseError::BadArgument {
            pos,
            name: name.to_string(),
            arg: n.to_string(),
        }),
    }
}

fn build(pos: usize, name: &str, args: Vec<Arg<'_>>) -> Result<Node, ParseError> {
    let arity = |expected: usize| -> Result<(), ParseError> {
        if args.len() == expected {
            Ok(())
        } else {
            Err(ParseError::Arity {
                pos,
                name: name.to_string(),
                expected,
                found: args.len(),
            })
        }
    };
    let bad = |p: usize, w: &str| ParseError::BadArgument {
        pos: p,
        name: name.to_string(),
        arg: w.to_string(),
    };
    match name {
        "unique" => {
            arity(1)?;
            let a = args.into_iter().next().unwrap();
            Ok(Node::Unique(Box::new(expr(name, a)?)))
        }
        "filter_position" => {
            arity(2)?;
            let mut a = args.into_iter();
            let (p, w) = word(name, a.next().unwrap())?;
            let position = Position::from_token(w).ok_or_else(|| bad(p, w))?;
            let input = Box::new(expr(name, a.next().unwrap())?);
            Ok(Node::FilterPosition { position, input })
        }
        "filter_relation" => {
            arity(3)?;
            let mut a = args.into_iter();
            let (p, w) = word(name, a.next().unwrap())?;
            let relation = Relation::from_token(w).ok_or_else(|| bad(p, w))?;
            let anchor = Box::new(expr(name, a.next().unwrap())?);
            let input = Box::new(expr(name, a.next().unwrap())?);
            Ok(Node::FilterRelation {
                relation,
                anchor,
                input,
            })
        }
        "filter_extreme" => {
            arity(2)?;
            let mut a = args.into_iter();
            let (p, w) = word(name, a.next().unwrap())?;
            let extreme = Extreme::from_token(w).ok_or_else(|| bad(p, w))?;
            let input = Box::new(expr(name, a.next().unwrap())?);
            Ok(Node::FilterExtreme { extreme, input })
        }
        _ => {
            if let Some(concept) = name.strip_prefix("query_").filter(|c| !c.is_empty()) {
                arity(1)?;
                let a = args.into_iter().next().unwrap();
                Ok(Node::Query {
                    concept: concept.to_string(),
                    input: Box::new(expr(name, a)?),
                })
            } else if let Some(concept) = name.strip_prefix("filter_").filter(|c| !c.is_empty()) {
                arity(2)?;
                let mut a = args.into_iter();
                let (_, value) = word(name, a.next().unwrap())?;
                let input = Box::new(expr(name, a.next().unwrap())?);
                Ok(Node::FilterAttr {
                    concept: concept.to_string(),
                    value: value.to_string(),
                    input,
                })
            } else {
                Err(ParseError::UnknownFunction {
                    pos,
                    name: name.to_string(),
                })
            }
        }
    }
}

/// Parses program text such as `query_color(unique(filter_material(metal, scene)))`.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        at: 0,
        end: text.len(),
    };
    let root = match p.arg()? {
        Arg::Expr(_, n) => n,
        Arg::Word(pos, w) => {
            return Err(ParseError::UnknownFunction {
                pos,
                name: w.to_string(),
            })
        }
    };
    if p.peek().is_some() {
        let pos = p.pos();
        let (_, tok) = p.next()?;
        return Err(ParseError::Unexpected {
            pos,
            found: describe(&tok),
            expected: "end of input",
        });
    }
    Ok(Program::new(root)?)
}

pub fn serialize_program(p: &Program) -> String {
    p.serialize()
}
