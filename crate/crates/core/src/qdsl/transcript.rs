//! Line-oriented dialog transcripts: `round<TAB>program<TAB>kind<TAB>value`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::exec::AnswerKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptLine {
    pub round: usize,
    pub program: String,
    pub kind: AnswerKind,
    /// `concept=value` for value answers.
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad transcript line: {0}")]
pub struct TranscriptError(pub String);

impl fmt::Display for TranscriptLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.round,
            self.program,
            self.kind,
            self.value.as_deref().unwrap_or("-")
        )
    }
}

impl FromStr for TranscriptLine {
    type Err = TranscriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('\t').collect();
        let [round, program, kind, value] = parts[..] else {
            return Err(TranscriptError(s.to_string()));
        };
        let round = round.parse().map_err(|_| TranscriptError(s.to_string()))?;
        let kind = AnswerKind::from_token(kind).ok_or_else(|| TranscriptError(s.to_string()))?;
        let value = match (kind, value) {
            (AnswerKind::Value, "-") => return Err(TranscriptError(s.to_string())),
            (AnswerKind::Value, v) => Some(v.to_string()),
            (_, "-") => None,
            _ => return Err(TranscriptError(s.to_string())),
        };
        Ok(Self {
            round,
            program: program.to_string(),
            kind,
            value,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_parse_back() {
        let a = TranscriptLine {
            round: 3,
            program: "query_color(unique(filter_position(left-most, scene)))".into(),
            kind: AnswerKind::Value,
            value: Some("color=red".into()),
        };
        assert_eq!(a.to_string().parse::<TranscriptLine>().unwrap(), a);
        let b = TranscriptLine {
            round: 4,
            program: "query_color(unique(scene))".into(),
            kind: AnswerKind::Ambiguous,
            value: None,
        };
        assert_eq!(b.to_string(), "4\tquery_color(unique(scene))\tambiguous_question\t-");
        assert!("4\tx\tvalue\t-".parse::<TranscriptLine>().is_err());
    }
}
