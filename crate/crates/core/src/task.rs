use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Adapter identity selected per input.
///
/// The base model without any adapter is expressed as `Option::<TaskKind>::None`
/// wherever an adapter is optional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "retrieval.query")]
    RetrievalQuery,
    #[serde(rename = "retrieval.passage")]
    RetrievalPassage,
    #[serde(rename = "separation")]
    Separation,
    #[serde(rename = "classification")]
    Classification,
    #[serde(rename = "text-matching")]
    TextMatching,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::RetrievalQuery,
        TaskKind::RetrievalPassage,
        TaskKind::Separation,
        TaskKind::Classification,
        TaskKind::TextMatching,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::RetrievalQuery => "retrieval.query",
            TaskKind::RetrievalPassage => "retrieval.passage",
            TaskKind::Separation => "separation",
            TaskKind::Classification => "classification",
            TaskKind::TextMatching => "text-matching",
        }
    }

    /// Integer adapter id, stable across checkpoints.
    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap()
    }

    /// Instruction prepended to the raw text when prefixes are enabled.
    pub fn instruction_prefix(self) -> Option<&'static str> {
        match self {
            TaskKind::RetrievalQuery => Some("query: "),
            TaskKind::RetrievalPassage => Some("passage: "),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task `{0}`; expected one of: retrieval.query, retrieval.passage, separation, classification, text-matching")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.as_str().parse::<TaskKind>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
        let err = "retrieval".parse::<TaskKind>().unwrap_err();
        assert!(err.to_string().contains("text-matching"));
    }
}
