//! Instruction-tuning records and their scored counterparts.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speaker of a conversation turn. Serialized as the LLaVA `from` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Gpt,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Human => f.write_str("human"),
            Role::Gpt => f.write_str("gpt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "from")]
    pub role: Role,
    pub value: String,
}

impl Turn {
    pub fn human(value: impl Into<String>) -> Self {
        Self { role: Role::Human, value: value.into() }
    }

    pub fn gpt(value: impl Into<String>) -> Self {
        Self { role: Role::Gpt, value: value.into() }
    }
}

/// One pool record. Field order here is the canonical JSONL key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub conversations: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("sample id is empty")]
    EmptyId,
    #[error("sample id {0:?} contains a line break")]
    LineBreakInId(String),
    #[error("sample {0:?} has no conversation turns")]
    EmptyConversations(String),
    #[error("sample {id:?}: turn {turn} should be {expected} but is {found}")]
    TurnOrder { id: String, turn: usize, expected: Role, found: Role },
    #[error("sample {id:?}: turn {turn} has an empty value")]
    EmptyTurn { id: String, turn: usize },
}

impl Sample {
    /// Checks the per-record invariants. Uniqueness of ids is a pool-level
    /// property and is enforced by the reader.
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.id.is_empty() {
            return Err(SampleError::EmptyId);
        }
        if self.id.contains(['\n', '\r']) {
            return Err(SampleError::LineBreakInId(self.id.clone()));
        }
        if self.conversations.is_empty() {
            return Err(SampleError::EmptyConversations(self.id.clone()));
        }
        for (i, turn) in self.conversations.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::Human } else { Role::Gpt };
            if turn.role != expected {
                return Err(SampleError::TurnOrder {
                    id: self.id.clone(),
                    turn: i,
                    expected,
                    found: turn.role,
                });
            }
            if turn.value.is_empty() {
                return Err(SampleError::EmptyTurn { id: self.id.clone(), turn: i });
            }
        }
        Ok(())
    }

    pub fn responses(&self) -> impl Iterator<Item = &Turn> {
        self.conversations.iter().filter(|t| t.role == Role::Gpt)
    }
}

/// Necessity score attached to a sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
    pub num_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoredSampleError {
    #[error("score for {id:?} is not finite ({score})")]
    NonFinite { id: String, score: f64 },
    #[error("score for {0:?} covers zero tokens")]
    NoTokens(String),
}

impl ScoredSample {
    pub fn new(id: impl Into<String>, score: f64, num_tokens: u64) -> Result<Self, ScoredSampleError> {
        let s = Self { id: id.into(), score, num_tokens };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScoredSampleError> {
        if !self.score.is_finite() {
            return Err(ScoredSampleError::NonFinite { id: self.id.clone(), score: self.score });
        }
        if self.num_tokens == 0 {
            return Err(ScoredSampleError::NoTokens(self.id.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(turns: Vec<Turn>) -> Sample {
        Sample { id: "s".into(), image: None, conversations: turns, source: None }
    }

    #[test]
    fn valid_two_turn_sample() {
        sample(vec![Turn::human("q"), Turn::gpt("a")]).validate().unwrap();
    }

    #[test]
    fn rejects_gpt_first() {
        let err = sample(vec![Turn::gpt("a")]).validate().unwrap_err();
        assert!(matches!(err, SampleError::TurnOrder { turn: 0, .. }));
    }

    #[test]
    fn rejects_empty_conversations() {
        assert_eq!(
            sample(vec![]).validate().unwrap_err(),
            SampleError::EmptyConversations("s".into())
        );
    }

    #[test]
    fn rejects_empty_response() {
        let err = sample(vec![Turn::human("q"), Turn::gpt("")]).validate().unwrap_err();
        assert_eq!(err, SampleError::EmptyTurn { id: "s".into(), turn: 1 });
    }

    #[test]
    fn rejects_non_alternating() {
        let err = sample(vec![Turn::human("q"), Turn::human("q2")]).validate().unwrap_err();
        assert!(matches!(err, SampleError::TurnOrder { turn: 1, .. }));
    }

    #[test]
    fn scored_sample_rejects_nan_and_zero_tokens() {
        assert!(ScoredSample::new("a", f64::NAN, 1).is_err());
        assert!(ScoredSample::new("a", f64::INFINITY, 1).is_err());
        assert!(ScoredSample::new("a", 1.0, 0).is_err());
        assert!(ScoredSample::new("a", -3.5, 2).is_ok());
    }

    #[test]
    fn canonical_json_key_order() {
        let s = Sample {
            id: "x".into(),
            image: Some("img.jpg".into()),
            conversations: vec![Turn::human("q"), Turn::gpt("a")],
            source: Some("vqa".into()),
        };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"id":"x","image":"img.jpg","conversations":[{"from":"human","value":"q"},{"from":"gpt","value":"a"}],"source":"vqa"}"#
        );
    }
}
