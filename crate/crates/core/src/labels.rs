use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Three-way human sentiment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    pub fn index(self) -> usize {
        match self {
            SentimentLabel::Negative => 0,
            SentimentLabel::Neutral => 1,
            SentimentLabel::Positive => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "Negative",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Positive => "Positive",
        }
    }

    /// Neg/Pos projection used by the binary pseudo-label protocol.
    pub fn binary(self) -> Option<PseudoClass> {
        match self {
            SentimentLabel::Negative => Some(PseudoClass::Neg),
            SentimentLabel::Neutral => None,
            SentimentLabel::Positive => Some(PseudoClass::Pos),
        }
    }

    pub fn class_names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.as_str().to_string()).collect()
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "Negative" => Ok(SentimentLabel::Negative),
            "Neutral" => Ok(SentimentLabel::Neutral),
            "Positive" => Ok(SentimentLabel::Positive),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Binary pseudo-label class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PseudoClass {
    Neg,
    Pos,
}

impl PseudoClass {
    pub const ALL: [PseudoClass; 2] = [PseudoClass::Neg, PseudoClass::Pos];

    pub fn index(self) -> usize {
        match self {
            PseudoClass::Neg => 0,
            PseudoClass::Pos => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PseudoClass::Neg => "Neg",
            PseudoClass::Pos => "Pos",
        }
    }

    pub fn class_names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.as_str().to_string()).collect()
    }
}

impl fmt::Display for PseudoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PseudoClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "Neg" => Ok(PseudoClass::Neg),
            "Pos" => Ok(PseudoClass::Pos),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}
