use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Language identifier. The five experiment languages are named variants;
/// anything else goes through [`LangCode::Other`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LangCode {
    En,
    Zh,
    De,
    Heb,
    Swh,
    Other(String),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LangError {
    #[error("empty language code")]
    Empty,
    #[error("direction source and target are both {0}")]
    SameLanguage(LangCode),
    #[error("malformed direction {0:?}, expected e.g. \"zh-en\"")]
    MalformedDirection(String),
}

impl LangCode {
    pub fn code(&self) -> &str {
        match self {
            LangCode::En => "en",
            LangCode::Zh => "zh",
            LangCode::De => "de",
            LangCode::Heb => "heb",
            LangCode::Swh => "swh",
            LangCode::Other(c) => c,
        }
    }

    /// Short symbol as used in report headers ("Zh", "Heb").
    pub fn symbol(&self) -> String {
        let code = self.code();
        let mut chars = code.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    }

    /// Natural-language name substituted into prompt templates.
    pub fn display_name(&self) -> &str {
        match self {
            LangCode::En => "English",
            LangCode::Zh => "Chinese",
            LangCode::De => "German",
            LangCode::Heb => "Hebrew",
            LangCode::Swh => "Swahili",
            LangCode::Other(c) => c,
        }
    }

    /// Chinese is scored per character; everything else by words.
    pub fn is_chinese(&self) -> bool {
        matches!(self, LangCode::Zh)
    }
}

impl FromStr for LangCode {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(LangError::Empty);
        }
        Ok(match s.to_ascii_lowercase().as_str() {
            "en" | "eng" | "english" => LangCode::En,
            "zh" | "zho" | "chinese" => LangCode::Zh,
            "de" | "deu" | "german" => LangCode::De,
            "heb" | "he" | "hebrew" => LangCode::Heb,
            "swh" | "sw" | "swahili" => LangCode::Swh,
            _ => LangCode::Other(s.to_string()),
        })
    }
}

impl TryFrom<String> for LangCode {
    type Error = LangError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<LangCode> for String {
    fn from(value: LangCode) -> Self {
        value.code().to_string()
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Ordered translation direction with distinct endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Direction {
    src: LangCode,
    tgt: LangCode,
}

impl Direction {
    pub fn new(src: LangCode, tgt: LangCode) -> Result<Self, LangError> {
        if src == tgt {
            return Err(LangError::SameLanguage(src));
        }
        Ok(Self { src, tgt })
    }

    pub fn src(&self) -> &LangCode {
        &self.src
    }

    pub fn tgt(&self) -> &LangCode {
        &self.tgt
    }

    pub fn reversed(&self) -> Self {
        Self { src: self.tgt.clone(), tgt: self.src.clone() }
    }

    /// Header label, e.g. "Zh ⇒ En".
    pub fn label(&self) -> String {
        format!("{} ⇒ {}", self.src.symbol(), self.tgt.symbol())
    }
}

impl FromStr for Direction {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (src, tgt) = s.split_once(['-', '>', ':']).ok_or_else(|| LangError::MalformedDirection(s.to_string()))?;
        Direction::new(src.trim_end_matches('=').parse()?, tgt.trim_start_matches('>').parse()?)
    }
}

impl TryFrom<String> for Direction {
    type Error = LangError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Direction> for String {
    fn from(value: Direction) -> Self {
        value.to_string()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}
