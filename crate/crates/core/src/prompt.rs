//! The three prompt templates and their byte-exact renderer.
//!
//! * P1: few-shot translation, used for back-translation during pair
//!   synthesis and for the few-shot inference baseline.
//! * P2: zero-shot translation instruction.
//! * P3: source-language rewrite towards target-language structure.
//!
//! Template bodies live in `templates/p{1,2,3}.txt`. Slots are `{SRC}`,
//! `{TGT}`, `{SHOTS}` and `{INPUT}`; substitution is single-pass, so text
//! inside bound values is never re-expanded.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::digest::{sha256_hex, FieldHasher};

const P1_BODY: &str = include_str!("../templates/p1.txt");
const P2_BODY: &str = include_str!("../templates/p2.txt");
const P3_BODY: &str = include_str!("../templates/p3.txt");

/// Bumped whenever a template asset changes.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("P1 needs at least one few-shot example")]
    ShotsRequired,
    #[error("{0} does not take few-shot examples")]
    ShotsForbidden(TemplateId),
    #[error("input sentence is empty")]
    EmptyInput,
    #[error("few-shot example {0} has an empty side")]
    EmptyShot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    P1,
    P2,
    P3,
}

impl TemplateId {
    pub const ALL: [TemplateId; 3] = [TemplateId::P1, TemplateId::P2, TemplateId::P3];

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::P1 => P1_BODY,
            TemplateId::P2 => P2_BODY,
            TemplateId::P3 => P3_BODY,
        }
    }

    fn segments(self) -> &'static [Segment] {
        static PARSED: OnceLock<[Vec<Segment>; 3]> = OnceLock::new();
        let parsed = PARSED.get_or_init(|| TemplateId::ALL.map(|id| parse_body(id.body())));
        &parsed[self as usize]
    }

    /// Recognises which template produced a rendered prompt.
    pub fn detect(text: &str) -> Option<TemplateId> {
        let (first, rest) = text.split_once("\n\n")?;
        if first.starts_with("Convert the following ") {
            Some(TemplateId::P3)
        } else if first.starts_with("Please translate the following sentence from ") {
            if rest.starts_with("Here is some examples:\n") && text.ends_with(':') {
                Some(TemplateId::P1)
            } else {
                Some(TemplateId::P2)
            }
        } else {
            None
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(TemplateId::P1),
            "P2" => Ok(TemplateId::P2),
            "P3" => Ok(TemplateId::P3),
            _ => Err(format!("unknown template {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Src,
    Tgt,
    Shots,
    Input,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(&'static str),
    Slot(Slot),
}

fn parse_body(body: &'static str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Segment::Text(&rest[..open]));
        }
        let close = rest[open..].find('}').expect("unterminated slot in template asset") + open;
        let slot = match &rest[open + 1..close] {
            "SRC" => Slot::Src,
            "TGT" => Slot::Tgt,
            "SHOTS" => Slot::Shots,
            "INPUT" => Slot::Input,
            other => panic!("unknown slot {{{other}}} in template asset"),
        };
        out.push(Segment::Slot(slot));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    out
}

/// One few-shot example, source side first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShotPair {
    pub src_text: String,
    pub tgt_text: String,
}

impl ShotPair {
    pub fn new(src_text: impl Into<String>, tgt_text: impl Into<String>) -> Self {
        Self { src_text: src_text.into(), tgt_text: tgt_text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub text: String,
    pub binding_digest: String,
    /// Target-language display name, needed to locate the answer cue in P1
    /// completions.
    pub tgt_name: String,
}

impl RenderedPrompt {
    /// Digest of the rendered text alone.
    pub fn text_digest(&self) -> String {
        sha256_hex(&self.text)
    }
}

fn binding_digest(id: TemplateId, src_name: &str, tgt_name: &str, shots: &[ShotPair], input: &str) -> String {
    let mut h = FieldHasher::new();
    h.field(format!("{id}/v{TEMPLATE_VERSION}")).field(src_name).field(tgt_name);
    h.field((shots.len() as u64).to_le_bytes());
    for s in shots {
        h.field(&s.src_text).field(&s.tgt_text);
    }
    h.field(input);
    h.finish()
}

/// Renders a template. `src_name`/`tgt_name` are display names such as
/// "Chinese", not ISO codes.
pub fn render(
    id: TemplateId,
    src_name: &str,
    tgt_name: &str,
    shots: &[ShotPair],
    input_sentence: &str,
) -> Result<RenderedPrompt, PromptError> {
    match id {
        TemplateId::P1 if shots.is_empty() => return Err(PromptError::ShotsRequired),
        TemplateId::P2 | TemplateId::P3 if !shots.is_empty() => return Err(PromptError::ShotsForbidden(id)),
        _ => {}
    }
    if input_sentence.trim().is_empty() {
        return Err(PromptError::EmptyInput);
    }
    if let Some(i) = shots.iter().position(|s| s.src_text.trim().is_empty() || s.tgt_text.trim().is_empty()) {
        return Err(PromptError::EmptyShot(i));
    }

    let mut text = String::with_capacity(256);
    for seg in id.segments() {
        match seg {
            Segment::Text(t) => text.push_str(t),
            Segment::Slot(Slot::Src) => text.push_str(src_name),
            Segment::Slot(Slot::Tgt) => text.push_str(tgt_name),
            Segment::Slot(Slot::Input) => text.push_str(input_sentence),
            Segment::Slot(Slot::Shots) => {
                for s in shots {
                    text.push_str(&format!("###{src_name}: {}\n###{tgt_name}: {}\n", s.src_text, s.tgt_text));
                }
            }
        }
    }
    Ok(RenderedPrompt {
        template_id: id,
        binding_digest: binding_digest(id, src_name, tgt_name, shots, input_sentence),
        text,
        tgt_name: tgt_name.to_string(),
    })
}

/// Stable digest of the rendered text for regression pinning.
pub fn golden_digest(
    id: TemplateId,
    src_name: &str,
    tgt_name: &str,
    shots: &[ShotPair],
    input_sentence: &str,
) -> Result<String, PromptError> {
    render(id, src_name, tgt_name, shots, input_sentence).map(|p| p.text_digest())
}

/// The instruction line of P2 or P3 (first line of the rendering), as used in
/// instruction-tuning records.
pub fn instruction_line(id: TemplateId, src_name: &str, tgt_name: &str) -> String {
    let mut line = String::new();
    for seg in id.segments() {
        match seg {
            Segment::Text(t) => match t.find('\n') {
                Some(end) => {
                    line.push_str(&t[..end]);
                    return line;
                }
                None => line.push_str(t),
            },
            Segment::Slot(Slot::Src) => line.push_str(src_name),
            Segment::Slot(Slot::Tgt) => line.push_str(tgt_name),
            Segment::Slot(_) => break,
        }
    }
    line
}

/// Recovers the input sentence from a rendered prompt.
pub fn input_sentence(text: &str) -> Option<&str> {
    match TemplateId::detect(text)? {
        TemplateId::P2 | TemplateId::P3 => text.split_once("\n\n").map(|(_, rest)| rest),
        TemplateId::P1 => {
            let body = &text[..text.rfind('\n')?];
            let last = &body[body.rfind('\n')? + 1..];
            last.strip_prefix("###")?.split_once(": ").map(|(_, input)| input)
        }
    }
}
