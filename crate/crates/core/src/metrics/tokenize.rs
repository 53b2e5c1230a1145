use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::lang::LangCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    Whitespace,
    CjkChar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub lang: LangCode,
    pub scheme: TokenScheme,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Language-aware tokenization for ROUGE-L.
///
/// Text is NFC-normalized and lowercased. Chinese yields one token per
/// character, with ASCII alphanumeric runs kept whole. Other languages split
/// on whitespace and punctuation; an apostrophe between two word characters
/// stays inside the word ("doesn't"). Punctuation never forms a token.
pub fn tokenize(text: &str, lang: &LangCode) -> TokenSeq {
    let normalized: String = text.nfc().flat_map(char::to_lowercase).collect();
    let chars: Vec<char> = normalized.chars().collect();
    let scheme = if lang.is_chinese() { TokenScheme::CjkChar } else { TokenScheme::Whitespace };
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        match scheme {
            TokenScheme::CjkChar => {
                if c.is_ascii_alphanumeric() {
                    current.push(c);
                } else {
                    flush(&mut current, &mut tokens);
                    if is_word_char(c) {
                        if is_combining_mark(c) {
                            if let Some(last) = tokens.last_mut() {
                                last.push(c);
                                continue;
                            }
                        }
                        tokens.push(c.to_string());
                    }
                }
            }
            TokenScheme::Whitespace => {
                let inner_apostrophe =
                    is_apostrophe(c) && !current.is_empty() && chars.get(i + 1).is_some_and(|&n| is_word_char(n));
                if is_word_char(c) || inner_apostrophe {
                    current.push(c);
                } else {
                    flush(&mut current, &mut tokens);
                }
            }
        }
    }
    flush(&mut current, &mut tokens);
    TokenSeq { tokens, lang: lang.clone(), scheme }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str, lang: LangCode) -> Vec<String> {
        tokenize(text, &lang).tokens
    }

    #[test]
    fn english_words() {
        assert_eq!(toks("the cat sat", LangCode::En), ["the", "cat", "sat"]);
    }

    #[test]
    fn english_punctuation_and_clitics() {
        assert_eq!(
            toks("So that it doesn't happen again.", LangCode::En),
            ["so", "that", "it", "doesn't", "happen", "again"]
        );
        assert_eq!(toks("won\u{2019}t 'quoted'", LangCode::En), ["won\u{2019}t", "quoted"]);
        assert_eq!(toks("a--b, c", LangCode::En), ["a", "b", "c"]);
    }

    #[test]
    fn chinese_characters() {
        let seq = tokenize("他是一般人", &LangCode::Zh);
        assert_eq!(seq.tokens, ["他", "是", "一", "般", "人"]);
        assert_eq!(seq.scheme, TokenScheme::CjkChar);
        assert_eq!(toks("我用GPT4写代码。", LangCode::Zh), ["我", "用", "gpt4", "写", "代", "码"]);
    }

    #[test]
    fn nfc_and_case_folding() {
        // "e" + combining acute composes to "é"
        assert_eq!(toks("Cafe\u{301} CAFÉ", LangCode::De), ["café", "café"]);
    }

    #[test]
    fn hebrew_keeps_marks_in_words() {
        assert_eq!(toks("שָׁלוֹם, עולם", LangCode::Heb).len(), 2);
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("", &LangCode::Swh).is_empty());
        assert!(tokenize(" ... ", &LangCode::Zh).is_empty());
    }
}
