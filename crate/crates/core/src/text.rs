//! Sentence normalization, tokenization and keyword patterns.
//!
//! Every matcher in the crate (intent triggers, topic keywords, the
//! affirmation lexicon) sees text through [`tokenize`]: tokens are maximal
//! runs of alphanumeric characters, apostrophes are dropped inside a token
//! ("don't" -> "dont"), every other character separates tokens, and tokens
//! are lowercased. Each token keeps the byte span it came from so that slot
//! values can be cut out of the original sentence verbatim.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// A normalized token and the byte range it covers in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub norm: String,
    pub span: Range<usize>,
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, usize, String)> = None;
    for (pos, c) in text.char_indices() {
        let end = pos + c.len_utf8();
        if c.is_alphanumeric() {
            let (_, last, norm) = current.get_or_insert_with(|| (pos, end, String::new()));
            norm.extend(c.to_lowercase());
            *last = end;
        } else if is_joiner(c) && current.is_some() {
            // Apostrophes glue the surrounding letters together.
        } else if let Some((start, last, norm)) = current.take() {
            tokens.push(Token {
                norm,
                span: start..last,
            });
        }
    }
    if let Some((start, last, norm)) = current {
        tokens.push(Token {
            norm,
            span: start..last,
        });
    }
    tokens
}

/// Lowercase, strip punctuation and collapse whitespace.
pub fn normalize(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .map(|t| t.norm)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A topic keyword: a lowercase token, optionally ending in `*` to match any
/// (possibly empty) continuation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KeywordPattern {
    stem: String,
    wildcard: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid keyword pattern {0:?}: expected one lowercase token with an optional trailing '*'")]
pub struct KeywordError(pub String);

impl KeywordPattern {
    pub fn parse(raw: &str) -> Result<Self, KeywordError> {
        let (body, wildcard) = match raw.strip_suffix('*') {
            Some(body) => (body, true),
            None => (raw, false),
        };
        let tokens = tokenize(body);
        match tokens.as_slice() {
            [only] if only.norm == body => Ok(Self {
                stem: only.norm.clone(),
                wildcard,
            }),
            _ => Err(KeywordError(raw.to_string())),
        }
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn is_wildcard(&self) -> bool {
        self.wildcard
    }

    /// Whether `token` (already normalized) is matched by this pattern.
    pub fn matches(&self, token: &str) -> bool {
        if self.wildcard {
            token.starts_with(&self.stem)
        } else {
            token == self.stem
        }
    }
}

impl fmt::Display for KeywordPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.stem)?;
        if self.wildcard {
            f.write_str("*")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for KeywordPattern {
    type Error = KeywordError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<KeywordPattern> for String {
    fn from(value: KeywordPattern) -> Self {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_strips_punctuation_and_case() {
        assert_eq!(normalize("  Play the SONG, Hey-Brother!! "), "play the song hey brother");
        assert_eq!(normalize("I don't know"), "i dont know");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("?!"), "");
    }

    #[test]
    fn token_spans_point_into_source() {
        let text = "Play: AC/DC now";
        let toks = tokenize(text);
        let spans: Vec<&str> = toks.iter().map(|t| &text[t.span.clone()]).collect();
        assert_eq!(spans, ["Play", "AC", "DC", "now"]);
    }

    #[test]
    fn wildcard_matches_continuations() {
        let garden = KeywordPattern::parse("garden*").unwrap();
        assert!(garden.matches("gardening"));
        assert!(garden.matches("garden"));
        assert!(!garden.matches("gard"));
        let tea = KeywordPattern::parse("tea").unwrap();
        assert!(tea.matches("tea"));
        assert!(!tea.matches("teapot"));
    }

    #[test]
    fn keyword_must_be_a_single_lowercase_token() {
        assert!(KeywordPattern::parse("Tea").is_err());
        assert!(KeywordPattern::parse("green tea").is_err());
        assert!(KeywordPattern::parse("*").is_err());
        assert!(KeywordPattern::parse("").is_err());
        assert_eq!(KeywordPattern::parse("brew*").unwrap().to_string(), "brew*");
    }
}
