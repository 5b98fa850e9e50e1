use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub strip_urls: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            strip_urls: true,
        }
    }
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").expect("valid url regex"))
}

/// A maximal alphanumeric run of the source text and the token it yields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub span: Range<usize>,
    pub token: String,
}

/// Tokens together with their byte spans in `text`.
///
/// Each piece yields exactly one token, so cutting the text at a piece start
/// never changes the tokens on either side of the cut.
pub fn token_pieces(text: &str, config: &TokenizerConfig) -> Vec<Piece> {
    let urls: Vec<Range<usize>> = if config.strip_urls {
        url_regex().find_iter(text).map(|m| m.range()).collect()
    } else {
        Vec::new()
    };
    let mut url_iter = urls.iter().peekable();
    let mut pieces = Vec::new();
    let mut start: Option<usize> = None;

    let flush = |start: &mut Option<usize>, end: usize, pieces: &mut Vec<Piece>| {
        if let Some(s) = start.take() {
            let token = normalize(&text[s..end], config);
            if !token.is_empty() {
                pieces.push(Piece { span: s..end, token });
            }
        }
    };

    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        while url_iter.peek().is_some_and(|r| r.end <= i) {
            url_iter.next();
        }
        if let Some(r) = url_iter.peek() {
            if r.start <= i {
                flush(&mut start, i, &mut pieces);
                let end = r.end;
                while chars.peek().is_some_and(|&(j, _)| j < end) {
                    chars.next();
                }
                continue;
            }
        }
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else {
            flush(&mut start, i, &mut pieces);
        }
    }
    flush(&mut start, text.len(), &mut pieces);
    pieces
}

fn normalize(piece: &str, config: &TokenizerConfig) -> String {
    let folded: String = if config.lowercase {
        piece.nfkc().collect::<String>().to_lowercase().nfkc().collect()
    } else {
        piece.nfkc().collect()
    };
    folded.chars().filter(|c| c.is_alphanumeric()).collect()
}

/// Splits `text` into normalized word tokens: NFKC, lowercase, URLs
/// removed, any non-alphanumeric character acting as a separator.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    token_pieces(text, config).into_iter().map(|p| p.token).collect()
}
