use std::ops::Range;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

pub fn is_reserved(tok: &str) -> bool {
    matches!(tok, PAD | UNK | CLS | SEP)
}

pub fn is_punct(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric())
}

/// Lowercased tokens with the character range (in `char` indices) each one
/// came from. Alphanumeric runs form tokens; every other non-space character
/// is a token of its own.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (i, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if cur.is_empty() {
                start = i;
            }
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push((std::mem::take(&mut cur), start..i));
        }
        if !ch.is_whitespace() {
            out.push((ch.to_lowercase().collect(), i..i + 1));
        }
    }
    if !cur.is_empty() {
        let end = text.chars().count();
        out.push((cur, start..end));
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|(t, _)| t).collect()
}

/// Canonical form of a free-text value: lowercase tokens without
/// punctuation, joined by single spaces.
pub fn normalize_value(text: &str) -> String {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_punct(t))
        .collect::<Vec<_>>()
        .join(" ")
}
