use std::ops::Range;

use super::tokenize::{is_punct, is_reserved, tokenize, tokenize_with_spans, CLS, SEP};
use crate::error::{Error, Result};

/// Where an encoder-input token came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenOrigin {
    /// 0 is the current user utterance, 1 the turn before it, and so on.
    pub turn: usize,
    /// Character range in that turn's raw utterance.
    pub span: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub tokens: Vec<String>,
    /// `None` for reserved tokens.
    pub origins: Vec<Option<TokenOrigin>>,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token positions `[start, end)` joined with single spaces.
    pub fn span_text(&self, span: Range<usize>) -> String {
        self.tokens[span].join(" ")
    }

    /// Number of leading tokens that belong to `[CLS] current [SEP]`.
    pub fn current_len(&self) -> usize {
        self.tokens.iter().position(|t| t == SEP).map_or(self.len(), |p| p + 1)
    }
}

/// `[CLS] current [SEP]` followed by earlier turns, most recent first, each
/// closed by `[SEP]`. `history` is in chronological order. Turns that do not
/// fit in `max_len` are dropped whole, oldest first; turns without tokens are
/// skipped.
pub fn build_encoder_input(current: &str, history: &[&str], max_len: usize) -> Result<EncoderInput> {
    let cur = tokenize_with_spans(current);
    if cur.is_empty() {
        return Err(Error::Invalid("current utterance has no tokens".into()));
    }
    let needed = cur.len() + 2;
    if needed > max_len {
        return Err(Error::Truncation { needed, max_len });
    }
    let mut tokens = vec![CLS.to_string()];
    let mut origins = vec![None];
    let mut push_turn = |turn: usize, toks: Vec<(String, Range<usize>)>, tokens: &mut Vec<String>| {
        for (t, span) in toks {
            tokens.push(t);
            origins.push(Some(TokenOrigin { turn, span }));
        }
        tokens.push(SEP.to_string());
        origins.push(None);
    };
    push_turn(0, cur, &mut tokens);
    for (back, text) in history.iter().rev().enumerate() {
        let toks = tokenize_with_spans(text);
        if toks.is_empty() {
            continue;
        }
        if tokens.len() + toks.len() + 1 > max_len {
            break;
        }
        push_turn(back + 1, toks, &mut tokens);
    }
    Ok(EncoderInput { tokens, origins })
}

fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_punct(t)).collect()
}

/// Most recent token run `[start, end)` whose non-punctuation tokens equal
/// the normalized `value`. Runs start and end on content tokens and never
/// cross a reserved token. Recency ranks the current utterance first, then
/// earlier turns; within one turn the later occurrence wins.
pub fn align_value_span(value: &str, input: &EncoderInput) -> Option<Range<usize>> {
    let want = content_tokens(value);
    if want.is_empty() {
        return None;
    }
    let toks = &input.tokens;
    let mut best: Option<(usize, Range<usize>)> = None;
    for start in 0..toks.len() {
        if toks[start] != want[0] || is_reserved(&toks[start]) {
            continue;
        }
        let mut k = 0;
        let mut pos = start;
        while pos < toks.len() && k < want.len() {
            let t = &toks[pos];
            if is_reserved(t) {
                break;
            }
            if is_punct(t) {
                pos += 1;
                continue;
            }
            if *t != want[k] {
                break;
            }
            k += 1;
            pos += 1;
        }
        if k < want.len() {
            continue;
        }
        let turn = input.origins[start].as_ref().map_or(usize::MAX, |o| o.turn);
        let better = match &best {
            None => true,
            Some((bt, bs)) => turn < *bt || (turn == *bt && start > bs.start),
        };
        if better {
            best = Some((turn, start..pos));
        }
    }
    best.map(|(_, span)| span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_input() {
        let e = build_encoder_input("hi", &[], 10).unwrap();
        assert_eq!(e.tokens, ["[CLS]", "hi", "[SEP]"]);
        assert_eq!(e.current_len(), 3);
    }

    #[test]
    fn history_follows_current_most_recent_first() {
        let e = build_encoder_input("yes please", &["hello", "how can i help"], 20).unwrap();
        assert_eq!(
            e.tokens,
            ["[CLS]", "yes", "please", "[SEP]", "how", "can", "i", "help", "[SEP]", "hello", "[SEP]"]
        );
        assert_eq!(e.origins[4].as_ref().unwrap().turn, 1);
        assert_eq!(e.origins[9].as_ref().unwrap().turn, 2);
    }

    #[test]
    fn oldest_turns_are_dropped() {
        let hist: Vec<String> = (0..10).map(|i| format!("turn number {i} has five")).collect();
        let refs: Vec<&str> = hist.iter().map(String::as_str).collect();
        let e = build_encoder_input("the current turn", &refs, 32).unwrap();
        assert!(e.len() <= 32);
        // 5 for the current group, 6 for each kept previous turn
        assert_eq!(e.len(), 5 + 4 * 6);
        assert_eq!(&e.tokens[1..4], ["the", "current", "turn"]);
        assert_eq!(e.tokens[7], "9");
    }

    #[test]
    fn too_long_current_is_truncation_error() {
        assert!(matches!(
            build_encoder_input("a b c d", &[], 5),
            Err(Error::Truncation { needed: 6, max_len: 5 })
        ));
    }

    #[test]
    fn empty_turns_do_not_produce_adjacent_separators() {
        let e = build_encoder_input("ok", &["", "  ", "fine"], 20).unwrap();
        assert_eq!(e.tokens, ["[CLS]", "ok", "[SEP]", "fine", "[SEP]"]);
    }

    #[test]
    fn alignment_picks_later_occurrence() {
        let e = build_encoder_input("i wanna rent a place in campbell", &[], 30).unwrap();
        assert_eq!(align_value_span("Campbell", &e), Some(7..8));
        let e = build_encoder_input("campbell or maybe campbell", &[], 30).unwrap();
        assert_eq!(align_value_span("campbell", &e), Some(4..5));
        assert_eq!(align_value_span("fremont", &e), None);
    }

    #[test]
    fn alignment_prefers_current_turn_and_skips_punctuation() {
        let e = build_encoder_input("st. louis please", &["going to st louis"], 30).unwrap();
        assert_eq!(align_value_span("St Louis", &e), Some(1..4));
        assert_eq!(e.span_text(1..4), "st . louis");
    }

    #[test]
    fn alignment_does_not_cross_separators() {
        let e = build_encoder_input("new", &["york"], 30).unwrap();
        assert_eq!(align_value_span("new york", &e), None);
    }
}
