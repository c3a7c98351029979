//! Text normalization shared by the DOM cleaner, the tokenizer and the metrics.

use std::ops::Range;

/// Collapses whitespace runs to a single space and trims both ends.
pub fn normalize_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Splits text into lowercase word tokens.
///
/// Alphanumeric runs form words; every other non-whitespace character is
/// emitted as its own single-character token.
pub fn split_words(s: &str) -> Vec<String> {
    word_spans(s)
        .into_iter()
        .map(|r| s[r].chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// Byte ranges of the tokens produced by [`split_words`], in order.
pub fn word_spans(s: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(b) = start.take() {
            out.push(b..i);
        }
        if !ch.is_whitespace() {
            out.push(i..i + ch.len_utf8());
        }
    }
    if let Some(b) = start {
        out.push(b..s.len());
    }
    out
}

/// Keeps at most `max_words` tokens' worth of `s`, cutting at the end of the
/// last retained token.
pub fn truncate_words(s: &str, max_words: usize) -> &str {
    let mut count = 0;
    let mut in_word = false;
    for (i, ch) in s.char_indices() {
        if ch.is_alphanumeric() {
            if !in_word {
                if count == max_words {
                    return s[..i].trim_end();
                }
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !ch.is_whitespace() {
                if count == max_words {
                    return s[..i].trim_end();
                }
                count += 1;
            }
        }
    }
    s
}
