//! Word-level text normalization shared by the assistant tokenizer and the
//! text metrics, so that metric scores are independent of any particular
//! vocabulary.
//!
//! The rule: lowercase everything, split on whitespace, and split punctuation
//! off as standalone single-character tokens. Alphanumeric runs stay together
//! (`64x64` is one token). `detokenize(tokenize(s))` reproduces `s` up to
//! lowercasing and canonical single-space separation.

/// Splits `s` into lowercase word and punctuation tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Joins tokens with single spaces (the canonical spacing).
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
