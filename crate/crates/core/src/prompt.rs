//! Class prompts and the token positions of the class name inside them.
//!
//! The tokenizer here is a word-level stand-in for the text encoder's BPE:
//! lower-cased words and punctuation, wrapped in start/end markers, padded to
//! a fixed context length. Recorded runs carry the real encoder's indices.

use crate::error::{Error, Result};
use crate::types::TokenIndexSet;

/// Text-encoder context length (number of keys in cross-attention).
pub const CONTEXT_LEN: usize = 77;
pub const START_TOKEN: &str = "<|startoftext|>";
pub const END_TOKEN: &str = "<|endoftext|>";

pub fn class_prompt(class_name: &str) -> String {
    format!("A photo of {class_name}")
}

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Tokens of `prompt`, start and end markers included (no padding).
pub fn tokenize(prompt: &str) -> Vec<String> {
    let mut tokens = vec![START_TOKEN.to_string()];
    tokens.extend(words(prompt));
    tokens.push(END_TOKEN.to_string());
    tokens
}

/// Positions of every occurrence of the class name's token run inside the
/// tokenized prompt.
pub fn class_token_indices(prompt: &str, class_name: &str) -> Result<TokenIndexSet> {
    let tokens = tokenize(prompt);
    if tokens.len() > CONTEXT_LEN {
        return Err(Error::invalid(format!(
            "prompt has {} tokens, context holds {CONTEXT_LEN}",
            tokens.len()
        )));
    }
    let needle = words(class_name);
    if needle.is_empty() {
        return Err(Error::invalid("empty class name"));
    }
    let mut indices = Vec::new();
    for start in 0..tokens.len().saturating_sub(needle.len() - 1) {
        if tokens[start..start + needle.len()] == needle[..] {
            indices.extend(start..start + needle.len());
        }
    }
    if indices.is_empty() {
        return Err(Error::invalid(format!(
            "class {class_name:?} does not occur in prompt {prompt:?}"
        )));
    }
    Ok(TokenIndexSet::new(indices))
}
