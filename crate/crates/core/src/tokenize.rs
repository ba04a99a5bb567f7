//! The single tokenizer shared by templates, the generator and the parser.

use alloc::string::String;
use alloc::vec::Vec;

const TERMINAL_PUNCT: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Lowercases, splits on whitespace and detaches trailing punctuation marks
/// into tokens of their own: `"Yes, I'm here."` becomes
/// `["yes", ",", "i'm", "here", "."]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let lower = word.to_lowercase();
        let core = lower.trim_end_matches(TERMINAL_PUNCT);
        if !core.is_empty() {
            out.push(String::from(core));
        }
        for c in lower[core.len()..].chars() {
            out.push(String::from(c));
        }
    }
    out
}

/// Lowercases and collapses runs of whitespace into a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, word) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn splits_terminal_punctuation() {
        assert_eq!(
            tokenize("Yes, I'm looking for a moderately priced restaurant."),
            vec!["yes", ",", "i'm", "looking", "for", "a", "moderately", "priced", "restaurant", "."]
        );
        assert_eq!(tokenize("What is the address and phone number?"), vec![
            "what", "is", "the", "address", "and", "phone", "number", "?"
        ]);
    }

    #[test]
    fn bare_punctuation_and_blank_input() {
        assert_eq!(tokenize("  ?! "), vec!["?", "!"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize("  The   Address\tof it "), "the address of it");
    }
}
