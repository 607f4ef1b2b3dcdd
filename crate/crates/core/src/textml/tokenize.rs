use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Tokens are maximal runs of letters and digits at least two characters
/// long. A `«...»` run is kept whole as a single token so that placeholders
/// can be stop-listed without touching ordinary words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    #[serde(default)]
    pub stop_list: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            stop_list: BTreeSet::new(),
        }
    }
}

impl TokenizerConfig {
    pub fn with_stop_words<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop_list.extend(words.into_iter().map(Into::into));
        self
    }
}

fn pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"«[^»\s]+»|[\p{L}\p{N}]+").unwrap())
}

pub fn tokenize(config: &TokenizerConfig, text: &str) -> Vec<String> {
    pattern()
        .find_iter(text)
        .map(|m| m.as_str())
        .filter(|t| t.starts_with('«') || t.chars().count() >= 2)
        .map(|t| if config.lowercase { t.to_lowercase() } else { t.to_string() })
        .filter(|t| !config.stop_list.contains(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let cfg = TokenizerConfig::default().with_stop_words(["a"]);
        assert_eq!(tokenize(&cfg, "Donald is a man."), ["donald", "is", "man"]);
        assert!(tokenize(&cfg, "").is_empty());
        assert_eq!(tokenize(&TokenizerConfig::default(), "AB ab"), ["ab", "ab"]);
        let raw = TokenizerConfig { lowercase: false, ..Default::default() };
        assert_eq!(tokenize(&raw, "AB ab x"), ["AB", "ab"]);
    }

    #[test]
    fn placeholder_is_one_token() {
        let cfg = TokenizerConfig::default();
        assert_eq!(tokenize(&cfg, "«NAME» said a name"), ["«name»", "said", "name"]);
        let cfg = cfg.with_stop_words(["«name»"]);
        assert_eq!(tokenize(&cfg, "«NAME» said a name"), ["said", "name"]);
    }

    #[test]
    fn non_ascii_letters_and_digits() {
        let cfg = TokenizerConfig::default();
        assert_eq!(tokenize(&cfg, "Café 2019 x_y"), ["café", "2019"]);
    }
}
