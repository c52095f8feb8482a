use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Words with a dedicated embedding row.
pub const DEFAULT_WORDS: &[&str] = &[
    "a", "an", "the", "it", "make", "turn", "into", "to", "of", "and", "with", "look", "like",
    "more", "less", "gold", "golden", "gilded", "grayscale", "greyscale", "gray", "grey",
    "black", "white", "desaturate", "colorless", "red", "green", "blue", "yellow", "purple",
    "orange", "pink", "cyan", "tint", "color", "colour", "lift", "raise", "move", "up", "top",
    "upper", "half", "part", "fade", "out", "left", "right", "side", "transparent", "remove",
];

pub const DEFAULT_BUCKETS: usize = 64;

/// Lowercase, drop punctuation, split on whitespace.
pub fn normalize_instruction(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else if c.is_whitespace() { ' ' } else { '\0' })
        .filter(|&c| c != '\0')
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    /// Rows reserved after the named words for hashed unknown words.
    pub buckets: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            words: DEFAULT_WORDS.iter().map(|w| w.to_string()).collect(),
            buckets: DEFAULT_BUCKETS,
        }
    }
}

impl Vocabulary {
    pub fn rows(&self) -> usize {
        self.words.len() + self.buckets
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::Config("vocabulary needs at least one hash bucket".into()));
        }
        Ok(())
    }

    pub fn row(&self, word: &str) -> usize {
        match self.words.iter().position(|w| w == word) {
            Some(i) => i,
            None => self.words.len() + self.bucket(word),
        }
    }

    pub fn bucket(&self, word: &str) -> usize {
        (fnv1a(word.as_bytes()) % self.buckets as u64) as usize
    }

    /// Embedding rows for an instruction.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let words = normalize_instruction(text);
        if words.is_empty() {
            return Err(Error::Input(format!("instruction {text:?} has no words")));
        }
        Ok(words.iter().map(|w| self.row(w)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_instruction("  Make it RED!  "), ["make", "it", "red"]);
        assert_eq!(normalize_instruction("gold-tint, please"), ["goldtint", "please"]);
        assert!(normalize_instruction("?!").is_empty());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn unknown_words_hash_into_buckets() {
        let v = Vocabulary::default();
        let r = v.row("turquoise");
        assert_eq!(r, v.words.len() + (fnv1a(b"turquoise") % 64) as usize);
        assert_eq!(v.row("red"), v.words.iter().position(|w| w == "red").unwrap());
        assert!(v.encode("...").is_err());
    }
}
