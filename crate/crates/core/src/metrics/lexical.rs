//! Content-token normalization shared by the dependency check and the
//! lexical baseline judge: lowercase, split on non-alphanumerics, drop stop
//! words, Porter-style stem.

use std::collections::{BTreeSet, HashSet};
use std::sync::LazyLock;

use rust_stemmers::{Algorithm, Stemmer};

static STOP_WORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    include_str!("../../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
});

static STEMMER: LazyLock<Stemmer> = LazyLock::new(|| Stemmer::create(Algorithm::English));

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.contains(word)
}

pub fn content_tokens(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !is_stop_word(w))
        .map(|w| STEMMER.stem(w).into_owned())
        .collect()
}

/// `|A ∩ B| / min(|A|, |B|)`; 0 when either side has no content tokens.
pub fn overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let shorter = a.len().min(b.len());
    if shorter == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / shorter as f64
}

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_words_and_stems() {
        let t = content_tokens("Is there a motorcycle?");
        assert_eq!(t, BTreeSet::from(["motorcycl".to_string()]));
        let t = content_tokens("Are the motorcycles parked?");
        assert!(t.contains("motorcycl"));
        assert!(t.contains("park"));
        assert!(content_tokens("Is it there?").is_empty());
    }

    #[test]
    fn overlap_ratio() {
        let a = content_tokens("blue motorcycle");
        let b = content_tokens("Is the motorcycle blue?");
        assert_eq!(overlap(&a, &b), 1.0);
        let c = content_tokens("a red car");
        assert_eq!(overlap(&a, &c), 0.0);
        assert_eq!(overlap(&a, &BTreeSet::new()), 0.0);
    }
}
