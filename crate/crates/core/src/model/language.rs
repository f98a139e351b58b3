use super::dataset::Dataset;

/// Language identification hook. `None` means the detector could not decide,
/// in which case the instance is kept.
pub trait LanguageDetector {
    fn detect(&self, tokens: &[String]) -> Option<String>;
}

impl<F> LanguageDetector for F
where
    F: Fn(&[String]) -> Option<String>,
{
    fn detect(&self, tokens: &[String]) -> Option<String> {
        self(tokens)
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her",
    "here", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "me", "more", "most", "my",
    "no", "not", "now", "of", "on", "one", "or", "other", "our", "out", "over", "said", "she", "so",
    "some", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "to", "up", "was", "we", "were", "what", "when", "where", "which", "while", "who", "will", "with",
    "would", "you", "your",
];

/// Default detector: ASCII-letter ratio plus English stopword density.
///
/// A sentence is tagged `en` when at least `min_ascii_ratio` of its word
/// tokens are spelled with ASCII letters only, and it contains at least one
/// stopword per `tokens_per_stopword` word tokens (rounded down).
#[derive(Debug, Clone)]
pub struct HeuristicDetector {
    pub min_ascii_ratio: f64,
    pub tokens_per_stopword: usize,
}

impl Default for HeuristicDetector {
    fn default() -> Self {
        HeuristicDetector {
            min_ascii_ratio: 0.8,
            tokens_per_stopword: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicScores {
    pub word_tokens: usize,
    pub ascii_ratio: f64,
    pub stopword_hits: usize,
}

impl HeuristicDetector {
    pub fn scores(&self, tokens: &[String]) -> HeuristicScores {
        let words: Vec<&String> = tokens
            .iter()
            .filter(|t| t.chars().any(char::is_alphabetic))
            .collect();
        let ascii = words
            .iter()
            .filter(|t| t.chars().filter(|c| c.is_alphabetic()).all(|c| c.is_ascii_alphabetic()))
            .count();
        let stopword_hits = words
            .iter()
            .filter(|t| STOPWORDS.contains(&t.to_ascii_lowercase().as_str()))
            .count();
        HeuristicScores {
            word_tokens: words.len(),
            ascii_ratio: if words.is_empty() {
                0.0
            } else {
                ascii as f64 / words.len() as f64
            },
            stopword_hits,
        }
    }
}

impl LanguageDetector for HeuristicDetector {
    fn detect(&self, tokens: &[String]) -> Option<String> {
        let s = self.scores(tokens);
        if s.word_tokens == 0 {
            return None;
        }
        let needed = s.word_tokens / self.tokens_per_stopword.max(1);
        let english = s.ascii_ratio >= self.min_ascii_ratio && s.stopword_hits >= needed;
        Some(if english { "en" } else { "und" }.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageReport {
    pub kept: usize,
    pub excluded: usize,
    pub undecided: usize,
}

pub const NON_ENGLISH: &str = "non_english";

/// Moves instances whose detected language is not English into the
/// exclusion list with reason `non_english`.
pub fn language_filter(d: Dataset, detector: &dyn LanguageDetector) -> (Dataset, LanguageReport) {
    let mut undecided = 0;
    let (ds, excluded) = d.exclude_where(
        |inst| match detector.detect(&inst.tokens) {
            Some(tag) => tag != "en",
            None => {
                undecided += 1;
                false
            }
        },
        NON_ENGLISH,
    );
    let report = LanguageReport {
        kept: ds.len(),
        excluded,
        undecided,
    };
    (ds, report)
}
