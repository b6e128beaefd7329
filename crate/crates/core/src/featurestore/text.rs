/// Case-folds a word and strips leading/trailing punctuation.
///
/// Interior apostrophes and hyphens are kept ("don't", "x-ray").
pub fn normalize_word(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}
