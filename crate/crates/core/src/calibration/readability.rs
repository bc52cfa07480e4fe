//! Flesch-Kincaid grade level with a vowel-group syllable heuristic.
//!
//! `grade = 0.39 * (words / sentences) + 11.8 * (syllables / words) - 15.59`,
//! with every item treated as one sentence.

use crate::error::{Error, Result};

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Approximate syllable count: maximal vowel groups (y included), minus one
/// for a terminal silent `e` unless the word ends in consonant + `le`;
/// never below 1. Non-letters are ignored.
pub fn count_syllables(word: &str) -> Result<usize> {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if letters.is_empty() {
        return Err(Error::invalid(format!("`{word}` has no letters")));
    }
    let mut groups: usize = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = letters.len();
    if letters[n - 1] == 'e' {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    Ok(groups.max(1))
}

/// Word and syllable totals for one sentence.
pub fn text_counts(text: &str) -> Result<(usize, usize)> {
    let mut words = 0;
    let mut syllables = 0;
    for token in text.split_whitespace().filter(|t| t.chars().any(char::is_alphabetic)) {
        words += 1;
        syllables += count_syllables(token)?;
    }
    if words == 0 {
        return Err(Error::invalid(format!("no words in `{text}`")));
    }
    Ok((words, syllables))
}

pub fn fk_formula(words: usize, sentences: usize, syllables: usize) -> f64 {
    0.39 * (words as f64 / sentences as f64) + 11.8 * (syllables as f64 / words as f64) - 15.59
}

/// Flesch-Kincaid grade of a single-sentence item.
pub fn flesch_kincaid(text: &str) -> Result<f64> {
    let (words, syllables) = text_counts(text)?;
    Ok(fk_formula(words, 1, syllables))
}
