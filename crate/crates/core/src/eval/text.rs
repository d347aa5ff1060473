//! BLEU-4 and ROUGE-1 over code tokens.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0} has no tokens")]
pub struct EmptyText(pub &'static str);

/// Identifier/number runs (`[A-Za-z0-9_]+`) and single punctuation
/// characters; whitespace separates. Case is kept.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let word = ch.is_ascii_alphanumeric() || ch == '_';
        if word {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !ch.is_whitespace() {
            out.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU-4 on a 0..100 scale: uniform weights over 1- to 4-gram
/// clipped precisions, brevity penalty `exp(1 - r/c)` when the candidate
/// is shorter. With no unigram match the score is 0; otherwise an order
/// with zero matches uses `(0 + 1) / (total + 1)`.
pub fn bleu4(candidate: &str, reference: &str) -> Result<f64, EmptyText> {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() {
        return Err(EmptyText("candidate"));
    }
    if refr.is_empty() {
        return Err(EmptyText("reference"));
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c = ngram_counts(&cand, n);
        let r = ngram_counts(&refr, n);
        let total: usize = c.values().sum();
        let matched: usize = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(100.0 * bp * log_sum.exp())
}

/// ROUGE-1 F1 on a 0..100 scale.
pub fn rouge1(candidate: &str, reference: &str) -> Result<f64, EmptyText> {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() {
        return Err(EmptyText("candidate"));
    }
    if refr.is_empty() {
        return Err(EmptyText("reference"));
    }
    let c = ngram_counts(&cand, 1);
    let r = ngram_counts(&refr, 1);
    let overlap: usize = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / cand.len() as f64;
    let rc = overlap as f64 / refr.len() as f64;
    Ok(100.0 * 2.0 * p * rc / (p + rc))
}

pub fn text_similarity(candidate: &str, reference: &str) -> Result<(f64, f64), EmptyText> {
    Ok((bleu4(candidate, reference)?, rouge1(candidate, reference)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("a[i]+=x_1;"), ["a", "[", "i", "]", "+", "=", "x_1", ";"]);
        assert_eq!(tokenize("  Foo  foo\n"), ["Foo", "foo"]);
        assert!(tokenize(" \n\t").is_empty());
    }

    #[test]
    fn identity_and_disjoint() {
        let s = "for (int i = 0; i < n; i++) s += a[i];";
        assert_eq!(text_similarity(s, s).unwrap(), (100.0, 100.0));
        assert_eq!(text_similarity("x", "x").unwrap(), (100.0, 100.0));
        assert_eq!(text_similarity("a b c d", "e f g h").unwrap(), (0.0, 0.0));
    }

    #[test]
    fn short_candidate_is_smoothed() {
        // 3 tokens, no 4-grams at all: smoothing keeps the score informative.
        let v = bleu4("a b c", "a b c d").unwrap();
        assert!(v > 0.0 && v < 100.0, "{v}");
    }

    #[test]
    fn empty_input() {
        assert_eq!(bleu4("", "a"), Err(EmptyText("candidate")));
        assert_eq!(rouge1("a", "  "), Err(EmptyText("reference")));
    }

    #[test]
    fn rouge_counts_clipped_overlap() {
        // cand: a a b (3), ref: a b b c (4); overlap = min(2,1) + min(1,2) = 2
        let v = rouge1("a a b", "a b b c").unwrap();
        let (p, r) = (2.0 / 3.0, 2.0 / 4.0);
        assert!((v - 100.0 * 2.0 * p * r / (p + r)).abs() < 1e-9);
    }
}
