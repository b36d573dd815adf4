use std::collections::HashMap;

use super::EvalError;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_text(s: &str) -> String {
    let stripped: String = s
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 when some normalized gold occurs inside the normalized prediction.
pub fn golden_match(pred: &str, golds: &[&str]) -> Result<f64, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let p = normalize_text(pred);
    Ok(if golds.iter().any(|g| p.contains(&normalize_text(g))) {
        1.0
    } else {
        0.0
    })
}

pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_text(pred);
    let g = normalize_text(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap as f64, pt.len(), gt.len())
}

/// Maximum [`token_f1`] over the golds.
pub fn token_f1_max(pred: &str, golds: &[&str]) -> Result<f64, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::NoReferences);
    }
    Ok(golds.iter().map(|g| token_f1(pred, g)).fold(0.0, f64::max))
}

pub fn exact_match(pred: &str, golds: &[&str]) -> Result<f64, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let p = normalize_text(pred);
    Ok(if golds.iter().any(|g| normalize_text(g) == p) {
        1.0
    } else {
        0.0
    })
}

/// Fraction of positions where the normalized prediction equals the
/// normalized gold.
pub fn accuracy(preds: &[&str], golds: &[&str]) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: preds.len(),
            references: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| normalize_text(p) == normalize_text(g))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

fn f_measure(overlap: f64, pred_len: usize, ref_len: usize) -> f64 {
    if overlap == 0.0 || pred_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = overlap / pred_len as f64;
    let r = overlap / ref_len as f64;
    2.0 * p * r / (p + r)
}

fn rouge_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn lcs_table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Vec<u32>> {
    let mut t = vec![vec![0u32; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    lcs_table(a, b)[a.len()][b.len()] as usize
}

/// Indices into `a` of one longest common subsequence with `b`.
fn lcs_indices<T: PartialEq>(a: &[T], b: &[T]) -> Vec<usize> {
    let t = lcs_table(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i - 1][j] >= t[i][j - 1] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// ROUGE-L F1 over lowercased whitespace tokens, maximized over references.
pub fn rouge_l(pred: &str, refs: &[&str]) -> Result<f64, EvalError> {
    if refs.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let p = rouge_tokens(pred);
    Ok(refs
        .iter()
        .map(|r| {
            let r = rouge_tokens(r);
            f_measure(lcs_len(&p, &r) as f64, p.len(), r.len())
        })
        .fold(0.0, f64::max))
}

/// Summary-level ROUGE-L: texts are split into sentences on newlines and
/// each reference sentence contributes its union LCS against all prediction
/// sentences.
pub fn rouge_lsum(pred: &str, refs: &[&str]) -> Result<f64, EvalError> {
    if refs.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let sentences = |s: &str| -> Vec<Vec<String>> {
        s.lines()
            .map(rouge_tokens)
            .filter(|t| !t.is_empty())
            .collect()
    };
    let pred_sents = sentences(pred);
    let pred_len: usize = pred_sents.iter().map(Vec::len).sum();
    Ok(refs
        .iter()
        .map(|r| {
            let ref_sents = sentences(r);
            let ref_len: usize = ref_sents.iter().map(Vec::len).sum();
            let hits: usize = ref_sents.iter().map(|rs| union_lcs(rs, &pred_sents)).sum();
            f_measure(hits as f64, pred_len, ref_len)
        })
        .fold(0.0, f64::max))
}

fn union_lcs(reference: &[String], candidates: &[Vec<String>]) -> usize {
    let mut hit = vec![false; reference.len()];
    for c in candidates {
        for i in lcs_indices(reference, c) {
            hit[i] = true;
        }
    }
    hit.into_iter().filter(|h| *h).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("The Quick, Fox!"), "quick fox");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("a an the"), "");
        assert_eq!(normalize_text("  Theory   of\tA-list "), "theory of alist");
    }

    #[test]
    fn golden() {
        assert_eq!(
            golden_match("Tomas Alfredson", &["Tomas Alfredson"]).unwrap(),
            1.0
        );
        assert_eq!(golden_match("", &["x"]).unwrap(), 0.0);
        assert_eq!(
            golden_match("the TOMAS alfredson.", &["Tomas Alfredson"]).unwrap(),
            1.0
        );
        assert!(golden_match("x", &[]).is_err());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(token_f1("same words", "same words"), 1.0);
        assert_eq!(token_f1("one two", "three four"), 0.0);
        assert!((token_f1("quick brown fox", "quick fox jumps") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("", "x"), 0.0);
        assert!((token_f1("x x y", "x z") - 0.4).abs() < 1e-12);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&["a x", "y"], &["x", "y"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["x", "y"], &["x", "z"]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            accuracy(&["x"], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rouge_cases() {
        assert_eq!(rouge_l("x y z", &["x y z"]).unwrap(), 1.0);
        assert_eq!(rouge_l("x y", &["z w"]).unwrap(), 0.0);
        assert!((rouge_l("a b c d", &["a c d e"]).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l("x y", &["q", "x y"]).unwrap(), 1.0);
        assert!(rouge_l("x", &[]).is_err());
    }

    #[test]
    fn lsum_cases() {
        assert_eq!(rouge_lsum("x y\nz w", &["x y\nz w"]).unwrap(), 1.0);
        // reference sentence "x w" matches x in line 1 and w in line 2
        let s = rouge_lsum("x y\nz w", &["x w"]).unwrap();
        let (p, r) = (2.0 / 4.0, 2.0 / 2.0);
        assert!((s - 2.0 * p * r / (p + r)).abs() < 1e-12);
        // single-line texts agree with plain ROUGE-L
        assert!((rouge_lsum("a b c d", &["a c d e"]).unwrap() - 0.75).abs() < 1e-12);
    }
}
