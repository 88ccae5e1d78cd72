//! Brute-force reference matcher: every term tried at every position.

#![allow(dead_code)]

fn fold(c: char) -> char {
    let lower: Vec<char> = c.to_lowercase().collect();
    if lower.len() == 1 {
        lower[0]
    } else {
        c
    }
}

/// (start, end, principle_id) for a leftmost-longest, whole-word,
/// case-insensitive scan of `text` against `(term, principle_id)` pairs.
pub fn naive_detect(text: &str, lexicon: &[(String, String)]) -> Vec<(usize, usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let folded: Vec<char> = chars.iter().map(|&c| fold(c)).collect();
    let is_word = |i: usize| chars[i].is_alphanumeric();
    let mut candidates = Vec::new();
    for start in 0..chars.len() {
        for (term, principle) in lexicon {
            let term: Vec<char> = term.chars().map(fold).collect();
            let end = start + term.len();
            if term.is_empty() || end > chars.len() || folded[start..end] != term[..] {
                continue;
            }
            let left_ok = start == 0 || !is_word(start - 1);
            let right_ok = end == chars.len() || !is_word(end);
            if left_ok && right_ok {
                candidates.push((start, end, principle.clone()));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then((b.1 - b.0).cmp(&(a.1 - a.0))));
    let mut out: Vec<(usize, usize, String)> = Vec::new();
    for candidate in candidates {
        if out.last().map_or(true, |last| candidate.0 >= last.1) {
            out.push(candidate);
        }
    }
    out
}

/// The (term, principle) pairs of a catalog.
pub fn catalog_terms(catalog: &feedstack_core::PrincipleCatalog) -> Vec<(String, String)> {
    catalog
        .principles
        .iter()
        .flat_map(|p| p.terms.iter().map(move |t| (t.clone(), p.id.clone())))
        .collect()
}
