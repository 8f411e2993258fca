//! Token-sequence similarities used by the later search stages.

/// Levenshtein distance with unit costs, two-row DP.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (j, &lb) in long.iter().enumerate() {
        cur[0] = j + 1;
        for (i, &sa) in short.iter().enumerate() {
            let sub = prev[i] + usize::from(sa != lb);
            cur[i + 1] = sub.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// `1 − ED / max(len)`; two empty sequences are identical.
pub fn edit_similarity(a: &[u32], b: &[u32]) -> f64 {
    let m = a.len().max(b.len());
    if m == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / m as f64
}

/// Sorted unique tokens.
pub fn token_set(tokens: &[u32]) -> Vec<u32> {
    let mut s = tokens.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

/// Jaccard similarity of two sorted unique sets; both empty → 1.
pub fn jaccard_sets(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard similarity of the token sets of two sequences.
pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    jaccard_sets(&token_set(a), &token_set(b))
}
