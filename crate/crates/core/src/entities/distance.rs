use std::collections::HashSet;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (j, lc) in long.iter().enumerate() {
        cur[0] = j + 1;
        for (i, sc) in short.iter().enumerate() {
            let substitution = prev[i] + usize::from(sc != lc);
            cur[i + 1] = substitution.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Edit distance divided by the longer length; `0` for two empty strings.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / longest as f64
}

fn is_initial(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
}

/// `initial` is `X.` and `word` is a longer name starting with `X`.
fn abbreviates(initial: &str, word: &str) -> bool {
    is_initial(initial) && !is_initial(word) && word.chars().count() > 1 && word.chars().next() == initial.chars().next()
}

/// Smallest normalized distance between two full (non-initial) tokens.
fn closest_tokens(ta: &[&str], tb: &[&str]) -> Option<f64> {
    ta.iter()
        .filter(|x| !is_initial(x))
        .flat_map(|x| tb.iter().filter(|y| !is_initial(y)).map(move |y| normalized_levenshtein(x, y)))
        .min_by(f64::total_cmp)
}

/// Alias distance between two name surfaces.
///
/// The minimum of the full-string normalized Levenshtein distance and the
/// closest pair of full tokens across the two names. The token branch only
/// applies when one name's tokens are a subset of the other's, or when a
/// token of one is an initial (`H.`) of a token of the other.
pub fn name_distance(a: &str, b: &str) -> f64 {
    let full = normalized_levenshtein(a, b);
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() || tb.is_empty() {
        return full;
    }
    let sa: HashSet<&str> = ta.iter().copied().collect();
    let sb: HashSet<&str> = tb.iter().copied().collect();
    let subset = sa.is_subset(&sb) || sb.is_subset(&sa);
    let abbreviation = ta.iter().any(|x| tb.iter().any(|y| abbreviates(x, y) || abbreviates(y, x)));
    if subset || abbreviation {
        closest_tokens(&ta, &tb).map_or(full, |t| full.min(t))
    } else {
        full
    }
}
