//! Suffix-stripping stemmer in the Porter style.
//!
//! The rule pass follows the classic five-step layout (plural and participle
//! suffixes, y→i, derivational suffix tables, final-e and double-l cleanup),
//! each rule gated on the stem's consonant-vowel measure. A single rule pass
//! can produce a word that a fresh pass would shrink further, so [`stem`]
//! iterates the pass to a fixpoint; preprocessing output re-preprocesses to
//! itself.

/// Stems one lowercase token. Non-ASCII tokens and tokens shorter than three
/// characters pass through unchanged.
pub fn stem(token: &str) -> String {
    if !token.is_ascii() {
        return token.to_string();
    }
    let mut word = token.as_bytes().to_vec();
    for _ in 0..8 {
        let next = pass(&word);
        if next == word {
            break;
        }
        word = next;
    }
    String::from_utf8(word).expect("ascii in, ascii out")
}

fn pass(word: &[u8]) -> Vec<u8> {
    if word.len() < 3 {
        return word.to_vec();
    }
    let w = step1a(word.to_vec());
    let w = step1b(w);
    let w = step1c(w);
    let w = step_table(w, STEP2, 0);
    let w = step_table(w, STEP3, 0);
    let w = step4(w);
    let w = step5a(w);
    step5b(w)
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel→consonant transitions: the `m` of `[C](VC)^m[V]`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    for i in 1..w.len() {
        if is_consonant(w, i) && !is_consonant(w, i - 1) {
            m += 1;
        }
    }
    m
}

fn contains_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// Consonant-vowel-consonant ending where the final consonant is not w, x, y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn ends_with(w: &[u8], suffix: &str) -> bool {
    w.len() >= suffix.len() && &w[w.len() - suffix.len()..] == suffix.as_bytes()
}

fn replaced(w: &[u8], suffix: &str, replacement: &str) -> Vec<u8> {
    let mut out = w[..w.len() - suffix.len()].to_vec();
    out.extend_from_slice(replacement.as_bytes());
    out
}

fn step1a(w: Vec<u8>) -> Vec<u8> {
    if ends_with(&w, "sses") {
        replaced(&w, "sses", "ss")
    } else if ends_with(&w, "ies") {
        replaced(&w, "ies", "i")
    } else if ends_with(&w, "ss") {
        w
    } else if ends_with(&w, "s") {
        replaced(&w, "s", "")
    } else {
        w
    }
}

fn step1b(w: Vec<u8>) -> Vec<u8> {
    if ends_with(&w, "eed") {
        if measure(&w[..w.len() - 3]) > 0 {
            return replaced(&w, "eed", "ee");
        }
        return w;
    }
    let stripped = if ends_with(&w, "ed") && contains_vowel(&w[..w.len() - 2]) {
        replaced(&w, "ed", "")
    } else if ends_with(&w, "ing") && contains_vowel(&w[..w.len() - 3]) {
        replaced(&w, "ing", "")
    } else {
        return w;
    };
    // cleanup pass: restore an "e" or undo doubling introduced by inflection
    if ends_with(&stripped, "at") || ends_with(&stripped, "bl") || ends_with(&stripped, "iz") {
        let mut out = stripped;
        out.push(b'e');
        out
    } else if ends_double_consonant(&stripped)
        && !matches!(stripped[stripped.len() - 1], b'l' | b's' | b'z')
    {
        stripped[..stripped.len() - 1].to_vec()
    } else if measure(&stripped) == 1 && ends_cvc(&stripped) {
        let mut out = stripped;
        out.push(b'e');
        out
    } else {
        stripped
    }
}

fn step1c(w: Vec<u8>) -> Vec<u8> {
    if ends_with(&w, "y") && contains_vowel(&w[..w.len() - 1]) {
        replaced(&w, "y", "i")
    } else {
        w
    }
}

const STEP2: &[(&str, &str)] = &[
    ("ational", "ate"),
    ("tional", "tion"),
    ("enci", "ence"),
    ("anci", "ance"),
    ("izer", "ize"),
    ("abli", "able"),
    ("alli", "al"),
    ("entli", "ent"),
    ("eli", "e"),
    ("ousli", "ous"),
    ("ization", "ize"),
    ("ation", "ate"),
    ("ator", "ate"),
    ("alism", "al"),
    ("iveness", "ive"),
    ("fulness", "ful"),
    ("ousness", "ous"),
    ("aliti", "al"),
    ("iviti", "ive"),
    ("biliti", "ble"),
];

const STEP3: &[(&str, &str)] = &[
    ("icate", "ic"),
    ("ative", ""),
    ("alize", "al"),
    ("iciti", "ic"),
    ("ical", "ic"),
    ("ful", ""),
    ("ness", ""),
];

/// Applies the longest matching rule from `table` when the remaining stem's
/// measure exceeds `min_measure`. A matched rule whose condition fails ends
/// the step without trying shorter suffixes.
fn step_table(w: Vec<u8>, table: &[(&str, &str)], min_measure: usize) -> Vec<u8> {
    let best = table
        .iter()
        .filter(|(suffix, _)| ends_with(&w, suffix))
        .max_by_key(|(suffix, _)| suffix.len());
    match best {
        Some((suffix, replacement)) if measure(&w[..w.len() - suffix.len()]) > min_measure => {
            replaced(&w, suffix, replacement)
        }
        _ => w,
    }
}

const STEP4: &[&str] = &[
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion", "ou",
    "ism", "ate", "iti", "ous", "ive", "ize",
];

fn step4(w: Vec<u8>) -> Vec<u8> {
    let best = STEP4
        .iter()
        .filter(|suffix| ends_with(&w, suffix))
        .max_by_key(|suffix| suffix.len());
    if let Some(suffix) = best {
        let stem = &w[..w.len() - suffix.len()];
        let ion_ok = *suffix != "ion" || stem.last().is_some_and(|c| matches!(c, b's' | b't'));
        if measure(stem) > 1 && ion_ok {
            return stem.to_vec();
        }
    }
    w
}

fn step5a(w: Vec<u8>) -> Vec<u8> {
    if ends_with(&w, "e") {
        let stem = &w[..w.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            return stem.to_vec();
        }
    }
    w
}

fn step5b(w: Vec<u8>) -> Vec<u8> {
    if measure(&w) > 1 && ends_double_consonant(&w) && w[w.len() - 1] == b'l' {
        w[..w.len() - 1].to_vec()
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn common_stems() {
        for (word, expected) in [
            ("fixed", "fix"),
            ("fixes", "fix"),
            ("fixing", "fix"),
            ("parser", "parser"),
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("security", "secur"),
            ("vulnerability", "vulner"),
            ("vulnerable", "vulner"),
            ("exploitable", "exploit"),
            ("patches", "patch"),
            ("hopping", "hop"),
            ("rating", "rate"),
            ("conditional", "condit"),
            ("xml", "xml"),
            ("overflow", "overflow"),
        ] {
            assert_eq!(stem(word), expected, "stem({word:?})");
        }
    }

    #[test]
    fn related_forms_share_a_stem() {
        assert_eq!(stem("vulnerability"), stem("vulnerable"));
        assert_eq!(stem("exploits"), stem("exploit"));
        assert_eq!(stem("injection"), stem("injections"));
    }

    #[test]
    fn non_ascii_passthrough() {
        assert_eq!(stem("héllo"), "héllo");
    }

    proptest! {
        #[test]
        fn stem_is_idempotent(word in "[a-z]{1,20}") {
            let once = stem(&word);
            prop_assert_eq!(stem(&once), once);
        }
    }
}
