//! Term normalization shared by the kernel's name uniqueness checks and the matcher.

/// Lowercases, trims, strips punctuation and collapses internal whitespace.
///
/// Punctuation acts as a word separator, so `"Gypsum-Board"` becomes `"gypsum board"`.
pub fn normalize_term(term: &str) -> String {
    let mut out = String::with_capacity(term.len());
    let mut pending_space = false;
    for ch in term.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_whitespace_and_case() {
        assert_eq!(normalize_term("  Reinforced   Concrete "), "reinforced concrete");
        assert_eq!(normalize_term("concrete"), "concrete");
        assert_eq!(normalize_term("Gypsum-Board"), "gypsum board");
        assert_eq!(normalize_term("..."), "");
        assert_eq!(normalize_term("Cross-Laminated Timber (CLT)"), "cross laminated timber clt");
    }

    #[test]
    fn idempotent() {
        for s in ["A  b", "x-Y_z", " 12.5 mm ", ""] {
            let once = normalize_term(s);
            assert_eq!(normalize_term(&once), once);
        }
    }
}
