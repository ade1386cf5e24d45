//! Identifier-aware tokenization shared by the retriever and the centroid
//! baseline.
//!
//! Source code is full of compound identifiers; a query for `discount`
//! should hit `computeDiscount` and `discount_rate` alike. The tokenizer
//! therefore splits on non-alphanumeric characters, then further splits
//! camelCase and snake_case compounds, emitting both the compound and its
//! parts (case-folded).

/// Tokenize `text` into lowercase terms.
///
/// A compound identifier such as `computeDiscount` yields
/// `["computediscount", "compute", "discount"]`. Single-character fragments
/// are dropped; they carry no signal in code.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric() && c != '_') {
        if word.is_empty() {
            continue;
        }
        let parts = split_identifier(word);
        let compound = word.replace('_', "").to_lowercase();
        if compound.len() >= 2 {
            out.push(compound);
        }
        if parts.len() > 1 {
            for p in parts {
                if p.len() >= 2 {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Split one word on `_` boundaries and lowercase→uppercase transitions,
/// lowercasing every part. `HTTPServer` splits as `["http", "server"]`.
fn split_identifier(word: &str) -> Vec<String> {
    let mut parts = Vec::new();
    for piece in word.split('_') {
        if piece.is_empty() {
            continue;
        }
        let chars: Vec<char> = piece.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let prev = chars[i - 1];
            let cur = chars[i];
            let camel_boundary = cur.is_uppercase() && prev.is_lowercase();
            // Acronym boundary: "HTTPServer" -> HTTP | Server.
            let acronym_boundary = cur.is_uppercase()
                && prev.is_uppercase()
                && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            let digit_boundary = cur.is_ascii_digit() != prev.is_ascii_digit();
            if camel_boundary || acronym_boundary || digit_boundary {
                parts.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        parts.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_camel_case() {
        let toks = tokenize("computeDiscount");
        assert!(toks.contains(&"computediscount".to_string()));
        assert!(toks.contains(&"compute".to_string()));
        assert!(toks.contains(&"discount".to_string()));
    }

    #[test]
    fn splits_snake_case() {
        let toks = tokenize("discount_rate");
        assert!(toks.contains(&"discountrate".to_string()));
        assert!(toks.contains(&"discount".to_string()));
        assert!(toks.contains(&"rate".to_string()));
    }

    #[test]
    fn handles_acronyms() {
        let toks = tokenize("HTTPServer");
        assert!(toks.contains(&"http".to_string()));
        assert!(toks.contains(&"server".to_string()));
    }

    #[test]
    fn drops_single_chars() {
        let toks = tokenize("a b xY");
        assert!(!toks.contains(&"a".to_string()));
        assert!(!toks.contains(&"b".to_string()));
        assert!(toks.contains(&"xy".to_string()));
    }

    #[test]
    fn plain_words_not_duplicated() {
        assert_eq!(tokenize("discount"), vec!["discount"]);
    }

    #[test]
    fn digit_boundaries() {
        let toks = tokenize("sha256sum");
        assert!(toks.contains(&"sha".to_string()));
        assert!(toks.contains(&"256".to_string()));
        assert!(toks.contains(&"sum".to_string()));
    }
}
