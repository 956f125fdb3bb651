//! Shared text normalization helpers.

/// Lowercases, maps every non-alphanumeric character to a space and splits
/// on whitespace. Used by the bag-of-words embedder and by Jaccard scoring.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Lowercase, single-spaced form of a tag name.
pub fn normalize_tag_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Key used to compare documentations for the tag/documentation bijection.
pub fn normalize_documentation(doc: &str) -> String {
    normalize_tag_name(doc)
}

/// True when the generated text is the literal "other"/"others" label.
pub fn is_others_literal(text: &str) -> bool {
    matches!(normalize_tag_name(text).as_str(), "other" | "others")
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, which the seeded
/// test backends rely on.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Mixes a seed with a string key.
pub fn seeded_hash(seed: u64, key: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + key.len());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    fnv1a(&buf)
}

/// Number of (possibly overlapping) occurrences of `needle` in `haystack`.
pub fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    haystack
        .char_indices()
        .filter(|(i, _)| haystack[*i..].starts_with(needle))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_strip_punctuation() {
        let w: Vec<_> = words("Entity's charter, and BYLAWS.").collect();
        assert_eq!(w, ["entity", "s", "charter", "and", "bylaws"]);
    }

    #[test]
    fn tag_names_are_single_spaced_lowercase() {
        assert_eq!(
            normalize_tag_name("  Common   Stock\tShares "),
            "common stock shares"
        );
    }

    #[test]
    fn others_literal() {
        assert!(is_others_literal(" Others "));
        assert!(is_others_literal("OTHER"));
        assert!(!is_others_literal("others payable"));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn overlapping_occurrences() {
        assert_eq!(count_occurrences("1.1.1", "1.1"), 2);
        assert_eq!(count_occurrences("abc", ""), 0);
    }
}
