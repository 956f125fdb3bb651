//! Line-delimited JSON helpers.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct JsonlError {
    pub line: usize,
    pub message: String,
}

/// Parses every non-blank line as one `T`.
pub fn parse<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>, JsonlError> {
    let text = std::str::from_utf8(bytes).map_err(|e| JsonlError {
        line: bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1,
        message: "invalid UTF-8".into(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| JsonlError {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn line<T: Serialize>(item: &T) -> String {
    let mut s = serde_json::to_string(item).expect("value serializes");
    s.push('\n');
    s
}

pub fn to_string<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    items.into_iter().map(line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_blank_lines_and_reports_position() {
        let v: Vec<u32> = parse(b"1\n\n2\n").unwrap();
        assert_eq!(v, [1, 2]);
        let err = parse::<u32>(b"1\n\nx\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(to_string(&[1u32, 2]), "1\n2\n");
    }
}
