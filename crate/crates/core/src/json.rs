//! JSON loading with line-addressed diagnostics.
//!
//! Syntax and type errors come straight from serde with their position.
//! Semantic checks that run after deserialization report a JSON pointer,
//! which is resolved back to a line and column of the source text.

use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{origin}:{line}:{column}: {message}")]
pub struct AddressedError {
    pub origin: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Parsed document kept around for pointer lookups.
pub struct SpannedDoc {
    origin: String,
    text: String,
    root: json_spanned_value::spanned::Value,
}

impl SpannedDoc {
    /// Deserializes `text` into `T` and keeps a spanned copy for later
    /// diagnostics.
    pub fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Result<(T, SpannedDoc), AddressedError> {
        let value: T = serde_json::from_str(text).map_err(|e| AddressedError {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        let root = json_spanned_value::from_str(text).map_err(|e| AddressedError {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        Ok((
            value,
            SpannedDoc {
                origin: origin.to_string(),
                text: text.to_string(),
                root,
            },
        ))
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    /// Error located at `pointer`, or at its closest existing ancestor.
    pub fn error_at(&self, pointer: &str, message: impl Into<String>) -> AddressedError {
        let mut p = pointer.to_string();
        let offset = loop {
            if let Some(v) = self.root.pointer(&p) {
                break v.start();
            }
            match p.rfind('/') {
                Some(cut) => p.truncate(cut),
                None => break 0,
            }
        };
        let (line, column) = line_col(&self.text, offset);
        AddressedError {
            origin: self.origin.clone(),
            line,
            column,
            message: format!("{pointer}: {}", message.into()),
        }
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

// serde_json appends " at line X column Y"; we print the position ourselves.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(cut) => msg[..cut].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Deserialize, Debug)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    struct Doc {
        a: u32,
        b: Vec<f64>,
    }

    #[test]
    fn pointer_errors_resolve_to_lines() {
        let text = "{\n  \"a\": 1,\n  \"b\": [1.0,\n     -2.0]\n}";
        let (_doc, spans): (Doc, _) = SpannedDoc::parse(text, "t.json").unwrap();
        let e = spans.error_at("/b/1", "must be positive");
        assert_eq!((e.line, e.column), (4, 6));
        assert!(e.to_string().starts_with("t.json:4:6: /b/1"));
        // missing pointer falls back to the parent
        let e = spans.error_at("/b/7", "nope");
        assert_eq!(e.line, 3);
    }

    #[test]
    fn unknown_keys_are_addressed() {
        let text = "{\"a\": 1,\n \"b\": [],\n \"bb\": 2}";
        let err = SpannedDoc::parse::<Doc>(text, "t.json").err().unwrap();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("unknown field"));
    }
}
