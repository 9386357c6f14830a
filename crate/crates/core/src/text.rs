//! `key = value` text used by calibration files, session headers, episode
//! manifests and scenario files.

use std::collections::BTreeMap;

/// Formats with 17 significant digits, which round-trips every finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Ordered `key = value` pairs. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    /// Parses text; on failure returns `(1-based line, message)`.
    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err((i + 1, format!("expected 'key = value', got '{line}'")));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err((i + 1, "empty key".into()));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err((i + 1, format!("duplicate key '{k}'")));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Splits `[a, b, c]` into trimmed items, honouring nested `()` and `[]`.
pub fn parse_list(s: &str) -> Option<Vec<&str>> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    split_top_level(inner)
}

/// Splits `(a, b, c)` into trimmed items.
pub fn parse_tuple(s: &str) -> Option<Vec<&str>> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    split_top_level(inner)
}

fn split_top_level(inner: &str) -> Option<Vec<&str>> {
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            ',' if depth == 0 => {
                out.push(inner[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    out.push(inner[start..].trim());
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, -0.0, 1.0 / 3.0, 6.02214076e23, 5e-324, f64::MAX, -1234.5678] {
            let back: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse("# c\na = 1\n\n b =  two words \n").unwrap();
        assert_eq!(kv.get("a"), Some("1"));
        assert_eq!(kv.get("b"), Some("two words"));
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert_eq!(KeyValues::parse("oops").unwrap_err().0, 1);
    }

    #[test]
    fn lists_and_tuples() {
        assert_eq!(parse_list("[1, 2 ,3]").unwrap(), vec!["1", "2", "3"]);
        assert_eq!(parse_list("[]").unwrap(), Vec::<&str>::new());
        assert_eq!(parse_list("[(1, 2), (3, 4)]").unwrap(), vec!["(1, 2)", "(3, 4)"]);
        assert_eq!(parse_tuple("(0.5, 1e-3)").unwrap(), vec!["0.5", "1e-3"]);
        assert!(parse_list("[(1, 2]").is_none());
        assert!(parse_list("1, 2").is_none());
    }
}
