use std::path::Path;

use thiserror::Error;

use super::Task;

/// On-disk layouts accepted for task corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFileFormat {
    /// One JSON array of task objects.
    JsonArray,
    /// One task object per line.
    JsonLines,
}

impl TaskFileFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => TaskFileFormat::JsonLines,
            _ => TaskFileFormat::JsonArray,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed task document at byte {offset}, field `{path}`: {message}")]
    Malformed {
        offset: usize,
        path: String,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ParseError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ParseError::Malformed { path, .. } => Some(path),
            ParseError::Io { .. } => None,
        }
    }
}

/// Structural parse of a task corpus. No grammar validation happens here.
pub fn parse_tasks(source: &[u8], format: TaskFileFormat) -> Result<Vec<Task>, ParseError> {
    match format {
        TaskFileFormat::JsonArray => parse_json(source, 0, ""),
        TaskFileFormat::JsonLines => {
            let mut tasks = Vec::new();
            let mut offset = 0usize;
            for (index, line) in source.split(|b| *b == b'\n').enumerate() {
                let line_start = offset;
                offset += line.len() + 1;
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                let prefix = format!("[{index}]");
                let task: Task = parse_json(line, line_start, &prefix)?;
                tasks.push(task);
            }
            Ok(tasks)
        }
    }
}

pub fn read_tasks(path: &Path) -> Result<Vec<Task>, ParseError> {
    let bytes = std::fs::read(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tasks(&bytes, TaskFileFormat::from_path(path))
}

/// Pretty-printed JSON array, the canonical corpus layout.
pub fn serialize_tasks(tasks: &[Task]) -> String {
    serde_json::to_string_pretty(tasks).expect("tasks always serialize")
}

fn parse_json<T: serde::de::DeserializeOwned>(
    bytes: &[u8],
    base_offset: usize,
    path_prefix: &str,
) -> Result<T, ParseError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let field = err.path().to_string();
        let path = match field.as_str() {
            _ if path_prefix.is_empty() => field,
            "." => path_prefix.to_string(),
            f if f.starts_with('[') => format!("{path_prefix}{f}"),
            f => format!("{path_prefix}.{f}"),
        };
        malformed(bytes, base_offset, path, err.into_inner())
    })?;
    de.end().map_err(|e| {
        let path = if path_prefix.is_empty() { ".".to_string() } else { path_prefix.to_string() };
        malformed(bytes, base_offset, path, e)
    })?;
    Ok(value)
}

fn malformed(bytes: &[u8], base_offset: usize, path: String, err: serde_json::Error) -> ParseError {
    ParseError::Malformed {
        offset: base_offset + byte_offset(bytes, err.line(), err.column()),
        path,
        message: err.to_string(),
    }
}

/// Converts serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes
        .split(|b| *b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"[
  {"id": "a", "category": "OE", "title": "A", "description": "d", "checklist": []},
  {"id": "b", "title": "B", "checklist": []}
]"#;

    #[test]
    fn empty_array_is_empty_list() {
        assert!(parse_tasks(b"[]", TaskFileFormat::JsonArray).unwrap().is_empty());
    }

    #[test]
    fn missing_category_names_the_entry() {
        let err = parse_tasks(TWO.as_bytes(), TaskFileFormat::JsonArray).unwrap_err();
        let ParseError::Malformed { offset, path, message } = err else {
            panic!("expected malformed");
        };
        assert!(path.starts_with("[1]"), "{path}");
        assert!(message.contains("category"), "{message}");
        // The error points inside the second entry.
        assert!(offset > TWO.find(r#"{"id": "b""#).unwrap(), "{offset}");
    }

    #[test]
    fn bad_enum_value_reports_field_path() {
        let doc = r#"[{"id":"a","category":"XX","title":"t","checklist":[]}]"#;
        let err = parse_tasks(doc.as_bytes(), TaskFileFormat::JsonArray).unwrap_err();
        assert_eq!(err.path(), Some("[0].category"));
    }

    #[test]
    fn json_lines_paths_carry_line_index() {
        let doc = "{\"id\":\"a\",\"category\":\"OE\",\"title\":\"t\",\"checklist\":[]}\n\n{\"id\":\"b\",\"category\":\"CO\",\"title\":\"t\",\"checklist\":[{\"id\":\"x\"}]}\n";
        let err = parse_tasks(doc.as_bytes(), TaskFileFormat::JsonLines).unwrap_err();
        let path = err.path().unwrap();
        assert!(path.starts_with("[2].checklist[0]"), "{path}");
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        assert!(parse_tasks(b"[] x", TaskFileFormat::JsonArray).is_err());
    }
}
