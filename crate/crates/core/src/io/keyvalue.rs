use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KeyValueLine {
    /// 1-based line number in the source text.
    pub line: usize,
    pub key: String,
    pub values: Vec<String>,
}

/// Line-oriented `key value...` document; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValueDoc {
    path: PathBuf,
    lines: Vec<KeyValueLine>,
}

impl KeyValueDoc {
    pub fn parse(text: &str, path: &Path) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let content = raw.split('#').next().unwrap_or("");
                let mut words = content.split_whitespace();
                let key = words.next()?;
                Some(KeyValueLine {
                    line: i + 1,
                    key: key.to_string(),
                    values: words.map(str::to_string).collect(),
                })
            })
            .collect();
        Self {
            path: path.to_path_buf(),
            lines,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lines(&self) -> &[KeyValueLine] {
        &self.lines
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::format(&self.path, msg)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a KeyValueLine> + 'a {
        self.lines.iter().filter(move |l| l.key == key)
    }

    pub fn find(&self, key: &str) -> Option<&KeyValueLine> {
        self.lines.iter().find(|l| l.key == key)
    }

    /// The single line with `key`.
    pub fn one(&self, key: &str) -> Result<&KeyValueLine> {
        let mut it = self.lines.iter().filter(|l| l.key == key);
        let first = it.next().ok_or_else(|| self.error(format!("missing key `{key}`")))?;
        if let Some(dup) = it.next() {
            return Err(self.error(format!("key `{key}` repeated on line {}", dup.line)));
        }
        Ok(first)
    }

    /// Values of `line` parsed as `T`, requiring exactly `n` of them.
    pub fn values<T: FromStr>(&self, line: &KeyValueLine, n: usize) -> Result<Vec<T>> {
        if line.values.len() != n {
            return Err(self.error(format!(
                "line {}: `{}` expects {n} values, found {}",
                line.line,
                line.key,
                line.values.len()
            )));
        }
        self.parse_all(line, &line.values)
    }

    pub fn parse_all<T: FromStr>(&self, line: &KeyValueLine, words: &[String]) -> Result<Vec<T>> {
        words
            .iter()
            .map(|w| {
                w.parse::<T>()
                    .map_err(|_| self.error(format!("line {}: cannot parse `{w}` for `{}`", line.line, line.key)))
            })
            .collect()
    }

    pub fn get<T: FromStr>(&self, key: &str, n: usize) -> Result<Vec<T>> {
        let line = self.one(key)?;
        self.values(line, n)
    }

    pub fn scalar<T: FromStr>(&self, key: &str) -> Result<T> {
        Ok(self.get::<T>(key, 1)?.remove(0))
    }

    pub fn floats<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.get::<f64>(key, N)?;
        Ok(v.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let doc = KeyValueDoc::parse("# header\nversion 1\n\nsize 3 4 # trailing\nrow 1\nrow 2\n", Path::new("x"));
        assert_eq!(doc.scalar::<u32>("version").unwrap(), 1);
        assert_eq!(doc.get::<usize>("size", 2).unwrap(), vec![3, 4]);
        assert_eq!(doc.all("row").count(), 2);
        assert!(doc.one("row").is_err());
        assert!(doc.get::<usize>("size", 3).is_err());
        assert!(doc.scalar::<u32>("missing").is_err());
        assert!(KeyValueDoc::parse("v abc", Path::new("x")).scalar::<f64>("v").is_err());
    }
}
