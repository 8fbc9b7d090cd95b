//! Sectioned `key = value` text files.
//!
//! ```text
//! # comment
//! top_level = 1
//!
//! [section]
//! key = value
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`. Every
//! entry must be consumed by its reader; [`Document::finish`] reports any
//! leftovers as unknown keys.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug)]
pub struct Document {
    path: PathBuf,
    entries: Vec<Entry>,
    used: RefCell<BTreeSet<usize>>,
}

impl Document {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut section = String::new();
        let mut entries: Vec<Entry> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = no + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(path, line, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::parse(path, line, "empty section name"));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(path, line, "empty key"));
            }
            if entries.iter().any(|e| e.section == section && e.key == key) {
                return Err(Error::parse(path, line, format!("duplicate key `{key}`")));
            }
            entries.push(Entry {
                section: section.clone(),
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.entries.iter().any(|e| e.section == section)
    }

    fn find(&self, section: &str, key: &str) -> Option<(usize, &Entry)> {
        self.entries
            .iter()
            .enumerate()
            .find(|(_, e)| e.section == section && e.key == key)
    }

    /// Parses `section.key` if present, marking it as consumed.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((i, e)) = self.find(section, key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(i);
        e.value
            .parse::<T>()
            .map(Some)
            .map_err(|err| Error::parse(&self.path, e.line, format!("bad value for `{key}`: {err}")))
    }

    /// Overwrites `*slot` when the key is present.
    pub fn set<T: FromStr>(&self, section: &str, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(section, key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((i, e)) = self.find(section, key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(i);
        e.value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|err| Error::parse(&self.path, e.line, format!("bad list item `{s}` for `{key}`: {err}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails on the first entry no reader asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().enumerate().find(|(i, _)| !used.contains(i)) {
            None => Ok(()),
            Some((_, e)) => {
                let name = if e.section.is_empty() {
                    e.key.clone()
                } else {
                    format!("{}.{}", e.section, e.key)
                };
                Err(Error::parse(&self.path, e.line, format!("unknown key `{name}`")))
            }
        }
    }
}

/// Splits a `section.key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String, String)> {
    let (lhs, value) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{s}` is not `section.key=value`")))?;
    let lhs = lhs.trim();
    let (section, key) = match lhs.rsplit_once('.') {
        Some((sec, key)) => (sec.to_string(), key.to_string()),
        None => (String::new(), lhs.to_string()),
    };
    if key.is_empty() {
        return Err(Error::config(format!("override `{s}` has an empty key")));
    }
    Ok((section, key, value.trim().to_string()))
}

/// Applies overrides to config text by appending or replacing entries, so
/// the result parses like a hand-edited file.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    let mut sections: Vec<(String, Vec<(String, String)>)> = vec![(String::new(), Vec::new())];
    let path = Path::new("<config>");
    let doc = Document::parse(text, path)?;
    for e in doc.entries() {
        push_entry(&mut sections, &e.section, &e.key, &e.value);
    }
    for o in overrides {
        let (sec, key, value) = parse_override(o)?;
        push_entry(&mut sections, &sec, &key, &value);
    }
    let mut out = String::new();
    for (name, entries) in &sections {
        if entries.is_empty() {
            continue;
        }
        if !name.is_empty() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{name}]\n"));
        }
        for (k, v) in entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
    }
    Ok(out)
}

fn push_entry(sections: &mut Vec<(String, Vec<(String, String)>)>, section: &str, key: &str, value: &str) {
    let idx = match sections.iter().position(|(n, _)| n == section) {
        Some(i) => i,
        None => {
            sections.push((section.to_string(), Vec::new()));
            sections.len() - 1
        }
    };
    let entries = &mut sections[idx].1;
    match entries.iter_mut().find(|(k, _)| k == key) {
        Some(slot) => slot.1 = value.to_string(),
        None => entries.push((key.to_string(), value.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Result<Document> {
        Document::parse(text, Path::new("t.cfg"))
    }

    #[test]
    fn sections_and_comments() {
        let d = doc("a = 1 # trailing\n\n[run]\nepochs = 5\nname = x y\n").unwrap();
        assert_eq!(d.get::<u32>("", "a").unwrap(), Some(1));
        assert_eq!(d.get::<usize>("run", "epochs").unwrap(), Some(5));
        assert_eq!(d.get::<String>("run", "name").unwrap().as_deref(), Some("x y"));
        assert_eq!(d.get::<usize>("run", "missing").unwrap(), None);
        d.finish().unwrap();
    }

    #[test]
    fn unknown_keys_are_reported_with_line() {
        let d = doc("[run]\nepochs = 5\nepochz = 6\n").unwrap();
        d.get::<usize>("run", "epochs").unwrap();
        let e = d.finish().unwrap_err().to_string();
        assert_eq!(e, "t.cfg:3: unknown key `run.epochz`");
    }

    #[test]
    fn malformed_input() {
        assert!(matches!(doc("[run\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(doc("x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(doc("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        let d = doc("n = many\n").unwrap();
        assert!(matches!(d.get::<usize>("", "n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn lists() {
        let d = doc("xs = 0.1, 0.2,0.3\n").unwrap();
        assert_eq!(d.get_list::<f64>("", "xs").unwrap(), Some(vec![0.1, 0.2, 0.3]));
    }

    #[test]
    fn overrides_replace_and_append() {
        let text = "seed = 1\n[loss]\neta = 0.16\n";
        let out = apply_overrides(text, &["loss.eta=0.3".into(), "train.epochs = 2".into(), "seed=4".into()]).unwrap();
        assert_eq!(out, "seed = 4\n\n[loss]\neta = 0.3\n\n[train]\nepochs = 2\n");
        assert!(parse_override("noequals").is_err());
    }
}
