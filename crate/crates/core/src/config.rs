//! Sectioned `key = value` text configuration.
//!
//! ```text
//! # comment
//! [model]
//! pool_windows = [10, 8, 6, 4]
//! base_filters = 16
//! ```
//!
//! Keys are unique within a section; lists are bracketed and comma separated.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_list<T: ToString>(&mut self, key: &str, values: &[T]) {
        let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.set(key, format!("[{}]", items.join(", ")));
    }

    /// Parses `key` if present, leaving `out` untouched otherwise.
    pub fn read<T: FromStr>(&self, key: &str, out: &mut T) -> Result<()> {
        if let Some(v) = self.get(key) {
            *out = v
                .parse()
                .map_err(|_| Error::Config(format!("[{}] {key}: cannot parse `{v}`", self.name)))?;
        }
        Ok(())
    }

    pub fn read_list<T: FromStr>(&self, key: &str, out: &mut Vec<T>) -> Result<()> {
        let Some(v) = self.get(key) else { return Ok(()) };
        let inner = v
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Config(format!("[{}] {key}: expected a bracketed list, found `{v}`", self.name)))?;
        let mut items = Vec::new();
        for item in inner.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            items.push(
                item.parse()
                    .map_err(|_| Error::Config(format!("[{}] {key}: cannot parse list item `{item}`", self.name)))?,
            );
        }
        *out = items;
        Ok(())
    }

    /// Fails on keys outside `known`, catching typos.
    pub fn expect_keys(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("[{}] unknown key `{k}`", self.name))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDoc {
    pub sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = ConfigDoc::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = n + 1;
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() || doc.section(name).is_some() {
                    return Err(Error::Config(format!("line {lineno}: empty or repeated section `[{name}]`")));
                }
                doc.sections.push(Section::new(name));
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {lineno}: empty key")));
            }
            if doc.sections.is_empty() {
                doc.sections.push(Section::new(""));
            }
            let sec = doc.sections.last_mut().unwrap();
            if sec.get(k).is_some() {
                return Err(Error::Config(format!("line {lineno}: duplicate key `{k}` in [{}]", sec.name)));
            }
            sec.entries.push((k.to_string(), v.to_string()));
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn push(&mut self, section: Section) {
        self.sections.retain(|s| s.name != section.name);
        self.sections.push(section);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            if !s.name.is_empty() {
                let _ = writeln!(out, "[{}]", s.name);
            }
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let doc = ConfigDoc::parse("# top\n[model]\nk = 5 # trailing\nlist = [1, 2,3]\n\n[train]\nlr=0.1\n").unwrap();
        let m = doc.section("model").unwrap();
        let mut v: Vec<usize> = vec![];
        m.read_list("list", &mut v).unwrap();
        assert_eq!(v, [1, 2, 3]);
        let mut lr = 0.0f64;
        doc.section("train").unwrap().read("lr", &mut lr).unwrap();
        assert_eq!(lr, 0.1);
        assert_eq!(ConfigDoc::parse(&doc.to_text()).unwrap(), doc);
    }

    #[test]
    fn errors_name_the_line() {
        let e = ConfigDoc::parse("[a]\nx = 1\nx = 2\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = ConfigDoc::parse("[a]\nnonsense\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let doc = ConfigDoc::parse("[a]\nn = x\n").unwrap();
        let mut n = 0usize;
        assert!(doc.section("a").unwrap().read("n", &mut n).is_err());
    }
}
