//! Flat `key = value` sections (TOML syntax) with strict key checking.

use std::collections::BTreeSet;

use toml::{Table, Value};

use crate::error::{Error, Result};

/// A view over one table that records which keys were read, so that
/// [`Section::finish`] can reject everything else in a single error.
pub struct Section<'a> {
    name: &'a str,
    table: &'a Table,
    used: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    pub fn new(name: &'a str, table: &'a Table) -> Self {
        Section {
            name,
            table,
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a Value> {
        self.used.insert(key);
        self.table.get(key)
    }

    fn type_err(&self, key: &str, want: &str, got: &Value) -> Error {
        Error::Config(format!(
            "[{}] {key}: expected {want}, got {}",
            self.name,
            got.type_str()
        ))
    }

    pub fn str_opt(&mut self, key: &'a str) -> Result<Option<&'a str>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.type_err(key, "a string", v)),
        }
    }

    pub fn u64_opt(&mut self, key: &'a str) -> Result<Option<u64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(self.type_err(key, "a non-negative integer", v)),
        }
    }

    pub fn usize_or(&mut self, key: &'a str, default: usize) -> Result<usize> {
        Ok(self.u64_opt(key)?.map_or(default, |v| v as usize))
    }

    pub fn u64_or(&mut self, key: &'a str, default: u64) -> Result<u64> {
        Ok(self.u64_opt(key)?.unwrap_or(default))
    }

    pub fn f64_opt(&mut self, key: &'a str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(self.type_err(key, "a number", v)),
        }
    }

    pub fn f64_or(&mut self, key: &'a str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn f64_list_opt(&mut self, key: &'a str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    other => Err(self.type_err(key, "a list of numbers", other)),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(self.type_err(key, "a list of numbers", v)),
        }
    }

    pub fn bool_or(&mut self, key: &'a str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => Err(self.type_err(key, "a boolean", v)),
        }
    }

    /// Marks `key` as known without reading it.
    pub fn allow(&mut self, key: &'a str) {
        self.used.insert(key);
    }

    /// Fails if the table holds keys nobody asked for.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&str> = self
            .table
            .keys()
            .map(String::as_str)
            .filter(|k| !self.used.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys in [{}]: {}",
                self.name,
                unknown.join(", ")
            )))
        }
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::Config(e.to_string().trim().to_string()))
}

/// Formats a float so that it reads back as a TOML float with the same bits.
pub fn toml_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}
