//! `key=value` text files (one pair per line, `#` comments).

use std::collections::BTreeMap;
use std::fmt::Display;

pub fn parse(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {} is not key=value", i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, String> {
    let raw = map.get(key).ok_or_else(|| format!("missing key '{key}'"))?;
    raw.parse().map_err(|_| format!("bad value '{raw}' for '{key}'"))
}

/// Ordered writer; values use their `Display` form.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.out.push_str(&format!("{key}={value}\n"));
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.out)
    }
}
