use std::collections::BTreeMap;

use crate::{Error, Result};

/// Flat `key = value` settings, sorted by key.
pub type ConfigMap = BTreeMap<String, String>;

/// Parse `key = value` lines. Blank lines and `#` comments are ignored;
/// later keys override earlier ones.
pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found `{raw}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn render_config(map: &ConfigMap) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
