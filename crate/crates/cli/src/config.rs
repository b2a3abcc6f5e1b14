//! Layered JSON configuration: defaults, then a file, then `--set` overrides.

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`. The value is read as JSON when it parses, and as a
/// plain string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let Some((path, raw)) = s.split_once('=') else {
        bail!("override `{s}` is not of the form key=value");
    };
    if path.is_empty() || path.split('.').any(str::is_empty) {
        bail!("override `{s}` has an empty key");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.split('.').map(String::from).collect(), value))
}

pub fn nest(path: &[String], value: Value) -> Value {
    path.iter().rev().fold(value, |acc, key| {
        let mut m = Map::new();
        m.insert(key.clone(), acc);
        Value::Object(m)
    })
}

/// Resolves a typed config. Unknown keys are rejected by the target type.
pub fn load_config<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    overrides: &[String],
    extra: Vec<(Vec<String>, Value)>,
) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if !text.trim().is_empty() {
            let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if !doc.is_object() {
                bail!("{} must hold a JSON object", path.display());
            }
            merge(&mut v, doc);
        }
    }
    for s in overrides {
        let (path, value) = parse_override(s)?;
        merge(&mut v, nest(&path, value));
    }
    for (path, value) in extra {
        merge(&mut v, nest(&path, value));
    }
    serde_json::from_value(v).context("invalid configuration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        lr: f64,
        steps: usize,
    }

    impl Default for Inner {
        fn default() -> Self {
            Self { lr: 0.1, steps: 3 }
        }
    }

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        name: String,
        inner: Inner,
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = file("");
        let c: Outer = load_config(Some(f.path()), &[], vec![]).unwrap();
        assert_eq!(c, Outer::default());
        let f = file("{}");
        let c: Outer = load_config(Some(f.path()), &[], vec![]).unwrap();
        assert_eq!(c, Outer::default());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let f = file(r#"{"inner": {"lr": 0.5}, "name": "a"}"#);
        let c: Outer = load_config(Some(f.path()), &["inner.lr=0.25".into()], vec![]).unwrap();
        assert_eq!(c.inner.lr, 0.25);
        assert_eq!(c.inner.steps, 3);
        assert_eq!(c.name, "a");
        let c: Outer = load_config(Some(f.path()), &["name=b".into()], vec![]).unwrap();
        assert_eq!(c.name, "b");
    }

    #[test]
    fn unknown_key_is_named() {
        let f = file(r#"{"inner": {"lr_": 0.5}}"#);
        let err = load_config::<Outer>(Some(f.path()), &[], vec![]).unwrap_err();
        assert!(format!("{err:#}").contains("lr_"), "{err:#}");
        assert!(load_config::<Outer>(None, &["bogus=1".into()], vec![]).is_err());
        assert!(parse_override("novalue").is_err());
    }
}
