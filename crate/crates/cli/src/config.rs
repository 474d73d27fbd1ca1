//! JSON config files merged over built-in defaults.
//!
//! ```json
//! { "seed": 7, "synth": { ... }, "pipeline": { ... }, "phenomena": { ... }, "fur": { ... } }
//! ```
//!
//! Each section is a partial object; missing keys keep their defaults. Flags
//! are applied on top afterwards.

use std::fs;
use std::path::Path;

use geoprior::dataio::SynthConfig;
use geoprior::fur::FurConfig;
use geoprior::pipeline::{PhenomenaConfig, PipelineConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

pub const SEED_ENV: &str = "GEOPRIOR_SEED";

#[derive(Debug, Default)]
pub struct FileConfig {
    raw: Value,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(FileConfig { raw: Value::Object(Default::default()) });
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        let raw: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !raw.is_object() {
            return Err(Failure::Config("config file must hold a JSON object".into()));
        }
        Ok(FileConfig { raw })
    }

    /// Flag, then config file, then `GEOPRIOR_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, Failure> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(v) = self.raw.get("seed") {
            return v.as_u64().ok_or_else(|| Failure::Config("config seed must be a non-negative integer".into()));
        }
        match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Failure::Config(format!("{SEED_ENV}={s} is not a non-negative integer"))),
            Err(_) => Ok(0),
        }
    }

    fn section<T: Serialize + DeserializeOwned>(&self, key: &str, default: T) -> Result<T, Failure> {
        let mut base = serde_json::to_value(default).expect("defaults serialize");
        if let Some(patch) = self.raw.get(key) {
            merge(&mut base, patch.clone());
        }
        serde_json::from_value(base).map_err(|e| Failure::Config(format!("config section `{key}`: {e}")))
    }

    pub fn synth(&self) -> Result<SynthConfig, Failure> {
        self.section("synth", SynthConfig::default())
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, Failure> {
        self.section("pipeline", PipelineConfig::default())
    }

    pub fn phenomena(&self) -> Result<PhenomenaConfig, Failure> {
        self.section("phenomena", PhenomenaConfig::default())
    }

    /// Augmentation settings for the `augment` command.
    pub fn fur(&self) -> Result<FurConfig, Failure> {
        self.section("fur", PipelineConfig::default().fur)
    }
}

/// RFC 7386 style merge without deletion: objects merge key by key, anything
/// else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn nested_merge_keeps_untouched_keys() {
        let mut base = json!({"a": {"x": 1, "y": 2}, "b": 3});
        merge(&mut base, json!({"a": {"y": 5}}));
        assert_eq!(base, json!({"a": {"x": 1, "y": 5}, "b": 3}));
    }

    #[test]
    fn partial_section_overrides_defaults() {
        let cfg = FileConfig { raw: json!({"pipeline": {"train": {"m1": 3}}}) };
        let p = cfg.pipeline().unwrap();
        assert_eq!(p.train.m1, 3);
        assert_eq!(p.train.m2, PipelineConfig::default().train.m2);
    }

    #[test]
    fn bad_section_is_a_config_error() {
        let cfg = FileConfig { raw: json!({"synth": {"classes": "ten"}}) };
        assert!(matches!(cfg.synth(), Err(Failure::Config(_))));
    }
}
