//! JSON configuration files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("config serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;
    use spdhash_core::trainer::TrainConfig;

    #[test]
    fn partial_configs_fill_defaults() {
        let t: TrainConfig = serde_json::from_str(r#"{"code_len": 24, "lambda1": 0}"#).unwrap();
        assert_eq!(t.code_len, 24);
        assert_eq!(t.lambda1, 0.0);
        assert_eq!(t.momentum, 0.9);
        let s: SynthConfig = serde_json::from_str(r#"{"classes": 3}"#).unwrap();
        assert_eq!(s.classes, 3);
        assert_eq!(s.frames_per_video, 15);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1}"#).is_err());
        assert!(serde_json::from_str::<SynthConfig>(r#"{"klasses": 3}"#).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let cfg = TrainConfig {
            spectrum_policy: spdhash_core::covpool::SpectrumPolicy::Error,
            ..TrainConfig::default()
        };
        save_json(&cfg, &p).unwrap();
        assert_eq!(load_json::<TrainConfig>(&p).unwrap(), cfg);
        assert!(matches!(
            load_json::<TrainConfig>(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }
}
