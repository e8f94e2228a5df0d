//! Layered configuration: defaults, then the `[command]` section of the
//! `--config` TOML file, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult, Kind};

pub const COMMANDS: [&str; 12] = [
    "qd",
    "baseline",
    "adapt",
    "probe",
    "gan-train",
    "gan-eval",
    "srl-collect",
    "srl-train",
    "srl-eval",
    "transfer",
    "ltm",
    "social",
];

/// A parsed config file: one table per subcommand.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::new(Kind::Parse, e.message().to_string()))?;
        let mut sections = Map::new();
        for (key, value) in table {
            if !COMMANDS.contains(&key.as_str()) {
                return Err(CliError::config(format!("unknown section [{key}]")));
            }
            let toml::Value::Table(t) = value else {
                return Err(CliError::config(format!("'{key}' must be a [{key}] table")));
            };
            let json = serde_json::to_value(t).map_err(|e| CliError::config(e.to_string()))?;
            sections.insert(key, json);
        }
        Ok(Self { sections })
    }

    pub fn section(&self, command: &str) -> Option<&Map<String, Value>> {
        self.sections.get(command).and_then(Value::as_object)
    }
}

/// Resolve the settings of `command`. Keys are kebab-case in both the file
/// and the flags; unknown file keys are configuration errors.
pub fn resolve<F, S>(command: &str, flags: &F, file: &ConfigFile) -> CliResult<S>
where
    F: Serialize,
    S: Serialize + DeserializeOwned + Default,
{
    let mut merged = match serde_json::to_value(S::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("settings serialize to an object"),
    };
    if let Some(section) = file.section(command) {
        for (k, v) in section {
            if !merged.contains_key(k) {
                return Err(CliError::config(format!("unknown key '{k}' in [{command}]")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    if let Ok(Value::Object(given)) = serde_json::to_value(flags) {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::config(format!("[{command}] {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    #[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
    struct S {
        batch: usize,
        sigma_mut: f64,
        seed: u64,
    }

    impl Default for S {
        fn default() -> Self {
            Self {
                batch: 32,
                sigma_mut: 0.02,
                seed: 0,
            }
        }
    }

    #[derive(Serialize, Default)]
    #[serde(rename_all = "kebab-case")]
    struct F {
        batch: Option<usize>,
        sigma_mut: Option<f64>,
        seed: Option<u64>,
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigFile::parse("[qd]\nbatch = 8\nsigma-mut = 0.5\n").unwrap();
        let flags = F {
            sigma_mut: Some(0.1),
            ..F::default()
        };
        let s: S = resolve("qd", &flags, &file).unwrap();
        assert_eq!(
            s,
            S {
                batch: 8,
                sigma_mut: 0.1,
                seed: 0
            }
        );
        let other: S = resolve("baseline", &F::default(), &file).unwrap();
        assert_eq!(other, S::default());
    }

    #[test]
    fn unknown_keys_and_sections_are_config_errors() {
        let file = ConfigFile::parse("[qd]\nbatchh = 8\n").unwrap();
        let err = resolve::<F, S>("qd", &F::default(), &file).unwrap_err();
        assert_eq!(err.kind, Kind::Config);
        assert_eq!(ConfigFile::parse("[nope]\n").unwrap_err().kind, Kind::Config);
        assert_eq!(ConfigFile::parse("seed = 1\n").unwrap_err().kind, Kind::Config);
    }

    #[test]
    fn wrong_types_are_config_errors_and_bad_toml_is_a_parse_error() {
        let file = ConfigFile::parse("[qd]\nbatch = \"many\"\n").unwrap();
        assert_eq!(resolve::<F, S>("qd", &F::default(), &file).unwrap_err().kind, Kind::Config);
        assert_eq!(ConfigFile::parse("[qd\n").unwrap_err().kind, Kind::Parse);
    }
}
