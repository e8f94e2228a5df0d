use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use dream_core::sim::EnvKind;
use dream_core::{Archive, Environment, EnvironmentSpec, RealityGap};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult, FileContext};
use crate::output::{self, Provenance};

/// Environment selection shared by the repertoire commands.
#[derive(Debug, Clone, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EnvFlags {
    /// Built-in environment.
    #[arg(long, value_parser = ["throw", "joystick"])]
    pub env: Option<String>,
    /// TOML environment description; overrides --env.
    #[arg(long, value_name = "FILE")]
    pub env_config: Option<PathBuf>,
}

pub fn required(value: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    value
        .clone()
        .ok_or_else(|| CliError::usage(format!("missing required --{flag}")))
}

/// Build the environment from a description file or a built-in name.
pub fn make_env(name: Option<&str>, config: Option<&Path>) -> CliResult<EnvironmentSpec> {
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return EnvironmentSpec::from_toml(&text).in_file(path);
    }
    let kind: EnvKind = name.unwrap_or("throw").parse()?;
    match kind {
        EnvKind::Throw | EnvKind::Joystick => Ok(EnvironmentSpec::for_kind(kind)),
        other => Err(CliError::config(format!(
            "environment '{}' has no motion-primitive repertoire",
            other.as_str()
        ))),
    }
}

/// Load an archive, defaulting the environment to the one named in its
/// header.
pub fn load_archive(path: &Path, env: Option<&str>, env_config: Option<&Path>) -> CliResult<(Archive, EnvironmentSpec)> {
    let meta = Archive::read_meta(path).in_file(path)?;
    let env = make_env(Some(env.unwrap_or(&meta.env)), env_config)?;
    if meta.env != env.name() {
        return Err(CliError::config(format!(
            "{} was built for environment '{}', not '{}'",
            path.display(),
            meta.env,
            env.name()
        )));
    }
    let archive = Archive::load(path, env.bounds()).in_file(path)?;
    Ok((archive, env))
}

/// Save an archive with the provenance stored in its JSON header line.
pub fn save_archive(archive: &Archive, path: &Path, prov: &Provenance) -> CliResult<()> {
    let mut a = archive.clone();
    a.meta_mut().extra.insert("run".into(), prov.as_value().clone());
    output::write_raw(path, |w| a.write_to(w))
}

/// Reality gap given as `gravity=1.1,bias=0.05[,link=1.0]` or `nominal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSpec {
    pub gravity: f64,
    pub bias: f64,
    pub link: f64,
}

impl GapSpec {
    pub const NOMINAL: GapSpec = GapSpec {
        gravity: 1.0,
        bias: 0.0,
        link: 1.0,
    };

    pub fn to_gap(self, n_joints: usize) -> RealityGap {
        RealityGap {
            link_scale: self.link,
            ..RealityGap::uniform(self.gravity, self.bias, n_joints)
        }
    }
}

impl Default for GapSpec {
    fn default() -> Self {
        Self::NOMINAL
    }
}

impl fmt::Display for GapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gravity={},bias={},link={}", self.gravity, self.bias, self.link)
    }
}

impl FromStr for GapSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut gap = Self::NOMINAL;
        if s.trim() == "nominal" {
            return Ok(gap);
        }
        for part in s.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got '{part}'"))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("'{value}' is not a number"))?;
            match key.trim() {
                "gravity" => gap.gravity = v,
                "bias" => gap.bias = v,
                "link" => gap.link = v,
                other => return Err(format!("unknown gap key '{other}' (gravity, bias, link)")),
            }
        }
        if !(gap.gravity > 0.0 && gap.link > 0.0) {
            return Err("gravity and link scales must be positive".into());
        }
        Ok(gap)
    }
}

impl Serialize for GapSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GapSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
