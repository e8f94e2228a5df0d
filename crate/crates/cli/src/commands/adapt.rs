use std::path::PathBuf;

use clap::Args;
use dream_core::adapt::{self, AdaptConfig};
use dream_core::Environment;
use serde::{Deserialize, Serialize};

use super::common::{load_archive, required, save_archive, GapSpec};
use super::Context;
use crate::error::{CliError, CliResult};
use crate::output::{self, Provenance};
use crate::settings::resolve;

/// Flags shared by `adapt` and `probe`.
#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelFlags {
    /// Repertoire file produced by `qd` or `baseline`.
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// Environment; defaults to the one named in the archive header.
    #[arg(long, value_parser = ["throw", "joystick"])]
    pub env: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub env_config: Option<PathBuf>,
    /// Reality gap, e.g. gravity=1.1,bias=0.05 (default nominal).
    #[arg(long)]
    pub gap: Option<GapSpec>,
    /// Corrections after the first attempt.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Neighbors in the local linear model; defaults to D+1.
    #[arg(long)]
    pub k: Option<usize>,
    /// Ridge regularization of the local fit.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Hit radius; defaults to the environment tolerance.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AdaptFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    /// Target outcome, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub target: Option<Vec<f64>>,
    /// Where to write the archive including the adapted skill.
    #[arg(long)]
    pub archive_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ProbeFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    /// Number of sampled reachable targets.
    #[arg(long)]
    pub targets: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct AdaptSettings {
    pub archive: Option<PathBuf>,
    pub env: Option<String>,
    pub env_config: Option<PathBuf>,
    pub gap: GapSpec,
    pub max_iters: usize,
    pub k: Option<usize>,
    pub ridge: f64,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Only used by `adapt`.
    pub target: Option<Vec<f64>>,
    pub archive_out: Option<PathBuf>,
    /// Only used by `probe`.
    pub targets: usize,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        Self {
            archive: None,
            env: None,
            env_config: None,
            gap: GapSpec::NOMINAL,
            max_iters: 4,
            k: None,
            ridge: 1e-2,
            epsilon: None,
            seed: 0,
            out: None,
            target: None,
            archive_out: None,
            targets: 100,
        }
    }
}

fn adapt_config(s: &AdaptSettings, env: &dyn Environment) -> CliResult<AdaptConfig> {
    let base = AdaptConfig::for_env(env);
    let cfg = AdaptConfig {
        epsilon: s.epsilon.unwrap_or(base.epsilon),
        max_iters: s.max_iters,
        k: s.k.unwrap_or(base.k),
        ridge: s.ridge,
        seed: s.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn adapt(name: &str, flags: &AdaptFlags, ctx: &Context) -> CliResult<()> {
    let mut s: AdaptSettings = resolve(name, flags, &ctx.file)?;
    s.targets = 0;
    let archive_path = required(&s.archive, "archive")?;
    let out = required(&s.out, "out")?;
    let target = s
        .target
        .clone()
        .ok_or_else(|| CliError::usage("missing required --target"))?;
    let mut outputs = vec![out.as_path()];
    outputs.extend(s.archive_out.as_deref());
    output::check_distinct(&[&archive_path], &outputs)?;
    let (mut archive, env) = load_archive(&archive_path, s.env.as_deref(), s.env_config.as_deref())?;
    if target.len() != env.outcome_dim() {
        return Err(CliError::config(format!(
            "target has {} coordinates, the environment's outcomes have {}",
            target.len(),
            env.outcome_dim()
        )));
    }
    let cfg = adapt_config(&s, &env)?;
    let gap = s.gap.to_gap(env.n_joints());
    let report = adapt::adapt_to_target(&mut archive, &env, &gap, &target, &cfg)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| dream_core::io::write_json_line(w, &report))?;
    if let Some(p) = &s.archive_out {
        save_archive(&archive, p, &prov)?;
    }
    println!("status={:?} attempts={}", report.status, report.iterations.len());
    Ok(())
}

pub fn probe(name: &str, flags: &ProbeFlags, ctx: &Context) -> CliResult<()> {
    let mut s: AdaptSettings = resolve(name, flags, &ctx.file)?;
    s.target = None;
    s.archive_out = None;
    let archive_path = required(&s.archive, "archive")?;
    let out = required(&s.out, "out")?;
    output::check_distinct(&[&archive_path], &[&out])?;
    let (archive, env) = load_archive(&archive_path, s.env.as_deref(), s.env_config.as_deref())?;
    let cfg = adapt_config(&s, &env)?;
    let gap = s.gap.to_gap(env.n_joints());
    let summary = adapt::reachability_probe(&archive, &env, &gap, s.targets, s.seed, &cfg)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| dream_core::io::write_json_line(w, &summary))?;
    println!(
        "targets={} success_rate={} adapted_fraction={}",
        summary.n_targets, summary.success_rate, summary.adapted_fraction
    );
    Ok(())
}
