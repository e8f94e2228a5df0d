use std::path::PathBuf;

use clap::Args;
use dream_core::qd::{self, QdConfig};
use dream_core::Environment;
use serde::{Deserialize, Serialize};

use super::common::{make_env, required, save_archive, EnvFlags};
use super::Context;
use crate::error::CliResult;
use crate::output::{self, Provenance};
use crate::settings::resolve;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct QdFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvFlags,
    /// Generations after the random initial batch.
    #[arg(long)]
    pub generations: Option<usize>,
    /// Children per generation.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Random controllers evaluated before the first generation.
    #[arg(long)]
    pub initial: Option<usize>,
    /// Mutation standard deviation as a fraction of each parameter range.
    #[arg(long)]
    pub sigma_mut: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Archive file (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV; defaults to <out stem>.metrics.csv.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct QdSettings {
    pub env: String,
    pub env_config: Option<PathBuf>,
    pub generations: usize,
    pub batch: usize,
    pub initial: usize,
    pub sigma_mut: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for QdSettings {
    fn default() -> Self {
        let q = QdConfig::default();
        Self {
            env: "throw".into(),
            env_config: None,
            generations: q.generations,
            batch: q.batch,
            initial: q.initial,
            sigma_mut: q.sigma_mut,
            seed: q.seed,
            out: None,
            metrics: None,
        }
    }
}

pub fn qd(name: &str, flags: &QdFlags, ctx: &Context) -> CliResult<()> {
    let s: QdSettings = resolve(name, flags, &ctx.file)?;
    let out = required(&s.out, "out")?;
    let metrics = s.metrics.clone().unwrap_or_else(|| output::sibling(&out, "metrics.csv"));
    let inputs: Vec<&std::path::Path> = s.env_config.iter().map(|p| p.as_path()).collect();
    output::check_distinct(&inputs, &[&out, &metrics])?;
    let env = make_env(Some(&s.env), s.env_config.as_deref())?;
    let cfg = QdConfig {
        generations: s.generations,
        batch: s.batch,
        initial: s.initial,
        sigma_mut: s.sigma_mut,
        seed: s.seed,
    };
    let (archive, log) = qd::run_qd(&env, &cfg)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    save_archive(&archive, &out, &prov)?;
    output::write_with_header(&metrics, &prov, |w| log.write_csv(w))?;
    println!(
        "archive_size={} coverage={} evaluations={}",
        archive.len(),
        qd::coverage(&archive, env.novelty_radius()),
        cfg.total_evaluations()
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BaselineFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvFlags,
    /// Number of random controllers; defaults to the QD budget.
    #[arg(long)]
    pub evals: Option<usize>,
    /// Novelty radius; defaults to the environment's.
    #[arg(long)]
    pub r_novel: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct BaselineSettings {
    pub env: String,
    pub env_config: Option<PathBuf>,
    pub evals: usize,
    pub r_novel: Option<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            env: "throw".into(),
            env_config: None,
            evals: QdConfig::default().total_evaluations(),
            r_novel: None,
            seed: 0,
            out: None,
        }
    }
}

pub fn baseline(name: &str, flags: &BaselineFlags, ctx: &Context) -> CliResult<()> {
    let s: BaselineSettings = resolve(name, flags, &ctx.file)?;
    let out = required(&s.out, "out")?;
    let inputs: Vec<&std::path::Path> = s.env_config.iter().map(|p| p.as_path()).collect();
    output::check_distinct(&inputs, &[&out])?;
    let env = make_env(Some(&s.env), s.env_config.as_deref())?;
    let r_novel = s.r_novel.unwrap_or_else(|| env.novelty_radius());
    let archive = qd::random_baseline(&env, s.evals, s.seed, r_novel)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    save_archive(&archive, &out, &prov)?;
    println!("archive_size={} evaluations={}", archive.len(), s.evals);
    Ok(())
}
