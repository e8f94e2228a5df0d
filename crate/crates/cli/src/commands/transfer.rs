use std::path::PathBuf;

use clap::Args;
use dream_core::sim::tasks::TaskSpec;
use dream_core::sim::EnvKind;
use dream_core::transfer::{self, LearningCurve, TransferConfig};
use serde::{Deserialize, Serialize};

use super::common::required;
use super::Context;
use crate::error::{CliError, CliResult};
use crate::output::{self, Provenance};
use crate::settings::resolve;

const TASKS: [&str; 3] = ["pusherlike", "throwerlike", "strikerlike"];

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TransferFlags {
    /// Task to learn.
    #[arg(long, value_parser = TASKS)]
    pub target: Option<String>,
    /// Source tasks, comma separated (at least two).
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<String>>,
    /// Evaluations per method on the target.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Evaluations for training each source policy.
    #[arg(long)]
    pub source_budget: Option<usize>,
    /// Alternations between task-vector and core search.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Share of each round spent on the task vector.
    #[arg(long)]
    pub weight_share: Option<f64>,
    #[arg(long)]
    pub sigma_weights: Option<f64>,
    #[arg(long)]
    pub sigma_core: Option<f64>,
    #[arg(long)]
    pub sigma_scratch: Option<f64>,
    #[arg(long)]
    pub sigma_finetune: Option<f64>,
    /// Return counted as solving the task, for the summary line.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learning curves CSV (evaluations,best_return,method,seed).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TransferSettings {
    pub target: String,
    pub sources: Vec<String>,
    pub budget: usize,
    pub source_budget: usize,
    pub rounds: usize,
    pub weight_share: f64,
    pub sigma_weights: f64,
    pub sigma_core: f64,
    pub sigma_scratch: f64,
    pub sigma_finetune: f64,
    pub threshold: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for TransferSettings {
    fn default() -> Self {
        let c = TransferConfig::default();
        Self {
            target: "strikerlike".into(),
            sources: vec!["pusherlike".into(), "throwerlike".into()],
            budget: c.budget,
            source_budget: c.source_budget,
            rounds: c.rounds,
            weight_share: c.weight_share,
            sigma_weights: c.sigma_weights,
            sigma_core: c.sigma_core,
            sigma_scratch: c.sigma_scratch,
            sigma_finetune: c.sigma_finetune,
            threshold: -0.1,
            seed: c.seed,
            out: None,
        }
    }
}

fn task(name: &str) -> CliResult<TaskSpec> {
    if !TASKS.contains(&name) {
        return Err(CliError::config(format!("'{name}' is not a transfer task ({})", TASKS.join(", "))));
    }
    Ok(TaskSpec::new(name.parse::<EnvKind>()?)?)
}

pub fn transfer(name: &str, flags: &TransferFlags, ctx: &Context) -> CliResult<()> {
    let s: TransferSettings = resolve(name, flags, &ctx.file)?;
    let out = required(&s.out, "out")?;
    let target = task(&s.target)?;
    let sources = s.sources.iter().map(|n| task(n)).collect::<CliResult<Vec<_>>>()?;
    if sources.len() < 2 {
        return Err(CliError::config("transfer needs at least two source tasks"));
    }
    let cfg = TransferConfig {
        budget: s.budget,
        rounds: s.rounds,
        weight_share: s.weight_share,
        sigma_weights: s.sigma_weights,
        sigma_core: s.sigma_core,
        sigma_scratch: s.sigma_scratch,
        sigma_finetune: s.sigma_finetune,
        source_budget: s.source_budget,
        seed: s.seed,
    };
    cfg.validate()?;
    let c = transfer::compare(&sources, &target, &cfg)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| {
        LearningCurve::write_csv_header(w)?;
        for curve in [&c.tensor, &c.scratch, &c.finetune] {
            curve.write_csv_rows(w)?;
        }
        Ok(())
    })?;
    let fmt = |curve: &LearningCurve| {
        curve
            .evaluations_to(s.threshold)
            .map_or_else(|| "none".to_string(), |n| n.to_string())
    };
    println!(
        "evaluations_to_threshold tensor={} scratch={} finetune={}",
        fmt(&c.tensor),
        fmt(&c.scratch),
        fmt(&c.finetune)
    );
    Ok(())
}
