use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use dream_core::gan::{self, GanConfig, NearestSkill, PolicyGenerator, RandomSkill, ThetaSampler, UniformTheta};
use dream_core::Environment;
use serde::{Deserialize, Serialize};

use super::common::{load_archive, required};
use super::Context;
use crate::error::{CliError, CliResult, FileContext};
use crate::output::{self, Provenance};
use crate::settings::resolve;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainFlags {
    /// Repertoire to learn from.
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long, value_parser = ["throw", "joystick"])]
    pub env: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub env_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub noise_dim: Option<usize>,
    /// Width of both hidden layers of each network.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch losses; defaults to <out stem>.history.csv.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSettings {
    pub archive: Option<PathBuf>,
    pub env: Option<String>,
    pub env_config: Option<PathBuf>,
    pub epochs: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub noise_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let g = GanConfig::default();
        Self {
            archive: None,
            env: None,
            env_config: None,
            epochs: g.epochs,
            batch: g.batch,
            lr_g: g.lr_g,
            lr_d: g.lr_d,
            noise_dim: g.noise_dim,
            hidden: g.hidden,
            seed: g.seed,
            out: None,
            history: None,
        }
    }
}

pub fn train(name: &str, flags: &TrainFlags, ctx: &Context) -> CliResult<()> {
    let s: TrainSettings = resolve(name, flags, &ctx.file)?;
    let archive_path = required(&s.archive, "archive")?;
    let out = required(&s.out, "out")?;
    let history = s.history.clone().unwrap_or_else(|| output::sibling(&out, "history.csv"));
    output::check_distinct(&[&archive_path], &[&out, &history])?;
    let (archive, _) = load_archive(&archive_path, s.env.as_deref(), s.env_config.as_deref())?;
    let cfg = GanConfig {
        epochs: s.epochs,
        batch: s.batch,
        lr_g: s.lr_g,
        lr_d: s.lr_d,
        noise_dim: s.noise_dim,
        hidden: s.hidden,
        seed: s.seed,
        ..GanConfig::default()
    };
    let trained = gan::train_gan(&archive, &cfg)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| trained.model.write_to(w))?;
    output::write_with_header(&history, &prov, |w| {
        writeln!(w, "epoch,d_loss,g_loss,output_variance")?;
        for (i, e) in trained.history.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", e.d_loss, e.g_loss, e.output_variance)?;
        }
        Ok(())
    })?;
    if let Some(last) = trained.history.last() {
        println!("epochs={} d_loss={} g_loss={}", trained.history.len(), last.d_loss, last.g_loss);
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalFlags {
    /// Trained generator; required for --sampler gan.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Repertoire the configurations and baselines are drawn from.
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long, value_parser = ["throw", "joystick"])]
    pub env: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub env_config: Option<PathBuf>,
    /// Controller source to evaluate.
    #[arg(long, value_parser = ["gan", "nearest", "random-skill", "uniform"])]
    pub sampler: Option<String>,
    /// Number of target-and-wall configurations.
    #[arg(long)]
    pub configs: Option<usize>,
    /// Attempts per configuration.
    #[arg(long)]
    pub n: Option<usize>,
    /// Hit radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// k-of-N table as CSV (k,tau,probability).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalSettings {
    pub model: Option<PathBuf>,
    pub archive: Option<PathBuf>,
    pub env: Option<String>,
    pub env_config: Option<PathBuf>,
    pub sampler: String,
    pub configs: usize,
    pub n: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            model: None,
            archive: None,
            env: None,
            env_config: None,
            sampler: "gan".into(),
            configs: 100,
            n: 10,
            taus: vec![0.05, 0.1, 0.2, 0.3],
            seed: 0,
            out: None,
        }
    }
}

pub fn eval(name: &str, flags: &EvalFlags, ctx: &Context) -> CliResult<()> {
    let s: EvalSettings = resolve(name, flags, &ctx.file)?;
    let archive_path = required(&s.archive, "archive")?;
    let out = required(&s.out, "out")?;
    let mut inputs = vec![archive_path.as_path()];
    inputs.extend(s.model.as_deref());
    output::check_distinct(&inputs, &[&out])?;
    if s.n == 0 || s.configs == 0 {
        return Err(CliError::config("n and configs must be positive"));
    }
    let (archive, env) = load_archive(&archive_path, s.env.as_deref(), s.env_config.as_deref())?;
    let model;
    let sampler: Box<dyn ThetaSampler + '_> = match s.sampler.as_str() {
        "gan" => {
            let path = required(&s.model, "model")?;
            model = PolicyGenerator::read_from(output::open(&path)?).in_file(&path)?;
            if model.theta_dim() != env.param_dim() {
                return Err(CliError::config(format!(
                    "model produces {}-D controllers, environment expects {}",
                    model.theta_dim(),
                    env.param_dim()
                )));
            }
            Box::new(model)
        }
        "nearest" => Box::new(NearestSkill(&archive)),
        "random-skill" => Box::new(RandomSkill(&archive)),
        "uniform" => Box::new(UniformTheta(env.bounds())),
        other => return Err(CliError::config(format!("unknown sampler '{other}'"))),
    };
    let configs = gan::wall_configs(&archive, s.configs, s.seed)?;
    let table = gan::k_of_n_eval(sampler.as_ref(), &env, &configs, s.n, &s.taus, s.seed)?;
    let targets: Vec<Vec<f64>> = configs.iter().map(|c| c.target.clone()).collect();
    let miss = gan::outcome_diagonal(&archive);
    let err = gan::mean_landing_error(sampler.as_ref(), &env, &targets, s.n, miss, s.seed)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| table.write_csv(w))?;
    let k = 2.min(s.n);
    let p: Vec<String> = (0..s.taus.len()).map(|t| table.probability(k, t).to_string()).collect();
    println!("mean_landing_error={err} p_at_least_{k}=[{}]", p.join(","));
    Ok(())
}
