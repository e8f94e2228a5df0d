use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use dream_core::srl::{self, SplitEncoder, SrlConfig, SrlDataset, TRUTH_NAMES};
use serde::{Deserialize, Serialize};

use super::common::required;
use super::Context;
use crate::error::{CliError, CliResult, FileContext};
use crate::output::{self, Provenance};
use crate::settings::resolve;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CollectFlags {
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CollectSettings {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for CollectSettings {
    fn default() -> Self {
        Self {
            episodes: 500,
            horizon: 50,
            seed: 0,
            out: None,
        }
    }
}

pub fn collect(name: &str, flags: &CollectFlags, ctx: &Context) -> CliResult<()> {
    let s: CollectSettings = resolve(name, flags, &ctx.file)?;
    let out = required(&s.out, "out")?;
    let data = srl::collect(s.episodes, s.horizon, s.seed)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| data.write_to(w))?;
    let [neg, zero, pos] = data.reward_counts();
    println!("transitions={} rewards=[{neg},{zero},{pos}]", data.len());
    Ok(())
}

fn load_dataset(path: &std::path::Path) -> CliResult<SrlDataset> {
    SrlDataset::read_from(output::open(path)?).in_file(path)
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainFlags {
    /// Dataset from `srl-collect`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Weight of the auto-encoder loss.
    #[arg(long)]
    pub w_ae: Option<f64>,
    /// Weight of the reward-prediction loss.
    #[arg(long)]
    pub w_r: Option<f64>,
    /// Weight of the inverse-model loss.
    #[arg(long)]
    pub w_inv: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch losses; defaults to <out stem>.history.csv.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub w_ae: f64,
    pub w_r: f64,
    pub w_inv: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = SrlConfig::default();
        Self {
            data: None,
            epochs: c.epochs,
            batch: c.batch,
            lr: c.lr,
            hidden: c.hidden,
            w_ae: c.w_ae,
            w_r: c.w_r,
            w_inv: c.w_inv,
            seed: c.seed,
            out: None,
            history: None,
        }
    }
}

pub fn train(name: &str, flags: &TrainFlags, ctx: &Context) -> CliResult<()> {
    let s: TrainSettings = resolve(name, flags, &ctx.file)?;
    let data_path = required(&s.data, "data")?;
    let out = required(&s.out, "out")?;
    let history = s.history.clone().unwrap_or_else(|| output::sibling(&out, "history.csv"));
    output::check_distinct(&[&data_path], &[&out, &history])?;
    let data = load_dataset(&data_path)?;
    let cfg = SrlConfig {
        epochs: s.epochs,
        batch: s.batch,
        lr: s.lr,
        hidden: s.hidden,
        w_ae: s.w_ae,
        w_r: s.w_r,
        w_inv: s.w_inv,
        seed: s.seed,
    };
    let trained = srl::train_split(&data, &cfg)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| trained.model.write_to(w))?;
    output::write_with_header(&history, &prov, |w| {
        writeln!(w, "epoch,reconstruction,reward,inverse")?;
        for (i, l) in trained.history.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", l.reconstruction, l.reward, l.inverse)?;
        }
        Ok(())
    })?;
    println!("epochs={} transitions={}", trained.history.len(), data.len());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalFlags {
    /// Model from `srl-train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluation dataset, ideally collected with another seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the frozen random encoder used as the reference.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report CSV (metric,model,random_encoder).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalSettings {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn eval(name: &str, flags: &EvalFlags, ctx: &Context) -> CliResult<()> {
    let s: EvalSettings = resolve(name, flags, &ctx.file)?;
    let model_path = required(&s.model, "model")?;
    let data_path = required(&s.data, "data")?;
    let out = required(&s.out, "out")?;
    output::check_distinct(&[&model_path, &data_path], &[&out])?;
    let model = SplitEncoder::read_from(output::open(&model_path)?).in_file(&model_path)?;
    let data = load_dataset(&data_path)?;
    if data.is_empty() {
        return Err(CliError::config("empty evaluation dataset"));
    }
    let hidden = model.encoder.layers()[0].bias.len();
    let random = SplitEncoder::new(hidden, s.seed)?;
    let (g, r) = (srl::gtc(&model.encoder, &data)?, srl::gtc(&random.encoder, &data)?);
    let (ga, ra) = (srl::head_accuracy(&model, &data), srl::head_accuracy(&random, &data));
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| {
        writeln!(w, "metric,model,random_encoder")?;
        for (i, dim) in TRUTH_NAMES.iter().enumerate() {
            writeln!(w, "gtc_{dim},{},{}", g.per_dim[i], r.per_dim[i])?;
        }
        writeln!(w, "gtc_mean,{},{}", g.mean, r.mean)?;
        writeln!(w, "reward_accuracy,{},{}", ga.reward, ra.reward)?;
        writeln!(w, "reward_majority,{},{}", ga.reward_majority, ra.reward_majority)?;
        writeln!(w, "action_accuracy,{},{}", ga.action, ra.action)?;
        Ok(())
    })?;
    println!("gtc_mean={} random_gtc_mean={}", g.mean, r.mean);
    Ok(())
}
