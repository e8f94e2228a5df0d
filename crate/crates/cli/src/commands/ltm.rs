use std::path::{Path, PathBuf};

use clap::Args;
use dream_core::io::{numbered_lines, parse_json_line};
use dream_core::memory::{self, two_context, Episode, Ltm, LtmConfig, RedescribeConfig};
use serde::{Deserialize, Serialize};

use super::common::required;
use super::Context;
use crate::error::{CliError, CliResult, FileContext};
use crate::output::{self, Provenance};
use crate::settings::resolve;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LtmFlags {
    /// Episodes as JSON lines {"perception":[..],"policy":i,"reward":r}.
    /// Without it, episodes come from the built-in two-context world.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Episodes drawn from the two-context world.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Held-out perceptions for the retrieval check (two-context world only).
    #[arg(long)]
    pub held_out: Option<usize>,
    /// Activation threshold; defaults to 0.5.
    #[arg(long)]
    pub theta_act: Option<f64>,
    /// Reward above which an episode is stored; defaults to 0.
    #[arg(long, allow_hyphen_values = true)]
    pub relevance: Option<f64>,
    /// Train membership classifiers for large nodes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub redescribe: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Smallest node that is redescribed.
    #[arg(long)]
    pub min_episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Memory file (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Activation map over the first two perception dimensions (CSV).
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Grid points per axis of the activation map.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct LtmSettings {
    pub input: Option<PathBuf>,
    pub episodes: usize,
    pub held_out: usize,
    pub theta_act: Option<f64>,
    pub relevance: Option<f64>,
    pub redescribe: bool,
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub min_episodes: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub activations: Option<PathBuf>,
    pub resolution: usize,
}

impl Default for LtmSettings {
    fn default() -> Self {
        let r = RedescribeConfig::default();
        Self {
            input: None,
            episodes: 200,
            held_out: 100,
            theta_act: None,
            relevance: None,
            redescribe: true,
            epochs: r.epochs,
            lr: r.lr,
            hidden: r.hidden,
            min_episodes: r.min_episodes,
            seed: 0,
            out: None,
            activations: None,
            resolution: 41,
        }
    }
}

fn read_episodes(path: &Path) -> CliResult<Vec<Episode>> {
    numbered_lines(output::open(path)?)
        .map(|item| item.and_then(|(line, text)| parse_json_line(line, &text)))
        .collect::<dream_core::Result<Vec<Episode>>>()
        .in_file(path)
}

pub fn ltm(name: &str, flags: &LtmFlags, ctx: &Context) -> CliResult<()> {
    let s: LtmSettings = resolve(name, flags, &ctx.file)?;
    let out = required(&s.out, "out")?;
    let mut outputs = vec![out.as_path()];
    outputs.extend(s.activations.as_deref());
    let inputs: Vec<&Path> = s.input.iter().map(|p| p.as_path()).collect();
    output::check_distinct(&inputs, &outputs)?;
    let episodes = match &s.input {
        Some(p) => read_episodes(p)?,
        None => two_context::episodes(s.episodes, s.seed),
    };
    if episodes.is_empty() {
        return Err(CliError::config("no episodes"));
    }
    let perceptions: Vec<Vec<f64>> = episodes.iter().map(|e| e.perception.clone()).collect();
    let mut config = LtmConfig::from_data(&perceptions)?;
    config.theta_act = s.theta_act.unwrap_or(config.theta_act);
    config.relevance = s.relevance.unwrap_or(config.relevance);
    let mut m = Ltm::new(config)?;
    for e in &episodes {
        m.observe(e)?;
    }
    let redescribed = if s.redescribe {
        let cfg = RedescribeConfig {
            epochs: s.epochs,
            lr: s.lr,
            hidden: s.hidden,
            min_episodes: s.min_episodes,
            seed: s.seed,
            ..RedescribeConfig::default()
        };
        memory::redescribe_all(&mut m, &cfg)?
    } else {
        Vec::new()
    };
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| m.write_to(w))?;
    if let Some(path) = &s.activations {
        let (x, y, fill) = map_extent(&perceptions)?;
        output::write_with_header(path, &prov, |w| m.write_activation_csv(w, x, y, s.resolution, &fill))?;
    }
    let mut summary = format!(
        "p_nodes={} c_nodes={} redescribed={} mode_agreement={}",
        m.p_nodes.len(),
        m.c_nodes.len(),
        redescribed.len(),
        memory::mode_agreement(&m)
    );
    if s.input.is_none() && s.held_out > 0 {
        let probes = two_context::held_out(s.held_out, s.seed);
        let mut correct = 0;
        for p in &probes {
            let best = m.retrieve(p)?.first().map(|r| r.policy);
            correct += usize::from(best == Some(two_context::correct_policy(p)));
        }
        summary.push_str(&format!(" retrieval_accuracy={}", correct as f64 / probes.len() as f64));
    }
    println!("{summary}");
    Ok(())
}

/// Grid ranges over the first two dimensions, 10% wider than the data, and
/// the mean of any further dimensions.
fn map_extent(points: &[Vec<f64>]) -> CliResult<((f64, f64), (f64, f64), Vec<f64>)> {
    let dim = points[0].len();
    if dim < 2 {
        return Err(CliError::config("an activation map needs perceptions of at least 2 dimensions"));
    }
    let range = |j: usize| {
        let lo = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-9);
        (lo - pad, hi + pad)
    };
    let fill = (2..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / points.len() as f64)
        .collect();
    Ok((range(0), range(1), fill))
}
