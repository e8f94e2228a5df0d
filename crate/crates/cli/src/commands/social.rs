use std::path::{Path, PathBuf};

use clap::Args;
use dream_core::qd::QdConfig;
use dream_core::social::{self, Acceptance, GroupMetrics, Society, Topology};
use serde::{Deserialize, Serialize};

use super::common::{make_env, required, save_archive, EnvFlags};
use super::Context;
use crate::error::{CliError, CliResult, FileContext};
use crate::output::{self, Provenance};
use crate::settings::resolve;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SocialFlags {
    #[command(flatten)]
    #[serde(flatten)]
    pub env: EnvFlags,
    #[arg(long)]
    pub agents: Option<usize>,
    /// `full`, `isolated`, or an edge-list file with one "src dst" per line.
    #[arg(long)]
    pub topology: Option<String>,
    /// Skills offered along each edge per round.
    #[arg(long)]
    pub offer: Option<usize>,
    /// How a receiver picks among an offered batch.
    #[arg(long, value_parser = ["proportional", "best-only"])]
    pub acceptance: Option<String>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Random controllers each agent starts from.
    #[arg(long)]
    pub initial: Option<usize>,
    /// QD children per agent per round.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub sigma_mut: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-round group metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for the final agent archives (agent-<i>.jsonl).
    #[arg(long)]
    pub archives: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SocialSettings {
    pub env: String,
    pub env_config: Option<PathBuf>,
    pub agents: usize,
    pub topology: String,
    pub offer: usize,
    pub acceptance: Acceptance,
    pub rounds: usize,
    pub initial: usize,
    pub batch: usize,
    pub sigma_mut: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub archives: Option<PathBuf>,
}

impl Default for SocialSettings {
    fn default() -> Self {
        let q = QdConfig::default();
        Self {
            env: "throw".into(),
            env_config: None,
            agents: 4,
            topology: "full".into(),
            offer: 4,
            acceptance: Acceptance::Proportional,
            rounds: 300,
            initial: q.initial,
            batch: q.batch,
            sigma_mut: q.sigma_mut,
            seed: 0,
            out: None,
            archives: None,
        }
    }
}

fn topology(spec: &str, n: usize, offer: usize) -> CliResult<Topology> {
    match spec {
        "full" => Ok(Topology::fully_connected(n, offer)),
        "isolated" => Ok(Topology::isolated(n, offer)),
        path => {
            let p = Path::new(path);
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Topology::parse(&text, n, offer).in_file(p)
        }
    }
}

pub fn social(name: &str, flags: &SocialFlags, ctx: &Context) -> CliResult<()> {
    let s: SocialSettings = resolve(name, flags, &ctx.file)?;
    let out = required(&s.out, "out")?;
    let topo = topology(&s.topology, s.agents, s.offer)?;
    let archive_paths: Vec<PathBuf> = match &s.archives {
        Some(dir) => (0..s.agents).map(|i| dir.join(format!("agent-{i}.jsonl"))).collect(),
        None => Vec::new(),
    };
    let mut inputs: Vec<&Path> = s.env_config.iter().map(|p| p.as_path()).collect();
    if !matches!(s.topology.as_str(), "full" | "isolated") {
        inputs.push(Path::new(&s.topology));
    }
    let mut outputs = vec![out.as_path()];
    outputs.extend(archive_paths.iter().map(|p| p.as_path()));
    output::check_distinct(&inputs, &outputs)?;
    let env = make_env(Some(&s.env), s.env_config.as_deref())?;
    let qd = QdConfig {
        generations: 0,
        batch: s.batch,
        initial: s.initial,
        sigma_mut: s.sigma_mut,
        seed: s.seed,
    };
    qd.validate()?;
    let mut society = Society::new(&env, &[qd], topo, s.acceptance, s.seed)?;
    let rows = social::run_society(&mut society, &env, s.rounds)?;
    let prov = Provenance::new(name, s.seed, &s, ctx.jobs);
    output::write_with_header(&out, &prov, |w| GroupMetrics::write_csv(&rows, w))?;
    for (agent, path) in society.agents.iter().zip(&archive_paths) {
        save_archive(agent.archive(), path, &prov)?;
    }
    if let Some(last) = rows.last() {
        println!(
            "round={} group_coverage={} diversity={} max_best_quality={}",
            last.round,
            last.group_coverage,
            last.diversity,
            last.max_best_quality()
        );
    }
    Ok(())
}
