use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{adapt, gan, ltm, repertoire, social, srl, transfer};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing or malformed argument)
  3  i/o error (unreadable input, unwritable output)
  4  parse error (malformed input or config file)
  5  configuration error (inconsistent budgets, dimensions or settings)
  6  runtime failure (mode collapse, divergence, empty archive)

Errors are reported on stderr as one JSON line: {\"error\":KIND,\"code\":N,\"message\":TEXT}.
Settings are resolved as flags > [command] table of --config > defaults.";

#[derive(Debug, Parser)]
#[command(name = "dream", version, about = "Skill repertoires and their redescriptions, one pipeline stage per subcommand", after_help = EXIT_CODES)]
pub struct Cli {
    /// Worker threads for parallel evaluations; results do not depend on it.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,

    /// TOML file with one [subcommand] table of settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a skill repertoire by quality-diversity search.
    Qd(repertoire::QdFlags),
    /// Build a repertoire from uniformly random controllers.
    Baseline(repertoire::BaselineFlags),
    /// Adapt a repertoire to one target under a reality gap.
    Adapt(adapt::AdaptFlags),
    /// Adapt to many sampled reachable targets and summarize.
    Probe(adapt::ProbeFlags),
    /// Train a target-conditional generator over repertoire controllers.
    GanTrain(gan::TrainFlags),
    /// k-of-N hit probabilities with obstacles.
    GanEval(gan::EvalFlags),
    /// Record random-policy episodes in the toy reaching world.
    SrlCollect(srl::CollectFlags),
    /// Train the split state representation model.
    SrlTrain(srl::TrainFlags),
    /// Ground-truth correlation of a trained and a random encoder.
    SrlEval(srl::EvalFlags),
    /// Tucker-factorized transfer against scratch and fine-tuning baselines.
    Transfer(transfer::TransferFlags),
    /// Build, redescribe and query the associative long-term memory.
    Ltm(ltm::LtmFlags),
    /// Agents learning repertoires and exchanging skills.
    Social(social::SocialFlags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Qd(_) => "qd",
            Command::Baseline(_) => "baseline",
            Command::Adapt(_) => "adapt",
            Command::Probe(_) => "probe",
            Command::GanTrain(_) => "gan-train",
            Command::GanEval(_) => "gan-eval",
            Command::SrlCollect(_) => "srl-collect",
            Command::SrlTrain(_) => "srl-train",
            Command::SrlEval(_) => "srl-eval",
            Command::Transfer(_) => "transfer",
            Command::Ltm(_) => "ltm",
            Command::Social(_) => "social",
        }
    }
}
