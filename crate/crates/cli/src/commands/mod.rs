pub mod adapt;
pub mod common;
pub mod gan;
pub mod ltm;
pub mod repertoire;
pub mod social;
pub mod srl;
pub mod transfer;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};
use crate::settings::ConfigFile;

/// What every command needs besides its own flags.
pub struct Context {
    pub file: ConfigFile,
    pub jobs: Option<usize>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let jobs = cli.jobs.map(|j| j as usize);
    let ctx = Context { file, jobs };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let name = cli.command.name();
    pool.install(|| match cli.command {
        Command::Qd(f) => repertoire::qd(name, &f, &ctx),
        Command::Baseline(f) => repertoire::baseline(name, &f, &ctx),
        Command::Adapt(f) => adapt::adapt(name, &f, &ctx),
        Command::Probe(f) => adapt::probe(name, &f, &ctx),
        Command::GanTrain(f) => gan::train(name, &f, &ctx),
        Command::GanEval(f) => gan::eval(name, &f, &ctx),
        Command::SrlCollect(f) => srl::collect(name, &f, &ctx),
        Command::SrlTrain(f) => srl::train(name, &f, &ctx),
        Command::SrlEval(f) => srl::eval(name, &f, &ctx),
        Command::Transfer(f) => transfer::transfer(name, &f, &ctx),
        Command::Ltm(f) => ltm::ltm(name, &f, &ctx),
        Command::Social(f) => social::social(name, &f, &ctx),
    })
}
