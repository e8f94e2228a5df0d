//! Quality-diversity search over an environment's controller space, the
//! uniform-random baseline, and coverage metrics.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{ControllerParams, Skill};
use crate::repertoire::Archive;
use crate::rng;
use crate::sim::{Environment, RealityGap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdConfig {
    pub generations: usize,
    pub batch: usize,
    /// Mutation standard deviation as a fraction of each parameter's range.
    pub sigma_mut: f64,
    pub initial: usize,
    pub seed: u64,
}

impl Default for QdConfig {
    fn default() -> Self {
        Self {
            generations: 200,
            batch: 32,
            sigma_mut: 0.02,
            initial: 500,
            seed: 0,
        }
    }
}

impl QdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.initial == 0 {
            return Err(Error::Parameter("batch and initial count must be positive".into()));
        }
        if !(self.sigma_mut > 0.0 && self.sigma_mut <= 1.0) {
            return Err(Error::Parameter(format!("sigma_mut must lie in (0, 1], got {}", self.sigma_mut)));
        }
        Ok(())
    }

    pub fn total_evaluations(&self) -> usize {
        self.initial + self.generations * self.batch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub generation: usize,
    pub evaluations: usize,
    pub archive_size: usize,
    pub coverage: f64,
    pub best_quality: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<GenerationMetrics>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str = "generation,evaluations,archive_size,coverage,best_quality";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.generation, r.evaluations, r.archive_size, r.coverage, r.best_quality
            )?;
        }
        Ok(())
    }
}

/// Evaluate candidates (possibly concurrently) and offer them to the archive
/// in candidate order. Invalid outcomes consume budget but are dropped.
/// Returns the number of stored candidates.
fn evaluate_and_insert(env: &dyn Environment, archive: &mut Archive, candidates: Vec<ControllerParams>, seeds: &[u64]) -> Result<usize> {
    let nominal = RealityGap::nominal();
    let evaluated: Vec<Result<Option<Skill>>> = candidates
        .into_par_iter()
        .zip(seeds.par_iter())
        .map(|(theta, &seed)| {
            let outcome = env.execute(&nominal, &theta)?;
            if !outcome.valid {
                return Ok(None);
            }
            let quality = env.quality(&theta, &outcome, seed);
            Ok(Some(Skill {
                params: theta,
                outcome,
                quality,
            }))
        })
        .collect();
    let mut stored = 0;
    for e in evaluated {
        if let Some(skill) = e? {
            if archive.try_insert(skill)?.stored() {
                stored += 1;
            }
        }
    }
    Ok(stored)
}

fn uniform_candidates(env: &dyn Environment, n: usize, seed: u64) -> Result<Vec<ControllerParams>> {
    let bounds = env.bounds();
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| ControllerParams::new(bounds.sample(&mut r), bounds.clone()))
        .collect()
}

fn eval_seeds(seed: u64, start: usize, n: usize) -> Vec<u64> {
    (start..start + n).map(|i| rng::derive(seed, i as u64)).collect()
}

fn metrics(archive: &Archive, generation: usize, evaluations: usize) -> GenerationMetrics {
    GenerationMetrics {
        generation,
        evaluations,
        archive_size: archive.len(),
        coverage: coverage(archive, archive.r_novel()),
        best_quality: archive.best_quality().unwrap_or(f64::NAN),
    }
}

/// A QD run that can be advanced one generation at a time.
#[derive(Debug, Clone)]
pub struct QdSearch {
    pub archive: Archive,
    pub config: QdConfig,
    pub evaluations: usize,
    pub generation: usize,
    sigmas: Vec<f64>,
    eval_seed: u64,
    rng: rng::Rng,
}

impl QdSearch {
    /// Seed the archive with uniform random controllers.
    pub fn new(env: &dyn Environment, config: &QdConfig) -> Result<Self> {
        config.validate()?;
        let mut archive = Archive::for_env(env, config.seed);
        let init_seed = rng::derive(config.seed, 0);
        let eval_seed = rng::derive(config.seed, 1);
        let candidates = uniform_candidates(env, config.initial, init_seed)?;
        evaluate_and_insert(env, &mut archive, candidates, &eval_seeds(eval_seed, 0, config.initial))?;
        if archive.is_empty() {
            return Err(Error::NoValidCandidates(config.initial));
        }
        let bounds = env.bounds();
        Ok(Self {
            archive,
            config: config.clone(),
            evaluations: config.initial,
            generation: 0,
            sigmas: (0..bounds.dim()).map(|i| config.sigma_mut * bounds.range(i)).collect(),
            eval_seed,
            rng: rng::rng(rng::derive(config.seed, 2)),
        })
    }

    /// Mutate `batch` uniformly chosen archive members and offer the
    /// offspring back.
    pub fn step(&mut self, env: &dyn Environment) -> Result<()> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let r = &mut self.rng;
        let archive = &self.archive;
        let candidates: Vec<ControllerParams> = (0..self.config.batch)
            .map(|_| {
                let parent = &archive.skills()[r.random_range(0..archive.len())].params;
                let child: Vec<f64> = parent
                    .values()
                    .iter()
                    .zip(&self.sigmas)
                    .map(|(v, s)| v + s * normal.sample(r))
                    .collect();
                parent.with_values(child)
            })
            .collect::<Result<_>>()?;
        let seeds = eval_seeds(self.eval_seed, self.evaluations, self.config.batch);
        evaluate_and_insert(env, &mut self.archive, candidates, &seeds)?;
        self.evaluations += self.config.batch;
        self.generation += 1;
        Ok(())
    }

    pub fn metrics(&self) -> GenerationMetrics {
        metrics(&self.archive, self.generation, self.evaluations)
    }
}

/// Seed the archive with uniform random controllers, then repeatedly mutate
/// uniformly chosen archive members and offer the offspring back.
pub fn run_qd(env: &dyn Environment, config: &QdConfig) -> Result<(Archive, MetricsLog)> {
    let mut search = QdSearch::new(env, config)?;
    let mut log = MetricsLog::default();
    log.rows.push(search.metrics());
    for _ in 0..config.generations {
        search.step(env)?;
        log.rows.push(search.metrics());
    }
    Ok((search.archive, log))
}

/// Archive built from `n_evals` uniform samples under the same insertion rule.
pub fn random_baseline(env: &dyn Environment, n_evals: usize, seed: u64, r_novel: f64) -> Result<Archive> {
    if n_evals == 0 {
        return Err(Error::Parameter("random baseline needs at least one evaluation".into()));
    }
    let mut meta = Archive::for_env(env, seed).meta().clone();
    meta.r_novel = r_novel;
    let mut archive = Archive::new(meta, env.bounds())?;
    let candidates = uniform_candidates(env, n_evals, rng::derive(seed, 0))?;
    evaluate_and_insert(env, &mut archive, candidates, &eval_seeds(rng::derive(seed, 1), 0, n_evals))?;
    Ok(archive)
}

/// Fraction of grid cells (side `cell`) over the archive's outcome bounding
/// box that hold at least one skill.
pub fn coverage(archive: &Archive, cell: f64) -> f64 {
    coverage_of(archive.skills().iter().map(|s| s.outcome.values.as_slice()), cell)
}

/// [`coverage`] of a bare set of outcome points.
pub fn coverage_of<'a, I>(points: I, cell: f64) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let points: Vec<&[f64]> = points.into_iter().collect();
    if points.is_empty() || !(cell > 0.0) {
        return 0.0;
    }
    let d = points[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &points {
        for (i, v) in p.iter().enumerate() {
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
    }
    // Cells are anchored at the box minimum; a small slack keeps points that
    // sit exactly on a lattice line from spilling into an extra cell.
    let slack = 1e-9 * cell;
    let counts: Vec<i64> = (0..d)
        .map(|i| (((hi[i] - lo[i]) / cell + slack).floor() as i64 + 1).max(1))
        .collect();
    let total: f64 = counts.iter().map(|&c| c as f64).product();
    let occupied: HashSet<Vec<i64>> = points
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, v)| (((v - lo[i]) / cell + slack).floor() as i64).min(counts[i] - 1))
                .collect()
        })
        .collect();
    occupied.len() as f64 / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathkit::Matrix;
    use crate::motion::{Outcome, ParamBounds};
    use crate::repertoire::ArchiveMeta;
    use crate::sim::linear::LinearEnv;
    use std::sync::Arc;

    fn linear_env() -> LinearEnv {
        LinearEnv::random(2, 4, &mut rng::rng(1))
    }

    fn config(generations: usize) -> QdConfig {
        QdConfig {
            generations,
            batch: 8,
            sigma_mut: 0.1,
            initial: 20,
            seed: 3,
        }
    }

    #[test]
    fn zero_generations_equal_the_initial_set() {
        let env = linear_env();
        let (a, log) = run_qd(&env, &config(0)).unwrap();
        let b = random_baseline(&env, 20, 3, env.novelty_radius()).unwrap();
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.rows[0].evaluations, 20);
        // Same candidates are drawn by the baseline with the same seed.
        assert_eq!(a.skills(), b.skills());
    }

    #[test]
    fn runs_are_deterministic_and_sizes_monotone() {
        let env = linear_env();
        let (a, log) = run_qd(&env, &config(30)).unwrap();
        let (b, _) = run_qd(&env, &config(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(log.rows.last().unwrap().evaluations, config(30).total_evaluations());
        assert!(log.rows.windows(2).all(|w| w[1].archive_size >= w[0].archive_size));
        assert!(a.skills().iter().all(|s| s.params.is_within_bounds()));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let env = linear_env();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_qd(&env, &config(10)).unwrap());
        let b = four.install(|| run_qd(&env, &config(10)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_collapses_duplicates() {
        // Constant map: every controller lands on the same outcome.
        let bounds = ParamBounds::uniform(3, -1.0, 1.0);
        let env = LinearEnv::new(Matrix::zeros(2, 3), vec![0.5, 0.5], bounds).unwrap();
        let a = random_baseline(&env, 50, 0, 0.1).unwrap();
        assert_eq!(a.len(), 1);
        // The survivor has the best quality among all samples.
        let samples = uniform_candidates(&env, 50, rng::derive(0, 0)).unwrap();
        let best = samples
            .iter()
            .map(|t| env.quality(t, &Outcome::valid(vec![0.5, 0.5]), 0))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.skills()[0].quality, best);
        assert_eq!(random_baseline(&env, 1, 0, 0.1).unwrap().len(), 1);
    }

    fn lattice_archive(n: usize, pitch: f64) -> Archive {
        let meta = ArchiveMeta {
            env: "test".into(),
            param_dim: 1,
            d: 2,
            r_novel: pitch * 0.5,
            seed: 0,
            extra: Default::default(),
        };
        let bounds = Arc::new(ParamBounds::uniform(1, -1.0, 1.0));
        let mut a = Archive::new(meta, bounds.clone()).unwrap();
        for i in 0..n {
            for j in 0..n {
                a.try_insert(Skill {
                    params: ControllerParams::new(vec![0.0], bounds.clone()).unwrap(),
                    outcome: Outcome::valid(vec![i as f64 * pitch, j as f64 * pitch]),
                    quality: 0.0,
                })
                .unwrap();
            }
        }
        a
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&lattice_archive(10, 0.1), 0.1), 1.0);
        assert_eq!(coverage(&lattice_archive(1, 0.1), 0.1), 1.0);
        // Two skills in the same cell count once: a 2x1 lattice at half the
        // cell size occupies the single cell of its bounding box.
        let a = lattice_archive(2, 0.1);
        assert_eq!(coverage(&a, 0.5), 1.0);
        // Corners only of a 3x3 box.
        let mut corners = lattice_archive(1, 0.1).empty_like();
        let bounds = corners.bounds().clone();
        for (x, y) in [(0.0, 0.0), (0.2, 0.2)] {
            corners
                .try_insert(Skill {
                    params: ControllerParams::new(vec![0.0], bounds.clone()).unwrap(),
                    outcome: Outcome::valid(vec![x, y]),
                    quality: 0.0,
                })
                .unwrap();
        }
        assert!((coverage(&corners, 0.1) - 2.0 / 9.0).abs() < 1e-12);
        assert_eq!(coverage(&corners.empty_like(), 0.1), 0.0);
    }

    #[test]
    fn csv_has_expected_columns() {
        let env = linear_env();
        let (_, log) = run_qd(&env, &config(2)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MetricsLog::CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("2,36,"));
    }
}
