//! Local linear models over the repertoire: Jacobian estimation from
//! neighboring skills, generalization to new targets, and iterative
//! correction under a reality gap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mathkit::svd::{default_tolerance, least_squares, pinv, svd};
use crate::mathkit::Matrix;
use crate::motion::{euclidean, ControllerParams, Outcome, Skill};
use crate::repertoire::Archive;
use crate::rng;
use crate::sim::{Environment, RealityGap};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub anchor_index: usize,
    pub theta_c: ControllerParams,
    pub b_c: Vec<f64>,
    /// `d x D` sensitivity of the outcome to the controller.
    pub jacobian: Matrix,
    /// `D x d` Moore-Penrose pseudo-inverse of `jacobian`.
    pub pinv: Matrix,
    pub k_used: usize,
    pub ridge: f64,
    pub condition: f64,
}

/// Fit `db = J dtheta` by ridge least squares over the `k` parameter-space
/// neighbors of the skill whose outcome is nearest to `target`. Differences
/// are taken relative to that anchor skill.
pub fn fit_local_model(archive: &Archive, target: &[f64], k: usize, ridge: f64) -> Result<LocalModel> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 neighbors, got {k}")));
    }
    if archive.len() < 2 {
        return Err(Error::Parameter(format!(
            "archive holds {} skills; a local model needs at least 2",
            archive.len()
        )));
    }
    let anchor_index = archive.nearest_outcome_index(target)?;
    let anchor = &archive.skills()[anchor_index];
    let neighbors = archive.knn_params_indices(anchor.params.values(), k)?;
    let k_used = neighbors.len();

    let dim = archive.meta().param_dim;
    let d = archive.meta().d;
    let others: Vec<&Skill> = neighbors
        .iter()
        .filter(|&&i| i != anchor_index)
        .map(|&i| &archive.skills()[i])
        .collect();
    let mut dtheta = Matrix::zeros(others.len(), dim);
    let mut db = Matrix::zeros(others.len(), d);
    for (r, s) in others.iter().enumerate() {
        for (c, (a, b)) in s.params.values().iter().zip(anchor.params.values()).enumerate() {
            dtheta[(r, c)] = a - b;
        }
        for (c, (a, b)) in s.outcome.values.iter().zip(&anchor.outcome.values).enumerate() {
            db[(r, c)] = a - b;
        }
    }
    if dtheta.max_abs() == 0.0 {
        return Err(Error::Degenerate("all neighbors coincide with the anchor".into()));
    }
    let fit = least_squares(&dtheta, &db, ridge)?;
    let jacobian = fit.x.transpose();
    if !jacobian.is_finite() {
        return Err(Error::Degenerate("non-finite Jacobian estimate".into()));
    }
    let s = svd(&jacobian).s;
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { s[0] / smin } else { f64::INFINITY };
    let pinv = pinv(&jacobian, default_tolerance(&jacobian));
    Ok(LocalModel {
        anchor_index,
        theta_c: anchor.params.clone(),
        b_c: anchor.outcome.values.clone(),
        jacobian,
        pinv,
        k_used,
        ridge,
        condition,
    })
}

impl LocalModel {
    /// Parameter step `J^+ delta_b`.
    pub fn step(&self, delta_b: &[f64]) -> Result<Vec<f64>> {
        self.pinv.matvec(delta_b)
    }
}

/// Candidate controller for `target`, and whether clamping to the bounds
/// altered it.
pub fn generalize(model: &LocalModel, target: &[f64]) -> Result<(ControllerParams, bool)> {
    check_dim("target", model.b_c.len(), target.len())?;
    let delta: Vec<f64> = target.iter().zip(&model.b_c).map(|(t, b)| t - b).collect();
    let step = model.step(&delta)?;
    let raw: Vec<f64> = model.theta_c.values().iter().zip(&step).map(|(a, s)| a + s).collect();
    let clamped = model.theta_c.with_values(raw.clone())?;
    let was_clamped = clamped.values() != raw.as_slice();
    Ok((clamped, was_clamped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Success radius around the target, in outcome units.
    pub epsilon: f64,
    pub max_iters: usize,
    pub k: usize,
    pub ridge: f64,
    /// Seed for the quality evaluation of adapted skills.
    pub seed: u64,
}

impl AdaptConfig {
    /// Defaults for an environment: K = D + 1, ridge 1e-2, 4 corrections,
    /// epsilon = the environment's tolerance.
    pub fn for_env(env: &dyn Environment) -> Self {
        Self {
            epsilon: env.tolerance(),
            max_iters: 4,
            k: env.param_dim() + 1,
            ridge: 1e-2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.max_iters == 0 {
            return Err(Error::Parameter("epsilon must be positive and max_iters at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptAttempt {
    pub theta: Vec<f64>,
    pub outcome: Vec<f64>,
    pub valid: bool,
    /// `||outcome - target||`; absent for invalid executions.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdaptStatus {
    HitFirstTry,
    /// Number of corrections applied before the target was hit.
    Adapted(usize),
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub target: Vec<f64>,
    pub iterations: Vec<AdaptAttempt>,
    pub status: AdaptStatus,
    /// Whether the first candidate had to be clamped to the bounds.
    pub clamped: bool,
}

impl AdaptReport {
    pub fn succeeded(&self) -> bool {
        self.status != AdaptStatus::Failed
    }
}

fn attempt(env: &dyn Environment, gap: &RealityGap, theta: &ControllerParams, target: &[f64]) -> Result<(AdaptAttempt, Outcome)> {
    let outcome = env.execute(gap, theta)?;
    let error = outcome.valid.then(|| euclidean(&outcome.values, target));
    Ok((
        AdaptAttempt {
            theta: theta.values().to_vec(),
            outcome: outcome.values.clone(),
            valid: outcome.valid,
            error,
        },
        outcome,
    ))
}

/// Execute the generalized candidate under `gap`, then apply up to
/// `max_iters` corrections `theta += J^+ (b* - b)` reusing the local model.
/// An invalid execution counts as a failed attempt and the next attempt
/// retries from the last valid controller with half the previous step.
/// A successful controller is offered to the archive with its executed
/// outcome.
pub fn adapt_to_target(
    archive: &mut Archive,
    env: &dyn Environment,
    gap: &RealityGap,
    target: &[f64],
    config: &AdaptConfig,
) -> Result<AdaptReport> {
    config.validate()?;
    let model = fit_local_model(archive, target, config.k, config.ridge)?;
    let (first, clamped) = generalize(&model, target)?;

    let mut iterations = Vec::new();
    // Last valid controller; the anchor until something executes validly.
    let mut base = model.theta_c.clone();
    let initial_step: Vec<f64> = first.values().iter().zip(base.values()).map(|(a, b)| a - b).collect();
    let mut step = initial_step;
    let mut theta = first;
    let mut status = AdaptStatus::Failed;
    let mut hit: Option<(ControllerParams, Outcome)> = None;

    for n in 0..=config.max_iters {
        let (rec, outcome) = attempt(env, gap, &theta, target)?;
        let ok = rec.error.is_some_and(|e| e <= config.epsilon);
        iterations.push(rec);
        if ok {
            status = if n == 0 { AdaptStatus::HitFirstTry } else { AdaptStatus::Adapted(n) };
            hit = Some((theta.clone(), outcome));
            break;
        }
        if n == config.max_iters {
            break;
        }
        if outcome.valid {
            base = theta.clone();
            let delta: Vec<f64> = target.iter().zip(&outcome.values).map(|(t, b)| t - b).collect();
            step = model.step(&delta)?;
        } else {
            for s in &mut step {
                *s *= 0.5;
            }
        }
        let next: Vec<f64> = base.values().iter().zip(&step).map(|(a, s)| a + s).collect();
        theta = base.with_values(next)?;
    }

    if let Some((theta, outcome)) = hit {
        let quality = env.quality(&theta, &outcome, config.seed);
        archive.try_insert(Skill {
            params: theta,
            outcome,
            quality,
        })?;
    }
    Ok(AdaptReport {
        target: target.to_vec(),
        iterations,
        status,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub n_targets: usize,
    pub hit_first_try: usize,
    /// `adapted[n - 1]` targets were hit after exactly `n` corrections.
    pub adapted: Vec<usize>,
    pub failed: usize,
    /// Fraction of all targets eventually hit.
    pub success_rate: f64,
    /// Among targets missed on the first try, the fraction later hit.
    pub adapted_fraction: f64,
    /// Per-target error-free statuses, in target order.
    pub statuses: Vec<AdaptStatus>,
    pub targets: Vec<Vec<f64>>,
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_hull(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// Draw `n` targets uniformly from the convex hull of the archive's
/// outcomes (the bounding box when `d != 2`), keeping only points within
/// `reach` of some stored outcome so every target is demonstrably reachable.
pub fn sample_targets(archive: &Archive, n: usize, reach: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let d = archive.meta().d;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in archive.skills() {
        for (i, v) in s.outcome.values.iter().enumerate() {
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
    }
    let hull = if d == 2 {
        let pts: Vec<[f64; 2]> = archive.skills().iter().map(|s| [s.outcome.values[0], s.outcome.values[1]]).collect();
        Some(convex_hull(&pts))
    } else {
        None
    };
    let mut r = rng::rng(seed);
    let mut targets = Vec::with_capacity(n);
    let max_draws = 10_000 * n.max(1);
    for _ in 0..max_draws {
        if targets.len() == n {
            break;
        }
        let p: Vec<f64> = (0..d)
            .map(|i| if hi[i] > lo[i] { r.random_range(lo[i]..=hi[i]) } else { lo[i] })
            .collect();
        if let Some(h) = &hull {
            if h.len() >= 3 && !inside_hull(h, [p[0], p[1]]) {
                continue;
            }
        }
        let near = archive.nearest_outcome(&p)?.outcome.distance(&p);
        if near <= reach {
            targets.push(p);
        }
    }
    if targets.len() < n {
        // Degenerate hulls (collinear or single outcomes): stored outcomes are
        // reachable by construction.
        let skills = archive.skills();
        while targets.len() < n {
            targets.push(skills[r.random_range(0..skills.len())].outcome.values.clone());
        }
    }
    Ok(targets)
}

/// Adapt to `n_targets` sampled targets, each starting from the same
/// archive, and summarize outcomes by iteration count. Targets are
/// processed in parallel; results do not depend on the thread count.
pub fn reachability_probe(
    archive: &Archive,
    env: &dyn Environment,
    gap: &RealityGap,
    n_targets: usize,
    seed: u64,
    config: &AdaptConfig,
) -> Result<ProbeSummary> {
    let reach = env.novelty_radius().max(config.epsilon);
    let targets = sample_targets(archive, n_targets, reach, seed)?;
    probe_targets(archive, env, gap, targets, config)
}

pub fn probe_targets(
    archive: &Archive,
    env: &dyn Environment,
    gap: &RealityGap,
    targets: Vec<Vec<f64>>,
    config: &AdaptConfig,
) -> Result<ProbeSummary> {
    let reports: Vec<Result<AdaptReport>> = targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut local = archive.clone();
            let cfg = AdaptConfig {
                seed: rng::derive(config.seed, i as u64),
                ..config.clone()
            };
            adapt_to_target(&mut local, env, gap, t, &cfg)
        })
        .collect();
    let mut statuses = Vec::with_capacity(reports.len());
    for r in reports {
        statuses.push(r?.status);
    }
    let mut adapted = vec![0; config.max_iters];
    let (mut first, mut failed) = (0, 0);
    for s in &statuses {
        match s {
            AdaptStatus::HitFirstTry => first += 1,
            AdaptStatus::Adapted(n) => adapted[n - 1] += 1,
            AdaptStatus::Failed => failed += 1,
        }
    }
    let n = statuses.len();
    let later: usize = adapted.iter().sum();
    let missed = n - first;
    Ok(ProbeSummary {
        n_targets: n,
        hit_first_try: first,
        adapted,
        failed,
        success_rate: if n == 0 { 0.0 } else { (first + later) as f64 / n as f64 },
        adapted_fraction: if missed == 0 { 1.0 } else { later as f64 / missed as f64 },
        statuses,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::ParamBounds;
    use crate::qd::{run_qd, QdConfig};
    use crate::repertoire::ArchiveMeta;
    use crate::sim::linear::LinearEnv;
    use std::sync::Arc;

    /// Archive of `n` random skills of a linear environment.
    fn linear_archive(env: &LinearEnv, n: usize, seed: u64) -> Archive {
        let mut a = Archive::for_env(env, seed);
        let mut r = rng::rng(seed);
        let b = env.bounds();
        while a.len() < n {
            // Interior samples keep neighbors away from the clamp.
            let v: Vec<f64> = (0..b.dim()).map(|_| r.random_range(-0.5..0.5)).collect();
            let theta = env.params(v).unwrap();
            let outcome = env.execute_nominal(&theta).unwrap();
            let q = env.quality(&theta, &outcome, 0);
            a.try_insert(Skill {
                params: theta,
                outcome,
                quality: q,
            })
            .unwrap();
        }
        a
    }

    #[test]
    fn recovers_linear_jacobian() {
        let env = LinearEnv::random(2, 15, &mut rng::rng(2));
        let a = linear_archive(&env, 60, 4);
        let m = fit_local_model(&a, &[0.1, 0.2], 16, 0.0).unwrap();
        assert_eq!(m.k_used, 16);
        assert!(m.jacobian.sub(&env.map).unwrap().frobenius() < 1e-6);
        // J J^+ = I for a full-row-rank J.
        let jj = m.jacobian.matmul(&m.pinv).unwrap();
        assert!(jj.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn generalize_hits_interior_linear_targets() {
        let env = LinearEnv::random(2, 15, &mut rng::rng(6));
        let a = linear_archive(&env, 40, 1);
        let anchor = a.skills()[3].outcome.values.clone();
        let m = fit_local_model(&a, &anchor, 16, 0.0).unwrap();
        let (same, clamped) = generalize(&m, &m.b_c).unwrap();
        assert!(!clamped);
        assert_eq!(same.values(), m.theta_c.values());
        let target = [anchor[0] + 0.05, anchor[1] - 0.03];
        let (theta, clamped) = generalize(&m, &target).unwrap();
        assert!(!clamped);
        let got = env.execute_nominal(&theta).unwrap();
        assert!(got.distance(&target) < 1e-6);
        let (far, clamped) = generalize(&m, &[1e6, -1e6]).unwrap();
        assert!(clamped);
        assert!(far.is_within_bounds());
    }

    #[test]
    fn degenerate_and_small_archives_are_errors() {
        let bounds = Arc::new(ParamBounds::uniform(2, -1.0, 1.0));
        let meta = ArchiveMeta {
            env: "t".into(),
            param_dim: 2,
            d: 2,
            r_novel: 0.01,
            seed: 0,
            extra: Default::default(),
        };
        let mut a = Archive::new(meta, bounds.clone()).unwrap();
        let p = ControllerParams::new(vec![0.5, 0.5], bounds.clone()).unwrap();
        for b in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] {
            a.try_insert(Skill {
                params: p.clone(),
                outcome: Outcome::valid(b.to_vec()),
                quality: 0.0,
            })
            .unwrap();
        }
        assert!(matches!(fit_local_model(&a, &[0.0, 0.0], 3, 0.0), Err(Error::Degenerate(_))));
        let single = {
            let mut s = a.empty_like();
            s.try_insert(a.skills()[0].clone()).unwrap();
            s
        };
        assert!(fit_local_model(&single, &[0.0, 0.0], 2, 0.0).is_err());
        // K larger than the archive uses everything.
        let env = LinearEnv::random(2, 3, &mut rng::rng(0));
        let la = linear_archive(&env, 5, 0);
        assert_eq!(fit_local_model(&la, &[0.0, 0.0], 50, 0.0).unwrap().k_used, 5);
    }

    #[test]
    fn linear_gap_is_crossed_in_one_step() {
        let env = LinearEnv::random(2, 15, &mut rng::rng(8));
        let a = linear_archive(&env, 80, 2);
        let gap = RealityGap::uniform(1.0, 0.05, 15);
        let cfg = AdaptConfig {
            ridge: 0.0,
            ..AdaptConfig::for_env(&env)
        };
        for s in a.skills().iter().take(10) {
            let target: Vec<f64> = s.outcome.values.iter().map(|v| v + 0.02).collect();
            let mut work = a.clone();
            let rep = adapt_to_target(&mut work, &env, &gap, &target, &cfg).unwrap();
            assert_eq!(rep.status, AdaptStatus::Adapted(1), "{rep:?}");
            assert!(rep.iterations[1].error.unwrap() <= 1e-9);
            // Logged errors are recomputable from the logged outcomes.
            for it in &rep.iterations {
                assert_eq!(it.error.unwrap(), euclidean(&it.outcome, &target));
            }
        }
    }

    #[test]
    fn nominal_targets_at_stored_outcomes_hit_first_try() {
        let env = LinearEnv::random(2, 15, &mut rng::rng(1));
        let a = linear_archive(&env, 40, 5);
        let cfg = AdaptConfig::for_env(&env);
        let targets: Vec<Vec<f64>> = a.skills().iter().map(|s| s.outcome.values.clone()).collect();
        let s = probe_targets(&a, &env, &RealityGap::nominal(), targets, &cfg).unwrap();
        assert_eq!(s.hit_first_try, 40);
        assert_eq!(s.success_rate, 1.0);
    }

    #[test]
    fn probe_is_deterministic() {
        let env = crate::sim::EnvironmentSpec::throw();
        let cfg_qd = QdConfig {
            generations: 20,
            batch: 16,
            ..QdConfig::default()
        };
        let (a, _) = run_qd(&env, &cfg_qd).unwrap();
        let cfg = AdaptConfig::for_env(&env);
        let gap = RealityGap::uniform(1.1, 0.05, 5);
        let x = reachability_probe(&a, &env, &gap, 10, 3, &cfg).unwrap();
        let y = reachability_probe(&a, &env, &gap, 10, 3, &cfg).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.n_targets, 10);
    }

    #[test]
    fn hull_sampling_stays_inside() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2]];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 3);
        assert!(inside_hull(&h, [0.1, 0.1]));
        assert!(!inside_hull(&h, [0.8, 0.8]));
    }

    #[test]
    fn halved_step_after_invalid_attempt() {
        // Outcomes are invalid whenever theta[0] > 0.35; the first correction
        // overshoots into that region.
        struct Cliff(LinearEnv);
        impl Environment for Cliff {
            fn name(&self) -> &str {
                "cliff"
            }
            fn bounds(&self) -> Arc<ParamBounds> {
                self.0.bounds()
            }
            fn outcome_dim(&self) -> usize {
                1
            }
            fn execute(&self, gap: &RealityGap, theta: &ControllerParams) -> Result<Outcome> {
                if theta.values()[0] > 0.35 {
                    return Ok(Outcome::invalid(1));
                }
                self.0.execute(gap, theta)
            }
            fn quality(&self, _: &ControllerParams, _: &Outcome, _: u64) -> f64 {
                0.0
            }
            fn novelty_radius(&self) -> f64 {
                0.01
            }
            fn tolerance(&self) -> f64 {
                1e-3
            }
        }
        let lin = LinearEnv::new(Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![0.0], ParamBounds::uniform(1, -1.0, 1.0)).unwrap();
        let env = Cliff(lin);
        let mut a = Archive::for_env(&env, 0);
        for v in [0.0, 0.1] {
            let theta = ControllerParams::new(vec![v], env.bounds()).unwrap();
            let outcome = env.execute_nominal(&theta).unwrap();
            a.try_insert(Skill { params: theta, outcome, quality: 0.0 }).unwrap();
        }
        // Target 0.5 requires theta 0.5 which is invalid; the log must show
        // the step being halved from the last valid controller.
        let cfg = AdaptConfig {
            epsilon: 1e-3,
            max_iters: 3,
            k: 2,
            ridge: 0.0,
            seed: 0,
        };
        let gap = RealityGap::nominal();
        let rep = adapt_to_target(&mut a, &env, &gap, &[0.5], &cfg).unwrap();
        assert_eq!(rep.status, AdaptStatus::Failed);
        assert!(!rep.iterations[0].valid);
        let thetas: Vec<f64> = rep.iterations.iter().map(|i| i.theta[0]).collect();
        // Anchor 0.1: the full step lands on 0.5 (invalid), half of it on 0.3.
        assert!((thetas[0] - 0.5).abs() < 1e-12);
        assert!((thetas[1] - 0.3).abs() < 1e-12);
        assert!(rep.iterations[1].valid);
    }
}
