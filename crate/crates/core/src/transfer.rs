//! Policy transfer through a factorized knowledge base.
//!
//! Source policies are stacked layer by layer into 3-way tensors (slice `k`
//! is source `k`) and each tensor is Tucker-factorized. The factors and core
//! form a task-agnostic knowledge base; rows of the third-mode factor are the
//! task weight vectors. A new task is learned by alternating CMA-ES over its
//! weight vector and over the core entries.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkit::{cmaes_minimize, hosvd, Matrix, Tensor3, TuckerFactors};
use crate::rng;
use crate::sim::tasks::{transfer_task, TaskPolicy, TaskSpec, POLICY_SHAPES};

/// Source policies stacked per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStack {
    tensors: Vec<Tensor3>,
    n: usize,
}

impl PolicyStack {
    /// `policies[k][l]` is layer `l` of source `k`.
    pub fn from_layers(policies: &[Vec<Matrix>]) -> Result<Self> {
        if policies.len() < 2 {
            return Err(Error::Parameter(format!("need at least 2 source policies, got {}", policies.len())));
        }
        let shapes: Vec<(usize, usize)> = policies[0].iter().map(Matrix::shape).collect();
        for (k, p) in policies.iter().enumerate() {
            let s: Vec<(usize, usize)> = p.iter().map(Matrix::shape).collect();
            if s != shapes {
                return Err(Error::Parameter(format!("source {k} has layer shapes {s:?}, expected {shapes:?}")));
            }
        }
        let tensors = (0..shapes.len())
            .map(|l| Tensor3::stack(&policies.iter().map(|p| p[l].clone()).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tensors,
            n: policies.len(),
        })
    }

    pub fn from_policies(policies: &[TaskPolicy]) -> Result<Self> {
        Self::from_layers(&policies.iter().map(|p| p.layers().to_vec()).collect::<Vec<_>>())
    }

    pub fn n_sources(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[Tensor3] {
        &self.tensors
    }

    /// Ranks that keep every mode at full rank.
    pub fn full_ranks(&self) -> Vec<[usize; 3]> {
        self.tensors.iter().map(Tensor3::full_ranks).collect()
    }
}

/// Per-layer Tucker factors of a policy stack.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub layers: Vec<TuckerFactors>,
}

pub fn build_knowledge_base(stack: &PolicyStack, ranks: &[[usize; 3]]) -> Result<KnowledgeBase> {
    if ranks.len() != stack.layers().len() {
        return Err(Error::Parameter(format!(
            "{} rank triples for {} layers",
            ranks.len(),
            stack.layers().len()
        )));
    }
    let layers = stack
        .layers()
        .iter()
        .zip(ranks)
        .map(|(t, r)| hosvd(t, *r))
        .collect::<Result<Vec<_>>>()?;
    Ok(KnowledgeBase { layers })
}

impl KnowledgeBase {
    /// Length of a task weight vector: the per-layer vectors concatenated.
    pub fn weight_dim(&self) -> usize {
        self.layers.iter().map(|f| f.ranks()[2]).sum()
    }

    pub fn n_tasks(&self) -> usize {
        self.layers[0].factors[2].rows()
    }

    /// Weight vector of source task `k`.
    pub fn task_vector(&self, k: usize) -> Vec<f64> {
        self.layers.iter().flat_map(|f| f.slice_weight(k)).collect()
    }

    pub fn mean_task_vector(&self) -> Vec<f64> {
        let n = self.n_tasks() as f64;
        let mut m = vec![0.0; self.weight_dim()];
        for k in 0..self.n_tasks() {
            for (a, b) in m.iter_mut().zip(self.task_vector(k)) {
                *a += b / n;
            }
        }
        m
    }

    pub fn reconstruct(&self, weights: &[f64]) -> Result<Vec<Matrix>> {
        crate::error::check_dim("task weight vector", self.weight_dim(), weights.len())?;
        let mut at = 0;
        self.layers
            .iter()
            .map(|f| {
                let r3 = f.ranks()[2];
                let m = f.reconstruct(&weights[at..at + r3]);
                at += r3;
                m
            })
            .collect()
    }

    pub fn policy(&self, weights: &[f64]) -> Result<TaskPolicy> {
        TaskPolicy::new(self.reconstruct(weights)?)
    }

    pub fn core_len(&self) -> usize {
        self.layers.iter().map(|f| f.core.as_slice().len()).sum()
    }

    pub fn core_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|f| f.core.as_slice().iter().copied()).collect()
    }

    /// Copy with the core entries replaced by `values` (layout of
    /// [`core_flat`](Self::core_flat)).
    pub fn with_core(&self, values: &[f64]) -> Result<Self> {
        crate::error::check_dim("core entries", self.core_len(), values.len())?;
        let mut at = 0;
        let layers = self
            .layers
            .iter()
            .map(|f| {
                let n = f.core.as_slice().len();
                let core = Tensor3::from_vec(f.core.dims(), values[at..at + n].to_vec())?;
                at += n;
                Ok(TuckerFactors {
                    core,
                    factors: f.factors.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Environment evaluations per method.
    pub budget: usize,
    /// Alternation rounds of (weight vector, core) blocks.
    pub rounds: usize,
    /// Share of each round spent on the weight vector.
    pub weight_share: f64,
    pub sigma_weights: f64,
    pub sigma_core: f64,
    /// Initial step size of the scratch baseline and source training.
    pub sigma_scratch: f64,
    /// Initial step size when fine-tuning a source policy.
    pub sigma_finetune: f64,
    /// Budget for training each source policy.
    pub source_budget: usize,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            budget: 3000,
            rounds: 3,
            weight_share: 0.4,
            sigma_weights: 0.3,
            sigma_core: 0.1,
            sigma_scratch: 0.3,
            sigma_finetune: 0.1,
            source_budget: 6000,
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Parameter("rounds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_share) {
            return Err(Error::Parameter("weight_share must lie in [0, 1]".into()));
        }
        for s in [self.sigma_weights, self.sigma_core, self.sigma_scratch, self.sigma_finetune] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Parameter("step sizes must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Best return seen after each environment evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub seed: u64,
    pub best_return: Vec<f64>,
}

impl LearningCurve {
    fn new(method: &str, seed: u64) -> Self {
        Self {
            method: method.into(),
            seed,
            best_return: Vec::new(),
        }
    }

    /// Append a CMA-ES history of minimized negative returns, keeping the
    /// curve a running maximum.
    fn extend_minimized(&mut self, history: &[f64]) {
        let mut best = self.best_return.last().copied().unwrap_or(f64::NEG_INFINITY);
        for v in history {
            best = best.max(-v);
            self.best_return.push(best);
        }
    }

    pub fn evaluations(&self) -> usize {
        self.best_return.len()
    }

    pub fn final_return(&self) -> Option<f64> {
        self.best_return.last().copied()
    }

    /// Evaluations needed before the best return reaches `threshold`.
    pub fn evaluations_to(&self, threshold: f64) -> Option<usize> {
        self.best_return.iter().position(|r| *r >= threshold).map(|i| i + 1)
    }

    pub fn write_csv_header<W: Write>(w: &mut W) -> Result<()> {
        writeln!(w, "evaluations,best_return,method,seed")?;
        Ok(())
    }

    pub fn write_csv_rows<W: Write>(&self, w: &mut W) -> Result<()> {
        for (i, r) in self.best_return.iter().enumerate() {
            writeln!(w, "{},{},{},{}", i + 1, r, self.method, self.seed)?;
        }
        Ok(())
    }
}

fn task_return(spec: &TaskSpec, policy: &TaskPolicy) -> f64 {
    transfer_task(spec, policy, 0)
}

#[derive(Debug, Clone)]
pub struct TargetRun {
    pub policy: TaskPolicy,
    pub weights: Vec<f64>,
    pub knowledge: KnowledgeBase,
    pub curve: LearningCurve,
}

/// Learn a target task by alternating CMA-ES over the task weight vector
/// (core frozen) and over the core entries (weights frozen). Starts from the
/// mean source weight vector; with a zero budget that initial policy is
/// returned unevaluated.
pub fn learn_target(kb: &KnowledgeBase, spec: &TaskSpec, cfg: &TransferConfig) -> Result<TargetRun> {
    cfg.validate()?;
    let mut kb = kb.clone();
    let mut weights = kb.mean_task_vector();
    let mut curve = LearningCurve::new("tensor", cfg.seed);
    let mut best: Option<(f64, TaskPolicy)> = None;
    let mut spent = 0;
    for round in 0..cfg.rounds {
        let round_budget = (cfg.budget - spent) / (cfg.rounds - round);
        let w_budget = (round_budget as f64 * cfg.weight_share).round() as usize;
        let c_budget = round_budget - w_budget;
        if w_budget > 0 {
            let r = cmaes_minimize(
                |w| kb.policy(w).map_or(f64::INFINITY, |p| -task_return(spec, &p)),
                &weights,
                cfg.sigma_weights,
                w_budget,
                rng::derive(cfg.seed, 2 * round as u64),
            )?;
            weights = r.x_best;
            spent += r.evaluations;
            curve.extend_minimized(&r.history);
            keep_best(&mut best, -r.f_best, kb.policy(&weights)?);
        }
        if c_budget > 0 {
            let r = cmaes_minimize(
                |c| {
                    kb.with_core(c)
                        .and_then(|k| k.policy(&weights))
                        .map_or(f64::INFINITY, |p| -task_return(spec, &p))
                },
                &kb.core_flat(),
                cfg.sigma_core,
                c_budget,
                rng::derive(cfg.seed, 2 * round as u64 + 1),
            )?;
            kb = kb.with_core(&r.x_best)?;
            spent += r.evaluations;
            curve.extend_minimized(&r.history);
            keep_best(&mut best, -r.f_best, kb.policy(&weights)?);
        }
    }
    let policy = match best {
        Some((_, p)) => p,
        None => kb.policy(&weights)?,
    };
    Ok(TargetRun {
        policy,
        weights,
        knowledge: kb,
        curve,
    })
}

fn keep_best(best: &mut Option<(f64, TaskPolicy)>, ret: f64, policy: TaskPolicy) {
    if best.as_ref().is_none_or(|(b, _)| ret > *b) {
        *best = Some((ret, policy));
    }
}

/// Small random policy shared by source training and the scratch baseline.
pub fn shared_init(seed: u64) -> TaskPolicy {
    let mut r = rng::child(seed, 0xC0FFEE);
    let layers = POLICY_SHAPES
        .iter()
        .map(|&(i, o)| {
            let scale = (1.0 / i as f64).sqrt();
            let v = (0..i * o).map(|_| r.random_range(-scale..scale)).collect();
            Matrix::from_vec(i, o, v).expect("shape matches length")
        })
        .collect();
    TaskPolicy::new(layers).expect("shapes match the task architecture")
}

/// CMA-ES over all policy parameters from `init`.
pub fn optimize_policy(
    spec: &TaskSpec,
    init: &TaskPolicy,
    sigma: f64,
    budget: usize,
    seed: u64,
    method: &str,
) -> Result<(TaskPolicy, LearningCurve)> {
    let mut curve = LearningCurve::new(method, seed);
    if budget == 0 {
        return Ok((init.clone(), curve));
    }
    let r = cmaes_minimize(
        |x| TaskPolicy::from_flat(x).map_or(f64::INFINITY, |p| -task_return(spec, &p)),
        &init.flatten(),
        sigma,
        budget,
        rng::derive(seed, 0x5EED),
    )?;
    curve.extend_minimized(&r.history);
    Ok((TaskPolicy::from_flat(&r.x_best)?, curve))
}

/// Learn the target from the shared initialization without transfer.
pub fn scratch_baseline(spec: &TaskSpec, cfg: &TransferConfig) -> Result<LearningCurve> {
    cfg.validate()?;
    Ok(optimize_policy(spec, &shared_init(cfg.seed), cfg.sigma_scratch, cfg.budget, cfg.seed, "scratch")?.1)
}

/// Fine-tune one source policy chosen uniformly at random.
pub fn finetune_baseline(spec: &TaskSpec, sources: &[TaskPolicy], cfg: &TransferConfig) -> Result<LearningCurve> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Parameter("no source policies to fine-tune".into()));
    }
    let pick = rng::child(cfg.seed, 0xF1).random_range(0..sources.len());
    Ok(optimize_policy(spec, &sources[pick], cfg.sigma_finetune, cfg.budget, cfg.seed, "finetune")?.1)
}

/// Train one policy per source task from the shared initialization.
pub fn train_sources(specs: &[TaskSpec], cfg: &TransferConfig) -> Result<Vec<TaskPolicy>> {
    cfg.validate()?;
    let init = shared_init(cfg.seed);
    specs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            optimize_policy(s, &init, cfg.sigma_scratch, cfg.source_budget, rng::derive(cfg.seed, 100 + k as u64), "source")
                .map(|r| r.0)
        })
        .collect()
}

/// Curves of the tensor method and both baselines for one seed.
#[derive(Debug, Clone)]
pub struct TransferComparison {
    pub sources: Vec<TaskPolicy>,
    pub tensor: LearningCurve,
    pub scratch: LearningCurve,
    pub finetune: LearningCurve,
}

pub fn compare(source_specs: &[TaskSpec], target: &TaskSpec, cfg: &TransferConfig) -> Result<TransferComparison> {
    let sources = train_sources(source_specs, cfg)?;
    let stack = PolicyStack::from_policies(&sources)?;
    let kb = build_knowledge_base(&stack, &stack.full_ranks())?;
    let tensor = learn_target(&kb, target, cfg)?.curve;
    let scratch = scratch_baseline(target, cfg)?;
    let finetune = finetune_baseline(target, &sources, cfg)?;
    Ok(TransferComparison {
        sources,
        tensor,
        scratch,
        finetune,
    })
}
