//! Long-term memory of contexts.
//!
//! Rewarded episodes are clustered online into perceptual classes (P-nodes);
//! an episode that activates several classes joins them into one.
//! A context node (C-node) ties a P-node to a reward signal and the policy
//! that earned it. A P-node starts episodic, activating through a Gaussian
//! kernel around its stored perceptions, and can later be redescribed into a
//! small classifier trained offline on the stored points.

use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{numbered_lines, parse_json_line, write_json_line};
use crate::mathkit::stats::std_dev;
use crate::nn::{self, Activation, Adam, Gradients, Network};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub perception: Vec<f64>,
    pub policy: usize,
    pub reward: f64,
    /// Which reward signal was observed.
    #[serde(default)]
    pub reward_id: usize,
    #[serde(default)]
    pub time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmConfig {
    /// Activation at or above which a P-node counts as active.
    pub theta_act: f64,
    /// Per-dimension kernel bandwidth.
    pub bandwidth: Vec<f64>,
    /// Episodes with reward above this are stored.
    pub relevance: f64,
}

impl LtmConfig {
    /// Bandwidth of 0.3 times the per-dimension standard deviation of
    /// `perceptions`.
    pub fn from_data(perceptions: &[Vec<f64>]) -> Result<Self> {
        let dim = perceptions.first().map(Vec::len).ok_or_else(|| Error::Parameter("no perceptions".into()))?;
        let mut bandwidth = Vec::with_capacity(dim);
        for d in 0..dim {
            let col: Vec<f64> = perceptions.iter().map(|p| p[d]).collect();
            let h = 0.3 * std_dev(&col);
            if !(h > 0.0) {
                return Err(Error::Degenerate(format!("perception dimension {d} has no spread")));
            }
            bandwidth.push(h);
        }
        Ok(Self {
            theta_act: 0.5,
            bandwidth,
            relevance: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_act > 0.0 && self.theta_act < 1.0) {
            return Err(Error::Parameter("theta_act must lie in (0, 1)".into()));
        }
        if self.bandwidth.is_empty() || self.bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Parameter("bandwidths must be positive".into()));
        }
        Ok(())
    }
}

/// Classifier of a generalized P-node; inputs are standardized by `center`
/// and `scale` before the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Generalized {
    pub network: Network,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Generalized {
    fn input(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.center).zip(&self.scale).map(|((x, c), s)| (x - c) / s).collect()
    }

    fn logit(&self, p: &[f64]) -> f64 {
        self.network.forward(&self.input(p)).map_or(f64::NEG_INFINITY, |o| o[0])
    }

    pub fn activation(&self, p: &[f64]) -> f64 {
        nn::sigmoid(self.logit(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PNode {
    pub id: usize,
    pub points: Vec<Vec<f64>>,
    pub bandwidth: Vec<f64>,
    pub generalized: Option<Generalized>,
}

impl PNode {
    pub fn is_generalized(&self) -> bool {
        self.generalized.is_some()
    }

    /// Kernel activation from the stored points, regardless of mode.
    pub fn episodic_activation(&self, p: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|x| {
                let d2: f64 = x
                    .iter()
                    .zip(p)
                    .zip(&self.bandwidth)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum();
                (-0.5 * d2).exp()
            })
            .fold(0.0, f64::max)
    }

    pub fn activation(&self, p: &[f64]) -> f64 {
        match &self.generalized {
            Some(g) => g.activation(p),
            None => self.episodic_activation(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CNode {
    pub p_node: usize,
    pub reward_id: usize,
    pub policy: usize,
    pub count: usize,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ltm {
    pub config: LtmConfig,
    pub p_nodes: Vec<PNode>,
    pub c_nodes: Vec<CNode>,
}

/// What an observation did to the memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observed {
    Ignored,
    Stored { p_node: usize, new_p_node: bool, new_c_node: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub policy: usize,
    pub expected_reward: f64,
    pub p_node: usize,
    pub activation: f64,
}

impl Ltm {
    pub fn new(config: LtmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            p_nodes: Vec::new(),
            c_nodes: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.bandwidth.len()
    }

    pub fn activations(&self, p: &[f64]) -> Vec<f64> {
        self.p_nodes.iter().map(|n| n.activation(p)).collect()
    }

    /// Store a relevant episode: join the most active P-node, or found a new
    /// one when none reaches the threshold, then create or reinforce the
    /// matching C-node.
    pub fn observe(&mut self, ep: &Episode) -> Result<Observed> {
        check_dim("perception", self.dim(), ep.perception.len())?;
        if ep.perception.iter().any(|v| !v.is_finite()) || !ep.reward.is_finite() {
            return Err(Error::Parameter("episode values must be finite".into()));
        }
        if ep.reward <= self.config.relevance {
            return Ok(Observed::Ignored);
        }
        let active: Vec<(usize, f64)> = self
            .activations(&ep.perception)
            .into_iter()
            .enumerate()
            .filter(|(_, a)| *a >= self.config.theta_act)
            .collect();
        let best = active.iter().copied().fold(None, |acc: Option<(usize, f64)>, (i, a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((i, a)),
        });
        let (p_node, new_p_node) = match best {
            Some((i, _)) => {
                let others: Vec<usize> = active.iter().map(|(j, _)| *j).filter(|j| *j != i).collect();
                let i = self.merge_into(i, &others);
                self.p_nodes[i].points.push(ep.perception.clone());
                (i, false)
            }
            None => {
                let id = self.p_nodes.len();
                self.p_nodes.push(PNode {
                    id,
                    points: vec![ep.perception.clone()],
                    bandwidth: self.config.bandwidth.clone(),
                    generalized: None,
                });
                (id, true)
            }
        };
        let existing = self
            .c_nodes
            .iter_mut()
            .find(|c| c.p_node == p_node && c.reward_id == ep.reward_id && c.policy == ep.policy);
        let new_c_node = match existing {
            Some(c) => {
                c.count += 1;
                c.mean_reward += (ep.reward - c.mean_reward) / c.count as f64;
                false
            }
            None => {
                self.c_nodes.push(CNode {
                    p_node,
                    reward_id: ep.reward_id,
                    policy: ep.policy,
                    count: 1,
                    mean_reward: ep.reward,
                });
                true
            }
        };
        Ok(Observed::Stored {
            p_node,
            new_p_node,
            new_c_node,
        })
    }

    /// Fold the `others` nodes into `keep`, which an episode bridges them
    /// with. Their C-nodes are re-pointed and combined; a merged node
    /// returns to episodic mode. Returns the new index of `keep`.
    fn merge_into(&mut self, keep: usize, others: &[usize]) -> usize {
        if others.is_empty() {
            return keep;
        }
        for &o in others {
            let pts = std::mem::take(&mut self.p_nodes[o].points);
            self.p_nodes[keep].points.extend(pts);
        }
        self.p_nodes[keep].generalized = None;
        let mut remap = vec![usize::MAX; self.p_nodes.len()];
        let mut next = 0;
        for (old, slot) in remap.iter_mut().enumerate() {
            if !others.contains(&old) {
                *slot = next;
                next += 1;
            }
        }
        for &o in others {
            remap[o] = remap[keep];
        }
        self.p_nodes.retain(|n| !n.points.is_empty());
        for (i, n) in self.p_nodes.iter_mut().enumerate() {
            n.id = i;
        }
        let mut merged: Vec<CNode> = Vec::with_capacity(self.c_nodes.len());
        for mut c in std::mem::take(&mut self.c_nodes) {
            c.p_node = remap[c.p_node];
            match merged
                .iter_mut()
                .find(|m| m.p_node == c.p_node && m.reward_id == c.reward_id && m.policy == c.policy)
            {
                Some(m) => {
                    let n = (m.count + c.count) as f64;
                    m.mean_reward = (m.mean_reward * m.count as f64 + c.mean_reward * c.count as f64) / n;
                    m.count += c.count;
                }
                None => merged.push(c),
            }
        }
        self.c_nodes = merged;
        remap[keep]
    }

    /// Policies of all active contexts ranked by activation times mean
    /// reward; each policy appears once with its best score. Empty when the
    /// perception matches no known context.
    pub fn retrieve(&self, p: &[f64]) -> Result<Vec<Retrieved>> {
        check_dim("perception", self.dim(), p.len())?;
        let act = self.activations(p);
        let mut out: Vec<Retrieved> = Vec::new();
        for c in &self.c_nodes {
            let a = act[c.p_node];
            if a < self.config.theta_act {
                continue;
            }
            let r = Retrieved {
                policy: c.policy,
                expected_reward: a * c.mean_reward,
                p_node: c.p_node,
                activation: a,
            };
            match out.iter_mut().find(|o| o.policy == c.policy) {
                Some(o) if o.expected_reward < r.expected_reward => *o = r,
                Some(_) => {}
                None => out.push(r),
            }
        }
        out.sort_by(|a, b| b.expected_reward.total_cmp(&a.expected_reward).then(a.policy.cmp(&b.policy)));
        Ok(out)
    }

    /// Swap in a redescribed node.
    pub fn install(&mut self, node: PNode) -> Result<()> {
        let slot = self
            .p_nodes
            .get_mut(node.id)
            .ok_or_else(|| Error::Parameter(format!("no P-node {}", node.id)))?;
        if slot.points != node.points {
            return Err(Error::Parameter("redescribed node does not match the stored episodes".into()));
        }
        *slot = node;
        Ok(())
    }

    /// Activation of every node over a 2-D grid; perceptions of higher
    /// dimension take `fill` for the remaining coordinates.
    pub fn write_activation_csv<W: Write>(
        &self,
        w: &mut W,
        x: (f64, f64),
        y: (f64, f64),
        resolution: usize,
        fill: &[f64],
    ) -> Result<()> {
        if self.dim() < 2 || fill.len() + 2 != self.dim() {
            return Err(Error::Parameter("activation map needs 2 free dimensions plus fill values".into()));
        }
        let res = resolution.max(2);
        writeln!(w, "x,y,node,activation")?;
        for i in 0..res {
            for j in 0..res {
                let px = x.0 + (x.1 - x.0) * i as f64 / (res - 1) as f64;
                let py = y.0 + (y.1 - y.0) * j as f64 / (res - 1) as f64;
                let p: Vec<f64> = [px, py].iter().chain(fill).copied().collect();
                for n in &self.p_nodes {
                    writeln!(w, "{px},{py},{},{}", n.id, n.activation(&p))?;
                }
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_json_line(w, &Record::Config(self.config.clone()))?;
        for n in &self.p_nodes {
            write_json_line(
                w,
                &Record::PNode {
                    id: n.id,
                    points: n.points.clone(),
                    bandwidth: n.bandwidth.clone(),
                    classifier: n.generalized.as_ref().map(|g| ClassifierHeader {
                        center: g.center.clone(),
                        scale: g.scale.clone(),
                        layers: g.network.layers().len(),
                    }),
                },
            )?;
            if let Some(g) = &n.generalized {
                g.network.write_to(w)?;
            }
        }
        for c in &self.c_nodes {
            write_json_line(w, &Record::CNode(c.clone()))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let lines = numbered_lines(reader).collect::<Result<Vec<_>>>()?;
        let mut it = lines.iter();
        let mut ltm: Option<Ltm> = None;
        while let Some((no, text)) = it.next() {
            let no = *no;
            let rec: Record = parse_json_line(no, text)?;
            let bad = |msg: String| Error::Parse { line: no, msg };
            match rec {
                Record::Config(c) => {
                    if ltm.is_some() {
                        return Err(bad("duplicate config record".into()));
                    }
                    ltm = Some(Ltm::new(c).map_err(|e| bad(e.to_string()))?);
                }
                Record::PNode {
                    id,
                    points,
                    bandwidth,
                    classifier,
                } => {
                    let m = ltm.as_mut().ok_or_else(|| bad("P-node before config".into()))?;
                    if id != m.p_nodes.len() {
                        return Err(bad(format!("P-node id {id} out of order")));
                    }
                    if points.is_empty() || points.iter().any(|p| p.len() != m.dim()) || bandwidth.len() != m.dim() {
                        return Err(bad("P-node dimensions do not match the config".into()));
                    }
                    let generalized = match classifier {
                        None => None,
                        Some(h) => {
                            let layer_lines: Vec<(usize, String)> = it.by_ref().take(h.layers).cloned().collect();
                            if layer_lines.len() != h.layers {
                                return Err(bad("classifier layers missing".into()));
                            }
                            let network = Network::from_lines(&layer_lines)?;
                            if network.input_dim() != m.dim() || network.output_dim() != 1 {
                                return Err(bad("classifier shape does not match the config".into()));
                            }
                            Some(Generalized {
                                network,
                                center: h.center,
                                scale: h.scale,
                            })
                        }
                    };
                    m.p_nodes.push(PNode {
                        id,
                        points,
                        bandwidth,
                        generalized,
                    });
                }
                Record::CNode(c) => {
                    let m = ltm.as_mut().ok_or_else(|| bad("C-node before config".into()))?;
                    if c.p_node >= m.p_nodes.len() || c.count == 0 {
                        return Err(bad(format!("C-node references unknown P-node {} or has zero count", c.p_node)));
                    }
                    m.c_nodes.push(c);
                }
            }
        }
        ltm.ok_or(Error::Parse {
            line: 1,
            msg: "missing config record".into(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierHeader {
    center: Vec<f64>,
    scale: Vec<f64>,
    layers: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Config(LtmConfig),
    #[serde(rename = "pnode")]
    PNode {
        id: usize,
        points: Vec<Vec<f64>>,
        bandwidth: Vec<f64>,
        classifier: Option<ClassifierHeader>,
    },
    #[serde(rename = "cnode")]
    CNode(CNode),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedescribeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub min_episodes: usize,
    /// Background negatives per stored point, drawn uniformly from the
    /// memory's bounding box widened by three bandwidths and kept only where
    /// the node's kernel activation is below 0.05.
    pub background_ratio: usize,
    pub seed: u64,
}

impl Default for RedescribeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-2,
            hidden: 16,
            min_episodes: 20,
            background_ratio: 2,
            seed: 0,
        }
    }
}

/// Train a membership classifier for node `id` from its stored points
/// (positives), the points of all other nodes and background samples
/// (negatives). Touches no environment and leaves `ltm` unchanged; install
/// the returned node with [`Ltm::install`]. On divergence the error carries
/// the diagnostic and the node stays episodic.
pub fn redescribe(ltm: &Ltm, id: usize, cfg: &RedescribeConfig) -> Result<PNode> {
    let node = ltm.p_nodes.get(id).ok_or_else(|| Error::Parameter(format!("no P-node {id}")))?;
    if node.points.len() < cfg.min_episodes {
        return Err(Error::Parameter(format!(
            "P-node {id} holds {} episodes, redescription needs {}",
            node.points.len(),
            cfg.min_episodes
        )));
    }
    let dim = ltm.dim();
    let mut r = rng::child(cfg.seed, id as u64);
    let mut data: Vec<(Vec<f64>, f64)> = node.points.iter().map(|p| (p.clone(), 1.0)).collect();
    for other in ltm.p_nodes.iter().filter(|n| n.id != id) {
        data.extend(other.points.iter().map(|p| (p.clone(), 0.0)));
    }
    let all: Vec<&Vec<f64>> = ltm.p_nodes.iter().flat_map(|n| &n.points).collect();
    let lo: Vec<f64> = (0..dim)
        .map(|d| all.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min) - 3.0 * node.bandwidth[d])
        .collect();
    let hi: Vec<f64> = (0..dim)
        .map(|d| all.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max) + 3.0 * node.bandwidth[d])
        .collect();
    let wanted = cfg.background_ratio * node.points.len();
    let mut drawn = 0;
    let mut kept = 0;
    while kept < wanted && drawn < 100 * wanted.max(1) {
        drawn += 1;
        let p: Vec<f64> = (0..dim).map(|d| r.random_range(lo[d]..hi[d])).collect();
        if node.episodic_activation(&p) < 0.05 {
            data.push((p, 0.0));
            kept += 1;
        }
    }
    if data.iter().all(|(_, y)| *y == 1.0) {
        return Err(Error::Degenerate(format!("P-node {id} has no negatives to contrast with")));
    }

    let center: Vec<f64> = (0..dim)
        .map(|d| node.points.iter().map(|p| p[d]).sum::<f64>() / node.points.len() as f64)
        .collect();
    let scale = node.bandwidth.iter().map(|h| h * 3.0).collect();
    let mut g = Generalized {
        network: Network::new(
            &[dim, cfg.hidden, cfg.hidden, 1],
            &[Activation::Tanh, Activation::Tanh, Activation::Linear],
            rng::derive(cfg.seed, 1000 + id as u64),
        )?,
        center,
        scale,
    };
    // Balance classes so a small node is not drowned by its negatives.
    let n_pos = node.points.len() as f64;
    let n_neg = data.len() as f64 - n_pos;
    let inputs: Vec<(Vec<f64>, f64, f64)> = data
        .iter()
        .map(|(p, y)| (g.input(p), *y, if *y == 1.0 { 0.5 / n_pos } else { 0.5 / n_neg }))
        .collect();
    let mut opt = Adam::new(&g.network, cfg.lr);
    for epoch in 0..cfg.epochs {
        let net = &g.network;
        let total = nn::reduce_chunks(
            inputs.len(),
            32,
            |range| -> Result<(f64, Gradients)> {
                let mut grads = Gradients::zeros_like(net);
                let mut loss = 0.0;
                for (x, y, wgt) in &inputs[range] {
                    let t = net.forward_trace(x)?;
                    let (l, dl) = nn::bce_with_logit(t.output()[0], *y);
                    loss += wgt * l;
                    net.backward_into(&t, &[wgt * dl], &mut grads)?;
                }
                Ok((loss, grads))
            },
            |acc, next| {
                if let (Ok(a), Ok(b)) = (acc.as_mut(), next) {
                    a.0 += b.0;
                    a.1.add_assign(&b.1);
                }
            },
        )
        .expect("at least one training point")?;
        opt.step(&mut g.network, &total.1, total.0)
            .map_err(|e| Error::Divergence(format!("P-node {id} stays episodic: epoch {epoch}: {e}")))?;
    }
    Ok(PNode {
        generalized: Some(g),
        ..node.clone()
    })
}

/// Redescribe every node holding at least `min_episodes` episodes, each
/// with its own derived seed. Returns the ids of the redescribed nodes.
pub fn redescribe_all(ltm: &mut Ltm, cfg: &RedescribeConfig) -> Result<Vec<usize>> {
    let ids: Vec<usize> = ltm
        .p_nodes
        .iter()
        .filter(|n| n.points.len() >= cfg.min_episodes)
        .map(|n| n.id)
        .collect();
    for &id in &ids {
        let node_cfg = RedescribeConfig {
            seed: rng::derive(cfg.seed, id as u64),
            ..*cfg
        };
        let node = redescribe(ltm, id, &node_cfg)?;
        ltm.install(node)?;
    }
    Ok(ids)
}

/// Fraction of stored points on which episodic and generalized activations
/// agree about being above `theta_act`.
pub fn mode_agreement(ltm: &Ltm) -> f64 {
    let mut agree = 0usize;
    let mut total = 0usize;
    for n in ltm.p_nodes.iter().filter(|n| n.is_generalized()) {
        for probe in &ltm.p_nodes {
            for p in &probe.points {
                let e = n.episodic_activation(p) >= ltm.config.theta_act;
                let g = n.activation(p) >= ltm.config.theta_act;
                agree += usize::from(e == g);
                total += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

/// Synthetic two-context world. An object at `(x, y)` with `x > 0` is
/// reachable and policy 0 ("grasp") succeeds; with `x < 0` it lies on the
/// wrong side and only policy 1 ("push over") succeeds.
pub mod two_context {
    use super::*;

    pub const GRASP: usize = 0;
    pub const PUSH_OVER: usize = 1;

    pub fn perception<R: rand::Rng + ?Sized>(r: &mut R) -> Vec<f64> {
        let side = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        vec![side * r.random_range(0.2..0.8), r.random_range(0.1..0.7)]
    }

    pub fn correct_policy(p: &[f64]) -> usize {
        if p[0] > 0.0 {
            GRASP
        } else {
            PUSH_OVER
        }
    }

    /// Episodes with a random policy each; reward 1 on success, 0 otherwise.
    pub fn episodes(n: usize, seed: u64) -> Vec<Episode> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|time| {
                let perception = perception(&mut r);
                let policy = r.random_range(0..2);
                let reward = if policy == correct_policy(&perception) { 1.0 } else { 0.0 };
                Episode {
                    perception,
                    policy,
                    reward,
                    reward_id: 0,
                    time,
                }
            })
            .collect()
    }

    pub fn held_out(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::child(seed, 77);
        (0..n).map(|_| perception(&mut r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> LtmConfig {
        LtmConfig {
            theta_act: 0.5,
            bandwidth: vec![0.1, 0.1],
            relevance: 0.0,
        }
    }

    fn ep(x: f64, y: f64, policy: usize, reward: f64) -> Episode {
        Episode {
            perception: vec![x, y],
            policy,
            reward,
            reward_id: 0,
            time: 0,
        }
    }

    #[test]
    fn first_and_repeated_episodes() {
        let mut m = Ltm::new(cfg()).unwrap();
        assert_eq!(
            m.observe(&ep(0.5, 0.5, 3, 1.0)).unwrap(),
            Observed::Stored {
                p_node: 0,
                new_p_node: true,
                new_c_node: true
            }
        );
        assert_eq!(
            m.observe(&ep(0.5, 0.5, 3, 3.0)).unwrap(),
            Observed::Stored {
                p_node: 0,
                new_p_node: false,
                new_c_node: false
            }
        );
        assert_eq!((m.p_nodes.len(), m.c_nodes.len()), (1, 1));
        assert_eq!(m.c_nodes[0].count, 2);
        assert_eq!(m.c_nodes[0].mean_reward, 2.0);
        assert_eq!(m.observe(&ep(0.5, 0.5, 3, 0.0)).unwrap(), Observed::Ignored);
        assert_eq!(m.c_nodes[0].count, 2);
    }

    #[test]
    fn distant_episode_founds_a_node() {
        let mut m = Ltm::new(cfg()).unwrap();
        m.observe(&ep(0.0, 0.0, 0, 1.0)).unwrap();
        // exp(-0.5 * (0.2/0.1)^2) = exp(-2) < 0.5
        let o = m.observe(&ep(0.2, 0.0, 0, 1.0)).unwrap();
        assert!(matches!(o, Observed::Stored { new_p_node: true, .. }));
        assert_eq!(m.p_nodes.len(), 2);
        // exp(-0.5 * 1) > 0.5 joins node 0
        let o = m.observe(&ep(-0.1, 0.0, 0, 1.0)).unwrap();
        assert!(matches!(o, Observed::Stored { p_node: 0, new_p_node: false, .. }));
    }

    #[test]
    fn bridging_episode_merges_nodes() {
        let mut m = Ltm::new(cfg()).unwrap();
        m.observe(&ep(0.0, 0.0, 0, 1.0)).unwrap();
        m.observe(&ep(5.0, 5.0, 2, 1.0)).unwrap();
        m.observe(&ep(0.2, 0.0, 0, 3.0)).unwrap();
        assert_eq!(m.p_nodes.len(), 3);
        // Activation exp(-0.5) at both neighbours.
        let o = m.observe(&ep(0.1, 0.0, 1, 1.0)).unwrap();
        assert_eq!(
            o,
            Observed::Stored {
                p_node: 0,
                new_p_node: false,
                new_c_node: true
            }
        );
        assert_eq!(m.p_nodes.len(), 2);
        assert_eq!(m.p_nodes[0].points.len(), 3);
        assert_eq!(m.p_nodes[1].id, 1);
        assert_eq!(m.p_nodes[1].points, vec![vec![5.0, 5.0]]);
        let grasp: Vec<&CNode> = m.c_nodes.iter().filter(|c| c.policy == 0).collect();
        assert_eq!(grasp.len(), 1);
        assert_eq!((grasp[0].p_node, grasp[0].count, grasp[0].mean_reward), (0, 2, 2.0));
        assert!(m.c_nodes.iter().any(|c| c.policy == 2 && c.p_node == 1));
    }

    #[test]
    fn kernel_values() {
        let mut m = Ltm::new(cfg()).unwrap();
        m.observe(&ep(0.3, 0.4, 0, 1.0)).unwrap();
        let n = &m.p_nodes[0];
        assert_eq!(n.activation(&[0.3, 0.4]), 1.0);
        let expected = (-0.5f64 * (0.05f64 / 0.1).powi(2)).exp();
        assert!((n.activation(&[0.35, 0.4]) - expected).abs() < 1e-12);
        assert!(n.activation(&[5.0, 5.0]) < 1e-100);
    }

    #[test]
    fn nearer_cluster_activates_more() {
        let mut m = Ltm::new(cfg()).unwrap();
        for i in 0..5 {
            m.observe(&ep(0.01 * i as f64, 0.0, 0, 1.0)).unwrap();
            m.observe(&ep(1.0 + 0.01 * i as f64, 0.0, 1, 1.0)).unwrap();
        }
        assert_eq!(m.p_nodes.len(), 2);
        let a = m.activations(&[0.2, 0.0]);
        assert!(a[0] > a[1]);
        let b = m.activations(&[0.8, 0.0]);
        assert!(b[1] > b[0]);
    }

    #[test]
    fn retrieval_ranks_and_signals_novelty() {
        let mut m = Ltm::new(cfg()).unwrap();
        m.observe(&ep(0.0, 0.0, 7, 1.0)).unwrap();
        m.observe(&ep(0.0, 0.0, 8, 5.0)).unwrap();
        let r = m.retrieve(&[0.0, 0.0]).unwrap();
        assert_eq!(r.iter().map(|x| x.policy).collect::<Vec<_>>(), vec![8, 7]);
        assert_eq!(r[0].expected_reward, 5.0);
        assert!(m.retrieve(&[3.0, 3.0]).unwrap().is_empty());
        assert!(m.retrieve(&[0.0]).is_err());
    }

    #[test]
    fn persistence_round_trips_both_modes() {
        let mut m = two_context_memory(200, 1);
        let node = redescribe(
            &m,
            largest(&m),
            &RedescribeConfig {
                epochs: 5,
                ..Default::default()
            },
        )
        .unwrap();
        m.install(node).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = Ltm::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.len() - 1;
        lines[last] = r#"{"record":"cnode","p_node":99,"reward_id":0,"policy":0,"count":1,"mean_reward":1.0}"#;
        match Ltm::read_from(lines.join("\n").as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, last + 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn largest(m: &Ltm) -> usize {
        m.p_nodes.iter().max_by_key(|n| n.points.len()).unwrap().id
    }

    fn two_context_memory(n: usize, seed: u64) -> Ltm {
        let eps = two_context::episodes(n, seed);
        let c = LtmConfig::from_data(&eps.iter().map(|e| e.perception.clone()).collect::<Vec<_>>()).unwrap();
        let mut m = Ltm::new(c).unwrap();
        for e in &eps {
            m.observe(e).unwrap();
        }
        m
    }

    #[test]
    fn redescribe_all_covers_exactly_the_large_nodes() {
        let mut m = two_context_memory(200, 2);
        let cfg = RedescribeConfig {
            epochs: 5,
            ..Default::default()
        };
        let ids = redescribe_all(&mut m, &cfg).unwrap();
        assert!(!ids.is_empty());
        for n in &m.p_nodes {
            assert_eq!(n.is_generalized(), n.points.len() >= cfg.min_episodes, "node {}", n.id);
        }
    }

    #[test]
    fn two_contexts_retrieve_their_policies() {
        let m = two_context_memory(200, 3);
        let probes = two_context::held_out(100, 3);
        let correct = probes
            .iter()
            .filter(|p| m.retrieve(p).unwrap().first().map(|r| r.policy) == Some(two_context::correct_policy(p)))
            .count();
        assert!(correct >= 90, "{correct}/100");
    }

    #[test]
    fn redescription_keeps_episodes_and_separates_clusters() {
        let mut m = Ltm::new(cfg()).unwrap();
        let mut r = rng::rng(5);
        for _ in 0..40 {
            m.observe(&ep(r.random_range(0.0..0.15), r.random_range(0.0..0.15), 0, 1.0)).unwrap();
        }
        for _ in 0..40 {
            m.observe(&ep(r.random_range(0.85..1.0), r.random_range(0.0..0.15), 1, 1.0)).unwrap();
        }
        let before = m.clone();
        let node = redescribe(&m, 0, &RedescribeConfig::default()).unwrap();
        assert_eq!(m, before);
        assert_eq!(node.points, m.p_nodes[0].points);
        assert!(node.is_generalized());
        // Held-out points of the two clusters.
        let mut right = 0;
        for _ in 0..100 {
            let inside = [r.random_range(0.0..0.15), r.random_range(0.0..0.15)];
            let outside = [r.random_range(0.85..1.0), r.random_range(0.0..0.15)];
            right += usize::from(node.activation(&inside) >= 0.5);
            right += usize::from(node.activation(&outside) < 0.5);
        }
        assert!(right >= 190, "held-out accuracy {right}/200");
        let few = Ltm::new(cfg()).unwrap();
        assert!(redescribe(&few, 0, &RedescribeConfig::default()).is_err());
    }

    #[test]
    fn divergent_redescription_leaves_node_episodic() {
        let m = two_context_memory(200, 4);
        let c = RedescribeConfig {
            lr: f64::INFINITY,
            ..Default::default()
        };
        let id = largest(&m);
        assert!(matches!(redescribe(&m, id, &c), Err(Error::Divergence(_))));
        assert!(!m.p_nodes[id].is_generalized());
    }

    #[test]
    fn modes_agree_on_stored_episodes() {
        let mut m = two_context_memory(200, 6);
        for id in 0..m.p_nodes.len() {
            if m.p_nodes[id].points.len() >= 20 {
                let n = redescribe(&m, id, &RedescribeConfig::default()).unwrap();
                m.install(n).unwrap();
            }
        }
        assert!(m.p_nodes.iter().any(PNode::is_generalized));
        let a = mode_agreement(&m);
        assert!(a >= 0.9, "agreement {a}");
    }

    #[test]
    fn activation_map_csv() {
        let m = two_context_memory(50, 2);
        let mut buf = Vec::new();
        m.write_activation_csv(&mut buf, (-1.0, 1.0), (0.0, 1.0), 3, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 9 * m.p_nodes.len());
        assert!(text.starts_with("x,y,node,activation\n-1,0,0,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn ranking_ignores_reward_scale(seed in 0u64..1000, k in 0.01f64..100.0) {
            let eps = two_context::episodes(60, seed);
            let mut r = rng::rng(seed);
            let mut a = Ltm::new(cfg()).unwrap();
            let mut b = Ltm::new(cfg()).unwrap();
            for e in &eps {
                let reward = if e.reward > 0.0 { r.random_range(0.1..2.0) } else { 0.0 };
                a.observe(&Episode { reward, ..e.clone() }).unwrap();
                b.observe(&Episode { reward: reward * k, ..e.clone() }).unwrap();
            }
            for p in two_context::held_out(10, seed) {
                let ra: Vec<usize> = a.retrieve(&p).unwrap().iter().map(|x| x.policy).collect();
                let rb: Vec<usize> = b.retrieve(&p).unwrap().iter().map(|x| x.policy).collect();
                prop_assert_eq!(ra, rb);
            }
        }

        #[test]
        fn stored_points_stay_active(seed in 0u64..1000) {
            let mut m = Ltm::new(cfg()).unwrap();
            for e in two_context::episodes(40, seed) {
                m.observe(&e).unwrap();
            }
            for n in &m.p_nodes {
                prop_assert!(!n.points.is_empty());
                for p in &n.points {
                    prop_assert!(n.activation(p) >= m.config.theta_act);
                    let a = n.activation(p);
                    prop_assert!((0.0..=1.0).contains(&a));
                }
            }
            prop_assert!(m.c_nodes.iter().all(|c| c.p_node < m.p_nodes.len() && c.count >= 1));
        }

        #[test]
        fn repeated_episode_keeps_node_count(seed in 0u64..1000, reps in 1usize..6) {
            let mut m = Ltm::new(cfg()).unwrap();
            let eps = two_context::episodes(20, seed);
            for e in &eps { m.observe(e).unwrap(); }
            let (np, nc) = (m.p_nodes.len(), m.c_nodes.len());
            for _ in 0..reps { for e in &eps { m.observe(e).unwrap(); } }
            prop_assert_eq!((m.p_nodes.len(), m.c_nodes.len()), (np, nc));
        }
    }
}
