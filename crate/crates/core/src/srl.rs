//! State representation learning on the toy reaching task.
//!
//! An encoder maps a rendered frame to a state `s = [s_ae | s_inv]`. The
//! first split feeds a frame decoder and a reward classifier; the second
//! split feeds an inverse-dynamics classifier that predicts the action from
//! two consecutive states. Each loss back-propagates only through its own
//! split. Ground-truth positions are kept for evaluation and never enter a
//! loss.

use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{numbered_lines, parse_json_line, write_json_line};
use crate::mathkit::stats::{mean, pearson};
use crate::nn::{self, Activation, Adam, Gradients, Network};
use crate::rng;
use crate::sim::reach::{self, ReachAction, ReachState, FRAME_LEN};

pub const AE_DIM: usize = 10;
pub const INV_DIM: usize = 3;
pub const STATE_DIM: usize = AE_DIM + INV_DIM;
const N_ACTIONS: usize = 6;
const N_REWARDS: usize = 3;
/// Ground-truth dimensions reported by [`gtc`].
pub const TRUTH_NAMES: [&str; 4] = ["x_rob", "y_rob", "x_targ", "y_targ"];

fn reward_class(r: i8) -> usize {
    (r + 1) as usize
}

/// One episode of the random policy. `states[t + 1]` is reached from
/// `states[t]` with `actions[t]`, which earns `rewards[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrlEpisode {
    pub states: Vec<ReachState>,
    pub actions: Vec<usize>,
    pub rewards: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrlDataset {
    pub episodes: Vec<SrlEpisode>,
    pub seed: u64,
    /// `(episode, step)` of every transition.
    index: Vec<(usize, usize)>,
}

impl SrlDataset {
    pub fn from_episodes(episodes: Vec<SrlEpisode>, seed: u64) -> Result<Self> {
        let mut index = Vec::new();
        for (e, ep) in episodes.iter().enumerate() {
            check_dim("episode states", ep.actions.len() + 1, ep.states.len())?;
            check_dim("episode rewards", ep.actions.len(), ep.rewards.len())?;
            if ep.actions.iter().any(|&a| a >= N_ACTIONS) || ep.rewards.iter().any(|r| !(-1..=1).contains(r)) {
                return Err(Error::Parameter(format!("episode {e} has an unknown action or reward")));
            }
            index.extend((0..ep.actions.len()).map(|t| (e, t)));
        }
        Ok(Self { episodes, seed, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn transition(&self, i: usize) -> Transition<'_> {
        let (e, t) = self.index[i];
        let ep = &self.episodes[e];
        Transition {
            before: &ep.states[t],
            after: &ep.states[t + 1],
            action: ep.actions[t],
            reward: ep.rewards[t],
        }
    }

    pub fn reward_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for ep in &self.episodes {
            for &r in &ep.rewards {
                c[reward_class(r)] += 1;
            }
        }
        c
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_json_line(w, &DatasetHeader {
            episodes: self.episodes.len(),
            seed: self.seed,
        })?;
        for ep in &self.episodes {
            write_json_line(w, ep)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = numbered_lines(reader);
        let (no, text) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "missing dataset header".into() })??;
        let header: DatasetHeader = parse_json_line(no, &text)?;
        let mut episodes = Vec::with_capacity(header.episodes);
        for line in lines {
            let (no, text) = line?;
            let ep: SrlEpisode = parse_json_line(no, &text)?;
            if ep.states.len() != ep.actions.len() + 1 || ep.rewards.len() != ep.actions.len() {
                return Err(Error::Parse { line: no, msg: "inconsistent episode lengths".into() });
            }
            episodes.push(ep);
        }
        if episodes.len() != header.episodes {
            return Err(Error::Parse {
                line: no,
                msg: format!("header announces {} episodes, found {}", header.episodes, episodes.len()),
            });
        }
        Self::from_episodes(episodes, header.seed)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    episodes: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub before: &'a ReachState,
    pub after: &'a ReachState,
    pub action: usize,
    pub reward: i8,
}

/// Roll out the uniform random policy. Gripper and target are placed
/// uniformly in the visible square at the start of each episode.
pub fn collect(n_episodes: usize, horizon: usize, seed: u64) -> Result<SrlDataset> {
    if n_episodes == 0 || horizon == 0 {
        return Err(Error::Parameter("episodes and horizon must be positive".into()));
    }
    let episodes = (0..n_episodes)
        .map(|e| {
            let mut r = rng::child(seed, e as u64);
            let mut state = ReachState {
                gripper: [r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
                target: [r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
            };
            let mut ep = SrlEpisode {
                states: vec![state],
                actions: Vec::with_capacity(horizon),
                rewards: Vec::with_capacity(horizon),
            };
            for _ in 0..horizon {
                let a = r.random_range(0..N_ACTIONS);
                let frame = reach::reach_step(&mut state, ReachAction::ALL[a]);
                ep.states.push(state);
                ep.actions.push(a);
                ep.rewards.push(frame.reward);
            }
            ep
        })
        .collect();
    SrlDataset::from_episodes(episodes, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitEncoder {
    pub encoder: Network,
    pub decoder: Network,
    pub reward_head: Network,
    pub inverse_head: Network,
}

impl SplitEncoder {
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        use Activation::*;
        Ok(Self {
            encoder: Network::new(&[FRAME_LEN, hidden, STATE_DIM], &[Tanh, Linear], rng::derive(seed, 0))?,
            decoder: Network::new(&[AE_DIM, hidden, FRAME_LEN], &[Tanh, Sigmoid], rng::derive(seed, 1))?,
            reward_head: Network::new(&[AE_DIM, 16, N_REWARDS], &[Tanh, Linear], rng::derive(seed, 2))?,
            inverse_head: Network::new(&[2 * INV_DIM, 16, N_ACTIONS], &[Tanh, Linear], rng::derive(seed, 3))?,
        })
    }

    pub fn encode(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(frame)
    }

    pub fn encode_state(&self, state: &ReachState) -> Vec<f64> {
        self.encoder.forward(&reach::render(state)).expect("frame size")
    }

    /// Most likely reward class in {-1, 0, 1} after reaching `state`.
    pub fn predict_reward(&self, state: &ReachState) -> i8 {
        let s = self.encode_state(state);
        argmax(&self.reward_head.forward(&s[..AE_DIM]).expect("split size")) as i8 - 1
    }

    pub fn predict_action(&self, before: &ReachState, after: &ReachState) -> usize {
        let a = self.encode_state(before);
        let b = self.encode_state(after);
        let x: Vec<f64> = a[AE_DIM..].iter().chain(&b[AE_DIM..]).copied().collect();
        argmax(&self.inverse_head.forward(&x).expect("split size"))
    }

    fn parts(&self) -> [(&'static str, &Network); 4] {
        [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("reward", &self.reward_head),
            ("inverse", &self.inverse_head),
        ]
    }

    /// A header record listing each part and its layer count, then one layer
    /// per line in that order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let parts: Vec<(String, usize)> = self
            .parts()
            .iter()
            .map(|(n, net)| (n.to_string(), net.layers().len()))
            .collect();
        write_json_line(w, &EncoderHeader { parts })?;
        for (_, net) in self.parts() {
            net.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let lines = numbered_lines(reader).collect::<Result<Vec<_>>>()?;
        let (first, rest) = lines
            .split_first()
            .ok_or_else(|| Error::Parse { line: 1, msg: "missing encoder header".into() })?;
        let header: EncoderHeader = parse_json_line(first.0, &first.1)?;
        let expected = ["encoder", "decoder", "reward", "inverse"];
        let names: Vec<&str> = header.parts.iter().map(|(n, _)| n.as_str()).collect();
        if names != expected {
            return Err(Error::Parse { line: first.0, msg: format!("unexpected parts {names:?}") });
        }
        let total: usize = header.parts.iter().map(|(_, k)| k).sum();
        if total != rest.len() {
            return Err(Error::Parse {
                line: first.0,
                msg: format!("header announces {total} layers, found {}", rest.len()),
            });
        }
        let mut nets = Vec::new();
        let mut at = 0;
        for (_, k) in &header.parts {
            nets.push(Network::from_lines(&rest[at..at + k])?);
            at += k;
        }
        let mut it = nets.into_iter();
        let model = Self {
            encoder: it.next().expect("four parts"),
            decoder: it.next().expect("four parts"),
            reward_head: it.next().expect("four parts"),
            inverse_head: it.next().expect("four parts"),
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        check_dim("encoder input", FRAME_LEN, self.encoder.input_dim())?;
        check_dim("encoder output", STATE_DIM, self.encoder.output_dim())?;
        check_dim("decoder input", AE_DIM, self.decoder.input_dim())?;
        check_dim("decoder output", FRAME_LEN, self.decoder.output_dim())?;
        check_dim("reward head input", AE_DIM, self.reward_head.input_dim())?;
        check_dim("reward head output", N_REWARDS, self.reward_head.output_dim())?;
        check_dim("inverse head input", 2 * INV_DIM, self.inverse_head.input_dim())?;
        check_dim("inverse head output", N_ACTIONS, self.inverse_head.output_dim())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderHeader {
    parts: Vec<(String, usize)>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrlConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
    pub w_ae: f64,
    pub w_r: f64,
    pub w_inv: f64,
    pub seed: u64,
}

impl Default for SrlConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch: 32,
            lr: 1e-3,
            hidden: 64,
            w_ae: 1.0,
            w_r: 1.0,
            w_inv: 1.0,
            seed: 0,
        }
    }
}

impl SrlConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.w_ae, self.w_r, self.w_inv].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("loss weights must be non-negative".into()));
        }
        if self.batch == 0 || self.hidden == 0 || !(self.lr >= 0.0) {
            return Err(Error::Parameter("batch and hidden must be positive, lr non-negative".into()));
        }
        Ok(())
    }
}

/// Mean per-transition loss components of one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitLosses {
    pub reconstruction: f64,
    pub reward: f64,
    pub inverse: f64,
}

impl SplitLosses {
    pub fn weighted(&self, cfg: &SrlConfig) -> f64 {
        cfg.w_ae * self.reconstruction + cfg.w_r * self.reward + cfg.w_inv * self.inverse
    }

    fn add(&mut self, o: &SplitLosses) {
        self.reconstruction += o.reconstruction;
        self.reward += o.reward;
        self.inverse += o.inverse;
    }

    fn scaled(self, s: f64) -> Self {
        Self {
            reconstruction: self.reconstruction * s,
            reward: self.reward * s,
            inverse: self.inverse * s,
        }
    }
}

/// Gradients for the four parts of a [`SplitEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
    pub reward_head: Gradients,
    pub inverse_head: Gradients,
}

impl SplitGradients {
    fn zeros(m: &SplitEncoder) -> Self {
        Self {
            encoder: Gradients::zeros_like(&m.encoder),
            decoder: Gradients::zeros_like(&m.decoder),
            reward_head: Gradients::zeros_like(&m.reward_head),
            inverse_head: Gradients::zeros_like(&m.inverse_head),
        }
    }

    fn add_assign(&mut self, o: &SplitGradients) {
        self.encoder.add_assign(&o.encoder);
        self.decoder.add_assign(&o.decoder);
        self.reward_head.add_assign(&o.reward_head);
        self.inverse_head.add_assign(&o.inverse_head);
    }

    fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.decoder.scale(s);
        self.reward_head.scale(s);
        self.inverse_head.scale(s);
    }
}

/// Weighted loss and gradients of one transition, each loss routed to its
/// split of the encoder output.
pub fn transition_gradients(
    model: &SplitEncoder,
    tr: Transition<'_>,
    weights: (f64, f64, f64),
    grads: &mut SplitGradients,
) -> Result<SplitLosses> {
    let (w_ae, w_r, w_inv) = weights;
    let frame_t = reach::render(tr.before);
    let frame_n = reach::render(tr.after);
    let enc_t = model.encoder.forward_trace(&frame_t)?;
    let enc_n = model.encoder.forward_trace(&frame_n)?;
    let s_t = enc_t.output();
    let s_n = enc_n.output();
    let mut ds_t = vec![0.0; STATE_DIM];
    let mut ds_n = vec![0.0; STATE_DIM];
    let mut losses = SplitLosses::default();

    if w_ae > 0.0 {
        let dec = model.decoder.forward_trace(&s_t[..AE_DIM])?;
        let (l, g) = nn::mse(dec.output(), &frame_t);
        let g: Vec<f64> = g.iter().map(|v| v * w_ae).collect();
        let gi = model.decoder.backward_into(&dec, &g, &mut grads.decoder)?;
        ds_t[..AE_DIM].iter_mut().zip(&gi).for_each(|(d, v)| *d += v);
        losses.reconstruction = l;
    }
    if w_r > 0.0 {
        let head = model.reward_head.forward_trace(&s_n[..AE_DIM])?;
        let (l, g) = nn::softmax_cross_entropy(head.output(), reward_class(tr.reward));
        let g: Vec<f64> = g.iter().map(|v| v * w_r).collect();
        let gi = model.reward_head.backward_into(&head, &g, &mut grads.reward_head)?;
        ds_n[..AE_DIM].iter_mut().zip(&gi).for_each(|(d, v)| *d += v);
        losses.reward = l;
    }
    if w_inv > 0.0 {
        let x: Vec<f64> = s_t[AE_DIM..].iter().chain(&s_n[AE_DIM..]).copied().collect();
        let head = model.inverse_head.forward_trace(&x)?;
        let (l, g) = nn::softmax_cross_entropy(head.output(), tr.action);
        let g: Vec<f64> = g.iter().map(|v| v * w_inv).collect();
        let gi = model.inverse_head.backward_into(&head, &g, &mut grads.inverse_head)?;
        ds_t[AE_DIM..].iter_mut().zip(&gi[..INV_DIM]).for_each(|(d, v)| *d += v);
        ds_n[AE_DIM..].iter_mut().zip(&gi[INV_DIM..]).for_each(|(d, v)| *d += v);
        losses.inverse = l;
    }
    model.encoder.backward_into(&enc_t, &ds_t, &mut grads.encoder)?;
    model.encoder.backward_into(&enc_n, &ds_n, &mut grads.encoder)?;
    Ok(losses)
}

/// Mean loss and gradient over `indices` of the dataset.
pub fn batch_gradients(
    model: &SplitEncoder,
    data: &SrlDataset,
    indices: &[usize],
    weights: (f64, f64, f64),
) -> Result<(SplitLosses, SplitGradients)> {
    let part = |range: std::ops::Range<usize>| -> Result<(SplitLosses, SplitGradients)> {
        let mut g = SplitGradients::zeros(model);
        let mut l = SplitLosses::default();
        for &i in &indices[range] {
            l.add(&transition_gradients(model, data.transition(i), weights, &mut g)?);
        }
        Ok((l, g))
    };
    let total = nn::reduce_chunks(indices.len(), 8, part, |acc, next| {
        if let (Ok(a), Ok(b)) = (acc.as_mut(), next.as_ref()) {
            a.0.add(&b.0);
            a.1.add_assign(&b.1);
        } else if acc.is_ok() {
            *acc = next;
        }
    });
    let (l, mut g) = total.unwrap_or_else(|| Ok((SplitLosses::default(), SplitGradients::zeros(model))))?;
    let s = 1.0 / indices.len().max(1) as f64;
    g.scale(s);
    Ok((l.scaled(s), g))
}

#[derive(Debug, Clone)]
pub struct TrainedSplit {
    pub model: SplitEncoder,
    /// Mean loss components per epoch.
    pub history: Vec<SplitLosses>,
}

/// Minibatch Adam on the weighted sum of the three losses.
pub fn train_split(data: &SrlDataset, cfg: &SrlConfig) -> Result<TrainedSplit> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("empty dataset".into()));
    }
    let mut model = SplitEncoder::new(cfg.hidden, cfg.seed)?;
    let mut opt = [
        Adam::new(&model.encoder, cfg.lr),
        Adam::new(&model.decoder, cfg.lr),
        Adam::new(&model.reward_head, cfg.lr),
        Adam::new(&model.inverse_head, cfg.lr),
    ];
    let weights = (cfg.w_ae, cfg.w_r, cfg.w_inv);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = nn::epoch_order(data.len(), cfg.seed, epoch as u64);
        let mut sum = SplitLosses::default();
        for batch in order.chunks(cfg.batch) {
            let (l, g) = batch_gradients(&model, data, batch, weights)?;
            let loss = l.weighted(cfg);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite training loss in epoch {epoch}")));
            }
            opt[0].step(&mut model.encoder, &g.encoder, loss)?;
            opt[1].step(&mut model.decoder, &g.decoder, loss)?;
            opt[2].step(&mut model.reward_head, &g.reward_head, loss)?;
            opt[3].step(&mut model.inverse_head, &g.inverse_head, loss)?;
            sum.add(&l.scaled(batch.len() as f64));
        }
        history.push(sum.scaled(1.0 / data.len() as f64));
    }
    Ok(TrainedSplit { model, history })
}

/// Ground-truth coordinates of each transition's first state.
pub fn ground_truth(data: &SrlDataset) -> Vec<[f64; 4]> {
    (0..data.len())
        .map(|i| {
            let s = data.transition(i).before;
            [s.gripper[0], s.gripper[1], s.target[0], s.target[1]]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtcReport {
    /// One score per ground-truth dimension, ordered as [`TRUTH_NAMES`].
    pub per_dim: Vec<f64>,
    pub mean: f64,
}

impl GtcReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "dimension,gtc")?;
        for (name, v) in TRUTH_NAMES.iter().zip(&self.per_dim) {
            writeln!(w, "{name},{v}")?;
        }
        writeln!(w, "mean,{}", self.mean)?;
        Ok(())
    }
}

/// For each ground-truth dimension, the largest absolute correlation with
/// any learned state dimension. Constant dimensions score 0.
pub fn gtc_scores(states: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<GtcReport> {
    check_dim("ground truth rows", states.len(), truth.len())?;
    let n_state = states.first().map_or(0, Vec::len);
    let n_truth = truth.first().map_or(0, Vec::len);
    let column = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let state_cols: Vec<Vec<f64>> = (0..n_state).map(|j| column(states, j)).collect();
    let mut per_dim = Vec::with_capacity(n_truth);
    for g in 0..n_truth {
        let gt = column(truth, g);
        let mut best: f64 = 0.0;
        for s in &state_cols {
            best = best.max(pearson(s, &gt)?.value.abs());
        }
        per_dim.push(best);
    }
    Ok(GtcReport {
        mean: mean(&per_dim),
        per_dim,
    })
}

/// Ground-truth correlation of an encoder over the first state of every
/// transition.
pub fn gtc(encoder: &Network, data: &SrlDataset) -> Result<GtcReport> {
    check_dim("encoder input", FRAME_LEN, encoder.input_dim())?;
    let states = (0..data.len())
        .map(|i| encoder.forward(&reach::render(data.transition(i).before)))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<f64>> = ground_truth(data).iter().map(|t| t.to_vec()).collect();
    gtc_scores(&states, &truth)
}

/// Held-out accuracies of the two classifier heads plus the majority-class
/// reward baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadAccuracy {
    pub reward: f64,
    pub reward_majority: f64,
    pub action: f64,
}

pub fn head_accuracy(model: &SplitEncoder, data: &SrlDataset) -> HeadAccuracy {
    let n = data.len().max(1) as f64;
    let (mut rew, mut act) = (0usize, 0usize);
    for i in 0..data.len() {
        let t = data.transition(i);
        if model.predict_reward(t.after) == t.reward {
            rew += 1;
        }
        if model.predict_action(t.before, t.after) == t.action {
            act += 1;
        }
    }
    HeadAccuracy {
        reward: rew as f64 / n,
        reward_majority: *data.reward_counts().iter().max().expect("three classes") as f64 / n,
        action: act as f64 / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn horizon_one_gives_one_transition_per_episode() {
        let d = collect(7, 1, 3).unwrap();
        assert_eq!(d.len(), 7);
        assert_eq!(collect(7, 1, 3).unwrap(), d);
        assert!(collect(0, 5, 1).is_err());
    }

    #[test]
    fn random_walk_sees_both_reward_signs() {
        let d = collect(500, 50, 0).unwrap();
        let [neg, zero, pos] = d.reward_counts();
        assert_eq!(neg + zero + pos, 25_000);
        assert!(neg > 0 && pos > 0, "{neg} {zero} {pos}");
    }

    #[test]
    fn identity_encoding_scores_one() {
        let d = collect(20, 10, 1).unwrap();
        let truth: Vec<Vec<f64>> = ground_truth(&d).iter().map(|t| t.to_vec()).collect();
        let r = gtc_scores(&truth, &truth).unwrap();
        assert!(r.per_dim.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((r.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_state_dimension_scores_zero() {
        let states = vec![vec![1.0], vec![1.0], vec![1.0]];
        let truth = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(gtc_scores(&states, &truth).unwrap().per_dim, vec![0.0]);
    }

    fn small_model_grads(weights: (f64, f64, f64)) -> SplitGradients {
        let d = collect(4, 6, 2).unwrap();
        let m = SplitEncoder::new(8, 5).unwrap();
        let idx: Vec<usize> = (0..d.len()).collect();
        batch_gradients(&m, &d, &idx, weights).unwrap().1
    }

    /// Gradient of the final encoder layer restricted to output columns `cols`.
    fn last_layer_block(g: &SplitGradients, cols: std::ops::Range<usize>) -> Vec<f64> {
        let w = g.encoder.weights.last().unwrap();
        let b = g.encoder.bias.last().unwrap();
        let mut out: Vec<f64> = (0..w.rows()).flat_map(|r| w.row(r)[cols.clone()].to_vec()).collect();
        out.extend_from_slice(&b[cols]);
        out
    }

    #[test]
    fn losses_only_reach_their_own_split() {
        let ae_and_reward = small_model_grads((1.0, 1.0, 0.0));
        assert!(last_layer_block(&ae_and_reward, AE_DIM..STATE_DIM).iter().all(|v| *v == 0.0));
        assert!(last_layer_block(&ae_and_reward, 0..AE_DIM).iter().any(|v| *v != 0.0));
        assert!(ae_and_reward.inverse_head.flatten().iter().all(|v| *v == 0.0));

        let inverse = small_model_grads((0.0, 0.0, 1.0));
        assert!(last_layer_block(&inverse, 0..AE_DIM).iter().all(|v| *v == 0.0));
        assert!(last_layer_block(&inverse, AE_DIM..STATE_DIM).iter().any(|v| *v != 0.0));
        assert!(inverse.decoder.flatten().iter().all(|v| *v == 0.0));
        assert!(inverse.reward_head.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn split_gradients_match_finite_differences() {
        let d = collect(2, 3, 4).unwrap();
        let m = SplitEncoder::new(6, 1).unwrap();
        let idx: Vec<usize> = (0..d.len()).collect();
        let w = (1.0, 0.7, 0.5);
        let loss = |m: &SplitEncoder| {
            let (l, _) = batch_gradients(m, &d, &idx, w).unwrap();
            w.0 * l.reconstruction + w.1 * l.reward + w.2 * l.inverse
        };
        let (_, g) = batch_gradients(&m, &d, &idx, w).unwrap();
        let analytic = g.encoder.flatten();
        let base = m.encoder.flatten();
        let mut r = rng::rng(8);
        let h = 1e-6;
        for _ in 0..40 {
            let i = r.random_range(0..base.len());
            let mut p = m.clone();
            let mut v = base.clone();
            v[i] += h;
            p.encoder.set_flat(&v).unwrap();
            let up = loss(&p);
            v[i] -= 2.0 * h;
            p.encoder.set_flat(&v).unwrap();
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-7);
            assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn zero_weights_leave_parameters_at_init() {
        let d = collect(5, 5, 0).unwrap();
        let cfg = SrlConfig {
            epochs: 2,
            w_ae: 0.0,
            w_r: 0.0,
            w_inv: 0.0,
            hidden: 8,
            ..SrlConfig::default()
        };
        let t = train_split(&d, &cfg).unwrap();
        assert_eq!(t.model, SplitEncoder::new(8, cfg.seed).unwrap());
    }

    #[test]
    fn inverse_only_training_beats_chance() {
        let train = collect(60, 20, 1).unwrap();
        let test = collect(20, 20, 2).unwrap();
        let cfg = SrlConfig {
            epochs: 6,
            lr: 1e-2,
            w_ae: 0.0,
            w_r: 0.0,
            hidden: 16,
            ..SrlConfig::default()
        };
        let t = train_split(&train, &cfg).unwrap();
        let acc = head_accuracy(&t.model, &test);
        assert!(acc.action > 1.0 / 6.0 + 0.1, "action accuracy {}", acc.action);
    }

    #[test]
    fn persistence_round_trips() {
        let d = collect(3, 4, 9).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(SrlDataset::read_from(buf.as_slice()).unwrap(), d);
        let truncated: String = String::from_utf8(buf).unwrap().lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(SrlDataset::read_from(truncated.as_bytes()).is_err());

        let m = SplitEncoder::new(4, 2).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(SplitEncoder::read_from(buf.as_slice()).unwrap(), m);
        let text = String::from_utf8(buf).unwrap();
        let short: Vec<&str> = text.lines().take(5).collect();
        assert!(SplitEncoder::read_from(short.join("\n").as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn gtc_is_bounded_and_affine_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 4..30),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let truth: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + r[1], r[2]]).collect();
            let a = gtc_scores(&rows, &truth).unwrap();
            let moved: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] * scale + shift, r[1], -r[2]]).collect();
            let b = gtc_scores(&moved, &truth).unwrap();
            for (x, y) in a.per_dim.iter().zip(&b.per_dim) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(x));
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
