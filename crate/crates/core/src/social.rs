//! Skill exchange between learning agents.
//!
//! Every agent grows its own archive with QD. After each generation, agents
//! offer a batch of their skills to their out-neighbours; a receiver picks
//! one skill of each batch, with probability proportional to quality (or the
//! best one, under the exclusive policy), and offers it to its own archive.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Skill;
use crate::qd::{coverage_of, QdConfig, QdSearch};
use crate::repertoire::Archive;
use crate::rng;
use crate::sim::Environment;

/// Added to min-shifted weights so the worst skill keeps a chance.
pub const SHIFT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Acceptance {
    /// Pick with probability proportional to quality.
    Proportional,
    /// Always pick the best offered skill.
    BestOnly,
}

/// Directed graph of who may send to whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    /// Skills per offer.
    pub batch: usize,
}

impl Topology {
    pub fn new(n: usize, edges: Vec<(usize, usize)>, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Parameter("offer batch size must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::Parameter(format!("self-edge on agent {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Parameter(format!("edge {a} -> {b} names an agent outside 0..{n}")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::Parameter(format!("duplicate edge {a} -> {b}")));
            }
        }
        Ok(Self { n, edges, batch })
    }

    pub fn isolated(n: usize, batch: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
            batch,
        }
    }

    pub fn fully_connected(n: usize, batch: usize) -> Self {
        let edges = (0..n).flat_map(|a| (0..n).filter(move |b| *b != a).map(move |b| (a, b))).collect();
        Self { n, edges, batch }
    }

    /// One "src dst" pair per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, n: usize, batch: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(bad(format!("expected 'src dst', got '{line}'")));
            }
            let a = parts[0].parse().map_err(|_| bad(format!("bad agent id '{}'", parts[0])))?;
            let b = parts[1].parse().map_err(|_| bad(format!("bad agent id '{}'", parts[1])))?;
            edges.push((a, b));
        }
        Self::new(n, edges, batch)
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn out_neighbors(&self, a: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == a).map(|e| e.1)
    }

    /// Skills sent per round.
    pub fn messages_per_round(&self) -> usize {
        self.edges.len() * self.batch
    }
}

/// Selection weights for an offer batch: qualities as they are when all are
/// positive, otherwise shifted so the minimum maps to a small positive value.
pub fn acceptance_weights(qualities: &[f64]) -> Vec<f64> {
    let min = qualities.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        qualities.to_vec()
    } else {
        qualities.iter().map(|q| q - min + SHIFT_EPSILON).collect()
    }
}

/// Selection probabilities of each offered skill under `policy`.
pub fn acceptance_probabilities(qualities: &[f64], policy: Acceptance) -> Vec<f64> {
    match policy {
        Acceptance::Proportional => {
            let w = acceptance_weights(qualities);
            let total: f64 = w.iter().sum();
            w.iter().map(|v| v / total).collect()
        }
        Acceptance::BestOnly => {
            let best = qualities
                .iter()
                .enumerate()
                .fold(0, |b, (i, q)| if *q > qualities[b] { i } else { b });
            (0..qualities.len()).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
        }
    }
}

fn select<R: rand::Rng + ?Sized>(probs: &[f64], r: &mut R) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    pub search: QdSearch,
}

impl Agent {
    pub fn archive(&self) -> &Archive {
        &self.search.archive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub offered: usize,
    pub selected: usize,
    pub stored: usize,
}

#[derive(Debug, Clone)]
pub struct Society {
    pub agents: Vec<Agent>,
    pub topology: Topology,
    pub acceptance: Acceptance,
    pub round: usize,
    rng: rng::Rng,
}

impl Society {
    /// Agents get their own QD seeds derived from `seed` (agent `i` uses
    /// `configs[i]`, or the last config when fewer are given).
    pub fn new(
        env: &dyn Environment,
        configs: &[QdConfig],
        topology: Topology,
        acceptance: Acceptance,
        seed: u64,
    ) -> Result<Self> {
        let n = topology.n_agents();
        if n < 2 {
            return Err(Error::Parameter("a society needs at least 2 agents".into()));
        }
        if configs.is_empty() {
            return Err(Error::Parameter("no QD configuration given".into()));
        }
        let agents = (0..n)
            .into_par_iter()
            .map(|id| {
                let base = &configs[id.min(configs.len() - 1)];
                let cfg = QdConfig {
                    seed: rng::derive(seed, id as u64),
                    ..base.clone()
                };
                Ok(Agent {
                    id,
                    search: QdSearch::new(env, &cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            agents,
            topology,
            acceptance,
            round: 0,
            rng: rng::child(seed, 0x50C1A1),
        })
    }

    /// One QD generation per agent, then the exchange in agent id order.
    pub fn step(&mut self, env: &dyn Environment) -> Result<ExchangeStats> {
        self.agents.par_iter_mut().try_for_each(|a| a.search.step(env))?;
        let mut stats = ExchangeStats::default();
        // Offers are drawn from the archives as they stand after learning, so
        // a skill received this round is not forwarded until the next one.
        let mut offers: Vec<(usize, Vec<Skill>)> = Vec::new();
        for a in 0..self.agents.len() {
            for b in self.topology.out_neighbors(a) {
                let archive = self.agents[a].archive();
                let batch: Vec<Skill> = (0..self.topology.batch)
                    .map(|_| archive.skills()[self.rng.random_range(0..archive.len())].clone())
                    .collect();
                stats.offered += batch.len();
                offers.push((b, batch));
            }
        }
        for (b, batch) in offers {
            let q: Vec<f64> = batch.iter().map(|s| s.quality).collect();
            let pick = select(&acceptance_probabilities(&q, self.acceptance), &mut self.rng);
            stats.selected += 1;
            let skill = batch.into_iter().nth(pick).expect("pick is within the batch");
            if self.agents[b].search.archive.try_insert(skill)?.stored() {
                stats.stored += 1;
            }
        }
        self.round += 1;
        Ok(stats)
    }

    pub fn metrics(&self) -> GroupMetrics {
        group_metrics(self.round, &self.agents.iter().map(Agent::archive).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub round: usize,
    /// Coverage of the pooled outcomes of all agents.
    pub group_coverage: f64,
    pub sizes: Vec<usize>,
    pub best_quality: Vec<f64>,
    /// Mean over agent pairs of half the symmetric difference of their
    /// archives; skills are identified by their controller parameters.
    pub diversity: f64,
}

impl GroupMetrics {
    pub const CSV_HEADER: &'static str = "round,group_coverage,diversity,max_best_quality,sizes";

    pub fn write_csv<W: Write>(rows: &[GroupMetrics], w: &mut W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for m in rows {
            let sizes: Vec<String> = m.sizes.iter().map(ToString::to_string).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                m.round,
                m.group_coverage,
                m.diversity,
                m.max_best_quality(),
                sizes.join(";")
            )?;
        }
        Ok(())
    }

    pub fn max_best_quality(&self) -> f64 {
        self.best_quality.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn skill_key(s: &Skill) -> Vec<u64> {
    s.params.values().iter().map(|v| v.to_bits()).collect()
}

pub fn group_metrics(round: usize, archives: &[&Archive]) -> GroupMetrics {
    let keys: Vec<HashSet<Vec<u64>>> = archives
        .iter()
        .map(|a| a.skills().iter().map(skill_key).collect())
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            total += keys[i].symmetric_difference(&keys[j]).count() as f64 / 2.0;
            pairs += 1;
        }
    }
    let cell = archives.first().map_or(1.0, |a| a.r_novel());
    GroupMetrics {
        round,
        group_coverage: coverage_of(
            archives
                .iter()
                .flat_map(|a| a.skills().iter().map(|s| s.outcome.values.as_slice())),
            cell,
        ),
        sizes: archives.iter().map(|a| a.len()).collect(),
        best_quality: archives
            .iter()
            .map(|a| a.best_quality().unwrap_or(f64::NEG_INFINITY))
            .collect(),
        diversity: if pairs == 0 { 0.0 } else { total / pairs as f64 },
    }
}

/// Run `rounds` rounds and return the metrics after every round.
pub fn run_society(society: &mut Society, env: &dyn Environment, rounds: usize) -> Result<Vec<GroupMetrics>> {
    let mut rows = vec![society.metrics()];
    for _ in 0..rounds {
        society.step(env)?;
        rows.push(society.metrics());
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{ControllerParams, Outcome};
    use crate::qd::run_qd;
    use crate::sim::linear::LinearEnv;
    use proptest::prelude::*;

    fn env() -> LinearEnv {
        LinearEnv::random(2, 4, &mut rng::rng(1))
    }

    fn qd() -> QdConfig {
        QdConfig {
            generations: 0,
            batch: 8,
            initial: 40,
            sigma_mut: 0.1,
            seed: 0,
        }
    }

    #[test]
    fn proportional_rule() {
        let p = acceptance_probabilities(&[1.0, 3.0], Acceptance::Proportional);
        assert_eq!(p, vec![0.25, 0.75]);
        let p = acceptance_probabilities(&[-2.0, -2.0, -2.0], Acceptance::Proportional);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let w = acceptance_weights(&[-3.0, -1.0]);
        assert_eq!(w, vec![SHIFT_EPSILON, 2.0 + SHIFT_EPSILON]);
        assert_eq!(acceptance_probabilities(&[0.2, 0.9, 0.5], Acceptance::BestOnly), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn roulette_frequencies() {
        let mut r = rng::rng(3);
        let p = [0.25, 0.75];
        let hits = (0..20000).filter(|_| select(&p, &mut r) == 1).count() as f64 / 20000.0;
        // Binomial standard error is about 0.003.
        assert!((hits - 0.75).abs() < 0.015, "{hits}");
    }

    #[test]
    fn topology_rules() {
        assert!(Topology::new(3, vec![(1, 1)], 1).is_err());
        assert!(Topology::new(3, vec![(0, 3)], 1).is_err());
        assert!(Topology::new(3, vec![], 0).is_err());
        let t = Topology::parse("# ring\n0 1\n1 2\n\n2 0\n", 3, 4).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (1, 2), (2, 0)]);
        assert_eq!(t.messages_per_round(), 12);
        assert!(matches!(Topology::parse("0 1\n0 x\n", 3, 1), Err(Error::Parse { line: 2, .. })));
        assert_eq!(Topology::fully_connected(4, 2).messages_per_round(), 24);
    }

    #[test]
    fn empty_topology_is_isolated_learning() {
        let e = env();
        let mut s = Society::new(&e, &[qd()], Topology::isolated(3, 2), Acceptance::Proportional, 9).unwrap();
        for _ in 0..5 {
            let st = s.step(&e).unwrap();
            assert_eq!(st, ExchangeStats::default());
        }
        for (i, a) in s.agents.iter().enumerate() {
            let cfg = QdConfig {
                generations: 5,
                seed: rng::derive(9, i as u64),
                ..qd()
            };
            assert_eq!(a.archive(), &run_qd(&e, &cfg).unwrap().0);
        }
    }

    #[test]
    fn message_count_and_insertion() {
        let e = env();
        let topo = Topology::fully_connected(4, 3);
        let mut s = Society::new(&e, &[qd()], topo.clone(), Acceptance::Proportional, 2).unwrap();
        for _ in 0..4 {
            let st = s.step(&e).unwrap();
            assert_eq!(st.offered, topo.messages_per_round());
            assert_eq!(st.selected, topo.edges().len());
            assert!(st.stored <= st.selected);
        }
        // Archive invariants survive the exchange: pairwise outcome spacing.
        for a in &s.agents {
            let sk = a.archive().skills();
            for i in 0..sk.len() {
                for j in 0..i {
                    assert!(sk[i].outcome.distance(&sk[j].outcome.values) >= a.archive().r_novel());
                }
            }
        }
    }

    #[test]
    fn society_is_deterministic() {
        let e = env();
        let run = || {
            let mut s = Society::new(&e, &[qd()], Topology::fully_connected(3, 2), Acceptance::Proportional, 4).unwrap();
            run_society(&mut s, &e, 6).unwrap()
        };
        assert_eq!(run(), run());
    }

    fn archive_of(points: &[[f64; 2]], tag: f64) -> Archive {
        let e = env();
        let bounds = e.bounds();
        let mut a = Archive::for_env(&e, 0);
        for (i, p) in points.iter().enumerate() {
            a.try_insert(Skill {
                params: ControllerParams::new(vec![tag, i as f64, 0.0, 0.0], bounds.clone()).unwrap(),
                outcome: Outcome::valid(p.to_vec()),
                quality: 0.0,
            })
            .unwrap();
        }
        a
    }

    #[test]
    fn diversity_definition() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let a = archive_of(&pts, 0.0);
        assert_eq!(group_metrics(0, &[&a, &a.clone()]).diversity, 0.0);
        let b = archive_of(&pts[..1], 1.0);
        // Disjoint: half the symmetric difference is the mean size.
        assert_eq!(group_metrics(0, &[&a, &b]).diversity, 2.0);
        let m = group_metrics(3, &[&a, &b]);
        assert_eq!(m.sizes, vec![3, 1]);
        let mut buf = Vec::new();
        GroupMetrics::write_csv(&[m], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with(",3;1\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn probabilities_are_a_distribution(q in prop::collection::vec(-100.0f64..100.0, 1..12)) {
            for policy in [Acceptance::Proportional, Acceptance::BestOnly] {
                let p = acceptance_probabilities(&q, policy);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|v| *v >= 0.0));
            }
            // Higher quality never gets a lower share.
            let p = acceptance_probabilities(&q, Acceptance::Proportional);
            for i in 0..q.len() {
                for j in 0..q.len() {
                    if q[i] > q[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }

        #[test]
        fn equal_weights_are_uniform(q in -5.0f64..5.0, n in 1usize..10) {
            let p = acceptance_probabilities(&vec![q; n], Acceptance::Proportional);
            for v in p {
                prop_assert!((v - 1.0 / n as f64).abs() < 1e-12);
            }
        }
    }
}
