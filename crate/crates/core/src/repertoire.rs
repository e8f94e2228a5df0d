//! The skill archive: novelty-gated insertion, quality replacement,
//! nearest-neighbor queries and JSON-lines persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{numbered_lines, parse_json_line, write_json_line};
use crate::motion::{euclidean, ControllerParams, Outcome, ParamBounds, Skill};

/// Archive header. Unknown header keys are preserved in `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub env: String,
    #[serde(rename = "D")]
    pub param_dim: usize,
    pub d: usize,
    pub r_novel: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertResult {
    Added,
    /// The displaced skill.
    Replaced(Skill),
    Rejected,
}

impl InsertResult {
    pub fn stored(&self) -> bool {
        !matches!(self, InsertResult::Rejected)
    }
}

#[derive(Serialize, Deserialize)]
struct SkillRecord {
    theta: Vec<f64>,
    outcome: Vec<f64>,
    quality: f64,
}

/// Uniform grid over outcome space with cell side `r_novel`, so every
/// stored outcome within `r_novel` of a query lies in the 3^d adjacent cells.
#[derive(Debug, Clone, Default)]
struct GridIndex {
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl GridIndex {
    fn key(&self, b: &[f64]) -> Vec<i64> {
        b.iter().map(|x| (x / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, b: &[f64], idx: usize) {
        let k = self.key(b);
        self.cells.entry(k).or_default().push(idx);
    }

    fn remove(&mut self, b: &[f64], idx: usize) {
        let k = self.key(b);
        if let Some(v) = self.cells.get_mut(&k) {
            v.retain(|&i| i != idx);
            if v.is_empty() {
                self.cells.remove(&k);
            }
        }
    }

    fn candidates(&self, b: &[f64]) -> Vec<usize> {
        let base = self.key(b);
        let mut out = Vec::new();
        let n = 3usize.pow(base.len() as u32);
        for code in 0..n {
            let mut c = code;
            let key: Vec<i64> = base
                .iter()
                .map(|k| {
                    let off = (c % 3) as i64 - 1;
                    c /= 3;
                    k + off
                })
                .collect();
            if let Some(v) = self.cells.get(&key) {
                out.extend_from_slice(v);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Outcome dimensions above which the grid index is skipped (3^d cells per
/// lookup).
const GRID_MAX_DIM: usize = 4;

#[derive(Debug, Clone)]
pub struct Archive {
    skills: Vec<Skill>,
    meta: ArchiveMeta,
    bounds: Arc<ParamBounds>,
    grid: Option<GridIndex>,
}

impl PartialEq for Archive {
    fn eq(&self, other: &Self) -> bool {
        self.skills == other.skills && self.meta == other.meta
    }
}

impl Archive {
    pub fn new(meta: ArchiveMeta, bounds: Arc<ParamBounds>) -> Result<Self> {
        if !(meta.r_novel > 0.0 && meta.r_novel.is_finite()) {
            return Err(Error::Parameter(format!("r_novel must be positive, got {}", meta.r_novel)));
        }
        check_dim("archive parameter dimension", meta.param_dim, bounds.dim())?;
        let grid = (meta.d <= GRID_MAX_DIM).then(|| GridIndex {
            cell: meta.r_novel,
            cells: HashMap::new(),
        });
        Ok(Self {
            skills: Vec::new(),
            meta,
            bounds,
            grid,
        })
    }

    /// Empty archive shaped for `env`.
    pub fn for_env(env: &dyn crate::sim::Environment, seed: u64) -> Self {
        let meta = ArchiveMeta {
            env: env.name().to_string(),
            param_dim: env.param_dim(),
            d: env.outcome_dim(),
            r_novel: env.novelty_radius(),
            seed,
            extra: Default::default(),
        };
        Self::new(meta, env.bounds()).expect("environment radii are validated")
    }

    /// Same shape and metadata, no skills.
    pub fn empty_like(&self) -> Self {
        let mut a = Self::new(self.meta.clone(), self.bounds.clone()).expect("valid meta");
        a.grid = self.grid.as_ref().map(|g| GridIndex {
            cell: g.cell,
            cells: HashMap::new(),
        });
        a
    }

    pub fn meta(&self) -> &ArchiveMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ArchiveMeta {
        &mut self.meta
    }

    pub fn bounds(&self) -> &Arc<ParamBounds> {
        &self.bounds
    }

    pub fn r_novel(&self) -> f64 {
        self.meta.r_novel
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn best_quality(&self) -> Option<f64> {
        self.skills.iter().map(|s| s.quality).reduce(f64::max)
    }

    /// Indices of stored skills strictly closer than `r_novel` to `b`, in
    /// index order.
    fn neighbors_within(&self, b: &[f64]) -> Vec<usize> {
        let r = self.meta.r_novel;
        let candidates: Vec<usize> = match &self.grid {
            Some(g) => g.candidates(b),
            None => (0..self.skills.len()).collect(),
        };
        candidates
            .into_iter()
            .filter(|&i| self.skills[i].outcome.distance(b) < r)
            .collect()
    }

    /// Insert a skill if it is novel, or if it beats the stored skill it
    /// collides with. A newcomer that falls within `r_novel` of more than one
    /// stored skill is rejected, since taking the nearest one's slot would
    /// leave it too close to the others.
    pub fn try_insert(&mut self, skill: Skill) -> Result<InsertResult> {
        if !skill.outcome.valid {
            return Err(Error::InvalidOutcome);
        }
        check_dim("skill outcome", self.meta.d, skill.outcome.dim())?;
        check_dim("skill parameters", self.meta.param_dim, skill.params.dim())?;
        if !skill.quality.is_finite() || skill.outcome.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("skill has non-finite quality or outcome".into()));
        }
        let near = self.neighbors_within(&skill.outcome.values);
        match near.as_slice() {
            [] => {
                let idx = self.skills.len();
                if let Some(g) = &mut self.grid {
                    g.insert(&skill.outcome.values, idx);
                }
                self.skills.push(skill);
                Ok(InsertResult::Added)
            }
            [idx] if skill.quality > self.skills[*idx].quality => {
                let idx = *idx;
                if let Some(g) = &mut self.grid {
                    g.remove(&self.skills[idx].outcome.values, idx);
                    g.insert(&skill.outcome.values, idx);
                }
                let old = std::mem::replace(&mut self.skills[idx], skill);
                Ok(InsertResult::Replaced(old))
            }
            _ => Ok(InsertResult::Rejected),
        }
    }

    fn nearest_by<F: Fn(&Skill) -> f64>(&self, dist: F) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.skills.iter().enumerate() {
            let d = dist(s);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i).ok_or(Error::EmptyArchive)
    }

    /// Index of the skill whose outcome is nearest to `target`.
    pub fn nearest_outcome_index(&self, target: &[f64]) -> Result<usize> {
        check_dim("outcome query", self.meta.d, target.len())?;
        self.nearest_by(|s| s.outcome.distance(target))
    }

    pub fn nearest_outcome(&self, target: &[f64]) -> Result<&Skill> {
        Ok(&self.skills[self.nearest_outcome_index(target)?])
    }

    /// Indices of the `k` skills nearest to `theta` in parameter space,
    /// closest first, ties by lowest index. Asking for more than the archive
    /// holds returns every skill.
    pub fn knn_params_indices(&self, theta: &[f64], k: usize) -> Result<Vec<usize>> {
        if self.skills.is_empty() {
            return Err(Error::EmptyArchive);
        }
        check_dim("parameter query", self.meta.param_dim, theta.len())?;
        if k > self.skills.len() {
            log::warn!(
                "requested {k} neighbors from an archive of {}; using all skills",
                self.skills.len()
            );
        }
        let mut order: Vec<(f64, usize)> = self
            .skills
            .iter()
            .enumerate()
            .map(|(i, s)| (euclidean(s.params.values(), theta), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(order.into_iter().take(k).map(|(_, i)| i).collect())
    }

    pub fn knn_params(&self, theta: &[f64], k: usize) -> Result<Vec<&Skill>> {
        Ok(self
            .knn_params_indices(theta, k)?
            .into_iter()
            .map(|i| &self.skills[i])
            .collect())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_json_line(w, &self.meta)?;
        for s in &self.skills {
            write_json_line(
                w,
                &SkillRecord {
                    theta: s.params.values().to_vec(),
                    outcome: s.outcome.values.clone(),
                    quality: s.quality,
                },
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Read an archive; `bounds` supplies the parameter box of the
    /// environment named in the header.
    pub fn read_from<R: Read>(reader: R, bounds: Arc<ParamBounds>) -> Result<Self> {
        let mut lines = numbered_lines(BufReader::new(reader));
        let (line, text) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let meta: ArchiveMeta = parse_json_line(line, &text)?;
        let mut archive = Self::new(meta, bounds).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        for item in lines {
            let (line, text) = item?;
            let rec: SkillRecord = parse_json_line(line, &text)?;
            let err = |msg: String| Error::Parse { line, msg };
            if rec.theta.len() != archive.meta.param_dim {
                return Err(err(format!(
                    "theta has {} entries, header declares D={}",
                    rec.theta.len(),
                    archive.meta.param_dim
                )));
            }
            if rec.outcome.len() != archive.meta.d {
                return Err(err(format!(
                    "outcome has {} entries, header declares d={}",
                    rec.outcome.len(),
                    archive.meta.d
                )));
            }
            let params = ControllerParams::new(rec.theta, archive.bounds.clone()).map_err(|e| err(e.to_string()))?;
            let idx = archive.skills.len();
            if let Some(g) = &mut archive.grid {
                g.insert(&rec.outcome, idx);
            }
            archive.skills.push(Skill {
                params,
                outcome: Outcome::valid(rec.outcome),
                quality: rec.quality,
            });
        }
        Ok(archive)
    }

    pub fn load(path: &Path, bounds: Arc<ParamBounds>) -> Result<Self> {
        Self::read_from(File::open(path)?, bounds)
    }

    /// Read only the header line of an archive file.
    pub fn read_meta(path: &Path) -> Result<ArchiveMeta> {
        let mut lines = numbered_lines(BufReader::new(File::open(path)?));
        let (line, text) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        parse_json_line(line, &text)
    }
}
