//! Cross-sample correlation machinery: pair sets, content and structural
//! similarities over a minibatch graph, and the two mutual-information
//! lower bounds maximized by the estimator and minimized by the extractor.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::BoundBundle;

/// Floor added inside the logarithms of [`structural_similarity`].
pub const LOG_FLOOR: f64 = 1e-12;
/// Score magnitude bound applied before exponentiation in [`estimate_cs`].
pub const SCORE_CLAMP: f64 = 50.0;

/// How positive pairs are read from bias labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// Identical bias tuples.
    SameLabel,
    /// Every channel within `t` bins.
    ChannelTolerance(u32),
}

/// Positive pairs `(i, j)` of a batch; every other pair is negative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSet {
    n: usize,
    positive: Vec<bool>,
}

impl PairSet {
    pub fn from_mask(n: usize, positive: Vec<bool>) -> Result<Self> {
        if positive.len() != n * n {
            return Err(Error::dim(format!(
                "pair mask of {} entries for batch {n}",
                positive.len()
            )));
        }
        Ok(Self { n, positive })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.positive[i * self.n + j]
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        self.positive
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(k, _)| (k / n, k % n))
    }

    pub fn num_positive(&self) -> usize {
        self.positive.iter().filter(|&&p| p).count()
    }

    pub fn num_negative(&self) -> usize {
        self.positive.len() - self.num_positive()
    }

    /// Both sides of the bound are defined.
    pub fn is_estimable(&self) -> bool {
        self.num_positive() > 0 && self.num_negative() > 0
    }

    /// Averaging weights over positives and over negatives.
    fn mean_weights(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (np, nn) = (self.num_positive(), self.num_negative());
        if np == 0 || nn == 0 {
            return Err(Error::Estimation(format!(
                "pair set has {np} positive and {nn} negative pairs"
            )));
        }
        let pos = self
            .positive
            .iter()
            .map(|&p| if p { 1.0 / np as f64 } else { 0.0 })
            .collect();
        let neg = self
            .positive
            .iter()
            .map(|&p| if p { 0.0 } else { 1.0 / nn as f64 })
            .collect();
        Ok((pos, neg))
    }
}

/// Pairs whose bias labels are similar under `policy`.
pub fn build_pair_set<L: AsRef<[i32]>>(labels: &[L], policy: PairPolicy) -> Result<PairSet> {
    let n = labels.len();
    let arity = labels.first().map_or(0, |l| l.as_ref().len());
    if let Some(k) = labels.iter().position(|l| l.as_ref().len() != arity) {
        return Err(Error::Label(format!(
            "bias label {k} has arity {}, expected {arity}",
            labels[k].as_ref().len()
        )));
    }
    let mut positive = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (labels[i].as_ref(), labels[j].as_ref());
            positive[i * n + j] = match policy {
                PairPolicy::SameLabel => a == b,
                PairPolicy::ChannelTolerance(t) => a
                    .iter()
                    .zip(b)
                    .all(|(x, y)| (i64::from(*x) - i64::from(*y)).unsigned_abs() <= u64::from(t)),
            };
        }
    }
    PairSet::from_mask(n, positive)
}

/// Row-stochastic, strictly positive batch-graph transition matrix.
#[derive(Clone, Copy, Debug)]
pub struct EdgeMatrix<'t>(pub Var<'t>);

/// Row `i` holds the normalized restart-walk proximity `r_i`.
#[derive(Clone, Copy, Debug)]
pub struct ProximityMatrix<'t>(pub Var<'t>);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RwrMode {
    /// `(1 - c)(I - cE)^{-1}` via one linear solve.
    #[default]
    Closed,
    /// Unrolled propagation from the basis vectors.
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RwrConfig {
    /// Restart probability in (0, 1).
    pub c: f64,
    pub iters: usize,
    pub mode: RwrMode,
}

impl Default for RwrConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            iters: 60,
            mode: RwrMode::Closed,
        }
    }
}

impl RwrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::Config(format!(
                "restart probability {} outside (0, 1)",
                self.c
            )));
        }
        if self.mode == RwrMode::Iterative && self.iters == 0 {
            return Err(Error::Config("iterative walk needs iters >= 1".into()));
        }
        Ok(())
    }
}

/// `Sc[i][j] = cos(ey_i, eb_j)`, unscaled.
pub fn content_similarity<'t>(ey: Var<'t>, eb: Var<'t>) -> Result<Var<'t>> {
    ey.cosine_rows(eb)
}

/// `E = softmax_rows(tau * cos(e, e))`, self-similarity included.
pub fn build_edges<'t>(e: Var<'t>, tau: Var<'t>) -> Result<EdgeMatrix<'t>> {
    let n = e.shape()[0];
    if n < 2 {
        return Err(Error::dim(format!("batch graph needs >= 2 nodes, got {n}")));
    }
    let sim = e.cosine_rows(e)?;
    Ok(EdgeMatrix(sim.mul_scalar(tau)?.softmax_rows()?))
}

/// Random walk with restart from every node. Column `i` of the raw solution
/// `(1 - c)(I - cE)^{-1} a_i` becomes row `i` of the result, which is then
/// renormalized to sum to one.
pub fn rwr<'t>(edges: EdgeMatrix<'t>, cfg: &RwrConfig) -> Result<ProximityMatrix<'t>> {
    cfg.validate()?;
    let e = edges.0;
    let tape: &'t Tape = e.tape();
    let shape = e.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::dim(format!("edge matrix has shape {shape:?}")));
    }
    let n = shape[0];
    let eye = tape.leaf(&Tensor::eye(n));
    let raw = match cfg.mode {
        RwrMode::Closed => {
            let system = eye.sub(e.scale(cfg.c))?;
            system.linear_solve(eye)?.scale(1.0 - cfg.c)
        }
        RwrMode::Iterative => {
            let ce = e.scale(cfg.c);
            let restart = eye.scale(1.0 - cfg.c);
            let mut r = eye;
            for _ in 0..cfg.iters {
                r = ce.matmul(r)?.add(restart)?;
            }
            r
        }
    };
    Ok(ProximityMatrix(raw.transpose()?.normalize_rows()?))
}

/// Inverse symmetric cross entropy
/// `Ss[i][j] = (<ry_i, log rb_j> + <rb_j, log ry_i>) / 2`, always <= 0.
pub fn structural_similarity<'t>(
    ry: ProximityMatrix<'t>,
    rb: ProximityMatrix<'t>,
) -> Result<Var<'t>> {
    let (ry, rb) = (ry.0, rb.0);
    let log_ry = ry.add_scalar(LOG_FLOOR).ln();
    let log_rb = rb.add_scalar(LOG_FLOOR).ln();
    let a = ry.matmul(log_rb.transpose()?)?;
    let b = log_ry.matmul(rb.transpose()?)?;
    Ok(a.add(b)?.scale(0.5))
}

/// `alpha * (Sc + Ss)`, or `alpha` times whichever one is present.
pub fn combine_scores<'t>(
    content: Option<Var<'t>>,
    structural: Option<Var<'t>>,
    alpha: Var<'t>,
) -> Result<Var<'t>> {
    let sum = match (content, structural) {
        (Some(c), Some(s)) => c.add(s)?,
        (Some(c), None) => c,
        (None, Some(s)) => s,
        (None, None) => {
            return Err(Error::Config(
                "score needs content or structural similarity".into(),
            ))
        }
    };
    sum.mul_scalar(alpha)
}

fn check_scores(scores: Var<'_>, omega: &PairSet) -> Result<()> {
    let shape = scores.shape();
    if shape != [omega.len(), omega.len()] {
        return Err(Error::dim(format!(
            "scores {shape:?} for a pair set over {} samples",
            omega.len()
        )));
    }
    Ok(())
}

/// Jensen-Shannon bound:
/// `-E_pos sp(-S) - E_neg sp(S)`.
pub fn estimate_jsd<'t>(scores: Var<'t>, omega: &PairSet) -> Result<Var<'t>> {
    check_scores(scores, omega)?;
    let (wp, wn) = omega.mean_weights()?;
    let pos = scores.neg().softplus().weighted_sum(wp)?;
    let neg = scores.softplus().weighted_sum(wn)?;
    Ok(pos.add(neg)?.neg())
}

/// Cross-sample bound:
/// `-log(1 + E_pos exp(-S)) - log(1 + E_neg exp(S))`.
pub fn estimate_cs<'t>(scores: Var<'t>, omega: &PairSet) -> Result<Var<'t>> {
    check_scores(scores, omega)?;
    let (wp, wn) = omega.mean_weights()?;
    let s = scores.clamp(-SCORE_CLAMP, SCORE_CLAMP);
    let pos = s.neg().exp().weighted_sum(wp)?.add_scalar(1.0).ln();
    let neg = s.exp().weighted_sum(wn)?.add_scalar(1.0).ln();
    Ok(pos.add(neg)?.neg())
}

/// Which similarities feed the score matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Content,
    Structural,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Jsd,
    CrossSample,
}

/// Estimator pipeline from disentangled features to the MI bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiObjective {
    pub similarity: Similarity,
    pub bound: Bound,
    pub rwr: RwrConfig,
}

impl MiObjective {
    /// Score matrix `M(hy_i, hb_j)` for one batch.
    pub fn scores<'t>(&self, model: &BoundBundle<'t>, hy: Var<'t>, hb: Var<'t>) -> Result<Var<'t>> {
        let (ey, eb) = model.embed(hy, hb)?;
        self.scores_from_embeddings(ey, eb, model.tau, model.alpha)
    }

    pub fn scores_from_embeddings<'t>(
        &self,
        ey: Var<'t>,
        eb: Var<'t>,
        tau: Var<'t>,
        alpha: Var<'t>,
    ) -> Result<Var<'t>> {
        let content = match self.similarity {
            Similarity::Content | Similarity::Joint => Some(content_similarity(ey, eb)?),
            Similarity::Structural => None,
        };
        let structural = match self.similarity {
            Similarity::Structural | Similarity::Joint => {
                let ry = rwr(build_edges(ey, tau)?, &self.rwr)?;
                let rb = rwr(build_edges(eb, tau)?, &self.rwr)?;
                Some(structural_similarity(ry, rb)?)
            }
            Similarity::Content => None,
        };
        combine_scores(content, structural, alpha)
    }

    pub fn estimate<'t>(&self, scores: Var<'t>, omega: &PairSet) -> Result<Var<'t>> {
        match self.bound {
            Bound::Jsd => estimate_jsd(scores, omega),
            Bound::CrossSample => estimate_cs(scores, omega),
        }
    }

    /// Bound value for a batch of disentangled features.
    pub fn evaluate<'t>(
        &self,
        model: &BoundBundle<'t>,
        hy: Var<'t>,
        hb: Var<'t>,
        omega: &PairSet,
    ) -> Result<Var<'t>> {
        let s = self.scores(model, hy, hb)?;
        self.estimate(s, omega)
    }
}
