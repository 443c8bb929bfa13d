//! Pretraining phases and the alternating adversarial schedule, with each
//! phase confined to its own parameter groups.

mod adam;
mod sampler;

pub use adam::{Adam, BETA1, BETA2, EPS};
pub use sampler::{balanced_batch_sampler, BalancedBatches};

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graphmi::{build_pair_set, Bound, MiObjective, PairPolicy, PairSet, RwrConfig, Similarity};
use crate::metrics::accuracy;
use crate::models::{ModelBundle, ParamGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "AD-JSD")]
    AdJsd,
    #[serde(rename = "CSAD-Content")]
    CsadContent,
    #[serde(rename = "CSAD-Struc")]
    CsadStruc,
    #[serde(rename = "CSAD")]
    Csad,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::AdJsd,
        Variant::CsadContent,
        Variant::CsadStruc,
        Variant::Csad,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AdJsd => "AD-JSD",
            Variant::CsadContent => "CSAD-Content",
            Variant::CsadStruc => "CSAD-Struc",
            Variant::Csad => "CSAD",
        }
    }

    /// The adversary's objective, or `None` for the baseline.
    pub fn objective(self, rwr: RwrConfig) -> Option<MiObjective> {
        let (similarity, bound) = match self {
            Variant::Baseline => return None,
            Variant::AdJsd => (Similarity::Content, Bound::Jsd),
            Variant::CsadContent => (Similarity::Content, Bound::CrossSample),
            Variant::CsadStruc => (Similarity::Structural, Bound::CrossSample),
            Variant::Csad => (Similarity::Joint, Bound::CrossSample),
        };
        Some(MiObjective { similarity, bound, rwr })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Inner-loop iterations of the bias and estimator phases.
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs_pretrain_target: usize,
    pub epochs_pretrain_bias: usize,
    pub epochs_pretrain_mi: usize,
    pub epochs_main: usize,
    pub lr_target: f64,
    pub lr_bias: f64,
    pub lr_mi: f64,
    pub lr_adv: f64,
    pub seed: u64,
    pub rwr: RwrConfig,
    pub pair_policy: PairPolicy,
    pub balanced_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Csad,
            k: 10,
            lambda: 1.0,
            batch_size: 64,
            epochs_pretrain_target: 5,
            epochs_pretrain_bias: 5,
            epochs_pretrain_mi: 5,
            epochs_main: 10,
            lr_target: 1e-3,
            lr_bias: 1e-3,
            lr_mi: 1e-3,
            lr_adv: 1e-4,
            seed: 0,
            rwr: RwrConfig::default(),
            pair_policy: PairPolicy::ChannelTolerance(1),
            balanced_batches: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 1 {
            return bad("K must be >= 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if self.batch_size < 8 {
            return bad(format!("batch_size must be >= 8, got {}", self.batch_size));
        }
        for (name, lr) in [
            ("lr_target", self.lr_target),
            ("lr_bias", self.lr_bias),
            ("lr_mi", self.lr_mi),
            ("lr_adv", self.lr_adv),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a positive number, got {lr}"));
            }
        }
        self.rwr.validate()
    }
}

/// One minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub bias: Vec<Vec<i32>>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, idx: &[usize]) -> Self {
        Self {
            x: ds.x.select_rows(idx),
            y: idx.iter().map(|&i| ds.y[i]).collect(),
            bias: idx.iter().map(|&i| ds.bias_row(i).to_vec()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn bias_channel(&self, c: usize) -> Vec<usize> {
        self.bias.iter().map(|b| b[c] as usize).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PretrainTarget,
    PretrainBias,
    PretrainMi,
    Main,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub phase: Phase,
    pub step: u64,
    pub epoch: usize,
    /// Loss name → value: `target`, `bias`, `mi`, `adversarial`.
    pub losses: BTreeMap<String, f64>,
    /// Set when the batch's pair set had no positives or no negatives and
    /// the estimator phases were skipped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub mean_losses: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    pub skipped_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Predicted classes; a single-logit head thresholds at zero.
pub fn predict(bundle: &ModelBundle, x: &Tensor) -> Result<Vec<usize>> {
    let logits = bundle.target_logits(x, 512)?;
    let c = logits.cols();
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            if c == 1 {
                (row[0] > 0.0) as usize
            } else {
                (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b })
            }
        })
        .collect())
}

/// Positive-class probabilities of a single-logit head.
pub fn predict_scores(bundle: &ModelBundle, x: &Tensor) -> Result<Vec<f64>> {
    let logits = bundle.target_logits(x, 512)?;
    if logits.cols() != 1 {
        return Err(Error::dim("scores need a single-logit target head"));
    }
    Ok(logits.data().iter().map(|&z| crate::autodiff::sigmoid_f64(z)).collect())
}

pub fn dataset_accuracy(bundle: &ModelBundle, ds: &Dataset) -> Result<f64> {
    accuracy(&predict(bundle, &ds.x)?, &ds.y)
}

fn target_loss<'t>(logits: Var<'t>, y: &[usize], binary: bool) -> Result<Var<'t>> {
    if binary {
        let t: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        logits.bce_with_logits(&t)
    } else {
        logits.cross_entropy(y)
    }
}

/// Gradients of `loss` for `groups`, ordered like `ModelBundle::all_params`.
fn group_grads<'t>(
    tape: &'t Tape,
    model: &crate::models::BoundBundle<'t>,
    loss: Var<'t>,
    groups: &[ParamGroup],
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut g = tape.backward(loss)?;
    Ok(ParamGroup::ALL
        .iter()
        .filter(|gr| groups.contains(gr))
        .flat_map(|&gr| model.group_vars(gr))
        .map(|v| g.take(v))
        .collect())
}

fn apply(opt: &mut Adam, bundle: &mut ModelBundle, groups: &[ParamGroup], grads: &[Option<Vec<f64>>]) {
    let owner: Vec<ParamGroup> = ParamGroup::ALL
        .iter()
        .flat_map(|&g| std::iter::repeat(g).take(bundle.group_params(g).len()))
        .collect();
    let params = bundle
        .all_params_mut()
        .into_iter()
        .zip(owner)
        .filter(|(_, g)| groups.contains(g))
        .map(|(p, _)| p)
        .collect();
    opt.step(params, grads);
}

/// Optimizer steps taken so far by each phase's optimizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OptimizerSteps {
    pub target: u64,
    pub bias: u64,
    pub mi: u64,
    pub adversarial: u64,
}

/// Owns the per-phase optimizers, the shuffling RNG and the history of one
/// training run.
pub struct Trainer {
    cfg: TrainConfig,
    objective: Option<MiObjective>,
    opt_target: Adam,
    opt_bias: Adam,
    opt_mi: Adam,
    opt_adv: Adam,
    step: u64,
    rng: ChaCha8Rng,
    pub history: TrainHistory,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            objective: cfg.variant.objective(cfg.rwr),
            opt_target: Adam::new(cfg.lr_target),
            opt_bias: Adam::new(cfg.lr_bias),
            opt_mi: Adam::new(cfg.lr_mi),
            opt_adv: Adam::new(cfg.lr_adv),
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg: cfg.clone(),
            history: TrainHistory::default(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizer_steps(&self) -> OptimizerSteps {
        OptimizerSteps {
            target: self.opt_target.steps(),
            bias: self.opt_bias.steps(),
            mi: self.opt_mi.steps(),
            adversarial: self.opt_adv.steps(),
        }
    }

    /// The objective the estimator maximizes; errors for the baseline.
    pub fn objective(&self) -> Result<MiObjective> {
        self.objective
            .ok_or_else(|| Error::Config("the baseline variant has no adversary".into()))
    }

    /// Shuffled batch index lists for one epoch.
    fn epoch_batches(&mut self, ds: &Dataset) -> Result<Vec<Vec<usize>>> {
        let n = ds.len();
        if n == 0 {
            return Err(Error::Data("empty dataset".into()));
        }
        let bs = self.cfg.batch_size;
        let count = (n / bs).max(1);
        if self.cfg.balanced_batches {
            let seed = rand::Rng::gen(&mut self.rng);
            return Ok(balanced_batch_sampler(&ds.y, bs, seed)?.take(count).collect());
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        // Trailing samples that do not fill a batch are dropped.
        Ok(idx.chunks(bs.min(n)).take(count).map(<[usize]>::to_vec).collect())
    }

    fn push_step(&mut self, phase: Phase, epoch: usize, losses: BTreeMap<String, f64>, skipped: bool) -> StepRecord {
        let rec = StepRecord {
            phase,
            step: self.step,
            epoch,
            losses,
            skipped,
        };
        self.step += 1;
        self.history.records.push(HistoryRecord::Step(rec.clone()));
        rec
    }

    /// Phase (a): one update of `F`, `D^y`, `P^y` on the target loss.
    pub fn target_update(&mut self, bundle: &mut ModelBundle, batch: &Batch) -> Result<f64> {
        let groups = [ParamGroup::Extractor, ParamGroup::Target];
        let tape = Tape::new();
        let model = bundle.bind(&tape, &groups);
        let logits = model.target_logits(tape.leaf(&batch.x))?;
        let loss = target_loss(logits, &batch.y, bundle.binary_target())?;
        let value = loss.item();
        let grads = group_grads(&tape, &model, loss, &groups)?;
        apply(&mut self.opt_target, bundle, &groups, &grads);
        Ok(value)
    }

    /// Phase (b): `steps` updates of `D^b` and the bias heads on the mean
    /// per-channel cross-entropy. `h` is computed outside the tape, so no
    /// gradient reaches `F`. Returns the last loss.
    pub fn bias_updates(&mut self, bundle: &mut ModelBundle, batch: &Batch, steps: usize) -> Result<f64> {
        let h = bundle.forward(&batch.x)?.h;
        let labels: Vec<Vec<usize>> = (0..bundle.bias_predictors.len())
            .map(|c| batch.bias_channel(c))
            .collect();
        let groups = [ParamGroup::Bias];
        let mut last = f64::NAN;
        for _ in 0..steps {
            let tape = Tape::new();
            let model = bundle.bind(&tape, &groups);
            let hb = model.bias_disentangler.forward(tape.leaf(&h))?;
            let heads = model.bias_logits(hb)?;
            let mut loss = heads[0].cross_entropy(&labels[0])?;
            for (z, l) in heads.iter().zip(&labels).skip(1) {
                loss = loss.add(z.cross_entropy(l)?)?;
            }
            let loss = loss.scale(1.0 / heads.len() as f64);
            last = loss.item();
            let grads = group_grads(&tape, &model, loss, &groups)?;
            apply(&mut self.opt_bias, bundle, &groups, &grads);
        }
        Ok(last)
    }

    /// Current bound value on a batch, without updating anything.
    pub fn mi_value(&self, bundle: &ModelBundle, batch: &Batch, omega: &PairSet) -> Result<f64> {
        let obj = self.objective()?;
        let fwd = bundle.forward(&batch.x)?;
        let tape = Tape::new();
        let model = bundle.bind(&tape, &[]);
        Ok(obj
            .evaluate(&model, tape.leaf(&fwd.hy), tape.leaf(&fwd.hb), omega)?
            .item())
    }

    /// Phase (c): `steps` updates of `M_y`, `M_b`, `alpha`, `tau` ascending
    /// the bound. Features are fixed for the whole phase. Returns the bound
    /// value before the last update.
    pub fn mi_updates(
        &mut self,
        bundle: &mut ModelBundle,
        batch: &Batch,
        omega: &PairSet,
        steps: usize,
    ) -> Result<f64> {
        let obj = self.objective()?;
        let fwd = bundle.forward(&batch.x)?;
        let groups = [ParamGroup::Estimator];
        let mut last = f64::NAN;
        for _ in 0..steps {
            let tape = Tape::new();
            let model = bundle.bind(&tape, &groups);
            let mi = obj.evaluate(&model, tape.leaf(&fwd.hy), tape.leaf(&fwd.hb), omega)?;
            last = mi.item();
            let grads = group_grads(&tape, &model, mi.neg(), &groups)?;
            apply(&mut self.opt_mi, bundle, &groups, &grads);
        }
        Ok(last)
    }

    /// Phase (d): one update of `F` alone, descending `lambda` times the bound.
    pub fn adversarial_update(&mut self, bundle: &mut ModelBundle, batch: &Batch, omega: &PairSet) -> Result<f64> {
        let obj = self.objective()?;
        let groups = [ParamGroup::Extractor];
        let tape = Tape::new();
        let model = bundle.bind(&tape, &groups);
        let h = model.features(tape.leaf(&batch.x))?;
        let hy = model.target_disentangler.forward(h)?;
        let hb = model.bias_disentangler.forward(h)?;
        let loss = obj.evaluate(&model, hy, hb, omega)?.scale(self.cfg.lambda);
        let value = loss.item();
        let grads = group_grads(&tape, &model, loss, &groups)?;
        apply(&mut self.opt_adv, bundle, &groups, &grads);
        Ok(value)
    }

    /// One main-loop step: (a), then for adversarial variants (b) K bias
    /// updates, (c) K estimator updates and (d) one extractor update. (c)
    /// and (d) are skipped, and the skip recorded, when the batch's pair set
    /// is degenerate.
    pub fn train_step(&mut self, bundle: &mut ModelBundle, batch: &Batch, epoch: usize) -> Result<StepRecord> {
        let mut losses = BTreeMap::new();
        losses.insert("target".to_string(), self.target_update(bundle, batch)?);
        let mut skipped = false;
        if self.objective.is_some() {
            let k = self.cfg.k;
            losses.insert("bias".into(), self.bias_updates(bundle, batch, k)?);
            let omega = build_pair_set(&batch.bias, self.cfg.pair_policy)?;
            if omega.is_estimable() {
                losses.insert("mi".into(), self.mi_updates(bundle, batch, &omega, k)?);
                losses.insert("adversarial".into(), self.adversarial_update(bundle, batch, &omega)?);
            } else {
                skipped = true;
            }
        }
        Ok(self.push_step(Phase::Main, epoch, losses, skipped))
    }

    fn close_epoch(&mut self, phase: Phase, epoch: usize, from: usize, metrics: BTreeMap<String, f64>) -> EpochRecord {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut skipped = 0;
        for r in &self.history.records[from..] {
            if let HistoryRecord::Step(s) = r {
                skipped += s.skipped as usize;
                for (k, v) in &s.losses {
                    let e = sums.entry(k.clone()).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        let rec = EpochRecord {
            phase,
            epoch,
            mean_losses: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            metrics,
            skipped_batches: skipped,
        };
        self.history.records.push(HistoryRecord::Epoch(rec.clone()));
        rec
    }

    pub fn pretrain_target(&mut self, bundle: &mut ModelBundle, data: &Dataset) -> Result<()> {
        for epoch in 0..self.cfg.epochs_pretrain_target {
            let from = self.history.records.len();
            for idx in self.epoch_batches(data)? {
                let loss = self.target_update(bundle, &Batch::from_dataset(data, &idx))?;
                self.push_step(Phase::PretrainTarget, epoch, [("target".into(), loss)].into(), false);
            }
            self.close_epoch(Phase::PretrainTarget, epoch, from, BTreeMap::new());
        }
        Ok(())
    }

    pub fn pretrain_bias(&mut self, bundle: &mut ModelBundle, data: &Dataset) -> Result<()> {
        for epoch in 0..self.cfg.epochs_pretrain_bias {
            let from = self.history.records.len();
            for idx in self.epoch_batches(data)? {
                let loss = self.bias_updates(bundle, &Batch::from_dataset(data, &idx), 1)?;
                self.push_step(Phase::PretrainBias, epoch, [("bias".into(), loss)].into(), false);
            }
            self.close_epoch(Phase::PretrainBias, epoch, from, BTreeMap::new());
        }
        Ok(())
    }

    /// Degenerate batches are skipped; if no batch of the phase could be
    /// estimated the estimation error is returned.
    pub fn pretrain_mi(&mut self, bundle: &mut ModelBundle, data: &Dataset) -> Result<()> {
        self.objective()?;
        let mut estimated = 0usize;
        let mut last_err = None;
        for epoch in 0..self.cfg.epochs_pretrain_mi {
            let from = self.history.records.len();
            for idx in self.epoch_batches(data)? {
                let batch = Batch::from_dataset(data, &idx);
                let omega = build_pair_set(&batch.bias, self.cfg.pair_policy)?;
                if !omega.is_estimable() {
                    last_err = Some(Error::Estimation(format!(
                        "pair set has {} positive and {} negative pairs",
                        omega.num_positive(),
                        omega.num_negative()
                    )));
                    self.push_step(Phase::PretrainMi, epoch, BTreeMap::new(), true);
                    continue;
                }
                let mi = self.mi_updates(bundle, &batch, &omega, 1)?;
                estimated += 1;
                self.push_step(Phase::PretrainMi, epoch, [("mi".into(), mi)].into(), false);
            }
            self.close_epoch(Phase::PretrainMi, epoch, from, BTreeMap::new());
        }
        match (estimated, last_err) {
            (0, Some(e)) => Err(e),
            _ => Ok(()),
        }
    }

    /// Main loop over `epochs_main` epochs; each epoch is followed by an
    /// accuracy evaluation on the training data and, if given, `eval`.
    pub fn train_main(&mut self, bundle: &mut ModelBundle, data: &Dataset, eval: Option<&Dataset>) -> Result<()> {
        for epoch in 0..self.cfg.epochs_main {
            let from = self.history.records.len();
            for idx in self.epoch_batches(data)? {
                self.train_step(bundle, &Batch::from_dataset(data, &idx), epoch)?;
            }
            let mut metrics = BTreeMap::new();
            metrics.insert("train_accuracy".to_string(), dataset_accuracy(bundle, data)?);
            if let Some(ev) = eval {
                metrics.insert("eval_accuracy".to_string(), dataset_accuracy(bundle, ev)?);
            }
            self.close_epoch(Phase::Main, epoch, from, metrics);
        }
        Ok(())
    }
}

pub fn pretrain_target(bundle: &mut ModelBundle, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    let mut t = Trainer::new(cfg);
    t.pretrain_target(bundle, data)?;
    Ok(t.history)
}

pub fn pretrain_bias(bundle: &mut ModelBundle, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    let mut t = Trainer::new(cfg);
    t.pretrain_bias(bundle, data)?;
    Ok(t.history)
}

pub fn pretrain_mi(bundle: &mut ModelBundle, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    let mut t = Trainer::new(cfg);
    t.pretrain_mi(bundle, data)?;
    Ok(t.history)
}

/// Full schedule: target pretraining; for adversarial variants bias and
/// estimator pretraining; then the main loop.
pub fn fit(
    bundle: &mut ModelBundle,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let (history, outcome) = fit_partial(bundle, train, eval, cfg);
    outcome.map(|()| history)
}

/// Like [`fit`], but the history recorded up to a failure is returned
/// alongside the error.
pub fn fit_partial(
    bundle: &mut ModelBundle,
    train: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
) -> (TrainHistory, Result<()>) {
    if let Err(e) = cfg.validate() {
        return (TrainHistory::default(), Err(e));
    }
    if bundle.input_dim() != train.x_dim() {
        let e = Error::dim(format!(
            "model expects {} features, data has {}",
            bundle.input_dim(),
            train.x_dim()
        ));
        return (TrainHistory::default(), Err(e));
    }
    let mut t = Trainer::new(cfg);
    let outcome = (|| {
        t.pretrain_target(bundle, train)?;
        if cfg.variant != Variant::Baseline {
            t.pretrain_bias(bundle, train)?;
            t.pretrain_mi(bundle, train)?;
        }
        t.train_main(bundle, train, eval)
    })();
    (t.history, outcome)
}

#[cfg(test)]
mod tests;
