//! The training loop: sandwich-rule steps with prioritized medium-subnet
//! sampling, then calibration and best-subnet selection per constraint.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::marginals::{draw_in_window, MarginalTable};
use crate::nn::{
    backward, calibrate_bn, cosine_lr, cross_entropy, evaluate, forward, kl_divergence, BnStats, DataSplits, Dataset,
    Images, Norm, Sgd, SupernetState,
};
use crate::pool::{prioritized_sample, Schedule, Source, SpaceSampler, SubnetPool};
use crate::resource::{consumption, in_window, ConstraintKind, ConstraintSet, ResourceContext};
use crate::rng::{self, Rng};
use crate::space::{SubnetStructure, SupernetSpec};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: u32,
    pub batch_size: usize,
    /// Defaults to a stream of the run's master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-5,
            epochs: 60,
            batch_size: 64,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingPolicy {
    /// Medium subnets come from the pools or the conditioned space sampler.
    #[default]
    Prioritized,
    /// Medium subnets always come from the space sampler; no pools are kept.
    RandomSearch,
}

impl SamplingPolicy {
    pub fn label(self) -> &'static str {
        match self {
            SamplingPolicy::Prioritized => "pss",
            SamplingPolicy::RandomSearch => "random",
        }
    }
}

/// Everything a run reads but never mutates.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: SupernetSpec,
    pub constraints: ConstraintSet,
    pub ctx: ResourceContext,
    pub marginals: MarginalTable,
    pub schedule: Schedule,
    pub pool_capacity: usize,
    pub train: TrainConfig,
    pub max_attempts: u64,
    pub policy: SamplingPolicy,
    pub data: DataSplits,
    pub calib_batch: usize,
    pub master_seed: u64,
}

impl Experiment {
    pub fn check(&self) -> Result<()> {
        self.spec.check()?;
        self.train.check()?;
        self.schedule.check()?;
        if self.constraints.is_empty() {
            return Err(Error::Config("at least one constraint is required".into()));
        }
        if self.marginals.constraints.len() != self.constraints.len() {
            return Err(Error::Config(format!(
                "marginal table covers {} constraints, run declares {}",
                self.marginals.constraints.len(),
                self.constraints.len()
            )));
        }
        if self.pool_capacity == 0 {
            return Err(Error::Config("pool.capacity must be at least 1".into()));
        }
        if self.data.train.side != self.spec.r_max as usize {
            return Err(Error::Config("dataset side must equal space.r_max".into()));
        }
        if self.data.train.len() < self.train.batch_size {
            return Err(Error::Config("training split is smaller than one batch".into()));
        }
        Ok(())
    }

    fn train_seed(&self) -> u64 {
        self.train
            .seed
            .unwrap_or_else(|| rng::derive_seed(self.master_seed, "train"))
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.data.train.len().div_ceil(self.train.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.train.epochs as u64
    }

    /// SHA-256 over every input that influences training, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let json = serde_json::to_vec(&(
            &self.spec,
            &self.constraints,
            &self.marginals,
            &self.schedule,
            self.pool_capacity,
            &self.train,
            self.max_attempts,
            self.policy,
            self.master_seed,
        ))
        .expect("serializable");
        h.update(&json);
        for (id, table) in &self.ctx.tables {
            h.update(id.as_bytes());
            h.update(table.to_text().as_bytes());
        }
        for d in [&self.data.train, &self.data.calib, &self.data.val] {
            for v in &d.images {
                h.update(v.to_le_bytes());
            }
            for l in &d.labels {
                h.update(l.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One rng per consumer so that no consumer shifts another's draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Streams {
    pub constraint: Rng,
    pub space: Rng,
    pub pool: Rng,
    pub data: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Streams {
        Streams {
            constraint: rng::stream(seed, "constraint"),
            space: rng::stream(seed, "space"),
            pool: rng::stream(seed, "pool"),
            data: rng::stream(seed, "data"),
        }
    }
}

/// Per-batch losses of the three sandwich subnets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub max: f64,
    pub mid: f64,
    pub min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub loss_max: f64,
    pub loss_mid: f64,
    pub loss_min: f64,
    pub from_space: u64,
    pub from_pool: u64,
    pub skipped: u64,
    pub occupancy: Vec<usize>,
}

pub const CURVE_HEADER: &str = "epoch,lr,loss_max,loss_mid,loss_min,from_space,from_pool,skipped,occupancy";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let occ: Vec<String> = self.occupancy.iter().map(|o| o.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss_max,
            self.loss_mid,
            self.loss_min,
            self.from_space,
            self.from_pool,
            self.skipped,
            occ.join(";")
        )
    }
}

/// Everything a run mutates. Serializing this at an epoch boundary and
/// resuming from it reproduces the uninterrupted run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub supernet: SupernetState,
    pub pools: Vec<SubnetPool>,
    /// Completed epochs.
    pub epoch: u32,
    pub streams: Streams,
    pub curves: Vec<EpochRecord>,
    /// Distinct medium structures drawn per constraint in the latest epoch.
    pub last_epoch_samples: Vec<BTreeSet<SubnetStructure>>,
    pub skipped: u64,
}

impl RunState {
    pub fn new(exp: &Experiment) -> Result<RunState> {
        exp.check()?;
        let seed = exp.train_seed();
        let supernet = SupernetState::init(&exp.spec, &mut rng::stream(seed, "init"))?;
        let t = exp.constraints.len();
        Ok(RunState {
            supernet,
            pools: (0..t).map(|t| SubnetPool::new(t, exp.pool_capacity)).collect(),
            epoch: 0,
            streams: Streams::new(seed),
            curves: Vec::new(),
            last_epoch_samples: vec![BTreeSet::new(); t],
            skipped: 0,
        })
    }

    pub fn is_complete(&self, exp: &Experiment) -> bool {
        self.epoch >= exp.train.epochs
    }
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::NonFiniteLoss(v) => Error::Divergence {
            step,
            detail: format!("loss became {v}"),
        },
        other => other,
    }
}

/// One sandwich-rule step: the largest subnet learns from the labels, the
/// medium and smallest subnets from its detached outputs, and one optimizer
/// step applies the summed gradients.
#[allow(clippy::too_many_arguments)]
pub fn slimmable_step(
    state: &mut SupernetState,
    spec: &SupernetSpec,
    mid: &SubnetStructure,
    images: Images<'_>,
    labels: &[u32],
    sgd: &Sgd,
    lr: f64,
) -> Result<StepLosses> {
    let classes = spec.num_classes as usize;
    let step = state.step;
    let (teacher, trace) = forward(state, spec, &spec.max_structure(), images, Norm::Batch)?;
    let ce = cross_entropy(&teacher, labels, classes).map_err(|e| diverged(step, e))?;
    backward(state, &trace, &ce.grad)?;

    let mut distill = |structure: &SubnetStructure| -> Result<f64> {
        let (logits, trace) = forward(state, spec, structure, images, Norm::Batch)?;
        let kl = kl_divergence(&logits, &teacher, classes).map_err(|e| diverged(step, e))?;
        backward(state, &trace, &kl.grad)?;
        Ok(kl.value)
    };
    let mid_loss = distill(mid)?;
    let min_loss = distill(&spec.min_structure())?;

    sgd.step(state, lr);
    if !state.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: "non-finite parameter after update".into(),
        });
    }
    Ok(StepLosses {
        max: ce.value,
        mid: mid_loss,
        min: min_loss,
    })
}

fn gather(data: &Dataset, idx: &[usize]) -> (Vec<f64>, Vec<u32>) {
    let mut images = Vec::with_capacity(idx.len() * data.side * data.side);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        images.extend_from_slice(data.image(i));
        labels.push(data.labels[i]);
    }
    (images, labels)
}

/// Draw a constraint index and a medium structure for it. Constraints that
/// can produce nothing are counted as skipped and the draw is repeated among
/// the rest.
fn draw_medium(
    exp: &Experiment,
    run: &mut RunState,
    epoch: u32,
    skipped: &mut u64,
) -> Result<(usize, SubnetStructure, Source)> {
    let total = exp.constraints.len();
    let mut excluded = vec![false; total];
    let sampler = SpaceSampler {
        spec: &exp.spec,
        ctx: &exp.ctx,
        marginals: &exp.marginals,
        max_attempts: exp.max_attempts,
    };
    let mut t = run.streams.constraint.gen_range(0..total);
    loop {
        let pool = &run.pools[t];
        let usable = !pool.is_empty() || exp.marginals.constraints[t].sampleable();
        if usable {
            let constraint = exp.constraints.get(t);
            let drawn = match exp.policy {
                SamplingPolicy::Prioritized => prioritized_sample(
                    pool,
                    &sampler,
                    constraint,
                    &exp.schedule,
                    epoch,
                    &mut run.streams.space,
                    &mut run.streams.pool,
                ),
                SamplingPolicy::RandomSearch => draw_in_window(
                    &exp.marginals,
                    t,
                    constraint,
                    &exp.spec,
                    &exp.ctx,
                    exp.max_attempts,
                    &mut run.streams.space,
                )
                .map(|d| (d.structure, Source::Space)),
            };
            match drawn {
                Ok((structure, source)) => return Ok((t, structure, source)),
                Err(e @ (Error::AttemptsExhausted { .. } | Error::Unsampleable { .. })) => {
                    log::warn!("skipping constraint {t} this batch: {e}")
                }
                Err(e) => return Err(e),
            }
        } else {
            log::warn!("skipping constraint {t}: no in-window candidates and an empty pool");
        }
        *skipped += 1;
        excluded[t] = true;
        let open: Vec<usize> = (0..total).filter(|&u| !excluded[u]).collect();
        if open.is_empty() {
            return Err(Error::Unsampleable { t });
        }
        t = open[run.streams.constraint.gen_range(0..open.len())];
    }
}

/// Train one epoch.
pub fn train_epoch(exp: &Experiment, run: &mut RunState) -> Result<EpochRecord> {
    let epoch = run.epoch + 1;
    let sgd = Sgd {
        momentum: exp.train.momentum,
        weight_decay: exp.train.weight_decay,
    };
    let data = &exp.data.train;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut run.streams.data);
    // A last batch too small for batch statistics joins the previous one.
    let mut batches: Vec<&[usize]> = order.chunks(exp.train.batch_size).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        batches.pop();
        let n = batches.len();
        batches[n - 1] = &order[(n - 1) * exp.train.batch_size..];
    }

    let total_steps = exp.total_steps();
    let mut sums = [0.0; 3];
    let (mut from_space, mut from_pool, mut skipped) = (0, 0, 0);
    let mut samples = vec![BTreeSet::new(); exp.constraints.len()];
    let mut lr = 0.0;
    for idx in &batches {
        let (t, mid, source) = draw_medium(exp, run, epoch, &mut skipped)?;
        match source {
            Source::Space => from_space += 1,
            Source::Pool => from_pool += 1,
        }
        let (images, labels) = gather(data, idx);
        lr = cosine_lr(run.supernet.step, total_steps, exp.train.lr0);
        let losses = slimmable_step(
            &mut run.supernet,
            &exp.spec,
            &mid,
            Images::new(&images, data.side),
            &labels,
            &sgd,
            lr,
        )?;
        sums[0] += losses.max;
        sums[1] += losses.mid;
        sums[2] += losses.min;
        if exp.policy == SamplingPolicy::Prioritized {
            run.pools[t].record_result(&mid, losses.mid, exp.schedule.lambda, epoch)?;
        }
        samples[t].insert(mid);
    }
    let n = batches.len() as f64;
    let record = EpochRecord {
        epoch,
        lr,
        loss_max: sums[0] / n,
        loss_mid: sums[1] / n,
        loss_min: sums[2] / n,
        from_space,
        from_pool,
        skipped,
        occupancy: run.pools.iter().map(SubnetPool::len).collect(),
    };
    log::info!(
        "epoch {epoch}: lr {lr:.4} loss max {:.4} mid {:.4} min {:.4}, space {from_space} pool {from_pool}",
        record.loss_max,
        record.loss_mid,
        record.loss_min
    );
    run.epoch = epoch;
    run.skipped += skipped;
    run.last_epoch_samples = samples;
    run.curves.push(record.clone());
    Ok(record)
}

/// Train until `until` epochs are complete (capped at the configured total),
/// calling `on_epoch` after each one.
pub fn train_until(
    exp: &Experiment,
    run: &mut RunState,
    until: u32,
    mut on_epoch: impl FnMut(&RunState, &EpochRecord) -> Result<()>,
) -> Result<()> {
    let until = until.min(exp.train.epochs);
    while run.epoch < until {
        let record = train_epoch(exp, run)?;
        on_epoch(run, &record)?;
    }
    Ok(())
}

pub fn train(exp: &Experiment, run: &mut RunState) -> Result<()> {
    train_until(exp, run, exp.train.epochs, |_, _| Ok(()))
}

/// A calibrated and evaluated candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub structure: SubnetStructure,
    /// Pool metric, absent for random-search candidates.
    pub metric: Option<f64>,
    pub consumption: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub t: usize,
    pub kind: ConstraintKind,
    pub target: f64,
    pub pool_size: usize,
    pub best: Option<CandidateResult>,
    pub candidates: Vec<CandidateResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub space: u64,
    pub pool: u64,
    pub last_epoch_space: u64,
    pub last_epoch_pool: u64,
}

pub const REPORT_FORMAT: &str = "pss-report v1";
pub const REPORT_HEADER: &str = "constraint_kind,target,consumption,accuracy,widths,resolution";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub method: String,
    pub k: usize,
    pub epochs: u32,
    pub supernet_accuracy: f64,
    pub constraints: Vec<ConstraintReport>,
    pub curves: Vec<EpochRecord>,
    pub sources: SourceStats,
    pub skipped: u64,
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl RunReport {
    /// One row per constraint; absent entries show `-`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for c in &self.constraints {
            let target = format_number(c.target);
            match &c.best {
                Some(b) => {
                    let widths: Vec<String> = b.structure.widths.iter().map(|w| w.to_string()).collect();
                    out.push_str(&format!(
                        "{},{},{},{:.6},{},{}\n",
                        c.kind,
                        target,
                        format_number(b.consumption),
                        b.accuracy,
                        widths.join(";"),
                        b.structure.resolution
                    ));
                }
                None => out.push_str(&format!("{},{target},-,-,-,-\n", c.kind)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Mean best accuracy over constraints that have a best subnet.
    pub fn mean_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self
            .constraints
            .iter()
            .filter_map(|c| c.best.as_ref().map(|b| b.accuracy))
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

pub fn calibrate_and_evaluate(
    exp: &Experiment,
    state: &SupernetState,
    structure: &SubnetStructure,
) -> Result<(BnStats, f64)> {
    let stats = calibrate_bn(state, &exp.spec, structure, exp.data.calib.view(), exp.calib_batch)?;
    let acc = evaluate(
        state,
        &exp.spec,
        structure,
        &stats,
        exp.data.val.view(),
        &exp.data.val.labels,
    )?;
    Ok((stats, acc))
}

/// The candidates finalize would consider for each constraint with a given
/// `k`: the pool's top `k`, or the last epoch's draws under random search.
pub fn candidates(exp: &Experiment, run: &RunState, k: usize) -> Vec<Vec<(SubnetStructure, Option<f64>)>> {
    (0..exp.constraints.len())
        .map(|t| match exp.policy {
            SamplingPolicy::Prioritized => run.pools[t]
                .top_k(k)
                .iter()
                .map(|e| (e.structure.clone(), Some(e.metric)))
                .collect(),
            SamplingPolicy::RandomSearch => run.last_epoch_samples[t].iter().map(|s| (s.clone(), None)).collect(),
        })
        .collect()
}

/// Calibrate and evaluate every candidate in parallel; results keep the
/// candidate order.
pub fn evaluate_candidates(
    exp: &Experiment,
    run: &RunState,
    lists: &[Vec<(SubnetStructure, Option<f64>)>],
) -> Result<Vec<Vec<CandidateResult>>> {
    let jobs: Vec<(usize, &SubnetStructure, Option<f64>)> = lists
        .iter()
        .enumerate()
        .flat_map(|(t, list)| list.iter().map(move |(s, m)| (t, s, *m)))
        .collect();
    let results: Vec<Result<(usize, CandidateResult)>> = jobs
        .par_iter()
        .map(|&(t, structure, metric)| {
            let c = consumption(&exp.constraints.get(t).kind, &exp.spec, structure, &exp.ctx)?;
            if !in_window(c, exp.constraints.get(t)) {
                return Err(Error::InvalidConstraint(format!(
                    "candidate {structure} for constraint {t} consumes {c}, outside its window"
                )));
            }
            let (_, accuracy) = calibrate_and_evaluate(exp, &run.supernet, structure)?;
            Ok((
                t,
                CandidateResult {
                    structure: structure.clone(),
                    metric,
                    consumption: c,
                    accuracy,
                },
            ))
        })
        .collect();
    let mut out = vec![Vec::new(); lists.len()];
    for r in results {
        let (t, c) = r?;
        out[t].push(c);
    }
    Ok(out)
}

/// Highest accuracy among the first `k` candidates; ties keep the earlier one.
pub fn select_best(results: &[CandidateResult], k: usize) -> Option<CandidateResult> {
    let mut best: Option<&CandidateResult> = None;
    for c in results.iter().take(k) {
        if best.is_none_or(|b| c.accuracy > b.accuracy) {
            best = Some(c);
        }
    }
    best.cloned()
}

/// Build the report from already evaluated candidates, keeping the first
/// `k` of each list under the prioritized policy.
pub fn assemble_report(
    exp: &Experiment,
    run: &RunState,
    results: Vec<Vec<CandidateResult>>,
    k: usize,
    supernet_accuracy: f64,
) -> RunReport {
    let constraints = results
        .into_iter()
        .enumerate()
        .map(|(t, list)| {
            let list: Vec<CandidateResult> = match exp.policy {
                SamplingPolicy::Prioritized => list.into_iter().take(k).collect(),
                SamplingPolicy::RandomSearch => list,
            };
            let c = exp.constraints.get(t);
            ConstraintReport {
                t,
                kind: c.kind.clone(),
                target: c.target,
                pool_size: run.pools[t].len(),
                best: select_best(&list, list.len()),
                candidates: list,
            }
        })
        .collect();
    let last = run.curves.last();
    RunReport {
        format: REPORT_FORMAT.to_string(),
        method: exp.policy.label().to_string(),
        k,
        epochs: run.epoch,
        supernet_accuracy,
        constraints,
        curves: run.curves.clone(),
        sources: SourceStats {
            space: run.curves.iter().map(|r| r.from_space).sum(),
            pool: run.curves.iter().map(|r| r.from_pool).sum(),
            last_epoch_space: last.map_or(0, |r| r.from_space),
            last_epoch_pool: last.map_or(0, |r| r.from_pool),
        },
        skipped: run.skipped,
    }
}

/// Calibrate the top `k` of each pool (or the random-search draws of the
/// last epoch) and report the most accurate per constraint. Constraints
/// with nothing to evaluate are reported absent.
pub fn finalize(exp: &Experiment, run: &RunState, k: usize) -> Result<RunReport> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let lists = candidates(exp, run, k);
    let results = evaluate_candidates(exp, run, &lists)?;
    let (_, supernet_accuracy) = calibrate_and_evaluate(exp, &run.supernet, &exp.spec.max_structure())?;
    Ok(assemble_report(exp, run, results, k, supernet_accuracy))
}

pub const CHECKPOINT_FORMAT: &str = "pss-checkpoint v1";

/// Serialized run state. Parameters are stored layer by layer, each tensor
/// row-major (`[out][in]`, the stem's rows holding its nine kernel taps), as
/// shortest round-trip decimals, so reloading is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub fingerprint: String,
    pub state: RunState,
}

impl Checkpoint {
    pub fn new(exp: &Experiment, state: RunState) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            fingerprint: exp.fingerprint(),
            state,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", c.format)));
        }
        Ok(c)
    }

    /// The state, provided the checkpoint was written for this experiment.
    pub fn into_state(self, exp: &Experiment) -> Result<RunState> {
        if self.fingerprint != exp.fingerprint() {
            return Err(Error::Config(
                "checkpoint was written by a different configuration".into(),
            ));
        }
        Ok(self.state)
    }
}
