//! Per-constraint subnet pools and prioritized sampling.
//!
//! A pool keeps the best `M` structures seen for one constraint, ranked by a
//! metric `m = -loss` that is smoothed with a moving average each time the
//! structure is trained again. Each batch the trainer either samples a fresh
//! in-window structure from the space (probability `p`) or draws one from the
//! pool with a softmax over metrics at temperature `η`. Both `p` and `η` stay
//! at 1 until the pool fills, then decay geometrically with the epoch towards
//! `p_end` and `η_end`.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginals::{draw_in_window, MarginalTable};
use crate::resource::{parse_decimal, parse_fields, parse_value, ResourceConstraint, ResourceContext};
use crate::space::{SubnetStructure, SupernetSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub structure: SubnetStructure,
    pub metric: f64,
    pub insert_epoch: u32,
}

/// Pool order: metric descending, then earlier insertion, then structure.
pub fn entry_order(a: &PoolEntry, b: &PoolEntry) -> Ordering {
    b.metric
        .total_cmp(&a.metric)
        .then(a.insert_epoch.cmp(&b.insert_epoch))
        .then_with(|| a.structure.cmp(&b.structure))
}

/// When the decay of `p` and `η` is switched on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Decay once the pool is full; `p = η = 1` while it is filling.
    #[default]
    WhenFull,
    /// Decay while the pool is *not* full, the indicator read literally.
    WhileFilling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub p_end: f64,
    pub eta_end: f64,
    pub total_epochs: u32,
    /// Moving-average weight on the old metric.
    pub lambda: f64,
    #[serde(default)]
    pub gate: GateMode,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            p_end: 0.01,
            eta_end: 0.01,
            total_epochs: 60,
            lambda: 0.9,
            gate: GateMode::WhenFull,
        }
    }
}

impl Schedule {
    pub fn check(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.p_end) || !open(self.eta_end) {
            return Err(Error::Config(format!(
                "p_end {} and eta_end {} must lie in (0, 1)",
                self.p_end, self.eta_end
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} must lie in [0, 1)", self.lambda)));
        }
        Ok(())
    }

    fn exponent(&self, pool_full: bool, epoch: u32) -> f64 {
        let gate = match self.gate {
            GateMode::WhenFull => pool_full,
            GateMode::WhileFilling => !pool_full,
        };
        if gate {
            (epoch as f64 - 1.0) / self.total_epochs as f64
        } else {
            0.0
        }
    }
}

/// Probability of drawing from the structure space rather than the pool.
pub fn sampling_probability(s: &Schedule, pool_full: bool, epoch: u32) -> f64 {
    s.p_end.powf(s.exponent(pool_full, epoch))
}

/// Softmax temperature for pool draws.
pub fn temperature(s: &Schedule, pool_full: bool, epoch: u32) -> f64 {
    s.eta_end.powf(s.exponent(pool_full, epoch))
}

/// What [`SubnetPool::record_result`] did.
#[derive(Clone, Debug, PartialEq)]
pub enum PoolUpdate {
    Inserted {
        evicted: Option<PoolEntry>,
    },
    /// New structure ranked last in a full pool and was dropped at once.
    Rejected,
    Updated {
        old: f64,
        new: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubnetPool {
    pub t: usize,
    pub capacity: usize,
    entries: Vec<PoolEntry>,
}

impl SubnetPool {
    pub fn new(t: usize, capacity: usize) -> Self {
        assert!(capacity >= 1, "pool capacity must be at least 1");
        SubnetPool {
            t,
            capacity,
            entries: Vec::with_capacity(capacity + 1),
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn position(&self, structure: &SubnetStructure) -> Option<usize> {
        self.entries.iter().position(|e| &e.structure == structure)
    }

    /// Feed back the training loss of `structure`. New structures enter with
    /// `m = -loss` and the worst entry is evicted if the pool overflows;
    /// known ones get `m <- λ m + (1 - λ)(-loss)`.
    pub fn record_result(
        &mut self,
        structure: &SubnetStructure,
        batch_loss: f64,
        lambda: f64,
        epoch: u32,
    ) -> Result<PoolUpdate> {
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss(batch_loss));
        }
        let observed = -batch_loss;
        if let Some(i) = self.position(structure) {
            let mut entry = self.entries.remove(i);
            let old = entry.metric;
            entry.metric = lambda * old + (1.0 - lambda) * observed;
            let new = entry.metric;
            self.insert_sorted(entry);
            return Ok(PoolUpdate::Updated { old, new });
        }
        let entry = PoolEntry {
            structure: structure.clone(),
            metric: observed,
            insert_epoch: epoch,
        };
        let at = self.insert_sorted(entry);
        if self.entries.len() > self.capacity {
            let evicted = self.entries.pop().expect("overfull pool");
            if at == self.capacity {
                return Ok(PoolUpdate::Rejected);
            }
            return Ok(PoolUpdate::Inserted { evicted: Some(evicted) });
        }
        Ok(PoolUpdate::Inserted { evicted: None })
    }

    fn insert_sorted(&mut self, entry: PoolEntry) -> usize {
        let at = self
            .entries
            .partition_point(|e| entry_order(e, &entry) == Ordering::Less);
        self.entries.insert(at, entry);
        at
    }

    /// Softmax of `metric / η`, shifted by the maximum metric.
    pub fn probabilities(&self, eta: f64) -> Vec<f64> {
        let Some(top) = self.entries.first().map(|e| e.metric) else {
            return Vec::new();
        };
        let weights: Vec<f64> = self.entries.iter().map(|e| ((e.metric - top) / eta).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<&PoolEntry> {
        if self.entries.is_empty() {
            return Err(Error::EmptyPool { t: self.t });
        }
        let probs = self.probabilities(eta);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return Ok(&self.entries[i]);
            }
        }
        Ok(&self.entries[last])
    }

    /// The best `k` entries.
    pub fn top_k(&self, k: usize) -> &[PoolEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "pss-pool v1 t={} M={}", self.t, self.capacity)?;
        for e in &self.entries {
            let widths: Vec<String> = e.structure.widths.iter().map(u32::to_string).collect();
            writeln!(
                w,
                "m={} e={} r={} w={}",
                e.metric,
                e.insert_epoch,
                e.structure.resolution,
                widths.join(",")
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<SubnetPool> {
        const WHAT: &str = "pool";
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "empty file"))??;
        let rest = header
            .strip_prefix("pss-pool v1")
            .ok_or_else(|| Error::parse(WHAT, 1, "expected header `pss-pool v1`"))?;
        let f = parse_fields(rest, &["t", "M"]).map_err(|m| Error::parse(WHAT, 1, m))?;
        let t: usize = parse_value(f[0]).map_err(|m| Error::parse(WHAT, 1, m))?;
        let capacity: usize = parse_value(f[1]).map_err(|m| Error::parse(WHAT, 1, m))?;
        if capacity == 0 {
            return Err(Error::parse(WHAT, 1, "capacity must be at least 1"));
        }
        let mut pool = SubnetPool::new(t, capacity);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let err = |m: String| Error::parse(WHAT, lineno, m);
            let f = parse_fields(&line, &["m", "e", "r", "w"]).map_err(err)?;
            let widths = f[3]
                .split(',')
                .map(parse_value::<u32>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(err)?;
            let entry = PoolEntry {
                metric: parse_decimal(f[0]).map_err(err)?,
                insert_epoch: parse_value(f[1]).map_err(err)?,
                structure: SubnetStructure {
                    widths,
                    resolution: parse_value(f[2]).map_err(err)?,
                },
            };
            if pool
                .entries
                .last()
                .is_some_and(|prev| entry_order(prev, &entry) != Ordering::Less)
            {
                return Err(err("entries out of order".into()));
            }
            if pool.position(&entry.structure).is_some() {
                return Err(err("duplicate structure".into()));
            }
            pool.entries.push(entry);
        }
        if pool.entries.len() > capacity {
            return Err(Error::parse(WHAT, 1, "more entries than capacity"));
        }
        Ok(pool)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Space,
    Pool,
}

/// Borrowed context for drawing in-window structures from the space.
pub struct SpaceSampler<'a> {
    pub spec: &'a SupernetSpec,
    pub ctx: &'a ResourceContext,
    pub marginals: &'a MarginalTable,
    pub max_attempts: u64,
}

/// One prioritized draw for constraint `pool.t`. The Bernoulli choice and
/// pool draws use `pool_rng`; space draws use `space_rng`.
pub fn prioritized_sample<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    pool: &SubnetPool,
    sampler: &SpaceSampler<'_>,
    constraint: &ResourceConstraint,
    schedule: &Schedule,
    epoch: u32,
    space_rng: &mut R1,
    pool_rng: &mut R2,
) -> Result<(SubnetStructure, Source)> {
    let t = pool.t;
    let full = pool.is_full();
    let from_space = pool.is_empty() || pool_rng.gen::<f64>() < sampling_probability(schedule, full, epoch);
    if from_space {
        match draw_in_window(
            sampler.marginals,
            t,
            constraint,
            sampler.spec,
            sampler.ctx,
            sampler.max_attempts,
            space_rng,
        ) {
            Ok(d) => return Ok((d.structure, Source::Space)),
            Err(e) if pool.is_empty() => return Err(e),
            Err(e) => log::warn!("constraint {t}: {e}; drawing from the pool instead"),
        }
    }
    let eta = temperature(schedule, full, epoch);
    let entry = pool.sample(eta, pool_rng)?;
    Ok((entry.structure.clone(), Source::Pool))
}
