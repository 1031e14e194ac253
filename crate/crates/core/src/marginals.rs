//! Constraint-conditioned proposal distributions for in-window sampling.
//!
//! Rejection sampling from the uniform structure distribution rarely lands
//! in a narrow resource window. Instead we draw a large candidate set once,
//! bucket it by constraint, and count, per bucket, how often each layer takes
//! each width. Sampling each layer independently from those per-bucket
//! frequencies lands in-window far more often.
//!
//! Bucket membership uses a half-width `sigma` that is configured separately
//! from the constraint tolerance used at acceptance time.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource::{consumption, in_window, ConstraintKind, ConstraintSet, ResourceConstraint, ResourceContext};
use crate::rng;
use crate::space::{enumerate_space, sample_structure, SubnetStructure, SupernetSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub structure: SubnetStructure,
    /// Consumption under each of the set's `kinds`, same order.
    pub consumption: Vec<f64>,
    /// How many of the raw draws produced this structure.
    pub count: u32,
}

/// Deduplicated draws from the structure space, sorted by structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub kinds: Vec<ConstraintKind>,
    pub entries: Vec<Candidate>,
    pub seed: u64,
    pub draws: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn kind_index(&self, kind: &ConstraintKind) -> Option<usize> {
        self.kinds.iter().position(|k| k == kind)
    }
}

/// `n` independent draws, deduplicated and annotated. Draw `i` uses its own
/// counter-derived stream, so the result does not depend on thread count.
pub fn generate_candidates(
    spec: &SupernetSpec,
    kinds: &[ConstraintKind],
    n: usize,
    seed: u64,
    ctx: &ResourceContext,
) -> Result<CandidateSet> {
    spec.check()?;
    if n == 0 {
        return Err(Error::InvalidConstraint("candidate count must be at least 1".into()));
    }
    let drawn: Vec<SubnetStructure> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_structure(spec, &mut rng::indexed(seed, i)))
        .collect();
    let mut counts: BTreeMap<SubnetStructure, u32> = BTreeMap::new();
    for s in drawn {
        *counts.entry(s).or_default() += 1;
    }
    let entries = counts
        .into_par_iter()
        .map(|(structure, count)| {
            let consumption = kinds
                .iter()
                .map(|k| consumption(k, spec, &structure, ctx))
                .collect::<Result<Vec<f64>>>()?;
            Ok(Candidate {
                structure,
                consumption,
                count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        kinds: kinds.to_vec(),
        entries,
        seed,
        draws: n,
    })
}

/// Every structure of an enumerable space, each counted once.
pub fn enumerate_candidates(
    spec: &SupernetSpec,
    kinds: &[ConstraintKind],
    ctx: &ResourceContext,
    cap: u128,
) -> Result<CandidateSet> {
    let entries = enumerate_space(spec, cap)?
        .map(|structure| {
            let consumption = kinds
                .iter()
                .map(|k| consumption(k, spec, &structure, ctx))
                .collect::<Result<Vec<f64>>>()?;
            Ok(Candidate {
                structure,
                consumption,
                count: 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        kinds: kinds.to_vec(),
        draws: entries.len(),
        entries,
        seed: 0,
    })
}

/// Candidate indices per constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub buckets: Vec<Vec<usize>>,
    pub sigma: Vec<f64>,
    /// Candidates that fell in no window, per kind.
    pub dropped: BTreeMap<ConstraintKind, usize>,
}

/// Assign every candidate, within each kind, to the constraint whose target
/// is nearest among those whose `[θ - σ, θ + σ]` window contains it (ties go
/// to the lower index). Constraints of different kinds partition the
/// candidates independently.
pub fn partition(cands: &CandidateSet, set: &ConstraintSet, sigma: &[f64]) -> Result<Partition> {
    if sigma.len() != set.len() {
        return Err(Error::InvalidConstraint(format!(
            "{} sigma values for {} constraints",
            sigma.len(),
            set.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidConstraint(format!("sigma {s} must be positive")));
    }
    let mut buckets = vec![Vec::new(); set.len()];
    let mut dropped = BTreeMap::new();
    for kind in set.kinds() {
        let k = cands
            .kind_index(&kind)
            .ok_or_else(|| Error::InvalidConstraint(format!("candidates carry no consumption for {kind}")))?;
        let members: Vec<usize> = (0..set.len()).filter(|&t| set.get(t).kind == kind).collect();
        let mut lost = 0;
        for (idx, cand) in cands.entries.iter().enumerate() {
            let value = cand.consumption[k];
            let best = members
                .iter()
                .copied()
                .filter(|&t| (value - set.get(t).target).abs() <= sigma[t])
                .min_by(|&a, &b| {
                    let da = (value - set.get(a).target).abs();
                    let db = (value - set.get(b).target).abs();
                    da.total_cmp(&db).then(a.cmp(&b))
                });
            match best {
                Some(t) => buckets[t].push(idx),
                None => lost += 1,
            }
        }
        dropped.insert(kind, lost);
    }
    Ok(Partition {
        buckets,
        sigma: sigma.to_vec(),
        dropped,
    })
}

/// `sigma[t]` = half the spacing between neighbouring targets of the same
/// kind (the constraint tolerance when a kind has a single target).
pub fn default_sigma(set: &ConstraintSet) -> Vec<f64> {
    set.iter()
        .map(|c| {
            let gap = set
                .iter()
                .filter(|o| o.kind == c.kind && o.target != c.target)
                .map(|o| (o.target - c.target).abs())
                .fold(f64::INFINITY, f64::min);
            if gap.is_finite() {
                gap / 2.0
            } else if c.tolerance > 0.0 {
                c.tolerance
            } else {
                c.target * 0.05
            }
        })
        .collect()
}

/// Categorical distribution over a discrete axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub values: Vec<u32>,
    pub probs: Vec<f64>,
}

impl Marginal {
    fn from_counts(values: &[u32], counts: &[usize], total: usize) -> Marginal {
        Marginal {
            values: values.to_vec(),
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return self.values[i];
            }
        }
        // u landed in the rounding slack above the final cumulative sum.
        self.values[last]
    }

    pub fn prob(&self, value: u32) -> f64 {
        self.values
            .iter()
            .position(|&v| v == value)
            .map_or(0.0, |i| self.probs[i])
    }
}

/// Estimated marginals for one constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMarginals {
    /// One distribution per slimmable layer over its realized widths.
    pub layers: Vec<Marginal>,
    pub resolution: Marginal,
    pub bucket_size: usize,
}

impl ConstraintMarginals {
    pub fn sampleable(&self) -> bool {
        self.bucket_size > 0
    }

    pub fn draw<R: Rng + ?Sized>(&self, spec: &SupernetSpec, rng: &mut R) -> SubnetStructure {
        let mut widths: Vec<u32> = self.layers.iter().map(|m| m.draw(rng)).collect();
        widths.push(spec.num_classes);
        SubnetStructure {
            widths,
            resolution: self.resolution.draw(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub constraints: Vec<ConstraintMarginals>,
}

/// Per bucket, the fraction of (distinct) member structures taking each
/// width at each layer, and each resolution. Empty buckets produce all-zero
/// rows and are reported unsampleable.
pub fn estimate_marginals(part: &Partition, cands: &CandidateSet, spec: &SupernetSpec) -> MarginalTable {
    let layer_values: Vec<Vec<u32>> = (0..spec.num_slimmable()).map(|i| spec.realized_widths(i)).collect();
    let res_values = spec.resolutions();
    let constraints = part
        .buckets
        .iter()
        .map(|bucket| {
            let n = bucket.len();
            let mut layer_counts: Vec<Vec<usize>> = layer_values.iter().map(|v| vec![0; v.len()]).collect();
            let mut res_counts = vec![0; res_values.len()];
            for &idx in bucket {
                let s = &cands.entries[idx].structure;
                for (i, values) in layer_values.iter().enumerate() {
                    let j = values.binary_search(&s.widths[i]).expect("candidate width is realized");
                    layer_counts[i][j] += 1;
                }
                let j = res_values
                    .binary_search(&s.resolution)
                    .expect("candidate resolution on grid");
                res_counts[j] += 1;
            }
            let denom = n.max(1);
            ConstraintMarginals {
                layers: layer_values
                    .iter()
                    .zip(&layer_counts)
                    .map(|(v, c)| Marginal::from_counts(v, c, denom))
                    .collect(),
                resolution: Marginal::from_counts(&res_values, &res_counts, denom),
                bucket_size: n,
            }
        })
        .collect();
    MarginalTable { constraints }
}

/// An accepted in-window draw and how many proposals it took.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub structure: SubnetStructure,
    pub attempts: u64,
}

pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000;

/// Propose from the marginals of constraint `t` until a structure lands in
/// `c`'s window.
pub fn sample_conditioned<R: Rng + ?Sized>(
    table: &MarginalTable,
    t: usize,
    c: &ResourceConstraint,
    spec: &SupernetSpec,
    ctx: &ResourceContext,
    max_attempts: u64,
    rng: &mut R,
) -> Result<Draw> {
    let m = &table.constraints[t];
    if !m.sampleable() {
        return Err(Error::Unsampleable { t });
    }
    for attempts in 1..=max_attempts {
        let s = m.draw(spec, rng);
        if in_window(consumption(&c.kind, spec, &s, ctx)?, c) {
            return Ok(Draw { structure: s, attempts });
        }
    }
    Err(Error::AttemptsExhausted {
        t,
        attempts: max_attempts,
    })
}

/// Plain rejection sampling from the unconditioned structure distribution.
pub fn sample_uniform_rejection<R: Rng + ?Sized>(
    t: usize,
    c: &ResourceConstraint,
    spec: &SupernetSpec,
    ctx: &ResourceContext,
    max_attempts: u64,
    rng: &mut R,
) -> Result<Draw> {
    for attempts in 1..=max_attempts {
        let s = sample_structure(spec, rng);
        if in_window(consumption(&c.kind, spec, &s, ctx)?, c) {
            return Ok(Draw { structure: s, attempts });
        }
    }
    Err(Error::AttemptsExhausted {
        t,
        attempts: max_attempts,
    })
}

/// Marginal proposal first; on failure, uniform rejection with ten times the
/// budget; then a hard error.
pub fn draw_in_window<R: Rng + ?Sized>(
    table: &MarginalTable,
    t: usize,
    c: &ResourceConstraint,
    spec: &SupernetSpec,
    ctx: &ResourceContext,
    max_attempts: u64,
    rng: &mut R,
) -> Result<Draw> {
    match sample_conditioned(table, t, c, spec, ctx, max_attempts, rng) {
        Ok(d) => Ok(d),
        Err(Error::Unsampleable { .. } | Error::AttemptsExhausted { .. }) => {
            log::debug!("constraint {t}: marginal proposal failed, falling back to uniform rejection");
            let mut d = sample_uniform_rejection(t, c, spec, ctx, max_attempts * 10, rng)?;
            d.attempts += if table.constraints[t].sampleable() {
                max_attempts
            } else {
                0
            };
            Ok(d)
        }
        Err(e) => Err(e),
    }
}

const MARGINALS_MAGIC: &str = "pss-marginals v1";

/// 12 significant digits.
fn sig12(p: f64) -> String {
    format!("{p:.11e}")
}

impl MarginalTable {
    /// Text form. `key` identifies the candidate set the table came from
    /// (spec hash, seed, draw count) so callers can reuse a cached file.
    pub fn write_to<W: Write>(&self, mut w: W, set: &ConstraintSet, key: &str) -> Result<()> {
        writeln!(w, "{MARGINALS_MAGIC} constraints={} key={key}", self.constraints.len())?;
        for (t, m) in self.constraints.iter().enumerate() {
            let c = set.get(t);
            writeln!(
                w,
                "constraint t={t} kind={} target={} size={}",
                c.kind, c.target, m.bucket_size
            )?;
            for (i, layer) in m.layers.iter().enumerate() {
                write!(w, "{}", i + 1)?;
                for (v, p) in layer.values.iter().zip(&layer.probs) {
                    write!(w, " {v}:{}", sig12(*p))?;
                }
                writeln!(w)?;
            }
            write!(w, "r")?;
            for (v, p) in m.resolution.values.iter().zip(&m.resolution.probs) {
                write!(w, " {v}:{}", sig12(*p))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_text(&self, set: &ConstraintSet, key: &str) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf, set, key).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }

    /// Parse a table written by [`MarginalTable::write_to`]; returns the key too.
    pub fn read_from<R: BufRead>(r: R, num_layers: usize) -> Result<(MarginalTable, String)> {
        const WHAT: &str = "marginals";
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let header = lines.first().ok_or_else(|| Error::parse(WHAT, 1, "empty file"))?;
        let rest = header
            .strip_prefix(MARGINALS_MAGIC)
            .ok_or_else(|| Error::parse(WHAT, 1, format!("expected header `{MARGINALS_MAGIC}`")))?;
        let mut parts = rest.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|p| p.strip_prefix("constraints="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(WHAT, 1, "missing constraints="))?;
        let key = parts
            .next()
            .and_then(|p| p.strip_prefix("key="))
            .ok_or_else(|| Error::parse(WHAT, 1, "missing key="))?
            .to_string();

        let row = |lineno: usize, label: &str| -> Result<Marginal> {
            let line = lines
                .get(lineno - 1)
                .ok_or_else(|| Error::parse(WHAT, lineno, "unexpected end"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(label) {
                return Err(Error::parse(WHAT, lineno, format!("expected row `{label}`")));
            }
            let mut m = Marginal {
                values: vec![],
                probs: vec![],
            };
            for pair in it {
                let (v, p) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::parse(WHAT, lineno, format!("bad pair `{pair}`")))?;
                m.values.push(
                    v.parse()
                        .map_err(|_| Error::parse(WHAT, lineno, format!("bad width `{v}`")))?,
                );
                m.probs.push(
                    p.parse()
                        .map_err(|_| Error::parse(WHAT, lineno, format!("bad probability `{p}`")))?,
                );
            }
            Ok(m)
        };

        let mut constraints = Vec::with_capacity(count);
        let mut lineno = 2;
        for t in 0..count {
            let head = lines
                .get(lineno - 1)
                .ok_or_else(|| Error::parse(WHAT, lineno, "unexpected end"))?;
            let size: usize = head
                .split_whitespace()
                .find_map(|p| p.strip_prefix("size="))
                .and_then(|v| v.parse().ok())
                .filter(|_| head.starts_with(&format!("constraint t={t} ")))
                .ok_or_else(|| Error::parse(WHAT, lineno, format!("expected `constraint t={t} ... size=`")))?;
            lineno += 1;
            let mut layers = Vec::new();
            for i in 0..num_layers.saturating_sub(1) {
                layers.push(row(lineno, &(i + 1).to_string())?);
                lineno += 1;
            }
            let resolution = row(lineno, "r")?;
            lineno += 1;
            constraints.push(ConstraintMarginals {
                layers,
                resolution,
                bucket_size: size,
            });
        }
        Ok((MarginalTable { constraints }, key))
    }
}
