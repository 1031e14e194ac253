//! Resource consumption of subnets and the constraint windows they must hit.
//!
//! Every subnet decomposes into blocks, one per layer:
//!
//! * block 0 is the stem: a 3x3 convolution from the input channels to `o_1`
//!   channels at `r x r`, its batch norm and ReLU, and the global average pool;
//! * block `i > 0` is the dense layer `o_i -> o_{i+1}` (with batch norm and
//!   ReLU unless it is the classifier).
//!
//! FLOPs count multiply-accumulates twice and the pooling sum once; batch norm
//! and activations are free. Latency is looked up per block and summed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::{ensure_valid, SubnetStructure, SupernetSpec};

/// Stem kernel side.
pub const KERNEL: u64 = 3;
/// Channels of the input images.
pub const IN_CHANNELS: u32 = 1;

/// Key of one block in a latency table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockKey {
    pub layer: u32,
    pub in_width: u32,
    pub out_width: u32,
    pub resolution: u32,
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer={} in={} out={} r={}",
            self.layer, self.in_width, self.out_width, self.resolution
        )
    }
}

impl BlockKey {
    pub fn flops(&self) -> u64 {
        let (cin, cout, r) = (self.in_width as u64, self.out_width as u64, self.resolution as u64);
        if self.layer == 0 {
            2 * KERNEL * KERNEL * cin * cout * r * r + r * r * cout
        } else {
            2 * cin * cout
        }
    }

    /// Weights, bias, and (unless this is the classifier) batch-norm affine.
    pub fn params(&self, num_layers: usize) -> u64 {
        let (cin, cout) = (self.in_width as u64, self.out_width as u64);
        let weights = if self.layer == 0 {
            KERNEL * KERNEL * cin * cout
        } else {
            cin * cout
        };
        let bn = if (self.layer as usize) + 1 < num_layers {
            2 * cout
        } else {
            0
        };
        weights + cout + bn
    }
}

/// The blocks making up `structure`, in forward order.
pub fn blocks(structure: &SubnetStructure) -> impl Iterator<Item = BlockKey> + '_ {
    let r = structure.resolution;
    structure.widths.iter().enumerate().map(move |(i, &out)| BlockKey {
        layer: i as u32,
        in_width: if i == 0 { IN_CHANNELS } else { structure.widths[i - 1] },
        out_width: out,
        resolution: r,
    })
}

pub fn flops(spec: &SupernetSpec, structure: &SubnetStructure) -> Result<u64> {
    ensure_valid(spec, structure)?;
    Ok(blocks(structure).map(|b| b.flops()).sum())
}

pub fn params(spec: &SupernetSpec, structure: &SubnetStructure) -> Result<u64> {
    ensure_valid(spec, structure)?;
    let layers = spec.num_layers();
    Ok(blocks(structure).map(|b| b.params(layers)).sum())
}

/// Coefficients of the synthetic block cost model
/// `latency = a * flops + b * params + c + jitter`, jitter uniform in `[0, 0.1 c]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        // Roughly a scalar core: 1 GFLOP/s, a small per-parameter load cost,
        // and a few microseconds of dispatch overhead per block.
        CostModel {
            a: 1e-3,
            b: 2e-3,
            c: 4.0,
        }
    }
}

/// Per-block latencies in microseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyTable {
    pub seed: u64,
    pub coeffs: CostModel,
    pub entries: BTreeMap<BlockKey, f64>,
}

/// Every block any structure of the space can contain.
pub fn realized_blocks(spec: &SupernetSpec) -> Vec<BlockKey> {
    let mut per_layer: Vec<Vec<u32>> = (0..spec.num_slimmable()).map(|i| spec.realized_widths(i)).collect();
    per_layer.push(vec![spec.num_classes]);
    let mut out = Vec::new();
    for r in spec.resolutions() {
        for (layer, outs) in per_layer.iter().enumerate() {
            let ins: &[u32] = if layer == 0 {
                &[IN_CHANNELS]
            } else {
                &per_layer[layer - 1]
            };
            for &in_width in ins {
                for &out_width in outs {
                    out.push(BlockKey {
                        layer: layer as u32,
                        in_width,
                        out_width,
                        resolution: r,
                    });
                }
            }
        }
    }
    out.sort();
    out
}

pub fn build_latency_table(spec: &SupernetSpec, coeffs: CostModel, seed: u64) -> Result<LatencyTable> {
    spec.check()?;
    let layers = spec.num_layers();
    let entries = realized_blocks(spec)
        .into_iter()
        .map(|key| {
            let mut r = rng::indexed(
                seed,
                rng::mix(
                    key.layer as u64,
                    &[key.in_width as u64, key.out_width as u64, key.resolution as u64],
                ),
            );
            let jitter = if coeffs.c > 0.0 {
                r.gen_range(0.0..=0.1 * coeffs.c)
            } else {
                0.0
            };
            let lat = coeffs.a * key.flops() as f64 + coeffs.b * key.params(layers) as f64 + coeffs.c + jitter;
            (key, lat)
        })
        .collect();
    let table = LatencyTable { seed, coeffs, entries };
    if let Some((key, lat)) = table.entries.iter().find(|(_, &l)| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidConstraint(format!(
            "cost model gives non-positive latency {lat} for block {key}"
        )));
    }
    Ok(table)
}

/// Sum of the block entries, left to right in forward order.
pub fn predict_latency(table: &LatencyTable, structure: &SubnetStructure) -> Result<f64> {
    let mut total = 0.0;
    for key in blocks(structure) {
        total += *table.entries.get(&key).ok_or(Error::MissingBlock(key))?;
    }
    Ok(total)
}

const TABLE_MAGIC: &str = "pss-latency-table v1";

impl LatencyTable {
    /// Line-oriented text. Decimals use Rust's shortest round-trip formatting,
    /// which never emits an exponent, so reading back is bit-exact.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let CostModel { a, b, c } = self.coeffs;
        writeln!(w, "{TABLE_MAGIC} seed={} a={a} b={b} c={c}", self.seed)?;
        for (k, lat) in &self.entries {
            writeln!(
                w,
                "layer={} in={} out={} r={} lat_us={lat}",
                k.layer, k.in_width, k.out_width, k.resolution
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<LatencyTable> {
        const WHAT: &str = "latency table";
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(WHAT, 1, "empty file"))?;
        let header = header?;
        let rest = header
            .strip_prefix(TABLE_MAGIC)
            .ok_or_else(|| Error::parse(WHAT, 1, format!("expected header `{TABLE_MAGIC}`")))?;
        let fields = parse_fields(rest, &["seed", "a", "b", "c"]).map_err(|m| Error::parse(WHAT, 1, m))?;
        let seed: u64 = parse_value(fields[0]).map_err(|m| Error::parse(WHAT, 1, m))?;
        let num = |s: &str| parse_decimal(s).map_err(|m| Error::parse(WHAT, 1, m));
        let coeffs = CostModel {
            a: num(fields[1])?,
            b: num(fields[2])?,
            c: num(fields[3])?,
        };
        let mut entries = BTreeMap::new();
        let mut last: Option<BlockKey> = None;
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f = parse_fields(&line, &["layer", "in", "out", "r", "lat_us"])
                .map_err(|m| Error::parse(WHAT, lineno, m))?;
            let int = |s: &str| parse_value::<u32>(s).map_err(|m| Error::parse(WHAT, lineno, m));
            let key = BlockKey {
                layer: int(f[0])?,
                in_width: int(f[1])?,
                out_width: int(f[2])?,
                resolution: int(f[3])?,
            };
            let lat = parse_decimal(f[4]).map_err(|m| Error::parse(WHAT, lineno, m))?;
            if !(lat > 0.0) {
                return Err(Error::parse(WHAT, lineno, "latency must be positive"));
            }
            if last.is_some_and(|prev| prev >= key) {
                return Err(Error::parse(WHAT, lineno, "entries not sorted by key"));
            }
            last = Some(key);
            entries.insert(key, lat);
        }
        Ok(LatencyTable { seed, coeffs, entries })
    }
}

/// Parse ` k1=v1 k2=v2 ...` with exactly the given keys in order.
pub(crate) fn parse_fields<'a>(line: &'a str, keys: &[&str]) -> std::result::Result<Vec<&'a str>, String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != keys.len() {
        return Err(format!("expected {} fields, found {}", keys.len(), parts.len()));
    }
    parts
        .iter()
        .zip(keys)
        .map(|(part, key)| {
            part.strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .ok_or_else(|| format!("expected `{key}=` in `{part}`"))
        })
        .collect()
}

pub(crate) fn parse_value<T: FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad value `{s}`"))
}

/// Plain decimal: digits, optional sign and point, no exponent.
pub(crate) fn parse_decimal(s: &str) -> std::result::Result<f64, String> {
    if s.contains(['e', 'E']) || s.is_empty() {
        return Err(format!("bad decimal `{s}`"));
    }
    s.parse().map_err(|_| format!("bad decimal `{s}`"))
}

/// The metric behind a constraint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Flops,
    Params,
    /// Lookup-table latency in microseconds; the string is the table id.
    Latency(String),
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintKind::Flops => f.write_str("flops"),
            ConstraintKind::Params => f.write_str("params"),
            ConstraintKind::Latency(id) => write!(f, "latency:{id}"),
        }
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flops" => Ok(ConstraintKind::Flops),
            "params" => Ok(ConstraintKind::Params),
            _ => match s.strip_prefix("latency:") {
                Some(id) if !id.is_empty() => Ok(ConstraintKind::Latency(id.to_string())),
                _ => Err(Error::InvalidConstraint(format!("unknown constraint kind `{s}`"))),
            },
        }
    }
}

/// Loaded latency tables, by id.
#[derive(Clone, Debug, Default)]
pub struct ResourceContext {
    pub tables: BTreeMap<String, LatencyTable>,
}

impl ResourceContext {
    pub fn with_table(mut self, id: impl Into<String>, table: LatencyTable) -> Self {
        self.tables.insert(id.into(), table);
        self
    }
}

pub fn consumption(
    kind: &ConstraintKind,
    spec: &SupernetSpec,
    structure: &SubnetStructure,
    ctx: &ResourceContext,
) -> Result<f64> {
    match kind {
        ConstraintKind::Flops => flops(spec, structure).map(|v| v as f64),
        ConstraintKind::Params => params(spec, structure).map(|v| v as f64),
        ConstraintKind::Latency(id) => {
            let table = ctx.tables.get(id).ok_or_else(|| Error::UnknownTable(id.clone()))?;
            ensure_valid(spec, structure)?;
            predict_latency(table, structure)
        }
    }
}

/// Target `θ` with tolerance `δ`: a structure qualifies when its consumption
/// lies in the closed window `[θ - δ, θ + δ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceConstraint {
    pub kind: ConstraintKind,
    pub target: f64,
    pub tolerance: f64,
}

impl ResourceConstraint {
    pub fn new(kind: ConstraintKind, target: f64, tolerance: f64) -> Result<Self> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::InvalidConstraint(format!("target {target} must be positive")));
        }
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::InvalidConstraint(format!(
                "tolerance {tolerance} must be non-negative"
            )));
        }
        Ok(ResourceConstraint {
            kind,
            target,
            tolerance,
        })
    }

    pub fn window(&self) -> (f64, f64) {
        (self.target - self.tolerance, self.target + self.tolerance)
    }
}

pub fn in_window(value: f64, c: &ResourceConstraint) -> bool {
    let (lo, hi) = c.window();
    lo <= value && value <= hi
}

/// The ordered constraints of a run. Index `t` of a constraint never changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub constraints: Vec<ResourceConstraint>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn get(&self, t: usize) -> &ResourceConstraint {
        &self.constraints[t]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ResourceConstraint> {
        self.constraints.iter()
    }

    /// Append `other`; existing indices are unchanged, `other`'s shift by `self.len()`.
    pub fn union(mut self, other: ConstraintSet) -> ConstraintSet {
        self.constraints.extend(other.constraints);
        self
    }

    pub fn kinds(&self) -> Vec<ConstraintKind> {
        let mut kinds: Vec<ConstraintKind> = Vec::new();
        for c in &self.constraints {
            if !kinds.contains(&c.kind) {
                kinds.push(c.kind.clone());
            }
        }
        kinds
    }
}

/// Targets `c_min, c_min + step, ...` up to `c_max`, each with tolerance
/// `delta` (default `step / 2`, so neighbouring windows tile).
pub fn build_constraint_set(
    kind: ConstraintKind,
    c_min: f64,
    c_max: f64,
    step: f64,
    delta: Option<f64>,
) -> Result<ConstraintSet> {
    if !(step > 0.0) {
        return Err(Error::InvalidConstraint(format!("step {step} must be positive")));
    }
    if c_min > c_max || !c_min.is_finite() || !c_max.is_finite() {
        return Err(Error::InvalidConstraint(format!("c_min {c_min} above c_max {c_max}")));
    }
    let count = ((c_max - c_min) / step + 1e-9).floor() as usize + 1;
    let tolerance = delta.unwrap_or(step / 2.0);
    let constraints = (0..count)
        .map(|j| ResourceConstraint::new(kind.clone(), c_min + j as f64 * step, tolerance))
        .collect::<Result<Vec<_>>>()?;
    if constraints.is_empty() {
        return Err(Error::InvalidConstraint("empty constraint set".into()));
    }
    Ok(ConstraintSet { constraints })
}
