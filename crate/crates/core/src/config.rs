//! Declarative run configuration.
//!
//! A run is described by one TOML file. `key=value` overrides address
//! fields by dotted path (`train.epochs=5`, `constraints.0.step=40000`) and
//! take precedence over the file. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::marginals::{
    default_sigma, estimate_marginals, generate_candidates, partition, MarginalTable, Partition, DEFAULT_MAX_ATTEMPTS,
};
use crate::nn::{gen_splits, DataSplits, DatasetConfig};
use crate::pool::{GateMode, Schedule};
use crate::resource::{
    build_constraint_set, build_latency_table, ConstraintKind, ConstraintSet, CostModel, LatencyTable, ResourceContext,
};
use crate::rng;
use crate::space::SupernetSpec;
use crate::trainer::{Experiment, SamplingPolicy, TrainConfig, DEFAULT_TOP_K};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub p_end: f64,
    pub eta_end: f64,
    #[serde(default)]
    pub gate: GateMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = Schedule::default();
        ScheduleConfig {
            p_end: s.p_end,
            eta_end: s.eta_end,
            gate: s.gate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub capacity: usize,
    pub lambda: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            capacity: 20,
            lambda: Schedule::default().lambda,
        }
    }
}

/// A family of evenly spaced targets of one kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDecl {
    pub kind: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
    /// Window half-width; defaults to `step / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Bucket half-width for marginal estimation; defaults to half the
    /// spacing between targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginalConfig {
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_attempts: u64,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        MarginalConfig {
            candidates: 20_000,
            seed: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub k: usize,
    pub batch: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            k: DEFAULT_TOP_K,
            batch: 64,
        }
    }
}

/// A latency table, either read from `path` or synthesized from the cost
/// model and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyTableDecl {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    #[serde(default)]
    pub method: SamplingPolicy,
    #[serde(default)]
    pub space: SupernetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub pool: PoolConfig,
    pub constraints: Vec<ConstraintDecl>,
    #[serde(default)]
    pub marginals: MarginalConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latency_tables: Vec<LatencyTableDecl>,
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

/// Parse an override value as TOML, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `path` (dot separated, numeric segments index arrays) in `root`.
fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path = path.trim();
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` is malformed")));
    }
    let (last, parents) = segments.split_last().expect("nonempty");
    let mut cur = root;
    for seg in parents {
        cur = step_into(cur, seg, path)?;
    }
    let value = parse_override_value(raw.trim());
    match cur {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| config_err(path, "expected an array index"))?;
            *a.get_mut(i)
                .ok_or_else(|| config_err(path, "array index out of range"))? = value;
        }
        _ => return Err(config_err(path, "parent is not a table")),
    }
    Ok(())
}

fn step_into<'a>(cur: &'a mut toml::Value, seg: &str, path: &str) -> Result<&'a mut toml::Value> {
    match cur {
        toml::Value::Table(t) => Ok(t
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(Default::default()))),
        toml::Value::Array(a) => {
            let i: usize = seg.parse().map_err(|_| config_err(path, "expected an array index"))?;
            a.get_mut(i).ok_or_else(|| config_err(path, "array index out of range"))
        }
        _ => Err(config_err(path, "parent is not a table")),
    }
}

/// Results of turning the constraint declarations and candidates into a
/// marginal table, kept for reporting.
#[derive(Clone, Debug)]
pub struct MarginalBuild {
    pub table: MarginalTable,
    pub partition: Partition,
    pub distinct: usize,
    pub key: String,
}

impl RunConfig {
    /// Parse TOML text, apply overrides, validate.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut root = toml::Value::Table(table);
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output);
        for t in &mut self.latency_tables {
            if let Some(p) = t.path.as_mut() {
                fix(p);
            }
        }
    }

    /// The effective configuration as TOML.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.space.check().map_err(|e| config_err("space", e))?;
        self.train.check()?;
        self.schedule().check().map_err(|e| config_err("schedule", e))?;
        if self.pool.capacity == 0 {
            return Err(config_err("pool.capacity", "must be at least 1"));
        }
        if self.constraints.is_empty() {
            return Err(config_err("constraints", "at least one constraint is required"));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let field = format!("constraints.{i}");
            let kind: ConstraintKind = c.kind.parse().map_err(|e| config_err(&format!("{field}.kind"), e))?;
            if let ConstraintKind::Latency(id) = &kind {
                if !self.latency_tables.iter().any(|t| &t.id == id) {
                    return Err(config_err(
                        &format!("{field}.kind"),
                        format!("no latency table with id `{id}`"),
                    ));
                }
            }
            build_constraint_set(kind, c.min, c.max, c.step, c.delta).map_err(|e| config_err(&field, e))?;
            if let Some(s) = c.sigma {
                if !(s > 0.0) {
                    return Err(config_err(&format!("{field}.sigma"), "must be positive"));
                }
            }
        }
        if self.marginals.candidates == 0 {
            return Err(config_err("marginals.candidates", "must be at least 1"));
        }
        if self.marginals.max_attempts == 0 {
            return Err(config_err("marginals.max_attempts", "must be at least 1"));
        }
        if self.calibration.k == 0 {
            return Err(config_err("calibration.k", "must be at least 1"));
        }
        if self.calibration.batch < 2 || self.calibration.batch > self.dataset.calib {
            return Err(config_err(
                "calibration.batch",
                "must be at least 2 and no larger than dataset.calib",
            ));
        }
        if self.dataset.train < self.train.batch_size {
            return Err(config_err("dataset.train", "smaller than one training batch"));
        }
        if self.dataset.val == 0 {
            return Err(config_err("dataset.val", "must be at least 1"));
        }
        if !(self.dataset.noise >= 0.0 && self.dataset.noise.is_finite()) {
            return Err(config_err("dataset.noise", "must be nonnegative"));
        }
        let mut ids: Vec<&str> = self.latency_tables.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("latency_tables", "duplicate id"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            p_end: self.schedule.p_end,
            eta_end: self.schedule.eta_end,
            total_epochs: self.train.epochs,
            lambda: self.pool.lambda,
            gate: self.schedule.gate,
        }
    }

    pub fn constraint_set(&self) -> Result<ConstraintSet> {
        let mut sets = self.constraints.iter().map(|c| {
            let kind: ConstraintKind = c.kind.parse()?;
            build_constraint_set(kind, c.min, c.max, c.step, c.delta)
        });
        let first = sets.next().expect("validated nonempty")?;
        sets.try_fold(first, |acc, s| Ok(acc.union(s?)))
    }

    /// Per-constraint sigma: declared values where given, else the default.
    pub fn sigma(&self, set: &ConstraintSet) -> Result<Vec<f64>> {
        let defaults = default_sigma(set);
        let mut out = Vec::with_capacity(set.len());
        for c in &self.constraints {
            let kind: ConstraintKind = c.kind.parse()?;
            let n = build_constraint_set(kind, c.min, c.max, c.step, c.delta)?.len();
            for _ in 0..n {
                let t = out.len();
                out.push(c.sigma.unwrap_or(defaults[t]));
            }
        }
        Ok(out)
    }

    pub fn latency_table(&self, decl: &LatencyTableDecl) -> Result<LatencyTable> {
        match &decl.path {
            Some(p) => {
                let f = std::fs::File::open(p)
                    .map_err(|e| config_err(&format!("latency_tables.{}", decl.id), format!("{}: {e}", p.display())))?;
                LatencyTable::read_from(std::io::BufReader::new(f))
            }
            None => {
                let seed = decl
                    .seed
                    .unwrap_or_else(|| rng::derive_seed(self.seed, &format!("latency:{}", decl.id)));
                build_latency_table(&self.space, decl.cost.unwrap_or_default(), seed)
            }
        }
    }

    pub fn resource_context(&self) -> Result<ResourceContext> {
        let mut ctx = ResourceContext::default();
        for decl in &self.latency_tables {
            ctx = ctx.with_table(decl.id.clone(), self.latency_table(decl)?);
        }
        Ok(ctx)
    }

    pub fn marginal_seed(&self) -> u64 {
        self.marginals
            .seed
            .unwrap_or_else(|| rng::derive_seed(self.seed, "marginals"))
    }

    pub fn build_marginals(&self, set: &ConstraintSet, ctx: &ResourceContext) -> Result<MarginalBuild> {
        let seed = self.marginal_seed();
        let cands = generate_candidates(&self.space, &set.kinds(), self.marginals.candidates, seed, ctx)?;
        let sigma = self.sigma(set)?;
        let part = partition(&cands, set, &sigma)?;
        let table = estimate_marginals(&part, &cands, &self.space);
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(&self.space, set, &sigma)).expect("serializable"));
        let digest: String = h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
        Ok(MarginalBuild {
            table,
            partition: part,
            distinct: cands.len(),
            key: format!("{digest}-{seed}-{}", self.marginals.candidates),
        })
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or_else(|| rng::derive_seed(self.seed, "data"))
    }

    pub fn data(&self) -> Result<DataSplits> {
        gen_splits(
            self.data_seed(),
            &self.dataset,
            self.space.num_classes as usize,
            self.space.r_max as usize,
        )
    }

    /// Everything training needs, derived deterministically from the config.
    pub fn experiment(&self) -> Result<Experiment> {
        let constraints = self.constraint_set()?;
        let ctx = self.resource_context()?;
        let marginals = self.build_marginals(&constraints, &ctx)?.table;
        let exp = Experiment {
            spec: self.space.clone(),
            constraints,
            ctx,
            marginals,
            schedule: self.schedule(),
            pool_capacity: self.pool.capacity,
            train: self.train.clone(),
            max_attempts: self.marginals.max_attempts,
            policy: self.method,
            data: self.data()?,
            calib_batch: self.calibration.batch,
            master_seed: self.seed,
        };
        exp.check()?;
        Ok(exp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
output = "out"

[[constraints]]
kind = "flops"
min = 40000
max = 120000
step = 40000
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.space, SupernetSpec::default());
        assert_eq!(cfg.pool.capacity, 20);
        assert_eq!(cfg.calibration.k, 5);
        assert_eq!(cfg.constraint_set().unwrap().len(), 3);
    }

    #[test]
    fn dump_round_trips() {
        let cfg = RunConfig::parse(
            MINIMAL,
            &["train.epochs=7".into(), "schedule.gate=\"while-filling\"".into()],
        )
        .unwrap();
        let again = RunConfig::parse(&cfg.dump(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(again.train.epochs, 7);
        assert_eq!(again.schedule.gate, GateMode::WhileFilling);
    }

    #[test]
    fn overrides_reach_array_entries_and_bare_strings() {
        let cfg = RunConfig::parse(
            MINIMAL,
            &["constraints.0.step=20000".into(), "method=random-search".into()],
        )
        .unwrap();
        assert_eq!(cfg.constraints[0].step, 20000.0);
        assert_eq!(cfg.method, SamplingPolicy::RandomSearch);
        assert_eq!(cfg.constraint_set().unwrap().len(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = RunConfig::parse(&format!("{MINIMAL}\n[train]\nlr = 0.1\n"), &[]).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
        let err = RunConfig::parse(MINIMAL, &["space.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = RunConfig::parse(MINIMAL, &["space.divisor=0".into()]).unwrap_err();
        assert!(err.to_string().starts_with("config: space"), "{err}");
        let err = RunConfig::parse(MINIMAL, &["constraints.0.kind=\"latency:cpu\"".into()]).unwrap_err();
        assert!(err.to_string().contains("constraints.0.kind"), "{err}");
        let err = RunConfig::parse(MINIMAL, &["constraints.0.min=200000".into()]).unwrap_err();
        assert!(err.to_string().contains("constraints.0"), "{err}");
        assert!(RunConfig::parse(MINIMAL, &["train.epochs".into()]).is_err());
        assert!(RunConfig::parse("seed = 1\n", &[]).is_err());
    }

    #[test]
    fn syntax_errors_carry_the_line() {
        let err = RunConfig::parse("seed = 1\noutput = \"x\"\nconstraints = [\n", &[]).unwrap_err();
        assert!(
            err.to_string().contains("line 3") || err.to_string().contains("3:"),
            "{err}"
        );
    }

    #[test]
    fn declared_sigma_overrides_default() {
        let text = MINIMAL.replace("step = 40000", "step = 40000\nsigma = 5000");
        let cfg = RunConfig::parse(&text, &[]).unwrap();
        let set = cfg.constraint_set().unwrap();
        assert_eq!(cfg.sigma(&set).unwrap(), vec![5000.0; 3]);
        let cfg = RunConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.sigma(&set).unwrap(), vec![20000.0; 3]);
    }
}
