//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `PSS_ACCEPTANCE=3,5` runs a subset.

use std::collections::{BTreeMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use pssnet::marginals::{
    default_sigma, enumerate_candidates, estimate_marginals, generate_candidates, partition, sample_conditioned,
    sample_uniform_rejection, MarginalTable,
};
use pssnet::nn::{backward, cross_entropy, forward, gen_dataset, kl_divergence, Images, Norm, Sgd, SupernetState};
use pssnet::pool::{sampling_probability, temperature, GateMode, Schedule, SubnetPool};
use pssnet::resource::{
    blocks, build_constraint_set, build_latency_table, consumption, flops, params, predict_latency, ConstraintKind,
    ConstraintSet, CostModel, ResourceContext,
};
use pssnet::rng;
use pssnet::space::{enumerate_space, sample_structure, DEFAULT_ENUMERATION_CAP};
use pssnet::trainer::{self, CandidateResult, Checkpoint, Experiment, RunState, SamplingPolicy};
use pssnet::{RunConfig, SubnetStructure, SupernetSpec};

type Outcome = Result<String, String>;

type Criterion = (u32, &'static str, fn() -> Outcome);

/// Per-layer width probabilities and resolution probabilities of one bucket.
type ExactMarginals = (Vec<BTreeMap<u32, f64>>, BTreeMap<u32, f64>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str, overrides: &[String]) -> RunConfig {
    RunConfig::load(&config_path(name), overrides).expect("reference config loads")
}

// ---------------------------------------------------------------- 1

/// Reference pool: append, dedupe by structure, moving-average update,
/// sort descending, truncate.
fn reference_record(
    pool: &mut Vec<(SubnetStructure, f64, u32)>,
    capacity: usize,
    s: &SubnetStructure,
    loss: f64,
    lambda: f64,
    epoch: u32,
) {
    match pool.iter_mut().find(|e| &e.0 == s) {
        Some(e) => e.1 = lambda * e.1 + (1.0 - lambda) * -loss,
        None => pool.push((s.clone(), -loss, epoch)),
    }
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then_with(|| a.0.cmp(&b.0)));
    pool.truncate(capacity);
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = desk_spec();
    let universe: Vec<SubnetStructure> = enumerate_space(&spec, DEFAULT_ENUMERATION_CAP).unwrap().collect();
    let mut rng = rng::stream(1, "pool-oracle");
    let mut worst = 0.0f64;
    for seq in 0..10_000 {
        let capacity = rng.gen_range(1..=8);
        let lambda = rng.gen_range(0.0..1.0);
        let size = rng.gen_range(1..=12);
        let alphabet: Vec<&SubnetStructure> = universe.choose_multiple(&mut rng, size).collect();
        let mut pool = SubnetPool::new(0, capacity);
        let mut reference = Vec::new();
        for op in 0..rng.gen_range(1..=60) {
            let s = alphabet[rng.gen_range(0..alphabet.len())];
            // Coarse losses force metric ties.
            let loss = if rng.gen_bool(0.3) {
                rng.gen_range(0..4) as f64 * 0.5
            } else {
                rng.gen_range(0.0..3.0)
            };
            let epoch = 1 + op / 8;
            pool.record_result(s, loss, lambda, epoch).unwrap();
            reference_record(&mut reference, capacity, s, loss, lambda, epoch);
            if pool.len() != reference.len() {
                return Err(format!(
                    "sequence {seq} op {op}: size {} vs {}",
                    pool.len(),
                    reference.len()
                ));
            }
            for (e, r) in pool.entries().iter().zip(&reference) {
                if e.structure != r.0 || e.insert_epoch != r.2 {
                    return Err(format!("sequence {seq} op {op}: order differs"));
                }
                worst = worst.max((e.metric - r.1).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 10.0,
        format!("10000 sequences, max metric diff {worst:.1e}, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let total = 250u32;
    let mut worst = 0.0f64;
    for p_end in [0.1, 0.01, 0.001] {
        let s = Schedule {
            p_end,
            eta_end: p_end,
            total_epochs: total,
            lambda: 0.9,
            gate: GateMode::WhenFull,
        };
        for e in [1, total / 2, total] {
            for full in [false, true] {
                let expected = if full {
                    (((e - 1) as f64 / total as f64) * p_end.ln()).exp()
                } else {
                    1.0
                };
                let p = sampling_probability(&s, full, e);
                let eta = temperature(&s, full, e);
                if !full && (p != 1.0 || eta != 1.0) {
                    return Err(format!("pool not full but p={p} eta={eta} at e={e}"));
                }
                worst = worst.max((p - expected).abs()).max((eta - expected).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("18 cases, max diff {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn pool_with(metrics: &[f64]) -> SubnetPool {
    let spec = desk_spec();
    let all: Vec<SubnetStructure> = enumerate_space(&spec, DEFAULT_ENUMERATION_CAP).unwrap().collect();
    let mut pool = SubnetPool::new(0, metrics.len());
    for (i, m) in metrics.iter().enumerate() {
        pool.record_result(&all[i * 7], -m, 0.9, 1).unwrap();
    }
    pool
}

fn criterion_3() -> Outcome {
    let n = 100_000;
    let mut rng = rng::stream(3, "softmax");
    let mut worst = 0.0f64;
    let spread: Vec<f64> = (0..10).map(|i| -0.25 * i as f64).collect();
    for metrics in [vec![-1.0; 5], vec![0.0, -1.0], spread] {
        for eta in [1.0, 0.3] {
            let pool = pool_with(&metrics);
            // Softmax of metric / eta, computed directly from the metrics.
            let z: f64 = metrics.iter().map(|m| (m / eta).exp()).sum();
            let mut expected: BTreeMap<&SubnetStructure, f64> = BTreeMap::new();
            for e in pool.entries() {
                *expected.entry(&e.structure).or_default() += (e.metric / eta).exp() / z;
            }
            let mut counts: BTreeMap<&SubnetStructure, usize> = BTreeMap::new();
            for _ in 0..n {
                *counts
                    .entry(&pool.sample(eta, &mut rng).unwrap().structure)
                    .or_default() += 1;
            }
            for (s, p) in &expected {
                let f = *counts.get(s).unwrap_or(&0) as f64 / n as f64;
                worst = worst.max((f - p).abs());
            }
        }
    }
    let pool = pool_with(&[0.0, -0.001, -0.5, -2.0]);
    let best = &pool.entries()[0].structure;
    let hits = (0..n)
        .filter(|_| &pool.sample(1e-6, &mut rng).unwrap().structure == best)
        .count();
    let one_hot = hits as f64 / n as f64;
    check(
        worst <= 0.01 && one_hot > 0.999,
        format!("L-inf {worst:.4} over 6 metric/eta settings; one-hot frequency {one_hot:.5}"),
    )
}

// ---------------------------------------------------------------- 4

fn desk_spec() -> SupernetSpec {
    load("desk.toml", &[]).space
}

/// Exact conditional marginals by exhaustive assignment of every structure.
fn exact_marginals(
    spec: &SupernetSpec,
    set: &ConstraintSet,
    sigma: &[f64],
    ctx: &ResourceContext,
) -> Vec<ExactMarginals> {
    let all: Vec<SubnetStructure> = enumerate_space(spec, DEFAULT_ENUMERATION_CAP).unwrap().collect();
    let mut members: Vec<Vec<&SubnetStructure>> = vec![Vec::new(); set.len()];
    for s in &all {
        let mut by_kind: BTreeMap<&ConstraintKind, (f64, usize)> = BTreeMap::new();
        for (t, c) in set.iter().enumerate() {
            let v = consumption(&c.kind, spec, s, ctx).unwrap();
            let d = (v - c.target).abs();
            if d <= sigma[t] {
                let slot = by_kind.entry(&c.kind).or_insert((f64::INFINITY, usize::MAX));
                if d < slot.0 {
                    *slot = (d, t);
                }
            }
        }
        for (_, (_, t)) in by_kind {
            members[t].push(s);
        }
    }
    members
        .iter()
        .map(|m| {
            let n = m.len() as f64;
            let mut layers = vec![BTreeMap::new(); spec.num_slimmable()];
            let mut res = BTreeMap::new();
            for s in m {
                for (i, layer) in layers.iter_mut().enumerate() {
                    *layer.entry(s.widths[i]).or_insert(0.0) += 1.0;
                }
                *res.entry(s.resolution).or_insert(0.0) += 1.0;
            }
            for layer in &mut layers {
                layer.values_mut().for_each(|c| *c /= n);
            }
            res.values_mut().for_each(|c| *c /= n);
            (layers, res)
        })
        .collect()
}

fn marginal_gap(table: &MarginalTable, exact: &[ExactMarginals]) -> f64 {
    let mut worst = 0.0f64;
    for (cm, (layers, res)) in table.constraints.iter().zip(exact) {
        let rows = cm
            .layers
            .iter()
            .zip(layers)
            .chain(std::iter::once((&cm.resolution, res)));
        for (m, e) in rows {
            for (v, p) in m.values.iter().zip(&m.probs) {
                worst = worst.max((p - e.get(v).copied().unwrap_or(0.0)).abs());
            }
            for (v, p) in e {
                if !m.values.contains(v) {
                    worst = worst.max(*p);
                }
            }
        }
    }
    worst
}

/// Enumeration gap, then the sampled gap for each seed, with the distinct
/// count of the first draw.
fn marginal_case(spec: &SupernetSpec, seeds: std::ops::Range<u64>) -> (usize, f64, Vec<f64>, usize) {
    let ctx = ResourceContext::default();
    let targets = |kind: ConstraintKind, lo: f64, hi: f64| {
        let step = ((hi - lo) / 5.0).round();
        build_constraint_set(kind, lo + step, lo + 4.0 * step, step, None).unwrap()
    };
    let (min, max) = (spec.min_structure(), spec.max_structure());
    let set = targets(
        ConstraintKind::Flops,
        flops(spec, &min).unwrap() as f64,
        flops(spec, &max).unwrap() as f64,
    )
    .union(targets(
        ConstraintKind::Params,
        params(spec, &min).unwrap() as f64,
        params(spec, &max).unwrap() as f64,
    ));
    let sigma = default_sigma(&set);
    let exact = exact_marginals(spec, &set, &sigma, &ctx);

    let full = enumerate_candidates(spec, &set.kinds(), &ctx, DEFAULT_ENUMERATION_CAP).unwrap();
    let table = estimate_marginals(&partition(&full, &set, &sigma).unwrap(), &full, spec);
    let exact_gap = marginal_gap(&table, &exact);

    let mut distinct = 0;
    let sampled = seeds
        .map(|seed| {
            let drawn = generate_candidates(spec, &set.kinds(), 10_000, seed, &ctx).unwrap();
            distinct = if distinct == 0 { drawn.len() } else { distinct };
            let table = estimate_marginals(&partition(&drawn, &set, &sigma).unwrap(), &drawn, spec);
            marginal_gap(&table, &exact)
        })
        .collect();
    (full.len(), exact_gap, sampled, distinct)
}

fn criterion_4() -> Outcome {
    let desk = desk_spec();
    let (size, exact_gap, sampled, distinct) = marginal_case(&desk, 0..1);
    let mut ok = size <= 10_000 && exact_gap == 0.0 && sampled[0] <= 0.03;
    let mut detail = format!(
        "desk space {size} structures: enumeration gap {exact_gap:e}, 10^4 draws ({distinct} distinct) L-inf {:.4}",
        sampled[0]
    );
    // Divisor 1 makes every structure equally likely under sampling, and
    // 10^4 draws leave a share of this space unseen.
    let uniform = SupernetSpec {
        max_widths: vec![8, 12, 12, 12, 4],
        divisor: 1,
        num_classes: 4,
        ..desk
    };
    let (size, exact_gap, mut sampled, distinct) = marginal_case(&uniform, 0..20);
    sampled.sort_by(f64::total_cmp);
    let median = (sampled[9] + sampled[10]) / 2.0;
    ok &= size <= 10_000 && exact_gap == 0.0 && median <= 0.03;
    detail += &format!(
        "; {size}-structure space: enumeration gap {exact_gap:e}, 10^4 draws (~{distinct} distinct) \
         L-inf median {median:.4} max {:.4} over 20 seeds",
        sampled[19]
    );
    check(ok, detail)
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = load("midsize.toml", &[]);
    let spec = &cfg.space;
    let set = cfg.constraint_set().unwrap();
    let ctx = ResourceContext::default();
    let table = cfg.build_marginals(&set, &ctx).unwrap().table;
    // The three smallest budgets, where in-window structures are rarest.
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.get(a).target.total_cmp(&set.get(b).target));
    let draws = 1000;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut rng = rng::stream(5, "efficiency");
    for &t in order.iter().take(3) {
        let c = set.get(t);
        let mut marginal = 0u64;
        let mut uniform = 0u64;
        for _ in 0..draws {
            marginal += sample_conditioned(&table, t, c, spec, &ctx, u64::MAX, &mut rng)
                .unwrap()
                .attempts;
            uniform += sample_uniform_rejection(t, c, spec, &ctx, u64::MAX, &mut rng)
                .unwrap()
                .attempts;
        }
        let (m, u) = (marginal as f64 / draws as f64, uniform as f64 / draws as f64);
        ok &= m <= 0.1 * u;
        lines.push(format!(
            "target {}: {m:.1} vs {u:.1} attempts (ratio {:.3})",
            c.target,
            m / u
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    check(
        ok,
        format!("{} structures; {}; {secs:.1} s", spec.space_size(), lines.join("; ")),
    )
}

// ---------------------------------------------------------------- 6

/// Count operations by walking the network loop by loop: every kernel tap
/// of every output pixel is one multiply and one add, average pooling adds
/// each pixel once per channel, every dense weight is one multiply and one
/// add. Parameters are counted from the tensor slices a subnet touches.
fn walked_flops(s: &SubnetStructure) -> u64 {
    let r = s.resolution as usize;
    let mut ops = 0u64;
    for _out in 0..s.widths[0] {
        for _y in 0..r {
            for _x in 0..r {
                for _tap in 0..9 {
                    ops += 2;
                }
                ops += 1;
            }
        }
    }
    for l in 1..s.widths.len() {
        for _o in 0..s.widths[l] {
            for _i in 0..s.widths[l - 1] {
                ops += 2;
            }
        }
    }
    ops
}

fn walked_params(state: &SupernetState, s: &SubnetStructure) -> u64 {
    let mut n = 0u64;
    state.for_each_in_slice(s, |_, _| n += 1);
    n
}

fn criterion_6() -> Outcome {
    let mut rng = rng::stream(6, "flops");
    let mut checked = 0;
    for name in ["desk.toml", "midsize.toml"] {
        let spec = load(name, &[]).space;
        let state = SupernetState::init(&spec, &mut rng).unwrap();
        for _ in 0..25 {
            let s = sample_structure(&spec, &mut rng);
            let (f, p) = (flops(&spec, &s).unwrap(), params(&spec, &s).unwrap());
            let (wf, wp) = (walked_flops(&s), walked_params(&state, &s));
            if f != wf || p != wp {
                return Err(format!("{s}: flops {f} vs {wf}, params {p} vs {wp}"));
            }
            checked += 1;
        }
    }
    check(checked == 50, format!("{checked} random structures match exactly"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let spec = desk_spec();
    let table = build_latency_table(&spec, CostModel::default(), 7).unwrap();
    let mut rng = rng::stream(7, "latency");
    let mut sq = 0.0;
    let mut total = 0.0;
    let n = 1000;
    for _ in 0..n {
        let s = sample_structure(&spec, &mut rng);
        let predicted = predict_latency(&table, &s).unwrap();
        let mut summed = 0.0;
        for b in blocks(&s) {
            summed += table.entries[&b];
        }
        if predicted.to_bits() != summed.to_bits() {
            return Err(format!("{s}: {predicted} != {summed}"));
        }
        // Whole-model measurement: block sum plus 5% multiplicative noise.
        let truth = summed * (1.0 + Normal::new(0.0, 0.05).unwrap().sample(&mut rng));
        sq += (predicted - truth).powi(2);
        total += truth;
    }
    let rmse = (sq / n as f64).sqrt();
    let mean = total / n as f64;
    check(
        rmse < 0.1 * mean,
        format!(
            "additivity bit-exact on {n}; RMSE {rmse:.3} us = {:.1}% of mean {mean:.2} us",
            100.0 * rmse / mean
        ),
    )
}

// ---------------------------------------------------------------- 8

fn tiny_spec() -> SupernetSpec {
    SupernetSpec {
        max_widths: vec![4, 8, 3],
        width_ratio: 0.5,
        divisor: 2,
        r_min: 4,
        r_max: 8,
        r_step: 2,
        num_classes: 3,
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let spec = tiny_spec();
    let mut rng = rng::stream(8, "gradcheck");
    let mut base = SupernetState::init(&spec, &mut rng).unwrap();
    for layer in base.layers.iter_mut() {
        if let Some(bn) = layer.bn.as_mut() {
            bn.gamma.value.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
            bn.beta.value.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
    }
    let n_params = base.num_params();
    let data = gen_dataset(8, 6, 3, 8).unwrap();
    let teacher: Vec<f64> = (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for structure in [
        spec.max_structure(),
        SubnetStructure {
            widths: vec![2, 6, 3],
            resolution: 6,
        },
    ] {
        for kd in [false, true] {
            let loss = |state: &SupernetState| {
                let (logits, trace) = forward(state, &spec, &structure, data.view(), Norm::Batch).unwrap();
                let l = if kd {
                    kl_divergence(&logits, &teacher, 3).unwrap()
                } else {
                    cross_entropy(&logits, &data.labels, 3).unwrap()
                };
                (l, trace)
            };
            let mut analytic = base.clone();
            let (l, trace) = loss(&analytic);
            backward(&mut analytic, &trace, &l.grad).unwrap();
            let h = 1e-4;
            for li in 0..base.layers.len() {
                for ti in 0..base.layers[li].tensors().count() {
                    for i in 0..base.layers[li].tensors().nth(ti).unwrap().len() {
                        let set = |s: &mut SupernetState, v: f64| {
                            s.layers[li].tensors_mut().nth(ti).unwrap().value[i] = v;
                        };
                        let orig = base.layers[li].tensors().nth(ti).unwrap().value[i];
                        let mut probe = base.clone();
                        set(&mut probe, orig + h);
                        let up = loss(&probe).0.value;
                        set(&mut probe, orig - h);
                        let dn = loss(&probe).0.value;
                        let fd = (up - dn) / (2.0 * h);
                        let an = analytic.layers[li].tensors().nth(ti).unwrap().grad[i];
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        worst = worst.max(rel);
                        checked += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && n_params <= 500 && secs < 60.0,
        format!("{n_params}-parameter net, {checked} CE/KL gradients, max rel err {worst:.2e}, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------- 9

/// Positions a structure may touch, derived from the slicing rule alone.
fn slice_positions(state: &SupernetState, s: &SubnetStructure, out: &mut HashSet<(usize, usize, usize)>) {
    for (l, layer) in state.layers.iter().enumerate() {
        let rows = s.widths[l] as usize;
        let cols = if l == 0 { 9 } else { s.widths[l - 1] as usize };
        for o in 0..rows {
            for j in 0..cols {
                out.insert((l, 0, o * layer.in_max + j));
            }
            for t in 1..layer.tensors().count() {
                out.insert((l, t, o));
            }
        }
    }
}

fn criterion_9() -> Outcome {
    let spec = desk_spec();
    let mut rng = rng::stream(9, "isolation");
    let init = SupernetState::init(&spec, &mut rng).unwrap();
    let data = gen_dataset(9, 256, spec.num_classes as usize, spec.r_max as usize).unwrap();
    let pool: Vec<SubnetStructure> = enumerate_space(&spec, DEFAULT_ENUMERATION_CAP)
        .unwrap()
        .filter(|s| s.widths[0] <= 12 && s.widths[1] <= 48 && s.widths[2] <= 52)
        .collect();
    let sgd = Sgd {
        momentum: 0.9,
        weight_decay: 1e-3,
    };
    let mut state = init.clone();
    let mut union = HashSet::new();
    for step in 0..100 {
        let s = pool.choose(&mut rng).unwrap();
        slice_positions(&state, s, &mut union);
        let start = (step * 16) % 256;
        let images = Images::new(&data.images[start * 1024..(start + 16) * 1024], 32);
        let (logits, trace) = forward(&state, &spec, s, images, Norm::Batch).unwrap();
        let l = cross_entropy(&logits, &data.labels[start..start + 16], spec.num_classes as usize).unwrap();
        backward(&mut state, &trace, &l.grad).unwrap();
        sgd.step(&mut state, 0.05);
    }
    let (mut outside, mut changed_outside, mut changed_inside) = (0, 0, 0);
    for (l, (a, b)) in init.layers.iter().zip(&state.layers).enumerate() {
        for (t, (ta, tb)) in a.tensors().zip(b.tensors()).enumerate() {
            for i in 0..ta.len() {
                let same = ta.value[i].to_bits() == tb.value[i].to_bits();
                if union.contains(&(l, t, i)) {
                    changed_inside += usize::from(!same);
                } else {
                    outside += 1;
                    changed_outside += usize::from(!same);
                }
            }
        }
    }
    check(
        changed_outside == 0 && outside > 0 && changed_inside > 0,
        format!("{outside} parameters outside the touched slices, {changed_outside} changed; {changed_inside} inside changed"),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let spec = desk_spec();
    let mut rng = rng::stream(10, "kl");
    let state = SupernetState::init(&spec, &mut rng).unwrap();
    let data = gen_dataset(10, 32, 8, 32).unwrap();
    let s = spec.max_structure();
    let (a, _) = forward(&state, &spec, &s, data.view(), Norm::Batch).unwrap();
    let (b, _) = forward(&state, &spec, &s, data.view(), Norm::Batch).unwrap();
    let same = kl_divergence(&a, &b, 8).unwrap().value;
    let mut min_kl = f64::INFINITY;
    for _ in 0..1000 {
        let classes = rng.gen_range(2..=10);
        let scale = rng.gen_range(0.01..20.0);
        let x: Vec<f64> = (0..4 * classes).map(|_| rng.gen_range(-scale..scale)).collect();
        let y: Vec<f64> = (0..4 * classes).map(|_| rng.gen_range(-scale..scale)).collect();
        min_kl = min_kl.min(kl_divergence(&x, &y, classes).unwrap().value);
    }
    check(
        same == 0.0 && min_kl >= 0.0,
        format!("KL(x, x) = {same}; min KL over 1000 random pairs {min_kl:.3e}"),
    )
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
    exp: Experiment,
    state: RunState,
    checkpoint: String,
    /// Every candidate calibrated and evaluated, up to the top 10 per pool.
    results: Vec<Vec<CandidateResult>>,
    supernet_accuracy: f64,
    elapsed: Duration,
}

impl DeskRun {
    fn report(&self, k: usize) -> trainer::RunReport {
        trainer::assemble_report(&self.exp, &self.state, self.results.clone(), k, self.supernet_accuracy)
    }
}

fn desk_experiment(seed: u64, method: SamplingPolicy) -> Experiment {
    let mut cfg = load("desk.toml", &[format!("seed={seed}")]);
    cfg.method = method;
    cfg.experiment().unwrap()
}

fn run_desk(seed: u64, method: SamplingPolicy) -> DeskRun {
    let start = Instant::now();
    let exp = desk_experiment(seed, method);
    let mut state = RunState::new(&exp).unwrap();
    trainer::train(&exp, &mut state).unwrap();
    let lists = trainer::candidates(&exp, &state, 10);
    let results = trainer::evaluate_candidates(&exp, &state, &lists).unwrap();
    let (_, supernet_accuracy) =
        trainer::calibrate_and_evaluate(&exp, &state.supernet, &exp.spec.max_structure()).unwrap();
    let checkpoint = Checkpoint::new(&exp, state.clone()).to_json();
    DeskRun {
        exp,
        state,
        checkpoint,
        results,
        supernet_accuracy,
        elapsed: start.elapsed(),
    }
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn desk(seed: u64, method: SamplingPolicy) -> &'static DeskRun {
    static RUNS: OnceLock<Vec<OnceLock<DeskRun>>> = OnceLock::new();
    let slots = RUNS.get_or_init(|| (0..SEEDS.len() * 2).map(|_| OnceLock::new()).collect());
    let i = SEEDS.iter().position(|&s| s == seed).unwrap() * 2 + usize::from(method == SamplingPolicy::RandomSearch);
    slots[i].get_or_init(|| run_desk(seed, method))
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let a = desk(1, SamplingPolicy::Prioritized);
    let b = run_desk(1, SamplingPolicy::Prioritized);
    let rerun_same = a.checkpoint == b.checkpoint && a.report(5).to_json() == b.report(5).to_json();

    let exp = &a.exp;
    let mut state = RunState::new(exp).unwrap();
    let half = exp.train.epochs / 2;
    trainer::train_until(exp, &mut state, half, |_, _| Ok(())).unwrap();
    let saved = Checkpoint::new(exp, state).to_json();
    let mut resumed = Checkpoint::from_json(&saved).unwrap().into_state(exp).unwrap();
    trainer::train(exp, &mut resumed).unwrap();
    let resumed_ckpt = Checkpoint::new(exp, resumed.clone()).to_json();
    let resumed_report = trainer::finalize(exp, &resumed, 5).unwrap();
    let resume_same = resumed_ckpt == a.checkpoint
        && resumed_report.to_json() == a.report(5).to_json()
        && resumed_report.to_csv() == a.report(5).to_csv();
    check(
        rerun_same && resume_same,
        format!(
            "rerun identical: {rerun_same} ({} byte checkpoint); resume at epoch {half} identical: {resume_same}",
            a.checkpoint.len()
        ),
    )
}

// ---------------------------------------------------------------- 12

fn tightest(exp: &Experiment) -> usize {
    (0..exp.constraints.len())
        .min_by(|&a, &b| exp.constraints.get(a).target.total_cmp(&exp.constraints.get(b).target))
        .unwrap()
}

fn criterion_12() -> Outcome {
    let mut pss = Vec::new();
    let mut rnd = Vec::new();
    let mut supernet = Vec::new();
    let mut elapsed = Duration::ZERO;
    for seed in SEEDS {
        let p = desk(seed, SamplingPolicy::Prioritized);
        let r = desk(seed, SamplingPolicy::RandomSearch);
        let t = tightest(&p.exp);
        let acc = |run: &DeskRun| run.report(5).constraints[t].best.as_ref().map_or(0.0, |b| b.accuracy);
        pss.push(acc(p));
        rnd.push(acc(r));
        supernet.push(p.supernet_accuracy);
        elapsed += p.elapsed + r.elapsed;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mp, mr) = (mean(&pss), mean(&rnd));
    let min_super = supernet.iter().cloned().fold(f64::INFINITY, f64::min);
    let secs = elapsed.as_secs_f64();
    check(
        mp >= mr && min_super > 0.9 && secs < 900.0,
        format!(
            "tightest-constraint accuracy PSS {mp:.4} vs random {mr:.4} (per seed {pss:.4?} vs {rnd:.4?}); \
             supernet min {min_super:.4}; 6 runs in {secs:.0} s"
        ),
    )
}

// ---------------------------------------------------------------- 13

fn criterion_13() -> Outcome {
    let run = desk(1, SamplingPolicy::Prioritized);
    let means: Vec<f64> = [1, 5, 10]
        .iter()
        .map(|&k| run.report(k).mean_accuracy().unwrap())
        .collect();
    check(
        means[1] >= means[0],
        format!(
            "mean accuracy k=1 {:.4}, k=5 {:.4} ({:+.4}), k=10 {:.4} (k=10 minus k=5 {:+.4})",
            means[0],
            means[1],
            means[1] - means[0],
            means[2],
            means[2] - means[1]
        ),
    )
}

// ---------------------------------------------------------------- 14

fn criterion_14() -> Outcome {
    let run = desk(1, SamplingPolicy::Prioritized);
    let exp = &run.exp;
    let weights = &run.state.supernet;
    let val = exp.data.val.view();
    let labels = &exp.data.val.labels;
    let (max_stats, _) = trainer::calibrate_and_evaluate(exp, weights, &exp.spec.max_structure()).unwrap();
    let mut margins = Vec::new();
    for c in run.report(5).constraints.iter() {
        let Some(best) = &c.best else { continue };
        let s = &best.structure;
        let borrowed = max_stats.slice_to(s).unwrap();
        let wrong = pssnet::nn::evaluate(weights, &exp.spec, s, &borrowed, val, labels).unwrap();
        margins.push(best.accuracy - wrong);
    }
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    check(
        mean > 0.0,
        format!("calibrated minus borrowed-statistics accuracy per constraint {margins:.4?}, mean {mean:+.4}"),
    )
}

// ---------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 14] = [
        (1, "pool oracle equivalence", criterion_1),
        (2, "schedule values", criterion_2),
        (3, "softmax sampling", criterion_3),
        (4, "marginal correctness", criterion_4),
        (5, "sampling efficiency", criterion_5),
        (6, "flops/params oracle", criterion_6),
        (7, "latency additivity", criterion_7),
        (8, "gradient checks", criterion_8),
        (9, "slice isolation", criterion_9),
        (10, "KL identities", criterion_10),
        (11, "determinism", criterion_11),
        (12, "end-to-end directional result", criterion_12),
        (13, "top-k calibration", criterion_13),
        (14, "BN calibration necessity", criterion_14),
    ];
    let only: Option<Vec<u32>> = std::env::var("PSS_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id:2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:2} {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
