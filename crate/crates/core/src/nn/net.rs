//! The weight-shared slimmable network.
//!
//! Pipeline for a structure with widths `o_1 .. o_L` at resolution `r`:
//!
//! ```text
//! pool to r x r -> conv3x3 (1 -> o_1) -> BN -> ReLU -> global avg pool
//!               -> [dense (o_{i-1} -> o_i) -> BN -> ReLU] for hidden layers
//!               -> dense (o_{L-1} -> classes)
//! ```
//!
//! Every tensor is stored at full width. A subnet reads and writes only the
//! leading `o_i` output rows and `o_{i-1}` input columns of each layer, so
//! training one subnet leaves every parameter outside its slices untouched.
//! Weights carry no resolution dependence, which lets one set of weights
//! serve every input resolution.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::{pool_images, Images};
use crate::error::{Error, Result};
use crate::resource::IN_CHANNELS;
use crate::space::{ensure_valid, SubnetStructure, SupernetSpec};

pub const BN_EPS: f64 = 1e-5;
const TAPS: usize = 9 * IN_CHANNELS as usize;

/// A parameter tensor with its gradient accumulator and momentum buffer.
/// `touched` marks elements that received a gradient since the last step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub momentum: Vec<f64>,
    pub touched: Vec<bool>,
}

impl Tensor {
    fn filled(n: usize, v: f64) -> Tensor {
        Tensor {
            value: vec![v; n],
            grad: vec![0.0; n],
            momentum: vec![0.0; n],
            touched: vec![false; n],
        }
    }

    fn from_values(value: Vec<f64>) -> Tensor {
        let n = value.len();
        Tensor {
            value,
            grad: vec![0.0; n],
            momentum: vec![0.0; n],
            touched: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    #[inline]
    fn add_grad(&mut self, i: usize, g: f64) {
        self.grad[i] += g;
        self.touched[i] = true;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnAffine {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// One layer at full width. Weight rows are output channels; a row holds
/// `in_max` inputs (the 9 kernel taps for the stem).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_max: usize,
    pub out_max: usize,
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: Option<BnAffine>,
}

impl Layer {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        [&self.weight, &self.bias]
            .into_iter()
            .chain(self.bn.iter().flat_map(|bn| [&bn.gamma, &bn.beta]))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        let Layer { weight, bias, bn, .. } = self;
        [weight, bias]
            .into_iter()
            .chain(bn.iter_mut().flat_map(|bn| [&mut bn.gamma, &mut bn.beta]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetState {
    pub layers: Vec<Layer>,
    pub step: u64,
}

impl SupernetState {
    /// He-normal weights (fan-in at full width), zero biases, unit BN scale.
    pub fn init<R: Rng + ?Sized>(spec: &SupernetSpec, rng: &mut R) -> Result<SupernetState> {
        spec.check()?;
        let last = spec.num_layers() - 1;
        let mut layers = Vec::with_capacity(spec.num_layers());
        for (i, &out_max) in spec.max_widths.iter().enumerate() {
            let out_max = out_max as usize;
            let in_max = if i == 0 { TAPS } else { spec.max_widths[i - 1] as usize };
            let normal = Normal::new(0.0, (2.0 / in_max as f64).sqrt()).expect("finite std");
            let weight = Tensor::from_values((0..in_max * out_max).map(|_| normal.sample(rng)).collect());
            layers.push(Layer {
                in_max,
                out_max,
                weight,
                bias: Tensor::filled(out_max, 0.0),
                bn: (i < last).then(|| BnAffine {
                    gamma: Tensor::filled(out_max, 1.0),
                    beta: Tensor::filled(out_max, 0.0),
                }),
            });
        }
        Ok(SupernetState { layers, step: 0 })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(Layer::tensors).map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.layers.iter_mut().flat_map(Layer::tensors_mut) {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
            t.touched.iter_mut().for_each(|m| *m = false);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(Layer::tensors)
            .all(|t| t.value.iter().all(|v| v.is_finite()))
    }

    /// Per layer, the (rows, columns) slice a structure uses.
    pub fn slice_shape(&self, structure: &SubnetStructure, layer: usize) -> (usize, usize) {
        let rows = structure.widths[layer] as usize;
        let cols = if layer == 0 {
            TAPS
        } else {
            structure.widths[layer - 1] as usize
        };
        (rows, cols)
    }

    /// Visit every scalar parameter inside the structure's slices.
    pub fn for_each_in_slice(&self, structure: &SubnetStructure, mut f: impl FnMut(&Tensor, usize)) {
        for (l, layer) in self.layers.iter().enumerate() {
            let (rows, cols) = self.slice_shape(structure, l);
            for o in 0..rows {
                for j in 0..cols {
                    f(&layer.weight, o * layer.in_max + j);
                }
            }
            for t in layer.tensors().skip(1) {
                for o in 0..rows {
                    f(t, o);
                }
            }
        }
    }
}

/// Per-channel mean and variance of one batch-normalized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Calibrated normalization statistics for one structure: one entry per
/// batch-normalized layer (stem and hidden dense layers).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub structure: SubnetStructure,
    pub layers: Vec<ChannelStats>,
    pub samples: usize,
}

impl BnStats {
    fn matches(&self, structure: &SubnetStructure) -> Result<()> {
        let expected = structure.widths.len() - 1;
        if self.layers.len() != expected {
            return Err(Error::BnMismatch(format!(
                "{} normalized layers, structure has {expected}",
                self.layers.len()
            )));
        }
        for (i, st) in self.layers.iter().enumerate() {
            let w = structure.widths[i] as usize;
            if st.mean.len() != w || st.var.len() != w {
                return Err(Error::BnMismatch(format!(
                    "layer {} has {} channels, structure uses {w}",
                    i + 1,
                    st.mean.len()
                )));
            }
        }
        Ok(())
    }

    /// The leading channels of these statistics, shaped for `structure`.
    /// Fails when `structure` is wider than the statistics anywhere.
    pub fn slice_to(&self, structure: &SubnetStructure) -> Result<BnStats> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, st) in self.layers.iter().enumerate() {
            let w = *structure
                .widths
                .get(i)
                .ok_or_else(|| Error::BnMismatch("layer count".into()))? as usize;
            if w > st.mean.len() {
                return Err(Error::BnMismatch(format!("layer {} needs {w} channels", i + 1)));
            }
            layers.push(ChannelStats {
                mean: st.mean[..w].to_vec(),
                var: st.var[..w].to_vec(),
            });
        }
        let out = BnStats {
            structure: structure.clone(),
            layers,
            samples: self.samples,
        };
        out.matches(structure)?;
        Ok(out)
    }
}

/// How batch norm normalizes during a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Norm<'a> {
    /// Minibatch statistics; the only mode that supports backward.
    Batch,
    Fixed(&'a BnStats),
}

#[derive(Clone, Debug)]
struct NormTrace {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    out: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    structure: SubnetStructure,
    batch: usize,
    padded: Vec<f64>,
    stem: NormTrace,
    /// Input and normalization trace of each hidden dense layer.
    hidden: Vec<(Vec<f64>, NormTrace)>,
    head_input: Vec<f64>,
    batch_norm: bool,
}

impl Trace {
    pub fn structure(&self) -> &SubnetStructure {
        &self.structure
    }
}

/// Running sums of pre-normalization activations, per layer and channel.
#[derive(Clone, Debug)]
struct Moments {
    sum: Vec<Vec<f64>>,
    sumsq: Vec<Vec<f64>>,
    count: Vec<usize>,
}

impl Moments {
    fn new(structure: &SubnetStructure) -> Moments {
        let layers = structure.widths.len() - 1;
        let zeros = |i: usize| vec![0.0; structure.widths[i] as usize];
        Moments {
            sum: (0..layers).map(zeros).collect(),
            sumsq: (0..layers).map(zeros).collect(),
            count: vec![0; layers],
        }
    }

    fn layer(&mut self, l: usize) -> (&mut Vec<f64>, &mut Vec<f64>, &mut usize) {
        (&mut self.sum[l], &mut self.sumsq[l], &mut self.count[l])
    }
}

/// Normalize `z` (laid out `[group][channel][inner]`) per channel over the
/// group and inner axes, apply the affine, ReLU.
#[allow(clippy::too_many_arguments)]
fn normalize(
    z: &[f64],
    groups: usize,
    channels: usize,
    inner: usize,
    bn: &BnAffine,
    fixed: Option<&ChannelStats>,
    moments: Option<(&mut Vec<f64>, &mut Vec<f64>, &mut usize)>,
) -> NormTrace {
    let n = (groups * inner) as f64;
    let mut inv_std = vec![0.0; channels];
    let mut mean = vec![0.0; channels];
    let at = |g: usize, c: usize| (g * channels + c) * inner;
    if let Some((sum, sumsq, count)) = moments {
        for c in 0..channels {
            for g in 0..groups {
                for &v in &z[at(g, c)..at(g, c) + inner] {
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            }
        }
        *count += groups * inner;
    }
    for c in 0..channels {
        let (m, var) = match fixed {
            Some(st) => (st.mean[c], st.var[c]),
            None => {
                let m = (0..groups)
                    .map(|g| z[at(g, c)..at(g, c) + inner].iter().sum::<f64>())
                    .sum::<f64>()
                    / n;
                let var = (0..groups)
                    .map(|g| {
                        z[at(g, c)..at(g, c) + inner]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / n;
                (m, var)
            }
        };
        mean[c] = m;
        inv_std[c] = 1.0 / (var + BN_EPS).sqrt();
    }
    let mut xhat = vec![0.0; z.len()];
    let mut out = vec![0.0; z.len()];
    for g in 0..groups {
        for c in 0..channels {
            let (gamma, beta) = (bn.gamma.value[c], bn.beta.value[c]);
            for k in at(g, c)..at(g, c) + inner {
                let x = (z[k] - mean[c]) * inv_std[c];
                xhat[k] = x;
                out[k] = (gamma * x + beta).max(0.0);
            }
        }
    }
    NormTrace { xhat, inv_std, out }
}

/// Gradient through ReLU, affine and batch-statistics normalization.
/// Returns d(pre-normalization) and accumulates gamma/beta gradients.
fn normalize_backward(
    dout: &[f64],
    tr: &NormTrace,
    groups: usize,
    channels: usize,
    inner: usize,
    bn: &mut BnAffine,
) -> Vec<f64> {
    let n = (groups * inner) as f64;
    let at = |g: usize, c: usize| (g * channels + c) * inner;
    let mut dz = vec![0.0; dout.len()];
    for c in 0..channels {
        let gamma = bn.gamma.value[c];
        let (mut dgamma, mut dbeta, mut sum_dx, mut sum_dx_x) = (0.0, 0.0, 0.0, 0.0);
        for g in 0..groups {
            for k in at(g, c)..at(g, c) + inner {
                let dy = if tr.out[k] > 0.0 { dout[k] } else { 0.0 };
                dgamma += dy * tr.xhat[k];
                dbeta += dy;
                let dx = dy * gamma;
                sum_dx += dx;
                sum_dx_x += dx * tr.xhat[k];
                dz[k] = dx;
            }
        }
        bn.gamma.add_grad(c, dgamma);
        bn.beta.add_grad(c, dbeta);
        let s = tr.inv_std[c] / n;
        for g in 0..groups {
            let range = at(g, c)..at(g, c) + inner;
            for (d, &x) in dz[range.clone()].iter_mut().zip(&tr.xhat[range]) {
                *d = s * (n * *d - sum_dx - x * sum_dx_x);
            }
        }
    }
    dz
}

fn forward_impl(
    state: &SupernetState,
    structure: &SubnetStructure,
    input: &[f64],
    batch: usize,
    norm: Norm<'_>,
    mut moments: Option<&mut Moments>,
) -> (Vec<f64>, Trace) {
    let r = structure.resolution as usize;
    let rp = r + 2;
    let rr = r * r;
    let widths: Vec<usize> = structure.widths.iter().map(|&w| w as usize).collect();
    let fixed = match norm {
        Norm::Fixed(st) => Some(st),
        Norm::Batch => None,
    };
    // Zero-padded input, [b][(r + 2)^2].
    let mut padded = vec![0.0; batch * rp * rp];
    for b in 0..batch {
        for y in 0..r {
            let src = &input[b * rr + y * r..b * rr + y * r + r];
            let dst = b * rp * rp + (y + 1) * rp + 1;
            padded[dst..dst + r].copy_from_slice(src);
        }
    }

    // Stem convolution, [b][o][p].
    let stem = &state.layers[0];
    let o1 = widths[0];
    let mut z = vec![0.0; batch * o1 * rr];
    for b in 0..batch {
        let xp = &padded[b * rp * rp..(b + 1) * rp * rp];
        for o in 0..o1 {
            let w = &stem.weight.value[o * stem.in_max..o * stem.in_max + TAPS];
            let bias = stem.bias.value[o];
            let zo = &mut z[(b * o1 + o) * rr..(b * o1 + o + 1) * rr];
            for y in 0..r {
                let row0 = y * rp;
                for x in 0..r {
                    let k = row0 + x;
                    zo[y * r + x] = bias
                        + w[0] * xp[k]
                        + w[1] * xp[k + 1]
                        + w[2] * xp[k + 2]
                        + w[3] * xp[k + rp]
                        + w[4] * xp[k + rp + 1]
                        + w[5] * xp[k + rp + 2]
                        + w[6] * xp[k + 2 * rp]
                        + w[7] * xp[k + 2 * rp + 1]
                        + w[8] * xp[k + 2 * rp + 2];
                }
            }
        }
    }
    let m0 = moments.as_deref_mut().map(|m| m.layer(0));
    let stem_tr = normalize(
        &z,
        batch,
        o1,
        rr,
        stem.bn.as_ref().expect("stem has BN"),
        fixed.map(|st| &st.layers[0]),
        m0,
    );

    // Global average pool, [b][o].
    let mut act: Vec<f64> = stem_tr
        .out
        .chunks_exact(rr)
        .map(|c| c.iter().sum::<f64>() / rr as f64)
        .collect();

    let last = widths.len() - 1;
    let mut hidden = Vec::with_capacity(last.saturating_sub(1));
    for l in 1..last {
        let layer = &state.layers[l];
        let (cin, cout) = (widths[l - 1], widths[l]);
        let mut u = vec![0.0; batch * cout];
        for b in 0..batch {
            let g = &act[b * cin..(b + 1) * cin];
            for o in 0..cout {
                let w = &layer.weight.value[o * layer.in_max..o * layer.in_max + cin];
                u[b * cout + o] = layer.bias.value[o] + w.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let ml = moments.as_deref_mut().map(|m| m.layer(l));
        let tr = normalize(
            &u,
            batch,
            cout,
            1,
            layer.bn.as_ref().expect("hidden layer has BN"),
            fixed.map(|st| &st.layers[l]),
            ml,
        );
        let next = tr.out.clone();
        hidden.push((act, tr));
        act = next;
    }

    let head = &state.layers[last];
    let (cin, classes) = (widths[last - 1], widths[last]);
    let mut logits = vec![0.0; batch * classes];
    for b in 0..batch {
        let h = &act[b * cin..(b + 1) * cin];
        for c in 0..classes {
            let w = &head.weight.value[c * head.in_max..c * head.in_max + cin];
            logits[b * classes + c] = head.bias.value[c] + w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    let trace = Trace {
        structure: structure.clone(),
        batch,
        padded,
        stem: stem_tr,
        hidden,
        head_input: act,
        batch_norm: fixed.is_none(),
    };
    (logits, trace)
}

/// Images pooled to the structure's resolution (borrowed when already there).
fn at_resolution<'a>(images: Images<'a>, r: usize) -> std::borrow::Cow<'a, [f64]> {
    if images.side == r {
        std::borrow::Cow::Borrowed(images.data)
    } else {
        std::borrow::Cow::Owned(pool_images(images.data, images.side, r))
    }
}

/// Logits `[batch][classes]` and the trace needed by [`backward`].
pub fn forward(
    state: &SupernetState,
    spec: &SupernetSpec,
    structure: &SubnetStructure,
    images: Images<'_>,
    norm: Norm<'_>,
) -> Result<(Vec<f64>, Trace)> {
    ensure_valid(spec, structure)?;
    let batch = images.len();
    match norm {
        Norm::Batch if batch < 2 => {
            return Err(Error::Data("batch statistics need at least 2 samples".into()));
        }
        Norm::Fixed(st) => st.matches(structure)?,
        Norm::Batch => {}
    }
    let r = structure.resolution as usize;
    if images.side < r {
        return Err(Error::Data(format!(
            "images of side {} cannot be pooled up to {r}",
            images.side
        )));
    }
    let input = at_resolution(images, r);
    Ok(forward_impl(state, structure, &input, batch, norm, None))
}

/// Accumulate parameter gradients of a loss with gradient `dlogits` into the
/// shared buffers. Only the traced structure's slices are written.
pub fn backward(state: &mut SupernetState, trace: &Trace, dlogits: &[f64]) -> Result<()> {
    if !trace.batch_norm {
        return Err(Error::BnMismatch("backward needs a batch-statistics forward".into()));
    }
    let widths: Vec<usize> = trace.structure.widths.iter().map(|&w| w as usize).collect();
    let batch = trace.batch;
    let last = widths.len() - 1;
    let (cin, classes) = (widths[last - 1], widths[last]);
    if dlogits.len() != batch * classes {
        return Err(Error::Data("gradient shape does not match logits".into()));
    }

    // Classifier.
    let head = &mut state.layers[last];
    let mut dact = vec![0.0; batch * cin];
    for b in 0..batch {
        let h = &trace.head_input[b * cin..(b + 1) * cin];
        for c in 0..classes {
            let d = dlogits[b * classes + c];
            head.bias.add_grad(c, d);
            let row = c * head.in_max;
            for j in 0..cin {
                head.weight.add_grad(row + j, d * h[j]);
                dact[b * cin + j] += d * head.weight.value[row + j];
            }
        }
    }

    // Hidden dense layers, last to first.
    for l in (1..last).rev() {
        let (input, tr) = &trace.hidden[l - 1];
        let (cin, cout) = (widths[l - 1], widths[l]);
        let layer = &mut state.layers[l];
        let du = normalize_backward(&dact, tr, batch, cout, 1, layer.bn.as_mut().expect("BN"));
        let mut dinput = vec![0.0; batch * cin];
        for b in 0..batch {
            let g = &input[b * cin..(b + 1) * cin];
            for o in 0..cout {
                let d = du[b * cout + o];
                layer.bias.add_grad(o, d);
                let row = o * layer.in_max;
                for j in 0..cin {
                    layer.weight.add_grad(row + j, d * g[j]);
                    dinput[b * cin + j] += d * layer.weight.value[row + j];
                }
            }
        }
        dact = dinput;
    }

    // Global average pool and stem.
    let r = trace.structure.resolution as usize;
    let (rr, rp) = (r * r, r + 2);
    let o1 = widths[0];
    let mut dout = vec![0.0; batch * o1 * rr];
    for (k, chunk) in dout.chunks_exact_mut(rr).enumerate() {
        chunk.fill(dact[k] / rr as f64);
    }
    let stem = &mut state.layers[0];
    let dz = normalize_backward(&dout, &trace.stem, batch, o1, rr, stem.bn.as_mut().expect("BN"));
    for o in 0..o1 {
        let mut dw = [0.0; TAPS];
        let mut db = 0.0;
        for b in 0..batch {
            let xp = &trace.padded[b * rp * rp..(b + 1) * rp * rp];
            let dzo = &dz[(b * o1 + o) * rr..(b * o1 + o + 1) * rr];
            for y in 0..r {
                for x in 0..r {
                    let d = dzo[y * r + x];
                    if d == 0.0 {
                        continue;
                    }
                    db += d;
                    let k = y * rp + x;
                    dw[0] += d * xp[k];
                    dw[1] += d * xp[k + 1];
                    dw[2] += d * xp[k + 2];
                    dw[3] += d * xp[k + rp];
                    dw[4] += d * xp[k + rp + 1];
                    dw[5] += d * xp[k + rp + 2];
                    dw[6] += d * xp[k + 2 * rp];
                    dw[7] += d * xp[k + 2 * rp + 1];
                    dw[8] += d * xp[k + 2 * rp + 2];
                }
            }
        }
        stem.bias.add_grad(o, db);
        for (k, g) in dw.iter().enumerate() {
            stem.weight.add_grad(o * stem.in_max + k, *g);
        }
    }
    Ok(())
}

/// Split `n` samples into batches of `batch_size`, folding a trailing
/// batch too small for batch statistics into the one before it.
pub(crate) fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s < 2) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

/// Recompute normalization statistics for `structure` with frozen weights:
/// exact means and variances of every pre-normalization activation over the
/// whole calibration set, with batches normalized by their own statistics
/// on the way through.
pub fn calibrate_bn(
    state: &SupernetState,
    spec: &SupernetSpec,
    structure: &SubnetStructure,
    images: Images<'_>,
    batch_size: usize,
) -> Result<BnStats> {
    ensure_valid(spec, structure)?;
    let n = images.len();
    if batch_size < 2 || n < batch_size {
        return Err(Error::Data(format!(
            "calibration needs at least one batch of {batch_size} (>= 2) samples, have {n}"
        )));
    }
    let r = structure.resolution as usize;
    let input = at_resolution(images, r);
    let rr = r * r;
    let mut moments = Moments::new(structure);
    for (s, e) in batch_ranges(n, batch_size) {
        forward_impl(
            state,
            structure,
            &input[s * rr..e * rr],
            e - s,
            Norm::Batch,
            Some(&mut moments),
        );
    }
    let layers = (0..moments.sum.len())
        .map(|l| {
            let count = moments.count[l] as f64;
            let mean: Vec<f64> = moments.sum[l].iter().map(|s| s / count).collect();
            let var = moments.sumsq[l]
                .iter()
                .zip(&mean)
                .map(|(sq, m)| (sq / count - m * m).max(0.0))
                .collect();
            ChannelStats { mean, var }
        })
        .collect();
    Ok(BnStats {
        structure: structure.clone(),
        layers,
        samples: n,
    })
}

/// Predicted class per image with fixed statistics; ties go to the lower class.
pub fn predict(
    state: &SupernetState,
    spec: &SupernetSpec,
    structure: &SubnetStructure,
    stats: &BnStats,
    images: Images<'_>,
) -> Result<Vec<u32>> {
    ensure_valid(spec, structure)?;
    stats.matches(structure)?;
    let r = structure.resolution as usize;
    let input = at_resolution(images, r);
    let classes = spec.num_classes as usize;
    let mut out = Vec::with_capacity(images.len());
    for (s, e) in batch_ranges(images.len(), 256) {
        let (logits, _) = forward_impl(
            state,
            structure,
            &input[s * r * r..e * r * r],
            e - s,
            Norm::Fixed(stats),
            None,
        );
        for row in logits.chunks_exact(classes) {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.push(best as u32);
        }
    }
    Ok(out)
}

/// Fraction of correctly classified images.
pub fn evaluate(
    state: &SupernetState,
    spec: &SupernetSpec,
    structure: &SubnetStructure,
    stats: &BnStats,
    images: Images<'_>,
    labels: &[u32],
) -> Result<f64> {
    if images.len() != labels.len() || labels.is_empty() {
        return Err(Error::Data("evaluation needs one label per image".into()));
    }
    let pred = predict(state, spec, structure, stats, images)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}
