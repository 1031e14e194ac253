//! The supernet bounds and the discrete space of subnet structures.
//!
//! A structure is a list of per-layer output widths plus an input
//! resolution. Layer 0 is the convolutional stem, the last layer is the
//! classifier (fixed at `num_classes` outputs and never slimmed), and every
//! layer in between is a slimmable dense layer.
//!
//! Widths are sampled uniformly over the integers in `[o_min, o_max]` and then
//! snapped to a multiple of the channel divisor with [`round_width`].

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds of the supernet and the granularity of the structure space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupernetSpec {
    /// Output width of every layer at full size. The last entry is the
    /// classifier and must equal `num_classes`.
    pub max_widths: Vec<u32>,
    /// `o_min = round(width_ratio * o_max)` before snapping to the divisor.
    pub width_ratio: f64,
    pub divisor: u32,
    pub r_min: u32,
    pub r_max: u32,
    pub r_step: u32,
    pub num_classes: u32,
}

impl Default for SupernetSpec {
    fn default() -> Self {
        SupernetSpec {
            max_widths: vec![16, 64, 64, 8],
            width_ratio: 0.75,
            divisor: 8,
            r_min: 8,
            r_max: 32,
            r_step: 8,
            num_classes: 8,
        }
    }
}

impl SupernetSpec {
    pub fn num_layers(&self) -> usize {
        self.max_widths.len()
    }

    /// Number of layers whose width is searched (all but the classifier).
    pub fn num_slimmable(&self) -> usize {
        self.max_widths.len().saturating_sub(1)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.max_widths.len() < 2 {
            return bad("need at least a stem layer and a classifier".into());
        }
        if self.divisor == 0 {
            return bad("divisor must be at least 1".into());
        }
        if !(self.width_ratio > 0.0 && self.width_ratio <= 1.0) {
            return bad(format!("width_ratio {} outside (0, 1]", self.width_ratio));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if *self.max_widths.last().unwrap() != self.num_classes {
            return bad(format!(
                "classifier width {} differs from num_classes {}",
                self.max_widths.last().unwrap(),
                self.num_classes
            ));
        }
        for (i, &w) in self.max_widths[..self.num_slimmable()].iter().enumerate() {
            if w < self.divisor || w % self.divisor != 0 {
                return bad(format!(
                    "max width {w} at layer {} is not a positive multiple of divisor {}",
                    i + 1,
                    self.divisor
                ));
            }
            if self.raw_min_width(i) < self.divisor {
                return bad(format!(
                    "minimum width at layer {} rounds below divisor {}",
                    i + 1,
                    self.divisor
                ));
            }
        }
        if self.r_min == 0 || self.r_step == 0 || self.r_min > self.r_max {
            return bad(format!(
                "resolution range {}..={} step {} is empty",
                self.r_min, self.r_max, self.r_step
            ));
        }
        if !(self.r_max - self.r_min).is_multiple_of(self.r_step) {
            return bad(format!(
                "resolution span {}..{} is not divisible by step {}",
                self.r_min, self.r_max, self.r_step
            ));
        }
        Ok(())
    }

    /// `round(width_ratio * o_max)`, the lower bound of the raw integer draw.
    pub fn raw_min_width(&self, layer: usize) -> u32 {
        (self.width_ratio * self.max_widths[layer] as f64).round() as u32
    }

    /// Smallest realizable width of a slimmable layer: the first multiple of
    /// the divisor at or above the raw minimum.
    pub fn min_width(&self, layer: usize) -> u32 {
        self.raw_min_width(layer).div_ceil(self.divisor) * self.divisor
    }

    pub fn resolutions(&self) -> Vec<u32> {
        (self.r_min..=self.r_max).step_by(self.r_step as usize).collect()
    }

    /// Distinct widths `round_width` can produce for a slimmable layer, ascending.
    pub fn realized_widths(&self, layer: usize) -> Vec<u32> {
        let (lo, hi) = (self.min_width(layer), self.max_widths[layer]);
        (self.raw_min_width(layer)..=hi)
            .map(|raw| round_width(raw, self.divisor, lo, hi))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Number of distinct structures.
    pub fn space_size(&self) -> u128 {
        (0..self.num_slimmable())
            .map(|i| self.realized_widths(i).len() as u128)
            .product::<u128>()
            * self.resolutions().len() as u128
    }

    pub fn max_structure(&self) -> SubnetStructure {
        SubnetStructure {
            widths: self.max_widths.clone(),
            resolution: self.r_max,
        }
    }

    pub fn min_structure(&self) -> SubnetStructure {
        let mut widths: Vec<u32> = (0..self.num_slimmable()).map(|i| self.min_width(i)).collect();
        widths.push(self.num_classes);
        SubnetStructure {
            widths,
            resolution: self.r_min,
        }
    }
}

/// One subnet: the leading `widths[i]` channels of every layer, fed images
/// pooled to `resolution` pixels per side.
///
/// Ordering is lexicographic by widths, then resolution.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubnetStructure {
    pub widths: Vec<u32>,
    pub resolution: u32,
}

impl fmt::Display for SubnetStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r={} w=", self.resolution)?;
        for (i, w) in self.widths.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

/// A broken structure invariant. Layer numbers are 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    LayerCount { expected: usize, got: usize },
    WidthAboveMax { layer: usize, width: u32, max: u32 },
    WidthBelowMin { layer: usize, width: u32, min: u32 },
    WidthOffDivisor { layer: usize, width: u32, divisor: u32 },
    ClassifierWidth { width: u32, expected: u32 },
    ResolutionOutOfRange { resolution: u32 },
    ResolutionOffGrid { resolution: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::LayerCount { expected, got } => {
                write!(f, "expected {expected} layer widths, got {got}")
            }
            Violation::WidthAboveMax { layer, width, max } => {
                write!(f, "width above max at layer {layer} ({width} > {max})")
            }
            Violation::WidthBelowMin { layer, width, min } => {
                write!(f, "width below min at layer {layer} ({width} < {min})")
            }
            Violation::WidthOffDivisor { layer, width, divisor } => {
                write!(f, "width {width} at layer {layer} is not a multiple of {divisor}")
            }
            Violation::ClassifierWidth { width, expected } => {
                write!(f, "classifier width {width} differs from {expected}")
            }
            Violation::ResolutionOutOfRange { resolution } => {
                write!(f, "resolution {resolution} out of range")
            }
            Violation::ResolutionOffGrid { resolution } => {
                write!(f, "resolution off grid ({resolution})")
            }
        }
    }
}

/// Nearest multiple of `divisor` to `raw` (exact midpoints round up),
/// clamped into `[lo, hi]`.
///
/// ```
/// use pssnet::space::round_width;
/// assert_eq!(round_width(13, 8, 8, 64), 16);
/// assert_eq!(round_width(12, 8, 8, 64), 16);
/// assert_eq!(round_width(11, 8, 8, 64), 8);
/// ```
pub fn round_width(raw: u32, divisor: u32, lo: u32, hi: u32) -> u32 {
    debug_assert!(divisor >= 1 && lo <= hi);
    let down = raw / divisor * divisor;
    let rounded = if 2 * (raw - down) >= divisor {
        down + divisor
    } else {
        down
    };
    rounded.clamp(lo, hi)
}

/// Draw one structure: integer-uniform raw widths snapped by [`round_width`],
/// and a uniform grid resolution.
pub fn sample_structure<R: Rng + ?Sized>(spec: &SupernetSpec, rng: &mut R) -> SubnetStructure {
    let mut widths = Vec::with_capacity(spec.num_layers());
    for i in 0..spec.num_slimmable() {
        let hi = spec.max_widths[i];
        let raw = rng.gen_range(spec.raw_min_width(i)..=hi);
        widths.push(round_width(raw, spec.divisor, spec.min_width(i), hi));
    }
    widths.push(spec.num_classes);
    let steps = (spec.r_max - spec.r_min) / spec.r_step;
    let resolution = spec.r_min + spec.r_step * rng.gen_range(0..=steps);
    SubnetStructure { widths, resolution }
}

/// Every violated invariant of `structure` under `spec`; empty iff valid.
pub fn validate(spec: &SupernetSpec, structure: &SubnetStructure) -> Vec<Violation> {
    let mut out = Vec::new();
    let layers = spec.num_layers();
    if structure.widths.len() != layers {
        out.push(Violation::LayerCount {
            expected: layers,
            got: structure.widths.len(),
        });
    }
    for (i, &width) in structure.widths.iter().enumerate().take(layers) {
        if i + 1 == layers {
            if width != spec.num_classes {
                out.push(Violation::ClassifierWidth {
                    width,
                    expected: spec.num_classes,
                });
            }
            continue;
        }
        let layer = i + 1;
        let (min, max) = (spec.min_width(i), spec.max_widths[i]);
        if width > max {
            out.push(Violation::WidthAboveMax { layer, width, max });
        }
        if width < min {
            out.push(Violation::WidthBelowMin { layer, width, min });
        }
        if width % spec.divisor != 0 {
            out.push(Violation::WidthOffDivisor {
                layer,
                width,
                divisor: spec.divisor,
            });
        }
    }
    let r = structure.resolution;
    if r < spec.r_min || r > spec.r_max {
        out.push(Violation::ResolutionOutOfRange { resolution: r });
    } else if !(r - spec.r_min).is_multiple_of(spec.r_step) {
        out.push(Violation::ResolutionOffGrid { resolution: r });
    }
    out
}

/// `validate` as a `Result`.
pub fn ensure_valid(spec: &SupernetSpec, structure: &SubnetStructure) -> Result<()> {
    let violations = validate(spec, structure);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidStructure(violations))
    }
}

pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Lexicographic stream over every structure in the space.
pub fn enumerate_space(spec: &SupernetSpec, cap: u128) -> Result<SpaceIter> {
    spec.check()?;
    let size = spec.space_size();
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    let mut axes: Vec<Vec<u32>> = (0..spec.num_slimmable()).map(|i| spec.realized_widths(i)).collect();
    axes.push(spec.resolutions());
    Ok(SpaceIter {
        classifier: spec.num_classes,
        cursor: Some(vec![0; axes.len()]),
        axes,
    })
}

/// Odometer over the realized widths of each layer, resolution fastest.
pub struct SpaceIter {
    axes: Vec<Vec<u32>>,
    cursor: Option<Vec<usize>>,
    classifier: u32,
}

impl Iterator for SpaceIter {
    type Item = SubnetStructure;

    fn next(&mut self) -> Option<SubnetStructure> {
        let cursor = self.cursor.as_mut()?;
        let n = self.axes.len();
        let mut widths: Vec<u32> = (0..n - 1).map(|a| self.axes[a][cursor[a]]).collect();
        widths.push(self.classifier);
        let item = SubnetStructure {
            widths,
            resolution: self.axes[n - 1][cursor[n - 1]],
        };
        let mut axis = n;
        loop {
            if axis == 0 {
                self.cursor = None;
                break;
            }
            axis -= 1;
            cursor[axis] += 1;
            if cursor[axis] < self.axes[axis].len() {
                break;
            }
            cursor[axis] = 0;
        }
        Some(item)
    }
}
