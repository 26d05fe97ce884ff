//! Functional RRAM crossbar simulation.
//!
//! Each `±1` weight is a pair of cells in one column: `(g_on, g_off)` for
//! `+1` and `(g_off, g_on)` for `-1`. Each input drives a pair of lines with
//! `(1, 0)` for `+1` and `(0, 1)` for `-1`, so a cell pair conducts `g_on`
//! exactly when weight and input agree. The column current is then
//!
//! ```text
//! I_k = n_match·g_on + (m - n_match)·g_off,   n_match = (m + y_k) / 2
//! ```
//!
//! and a comparator against `I_th = ((m + B)/2)·g_on + ((m - B)/2)·g_off`
//! realizes `sign(y_k - B_k)`.
//!
//! Because `y_k - B_k` is even, currents that satisfy `y_k ≥ B_k` sit at least
//! one current step `g_on - g_off` above those that do not. The comparator
//! reference is placed half a step below `I_th`, in the middle of that gap,
//! which makes the ideal array exact despite floating-point rounding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bnn::{BinWeightMatrix, BipolarVec, BnnModel, Classifier, LayerEngine, ThresholdVec};
use crate::error::{check_len, Error, Result};

/// Cell conductances and their device-to-device spread.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeviceModel {
    pub g_on: f64,
    pub g_off: f64,
    /// Standard deviation of `ln` of the per-cell multiplicative factor.
    pub sigma_rel: f64,
    pub seed: u64,
}

impl DeviceModel {
    pub fn new(g_on: f64, g_off: f64, sigma_rel: f64, seed: u64) -> Result<Self> {
        if !(g_on.is_finite() && g_off.is_finite() && g_off >= 0.0 && g_on > g_off) {
            return Err(Error::InvalidArgument(format!(
                "need g_on > g_off >= 0, got g_on={g_on} g_off={g_off}"
            )));
        }
        if !(sigma_rel.is_finite() && sigma_rel >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_rel must be >= 0, got {sigma_rel}"
            )));
        }
        Ok(DeviceModel {
            g_on,
            g_off,
            sigma_rel,
            seed,
        })
    }

    pub fn ideal(g_on: f64, g_off: f64) -> Result<Self> {
        Self::new(g_on, g_off, 0.0, 0)
    }

    /// Current gained when one more cell pair matches its input: `g_on - g_off`.
    pub fn step(&self) -> f64 {
        self.g_on - self.g_off
    }

    pub fn is_ideal(&self) -> bool {
        self.sigma_rel == 0.0
    }
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel {
            g_on: 1.0,
            g_off: 0.05,
            sigma_rel: 0.0,
            seed: 0,
        }
    }
}

/// `m × n` cell pairs, stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossbarArray {
    rows: usize,
    cols: usize,
    top: Vec<f64>,
    bottom: Vec<f64>,
}

impl CrossbarArray {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(g_top, g_bottom)` of the pair at row `j`, column `k`.
    pub fn pair(&self, j: usize, k: usize) -> (f64, f64) {
        let i = k * self.rows + j;
        (self.top[i], self.bottom[i])
    }

    /// Column currents for a `±1` input, i.e. `analog_matvec` on
    /// `encode_input(x)` without building the voltage pairs.
    pub fn currents(&self, x: &BipolarVec) -> Result<Vec<f64>> {
        check_len("crossbar input", self.rows, x.len())?;
        let on: Vec<bool> = (0..self.rows).map(|j| x.get(j) > 0).collect();
        Ok((0..self.cols)
            .map(|k| {
                let base = k * self.rows;
                let mut sum = 0.0;
                for (j, &high) in on.iter().enumerate() {
                    sum += if high {
                        self.top[base + j]
                    } else {
                        self.bottom[base + j]
                    };
                }
                sum
            })
            .collect())
    }
}

/// Programs `w` into an array. With `sigma_rel > 0` every conductance is
/// scaled by `exp(sigma_rel · z)`, `z ~ N(0, 1)`, drawn from `stream` of the
/// model's seed; the draws do not depend on `sigma_rel` or the weights, so
/// runs at different spreads share the same underlying variation.
pub fn map_weights_stream(w: &BinWeightMatrix, model: &DeviceModel, stream: u64) -> CrossbarArray {
    let (rows, cols) = (w.rows(), w.cols());
    let mut top = Vec::with_capacity(rows * cols);
    let mut bottom = Vec::with_capacity(rows * cols);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(stream);
    for k in 0..cols {
        for j in 0..rows {
            let (t, b) = if w.get(j, k) > 0 {
                (model.g_on, model.g_off)
            } else {
                (model.g_off, model.g_on)
            };
            if model.is_ideal() {
                top.push(t);
                bottom.push(b);
            } else {
                let zt: f64 = StandardNormal.sample(&mut rng);
                let zb: f64 = StandardNormal.sample(&mut rng);
                top.push(t * (model.sigma_rel * zt).exp());
                bottom.push(b * (model.sigma_rel * zb).exp());
            }
        }
    }
    CrossbarArray {
        rows,
        cols,
        top,
        bottom,
    }
}

pub fn map_weights(w: &BinWeightMatrix, model: &DeviceModel) -> CrossbarArray {
    map_weights_stream(w, model, 0)
}

/// `(v_top, v_bottom)` per input: `(1, 0)` for `+1`, `(0, 1)` for `-1`.
pub fn encode_input(x: &BipolarVec) -> Vec<(f64, f64)> {
    (0..x.len())
        .map(|j| if x.get(j) > 0 { (1.0, 0.0) } else { (0.0, 1.0) })
        .collect()
}

/// `I_k = Σ_j g_top·v_top + g_bottom·v_bottom`.
pub fn analog_matvec(array: &CrossbarArray, v: &[(f64, f64)]) -> Result<Vec<f64>> {
    check_len("crossbar line voltages", array.rows, v.len())?;
    Ok((0..array.cols)
        .map(|k| {
            let base = k * array.rows;
            v.iter()
                .enumerate()
                .map(|(j, &(vt, vb))| array.top[base + j] * vt + array.bottom[base + j] * vb)
                .sum()
        })
        .collect())
}

/// Per-column comparator references.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparatorConfig {
    /// `I_th,k`.
    pub thresholds: Vec<f64>,
    /// Additive comparator error.
    pub offset: f64,
    /// Half a current step; the reference is `I_th,k + offset - guard`.
    pub guard: f64,
}

impl ComparatorConfig {
    pub fn reference(&self, k: usize) -> f64 {
        self.thresholds[k] + self.offset - self.guard
    }

    /// `+1` where the current reaches the reference.
    pub fn compare(&self, currents: &[f64]) -> Result<BipolarVec> {
        check_len("comparator inputs", self.thresholds.len(), currents.len())?;
        Ok(BipolarVec::from_bools(
            currents.iter().enumerate().map(|(k, &i)| i >= self.reference(k)),
        ))
    }
}

/// `I_th,k = ((m + B_k)/2)·g_on + ((m - B_k)/2)·g_off`.
pub fn thresholds_to_currents(b: &ThresholdVec, m: usize, model: &DeviceModel) -> ComparatorConfig {
    let m = m as f64;
    ComparatorConfig {
        thresholds: b
            .values()
            .iter()
            .map(|&t| {
                let t = t as f64;
                (m + t) / 2.0 * model.g_on + (m - t) / 2.0 * model.g_off
            })
            .collect(),
        offset: 0.0,
        guard: model.step() / 2.0,
    }
}

/// Reads `y` back from a column current, rounded to the nearest value with
/// the parity of `m`.
pub fn current_to_preactivation(current: f64, m: usize, model: &DeviceModel) -> i32 {
    let m = m as f64;
    let y = (2.0 * current - m * (model.g_on + model.g_off)) / model.step();
    (m - 2.0 * ((m - y) / 2.0).round()) as i32
}

#[derive(Clone, Debug, PartialEq)]
struct CrossbarLayer {
    array: CrossbarArray,
    comparator: ComparatorConfig,
    padded: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct CrossbarHead {
    array: CrossbarArray,
    bias: Vec<i32>,
    padded: bool,
}

/// A whole model programmed into crossbars: hidden layers end in
/// comparators, the head is read out and rounded to integer scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossbarModel {
    device: DeviceModel,
    hidden: Vec<CrossbarLayer>,
    head: CrossbarHead,
    input_width: usize,
}

impl CrossbarModel {
    /// Maps every layer; layer `i` draws its variation from stream `i`.
    pub fn map(model: &BnnModel, device: &DeviceModel) -> Self {
        let hidden = model
            .hidden()
            .iter()
            .enumerate()
            .map(|(i, l)| CrossbarLayer {
                array: map_weights_stream(l.weights(), device, i as u64),
                comparator: thresholds_to_currents(l.thresholds(), l.weights().rows(), device),
                padded: l.is_padded(),
            })
            .collect();
        let h = model.head();
        let head = CrossbarHead {
            array: map_weights_stream(h.weights(), device, model.hidden().len() as u64),
            bias: h.bias().to_vec(),
            padded: h.is_padded(),
        };
        CrossbarModel {
            device: *device,
            hidden,
            head,
            input_width: model.input_width(),
        }
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    pub fn forward(&self, x: &BipolarVec) -> Result<usize> {
        crate::bnn::classify_with(self, x)
    }
}

impl LayerEngine for CrossbarModel {
    fn hidden_count(&self) -> usize {
        self.hidden.len()
    }

    fn input_width(&self) -> usize {
        self.input_width
    }

    fn hidden_padded(&self, layer: usize) -> bool {
        self.hidden[layer].padded
    }

    fn hidden_prepared(&self, layer: usize, x: &BipolarVec) -> Result<BipolarVec> {
        let l = &self.hidden[layer];
        l.comparator.compare(&l.array.currents(x)?)
    }

    fn head_scores(&self, x: &BipolarVec) -> Result<Vec<i32>> {
        let h = &self.head;
        let x = if h.padded { x.with_bias_entry() } else { x.clone() };
        let m = h.array.rows();
        Ok(h.array
            .currents(&x)?
            .iter()
            .zip(&h.bias)
            .map(|(&i, b)| current_to_preactivation(i, m, &self.device) + b)
            .collect())
    }
}

impl Classifier for CrossbarModel {
    fn classify(&self, x: &BipolarVec) -> Result<usize> {
        self.forward(x)
    }
}

/// Classifies on the crossbar, optionally with per-layer keys (for a model
/// mapped from protected weights).
pub fn crossbar_forward(
    model: &CrossbarModel,
    x: &BipolarVec,
    keys: Option<&[crate::protection::LayerKey]>,
) -> Result<usize> {
    match keys {
        Some(keys) => crate::protection::keyed_classify(model, keys, x),
        None => model.forward(x),
    }
}

/// Fraction of comparator outputs that differ from `sign(Wᵀx - B)`.
pub fn bit_error_rate(
    w: &BinWeightMatrix,
    b: &ThresholdVec,
    device: &DeviceModel,
    inputs: &[BipolarVec],
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let array = map_weights(w, device);
    let cmp = thresholds_to_currents(b, w.rows(), device);
    let mut errors = 0usize;
    for x in inputs {
        let analog = cmp.compare(&array.currents(x)?)?;
        let digital = crate::bnn::sign_threshold(&crate::bnn::xnor_popcount_matvec(w, x)?, b)?;
        errors += analog.bits().hamming(digital.bits());
    }
    Ok(errors as f64 / (inputs.len() * w.cols()) as f64)
}
