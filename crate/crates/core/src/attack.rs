//! The theft scenario: someone holding the stored `(W*, B*)` but not the
//! device. They can run the stored weights as they are, or guess keys.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bnn::{evaluate, BnnModel, EncodedSet};
use crate::error::{Error, Result};
use crate::protection::{protect, Challenge, KeyMode, ProtectedModel, PufDevice, SchemeId};

/// Accuracy over the stored weights with every transform left out.
pub fn eval_without_key(pm: &ProtectedModel, set: &EncodedSet) -> Result<f64> {
    evaluate(pm.stored_model(), set)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub trials: usize,
}

impl AccuracyStats {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no accuracy samples".into()));
        }
        Ok(AccuracyStats {
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            trials: samples.len(),
        })
    }
}

/// Flips `flipped_bits` distinct in-use bits of the correct schedule per
/// trial and measures accuracy. Zero flips reproduces the correct key.
pub fn eval_with_wrong_key(
    pm: &ProtectedModel,
    device: &PufDevice,
    set: &EncodedSet,
    flipped_bits: usize,
    trials: usize,
    seed: u64,
) -> Result<AccuracyStats> {
    let correct = pm.schedule(device)?;
    let total = correct.in_use_bits();
    if flipped_bits > total {
        return Err(Error::InvalidArgument(format!(
            "cannot flip {flipped_bits} of {total} key bits"
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut schedule = correct.clone();
        for i in sample(&mut rng, total, flipped_bits).into_vec() {
            schedule.flip_bit(i)?;
        }
        accs.push(evaluate(&pm.unlock_with(schedule), set)?);
    }
    AccuracyStats::from_samples(&accs)
}

/// One line of a degradation table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub scheme: SchemeId,
    /// `None`, `FC1`, ..., or `FC1-3`.
    pub protected_layers: String,
    pub key_length_formula: String,
    pub key_length_bits: usize,
    pub accuracy: AccuracyStats,
}

/// Challenge used for key seed `s` of the tables.
pub fn table_challenge(seed: usize) -> Challenge {
    Challenge::new(format!("table-key-{seed}").into_bytes()).expect("nonempty")
}

/// Layer selections: `None`, each layer alone, then all layers.
pub fn layer_selections(hidden: usize) -> Vec<(String, Vec<bool>)> {
    let mut out = vec![("None".to_string(), vec![false; hidden])];
    for i in 0..hidden {
        out.push((format!("FC{}", i + 1), (0..hidden).map(|j| j == i).collect()));
    }
    if hidden > 1 {
        out.push((format!("FC1-{hidden}"), vec![true; hidden]));
    }
    out
}

/// Protects `model` under each table scheme and layer selection with
/// `seeds` challenges and records the no-key accuracy. The `None` rows are
/// the plain model's accuracy.
pub fn report_tables(model: &BnnModel, device: &PufDevice, set: &EncodedSet, seeds: usize) -> Result<Vec<TableRow>> {
    report_tables_for(model, device, set, seeds, &SchemeId::TABLE_SCHEMES)
}

pub fn report_tables_for(
    model: &BnnModel,
    device: &PufDevice,
    set: &EncodedSet,
    seeds: usize,
    schemes: &[SchemeId],
) -> Result<Vec<TableRow>> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one key seed".into()));
    }
    let baseline = evaluate(model, set)?;
    let mut rows = Vec::new();
    for &scheme in schemes {
        for (label, selected) in layer_selections(model.hidden().len()) {
            let per_layer: Vec<SchemeId> = selected
                .iter()
                .map(|&on| if on { scheme } else { SchemeId::None })
                .collect();
            let mut accs = Vec::with_capacity(seeds);
            let mut formula = (String::new(), 0);
            for s in 0..seeds {
                let pm = protect(model, device, table_challenge(s), &per_layer, KeyMode::Independent)?;
                formula = (pm.key_length_formula(), pm.key_length_bits());
                accs.push(if selected.iter().any(|&on| on) {
                    eval_without_key(&pm, set)?
                } else {
                    baseline
                });
            }
            rows.push(TableRow {
                scheme,
                protected_layers: label,
                key_length_formula: formula.0,
                key_length_bits: formula.1,
                accuracy: AccuracyStats::from_samples(&accs)?,
            });
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "scheme,protected_layers,key_length_formula,key_length_bits,accuracy_mean,accuracy_min,accuracy_max,seeds";

pub fn tables_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{}",
            r.scheme,
            r.protected_layers,
            r.key_length_formula,
            r.key_length_bits,
            r.accuracy.mean,
            r.accuracy.min,
            r.accuracy.max,
            r.accuracy.trials
        );
    }
    out
}

/// Left-aligned columns, one block per scheme.
pub fn tables_text(rows: &[TableRow]) -> String {
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.protected_layers.clone(),
                r.key_length_formula.clone(),
                r.key_length_bits.to_string(),
                format!(
                    "{:.2}% ({:.2}-{:.2})",
                    100.0 * r.accuracy.mean,
                    100.0 * r.accuracy.min,
                    100.0 * r.accuracy.max
                ),
            ]
        })
        .collect();
    let header = ["Protected layers", "Secret key length", "Bits", "Accuracy without key"];
    let mut width = header.map(|h| h.chars().count());
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |cols: &[String]| {
        let mut s = String::new();
        for (i, c) in cols.iter().enumerate() {
            s.push_str(c);
            if i + 1 < cols.len() {
                s.extend(std::iter::repeat_n(' ', width[i] - c.chars().count() + 2));
            }
        }
        s.push('\n');
        s
    };
    let mut out = String::new();
    let mut current = None;
    for (r, c) in rows.iter().zip(&cells) {
        if current != Some(r.scheme) {
            if current.is_some() {
                out.push('\n');
            }
            current = Some(r.scheme);
            let _ = writeln!(out, "scheme: {}", r.scheme);
            out.push_str(&line(&header.map(String::from)));
        }
        out.push_str(&line(c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{BinWeightMatrix, BipolarVec, HiddenLayer, OutputHead, ThresholdVec};
    use rand::Rng;

    /// Three-hidden-layer random model and a set labelled by the model
    /// itself, so the baseline accuracy is exactly 1.
    fn fixture() -> (BnnModel, EncodedSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut hidden = Vec::new();
        for (m, n) in [(64, 48), (48, 48), (48, 48)] {
            let w = BinWeightMatrix::from_fn(m, n, |_, _| rng.gen()).unwrap();
            let b = ThresholdVec::new((0..n).map(|_| 2 * rng.gen_range(-2..=2)).collect()).unwrap();
            hidden.push(HiddenLayer::new(w, b).unwrap());
        }
        let head = OutputHead::new(BinWeightMatrix::from_fn(48, 10, |_, _| rng.gen()).unwrap(), vec![0; 10]).unwrap();
        let model = BnnModel::new(hidden, head).unwrap();
        let inputs: Vec<_> = (0..400)
            .map(|_| BipolarVec::from_bools((0..64).map(|_| rng.gen::<bool>())))
            .collect();
        let labels = inputs.iter().map(|x| model.forward(x).unwrap() as u8).collect();
        (model, EncodedSet::new(inputs, labels).unwrap())
    }

    #[test]
    fn zero_flips_is_the_baseline() {
        let (model, set) = fixture();
        let device = PufDevice::from_secret([3; 32]);
        let pm = protect(
            &model,
            &device,
            table_challenge(0),
            &[SchemeId::RowSwapInv; 3],
            KeyMode::Independent,
        )
        .unwrap();
        let s = eval_with_wrong_key(&pm, &device, &set, 0, 3, 1).unwrap();
        assert_eq!((s.mean, s.min, s.max, s.trials), (1.0, 1.0, 1.0, 3));
        assert!(eval_with_wrong_key(&pm, &device, &set, pm.key_length_bits() + 1, 1, 1).is_err());
    }

    #[test]
    fn more_flips_hurt_more() {
        let (model, set) = fixture();
        let device = PufDevice::from_secret([4; 32]);
        let pm = protect(
            &model,
            &device,
            table_challenge(0),
            &[SchemeId::ColSwapInv; 3],
            KeyMode::Independent,
        )
        .unwrap();
        let all = pm.key_length_bits();
        let means: Vec<f64> = [1, 8, 64, all]
            .iter()
            .map(|&k| eval_with_wrong_key(&pm, &device, &set, k, 5, 7).unwrap().mean)
            .collect();
        for pair in means.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{means:?}");
        }
        assert!(means[3] < 0.5, "{means:?}");
    }

    #[test]
    fn tables_have_the_expected_rows() {
        let (model, set) = fixture();
        let device = PufDevice::from_secret([5; 32]);
        let rows = report_tables(&model, &device, &set, 2).unwrap();
        assert_eq!(rows.len(), 15);
        let labels: Vec<&str> = rows[..5].iter().map(|r| r.protected_layers.as_str()).collect();
        assert_eq!(labels, ["None", "FC1", "FC2", "FC3", "FC1-3"]);
        for r in &rows {
            if r.protected_layers == "None" {
                assert_eq!(r.accuracy.mean, 1.0);
                assert_eq!(r.key_length_formula, "0");
            } else {
                assert!(r.accuracy.mean < 0.6, "{r:?}");
            }
        }
        assert_eq!(rows[1].key_length_formula, "32+64");
        assert_eq!(rows[4].key_length_formula, "32+2×24+64+2×48");
        assert_eq!(rows[9].key_length_formula, "3×(24+48)");
        assert_eq!(rows[14].key_length_formula, "64+2×48+3×24");
        let csv = tables_csv(&rows);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 16);
        assert!(csv.contains("rows,FC1,32+64,96,"));
        let text = tables_text(&rows);
        assert!(text.contains("scheme: rowinv-colswap"));
        assert!(text.contains("Secret key length"));
    }

    #[test]
    fn tables_are_deterministic() {
        let (model, set) = fixture();
        let device = PufDevice::from_secret([6; 32]);
        let a = tables_csv(&report_tables(&model, &device, &set, 2).unwrap());
        let b = tables_csv(&report_tables(&model, &device, &set, 2).unwrap());
        assert_eq!(a, b);
    }
}
