use crate::bnn::{argmax, BipolarVec, BnnModel, Classifier, HiddenLayer, LayerEngine, OutputHead, ThresholdVec};
use crate::error::{check_len, Result};
use crate::protection::puf::{Challenge, PufDevice};
use crate::protection::schedule::{
    build_key_schedule, key_length_bits, key_length_formula, KeyMode, KeySchedule, SchemeId,
};
use crate::protection::transform::LayerKey;

/// Transformed hidden layers `(W*, B*)` with their schemes, the public
/// challenge and the unprotected head. Holds no key material.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectedModel {
    stored: BnnModel,
    schemes: Vec<SchemeId>,
    key_mode: KeyMode,
    challenge: Challenge,
}

/// Moves thresholds below `-m` up to `-m`. Both make the column constant
/// `+1`, and `[-m, m + 2]` is closed under `B -> 2 - B`.
pub fn canonical_thresholds(b: &ThresholdVec, m: usize) -> Result<ThresholdVec> {
    let lo = -(m as i32);
    ThresholdVec::new(b.values().iter().map(|&t| t.max(lo)).collect())
}

/// Protects every hidden layer of `model` with the keys in `schedule`.
pub fn protect_with_schedule(model: &BnnModel, schedule: &KeySchedule, challenge: Challenge) -> Result<ProtectedModel> {
    check_len(
        "schedule layers vs hidden layers",
        model.hidden().len(),
        schedule.keys().len(),
    )?;
    let mut hidden = Vec::with_capacity(model.hidden().len());
    for (layer, key) in model.hidden().iter().zip(schedule.keys()) {
        let m = layer.weights().rows();
        let b = if key.col_inv.is_some() {
            canonical_thresholds(layer.thresholds(), m)?
        } else {
            layer.thresholds().clone()
        };
        let (w, b) = key.protect(layer.weights(), &b)?;
        hidden.push(if layer.is_padded() {
            HiddenLayer::with_bias_row(w, b)?
        } else {
            HiddenLayer::new(w, b)?
        });
    }
    Ok(ProtectedModel {
        stored: BnnModel::new(hidden, model.head().clone())?,
        schemes: schedule.schemes().to_vec(),
        key_mode: schedule.mode(),
        challenge,
    })
}

/// Queries the device with `challenge`, derives the keys and transforms
/// the hidden layers; `schemes` has one entry per hidden layer.
pub fn protect(
    model: &BnnModel,
    device: &PufDevice,
    challenge: Challenge,
    schemes: &[SchemeId],
    mode: KeyMode,
) -> Result<ProtectedModel> {
    let response = device.response(&challenge);
    let schedule = build_key_schedule(&response, &model.hidden_shapes(), schemes, mode)?;
    protect_with_schedule(model, &schedule, challenge)
}

impl ProtectedModel {
    pub fn from_parts(
        stored: BnnModel,
        schemes: Vec<SchemeId>,
        key_mode: KeyMode,
        challenge: Challenge,
    ) -> Result<Self> {
        check_len("schemes vs hidden layers", stored.hidden().len(), schemes.len())?;
        Ok(ProtectedModel {
            stored,
            schemes,
            key_mode,
            challenge,
        })
    }

    /// `(W*, B*)` and the head, exactly as stored; running this directly is
    /// the no-key attack.
    pub fn stored_model(&self) -> &BnnModel {
        &self.stored
    }

    pub fn schemes(&self) -> &[SchemeId] {
        &self.schemes
    }

    pub fn key_mode(&self) -> KeyMode {
        self.key_mode
    }

    pub fn challenge(&self) -> &Challenge {
        &self.challenge
    }

    pub fn head(&self) -> &OutputHead {
        self.stored.head()
    }

    pub fn key_terms(&self) -> Vec<Vec<usize>> {
        self.stored
            .hidden_shapes()
            .iter()
            .zip(&self.schemes)
            .map(|(&(m, n), s)| s.key_terms(m, n))
            .collect()
    }

    pub fn key_length_formula(&self) -> String {
        key_length_formula(&self.key_terms())
    }

    pub fn key_length_bits(&self) -> usize {
        key_length_bits(&self.key_terms())
    }

    /// Rebuilds the key schedule from the device's response to the stored
    /// challenge. A wrong device silently yields a wrong schedule.
    pub fn schedule(&self, device: &PufDevice) -> Result<KeySchedule> {
        let response = device.response(&self.challenge);
        build_key_schedule(&response, &self.stored.hidden_shapes(), &self.schemes, self.key_mode)
    }

    pub fn unlock(&self, device: &PufDevice) -> Result<Unlocked<'_>> {
        Ok(self.unlock_with(self.schedule(device)?))
    }

    /// Runs with an explicit (possibly wrong) schedule.
    pub fn unlock_with(&self, schedule: KeySchedule) -> Unlocked<'_> {
        Unlocked { model: self, schedule }
    }
}

/// A protected model paired with a key schedule.
#[derive(Clone, Debug)]
pub struct Unlocked<'a> {
    model: &'a ProtectedModel,
    schedule: KeySchedule,
}

impl Unlocked<'_> {
    pub fn schedule(&self) -> &KeySchedule {
        &self.schedule
    }

    pub fn forward(&self, x: &BipolarVec) -> Result<usize> {
        keyed_classify(&self.model.stored, self.schedule.keys(), x)
    }
}

impl Classifier for Unlocked<'_> {
    fn classify(&self, x: &BipolarVec) -> Result<usize> {
        self.forward(x)
    }
}

/// Forward pass with `β` before and `ψ` after every keyed hidden layer.
pub fn keyed_classify<E: LayerEngine + ?Sized>(engine: &E, keys: &[LayerKey], x: &BipolarVec) -> Result<usize> {
    check_len("keys vs hidden layers", engine.hidden_count(), keys.len())?;
    check_len("model input", engine.input_width(), x.len())?;
    let mut act = x.clone();
    for (i, key) in keys.iter().enumerate() {
        if engine.hidden_padded(i) {
            act = act.with_bias_entry();
        }
        if key.is_identity() {
            act = engine.hidden_prepared(i, &act)?;
        } else {
            let y = engine.hidden_prepared(i, &key.transform_input(&act)?)?;
            act = key.recover_output(&y)?;
        }
    }
    Ok(argmax(&engine.head_scores(&act)?))
}

/// Classifies `x` with the keys the device derives from the stored challenge.
pub fn protected_forward(pm: &ProtectedModel, device: &PufDevice, x: &BipolarVec) -> Result<usize> {
    pm.unlock(device)?.forward(x)
}
