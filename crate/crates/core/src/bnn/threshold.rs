use crate::bnn::BipolarVec;
use crate::error::{check_len, Error, Result};

/// Per-column even integer thresholds `B_k` of a sign activation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ThresholdVec(Vec<i32>);

impl ThresholdVec {
    pub fn new(values: Vec<i32>) -> Result<Self> {
        for (k, &v) in values.iter().enumerate() {
            if v % 2 != 0 {
                return Err(Error::OddThreshold {
                    column: k,
                    value: v as i64,
                });
            }
        }
        Ok(ThresholdVec(values))
    }

    pub fn zeros(len: usize) -> Self {
        ThresholdVec(vec![0; len])
    }

    pub fn values(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks `|B_k| <= fan_in + 2`.
    pub fn check_range(&self, fan_in: usize) -> Result<()> {
        let limit = fan_in as i64 + 2;
        for (k, &v) in self.0.iter().enumerate() {
            if (v as i64).abs() > limit {
                return Err(Error::ThresholdRange {
                    column: k,
                    value: v as i64,
                    limit,
                });
            }
        }
        Ok(())
    }
}

/// `out_k = sign(y_k - B_k)` with `sign(0) = +1`.
pub fn sign_threshold(y: &[i32], b: &ThresholdVec) -> Result<BipolarVec> {
    check_len("sign_threshold thresholds vs pre-activations", y.len(), b.len())?;
    let mut fired = Vec::with_capacity(y.len());
    for (k, (&yk, &bk)) in y.iter().zip(b.values()).enumerate() {
        let s = yk as i64 - bk as i64;
        if s % 2 != 0 {
            return Err(Error::Parity {
                column: k,
                difference: s,
            });
        }
        fired.push(s >= 0);
    }
    Ok(BipolarVec::from_bools(fired))
}

/// Smallest even integer `>= t`.
///
/// For even `y`, `y >= t` holds exactly when `y >= ceil_to_even(t)`, so this
/// rounding never changes a decision.
pub fn ceil_to_even(t: f64) -> i64 {
    2 * (t / 2.0).ceil() as i64
}

/// Batch-norm parameters folded into a sign-activation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedBatchNorm {
    pub thresholds: ThresholdVec,
    /// Columns whose weight signs must be negated (`gamma_k < 0`).
    pub flip: Vec<bool>,
    /// The fan-in was odd; the layer needs a constant `+1` input row.
    pub padded: bool,
}

/// Folds `sign(gamma·(y - mean)/sqrt(var + eps) + beta)` into `sign(y - B)`.
///
/// With `T = mean - beta·sqrt(var + eps)/gamma`, a positive `gamma` keeps
/// the column as is and needs `y >= T`; a negative `gamma` flips the
/// column (`-y >= -T`) so every column compares in the same direction.
/// Thresholds are rounded up to the next even integer and clamped to
/// `[-m, m + 2]`, where `-m` means "always fires" and `m + 2` "never fires".
/// That range is closed under the column-inversion map `B -> 2 - B`.
///
/// An odd `fan_in` gets a `+1` bias row, shifting every pre-activation
/// (and therefore every threshold) by one.
pub fn fold_batchnorm(
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
    fan_in: usize,
) -> Result<FoldedBatchNorm> {
    let n = gamma.len();
    check_len("batch-norm beta", n, beta.len())?;
    check_len("batch-norm mean", n, mean.len())?;
    check_len("batch-norm variance", n, var.len())?;
    if fan_in == 0 {
        return Err(Error::InvalidArgument("fan-in must be positive".into()));
    }
    let padded = fan_in % 2 == 1;
    let m = (fan_in + padded as usize) as i64;
    let shift = if padded { 1.0 } else { 0.0 };

    let mut thresholds = Vec::with_capacity(n);
    let mut flip = Vec::with_capacity(n);
    for k in 0..n {
        let scale = var[k] + eps;
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::DegenerateChannel {
                channel: k,
                reason: "variance + eps is not positive",
            });
        }
        if gamma[k] == 0.0 {
            return Err(Error::DegenerateChannel {
                channel: k,
                reason: "gamma is zero",
            });
        }
        let t = mean[k] - beta[k] * scale.sqrt() / gamma[k];
        if !t.is_finite() {
            return Err(Error::DegenerateChannel {
                channel: k,
                reason: "threshold is not finite",
            });
        }
        let negative = gamma[k] < 0.0;
        let directed = if negative { -t } else { t };
        let b = ceil_to_even(directed + shift).clamp(-m, m + 2);
        thresholds.push(b as i32);
        flip.push(negative);
    }
    Ok(FoldedBatchNorm {
        thresholds: ThresholdVec::new(thresholds)?,
        flip,
        padded,
    })
}
