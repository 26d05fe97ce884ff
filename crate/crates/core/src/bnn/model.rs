use crate::bnn::{sign_threshold, xnor_popcount_matvec, BinWeightMatrix, BipolarVec, ThresholdVec};
use crate::error::{check_len, Error, Result};

/// One sign-activated layer: `sign(Wᵀx - B)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HiddenLayer {
    weights: BinWeightMatrix,
    thresholds: ThresholdVec,
    padded: bool,
}

impl HiddenLayer {
    pub fn new(weights: BinWeightMatrix, thresholds: ThresholdVec) -> Result<Self> {
        Self::build(weights, thresholds, false)
    }

    /// A layer with odd logical fan-in whose last weight row is fed a
    /// constant `+1` input.
    pub fn with_bias_row(weights: BinWeightMatrix, thresholds: ThresholdVec) -> Result<Self> {
        Self::build(weights, thresholds, true)
    }

    pub(crate) fn build(weights: BinWeightMatrix, thresholds: ThresholdVec, padded: bool) -> Result<Self> {
        check_len("layer thresholds vs weight columns", weights.cols(), thresholds.len())?;
        thresholds.check_range(weights.rows())?;
        Ok(HiddenLayer {
            weights,
            thresholds,
            padded,
        })
    }

    pub fn weights(&self) -> &BinWeightMatrix {
        &self.weights
    }

    pub fn thresholds(&self) -> &ThresholdVec {
        &self.thresholds
    }

    pub fn is_padded(&self) -> bool {
        self.padded
    }

    /// Width of the vector this layer consumes (before bias padding).
    pub fn input_width(&self) -> usize {
        self.weights.rows() - self.padded as usize
    }

    pub fn output_width(&self) -> usize {
        self.weights.cols()
    }

    /// Appends the bias entry when the layer is padded.
    pub fn prepare_input(&self, x: &BipolarVec) -> Result<BipolarVec> {
        check_len("layer input", self.input_width(), x.len())?;
        Ok(if self.padded { x.with_bias_entry() } else { x.clone() })
    }

    /// Pre-activations `Wᵀx` for an already prepared (padded) input.
    pub fn preactivations(&self, prepared: &BipolarVec) -> Result<Vec<i32>> {
        xnor_popcount_matvec(&self.weights, prepared)
    }

    pub fn forward(&self, x: &BipolarVec) -> Result<BipolarVec> {
        let prepared = self.prepare_input(x)?;
        sign_threshold(&self.preactivations(&prepared)?, &self.thresholds)
    }
}

/// Integer-affine classification head: `scores = Wᵀx + bias`, argmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputHead {
    weights: BinWeightMatrix,
    bias: Vec<i32>,
    padded: bool,
}

impl OutputHead {
    pub fn new(weights: BinWeightMatrix, bias: Vec<i32>) -> Result<Self> {
        Self::build(weights, bias, false)
    }

    pub fn with_bias_row(weights: BinWeightMatrix, bias: Vec<i32>) -> Result<Self> {
        Self::build(weights, bias, true)
    }

    pub(crate) fn build(weights: BinWeightMatrix, bias: Vec<i32>, padded: bool) -> Result<Self> {
        check_len("head bias vs weight columns", weights.cols(), bias.len())?;
        Ok(OutputHead { weights, bias, padded })
    }

    pub fn weights(&self) -> &BinWeightMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[i32] {
        &self.bias
    }

    pub fn is_padded(&self) -> bool {
        self.padded
    }

    pub fn input_width(&self) -> usize {
        self.weights.rows() - self.padded as usize
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn prepare_input(&self, x: &BipolarVec) -> Result<BipolarVec> {
        check_len("head input", self.input_width(), x.len())?;
        Ok(if self.padded { x.with_bias_entry() } else { x.clone() })
    }

    pub fn scores(&self, x: &BipolarVec) -> Result<Vec<i32>> {
        let prepared = self.prepare_input(x)?;
        let y = xnor_popcount_matvec(&self.weights, &prepared)?;
        Ok(y.iter().zip(&self.bias).map(|(y, b)| y + b).collect())
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[i32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// A stack of sign layers followed by an integer-affine head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BnnModel {
    hidden: Vec<HiddenLayer>,
    head: OutputHead,
}

impl BnnModel {
    pub fn new(hidden: Vec<HiddenLayer>, head: OutputHead) -> Result<Self> {
        for (i, pair) in hidden.windows(2).enumerate() {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::Format(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].output_width(),
                    i + 1,
                    pair[1].input_width()
                )));
            }
        }
        if let Some(last) = hidden.last() {
            if last.output_width() != head.input_width() {
                return Err(Error::Format(format!(
                    "last hidden layer emits {} values but the head expects {}",
                    last.output_width(),
                    head.input_width()
                )));
            }
        }
        Ok(BnnModel { hidden, head })
    }

    pub fn hidden(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }

    pub fn input_width(&self) -> usize {
        self.hidden
            .first()
            .map_or_else(|| self.head.input_width(), HiddenLayer::input_width)
    }

    /// `(fan-in, outputs)` of each hidden weight matrix, padding included.
    pub fn hidden_shapes(&self) -> Vec<(usize, usize)> {
        self.hidden
            .iter()
            .map(|l| (l.weights().rows(), l.weights().cols()))
            .collect()
    }

    pub fn into_parts(self) -> (Vec<HiddenLayer>, OutputHead) {
        (self.hidden, self.head)
    }

    pub fn forward(&self, x: &BipolarVec) -> Result<usize> {
        classify_with(self, x)
    }
}

/// Something that can run the layers of a model: the digital path, or a
/// simulated crossbar holding the same weights.
pub trait LayerEngine {
    fn hidden_count(&self) -> usize;

    fn input_width(&self) -> usize;

    /// Whether hidden layer `layer` appends a constant `+1` input.
    fn hidden_padded(&self, layer: usize) -> bool;

    /// Runs hidden layer `layer` on an already padded input.
    fn hidden_prepared(&self, layer: usize, x: &BipolarVec) -> Result<BipolarVec>;

    fn head_scores(&self, x: &BipolarVec) -> Result<Vec<i32>>;
}

impl LayerEngine for BnnModel {
    fn hidden_count(&self) -> usize {
        self.hidden.len()
    }

    fn input_width(&self) -> usize {
        BnnModel::input_width(self)
    }

    fn hidden_padded(&self, layer: usize) -> bool {
        self.hidden[layer].is_padded()
    }

    fn hidden_prepared(&self, layer: usize, x: &BipolarVec) -> Result<BipolarVec> {
        let l = &self.hidden[layer];
        check_len("prepared layer input", l.weights().rows(), x.len())?;
        sign_threshold(&l.preactivations(x)?, &l.thresholds)
    }

    fn head_scores(&self, x: &BipolarVec) -> Result<Vec<i32>> {
        self.head.scores(x)
    }
}

/// Plain forward pass through any engine.
pub fn classify_with<E: LayerEngine + ?Sized>(engine: &E, x: &BipolarVec) -> Result<usize> {
    check_len("model input", engine.input_width(), x.len())?;
    let mut act = x.clone();
    for i in 0..engine.hidden_count() {
        if engine.hidden_padded(i) {
            act = act.with_bias_entry();
        }
        act = engine.hidden_prepared(i, &act)?;
    }
    Ok(argmax(&engine.head_scores(&act)?))
}

/// Anything mapping a binarized input to a class index.
pub trait Classifier {
    fn classify(&self, x: &BipolarVec) -> Result<usize>;
}

impl Classifier for BnnModel {
    fn classify(&self, x: &BipolarVec) -> Result<usize> {
        self.forward(x)
    }
}

impl<F> Classifier for F
where
    F: Fn(&BipolarVec) -> Result<usize>,
{
    fn classify(&self, x: &BipolarVec) -> Result<usize> {
        self(x)
    }
}

/// Binarized inputs with their labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodedSet {
    pub inputs: Vec<BipolarVec>,
    pub labels: Vec<u8>,
}

impl EncodedSet {
    pub fn new(inputs: Vec<BipolarVec>, labels: Vec<u8>) -> Result<Self> {
        check_len("encoded set labels vs inputs", inputs.len(), labels.len())?;
        Ok(EncodedSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// First `n` samples (or all, if fewer).
    pub fn truncated(&self, n: usize) -> EncodedSet {
        let n = n.min(self.len());
        EncodedSet {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Predicted class for every sample, in order.
pub fn predict_all<C: Classifier + ?Sized>(model: &C, set: &EncodedSet) -> Result<Vec<usize>> {
    set.inputs.iter().map(|x| model.classify(x)).collect()
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, set: &EncodedSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, &label) in set.inputs.iter().zip(&set.labels) {
        if model.classify(x)? == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[i8]) -> BipolarVec {
        BipolarVec::from_signs(s).unwrap()
    }

    /// Two hidden units copying the first two inputs; the head reads unit 0.
    fn toy() -> BnnModel {
        let w1 = BinWeightMatrix::from_row_signs(&[vec![1, 1], vec![1, 1]]).unwrap();
        let l1 = HiddenLayer::new(w1, ThresholdVec::new(vec![0, 2]).unwrap()).unwrap();
        let wh = BinWeightMatrix::from_row_signs(&[vec![1, -1], vec![1, -1]]).unwrap();
        let head = OutputHead::new(wh, vec![0, 0]).unwrap();
        BnnModel::new(vec![l1], head).unwrap()
    }

    #[test]
    fn toy_model_separates_two_points() {
        let model = toy();
        // naive oracle: h = sign(x0 + x1 - B), scores = (h0 + h1, -(h0 + h1))
        for (x, label) in [(v(&[1, 1]), 0), (v(&[-1, -1]), 1)] {
            let h0 = if (x.get(0) + x.get(1)) as i32 >= 0 { 1 } else { -1 };
            let h1 = if (x.get(0) + x.get(1)) as i32 >= 2 { 1 } else { -1 };
            let expect = if h0 + h1 >= -(h0 + h1) { 0 } else { 1 };
            assert_eq!(expect, label);
            assert_eq!(model.forward(&x).unwrap(), label);
        }
        let set = EncodedSet::new(vec![v(&[1, 1]), v(&[-1, -1])], vec![0, 1]).unwrap();
        assert_eq!(evaluate(&model, &set).unwrap(), 1.0);
    }

    #[test]
    fn saturated_thresholds_give_a_constant_class() {
        let m = 4;
        let w1 = BinWeightMatrix::from_fn(m, 6, |j, k| (j * 7 + k) % 3 == 0).unwrap();
        let l1 = HiddenLayer::new(w1, ThresholdVec::new(vec![m as i32 + 2; 6]).unwrap()).unwrap();
        let wh = BinWeightMatrix::from_fn(6, 3, |j, k| (j + k) % 2 == 0).unwrap();
        let model = BnnModel::new(vec![l1.clone()], OutputHead::new(wh, vec![0, 1, 0]).unwrap()).unwrap();
        let mut classes = std::collections::BTreeSet::new();
        for bits in 0..16u32 {
            let x = BipolarVec::from_bools((0..m).map(|i| bits >> i & 1 == 1));
            assert_eq!(l1.forward(&x).unwrap(), BipolarVec::negative(6));
            classes.insert(model.forward(&x).unwrap());
        }
        assert_eq!(classes.len(), 1);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1, 3, 3, 2]), 1);
        assert_eq!(argmax(&[-4]), 0);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let inputs: Vec<_> = (0..100).map(|_| v(&[1, 1])).collect();
        let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
        let set = EncodedSet::new(inputs, labels).unwrap();
        let always_three = |_: &BipolarVec| -> Result<usize> { Ok(3) };
        assert_eq!(evaluate(&always_three, &set).unwrap(), 0.10);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            evaluate(&toy(), &EncodedSet::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn chain_mismatch_rejected() {
        let w1 = BinWeightMatrix::negative(2, 4).unwrap();
        let l1 = HiddenLayer::new(w1, ThresholdVec::zeros(4)).unwrap();
        let head = OutputHead::new(BinWeightMatrix::negative(6, 2).unwrap(), vec![0, 0]).unwrap();
        assert!(BnnModel::new(vec![l1], head).is_err());
    }

    #[test]
    fn padded_layer_sees_a_bias_input() {
        // logical fan-in 1, pad row +1: y' = x0 + 1
        let w = BinWeightMatrix::from_row_signs(&[vec![1], vec![1]]).unwrap();
        let l = HiddenLayer::with_bias_row(w, ThresholdVec::new(vec![2]).unwrap()).unwrap();
        assert_eq!(l.input_width(), 1);
        assert_eq!(l.forward(&v(&[1])).unwrap().get(0), 1);
        assert_eq!(l.forward(&v(&[-1])).unwrap().get(0), -1);
    }

    #[test]
    fn wrong_input_width_is_reported() {
        assert!(matches!(
            toy().forward(&v(&[1, 1, 1, 1])),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 4,
                ..
            })
        ));
    }
}
