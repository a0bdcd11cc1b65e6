//! Desk-scale classifier: a dense multilayer perceptron with tanh hidden
//! activations and a softmax cross-entropy head, stored as one flat
//! `f64` parameter vector.
//!
//! The flat layout is the load-bearing piece: every class `l` owns a
//! contiguous run of output-layer weights plus one bias entry, and the
//! attack maps gradient-difference components back to labels through those
//! slices. Layer `k` occupies `[weights(out_dim x in_dim, row-major), biases(out_dim)]`,
//! layers concatenated in order.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{self, Domain};

/// Index map from the flat parameter vector to layers and class slices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    dims: Vec<usize>,
    layers: Vec<LayerOffsets>,
    num_params: usize,
}

/// Flat-index ranges of one dense layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerOffsets {
    pub weights: Range<usize>,
    pub biases: Range<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerLayout {
    /// Builds a layout from `[input_dim, hidden..., num_classes]`.
    pub fn new(dims: &[usize]) -> Result<Arc<Self>> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "layout needs at least input and output dims, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("layer dims must be positive, got {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut cursor = 0usize;
        for win in dims.windows(2) {
            let (in_dim, out_dim) = (win[0], win[1]);
            let weights = cursor..cursor + in_dim * out_dim;
            cursor = weights.end;
            let biases = cursor..cursor + out_dim;
            cursor = biases.end;
            layers.push(LayerOffsets { weights, biases, in_dim, out_dim });
        }
        Ok(Arc::new(Self { dims: dims.to_vec(), layers, num_params: cursor }))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Number of classes C (output dimension).
    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, k: usize) -> &LayerOffsets {
        &self.layers[k]
    }

    fn output_layer(&self) -> &LayerOffsets {
        self.layers.last().unwrap()
    }

    /// Flat indices of class `l`'s output-layer weight row plus its bias
    /// entry, in ascending index order. Slices of distinct classes are
    /// disjoint and together cover the output layer.
    pub fn class_slice(&self, class: usize) -> Result<Vec<usize>> {
        let c = self.num_classes();
        if class >= c {
            return Err(Error::Input(format!("class id {class} out of range (C = {c})")));
        }
        let out = self.output_layer();
        let row_start = out.weights.start + class * out.in_dim;
        let mut idx: Vec<usize> = (row_start..row_start + out.in_dim).collect();
        idx.push(out.biases.start + class);
        Ok(idx)
    }

    /// Size of every class slice: last hidden dim + 1.
    pub fn class_slice_len(&self) -> usize {
        self.output_layer().in_dim + 1
    }
}

/// Flat model parameters bound to a layout. The carrier for model states,
/// parameter deltas, and reconstructed gradient differences alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<LayerLayout>,
}

impl ParamVector {
    pub fn zeros(layout: &Arc<LayerLayout>) -> Self {
        Self { values: vec![0.0; layout.num_params()], layout: Arc::clone(layout) }
    }

    pub fn from_values(layout: &Arc<LayerLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_params() {
            return Err(Error::Config(format!(
                "parameter count {} does not match layout ({} params)",
                values.len(),
                layout.num_params()
            )));
        }
        Ok(Self { values, layout: Arc::clone(layout) })
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layout.dims() == other.layout.dims()
    }

    fn check_layout(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Config(format!(
                "{what}: layout mismatch ({:?} vs {:?})",
                self.layout.dims(),
                other.layout.dims()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn ensure_finite(self, what: &str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::Numeric(format!("{what} produced a non-finite parameter")))
        }
    }

    /// Coordinatewise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_layout(other, "sub")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self { values, layout: Arc::clone(&self.layout) }.ensure_finite("sub")
    }

    /// Coordinatewise `self + c * other`.
    pub fn add_scaled(&self, other: &Self, c: f64) -> Result<Self> {
        self.check_layout(other, "add_scaled")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Self { values, layout: Arc::clone(&self.layout) }.ensure_finite("add_scaled")
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        let values = self.values.iter().map(|a| a * c).collect();
        Self { values, layout: Arc::clone(&self.layout) }.ensure_finite("scale")
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A labeled mini-batch: row-major features plus class ids.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, feature_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if feature_dim == 0 || inputs.len() != feature_dim * labels.len() {
            return Err(Error::Config(format!(
                "batch shape mismatch: {} values, {} labels, feature dim {}",
                inputs.len(),
                labels.len(),
                feature_dim
            )));
        }
        Ok(Self { inputs, labels, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Row-major matrix of per-sample class probabilities.
#[derive(Debug, Clone)]
pub struct ProbMatrix {
    data: Vec<f64>,
    cols: usize,
}

impl ProbMatrix {
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn check_batch(params: &ParamVector, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Input("batch is empty".into()));
    }
    if batch.feature_dim() != params.layout().input_dim() {
        return Err(Error::Config(format!(
            "batch feature dim {} does not match layout input dim {}",
            batch.feature_dim(),
            params.layout().input_dim()
        )));
    }
    Ok(())
}

/// One sample's activations through every layer (input excluded).
struct ForwardTrace {
    activations: Vec<Vec<f64>>,
}

/// Runs `x -> tanh-hidden layers -> linear logits` for one sample. The last
/// activation vector holds raw logits (softmax is applied by callers).
fn forward_sample(params: &ParamVector, x: &[f64]) -> ForwardTrace {
    let layout = params.layout();
    let p = params.values();
    let num_layers = layout.num_layers();
    let mut activations = Vec::with_capacity(num_layers);
    let mut input = x;
    for k in 0..num_layers {
        let off = layout.layer(k);
        let mut out = vec![0.0; off.out_dim];
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = off.weights.start + o * off.in_dim;
            let mut acc = p[off.biases.start + o];
            for (i, &xi) in input.iter().enumerate() {
                acc += p[row + i] * xi;
            }
            *out_v = if k + 1 < num_layers { acc.tanh() } else { acc };
        }
        activations.push(out);
        input = activations.last().unwrap();
    }
    ForwardTrace { activations }
}

/// Stable softmax in place.
fn softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Class probabilities for every row of `batch`. Each output row is a
/// probability distribution over C classes.
pub fn forward(params: &ParamVector, batch: &Batch) -> Result<ProbMatrix> {
    check_batch(params, batch)?;
    let c = params.layout().num_classes();
    let mut data = Vec::with_capacity(batch.len() * c);
    for i in 0..batch.len() {
        let trace = forward_sample(params, batch.row(i));
        let mut logits = trace.activations.last().unwrap().clone();
        softmax(&mut logits);
        data.extend_from_slice(&logits);
    }
    Ok(ProbMatrix { data, cols: c })
}

/// Mean softmax cross-entropy over the batch and its analytic gradient.
pub fn loss_and_grad(params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    check_batch(params, batch)?;
    let layout = params.layout();
    let c = layout.num_classes();
    for &y in batch.labels() {
        if y >= c {
            return Err(Error::Input(format!("label id {y} out of range (C = {c})")));
        }
    }

    let p = params.values();
    let n = batch.len() as f64;
    let num_layers = layout.num_layers();
    let mut grad = vec![0.0; layout.num_params()];
    let mut total_loss = 0.0;

    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.label(i);
        let trace = forward_sample(params, x);
        let mut probs = trace.activations.last().unwrap().clone();
        softmax(&mut probs);
        // Clamp keeps the loss finite when a logit gap underflows the prob.
        total_loss += -(probs[y].max(1e-300)).ln() / n;

        // d loss / d logits, already scaled for the batch mean.
        let mut delta: Vec<f64> = probs;
        delta[y] -= 1.0;
        for d in delta.iter_mut() {
            *d /= n;
        }

        for k in (0..num_layers).rev() {
            let off = layout.layer(k);
            let layer_input: &[f64] =
                if k == 0 { x } else { &trace.activations[k - 1] };
            let mut d_input = vec![0.0; off.in_dim];
            for (o, &dz) in delta.iter().enumerate() {
                let row = off.weights.start + o * off.in_dim;
                grad[off.biases.start + o] += dz;
                for (j, &inp) in layer_input.iter().enumerate() {
                    grad[row + j] += dz * inp;
                    d_input[j] += p[row + j] * dz;
                }
            }
            if k > 0 {
                // Pull the gradient through the tanh of the previous layer.
                for (j, d) in d_input.iter_mut().enumerate() {
                    let a = trace.activations[k - 1][j];
                    *d *= 1.0 - a * a;
                }
                delta = d_input;
            }
        }
    }

    let grad = ParamVector::from_values(layout, grad)?.ensure_finite("loss_and_grad")?;
    if !total_loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok((total_loss, grad))
}

/// One SGD step: `params - eta * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {eta}")));
    }
    params.check_layout(grad, "sgd_step")?;
    params.add_scaled(grad, -eta)
}

/// Entries of `v` on class `l`'s output-layer slice, in index order.
pub fn class_slice_values(v: &ParamVector, class: usize) -> Result<Vec<f64>> {
    let idx = v.layout().class_slice(class)?;
    Ok(idx.into_iter().map(|i| v.values()[i]).collect())
}

/// Seeded uniform init in [-0.1, 0.1].
pub fn init_params(layout: &Arc<LayerLayout>, base_seed: u64) -> ParamVector {
    let mut rng = seed::rng(base_seed, Domain::InitParams);
    let values = (0..layout.num_params()).map(|_| rng.random_range(-0.1..0.1)).collect();
    ParamVector { values, layout: Arc::clone(layout) }
}

/// Index of the most probable class per row; ties go to the lower class id.
pub fn predict(params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
    let probs = forward(params, batch)?;
    Ok((0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(params: &ParamVector, batch: &Batch) -> Result<f64> {
    let preds = predict(params, batch)?;
    let hits = preds.iter().zip(batch.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_layout() -> Arc<LayerLayout> {
        LayerLayout::new(&[4, 5, 3]).unwrap()
    }

    fn random_params(layout: &Arc<LayerLayout>, seed: u64) -> ParamVector {
        init_params(layout, seed)
    }

    fn random_batch(layout: &Arc<LayerLayout>, rows: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = layout.input_dim();
        let c = layout.num_classes();
        let inputs = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..rows).map(|_| rng.random_range(0..c)).collect();
        Batch::new(inputs, d, labels).unwrap()
    }

    #[test]
    fn layout_counts_match() {
        let layout = small_layout();
        // 4*5 + 5 + 5*3 + 3
        assert_eq!(layout.num_params(), 43);
        assert_eq!(layout.num_classes(), 3);
        assert_eq!(layout.class_slice_len(), 6);
    }

    #[test]
    fn class_slices_partition_output_layer() {
        let layout = small_layout();
        let out = layout.layer(layout.num_layers() - 1);
        let mut seen = std::collections::BTreeSet::new();
        for l in 0..layout.num_classes() {
            let slice = layout.class_slice(l).unwrap();
            assert_eq!(slice.len(), layout.class_slice_len());
            for i in slice {
                assert!(seen.insert(i), "index {i} appears in two class slices");
            }
        }
        let expected: std::collections::BTreeSet<usize> =
            out.weights.clone().chain(out.biases.clone()).collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn class_slice_rejects_out_of_range() {
        let layout = small_layout();
        assert!(matches!(layout.class_slice(3), Err(Error::Input(_))));
    }

    #[test]
    fn marker_value_lands_in_one_slice_only() {
        let layout = LayerLayout::new(&[2, 3, 5]).unwrap();
        let mut v = ParamVector::zeros(&layout);
        let bias_of_3 = layout.class_slice(3).unwrap()[layout.class_slice_len() - 1];
        v.values_mut()[bias_of_3] = 42.0;
        for l in 0..5 {
            let vals = class_slice_values(&v, l).unwrap();
            let has_marker = vals.iter().any(|&x| x == 42.0);
            assert_eq!(has_marker, l == 3);
        }
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        let layout = small_layout();
        let params = ParamVector::zeros(&layout);
        let batch = random_batch(&layout, 7, 1);
        let probs = forward(&params, &batch).unwrap();
        for i in 0..probs.rows() {
            for &p in probs.row(i) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let layout = small_layout();
        let params = random_params(&layout, 3);
        let batch = random_batch(&layout, 11, 4);
        let probs = forward(&params, &batch).unwrap();
        for i in 0..probs.rows() {
            let sum: f64 = probs.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(probs.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn zero_params_loss_is_ln_c() {
        let layout = LayerLayout::new(&[6, 8, 10]).unwrap();
        let params = ParamVector::zeros(&layout);
        let batch = Batch::new(vec![0.5; 6], 6, vec![7]).unwrap();
        let (loss, _) = loss_and_grad(&params, &batch).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_keeps_mean_loss_and_grad() {
        let layout = small_layout();
        let params = random_params(&layout, 5);
        let batch = random_batch(&layout, 6, 6);
        let mut doubled_inputs = Vec::new();
        let mut doubled_labels = Vec::new();
        for rep in 0..2 {
            let _ = rep;
            for i in 0..batch.len() {
                doubled_inputs.extend_from_slice(batch.row(i));
                doubled_labels.push(batch.label(i));
            }
        }
        let doubled = Batch::new(doubled_inputs, layout.input_dim(), doubled_labels).unwrap();
        let (l1, g1) = loss_and_grad(&params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&params, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(g1.linf_distance(&g2) < 1e-12);
    }

    #[test]
    fn rejects_label_out_of_range() {
        let layout = small_layout();
        let params = random_params(&layout, 1);
        let batch = Batch::new(vec![0.0; 4], 4, vec![3]).unwrap();
        assert!(matches!(loss_and_grad(&params, &batch), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let layout = small_layout();
        let params = random_params(&layout, 1);
        let batch = Batch::new(vec![0.0; 3], 3, vec![0]).unwrap();
        assert!(matches!(forward(&params, &batch), Err(Error::Config(_))));
    }

    /// Central finite differences on the mean loss; the independent oracle
    /// for the analytic gradient.
    fn numeric_grad_at(params: &ParamVector, batch: &Batch, idx: usize, h: f64) -> f64 {
        let mut plus = params.clone();
        plus.values_mut()[idx] += h;
        let mut minus = params.clone();
        minus.values_mut()[idx] -= h;
        let (lp, _) = loss_and_grad(&plus, batch).unwrap();
        let (lm, _) = loss_and_grad(&minus, batch).unwrap();
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let layout = LayerLayout::new(&[5, 7, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..5 {
            let params = random_params(&layout, 100 + case);
            let batch = random_batch(&layout, 9, 200 + case);
            let (_, grad) = loss_and_grad(&params, &batch).unwrap();
            for k in 0..layout.num_layers() {
                let off = layout.layer(k).clone();
                for _ in 0..10 {
                    let idx = if rng.random_range(0..2) == 0 && off.weights.len() > 0 {
                        off.weights.start + rng.random_range(0..off.weights.len())
                    } else {
                        off.biases.start + rng.random_range(0..off.biases.len())
                    };
                    let numeric = numeric_grad_at(&params, &batch, idx, 1e-6);
                    let analytic = grad.values()[idx];
                    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (analytic - numeric).abs() / scale < 1e-5,
                        "layer {k} idx {idx}: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn sgd_step_basics() {
        let layout = LayerLayout::new(&[1, 1]).unwrap();
        let p = ParamVector::from_values(&layout, vec![1.0, 2.0]).unwrap();
        let zero = ParamVector::zeros(&layout);
        assert_eq!(sgd_step(&p, &zero, 0.3).unwrap().values(), p.values());

        let g = ParamVector::from_values(&layout, vec![1.0, 1.0]).unwrap();
        let stepped = sgd_step(&p, &g, 0.5).unwrap();
        assert_eq!(stepped.values(), &[0.5, 1.5]);

        // k identical steps compose linearly.
        let mut cur = p.clone();
        for _ in 0..4 {
            cur = sgd_step(&cur, &g, 0.5).unwrap();
        }
        assert!((cur.values()[0] - (1.0 - 4.0 * 0.5)).abs() < 1e-12);
        assert!((cur.values()[1] - (2.0 - 4.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn sgd_step_is_linear_in_the_gradient() {
        let layout = small_layout();
        let p = random_params(&layout, 8);
        let g1 = random_params(&layout, 9);
        let g2 = random_params(&layout, 10);
        let (a, b) = (0.7, -1.3);
        let combined = g1.scale(a).unwrap().add_scaled(&g2, b).unwrap();
        let lhs = sgd_step(&p, &combined, 1.0).unwrap();
        let rhs = p.add_scaled(&g1, -a).unwrap().add_scaled(&g2, -b).unwrap();
        assert!(lhs.linf_distance(&rhs) < 1e-12);
    }

    #[test]
    fn sgd_step_rejects_layout_mismatch() {
        let a = ParamVector::zeros(&LayerLayout::new(&[2, 2]).unwrap());
        let b = ParamVector::zeros(&LayerLayout::new(&[3, 2]).unwrap());
        assert!(matches!(sgd_step(&a, &b, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn class_slice_values_of_ones_vector() {
        let layout = small_layout();
        let v = ParamVector::from_values(&layout, vec![1.0; layout.num_params()]).unwrap();
        for l in 0..3 {
            let vals = class_slice_values(&v, l).unwrap();
            assert_eq!(vals, vec![1.0; layout.class_slice_len()]);
        }
        assert!(matches!(class_slice_values(&v, 5), Err(Error::Input(_))));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let layout = small_layout();
        let a = init_params(&layout, 42);
        let b = init_params(&layout, 42);
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| (-0.1..0.1).contains(v)));
        let c = init_params(&layout, 43);
        assert_ne!(a.values(), c.values());
    }
}
