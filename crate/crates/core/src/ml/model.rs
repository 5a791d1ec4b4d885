use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::MlError;

/// Per-feature standardisation with population statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Self { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    pub fn fit(features: &[Vec<f64>]) -> Result<Self, MlError> {
        if features.len() < 2 {
            return Err(MlError::TooFewRows { needed: 2, got: features.len() });
        }
        let width = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; width];
        for row in features {
            if row.len() != width {
                return Err(MlError::DimensionMismatch { expected: width, found: row.len() });
            }
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in features {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (j, (s, m)) in std.iter().zip(&mean).enumerate() {
            // Spread at rounding level is treated as constant.
            if !(s.is_finite() && *s > 4.0 * f64::EPSILON * m.abs()) || *s == 0.0 {
                return Err(MlError::DegenerateFeature(j));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), (m, s)) in out.iter_mut().zip(x).zip(self.mean.iter().zip(&self.std)) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.biases))
        {
            *o = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
        }
    }

    fn is_consistent(&self) -> bool {
        self.inputs > 0
            && self.outputs > 0
            && self.weights.len() == self.inputs * self.outputs
            && self.biases.len() == self.outputs
    }
}

/// Gradient of the loss, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: [Dense; 3],
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self { layers: model.layers.clone().map(|l| Dense::zeros(l.inputs, l.outputs)) }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    /// Same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: [Dense; 3],
    normalizer: Normalizer,
}

/// Reusable activation buffers for one forward/backward pass.
pub(crate) struct Scratch {
    x: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    out: [f64; 1],
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

impl MlpModel {
    /// Seeded Glorot initialisation of a `d_in - hidden - hidden - 1` network.
    pub fn new(normalizer: Normalizer, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self, MlError> {
        let d_in = normalizer.width();
        if d_in == 0 || hidden == 0 {
            return Err(MlError::InvalidHyperparameters("layer widths must be positive".into()));
        }
        let layers = [
            Dense::glorot(d_in, hidden, rng),
            Dense::glorot(hidden, hidden, rng),
            Dense::glorot(hidden, 1, rng),
        ];
        Self::from_parts(layers, normalizer)
    }

    pub fn from_parts(layers: [Dense; 3], normalizer: Normalizer) -> Result<Self, MlError> {
        if !layers.iter().all(Dense::is_consistent) {
            return Err(MlError::ShapeMismatch("layer buffers do not match their sizes".into()));
        }
        if layers[0].inputs != normalizer.width() || normalizer.std.len() != normalizer.width() {
            return Err(MlError::ShapeMismatch("normalizer width differs from input layer".into()));
        }
        if layers[1].inputs != layers[0].outputs || layers[2].inputs != layers[1].outputs {
            return Err(MlError::ShapeMismatch("consecutive layers do not chain".into()));
        }
        if layers[2].outputs != 1 {
            return Err(MlError::ShapeMismatch("output layer must have one unit".into()));
        }
        Ok(Self { layers, normalizer })
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        [
            self.layers[0].inputs,
            self.layers[0].outputs,
            self.layers[1].outputs,
            self.layers[2].outputs,
        ]
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    /// Direct access for tests and tools; callers must keep buffer lengths.
    pub fn layers_mut(&mut self) -> &mut [Dense; 3] {
        &mut self.layers
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), MlError> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        if params.len() != total {
            return Err(MlError::DimensionMismatch { expected: total, found: params.len() });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.biases.len());
            l.weights.copy_from_slice(w);
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let [_, h1, h2, _] = self.layer_sizes();
        Scratch {
            x: vec![0.0; self.input_width()],
            z1: vec![0.0; h1],
            z2: vec![0.0; h2],
            a1: vec![0.0; h1],
            a2: vec![0.0; h2],
            d1: vec![0.0; h1],
            d2: vec![0.0; h2],
            out: [0.0],
        }
    }

    fn check_width(&self, x: &[f64]) -> Result<(), MlError> {
        if x.len() != self.input_width() {
            return Err(MlError::DimensionMismatch { expected: self.input_width(), found: x.len() });
        }
        Ok(())
    }

    /// Forward pass on already standardised features.
    pub(crate) fn forward_standardized(&self, x: &[f64], s: &mut Scratch) -> f64 {
        let [l1, l2, l3] = &self.layers;
        l1.affine(x, &mut s.z1);
        s.a1.iter_mut().zip(&s.z1).for_each(|(a, z)| *a = relu(*z));
        l2.affine(&s.a1, &mut s.z2);
        s.a2.iter_mut().zip(&s.z2).for_each(|(a, z)| *a = relu(*z));
        l3.affine(&s.a2, &mut s.out);
        s.out[0]
    }

    /// Prediction for one raw feature row.
    pub fn forward(&self, x: &[f64]) -> Result<f64, MlError> {
        self.check_width(x)?;
        let mut s = self.scratch();
        self.normalizer.apply_into(x, &mut s.x);
        let xs = std::mem::take(&mut s.x);
        Ok(self.forward_standardized(&xs, &mut s))
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, MlError> {
        let mut s = self.scratch();
        let mut xs = vec![0.0; self.input_width()];
        rows.iter()
            .map(|x| {
                self.check_width(x)?;
                self.normalizer.apply_into(x, &mut xs);
                Ok(self.forward_standardized(&xs, &mut s))
            })
            .collect()
    }

    /// Adds `scale` times this sample's squared-error gradient to `g` and
    /// returns the squared error.
    fn accumulate(&self, x: &[f64], target: f64, scale: f64, s: &mut Scratch, g: &mut Gradients) -> f64 {
        let y = self.forward_standardized(x, s);
        let err = y - target;
        let dy = 2.0 * err * scale;
        let [l1, l2, l3] = &self.layers;
        let [g1, g2, g3] = &mut g.layers;

        g3.biases[0] += dy;
        for (gw, a) in g3.weights.iter_mut().zip(&s.a2) {
            *gw += dy * a;
        }
        for ((d, z), w) in s.d2.iter_mut().zip(&s.z2).zip(&l3.weights) {
            *d = if *z > 0.0 { dy * w } else { 0.0 };
        }

        s.d1.fill(0.0);
        for (j, &d) in s.d2.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g2.biases[j] += d;
            let row = j * l2.inputs..(j + 1) * l2.inputs;
            for ((gw, a), (w, d1)) in g2.weights[row.clone()]
                .iter_mut()
                .zip(&s.a1)
                .zip(l2.weights[row].iter().zip(s.d1.iter_mut()))
            {
                *gw += d * a;
                *d1 += d * w;
            }
        }
        for (d1, z) in s.d1.iter_mut().zip(&s.z1) {
            if *z <= 0.0 {
                *d1 = 0.0;
            }
        }
        for (i, &d) in s.d1.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g1.biases[i] += d;
            let row = i * l1.inputs..(i + 1) * l1.inputs;
            for (gw, v) in g1.weights[row].iter_mut().zip(x) {
                *gw += d * v;
            }
        }
        err * err
    }

    /// Exact gradient of the batch-mean squared error on standardised rows,
    /// written into `g`. Returns the batch MSE.
    pub(crate) fn gradient_standardized(
        &self,
        rows: &[&[f64]],
        targets: &[f64],
        s: &mut Scratch,
        g: &mut Gradients,
    ) -> f64 {
        g.clear();
        let scale = 1.0 / rows.len() as f64;
        let mut sse = 0.0;
        for (x, &t) in rows.iter().zip(targets) {
            sse += self.accumulate(x, t, scale, s, g);
        }
        sse * scale
    }

    /// Gradient of the mean squared error over a batch of raw feature rows.
    pub fn backward(&self, features: &[Vec<f64>], targets: &[f64]) -> Result<Gradients, MlError> {
        if features.is_empty() {
            return Err(MlError::EmptyBatch);
        }
        if features.len() != targets.len() {
            return Err(MlError::DimensionMismatch { expected: features.len(), found: targets.len() });
        }
        let mut standardized = Vec::with_capacity(features.len());
        for x in features {
            self.check_width(x)?;
            standardized.push(self.normalizer.apply(x));
        }
        let rows: Vec<&[f64]> = standardized.iter().map(Vec::as_slice).collect();
        let mut g = Gradients::zeros_like(self);
        let mut s = self.scratch();
        self.gradient_standardized(&rows, targets, &mut s, &mut g);
        Ok(g)
    }

    pub(crate) fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(self)
    }

    pub(crate) fn descend(&mut self, g: &Gradients, rate: f64) {
        for (l, gl) in self.layers.iter_mut().zip(&g.layers) {
            l.weights.iter_mut().zip(&gl.weights).for_each(|(w, d)| *w -= rate * d);
            l.biases.iter_mut().zip(&gl.biases).for_each(|(b, d)| *b -= rate * d);
        }
    }

    /// Mean squared error over standardised rows.
    pub(crate) fn mse_standardized(&self, rows: &[Vec<f64>], targets: &[f64], s: &mut Scratch) -> f64 {
        let sse: f64 = rows
            .iter()
            .zip(targets)
            .map(|(x, t)| (self.forward_standardized(x, s) - t).powi(2))
            .sum();
        sse / rows.len() as f64
    }
}
