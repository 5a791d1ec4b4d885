use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{MlpModel, Normalizer};
use super::{evaluate, Dataset, MlError};

/// Mini-batch size: a row count, or the whole training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub enum BatchSize {
    Rows(usize),
    Full,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Rows(usize),
    Named(String),
}

impl TryFrom<BatchRepr> for BatchSize {
    type Error = String;
    fn try_from(r: BatchRepr) -> Result<Self, String> {
        match r {
            BatchRepr::Rows(n) => Ok(BatchSize::Rows(n)),
            BatchRepr::Named(s) if s == "full" => Ok(BatchSize::Full),
            BatchRepr::Named(s) => Err(format!("unknown batch size {s:?}")),
        }
    }
}

impl From<BatchSize> for BatchRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Rows(n) => BatchRepr::Rows(n),
            BatchSize::Full => BatchRepr::Named("full".into()),
        }
    }
}

impl BatchSize {
    fn rows(self, available: usize) -> usize {
        match self {
            BatchSize::Rows(n) => n.min(available),
            BatchSize::Full => available,
        }
    }

    /// Tie-break order: smaller batches first, full batch last.
    fn rank(self) -> usize {
        match self {
            BatchSize::Rows(n) => n,
            BatchSize::Full => usize::MAX,
        }
    }
}

/// One point of the hyperparameter grid plus the stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch: BatchSize,
    pub max_epochs: usize,
    /// Window, in epochs, for the relative-improvement stop test.
    pub patience: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 1e-2,
            batch: BatchSize::Rows(32),
            max_epochs: 500,
            patience: 50,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlError> {
        let bad = |m: &str| Err(MlError::InvalidHyperparameters(m.into()));
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive and finite");
        }
        if self.batch == BatchSize::Rows(0) {
            return bad("batch size must be positive");
        }
        if self.patience == 0 || self.max_epochs < self.patience {
            return bad("need 0 < patience <= max epochs");
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `losses[0]` is the training MSE before the first update, `losses[e]`
    /// the training MSE after epoch `e`.
    pub losses: Vec<f64>,
    pub hyperparameters: TrainConfig,
    pub test_mse: f64,
    pub test_mae: f64,
    pub epochs_run: usize,
    pub stopped_on_plateau: bool,
}

impl TrainReport {
    /// Training loss after `epoch`; a run that stopped earlier holds its
    /// final loss.
    pub fn loss_at(&self, epoch: usize) -> f64 {
        self.losses[epoch.min(self.losses.len() - 1)]
    }
}

fn plateaued(losses: &[f64], patience: usize, tolerance: f64) -> bool {
    let e = losses.len() - 1;
    if e < patience {
        return false;
    }
    let before = losses[e - patience];
    let now = losses[e];
    before <= 0.0 || (before - now) / before < tolerance
}

/// Fits the normaliser on `train`, then runs mini-batch gradient descent
/// with a per-epoch seeded shuffle.
pub fn train(train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(MlpModel, TrainReport), MlError> {
    config.validate()?;
    if train.len() < 2 {
        return Err(MlError::TooFewRows { needed: 2, got: train.len() });
    }
    if test.is_empty() {
        return Err(MlError::EmptyTestSet);
    }
    if test.width() != train.width() {
        return Err(MlError::DimensionMismatch { expected: train.width(), found: test.width() });
    }
    let normalizer = Normalizer::fit(&train.features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::new(normalizer, config.hidden, &mut rng)?;

    let rows: Vec<Vec<f64>> = train.features.iter().map(|x| model.normalizer().apply(x)).collect();
    let targets = &train.targets;
    let batch = config.batch.rows(rows.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut scratch = model.scratch();
    let mut grads = model.zero_gradients();
    let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(batch);
    let mut batch_targets: Vec<f64> = Vec::with_capacity(batch);

    let initial = model.mse_standardized(&rows, targets, &mut scratch);
    if !initial.is_finite() {
        return Err(MlError::NonFiniteLoss { epoch: 0 });
    }
    let mut losses = vec![initial];
    let mut stopped_on_plateau = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            batch_rows.clear();
            batch_targets.clear();
            for &i in chunk {
                batch_rows.push(&rows[i]);
                batch_targets.push(targets[i]);
            }
            model.gradient_standardized(&batch_rows, &batch_targets, &mut scratch, &mut grads);
            model.descend(&grads, config.learning_rate);
        }
        let loss = model.mse_standardized(&rows, targets, &mut scratch);
        if !loss.is_finite() {
            return Err(MlError::NonFiniteLoss { epoch });
        }
        losses.push(loss);
        if plateaued(&losses, config.patience, config.tolerance) {
            stopped_on_plateau = true;
            break;
        }
    }

    let metrics = evaluate(&model, test)?;
    let report = TrainReport {
        epochs_run: losses.len() - 1,
        losses,
        hyperparameters: config.clone(),
        test_mse: metrics.mse,
        test_mae: metrics.mae,
        stopped_on_plateau,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub hidden_widths: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<BatchSize>,
    pub max_epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            hidden_widths: vec![8, 16, 32],
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            batch_sizes: vec![BatchSize::Rows(32), BatchSize::Full],
            max_epochs: 500,
            patience: 50,
            tolerance: 1e-4,
        }
    }
}

impl HyperGrid {
    /// Every combination, widths outermost, all with the same seed.
    pub fn configs(&self, seed: u64) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &hidden in &self.hidden_widths {
            for &learning_rate in &self.learning_rates {
                for &batch in &self.batch_sizes {
                    out.push(TrainConfig {
                        hidden,
                        learning_rate,
                        batch,
                        max_epochs: self.max_epochs,
                        patience: self.patience,
                        tolerance: self.tolerance,
                        seed,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), MlError> {
        if self.hidden_widths.is_empty() || self.learning_rates.is_empty() || self.batch_sizes.is_empty() {
            return Err(MlError::InvalidHyperparameters("grid sets must be non-empty".into()));
        }
        self.configs(0).iter().try_for_each(TrainConfig::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub hyperparameters: TrainConfig,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub epochs_run: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub model: MlpModel,
    pub report: TrainReport,
    pub trials: Vec<TrialSummary>,
}

fn better(a: &TrainReport, b: &TrainReport) -> bool {
    let (ha, hb) = (&a.hyperparameters, &b.hyperparameters);
    a.test_mse
        .total_cmp(&b.test_mse)
        .then(ha.hidden.cmp(&hb.hidden))
        .then(ha.learning_rate.total_cmp(&hb.learning_rate))
        .then(ha.batch.rank().cmp(&hb.batch.rank()))
        .is_lt()
}

/// Trains every grid point in parallel and keeps the lowest test MSE; ties go
/// to the smaller width, then the lower rate, then the smaller batch.
pub fn grid_search(train_set: &Dataset, test_set: &Dataset, grid: &HyperGrid, seed: u64) -> Result<GridOutcome, MlError> {
    grid.validate()?;
    let results: Vec<Result<(MlpModel, TrainReport), MlError>> = grid
        .configs(seed)
        .par_iter()
        .map(|c| train(train_set, test_set, c))
        .collect();

    let trials = grid
        .configs(seed)
        .into_iter()
        .zip(&results)
        .map(|(hyperparameters, r)| match r {
            Ok((_, rep)) => TrialSummary {
                hyperparameters,
                test_mse: Some(rep.test_mse),
                test_mae: Some(rep.test_mae),
                epochs_run: Some(rep.epochs_run),
                error: None,
            },
            Err(e) => TrialSummary {
                hyperparameters,
                test_mse: None,
                test_mae: None,
                epochs_run: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let mut best: Option<(MlpModel, TrainReport)> = None;
    let mut first_error = None;
    for r in results {
        match r {
            Ok(candidate) => {
                if best.as_ref().is_none_or(|(_, b)| better(&candidate.1, b)) {
                    best = Some(candidate);
                }
            }
            // Divergence is an expected outcome of a too-large rate.
            Err(MlError::NonFiniteLoss { epoch }) => {
                first_error.get_or_insert(MlError::NonFiniteLoss { epoch });
            }
            Err(e) => return Err(e),
        }
    }
    match (best, first_error) {
        (Some((model, report)), _) => Ok(GridOutcome { model, report, trials }),
        (None, Some(e)) => Err(e),
        (None, None) => Err(MlError::InvalidHyperparameters("empty grid".into())),
    }
}
