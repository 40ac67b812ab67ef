//! Full-batch (projected) subgradient descent on the hinge loss.
//!
//! Two trainers share one loop:
//!
//! * [`train_svm`]: the baseline, hinge loss plus `l2_lambda/2 · ‖w‖²`.
//! * [`train_svm_cb`]: hinge loss only, with the weights of the `n_f` most
//!   temporally unstable features clipped to `[-r, r]` after every step.
//!
//! Labels are mapped to ±1 (goodware −1, malware +1). Parameters start at
//! `(0, 0)`. At a margin of exactly 1 the hinge contributes nothing to the
//! subgradient.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::model::LinearModel;

pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_INITIAL_STEP: f64 = 7e-5;
pub const DEFAULT_L2: f64 = 1.0;
pub const DEFAULT_UNSTABLE: usize = 100;
pub const HIGH_BOUND: f64 = 0.8;
pub const LOW_BOUND: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    CosineAnnealing,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::CosineAnnealing => "cosine",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" | "cosine_annealing" => Ok(Schedule::CosineAnnealing),
            other => Err(Error::InvalidConfig(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Step-size multiplier `s(t)` for iteration `t` of `total`, `1 ≤ t ≤ total`.
///
/// Cosine annealing is `0.5·(1 + cos(π·(t−1)/total))`: exactly 1 at the
/// first iteration and still positive at the last.
pub fn schedule_value(schedule: Schedule, t: usize, total: usize) -> Result<f64> {
    if t == 0 || t > total {
        return Err(Error::InvalidConfig(format!(
            "iteration {t} outside 1..={total}"
        )));
    }
    Ok(match schedule {
        Schedule::Constant => 1.0,
        Schedule::CosineAnnealing => 0.5 * (1.0 + (PI * (t - 1) as f64 / total as f64).cos()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub initial_step: f64,
    pub schedule: Schedule,
    pub l2_lambda: f64,
    /// Recorded with the model. Full-batch descent from the zero point draws
    /// no random numbers, so the trajectory does not depend on it.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            initial_step: DEFAULT_INITIAL_STEP,
            schedule: Schedule::CosineAnnealing,
            l2_lambda: DEFAULT_L2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial step must be positive, got {}",
                self.initial_step
            )));
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l2_lambda must be nonnegative, got {}",
                self.l2_lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbConfig {
    /// `base.l2_lambda` is ignored: the bounded objective has no L2 term.
    pub base: TrainConfig,
    pub n_unstable: usize,
    pub bound: f64,
}

impl CbConfig {
    pub fn new(base: TrainConfig, n_unstable: usize, bound: f64) -> Self {
        Self {
            base,
            n_unstable,
            bound,
        }
    }

    /// CB-H: soft bound r = 0.8 on the 100 most unstable features.
    pub fn high(base: TrainConfig) -> Self {
        Self::new(base, DEFAULT_UNSTABLE, HIGH_BOUND)
    }

    /// CB-L: hard bound r = 0.2 on the 100 most unstable features.
    pub fn low(base: TrainConfig) -> Self {
        Self::new(base, DEFAULT_UNSTABLE, LOW_BOUND)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.base.validate()?;
        if self.n_unstable > d {
            return Err(Error::InvalidConfig(format!(
                "cannot bound {} features in a {d}-dimensional model",
                self.n_unstable
            )));
        }
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bound must be positive, got {}",
                self.bound
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LinearModel,
    /// `losses[t]` is the objective after `t` updates; `losses[0]` is at the
    /// zero initialization.
    pub losses: Vec<f64>,
}

/// Compressed-row copy of a dataset, labels pre-mapped to ±1.
struct Batch {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    signs: Vec<f64>,
}

impl Batch {
    fn new(dataset: &Dataset) -> Self {
        let nnz = dataset.samples().iter().map(|s| s.indices().len()).sum();
        let mut offsets = Vec::with_capacity(dataset.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        offsets.push(0);
        for sample in dataset.samples() {
            indices.extend_from_slice(sample.indices());
            offsets.push(indices.len());
        }
        Self {
            offsets,
            indices,
            signs: dataset.samples().iter().map(|s| s.label.signed()).collect(),
        }
    }

    fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Objective value; when `grad` is given it is overwritten with the
    /// subgradient.
    fn objective(&self, w: &[f64], b: f64, l2: f64, mut grad: Option<&mut Gradient>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.weights.iter_mut().for_each(|v| *v = 0.0);
            g.bias = 0.0;
        }
        let mut hinge = 0.0;
        for (i, &y) in self.signs.iter().enumerate() {
            let row = self.row(i);
            let score = row.iter().map(|&j| w[j as usize]).sum::<f64>() + b;
            let margin = y * score;
            if margin < 1.0 {
                hinge += 1.0 - margin;
                if let Some(g) = grad.as_deref_mut() {
                    for &j in row {
                        g.weights[j as usize] -= y;
                    }
                    g.bias -= y;
                }
            }
        }
        if l2 == 0.0 {
            return hinge;
        }
        if let Some(g) = grad {
            g.weights.iter_mut().zip(w).for_each(|(gj, wj)| *gj += l2 * wj);
        }
        hinge + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `Σ max(0, 1 − ỹ·f(x)) + l2_lambda·‖w‖²/2`.
pub fn hinge_loss(model: &LinearModel, dataset: &Dataset, l2_lambda: f64) -> Result<f64> {
    check_inputs(model, dataset)?;
    Ok(Batch::new(dataset).objective(model.weights(), model.bias(), l2_lambda, None))
}

/// Subgradient of [`hinge_loss`] with respect to `(w, b)`.
pub fn hinge_gradient(model: &LinearModel, dataset: &Dataset, l2_lambda: f64) -> Result<Gradient> {
    check_inputs(model, dataset)?;
    let mut grad = Gradient {
        weights: vec![0.0; model.d()],
        bias: 0.0,
    };
    Batch::new(dataset).objective(model.weights(), model.bias(), l2_lambda, Some(&mut grad));
    Ok(grad)
}

fn check_inputs(model: &LinearModel, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.check_bound_to(dataset)
}

fn check_both_classes(dataset: &Dataset) -> Result<()> {
    let positives = dataset.count_label(Label::Malware);
    let negatives = dataset.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTrainingSet(format!(
            "{positives} malware and {negatives} goodware samples"
        )));
    }
    Ok(())
}

/// Baseline linear SVM: hinge loss plus L2, full-batch descent.
pub fn train_svm(dataset: &Dataset, config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    check_both_classes(dataset)?;
    descend(dataset, config, config.l2_lambda, &[], f64::INFINITY)
}

/// Indices of the `n_unstable` most negative entries of `delta`, ties broken
/// by ascending index.
pub fn unstable_features(delta: &[f64], n_unstable: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[a].total_cmp(&delta[b]).then(a.cmp(&b)));
    order.truncate(n_unstable);
    order
}

/// Bounded SVM: hinge loss only, clipping the weights of the `n_unstable`
/// most negative-`delta` features to `[-bound, bound]` after every step.
///
/// Returns the trained model and the bounded feature indices, most unstable
/// first.
pub fn train_svm_cb(dataset: &Dataset, delta: &[f64], config: &CbConfig) -> Result<(Trained, Vec<usize>)> {
    config.validate(dataset.d())?;
    if delta.len() != dataset.d() {
        return Err(Error::InvalidConfig(format!(
            "T-stability vector has length {}, expected {}",
            delta.len(),
            dataset.d()
        )));
    }
    if let Some(j) = delta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("T-stability of feature {j} is {}", delta[j])));
    }
    check_both_classes(dataset)?;
    let bounded = unstable_features(delta, config.n_unstable);
    let trained = descend(dataset, &config.base, 0.0, &bounded, config.bound)?;
    Ok((trained, bounded))
}

fn descend(
    dataset: &Dataset,
    config: &TrainConfig,
    l2: f64,
    bounded: &[usize],
    bound: f64,
) -> Result<Trained> {
    let d = dataset.d();
    let batch = Batch::new(dataset);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = Gradient {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut losses = Vec::with_capacity(config.iterations + 1);

    for t in 1..=config.iterations {
        let eta = config.initial_step * schedule_value(config.schedule, t, config.iterations)?;
        let loss = batch.objective(&w, b, l2, Some(&mut grad));
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss} at iteration {t}")));
        }
        losses.push(loss);
        for (wj, gj) in w.iter_mut().zip(&grad.weights) {
            *wj -= eta * gj;
        }
        b -= eta * grad.bias;
        for &j in bounded {
            w[j] = w[j].clamp(-bound, bound);
        }
    }

    let final_loss = batch.objective(&w, b, l2, None);
    if !final_loss.is_finite() {
        return Err(Error::NonFinite(format!("final training loss {final_loss}")));
    }
    losses.push(final_loss);
    let model = LinearModel::new(w, b, dataset.dictionary().fingerprint())
        .map_err(|e| Error::NonFinite(e.to_string()))?;
    Ok(Trained { model, losses })
}
