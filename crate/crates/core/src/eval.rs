//! Time-aware evaluation: temporal train/test split, per-slot confusion
//! counts, partial ROC AUC and recall-decay slopes.

use serde::Serialize;

use crate::dataset::{Dataset, Label};
use crate::drift::{fit_slope, DriftConfig, SlotLayout};
use crate::error::{Error, Result};
use crate::model::{label_for_score, LinearModel};

pub const DEFAULT_FPR_CAP: f64 = 0.05;

/// Training side is strictly before `boundary`, test side at or after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub boundary: i64,
}

pub fn temporal_split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let train = dataset.filter(|s| s.timestamp < spec.boundary);
    let test = dataset.filter(|s| s.timestamp >= spec.boundary);
    if train.is_empty() {
        return Err(Error::EmptySplitSide {
            side: "train",
            boundary: spec.boundary,
        });
    }
    if test.is_empty() {
        return Err(Error::EmptySplitSide {
            side: "test",
            boundary: spec.boundary,
        });
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotMetrics {
    pub slot: usize,
    pub start: i64,
    pub end: i64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
    /// `None` when nothing in the slot was predicted malware.
    pub precision: Option<f64>,
    /// `None` when the slot holds no malware.
    pub recall: Option<f64>,
    /// `None` unless the slot holds both classes and a cap was requested.
    pub pauc: Option<f64>,
}

impl SlotMetrics {
    fn empty(slot: usize, start: i64, end: i64) -> Self {
        Self {
            slot,
            start,
            end,
            n_pos: 0,
            n_neg: 0,
            true_pos: 0,
            false_pos: 0,
            false_neg: 0,
            true_neg: 0,
            precision: None,
            recall: None,
            pauc: None,
        }
    }

    pub fn total(&self) -> usize {
        self.n_pos + self.n_neg
    }

    fn finish(&mut self) {
        let predicted_pos = self.true_pos + self.false_pos;
        self.precision = (predicted_pos > 0).then(|| self.true_pos as f64 / predicted_pos as f64);
        self.recall = (self.n_pos > 0).then(|| self.true_pos as f64 / self.n_pos as f64);
    }
}

/// Confusion counts, precision and recall per time slot of `test`.
pub fn slot_confusion(model: &LinearModel, test: &Dataset, config: &DriftConfig) -> Result<Vec<SlotMetrics>> {
    evaluate_slots(model, test, config, None)
}

/// As [`slot_confusion`], also filling the per-slot partial AUC up to
/// `fpr_cap` where the slot holds both classes.
pub fn evaluate_slots(
    model: &LinearModel,
    test: &Dataset,
    config: &DriftConfig,
    fpr_cap: Option<f64>,
) -> Result<Vec<SlotMetrics>> {
    config.validate()?;
    if let Some(cap) = fpr_cap {
        check_cap(cap)?;
    }
    let scores = model.score_all(test)?;
    let layout = SlotLayout::for_dataset(test, config.slot)?;
    let mut metrics: Vec<SlotMetrics> = layout
        .bounds()
        .iter()
        .enumerate()
        .map(|(k, &(start, end))| SlotMetrics::empty(k, start, end))
        .collect();
    let mut slot_scores: Vec<Vec<(f64, Label)>> = vec![Vec::new(); layout.len()];

    for (sample, &score) in test.samples().iter().zip(&scores) {
        let k = layout.slot_of(sample.timestamp).expect("layout covers dataset");
        let m = &mut metrics[k];
        match (sample.label, label_for_score(score)) {
            (Label::Malware, Label::Malware) => m.true_pos += 1,
            (Label::Malware, Label::Goodware) => m.false_neg += 1,
            (Label::Goodware, Label::Malware) => m.false_pos += 1,
            (Label::Goodware, Label::Goodware) => m.true_neg += 1,
        }
        match sample.label {
            Label::Malware => m.n_pos += 1,
            Label::Goodware => m.n_neg += 1,
        }
        slot_scores[k].push((score, sample.label));
    }

    for (m, scored) in metrics.iter_mut().zip(&slot_scores) {
        m.finish();
        if let Some(cap) = fpr_cap {
            if m.n_pos > 0 && m.n_neg > 0 {
                m.pauc = Some(partial_auc_scored(scored, cap)?);
            }
        }
    }
    Ok(metrics)
}

fn check_cap(cap: f64) -> Result<()> {
    if cap > 0.0 && cap <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("fpr cap must lie in (0, 1], got {cap}")))
    }
}

/// Area under the ROC curve between FPR 0 and `fpr_cap`, divided by
/// `fpr_cap` so a perfect ranking scores 1.
pub fn partial_auc(model: &LinearModel, samples: &Dataset, fpr_cap: f64) -> Result<f64> {
    let scores = model.score_all(samples)?;
    let scored: Vec<(f64, Label)> = scores
        .into_iter()
        .zip(samples.samples().iter().map(|s| s.label))
        .collect();
    partial_auc_scored(&scored, fpr_cap)
}

/// [`partial_auc`] on precomputed `(score, label)` pairs.
///
/// The ROC is traced by lowering the threshold through the distinct scores;
/// samples sharing a score enter together, so ties yield a diagonal segment.
/// Trapezoids are summed up to the cap, interpolating the last one.
pub fn partial_auc_scored(scored: &[(f64, Label)], fpr_cap: f64) -> Result<f64> {
    check_cap(fpr_cap)?;
    let positives = scored.iter().filter(|(_, l)| *l == Label::Malware).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    if let Some((s, _)) = scored.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }

    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (p, n) = (positives as f64, negatives as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            match sorted[i].1 {
                Label::Malware => tp += 1,
                Label::Goodware => fp += 1,
            }
            i += 1;
        }
        let (fpr, tpr) = (fp as f64 / n, tp as f64 / p);
        if fpr >= fpr_cap {
            if fpr > prev_fpr {
                let t = (fpr_cap - prev_fpr) / (fpr - prev_fpr);
                let tpr_at_cap = prev_tpr + t * (tpr - prev_tpr);
                area += (fpr_cap - prev_fpr) * (prev_tpr + tpr_at_cap) / 2.0;
            }
            return Ok(area / fpr_cap);
        }
        area += (fpr - prev_fpr) * (prev_tpr + tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    unreachable!("the ROC always reaches fpr = 1 ≥ cap")
}

/// OLS slope of a per-slot metric over the slots where it is defined.
pub fn decay_slope(series: &[(usize, Option<f64>)]) -> Result<f64> {
    let points: Vec<(usize, f64)> = series.iter().filter_map(|&(k, v)| v.map(|v| (k, v))).collect();
    let fit = fit_slope(&points);
    if fit.degenerate {
        return Err(Error::TooFewPoints(points.len()));
    }
    Ok(fit.slope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecaySlopes {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub pauc: Option<f64>,
}

impl DecaySlopes {
    pub fn from_metrics(metrics: &[SlotMetrics]) -> Self {
        let slope = |f: fn(&SlotMetrics) -> Option<f64>| {
            let series: Vec<_> = metrics.iter().map(|m| (m.slot, f(m))).collect();
            decay_slope(&series).ok()
        };
        Self {
            precision: slope(|m| m.precision),
            recall: slope(|m| m.recall),
            pauc: slope(|m| m.pauc),
        }
    }
}

/// Everything reported about one model on one test period.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub boundary: Option<i64>,
    pub fpr_cap: f64,
    pub slots: Vec<SlotMetrics>,
    pub decay: DecaySlopes,
}

impl EvalReport {
    pub fn build(
        model_id: impl Into<String>,
        model: &LinearModel,
        test: &Dataset,
        config: &DriftConfig,
        boundary: Option<i64>,
        fpr_cap: f64,
    ) -> Result<Self> {
        let slots = evaluate_slots(model, test, config, Some(fpr_cap))?;
        let decay = DecaySlopes::from_metrics(&slots);
        Ok(Self {
            model_id: model_id.into(),
            boundary,
            fpr_cap,
            slots,
            decay,
        })
    }

    pub fn recall_series(&self) -> Vec<(usize, Option<f64>)> {
        self.slots.iter().map(|m| (m.slot, m.recall)).collect()
    }
}
