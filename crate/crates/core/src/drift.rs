//! Drift analysis: per-slot class-conditional feature means, their
//! least-squares trend, and the T-stability vector `δ = w ∘ m`.
//!
//! Timestamps are cut into slots either by calendar month (UTC) or by a
//! fixed number of seconds counted from the earliest timestamp. Slots are
//! half-open `[start, end)` except the last, which also holds `t_max`, so
//! every sample lands in exactly one slot.
//!
//! A strongly negative `δ_j` marks a feature that pushes the mean score of
//! the analyzed class toward the decision boundary as time passes.

use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate};

use crate::dataset::{Dataset, FeatureDictionary, Label};
use crate::error::{Error, Result};
use crate::model::LinearModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMode {
    CalendarMonth,
    FixedSeconds(i64),
}

impl fmt::Display for SlotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotMode::CalendarMonth => f.write_str("month"),
            SlotMode::FixedSeconds(dt) => write!(f, "fixed:{dt}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriftConfig {
    pub slot: SlotMode,
    /// Only samples with this label enter the slot means.
    pub class_filter: Label,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            slot: SlotMode::CalendarMonth,
            class_filter: Label::Malware,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        match self.slot {
            SlotMode::FixedSeconds(dt) if dt <= 0 => Err(Error::InvalidConfig(format!(
                "slot width must be positive, got {dt} seconds"
            ))),
            _ => Ok(()),
        }
    }
}

/// Months since year 0, UTC.
fn month_index(t: i64) -> Result<i64> {
    let dt = DateTime::from_timestamp(t, 0)
        .ok_or_else(|| Error::InvalidConfig(format!("timestamp {t} outside the calendar range")))?;
    Ok(i64::from(dt.year()) * 12 + i64::from(dt.month0()))
}

fn month_start(index: i64) -> Result<i64> {
    let year = i32::try_from(index.div_euclid(12))
        .map_err(|_| Error::InvalidConfig(format!("month index {index} out of range")))?;
    let month = index.rem_euclid(12) as u32 + 1;
    NaiveDate::from_ymd_opt(year, month, 1)
        .and_then(|date| date.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| Error::InvalidConfig(format!("month index {index} out of range")))
}

/// Partition of `[t_min, t_max]` into time slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotLayout {
    mode: SlotMode,
    t_min: i64,
    t_max: i64,
    first_month: i64,
    bounds: Vec<(i64, i64)>,
}

impl SlotLayout {
    pub fn for_range(t_min: i64, t_max: i64, mode: SlotMode) -> Result<Self> {
        if t_min > t_max {
            return Err(Error::InvalidConfig(format!("empty time range [{t_min}, {t_max}]")));
        }
        let (first_month, bounds) = match mode {
            SlotMode::FixedSeconds(dt) => {
                if dt <= 0 {
                    return Err(Error::InvalidConfig(format!(
                        "slot width must be positive, got {dt} seconds"
                    )));
                }
                let span = t_max - t_min;
                let n = ((span + dt - 1) / dt).max(1);
                let bounds = (0..n)
                    .map(|k| (t_min + k * dt, t_min + (k + 1) * dt))
                    .collect();
                (0, bounds)
            }
            SlotMode::CalendarMonth => {
                let first = month_index(t_min)?;
                let last = month_index(t_max)?;
                let bounds = (first..=last)
                    .map(|m| Ok((month_start(m)?, month_start(m + 1)?)))
                    .collect::<Result<Vec<_>>>()?;
                (first, bounds)
            }
        };
        Ok(Self {
            mode,
            t_min,
            t_max,
            first_month,
            bounds,
        })
    }

    pub fn for_dataset(dataset: &Dataset, mode: SlotMode) -> Result<Self> {
        let (t_min, t_max) = dataset.time_range().ok_or(Error::EmptyDataset)?;
        Self::for_range(t_min, t_max, mode)
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// `(start, end)` of every slot; `end` is exclusive except for the last
    /// slot, which also contains `t_max`.
    pub fn bounds(&self) -> &[(i64, i64)] {
        &self.bounds
    }

    /// Slot holding `t`, or `None` when `t` lies outside `[t_min, t_max]`.
    pub fn slot_of(&self, t: i64) -> Option<usize> {
        if t < self.t_min || t > self.t_max {
            return None;
        }
        let k = match self.mode {
            SlotMode::FixedSeconds(dt) => ((t - self.t_min) / dt) as usize,
            SlotMode::CalendarMonth => (month_index(t).ok()? - self.first_month) as usize,
        };
        Some(k.min(self.len() - 1))
    }
}

/// Number of slots the dataset spans: `⌈(t_max − t_min)/Δt⌉` (at least 1)
/// for fixed slots, or the number of calendar months touched.
pub fn slot_count(dataset: &Dataset, config: &DriftConfig) -> Result<usize> {
    config.validate()?;
    Ok(SlotLayout::for_dataset(dataset, config.slot)?.len())
}

/// d × T matrix of per-slot mean feature values for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotMeans {
    d: usize,
    /// Column-major: slot `k` occupies `values[k*d .. (k+1)*d]`.
    values: Vec<f64>,
    slot_counts: Vec<usize>,
    slot_bounds: Vec<(i64, i64)>,
}

impl SlotMeans {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_slots(&self) -> usize {
        self.slot_counts.len()
    }

    pub fn slot_counts(&self) -> &[usize] {
        &self.slot_counts
    }

    pub fn slot_bounds(&self) -> &[(i64, i64)] {
        &self.slot_bounds
    }

    pub fn is_empty_slot(&self, k: usize) -> bool {
        self.slot_counts[k] == 0
    }

    /// Mean vector of slot `k`, `None` when no sample of the class fell in it.
    pub fn column(&self, k: usize) -> Option<&[f64]> {
        if self.is_empty_slot(k) {
            None
        } else {
            Some(&self.values[k * self.d..(k + 1) * self.d])
        }
    }

    /// Trend series of feature `j` over the non-empty slots.
    pub fn row(&self, j: usize) -> Vec<(usize, f64)> {
        (0..self.n_slots())
            .filter_map(|k| self.column(k).map(|col| (k, col[j])))
            .collect()
    }
}

pub fn slot_means(dataset: &Dataset, config: &DriftConfig) -> Result<SlotMeans> {
    config.validate()?;
    let layout = SlotLayout::for_dataset(dataset, config.slot)?;
    let d = dataset.d();
    let n_slots = layout.len();
    let mut values = vec![0.0; d * n_slots];
    let mut slot_counts = vec![0usize; n_slots];

    for sample in dataset.samples().iter().filter(|s| s.label == config.class_filter) {
        let k = layout
            .slot_of(sample.timestamp)
            .expect("layout covers every dataset timestamp");
        slot_counts[k] += 1;
        let column = &mut values[k * d..(k + 1) * d];
        for &j in sample.indices() {
            column[j as usize] += 1.0;
        }
    }
    for (k, &count) in slot_counts.iter().enumerate() {
        if count > 0 {
            let inv = 1.0 / count as f64;
            values[k * d..(k + 1) * d].iter_mut().for_each(|v| *v *= inv);
        }
    }

    Ok(SlotMeans {
        d,
        values,
        slot_counts,
        slot_bounds: layout.bounds().to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    /// Fewer than two distinct slot indices were available; `slope` is 0.
    pub degenerate: bool,
}

/// Ordinary least-squares slope of `value` against slot index.
pub fn fit_slope(series: &[(usize, f64)]) -> SlopeFit {
    const DEGENERATE: SlopeFit = SlopeFit {
        slope: 0.0,
        degenerate: true,
    };
    if series.len() < 2 {
        return DEGENERATE;
    }
    let n = series.len() as f64;
    let k_mean = series.iter().map(|&(k, _)| k as f64).sum::<f64>() / n;
    let v_mean = series.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let (sxy, sxx) = series.iter().fold((0.0, 0.0), |(sxy, sxx), &(k, v)| {
        let dk = k as f64 - k_mean;
        (sxy + dk * (v - v_mean), sxx + dk * dk)
    });
    if sxx == 0.0 {
        return DEGENERATE;
    }
    SlopeFit {
        slope: sxy / sxx,
        degenerate: false,
    }
}

/// Element-wise product of weights and slopes.
pub fn t_stability_vector(weights: &[f64], slopes: &[f64]) -> Vec<f64> {
    assert_eq!(weights.len(), slopes.len(), "weights and slopes must align");
    weights.iter().zip(slopes).map(|(w, m)| w * m).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDrift {
    pub index: usize,
    pub name: String,
    pub weight: f64,
    pub slope: f64,
    pub delta: f64,
    /// False when the feature never occurs in the analyzed class; its slope
    /// is then 0.
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// One record per feature, in feature-index order.
    records: Vec<FeatureDrift>,
    /// Feature indices by ascending δ, ties by ascending index.
    ranking: Vec<usize>,
    pub slot_counts: Vec<usize>,
    pub slot_bounds: Vec<(i64, i64)>,
    /// The slope fit had fewer than two non-empty slots.
    pub degenerate: bool,
}

impl DriftReport {
    pub fn from_parts(
        dictionary: &FeatureDictionary,
        weights: &[f64],
        slopes: &[f64],
        observed: &[bool],
    ) -> Self {
        let delta = t_stability_vector(weights, slopes);
        let records: Vec<FeatureDrift> = (0..dictionary.d())
            .map(|j| FeatureDrift {
                index: j,
                name: dictionary.name(j).unwrap_or_default().to_string(),
                weight: weights[j],
                slope: slopes[j],
                delta: delta[j],
                observed: observed[j],
            })
            .collect();
        let mut ranking: Vec<usize> = (0..records.len()).collect();
        ranking.sort_by(|&a, &b| records[a].delta.total_cmp(&records[b].delta).then(a.cmp(&b)));
        Self {
            records,
            ranking,
            slot_counts: Vec::new(),
            slot_bounds: Vec::new(),
            degenerate: false,
        }
    }

    pub fn records(&self) -> &[FeatureDrift] {
        &self.records
    }

    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    /// Records by ascending δ.
    pub fn ranked(&self) -> impl Iterator<Item = &FeatureDrift> + '_ {
        self.ranking.iter().map(move |&j| &self.records[j])
    }

    pub fn delta(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.delta).collect()
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.slope).collect()
    }

    /// The `n` features with the most negative δ.
    pub fn most_unstable(&self, n: usize) -> &[usize] {
        &self.ranking[..n.min(self.ranking.len())]
    }
}

/// Runs the full drift analysis of `model` on `dataset`.
pub fn t_stability(model: &LinearModel, dataset: &Dataset, config: &DriftConfig) -> Result<DriftReport> {
    model.check_bound_to(dataset)?;
    let means = slot_means(dataset, config)?;
    let d = dataset.d();
    let mut slopes = vec![0.0; d];
    let mut observed = vec![false; d];
    let mut degenerate = false;
    for j in 0..d {
        let row = means.row(j);
        observed[j] = row.iter().any(|&(_, v)| v > 0.0);
        let fit = fit_slope(&row);
        degenerate |= fit.degenerate;
        slopes[j] = fit.slope;
    }
    let mut report = DriftReport::from_parts(dataset.dictionary(), model.weights(), &slopes, &observed);
    report.slot_counts = means.slot_counts;
    report.slot_bounds = means.slot_bounds;
    report.degenerate = degenerate;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrendPoint {
    pub slot: usize,
    pub start: i64,
    pub end: i64,
    pub count: usize,
    /// `None` when no sample of the class fell in the slot.
    pub stats: Option<ScoreStats>,
}

fn stats(scores: &[f64]) -> Option<ScoreStats> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Some(ScoreStats {
        mean,
        std: var.sqrt(),
        min: scores.iter().copied().fold(f64::INFINITY, f64::min),
        max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Per-slot score statistics for samples of `class`.
pub fn score_trend(
    model: &LinearModel,
    dataset: &Dataset,
    config: &DriftConfig,
    class: Label,
) -> Result<Vec<ScoreTrendPoint>> {
    config.validate()?;
    let scores = model.score_all(dataset)?;
    let layout = SlotLayout::for_dataset(dataset, config.slot)?;
    let mut per_slot: Vec<Vec<f64>> = vec![Vec::new(); layout.len()];
    for (sample, score) in dataset.samples().iter().zip(scores) {
        if sample.label == class {
            let k = layout.slot_of(sample.timestamp).expect("layout covers dataset");
            per_slot[k].push(score);
        }
    }
    Ok(per_slot
        .iter()
        .zip(layout.bounds())
        .enumerate()
        .map(|(slot, (scores, &(start, end)))| ScoreTrendPoint {
            slot,
            start,
            end,
            count: scores.len(),
            stats: stats(scores),
        })
        .collect())
}
