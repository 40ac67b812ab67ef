//! The full temporal comparison: baseline SVM against two bounded variants.

use serde::Serialize;

use crate::dataset::{Dataset, Label};
use crate::drift::{score_trend, t_stability, DriftConfig, DriftReport, ScoreTrendPoint};
use crate::error::Result;
use crate::eval::{temporal_split, DecaySlopes, EvalReport, SplitSpec, DEFAULT_FPR_CAP};
use crate::model::LinearModel;
use crate::trainer::{
    train_svm, train_svm_cb, CbConfig, TrainConfig, DEFAULT_UNSTABLE, HIGH_BOUND, LOW_BOUND,
};

/// Which part of the timeline the score trends cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrendScope {
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub train: TrainConfig,
    pub n_unstable: usize,
    pub high_bound: f64,
    pub low_bound: f64,
    pub drift: DriftConfig,
    pub boundary: i64,
    pub fpr_cap: f64,
    pub trend_scope: TrendScope,
}

impl ComparisonConfig {
    pub fn new(boundary: i64) -> Self {
        Self {
            train: TrainConfig::default(),
            n_unstable: DEFAULT_UNSTABLE,
            high_bound: HIGH_BOUND,
            low_bound: LOW_BOUND,
            drift: DriftConfig::default(),
            boundary,
            fpr_cap: DEFAULT_FPR_CAP,
            trend_scope: TrendScope::Test,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    /// `svm`, `cb_h` or `cb_l`.
    pub id: String,
    pub model: LinearModel,
    pub losses: Vec<f64>,
    /// Clipping radius, `None` for the baseline.
    pub bound: Option<f64>,
    pub bounded: Vec<usize>,
    pub eval: EvalReport,
    pub trend: Vec<ScoreTrendPoint>,
}

impl ModelRun {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss")
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub config: ComparisonConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Drift analysis of the baseline on the training period.
    pub drift: DriftReport,
    pub runs: Vec<ModelRun>,
}

impl Comparison {
    pub fn run(&self, id: &str) -> Option<&ModelRun> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn summary(&self) -> ComparisonSummary<'_> {
        ComparisonSummary {
            boundary: self.config.boundary,
            fpr_cap: self.config.fpr_cap,
            pauc_normalization: "divided by fpr_cap",
            n_train: self.n_train,
            n_test: self.n_test,
            trend_scope: self.config.trend_scope,
            models: self
                .runs
                .iter()
                .map(|r| ModelSummary {
                    model_id: &r.id,
                    bound: r.bound,
                    n_bounded: r.bounded.len(),
                    final_loss: r.final_loss(),
                    decay_slope: &r.eval.decay,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ModelSummary<'a> {
    pub model_id: &'a str,
    pub bound: Option<f64>,
    pub n_bounded: usize,
    pub final_loss: f64,
    pub decay_slope: &'a DecaySlopes,
}

#[derive(Debug, Serialize)]
pub struct ComparisonSummary<'a> {
    pub boundary: i64,
    pub fpr_cap: f64,
    pub pauc_normalization: &'static str,
    pub n_train: usize,
    pub n_test: usize,
    pub trend_scope: TrendScope,
    pub models: Vec<ModelSummary<'a>>,
}

/// Split, train the baseline, analyze its drift on the training period,
/// train both bounded variants from that analysis, then evaluate all three
/// per slot on the test period.
pub fn run_comparison(dataset: &Dataset, config: &ComparisonConfig) -> Result<Comparison> {
    config.train.validate()?;
    config.drift.validate()?;
    let (train, test) = temporal_split(dataset, SplitSpec { boundary: config.boundary })?;

    let baseline = train_svm(&train, &config.train)?;
    let drift = t_stability(&baseline.model, &train, &config.drift)?;
    let delta = drift.delta();

    let trend_data = match config.trend_scope {
        TrendScope::Test => &test,
        TrendScope::All => dataset,
    };
    let finish = |id: &str, model: LinearModel, losses: Vec<f64>, bound: Option<f64>, bounded: Vec<usize>| {
        let eval = EvalReport::build(
            id,
            &model,
            &test,
            &config.drift,
            Some(config.boundary),
            config.fpr_cap,
        )?;
        let trend = score_trend(&model, trend_data, &config.drift, Label::Malware)?;
        Ok::<_, crate::error::Error>(ModelRun {
            id: id.to_string(),
            model,
            losses,
            bound,
            bounded,
            eval,
            trend,
        })
    };

    let mut runs = vec![finish("svm", baseline.model, baseline.losses, None, Vec::new())?];
    for (id, bound) in [("cb_h", config.high_bound), ("cb_l", config.low_bound)] {
        let cb = CbConfig::new(config.train.clone(), config.n_unstable, bound);
        let (trained, bounded) = train_svm_cb(&train, &delta, &cb)?;
        runs.push(finish(id, trained.model, trained.losses, Some(bound), bounded)?);
    }

    Ok(Comparison {
        config: config.clone(),
        n_train: train.len(),
        n_test: test.len(),
        drift,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    #[test]
    fn small_comparison_runs_end_to_end() {
        let spec = SynthSpec {
            d: 60,
            n_per_slot: 40,
            n_slots: 6,
            stable_pos: 3,
            stable_neg: 3,
            n_drift_up: 4,
            n_drift_down: 4,
            base_p: 0.05,
            peak_p: 0.5,
            noise_p: 0.05,
            seed: 3,
            start_year: 2014,
            start_month: 11,
        };
        let (ds, _) = generate(&spec).unwrap();
        let mut config = ComparisonConfig::new(spec.slot_start(2).unwrap());
        config.train.iterations = 50;
        config.train.initial_step = 0.01;
        config.n_unstable = 5;
        let cmp = run_comparison(&ds, &config).unwrap();
        assert_eq!(cmp.n_train + cmp.n_test, ds.len());
        assert_eq!(cmp.runs.len(), 3);
        for run in &cmp.runs[1..] {
            let r = run.bound.unwrap();
            assert_eq!(run.bounded, cmp.drift.most_unstable(5));
            assert!(run.bounded.iter().all(|&j| run.model.weights()[j].abs() <= r + 1e-12));
        }
        assert_eq!(cmp.run("svm").unwrap().eval.slots.len(), 4);
        assert!(cmp.run("cb_l").unwrap().trend.iter().all(|p| p.count == 40));
    }
}
