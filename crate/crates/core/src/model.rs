use crate::dataset::{Dataset, FeatureDictionary, Label, SparseSample};
use crate::error::{Error, Result};

/// Linear scorer `f(x) = w·x + b` over binary features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
    bias: f64,
    fingerprint: String,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64, fingerprint: impl Into<String>) -> Result<Self> {
        if let Some(j) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidModel(format!("weight {j} is not finite ({})", weights[j])));
        }
        if !bias.is_finite() {
            return Err(Error::InvalidModel(format!("bias is not finite ({bias})")));
        }
        Ok(Self {
            weights,
            bias,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn zeros(dictionary: &FeatureDictionary) -> Self {
        Self {
            weights: vec![0.0; dictionary.d()],
            bias: 0.0,
            fingerprint: dictionary.fingerprint(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn d(&self) -> usize {
        self.weights.len()
    }

    /// Fails unless the model was trained against the dataset's dictionary.
    pub fn check_bound_to(&self, dataset: &Dataset) -> Result<()> {
        let dataset_fp = dataset.dictionary().fingerprint();
        if dataset_fp != self.fingerprint || dataset.d() != self.d() {
            return Err(Error::DictionaryMismatch {
                model: self.fingerprint.clone(),
                dataset: dataset_fp,
            });
        }
        Ok(())
    }

    /// Sum of the selected weights plus the bias.
    pub fn score(&self, sample: &SparseSample) -> Result<f64> {
        if sample.min_dimension() > self.d() {
            return Err(Error::DimensionMismatch {
                id: sample.id.clone(),
                index: sample.min_dimension() - 1,
                expected_d: self.d(),
            });
        }
        Ok(self.score_unchecked(sample.indices()))
    }

    /// Score ≥ 0 is malware, including the tie at exactly 0.
    pub fn predict(&self, sample: &SparseSample) -> Result<Label> {
        self.score(sample).map(label_for_score)
    }

    /// Scores every sample of a dataset already checked with
    /// [`check_bound_to`](Self::check_bound_to).
    pub fn score_all(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.check_bound_to(dataset)?;
        Ok(dataset
            .samples()
            .iter()
            .map(|s| self.score_unchecked(s.indices()))
            .collect())
    }

    pub(crate) fn score_unchecked(&self, indices: &[u32]) -> f64 {
        indices.iter().map(|&j| self.weights[j as usize]).sum::<f64>() + self.bias
    }
}

pub fn label_for_score(score: f64) -> Label {
    if score >= 0.0 {
        Label::Malware
    } else {
        Label::Goodware
    }
}
