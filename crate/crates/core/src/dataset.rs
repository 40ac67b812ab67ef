//! Timestamped, labeled, sparse binary samples and the feature dictionary
//! that gives their indices a meaning.
//!
//! Every feature is binary: a sample either contains it or not, so a sample
//! is stored as the strictly increasing list of feature indices it contains.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered, duplicate-free list of feature names.
///
/// The position of a name is its feature index and never changes.
#[derive(Debug, Clone)]
pub struct FeatureDictionary {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl PartialEq for FeatureDictionary {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl Eq for FeatureDictionary {}

impl FeatureDictionary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(names.len());
        for (index, name) in names.iter().enumerate() {
            if lookup.insert(name.clone(), index).is_some() {
                return Err(Error::DuplicateFeature(name.clone()));
            }
        }
        Ok(Self { names, lookup })
    }

    /// Dictionary with names `f0`, `f1`, ... Handy for tests and synthetic data.
    pub fn anonymous(d: usize) -> Self {
        Self::new((0..d).map(|j| format!("f{j}")).collect()).expect("generated names are unique")
    }

    pub fn d(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.lookup.get(name).copied()
    }

    /// Hex SHA-256 over `d` and the names in order; binds a model to this
    /// dictionary.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.names.len() as u64).to_le_bytes());
        for name in &self.names {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|byte| format!("{byte:02x}"))
            .collect()
    }
}

/// Binary class. Malware is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Goodware,
    Malware,
}

impl Label {
    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(Label::Goodware),
            1 => Some(Label::Malware),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Goodware => 0,
            Label::Malware => 1,
        }
    }

    /// Hinge-loss encoding: goodware -1, malware +1.
    pub fn signed(self) -> f64 {
        match self {
            Label::Goodware => -1.0,
            Label::Malware => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Goodware => Label::Malware,
            Label::Malware => Label::Goodware,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseSample {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub label: Label,
    indices: Vec<u32>,
}

impl SparseSample {
    /// Fails unless `indices` is strictly increasing.
    pub fn new(id: impl Into<String>, timestamp: i64, label: Label, indices: Vec<u32>) -> Result<Self> {
        let id = id.into();
        if let Some(pair) = indices.windows(2).find(|pair| pair[0] >= pair[1]) {
            return Err(Error::InvalidSample {
                id,
                reason: format!(
                    "feature indices must be strictly increasing ({} followed by {})",
                    pair[0], pair[1]
                ),
            });
        }
        Ok(Self {
            id,
            timestamp,
            label,
            indices,
        })
    }

    /// Sorts and deduplicates `indices` before building the sample.
    pub fn from_unsorted(id: impl Into<String>, timestamp: i64, label: Label, mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            id: id.into(),
            timestamp,
            label,
            indices,
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.indices.binary_search(&(feature as u32)).is_ok()
    }

    /// One past the largest index present, i.e. the smallest `d` this sample
    /// is valid under.
    pub fn min_dimension(&self) -> usize {
        self.indices.last().map_or(0, |&last| last as usize + 1)
    }

    pub fn with_label(&self, label: Label) -> Self {
        Self {
            label,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dictionary: Arc<FeatureDictionary>,
    samples: Vec<SparseSample>,
}

impl Dataset {
    pub fn new(dictionary: impl Into<Arc<FeatureDictionary>>, samples: Vec<SparseSample>) -> Result<Self> {
        let dictionary = dictionary.into();
        let d = dictionary.d();
        if let Some(bad) = samples.iter().find(|s| s.min_dimension() > d) {
            return Err(Error::DimensionMismatch {
                id: bad.id.clone(),
                index: bad.min_dimension() - 1,
                expected_d: d,
            });
        }
        Ok(Self {
            dictionary,
            samples,
        })
    }

    pub fn dictionary(&self) -> &FeatureDictionary {
        &self.dictionary
    }

    pub fn shared_dictionary(&self) -> Arc<FeatureDictionary> {
        Arc::clone(&self.dictionary)
    }

    pub fn d(&self) -> usize {
        self.dictionary.d()
    }

    pub fn samples(&self) -> &[SparseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(t_min, t_max)`, or `None` for an empty dataset.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        let mut iter = self.samples.iter().map(|s| s.timestamp);
        let first = iter.next()?;
        Some(iter.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Keeps the samples matching `keep`, sharing the dictionary.
    pub fn filter(&self, mut keep: impl FnMut(&SparseSample) -> bool) -> Dataset {
        Dataset {
            dictionary: Arc::clone(&self.dictionary),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    pub fn with_flipped_labels(&self) -> Dataset {
        Dataset {
            dictionary: Arc::clone(&self.dictionary),
            samples: self
                .samples
                .iter()
                .map(|s| s.with_label(s.label.flipped()))
                .collect(),
        }
    }

    pub fn into_parts(self) -> (Arc<FeatureDictionary>, Vec<SparseSample>) {
        (self.dictionary, self.samples)
    }
}
