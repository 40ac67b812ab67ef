//! Synthetic timestamped binary datasets with planted concept drift.
//!
//! Slots are consecutive calendar months starting at `start_year-start_month`.
//! Every slot holds exactly `n_per_slot` malware and `n_per_slot` goodware
//! samples. Feature roles:
//!
//! * stable malware features: `peak_p` in malware, `base_p` in goodware;
//! * stable goodware features: the mirror image;
//! * drift-up features: goodware at `peak_p` throughout, malware rising
//!   linearly from `base_p` (slot 0) to `peak_p` (last slot), so a model
//!   trained early learns a negative weight that malware increasingly hits;
//! * drift-down features: goodware at `base_p`, malware falling linearly
//!   from `peak_p` to `base_p`, so a positive weight stops firing;
//! * everything else: `noise_p` in both classes.
//!
//! Which index plays which role is a seeded permutation.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureDictionary, Label, SparseSample};
use crate::error::{Error, Result};

/// Seed of the reference dataset used by the acceptance suite.
pub const REFERENCE_SEED: u64 = 20150101;
/// Slot of the reference dataset where the test period starts (Jan 2015).
pub const REFERENCE_BOUNDARY_SLOT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub d: usize,
    pub n_per_slot: usize,
    pub n_slots: usize,
    pub stable_pos: usize,
    pub stable_neg: usize,
    pub n_drift_up: usize,
    pub n_drift_down: usize,
    pub base_p: f64,
    pub peak_p: f64,
    pub noise_p: f64,
    pub seed: u64,
    pub start_year: i32,
    pub start_month: u32,
}

impl SynthSpec {
    /// 1000 features, 25 rising and 25 falling, 24 monthly slots from May
    /// 2014 with 500 samples per class each. Slot 8 is January 2015.
    pub fn reference() -> Self {
        Self {
            d: 1000,
            n_per_slot: 500,
            n_slots: 24,
            stable_pos: 5,
            stable_neg: 5,
            n_drift_up: 25,
            n_drift_down: 25,
            base_p: 0.003,
            peak_p: 0.05,
            noise_p: 0.02,
            seed: REFERENCE_SEED,
            start_year: 2014,
            start_month: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let planted = self.stable_pos + self.stable_neg + self.n_drift_up + self.n_drift_down;
        if planted > self.d {
            return Err(Error::InvalidConfig(format!(
                "{planted} planted features do not fit in d = {}",
                self.d
            )));
        }
        if self.n_slots == 0 || self.n_per_slot == 0 {
            return Err(Error::InvalidConfig("need at least one slot and one sample per slot".into()));
        }
        let unit = 0.0..=1.0;
        if !(unit.contains(&self.base_p) && unit.contains(&self.peak_p) && self.base_p <= self.peak_p) {
            return Err(Error::InvalidConfig(format!(
                "need 0 ≤ base_p ≤ peak_p ≤ 1, got {} and {}",
                self.base_p, self.peak_p
            )));
        }
        if !unit.contains(&self.noise_p) {
            return Err(Error::InvalidConfig(format!("noise_p {} outside [0, 1]", self.noise_p)));
        }
        if !(1..=12).contains(&self.start_month) {
            return Err(Error::InvalidConfig(format!("start month {} invalid", self.start_month)));
        }
        self.slot_start(self.n_slots).map(|_| ())
    }

    /// Epoch second at which slot `k` begins (`k = n_slots` gives the end of
    /// the last slot).
    pub fn slot_start(&self, k: usize) -> Result<i64> {
        let months = i64::from(self.start_year) * 12 + i64::from(self.start_month - 1) + k as i64;
        i32::try_from(months.div_euclid(12))
            .ok()
            .and_then(|year| NaiveDate::from_ymd_opt(year, months.rem_euclid(12) as u32 + 1, 1))
            .and_then(|date| date.and_hms_opt(0, 0, 0))
            .map(|dt| dt.and_utc().timestamp())
            .ok_or_else(|| Error::InvalidConfig(format!("slot {k} outside the calendar range")))
    }

    /// Per-slot change of a drift feature's malware frequency.
    pub fn planted_slope(&self) -> f64 {
        if self.n_slots < 2 {
            0.0
        } else {
            (self.peak_p - self.base_p) / (self.n_slots - 1) as f64
        }
    }

    fn ramp(&self, k: usize) -> f64 {
        self.base_p + self.planted_slope() * k as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftGroup {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFeature {
    pub group: DriftGroup,
    pub planted_slope_sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    StableMalware,
    StableGoodware,
    DriftUp,
    DriftDown,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    /// Planted drifting features by index.
    pub planted: BTreeMap<usize, PlantedFeature>,
    pub stable_malware: Vec<usize>,
    pub stable_goodware: Vec<usize>,
}

impl GroundTruth {
    pub fn indices(&self, group: DriftGroup) -> Vec<usize> {
        self.planted
            .iter()
            .filter(|(_, p)| p.group == group)
            .map(|(&j, _)| j)
            .collect()
    }

    pub fn is_planted(&self, j: usize) -> bool {
        self.planted.contains_key(&j)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut roles = Vec::with_capacity(spec.d);
    roles.extend(std::iter::repeat_n(Role::StableMalware, spec.stable_pos));
    roles.extend(std::iter::repeat_n(Role::StableGoodware, spec.stable_neg));
    roles.extend(std::iter::repeat_n(Role::DriftUp, spec.n_drift_up));
    roles.extend(std::iter::repeat_n(Role::DriftDown, spec.n_drift_down));
    roles.resize(spec.d, Role::Noise);
    roles.shuffle(&mut rng);

    let mut truth = GroundTruth {
        planted: BTreeMap::new(),
        stable_malware: Vec::new(),
        stable_goodware: Vec::new(),
    };
    for (j, role) in roles.iter().enumerate() {
        match role {
            Role::StableMalware => truth.stable_malware.push(j),
            Role::StableGoodware => truth.stable_goodware.push(j),
            Role::DriftUp => {
                truth.planted.insert(
                    j,
                    PlantedFeature {
                        group: DriftGroup::Up,
                        planted_slope_sign: 1,
                    },
                );
            }
            Role::DriftDown => {
                truth.planted.insert(
                    j,
                    PlantedFeature {
                        group: DriftGroup::Down,
                        planted_slope_sign: -1,
                    },
                );
            }
            Role::Noise => {}
        }
    }

    let width = spec.d.to_string().len();
    let names = (0..spec.d).map(|j| format!("feat_{j:0width$}")).collect();
    let dictionary = FeatureDictionary::new(names)?;

    let mut samples = Vec::with_capacity(2 * spec.n_slots * spec.n_per_slot);
    let (base, peak) = (spec.base_p, spec.peak_p);
    for k in 0..spec.n_slots {
        let start = spec.slot_start(k)?;
        let end = spec.slot_start(k + 1)?;
        let rising = spec.ramp(k);
        let falling = peak - (rising - base);
        for label in [Label::Malware, Label::Goodware] {
            let probs: Vec<f64> = roles
                .iter()
                .map(|role| match (role, label) {
                    (Role::StableMalware, Label::Malware) | (Role::StableGoodware, Label::Goodware) => peak,
                    (Role::StableMalware, Label::Goodware) | (Role::StableGoodware, Label::Malware) => base,
                    (Role::DriftUp, Label::Malware) => rising,
                    (Role::DriftUp, Label::Goodware) => peak,
                    (Role::DriftDown, Label::Malware) => falling,
                    (Role::DriftDown, Label::Goodware) => base,
                    (Role::Noise, _) => spec.noise_p,
                })
                .collect();
            let tag = match label {
                Label::Malware => 'm',
                Label::Goodware => 'g',
            };
            for i in 0..spec.n_per_slot {
                let timestamp = rng.gen_range(start..end);
                let indices = probs
                    .iter()
                    .enumerate()
                    .filter(|&(_, &p)| rng.gen::<f64>() < p)
                    .map(|(j, _)| j as u32)
                    .collect();
                samples.push(SparseSample::new(format!("{tag}{k:02}-{i:05}"), timestamp, label, indices)?);
            }
        }
    }

    Ok((Dataset::new(dictionary, samples)?, truth))
}
