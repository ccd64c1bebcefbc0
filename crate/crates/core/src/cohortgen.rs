//! Seeded cohort generation from archetype slots.
//!
//! Each cohort is a pure function of `(seed, SamplerConfig)`. Per attempt the
//! generator draws one patient per slot in slot order (age, gender, race,
//! SES, citizenship, condition, survival, occupation, family status), then
//! draws the slot-to-id permutation. Attempts that break the diversity rule
//! are discarded and the same stream continues.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{discretize_survival, CapacityTable, CapacityVariant, Cohort, Patient, Resource};
use crate::rng::{derive_seed, rng_from_seed, ArenaRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("seed {seed}: diversity constraint unsatisfied after {attempts} attempts")]
    DiversityUnsatisfiable { seed: u64, attempts: u32 },
    #[error("cohort {index}: {source}")]
    Batch {
        index: u64,
        #[source]
        source: Box<GenError>,
    },
}

/// A categorical option with a relative weight (1 when given as a bare string).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightedOption {
    Plain(String),
    Weighted { value: String, weight: f64 },
}

impl WeightedOption {
    pub fn value(&self) -> &str {
        match self {
            WeightedOption::Plain(v) => v,
            WeightedOption::Weighted { value, .. } => value,
        }
    }

    pub fn weight(&self) -> f64 {
        match self {
            WeightedOption::Plain(_) => 1.0,
            WeightedOption::Weighted { weight, .. } => *weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVariant {
    pub name: String,
    pub needs: Vec<Resource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSlot {
    pub slot_id: String,
    #[serde(default)]
    pub tension_tag: String,
    pub age_range: [u32; 2],
    pub gender_options: Vec<WeightedOption>,
    pub race_options: Vec<WeightedOption>,
    pub ses_options: Vec<WeightedOption>,
    pub citizenship_options: Vec<WeightedOption>,
    pub condition_variants: Vec<ConditionVariant>,
    pub survival_range: [f64; 2],
    pub occupation_options: Vec<WeightedOption>,
    pub family_options: Vec<WeightedOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urgency: Option<String>,
}

impl ArchetypeSlot {
    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |msg: String| Err(GenError::InvalidConfig(format!("{}: {msg}", self.slot_id)));
        if self.age_range[0] > self.age_range[1] {
            return fail(format!("empty age range {:?}", self.age_range));
        }
        let [lo, hi] = self.survival_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return fail(format!("survival range {:?} not within [0, 1]", self.survival_range));
        }
        for (name, options) in [
            ("gender", &self.gender_options),
            ("race", &self.race_options),
            ("ses", &self.ses_options),
            ("citizenship", &self.citizenship_options),
            ("occupation", &self.occupation_options),
            ("family", &self.family_options),
        ] {
            if options.is_empty() {
                return fail(format!("no {name} options"));
            }
            if options.iter().any(|o| !(o.weight() > 0.0) || !o.weight().is_finite()) {
                return fail(format!("{name} option weights must be positive"));
            }
        }
        if self.condition_variants.is_empty() {
            return fail("no condition variants".into());
        }
        if let Some(c) = self.condition_variants.iter().find(|c| c.needs.is_empty()) {
            return fail(format!("condition `{}` has no needs", c.name));
        }
        Ok(())
    }
}

/// The bundled eight-slot archetype table.
pub fn default_slots() -> Vec<ArchetypeSlot> {
    serde_json::from_str(include_str!("../data/slots.json")).expect("bundled slot table is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub master_seed: u64,
    pub batch_size: u64,
    pub cohort_size: usize,
    pub capacity_variant: CapacityVariant,
    #[serde(default)]
    pub capacities: CapacityTable,
    pub slots: Vec<ArchetypeSlot>,
    #[serde(default = "default_true")]
    pub shuffle_slots: bool,
    pub max_resample_attempts: u32,
}

fn default_true() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            master_seed: 42,
            batch_size: 50,
            cohort_size: 8,
            capacity_variant: CapacityVariant::Standard,
            capacities: CapacityTable::default(),
            slots: default_slots(),
            shuffle_slots: true,
            max_resample_attempts: 100,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.batch_size < 1 {
            return Err(GenError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.slots.is_empty() {
            return Err(GenError::InvalidConfig("no archetype slots".into()));
        }
        if self.cohort_size != self.slots.len() {
            return Err(GenError::InvalidConfig(format!(
                "cohort size {} differs from the {} configured slots",
                self.cohort_size,
                self.slots.len()
            )));
        }
        if self.max_resample_attempts < 1 {
            return Err(GenError::InvalidConfig(
                "max_resample_attempts must be at least 1".into(),
            ));
        }
        self.slots.iter().try_for_each(ArchetypeSlot::validate)
    }
}

fn pick<'a>(rng: &mut ArenaRng, options: &'a [WeightedOption]) -> &'a str {
    if options.len() == 1 {
        return options[0].value();
    }
    let dist = WeightedIndex::new(options.iter().map(WeightedOption::weight)).expect("validated option weights");
    options[dist.sample(rng)].value()
}

fn draw_patient(rng: &mut ArenaRng, slot: &ArchetypeSlot) -> Patient {
    let age = rng.gen_range(slot.age_range[0]..=slot.age_range[1]);
    let gender = pick(rng, &slot.gender_options).to_string();
    let race = pick(rng, &slot.race_options).to_string();
    let ses = pick(rng, &slot.ses_options).to_string();
    let citizenship = pick(rng, &slot.citizenship_options).to_string();
    let condition = &slot.condition_variants[rng.gen_range(0..slot.condition_variants.len())];
    let [lo, hi] = slot.survival_range;
    let survival_prob = lo + (hi - lo) * rng.gen::<f64>();
    let occupation = pick(rng, &slot.occupation_options).to_string();
    let family_status = pick(rng, &slot.family_options).to_string();
    let mut needs = condition.needs.clone();
    needs.sort();
    needs.dedup();
    Patient {
        id: 0,
        age,
        gender,
        race,
        ses,
        citizenship,
        condition: condition.name.clone(),
        needs,
        survival_prob,
        survival_label: discretize_survival(survival_prob).expect("survival range within [0, 1]"),
        occupation,
        family_status,
        slot_id: slot.slot_id.clone(),
        urgency: slot.urgency.clone(),
    }
}

/// Generates one cohort. Identical `(cohort_id, seed, config)` yield
/// identical cohorts.
pub fn generate_cohort(cohort_id: u64, seed: u64, config: &SamplerConfig) -> Result<Cohort, GenError> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    for _ in 0..config.max_resample_attempts {
        let mut drawn: Vec<Patient> = config.slots.iter().map(|s| draw_patient(&mut rng, s)).collect();
        if config.shuffle_slots {
            drawn.shuffle(&mut rng);
        }
        for (i, p) in drawn.iter_mut().enumerate() {
            p.id = i as u32 + 1;
        }
        let cohort = Cohort {
            cohort_id,
            seed,
            patients: drawn,
            capacity: config.capacities.capacity(config.capacity_variant),
        };
        if cohort.diversity_violations().is_empty() {
            return Ok(cohort);
        }
    }
    Err(GenError::DiversityUnsatisfiable {
        seed,
        attempts: config.max_resample_attempts,
    })
}

/// Seed of cohort `index` in a batch.
pub fn cohort_seed(config: &SamplerConfig, index: u64) -> u64 {
    derive_seed(config.master_seed, index)
}

/// Generates `batch_size` cohorts with ids `0..batch_size`. Cohort `b` uses
/// `master_seed XOR splitmix64(b)` and depends on nothing else, so the
/// parallel schedule cannot change the output.
pub fn generate_batch(config: &SamplerConfig) -> Result<Vec<Cohort>, GenError> {
    config.validate()?;
    (0..config.batch_size)
        .into_par_iter()
        .map(|b| {
            generate_cohort(b, cohort_seed(config, b), config).map_err(|e| GenError::Batch {
                index: b,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SamplerConfig {
        SamplerConfig {
            batch_size: 3,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn bundled_slots_are_valid() {
        let slots = default_slots();
        assert_eq!(slots.len(), 8);
        slots.iter().for_each(|s| s.validate().unwrap());
        SamplerConfig::default().validate().unwrap();
    }

    #[test]
    fn same_seed_same_cohort() {
        let cfg = small_config();
        let a = generate_cohort(0, 99, &cfg).unwrap();
        let b = generate_cohort(0, 99, &cfg).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = small_config();
        let a = generate_cohort(0, 1, &cfg).unwrap();
        let b = generate_cohort(0, 2, &cfg).unwrap();
        assert_ne!(a.patients, b.patients);
    }

    #[test]
    fn unshuffled_ids_follow_slots() {
        let cfg = SamplerConfig {
            shuffle_slots: false,
            ..small_config()
        };
        for seed in 0..20 {
            let c = generate_cohort(0, seed, &cfg).unwrap();
            for (p, s) in c.patients.iter().zip(&cfg.slots) {
                assert_eq!(p.slot_id, s.slot_id);
            }
        }
    }

    #[test]
    fn batch_of_one_is_the_derived_cohort() {
        let cfg = SamplerConfig {
            batch_size: 1,
            ..SamplerConfig::default()
        };
        let batch = generate_batch(&cfg).unwrap();
        assert_eq!(batch.len(), 1);
        assert_eq!(batch[0], generate_cohort(0, cohort_seed(&cfg, 0), &cfg).unwrap());
    }

    #[test]
    fn zero_batch_is_rejected() {
        let cfg = SamplerConfig {
            batch_size: 0,
            ..SamplerConfig::default()
        };
        assert!(matches!(generate_batch(&cfg), Err(GenError::InvalidConfig(_))));
    }

    #[test]
    fn unsatisfiable_diversity_names_the_seed() {
        let mut slot = default_slots().remove(0);
        slot.age_range = [30, 30];
        slot.gender_options = vec![WeightedOption::Plain("Male".into())];
        slot.race_options = vec![WeightedOption::Plain("White".into())];
        slot.ses_options = vec![WeightedOption::Plain("Middle class".into())];
        let cfg = SamplerConfig {
            cohort_size: 2,
            slots: vec![slot.clone(), slot],
            max_resample_attempts: 5,
            ..SamplerConfig::default()
        };
        assert_eq!(
            generate_cohort(0, 1234, &cfg),
            Err(GenError::DiversityUnsatisfiable {
                seed: 1234,
                attempts: 5
            })
        );
    }

    #[test]
    fn disjoint_options_need_a_single_attempt() {
        let base = default_slots().remove(0);
        let slots: Vec<ArchetypeSlot> = (0..4)
            .map(|i| ArchetypeSlot {
                slot_id: format!("s{i}"),
                race_options: vec![WeightedOption::Plain(format!("race-{i}"))],
                ..base.clone()
            })
            .collect();
        let cfg = SamplerConfig {
            cohort_size: 4,
            slots,
            max_resample_attempts: 1,
            ..SamplerConfig::default()
        };
        for seed in 0..50 {
            generate_cohort(0, seed, &cfg).unwrap();
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let cfg = SamplerConfig {
            cohort_size: 7,
            ..SamplerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn options_accept_plain_strings() {
        let opts: Vec<WeightedOption> = serde_json::from_str(r#"["A", {"value": "B", "weight": 3}]"#).unwrap();
        assert_eq!(opts[0].weight(), 1.0);
        assert_eq!(opts[1].value(), "B");
        assert_eq!(opts[1].weight(), 3.0);
    }
}
