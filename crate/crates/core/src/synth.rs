//! Deterministic synthetic release series for experiments and tests.
//!
//! Each report has a Gender and an Age band (categorical), a Weight
//! (numeric) and three multivalued sensitive attributes: Drug, Indication
//! and Reaction. Some indications only occur for one gender or for elderly
//! age bands, which gives background-knowledge rules something to exploit.
//! One drug raises the rate of one reaction so signal metrics have a signal.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{BackgroundRule, QidConstraint};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{CategoricalAttr, NumericAttr, QidSchema, Record, Theta};
use crate::taxonomy::{NodeSpec, TaxonomyTree};

pub const SIGNAL_DRUG: &str = "AVANDIA";
pub const SIGNAL_REACTION: &str = "CEREBROVASCULAR ACCIDENT";

const FEMALE_INDICATIONS: [&str; 3] = ["Breast Cancer", "Cervicitis", "Polycystic Ovary Syndrome"];
const MALE_INDICATIONS: [&str; 2] = ["Prostate Cancer", "Hernia"];
const ELDERLY_INDICATIONS: [&str; 2] = ["COPD", "Alzheimer Disease"];
const COMMON_INDICATIONS: [&str; 12] = [
    "Diabetes",
    "Hypertension",
    "Depression",
    "Asthma",
    "Arthritis",
    "Migraine",
    "Epilepsy",
    "Influenza",
    "Insomnia",
    "Hyperlipidaemia",
    "Pain",
    "Acne",
];
const DRUGS: [&str; 12] = [
    SIGNAL_DRUG,
    "ASPIRIN",
    "METFORMIN",
    "LISINOPRIL",
    "ATORVASTATIN",
    "SERTRALINE",
    "IBUPROFEN",
    "OMEPRAZOLE",
    "LEVOTHYROXINE",
    "AMOXICILLIN",
    "PREDNISONE",
    "WARFARIN",
];
const REACTIONS: [&str; 12] = [
    "NAUSEA",
    "HEADACHE",
    "DIZZINESS",
    "RASH",
    "FATIGUE",
    "VOMITING",
    "DIARRHOEA",
    "PRURITUS",
    "DYSPNOEA",
    "INSOMNIA",
    "ARTHRALGIA",
    "OEDEMA",
];

const AGE_BANDS: [(&str, &str, f64); 6] = [
    ("Child", "Non-adult", 0.06),
    ("Adolescent", "Non-adult", 0.08),
    ("Young Adult", "Adult", 0.24),
    ("Middle-aged", "Adult", 0.30),
    ("Senior", "Elderly", 0.20),
    ("Aged", "Elderly", 0.12),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub releases: usize,
    pub records_per_release: usize,
    /// Probability that a report is a follow-up of an earlier case.
    pub followup_ratio: f64,
    pub female_ratio: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    /// Probability that a report carries its gender's linked indication.
    pub gender_linked_rate: f64,
    /// Probability that an elderly report carries an elderly-linked indication.
    pub elderly_linked_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            releases: 3,
            records_per_release: 5000,
            followup_ratio: 0.2,
            female_ratio: 0.5,
            weight_min: 40.0,
            weight_max: 120.0,
            gender_linked_rate: 0.2,
            elderly_linked_rate: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if self.releases == 0 || self.records_per_release == 0 {
            return Err(Error::Argument("releases and records_per_release must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.followup_ratio) {
            return Err(Error::Argument(format!("followup_ratio {} not in [0, 1)", self.followup_ratio)));
        }
        if !frac(self.female_ratio) || !frac(self.gender_linked_rate) || !frac(self.elderly_linked_rate) {
            return Err(Error::Argument("ratios and rates must lie in [0, 1]".into()));
        }
        if !(self.weight_min < self.weight_max) || !self.weight_min.is_finite() || !self.weight_max.is_finite() {
            return Err(Error::Argument("weight_min must be below weight_max".into()));
        }
        Ok(())
    }
}

/// A generated series with its schema and background rules.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSeries {
    pub schema: QidSchema,
    pub releases: Vec<Vec<Record>>,
    pub background: Vec<BackgroundRule>,
}

fn spec(name: &str, parent: Option<&str>) -> NodeSpec {
    NodeSpec {
        name: name.into(),
        parent: parent.map(Into::into),
    }
}

pub fn gender_taxonomy() -> TaxonomyTree {
    TaxonomyTree::from_nodes(
        "Gender",
        &[spec("Any", None), spec("Male", Some("Any")), spec("Female", Some("Any"))],
    )
    .expect("static taxonomy")
}

pub fn age_taxonomy() -> TaxonomyTree {
    let mut nodes = vec![
        spec("Any", None),
        spec("Non-adult", Some("Any")),
        spec("Adult", Some("Any")),
        spec("Elderly", Some("Any")),
    ];
    nodes.extend(AGE_BANDS.iter().map(|&(leaf, parent, _)| spec(leaf, Some(parent))));
    TaxonomyTree::from_nodes("Age", &nodes).expect("static taxonomy")
}

/// Gender and Age categorical, Weight in [30, 150], sensitive Drug,
/// Indication and Reaction.
pub fn synth_schema(cfg: &SynthConfig) -> Result<QidSchema> {
    QidSchema::new(
        vec![
            CategoricalAttr {
                name: "Gender".into(),
                tree: Arc::new(gender_taxonomy()),
            },
            CategoricalAttr {
                name: "Age".into(),
                tree: Arc::new(age_taxonomy()),
            },
        ],
        vec![NumericAttr {
            name: "Weight".into(),
            min: cfg.weight_min.min(30.0),
            max: cfg.weight_max.max(150.0),
        }],
        vec!["Drug".into(), "Indication".into(), "Reaction".into()],
    )
}

/// Gender-linked and elderly-linked indications as background rules.
pub fn synth_background(schema: &QidSchema) -> Result<Vec<BackgroundRule>> {
    let gender = &schema.categorical[0].tree;
    let age = &schema.categorical[1].tree;
    let mut rules = Vec::new();
    let mut push = |values: &[&str], attr: usize, node| {
        rules.extend(values.iter().map(|v| BackgroundRule {
            value: (*v).to_owned(),
            constraint: QidConstraint::Categorical { attr, node },
        }))
    };
    push(&FEMALE_INDICATIONS, 0, gender.node("Female")?);
    push(&MALE_INDICATIONS, 0, gender.node("Male")?);
    push(&ELDERLY_INDICATIONS, 1, age.node("Elderly")?);
    Ok(rules)
}

struct Person {
    case_id: String,
    female: bool,
    age_band: usize,
    weight: f64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn set(values: impl IntoIterator<Item = &'static str>) -> BTreeSet<String> {
    values.into_iter().map(str::to_owned).collect()
}

fn pick(rng: &mut ChaCha20Rng, pool: &[&'static str]) -> &'static str {
    pool[rng.gen_range(0..pool.len())]
}

fn report(rng: &mut ChaCha20Rng, p: &Person, cfg: &SynthConfig, schema: &QidSchema) -> Result<Record> {
    let gender = &schema.categorical[0].tree;
    let age = &schema.categorical[1].tree;
    let elderly = AGE_BANDS[p.age_band].1 == "Elderly";

    let mut drugs = vec![pick(rng, &DRUGS)];
    if rng.gen_bool(0.3) {
        drugs.push(pick(rng, &DRUGS));
    }

    let indication = if rng.gen_bool(cfg.gender_linked_rate) {
        pick(rng, if p.female { &FEMALE_INDICATIONS } else { &MALE_INDICATIONS })
    } else if elderly && rng.gen_bool(cfg.elderly_linked_rate) {
        pick(rng, &ELDERLY_INDICATIONS)
    } else {
        pick(rng, &COMMON_INDICATIONS)
    };

    let signal_rate = if drugs.contains(&SIGNAL_DRUG) { 0.35 } else { 0.03 };
    let mut reactions = vec![if rng.gen_bool(signal_rate) { SIGNAL_REACTION } else { pick(rng, &REACTIONS) }];
    if rng.gen_bool(0.3) {
        reactions.push(pick(rng, &REACTIONS));
    }

    Ok(Record {
        case_id: p.case_id.clone(),
        cat: vec![
            gender.node(if p.female { "Female" } else { "Male" })?,
            age.node(AGE_BANDS[p.age_band].0)?,
        ],
        num: vec![p.weight],
        sensitive: vec![set(drugs), set([indication]), set(reactions)],
    })
}

/// Generates the series. Each report of release `i > 1` is, with
/// probability `followup_ratio`, a follow-up of a case drawn uniformly from
/// earlier releases: same gender and age band, weight within 1 unit.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthSeries> {
    cfg.validate()?;
    let schema = synth_schema(cfg)?;
    let background = synth_background(&schema)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let bands = WeightedIndex::new(AGE_BANDS.iter().map(|b| b.2)).expect("positive weights");

    let mut people: Vec<Person> = Vec::new();
    let mut releases = Vec::with_capacity(cfg.releases);
    for _ in 0..cfg.releases {
        let prior = people.len();
        let mut rows = Vec::with_capacity(cfg.records_per_release);
        for _ in 0..cfg.records_per_release {
            let followup = prior > 0 && rng.gen_bool(cfg.followup_ratio);
            let record = if followup {
                let base = &people[rng.gen_range(0..prior)];
                let p = Person {
                    case_id: base.case_id.clone(),
                    female: base.female,
                    age_band: base.age_band,
                    weight: round1((base.weight + rng.gen_range(-1.0..=1.0)).clamp(cfg.weight_min, cfg.weight_max)),
                };
                report(&mut rng, &p, cfg, &schema)?
            } else {
                let p = Person {
                    case_id: format!("C{:07}", people.len() + 1),
                    female: rng.gen_bool(cfg.female_ratio),
                    age_band: bands.sample(&mut rng),
                    weight: round1(rng.gen_range(cfg.weight_min..=cfg.weight_max)),
                };
                let r = report(&mut rng, &p, cfg, &schema)?;
                people.push(p);
                r
            };
            rows.push(record);
        }
        releases.push(rows);
    }
    Ok(SynthSeries {
        schema,
        releases,
        background,
    })
}

/// Writes `taxonomy/` (schema and taxonomies), `D_<i>.csv` raw releases,
/// `background.json` and a `theta.json` with default 0.4.
pub fn write_series(dir: &Path, series: &SynthSeries) -> Result<()> {
    io::store_schema(&dir.join(io::HISTORY_TAXONOMY_DIR), &series.schema)?;
    for (i, rows) in series.releases.iter().enumerate() {
        io::store_records(&dir.join(format!("D_{}.csv", i + 1)), rows, &series.schema)?;
    }
    io::write_atomic(
        &dir.join("background.json"),
        &io::background_to_json(&series.background, &series.schema)?,
    )?;
    io::write_atomic(&dir.join("theta.json"), &io::theta_to_json(&Theta::uniform(0.4)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(seed: u64, followup_ratio: f64) -> SynthConfig {
        SynthConfig {
            releases: 3,
            records_per_release: 400,
            followup_ratio,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_followups_gives_unique_cases() {
        let s = synth_generate(&small(3, 0.0)).unwrap();
        let ids: Vec<&str> = s.releases.iter().flatten().map(|r| r.case_id.as_str()).collect();
        let unique: HashSet<&str> = ids.iter().copied().collect();
        assert_eq!(ids.len(), unique.len());
    }

    #[test]
    fn same_seed_same_series() {
        assert_eq!(synth_generate(&small(9, 0.2)).unwrap(), synth_generate(&small(9, 0.2)).unwrap());
        assert_ne!(synth_generate(&small(9, 0.2)).unwrap(), synth_generate(&small(10, 0.2)).unwrap());
    }

    #[test]
    fn gender_linked_values_follow_gender() {
        let s = synth_generate(&small(5, 0.2)).unwrap();
        let gender = &s.schema.categorical[0].tree;
        let female = gender.node("Female").unwrap();
        for r in s.releases.iter().flatten() {
            let ind = r.sensitive[1].iter().next().unwrap().as_str();
            if FEMALE_INDICATIONS.contains(&ind) {
                assert_eq!(r.cat[0], female);
            }
            if MALE_INDICATIONS.contains(&ind) {
                assert_ne!(r.cat[0], female);
            }
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(synth_generate(&SynthConfig { followup_ratio: 1.0, ..small(1, 0.0) }).is_err());
        assert!(synth_generate(&SynthConfig { releases: 0, ..small(1, 0.0) }).is_err());
    }
}
