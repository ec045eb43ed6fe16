//! Records, super records, releases and the configuration shared by the
//! anonymization pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, TaxonomyTree};

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalAttr {
    pub name: String,
    pub tree: Arc<TaxonomyTree>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NumericAttr {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl NumericAttr {
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Attribute layout of a table. Values in records are stored positionally in
/// the order of each list.
#[derive(Clone, Debug, PartialEq)]
pub struct QidSchema {
    pub categorical: Vec<CategoricalAttr>,
    pub numeric: Vec<NumericAttr>,
    pub sensitive: Vec<String>,
}

impl QidSchema {
    pub fn new(
        categorical: Vec<CategoricalAttr>,
        numeric: Vec<NumericAttr>,
        sensitive: Vec<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let names = categorical
            .iter()
            .map(|a| &a.name)
            .chain(numeric.iter().map(|a| &a.name))
            .chain(sensitive.iter());
        for name in names {
            if name.is_empty() || name == CASE_ID_COLUMN || name == GROUP_COLUMN {
                return Err(Error::Schema(format!("reserved or empty attribute name `{name}`")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("attribute `{name}` declared twice")));
            }
        }
        for a in &numeric {
            if !(a.min < a.max) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::Schema(format!(
                    "numeric attribute `{}` needs finite bounds with min < max",
                    a.name
                )));
            }
        }
        Ok(Self {
            categorical,
            numeric,
            sensitive,
        })
    }

    /// Number of quasi-identifier attributes, categorical plus numeric.
    pub fn qid_count(&self) -> usize {
        self.categorical.len() + self.numeric.len()
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical.iter().position(|a| a.name == name)
    }

    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric.iter().position(|a| a.name == name)
    }

    pub fn sensitive_index(&self, name: &str) -> Option<usize> {
        self.sensitive.iter().position(|a| a == name)
    }

    /// Column header in output order.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.categorical
            .iter()
            .map(|a| a.name.as_str())
            .chain(self.numeric.iter().map(|a| a.name.as_str()))
            .chain(self.sensitive.iter().map(String::as_str))
    }
}

pub const CASE_ID_COLUMN: &str = "case_id";
pub const GROUP_COLUMN: &str = "gid";

pub type SensitiveSet = BTreeSet<String>;

/// One adverse-event report as ingested.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub case_id: String,
    pub cat: Vec<NodeId>,
    pub num: Vec<f64>,
    pub sensitive: Vec<SensitiveSet>,
}

impl Eq for Record {}

/// A published numeric value: a (possibly noised) point or a generalized range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NumValue {
    Point(f64),
    Interval { lo: f64, hi: f64 },
}

impl NumValue {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if hi < lo || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(NumValue::Interval { lo, hi })
    }

    pub fn bounds(self) -> (f64, f64) {
        match self {
            NumValue::Point(v) => (v, v),
            NumValue::Interval { lo, hi } => (lo, hi),
        }
    }

    pub fn midpoint(self) -> f64 {
        let (lo, hi) = self.bounds();
        lo + (hi - lo) / 2.0
    }

    /// Collapses equal endpoints to a point.
    pub fn from_bounds(lo: f64, hi: f64) -> Self {
        if lo == hi {
            NumValue::Point(lo)
        } else {
            NumValue::Interval { lo, hi }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Ok(v) = s.parse::<f64>() {
            return v.is_finite().then_some(NumValue::Point(v));
        }
        // "L-U"; the separator is the first '-' that follows a digit or '.'.
        let bytes = s.as_bytes();
        let sep = (1..bytes.len())
            .find(|&i| bytes[i] == b'-' && (bytes[i - 1].is_ascii_digit() || bytes[i - 1] == b'.'))?;
        let lo = s[..sep].trim().parse::<f64>().ok()?;
        let hi = s[sep + 1..].trim().parse::<f64>().ok()?;
        NumValue::interval(lo, hi).ok()
    }
}

impl fmt::Display for NumValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumValue::Point(v) => write!(f, "{v}"),
            NumValue::Interval { lo, hi } => write!(f, "{lo}-{hi}"),
        }
    }
}

/// All reports sharing one case id, merged.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperRecord {
    pub case_id: String,
    pub cat: Vec<NodeId>,
    pub num: Vec<NumValue>,
    pub sensitive: Vec<SensitiveSet>,
    pub constituents: Vec<Record>,
}

impl SuperRecord {
    /// Reverses the merge, yielding the original reports.
    pub fn expand(&self) -> impl Iterator<Item = &Record> {
        self.constituents.iter()
    }
}

/// A record of an anonymized release.
#[derive(Clone, Debug, PartialEq)]
pub struct PublishedRecord {
    pub case_id: String,
    pub gid: Option<u32>,
    pub cat: Vec<NodeId>,
    pub num: Vec<NumValue>,
    pub sensitive: Vec<SensitiveSet>,
}

/// One anonymized table `R_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Release {
    pub index: u32,
    pub records: Vec<PublishedRecord>,
}

impl Release {
    pub fn case_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.case_id.as_str()).collect()
    }

    /// Row indices per case id.
    pub fn rows_by_case(&self) -> HashMap<&str, Vec<usize>> {
        let mut map: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.case_id.as_str()).or_default().push(i);
        }
        map
    }
}

/// Previously published releases, ordered by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReleaseHistory {
    releases: Vec<Release>,
}

impl ReleaseHistory {
    pub fn new(mut releases: Vec<Release>) -> Result<Self> {
        releases.sort_by_key(|r| r.index);
        if let Some(w) = releases.windows(2).find(|w| w[0].index == w[1].index) {
            return Err(Error::DataIntegrity(format!("release index {} appears twice", w[0].index)));
        }
        Ok(Self { releases })
    }

    pub fn releases(&self) -> &[Release] {
        &self.releases
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub fn next_index(&self) -> u32 {
        self.releases.last().map_or(1, |r| r.index + 1)
    }

    pub fn push(&mut self, release: Release) -> Result<()> {
        if release.index < self.next_index() {
            return Err(Error::DataIntegrity(format!(
                "release {} is not newer than the history",
                release.index
            )));
        }
        self.releases.push(release);
        Ok(())
    }

    /// The most recent `lifespan` releases, oldest first (all when `None`).
    pub fn window(&self, lifespan: Option<usize>) -> &[Release] {
        match lifespan {
            Some(x) if x < self.releases.len() => &self.releases[self.releases.len() - x..],
            _ => &self.releases,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Num,
    All,
    Baseline,
}

impl Variant {
    pub fn is_randomized(self) -> bool {
        !matches!(self, Variant::Baseline)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Num => "num",
            Variant::All => "all",
            Variant::Baseline => "baseline",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "num" => Ok(Variant::Num),
            "all" => Ok(Variant::All),
            "baseline" => Ok(Variant::Baseline),
            other => Err(Error::Argument(format!("unknown variant `{other}`"))),
        }
    }
}

/// Per-sensitive-value confidence thresholds with a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub default: f64,
    pub per_value: BTreeMap<String, f64>,
}

impl Theta {
    pub fn uniform(default: f64) -> Result<Self> {
        Self::new(default, BTreeMap::new())
    }

    pub fn new(default: f64, per_value: BTreeMap<String, f64>) -> Result<Self> {
        let ok = |t: f64| t > 0.0 && t <= 1.0;
        if !ok(default) {
            return Err(Error::Argument(format!("default threshold {default} not in (0, 1]")));
        }
        if let Some((v, t)) = per_value.iter().find(|(_, &t)| !ok(t)) {
            return Err(Error::Argument(format!("threshold {t} for `{v}` not in (0, 1]")));
        }
        Ok(Self { default, per_value })
    }

    pub fn get(&self, value: &str) -> f64 {
        self.per_value.get(value).copied().unwrap_or(self.default)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyConfig {
    pub k: usize,
    pub theta: Theta,
    pub epsilon: f64,
    /// How many recent releases count when deciding whether a case is old.
    pub lifespan: Option<usize>,
    pub variant: Variant,
    pub seed: u64,
}

impl PrivacyConfig {
    pub fn new(k: usize, theta: Theta, epsilon: f64, variant: Variant, seed: u64) -> Result<Self> {
        let cfg = Self {
            k,
            theta,
            epsilon,
            lifespan: None,
            variant,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_lifespan(mut self, lifespan: Option<usize>) -> Result<Self> {
        self.lifespan = lifespan;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Argument(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Argument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.lifespan == Some(0) {
            return Err(Error::Argument("lifespan must be positive".into()));
        }
        Theta::new(self.theta.default, self.theta.per_value.clone()).map(|_| ())
    }
}

/// Combines same-case reports into super records, in order of first
/// appearance. Exact duplicate rows collapse silently.
pub fn merge_super_records(records: &[Record], schema: &QidSchema) -> Result<Vec<SuperRecord>> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_case: HashMap<&str, Vec<&Record>> = HashMap::new();
    for r in dedup(records) {
        check_shape(r, schema)?;
        by_case
            .entry(r.case_id.as_str())
            .or_insert_with(|| {
                order.push(r.case_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    order
        .into_iter()
        .map(|case| {
            let rows = &by_case[case];
            let cat = schema
                .categorical
                .iter()
                .enumerate()
                .map(|(a, attr)| crate::taxonomy::generalize_lca(rows.iter().map(|r| r.cat[a]), &attr.tree))
                .collect::<Result<Vec<_>>>()?;
            let num = (0..schema.numeric.len())
                .map(|a| {
                    let lo = rows.iter().map(|r| r.num[a]).fold(f64::INFINITY, f64::min);
                    let hi = rows.iter().map(|r| r.num[a]).fold(f64::NEG_INFINITY, f64::max);
                    NumValue::from_bounds(lo, hi)
                })
                .collect();
            let sensitive = (0..schema.sensitive.len())
                .map(|a| rows.iter().flat_map(|r| r.sensitive[a].iter().cloned()).collect())
                .collect();
            Ok(SuperRecord {
                case_id: case.to_owned(),
                cat,
                num,
                sensitive,
                constituents: rows.iter().map(|&r| r.clone()).collect(),
            })
        })
        .collect()
}

/// Drops rows identical to an earlier row, keeping input order.
pub fn dedup(records: &[Record]) -> Vec<&Record> {
    let mut out: Vec<&Record> = Vec::with_capacity(records.len());
    let mut by_case: HashMap<&str, Vec<usize>> = HashMap::new();
    for r in records {
        let seen = by_case.entry(r.case_id.as_str()).or_default();
        if seen.iter().any(|&i| out[i] == r) {
            continue;
        }
        seen.push(out.len());
        out.push(r);
    }
    out
}

fn check_shape(r: &Record, schema: &QidSchema) -> Result<()> {
    if r.cat.len() != schema.categorical.len()
        || r.num.len() != schema.numeric.len()
        || r.sensitive.len() != schema.sensitive.len()
    {
        return Err(Error::Schema(format!(
            "record for case `{}` does not match the schema layout",
            r.case_id
        )));
    }
    for (v, attr) in r.cat.iter().zip(&schema.categorical) {
        if v.index() >= attr.tree.len() {
            return Err(Error::Schema(format!(
                "case `{}`: node #{} outside taxonomy `{}`",
                r.case_id, v.0, attr.name
            )));
        }
    }
    Ok(())
}

/// Case ids of super records split into new cases and old cases.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CaseSplit {
    pub new_cases: BTreeSet<String>,
    pub old_cases: BTreeSet<String>,
}

impl CaseSplit {
    pub fn is_new(&self, case_id: &str) -> bool {
        self.new_cases.contains(case_id)
    }
}

/// A case is old when it appears in any of the most recent `lifespan`
/// releases of the history, new otherwise.
pub fn classify_cases(
    super_records: &[SuperRecord],
    history: &ReleaseHistory,
    lifespan: Option<usize>,
) -> CaseSplit {
    let seen: HashSet<&str> = history
        .window(lifespan)
        .iter()
        .flat_map(|r| r.records.iter().map(|p| p.case_id.as_str()))
        .collect();
    let mut split = CaseSplit::default();
    for s in super_records {
        if seen.contains(s.case_id.as_str()) {
            split.old_cases.insert(s.case_id.clone());
        } else {
            split.new_cases.insert(s.case_id.clone());
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::NodeSpec;

    fn schema() -> QidSchema {
        let gender = TaxonomyTree::from_nodes(
            "Gender",
            &[
                NodeSpec { name: "Any".into(), parent: None },
                NodeSpec { name: "Male".into(), parent: Some("Any".into()) },
                NodeSpec { name: "Female".into(), parent: Some("Any".into()) },
            ],
        )
        .unwrap();
        QidSchema::new(
            vec![CategoricalAttr { name: "Gender".into(), tree: Arc::new(gender) }],
            vec![NumericAttr { name: "Weight".into(), min: 0.0, max: 200.0 }],
            vec!["Disease".into()],
        )
        .unwrap()
    }

    fn rec(s: &QidSchema, case: &str, gender: &str, w: f64, dis: &[&str]) -> Record {
        Record {
            case_id: case.into(),
            cat: vec![s.categorical[0].tree.node(gender).unwrap()],
            num: vec![w],
            sensitive: vec![dis.iter().map(|d| d.to_string()).collect()],
        }
    }

    fn published(case: &str) -> PublishedRecord {
        PublishedRecord {
            case_id: case.into(),
            gid: None,
            cat: vec![NodeId(0)],
            num: vec![NumValue::Point(0.0)],
            sensitive: vec![SensitiveSet::new()],
        }
    }

    fn release(index: u32, cases: &[&str]) -> Release {
        Release { index, records: cases.iter().map(|c| published(c)).collect() }
    }

    #[test]
    fn same_case_reports_union_sensitive_values() {
        let s = schema();
        let rows = vec![rec(&s, "7", "Male", 70.0, &["Diabetes"]), rec(&s, "7", "Male", 70.0, &["Flu"])];
        let merged = merge_super_records(&rows, &s).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].sensitive[0], SensitiveSet::from(["Diabetes".into(), "Flu".into()]));
        assert_eq!(merged[0].constituents.len(), 2);
    }

    #[test]
    fn single_row_is_identity() {
        let s = schema();
        let rows = vec![rec(&s, "1", "Female", 61.5, &["HIV"])];
        let merged = merge_super_records(&rows, &s).unwrap();
        assert_eq!(merged[0].cat, rows[0].cat);
        assert_eq!(merged[0].num, vec![NumValue::Point(61.5)]);
        assert_eq!(merged[0].sensitive, rows[0].sensitive);
    }

    #[test]
    fn conflicting_values_widen() {
        let s = schema();
        let rows = vec![rec(&s, "5", "Male", 60.0, &["A"]), rec(&s, "5", "Female", 70.0, &["B"])];
        let merged = merge_super_records(&rows, &s).unwrap();
        assert_eq!(merged[0].num, vec![NumValue::Interval { lo: 60.0, hi: 70.0 }]);
        assert_eq!(s.categorical[0].tree.node_name(merged[0].cat[0]), "Any");
    }

    #[test]
    fn exact_duplicates_are_dropped() {
        let s = schema();
        let r = rec(&s, "3", "Male", 60.0, &["A"]);
        let merged = merge_super_records(&[r.clone(), r.clone()], &s).unwrap();
        assert_eq!(merged[0].constituents, vec![r]);
    }

    #[test]
    fn layout_mismatch_is_a_schema_error() {
        let s = schema();
        let mut r = rec(&s, "3", "Male", 60.0, &["A"]);
        r.num.push(1.0);
        assert!(matches!(merge_super_records(&[r], &s), Err(Error::Schema(_))));
    }

    #[test]
    fn classify_against_history() {
        let s = schema();
        let supers = merge_super_records(
            &[rec(&s, "1", "Male", 1.0, &[]), rec(&s, "12", "Male", 1.0, &[])],
            &s,
        )
        .unwrap();
        let history = ReleaseHistory::new(vec![release(1, &["1", "2"]), release(2, &["1", "3"])]).unwrap();
        let split = classify_cases(&supers, &history, None);
        assert!(split.new_cases.contains("12"));
        assert!(split.old_cases.contains("1"));

        let empty = classify_cases(&supers, &ReleaseHistory::default(), None);
        assert_eq!(empty.new_cases.len(), 2);
        assert!(empty.old_cases.is_empty());
    }

    #[test]
    fn lifespan_limits_the_scan() {
        let s = schema();
        let supers = merge_super_records(&[rec(&s, "2", "Male", 1.0, &[])], &s).unwrap();
        let history = ReleaseHistory::new(vec![release(1, &["2"]), release(2, &["9"])]).unwrap();
        assert!(classify_cases(&supers, &history, Some(1)).is_new("2"));
        assert!(!classify_cases(&supers, &history, Some(2)).is_new("2"));
    }

    #[test]
    fn num_value_text_forms() {
        assert_eq!(NumValue::parse("72"), Some(NumValue::Point(72.0)));
        assert_eq!(NumValue::parse("20-30"), Some(NumValue::Interval { lo: 20.0, hi: 30.0 }));
        assert_eq!(NumValue::parse("-5--3"), Some(NumValue::Interval { lo: -5.0, hi: -3.0 }));
        assert_eq!(NumValue::parse("-4.5"), Some(NumValue::Point(-4.5)));
        assert_eq!(NumValue::parse("30-20"), None);
        assert_eq!(NumValue::parse("abc"), None);
        assert_eq!(NumValue::Interval { lo: 20.0, hi: 30.5 }.to_string(), "20-30.5");
    }

    #[test]
    fn config_validation() {
        let theta = Theta::uniform(0.5).unwrap();
        assert!(PrivacyConfig::new(1, theta.clone(), 1.0, Variant::Num, 0).is_err());
        assert!(PrivacyConfig::new(2, theta.clone(), 0.0, Variant::Num, 0).is_err());
        assert!(Theta::uniform(0.0).is_err());
        assert!(Theta::uniform(1.5).is_err());
        let t = Theta::new(0.4, BTreeMap::from([("HIV".to_string(), 0.2)])).unwrap();
        assert_eq!(t.get("HIV"), 0.2);
        assert_eq!(t.get("Flu"), 0.4);
    }
}
