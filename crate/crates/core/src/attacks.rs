//! Cross-release linkage attacks and the series auditor.
//!
//! An attacker knows a target's raw quasi-identifiers and the release where
//! the target's report is published. The candidate set (CI) holds the cases of
//! that release's QID-groups whose published QIDs cover the target. Clones of the same case
//! in other releases then prune the CI:
//!
//! * backward: drop candidates with an earlier clone that does not cover the target;
//! * forward: drop candidates with a later clone that does not cover the target;
//! * latest: when the target first appears in release `i`, drop candidates seen earlier.
//!
//! Numeric coverage of noised point values uses a tolerance `tau`, a fixed
//! fraction of the attribute's schema range.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{NumValue, PublishedRecord, QidSchema, Record, ReleaseHistory, Theta};
use crate::taxonomy::NodeId;

pub const DEFAULT_COVERAGE_FRACTION: f64 = 0.05;

/// A sensitive value implying a constraint on the holder's QID, such as
/// "Breast Cancer implies Gender under Female".
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundRule {
    pub value: String,
    pub constraint: QidConstraint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QidConstraint {
    Categorical { attr: usize, node: NodeId },
    Numeric { attr: usize, min: f64, max: f64 },
}

impl BackgroundRule {
    /// Whether a person with the target's QID could hold this rule's value.
    pub fn consistent_with(&self, target: &AttackTarget, schema: &QidSchema) -> bool {
        match self.constraint {
            QidConstraint::Categorical { attr, node } => schema.categorical[attr].tree.covers(node, target.cat[attr]),
            QidConstraint::Numeric { attr, min, max } => (min..=max).contains(&target.num[attr]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    /// The target's report is published in the known release.
    InRelease,
    /// The target's case first appears in the known release.
    FirstAppearsIn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackTarget {
    pub cat: Vec<NodeId>,
    pub num: Vec<f64>,
    pub known_release: u32,
    pub knowledge: KnowledgeKind,
}

impl AttackTarget {
    pub fn new(cat: Vec<NodeId>, num: Vec<f64>, known_release: u32, knowledge: KnowledgeKind, schema: &QidSchema) -> Result<Self> {
        if cat.len() != schema.categorical.len() || num.len() != schema.numeric.len() {
            return Err(Error::Argument("target QID does not match the schema".into()));
        }
        for (v, a) in cat.iter().zip(&schema.categorical) {
            if v.index() >= a.tree.len() {
                return Err(Error::Argument(format!("target value outside taxonomy `{}`", a.name)));
            }
        }
        Ok(Self {
            cat,
            num,
            known_release,
            knowledge,
        })
    }

    /// Builds a target from named values, e.g. `[("Gender", "Male"), ("Age", "37")]`.
    pub fn from_named(pairs: &[(&str, &str)], known_release: u32, knowledge: KnowledgeKind, schema: &QidSchema) -> Result<Self> {
        let mut cat = vec![None; schema.categorical.len()];
        let mut num = vec![None; schema.numeric.len()];
        for &(attr, value) in pairs {
            if let Some(a) = schema.categorical_index(attr) {
                cat[a] = Some(schema.categorical[a].tree.node(value)?);
            } else if let Some(a) = schema.numeric_index(attr) {
                num[a] = Some(value.parse::<f64>().map_err(|_| Error::Argument(format!("`{value}` is not a number")))?);
            } else {
                return Err(Error::Argument(format!("`{attr}` is not a QID attribute")));
            }
        }
        let missing = || Error::Argument("target must give every QID attribute".into());
        Self::new(
            cat.into_iter().map(|v| v.ok_or_else(missing)).collect::<Result<_>>()?,
            num.into_iter().map(|v| v.ok_or_else(missing)).collect::<Result<_>>()?,
            known_release,
            knowledge,
            schema,
        )
    }

    pub fn from_record(r: &Record, known_release: u32, knowledge: KnowledgeKind) -> Self {
        Self {
            cat: r.cat.clone(),
            num: r.num.clone(),
            known_release,
            knowledge,
        }
    }
}

/// Published QIDs of one group: its distinct categorical tuples and, per
/// numeric attribute, the hull of its published values.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupEnvelope {
    pub cats: Vec<Vec<NodeId>>,
    /// `(lo, hi, has_points)` per numeric attribute.
    pub num: Vec<(f64, f64, bool)>,
}

impl GroupEnvelope {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a PublishedRecord>) -> Self {
        let mut cats: Vec<Vec<NodeId>> = Vec::new();
        let mut num: Vec<(f64, f64, bool)> = Vec::new();
        for r in rows {
            if !cats.contains(&r.cat) {
                cats.push(r.cat.clone());
            }
            if num.is_empty() {
                num = vec![(f64::INFINITY, f64::NEG_INFINITY, false); r.num.len()];
            }
            for (h, v) in num.iter_mut().zip(&r.num) {
                let (lo, hi) = v.bounds();
                h.0 = h.0.min(lo);
                h.1 = h.1.max(hi);
                h.2 |= matches!(v, NumValue::Point(_));
            }
        }
        Self { cats, num }
    }
}

/// Coverage test of published QIDs against a raw target.
#[derive(Clone, Debug)]
pub struct Coverage<'s> {
    schema: &'s QidSchema,
    tau: Vec<f64>,
}

impl<'s> Coverage<'s> {
    pub fn new(schema: &'s QidSchema, coverage_fraction: f64) -> Result<Self> {
        if !(coverage_fraction >= 0.0 && coverage_fraction.is_finite()) {
            return Err(Error::Argument(format!("coverage fraction {coverage_fraction} must be >= 0")));
        }
        let tau = schema.numeric.iter().map(|a| a.range() * coverage_fraction).collect();
        Ok(Self { schema, tau })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    fn cat_covers(&self, cat: &[NodeId], target: &AttackTarget) -> bool {
        cat.iter()
            .zip(&target.cat)
            .zip(&self.schema.categorical)
            .all(|((&p, &t), a)| a.tree.covers(p, t))
    }

    /// Categorical: the published node is the target's value or an ancestor.
    /// Numeric: an interval contains the value; a point lies within `tau`.
    pub fn covers(&self, published: &PublishedRecord, target: &AttackTarget) -> bool {
        self.cat_covers(&published.cat, target)
            && published
                .num
                .iter()
                .zip(&target.num)
                .zip(&self.tau)
                .all(|((p, &t), &tau)| match *p {
                    NumValue::Interval { lo, hi } => lo <= t && t <= hi,
                    NumValue::Point(v) => (v - t).abs() <= tau,
                })
    }

    /// A group covers the target when one of its categorical tuples does
    /// and each numeric value lies in the hull of the group's published
    /// values, widened by `tau` when the group holds noised points.
    pub fn covers_group(&self, g: &GroupEnvelope, target: &AttackTarget) -> bool {
        g.cats.iter().any(|c| self.cat_covers(c, target))
            && g.num
                .iter()
                .zip(&target.num)
                .zip(&self.tau)
                .all(|((&(lo, hi, points), &t), &tau)| {
                    let slack = if points { tau } else { 0.0 };
                    lo - slack <= t && t <= hi + slack
                })
    }
}

/// Splits published rows into QID-groups by `gid`; rows without a group id
/// form singleton groups. Returns row indices per group, in first-seen order.
pub fn published_groups(rows: &[PublishedRecord]) -> Vec<Vec<usize>> {
    let mut slot: HashMap<u32, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        match r.gid {
            Some(g) => match slot.get(&g) {
                Some(&s) => groups[s].push(i),
                None => {
                    slot.insert(g, groups.len());
                    groups.push(vec![i]);
                }
            },
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Case ids of the release's QID-groups that cover the target. The attacker
/// cannot tell members of a covering group apart, so every member is a
/// candidate.
pub fn candidate_set(target: &AttackTarget, release: &[PublishedRecord], cov: &Coverage<'_>) -> BTreeSet<String> {
    published_groups(release)
        .into_iter()
        .filter(|rows| cov.covers_group(&GroupEnvelope::of(rows.iter().map(|&i| &release[i])), target))
        .flatten()
        .map(|i| release[i].case_id.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Backward,
    Forward,
    Latest,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Backward => "backward",
            AttackKind::Forward => "forward",
            AttackKind::Latest => "latest",
        })
    }
}

/// A pruned candidate set with the sensitive values of its members in the
/// attacked release.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub attack: AttackKind,
    pub candidates: BTreeSet<String>,
    /// Number of candidates holding each sensitive value.
    pub value_counts: BTreeMap<String, usize>,
}

impl AttackResult {
    /// Values held by every candidate.
    pub fn common_values(&self) -> BTreeSet<&str> {
        let n = self.candidates.len();
        self.value_counts
            .iter()
            .filter(|&(_, &c)| n > 0 && c == n)
            .map(|(v, _)| v.as_str())
            .collect()
    }

    pub fn frequency(&self, value: &str) -> f64 {
        match self.candidates.len() {
            0 => 0.0,
            n => self.value_counts.get(value).copied().unwrap_or(0) as f64 / n as f64,
        }
    }
}

/// Per-release index over interned case and value ids.
struct IndexedRelease {
    index: u32,
    envelopes: Vec<GroupEnvelope>,
    /// Sorted case ids of each group.
    members: Vec<Vec<u32>>,
    /// Groups holding each case; empty when the case is absent.
    case_groups: Vec<Vec<u32>>,
    /// Sorted value ids each case holds in this release.
    case_values: Vec<Vec<u32>>,
}

impl IndexedRelease {
    fn present(&self, case: u32) -> bool {
        !self.case_groups[case as usize].is_empty()
    }
}

/// A release series prepared for attacks.
pub struct Series<'r> {
    releases: Vec<IndexedRelease>,
    coverage: Coverage<'r>,
    case_names: Vec<&'r str>,
    case_ids: HashMap<&'r str, u32>,
    value_names: Vec<&'r str>,
    value_ids: HashMap<&'r str, u32>,
    /// Sorted value ids of each case across the whole series.
    series_values: Vec<Vec<u32>>,
}

fn intern<'r>(ids: &mut HashMap<&'r str, u32>, names: &mut Vec<&'r str>, s: &'r str) -> u32 {
    *ids.entry(s).or_insert_with(|| {
        names.push(s);
        (names.len() - 1) as u32
    })
}

/// Raw ids of a pruned candidate set, sorted.
struct Pruned {
    attack: AttackKind,
    at: usize,
    cases: Vec<u32>,
}

impl<'r> Series<'r> {
    pub fn new(history: &'r ReleaseHistory, schema: &'r QidSchema, coverage_fraction: f64) -> Result<Self> {
        let coverage = Coverage::new(schema, coverage_fraction)?;
        let mut case_ids = HashMap::new();
        let mut case_names = Vec::new();
        let mut value_ids = HashMap::new();
        let mut value_names = Vec::new();
        for r in history.releases() {
            for p in &r.records {
                intern(&mut case_ids, &mut case_names, &p.case_id);
                for v in p.sensitive.iter().flatten() {
                    intern(&mut value_ids, &mut value_names, v);
                }
            }
        }
        let n = case_names.len();
        let mut series_values: Vec<Vec<u32>> = vec![Vec::new(); n];
        let releases = history
            .releases()
            .iter()
            .map(|r| {
                let rows = &r.records;
                let mut case_groups: Vec<Vec<u32>> = vec![Vec::new(); n];
                let mut case_values: Vec<Vec<u32>> = vec![Vec::new(); n];
                let mut envelopes = Vec::new();
                let mut members = Vec::new();
                for (g, idx) in published_groups(rows).into_iter().enumerate() {
                    let mut cases: Vec<u32> = idx.iter().map(|&i| case_ids[rows[i].case_id.as_str()]).collect();
                    cases.sort_unstable();
                    cases.dedup();
                    for &c in &cases {
                        case_groups[c as usize].push(g as u32);
                    }
                    for &i in &idx {
                        let c = case_ids[rows[i].case_id.as_str()] as usize;
                        for v in rows[i].sensitive.iter().flatten() {
                            case_values[c].push(value_ids[v.as_str()]);
                        }
                    }
                    envelopes.push(GroupEnvelope::of(idx.iter().map(|&i| &rows[i])));
                    members.push(cases);
                }
                for (c, vals) in case_values.iter_mut().enumerate() {
                    vals.sort_unstable();
                    vals.dedup();
                    series_values[c].extend_from_slice(vals);
                }
                IndexedRelease {
                    index: r.index,
                    envelopes,
                    members,
                    case_groups,
                    case_values,
                }
            })
            .collect();
        for vals in &mut series_values {
            vals.sort_unstable();
            vals.dedup();
        }
        Ok(Self {
            releases,
            coverage,
            case_names,
            case_ids,
            value_names,
            value_ids,
            series_values,
        })
    }

    fn position(&self, index: u32) -> Result<usize> {
        self.releases
            .iter()
            .position(|r| r.index == index)
            .ok_or_else(|| Error::Argument(format!("release {index} is not in the series")))
    }

    /// Which groups of each release cover the target.
    fn cover_flags(&self, target: &AttackTarget) -> Vec<Vec<bool>> {
        self.releases
            .iter()
            .map(|r| r.envelopes.iter().map(|e| self.coverage.covers_group(e, target)).collect())
            .collect()
    }

    fn raw_candidates(&self, at: usize, flags: &[Vec<bool>]) -> Vec<u32> {
        let r = &self.releases[at];
        let mut out: Vec<u32> = r
            .members
            .iter()
            .zip(&flags[at])
            .filter(|(_, &f)| f)
            .flat_map(|(m, _)| m.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Keeps candidates none of whose clones in `range` fails to cover.
    fn prune_by_clones(&self, ci: &[u32], flags: &[Vec<bool>], range: std::ops::Range<usize>) -> Vec<u32> {
        ci.iter()
            .copied()
            .filter(|&c| {
                range.clone().all(|j| {
                    let gs = &self.releases[j].case_groups[c as usize];
                    gs.is_empty() || gs.iter().any(|&g| flags[j][g as usize])
                })
            })
            .collect()
    }

    fn run(&self, attack: AttackKind, at: usize, flags: &[Vec<bool>]) -> Pruned {
        let ci = self.raw_candidates(at, flags);
        let cases = match attack {
            AttackKind::Backward => self.prune_by_clones(&ci, flags, 0..at),
            AttackKind::Forward => self.prune_by_clones(&ci, flags, at + 1..self.releases.len()),
            AttackKind::Latest => ci
                .into_iter()
                .filter(|&c| self.releases[..at].iter().all(|r| !r.present(c)))
                .collect(),
        };
        Pruned { attack, at, cases }
    }

    fn excluded_values(&self, target: &AttackTarget, rules: &[BackgroundRule]) -> Vec<u32> {
        let mut out: Vec<u32> = rules
            .iter()
            .filter(|r| !r.consistent_with(target, self.coverage.schema))
            .filter_map(|r| self.value_ids.get(r.value.as_str()).copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn prune_background(&self, mut p: Pruned, excluded: &[u32]) -> Pruned {
        if !excluded.is_empty() {
            p.cases.retain(|&c| {
                self.series_values[c as usize]
                    .iter()
                    .all(|v| excluded.binary_search(v).is_err())
            });
        }
        p
    }

    fn count(&self, p: &Pruned, value: u32) -> usize {
        let vals = &self.releases[p.at].case_values;
        p.cases
            .iter()
            .filter(|&&c| vals[c as usize].binary_search(&value).is_ok())
            .count()
    }

    fn to_result(&self, p: &Pruned) -> AttackResult {
        let mut value_counts: BTreeMap<String, usize> = BTreeMap::new();
        for &c in &p.cases {
            for &v in &self.releases[p.at].case_values[c as usize] {
                *value_counts.entry(self.value_names[v as usize].to_owned()).or_default() += 1;
            }
        }
        AttackResult {
            attack: p.attack,
            candidates: p.cases.iter().map(|&c| self.case_names[c as usize].to_owned()).collect(),
            value_counts,
        }
    }

    fn attack(&self, kind: AttackKind, target: &AttackTarget) -> Result<AttackResult> {
        let at = self.position(target.known_release)?;
        let flags = self.cover_flags(target);
        Ok(self.to_result(&self.run(kind, at, &flags)))
    }

    /// Cases of the known release whose QID-groups cover the target.
    pub fn candidate_set(&self, target: &AttackTarget) -> Result<BTreeSet<String>> {
        let at = self.position(target.known_release)?;
        let flags = self.cover_flags(target);
        Ok(self
            .raw_candidates(at, &flags)
            .into_iter()
            .map(|c| self.case_names[c as usize].to_owned())
            .collect())
    }

    pub fn backward_attack(&self, target: &AttackTarget) -> Result<AttackResult> {
        self.attack(AttackKind::Backward, target)
    }

    pub fn forward_attack(&self, target: &AttackTarget) -> Result<AttackResult> {
        self.attack(AttackKind::Forward, target)
    }

    pub fn latest_attack(&self, target: &AttackTarget) -> Result<AttackResult> {
        self.attack(AttackKind::Latest, target)
    }

    /// Drops candidates holding (anywhere in the series) a value whose rule
    /// contradicts the target's QID.
    pub fn background_prune(&self, result: AttackResult, target: &AttackTarget, rules: &[BackgroundRule]) -> Result<AttackResult> {
        let at = self.position(target.known_release)?;
        let excluded = self.excluded_values(target, rules);
        let cases = result
            .candidates
            .iter()
            .map(|c| {
                self.case_ids
                    .get(c.as_str())
                    .copied()
                    .ok_or_else(|| Error::Argument(format!("case `{c}` is not in the series")))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = self.prune_background(
            Pruned {
                attack: result.attack,
                at,
                cases,
            },
            &excluded,
        );
        Ok(self.to_result(&p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    pub k: usize,
    pub theta: Theta,
    pub coverage_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Finding {
    pub release: u32,
    pub case_id: String,
    pub attack: AttackKind,
    pub candidates: Vec<String>,
    pub record_breach: bool,
    pub attribute_breach: bool,
    /// Target's values whose frequency in the candidate set exceeds its threshold.
    pub disclosed: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BreachCounts {
    pub targets: usize,
    pub record_breaches: usize,
    pub attribute_breaches: usize,
}

impl BreachCounts {
    fn add(&mut self, other: &BreachCounts) {
        self.targets += other.targets;
        self.record_breaches += other.record_breaches;
        self.attribute_breaches += other.attribute_breaches;
    }

    pub fn breaches(&self) -> usize {
        self.record_breaches + self.attribute_breaches
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReleaseAudit {
    pub release: u32,
    #[serde(flatten)]
    pub counts: BreachCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub k: usize,
    pub coverage_fraction: f64,
    pub background: bool,
    pub per_release: Vec<ReleaseAudit>,
    pub total: BreachCounts,
    pub findings: Vec<Finding>,
}

impl AuditReport {
    /// Distinct (release, case) pairs with at least one breach.
    pub fn breached_targets(&self) -> BTreeSet<(u32, &str)> {
        self.findings.iter().map(|f| (f.release, f.case_id.as_str())).collect()
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "audit k={} coverage_fraction={} background={}",
            self.k, self.coverage_fraction, self.background
        )?;
        for r in &self.per_release {
            writeln!(
                f,
                "release {}: targets={} record_breaches={} attribute_breaches={}",
                r.release, r.counts.targets, r.counts.record_breaches, r.counts.attribute_breaches
            )?;
        }
        writeln!(
            f,
            "total: targets={} record_breaches={} attribute_breaches={}",
            self.total.targets, self.total.record_breaches, self.total.attribute_breaches
        )?;
        for x in &self.findings {
            let mut kinds = Vec::new();
            if x.record_breach {
                kinds.push("record".to_owned());
            }
            if x.attribute_breach {
                kinds.push(format!("attribute[{}]", x.disclosed.join(";")));
            }
            writeln!(
                f,
                "breach release={} case={} attack={} candidates={{{}}} kind={}",
                x.release,
                x.case_id,
                x.attack,
                x.candidates.join(","),
                kinds.join("+")
            )?;
        }
        Ok(())
    }
}

fn judge(series: &Series<'_>, p: &Pruned, case: u32, cfg: &AuditConfig) -> Option<Finding> {
    if p.cases.binary_search(&case).is_err() {
        return None;
    }
    let n = p.cases.len();
    let record_breach = n < cfg.k;
    let disclosed: Vec<String> = series.releases[p.at].case_values[case as usize]
        .iter()
        .map(|&v| (series.value_names[v as usize], series.count(p, v)))
        .filter(|&(name, c)| c as f64 / n as f64 > cfg.theta.get(name))
        .map(|(name, _)| name.to_owned())
        .collect();
    let attribute_breach = !disclosed.is_empty();
    (record_breach || attribute_breach).then(|| Finding {
        release: series.releases[p.at].index,
        case_id: series.case_names[case as usize].to_owned(),
        attack: p.attack,
        candidates: p.cases.iter().map(|&c| series.case_names[c as usize].to_owned()).collect(),
        record_breach,
        attribute_breach,
        disclosed,
    })
}

/// Attacks every raw record of every release using its own QID as the
/// attacker's knowledge. Backward and forward attacks always run; the latest
/// attack runs for cases that first appear in the release. A record breach
/// is a pruned candidate set containing the target's case with fewer than
/// `k` cases; an attribute breach is a value held by the target whose
/// frequency in that set exceeds its threshold.
pub fn audit_series(
    history: &ReleaseHistory,
    raw: &BTreeMap<u32, Vec<Record>>,
    cfg: &AuditConfig,
    schema: &QidSchema,
    background: Option<&[BackgroundRule]>,
) -> Result<AuditReport> {
    if history.is_empty() {
        return Err(Error::Argument("audit needs at least one release".into()));
    }
    let series = Series::new(history, schema, cfg.coverage_fraction)?;
    let mut per_release = Vec::new();
    let mut total = BreachCounts::default();
    let mut findings = Vec::new();

    for (at, release) in series.releases.iter().enumerate() {
        let rows = raw
            .get(&release.index)
            .ok_or_else(|| Error::DataIntegrity(format!("no raw records for release {}", release.index)))?;
        // Suppressed cases are not published and cannot be attacked.
        let outcomes: Vec<Vec<Finding>> = rows
            .par_iter()
            .filter_map(|r| {
                let case = *series.case_ids.get(r.case_id.as_str())?;
                release.present(case).then_some((r, case))
            })
            .map(|(r, case)| {
                let first = series.releases[..at].iter().all(|x| !x.present(case));
                let target = AttackTarget::from_record(
                    r,
                    release.index,
                    if first { KnowledgeKind::FirstAppearsIn } else { KnowledgeKind::InRelease },
                );
                let flags = series.cover_flags(&target);
                let excluded = background.map(|rules| series.excluded_values(&target, rules)).unwrap_or_default();
                let mut kinds = vec![AttackKind::Backward, AttackKind::Forward];
                if first {
                    kinds.push(AttackKind::Latest);
                }
                kinds
                    .into_iter()
                    .filter_map(|k| {
                        let p = series.prune_background(series.run(k, at, &flags), &excluded);
                        judge(&series, &p, case, cfg)
                    })
                    .collect()
            })
            .collect();

        let mut counts = BreachCounts::default();
        for found in outcomes {
            counts.targets += 1;
            if found.iter().any(|f| f.record_breach) {
                counts.record_breaches += 1;
            }
            if found.iter().any(|f| f.attribute_breach) {
                counts.attribute_breaches += 1;
            }
            findings.extend(found);
        }
        total.add(&counts);
        per_release.push(ReleaseAudit {
            release: release.index,
            counts,
        });
    }

    Ok(AuditReport {
        k: cfg.k,
        coverage_fraction: cfg.coverage_fraction,
        background: background.is_some(),
        per_release,
        total,
        findings,
    })
}
