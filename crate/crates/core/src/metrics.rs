//! Distortion, disclosure-risk and signal measures comparing an original
//! table with its anonymized release.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{dedup, NumValue, PublishedRecord, QidSchema, Record};

/// Normalized distance between an original value and its published form.
///
/// A point is compared by absolute difference; an interval `[L, U]` by the
/// mean absolute deviation of `a` from a value uniform on the interval. Both
/// are divided by the attribute's global range.
pub fn numeric_distance(original: f64, published: NumValue, bounds: (f64, f64)) -> Result<f64> {
    let (min, max) = bounds;
    if !(max > min) {
        return Err(Error::Argument(format!("invalid bounds [{min}, {max}]")));
    }
    Ok(interval_deviation(original, published)? / (max - min))
}

/// `∫_L^U |x − a| dx / (U − L)`, or `|a − p|` for a point.
pub fn interval_deviation(a: f64, published: NumValue) -> Result<f64> {
    match published {
        NumValue::Point(p) => Ok((a - p).abs()),
        NumValue::Interval { lo, hi } if hi < lo => {
            Err(Error::Argument(format!("interval upper bound {hi} below lower bound {lo}")))
        }
        NumValue::Interval { lo, hi } if hi == lo => Ok((a - lo).abs()),
        NumValue::Interval { lo, hi } => {
            let w = hi - lo;
            let v = if a <= lo {
                ((hi - a).powi(2) - (lo - a).powi(2)) / (2.0 * w)
            } else if a >= hi {
                ((a - lo).powi(2) - (a - hi).powi(2)) / (2.0 * w)
            } else {
                ((a - lo).powi(2) + (hi - a).powi(2)) / (2.0 * w)
            };
            Ok(v)
        }
    }
}

/// Per-record distortion: normalized numeric distances plus whole-tree
/// categorical distortions, summed over all quasi-identifiers.
pub fn record_distortion(original: &Record, published: &PublishedRecord, schema: &QidSchema) -> f64 {
    let cat: f64 = schema
        .categorical
        .iter()
        .enumerate()
        .map(|(a, attr)| attr.tree.distortion(original.cat[a], published.cat[a]))
        .sum();
    let num: f64 = schema
        .numeric
        .iter()
        .enumerate()
        .map(|(a, attr)| {
            // Published values always satisfy lo <= hi, so this cannot fail.
            interval_deviation(original.num[a], published.num[a]).unwrap_or(f64::INFINITY) / attr.range()
        })
        .sum();
    cat + num
}

/// Original and anonymized rows paired by case id and occurrence order.
/// Originals with no published counterpart (suppressed) are skipped.
#[derive(Debug)]
pub struct Alignment<'a> {
    pub pairs: Vec<(&'a Record, &'a PublishedRecord)>,
}

impl<'a> Alignment<'a> {
    pub fn new(original: &'a [Record], anonymized: &'a [PublishedRecord]) -> Result<Self> {
        let mut originals: HashMap<&str, Vec<&Record>> = HashMap::new();
        for r in dedup(original) {
            originals.entry(r.case_id.as_str()).or_default().push(r);
        }
        let mut used: HashMap<&str, usize> = HashMap::new();
        let mut pairs = Vec::with_capacity(anonymized.len());
        for p in anonymized {
            let n = used.entry(p.case_id.as_str()).or_default();
            let r = originals
                .get(p.case_id.as_str())
                .and_then(|rows| rows.get(*n))
                .ok_or_else(|| {
                    Error::Alignment(format!(
                        "published row {} of case `{}` has no original counterpart",
                        *n + 1,
                        p.case_id
                    ))
                })?;
            *n += 1;
            pairs.push((*r, p));
        }
        Ok(Self { pairs })
    }
}

/// Normalized information loss: `Σ_g IL*(g) / (|QID| · |g|)` with groups
/// taken from the published group ids (rows without one form singletons).
pub fn nil(original: &[Record], anonymized: &[PublishedRecord], schema: &QidSchema) -> Result<f64> {
    let aligned = Alignment::new(original, anonymized)?;
    let qid = schema.qid_count() as f64;
    if qid == 0.0 {
        return Ok(0.0);
    }
    let mut groups: BTreeMap<Option<u32>, (f64, usize)> = BTreeMap::new();
    let mut singletons = 0.0;
    for (r, p) in &aligned.pairs {
        let d = record_distortion(r, p, schema);
        match p.gid {
            Some(g) => {
                let e = groups.entry(Some(g)).or_default();
                e.0 += d;
                e.1 += 1;
            }
            None => singletons += d / qid,
        }
    }
    Ok(groups.values().map(|(il, n)| il / (qid * *n as f64)).sum::<f64>() + singletons)
}

/// Minimum-difference candidate sets: for each aligned original, the indices
/// of published rows at minimal distance, and whether its own row is among them.
fn min_difference_sets(aligned: &Alignment<'_>, schema: &QidSchema) -> Vec<(Vec<usize>, bool)> {
    let published: Vec<&PublishedRecord> = aligned.pairs.iter().map(|(_, p)| *p).collect();
    aligned
        .pairs
        .par_iter()
        .enumerate()
        .map(|(own, (r, _))| {
            let mut best = f64::INFINITY;
            let mut set = Vec::new();
            for (j, p) in published.iter().enumerate() {
                let d = record_distortion(r, p, schema);
                if d < best {
                    best = d;
                    set.clear();
                    set.push(j);
                } else if d == best {
                    set.push(j);
                }
            }
            let hit = set.binary_search(&own).is_ok();
            (set, hit)
        })
        .collect()
}

/// Record-linkage risk: mean over records of `1/|G|` when the record's own
/// anonymized row lies in its minimum-difference set `G`, else 0.
pub fn rr(original: &[Record], anonymized: &[PublishedRecord], schema: &QidSchema) -> Result<f64> {
    let aligned = Alignment::new(original, anonymized)?;
    if aligned.pairs.is_empty() {
        return Ok(0.0);
    }
    let sets = min_difference_sets(&aligned, schema);
    let total: f64 = sets
        .iter()
        .map(|(g, hit)| if *hit { 1.0 / g.len() as f64 } else { 0.0 })
        .sum();
    Ok(total / sets.len() as f64)
}

/// Attribute-inference risk: mean over records of the average, across the
/// sensitive values present in `G`, of `max(1/|G|, freq_G(s))`.
pub fn ar_rev(original: &[Record], anonymized: &[PublishedRecord], schema: &QidSchema) -> Result<f64> {
    let aligned = Alignment::new(original, anonymized)?;
    if aligned.pairs.is_empty() {
        return Ok(0.0);
    }
    let sets = min_difference_sets(&aligned, schema);
    let total: f64 = sets
        .iter()
        .map(|(g, hit)| {
            if !*hit {
                return 0.0;
            }
            let rows = g.iter().map(|&j| aligned.pairs[j].1);
            attribute_risk(rows)
        })
        .sum();
    Ok(total / sets.len() as f64)
}

/// `Σ_{s∈S_G} max(1/|G|, Pr_G(s)) / |S_G|` for one candidate set.
pub fn attribute_risk<'a>(group: impl Iterator<Item = &'a PublishedRecord>) -> f64 {
    let mut counts: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    let mut size = 0usize;
    for p in group {
        size += 1;
        for (a, set) in p.sensitive.iter().enumerate() {
            for v in set {
                *counts.entry((a, v.as_str())).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return 0.0;
    }
    let floor = 1.0 / size as f64;
    counts
        .values()
        .map(|&c| (c as f64 / size as f64).max(floor))
        .sum::<f64>()
        / counts.len() as f64
}

/// Drug × reaction co-occurrence counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            a: self.a * factor,
            b: self.b * factor,
            c: self.c * factor,
            d: self.d * factor,
        }
    }
}

/// Proportional reporting ratio; `None` when a margin is degenerate.
pub fn prr(t: &ContingencyTable) -> Option<f64> {
    if t.a + t.b == 0 || t.c == 0 {
        return None;
    }
    let exposed = t.a as f64 / (t.a + t.b) as f64;
    let other = t.c as f64 / (t.c + t.d) as f64;
    Some(exposed / other)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Comparison {
    Gt,
    Ge,
    Lt,
    Le,
}

/// Numeric row filter such as `Weight>60`.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericFilter {
    pub attr: usize,
    pub op: Comparison,
    pub threshold: f64,
}

impl NumericFilter {
    pub fn parse(expr: &str, schema: &QidSchema) -> Result<Self> {
        let bad = || Error::Argument(format!("cannot parse filter `{expr}`; expected e.g. `Weight>60`"));
        let pos = expr.find(['<', '>']).ok_or_else(bad)?;
        let (name, rest) = expr.split_at(pos);
        let (op, num) = if let Some(n) = rest.strip_prefix(">=") {
            (Comparison::Ge, n)
        } else if let Some(n) = rest.strip_prefix("<=") {
            (Comparison::Le, n)
        } else if let Some(n) = rest.strip_prefix('>') {
            (Comparison::Gt, n)
        } else if let Some(n) = rest.strip_prefix('<') {
            (Comparison::Lt, n)
        } else {
            return Err(bad());
        };
        let attr = schema
            .numeric_index(name.trim())
            .ok_or_else(|| Error::Argument(format!("filter attribute `{}` is not numeric", name.trim())))?;
        let threshold = num.trim().parse().map_err(|_| bad())?;
        Ok(Self { attr, op, threshold })
    }

    pub fn accepts(&self, v: f64) -> bool {
        match self.op {
            Comparison::Gt => v > self.threshold,
            Comparison::Ge => v >= self.threshold,
            Comparison::Lt => v < self.threshold,
            Comparison::Le => v <= self.threshold,
        }
    }
}

/// A drug/reaction pair; values match in any sensitive attribute unless
/// qualified as `Attr=Value`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalQuery {
    pub drug: (Option<usize>, String),
    pub reaction: (Option<usize>, String),
    pub filter: Option<NumericFilter>,
}

impl SignalQuery {
    pub fn new(drug: &str, reaction: &str, filter: Option<NumericFilter>, schema: &QidSchema) -> Result<Self> {
        Ok(Self {
            drug: parse_term(drug, schema)?,
            reaction: parse_term(reaction, schema)?,
            filter,
        })
    }
}

fn parse_term(term: &str, schema: &QidSchema) -> Result<(Option<usize>, String)> {
    match term.split_once('=') {
        Some((attr, value)) => {
            let a = schema
                .sensitive_index(attr.trim())
                .ok_or_else(|| Error::Argument(format!("`{attr}` is not a sensitive attribute")))?;
            Ok((Some(a), value.trim().to_owned()))
        }
        None => Ok((None, term.to_owned())),
    }
}

fn holds(sensitive: &[BTreeSet<String>], term: &(Option<usize>, String)) -> bool {
    match term.0 {
        Some(a) => sensitive[a].contains(&term.1),
        None => sensitive.iter().any(|s| s.contains(&term.1)),
    }
}

fn tally<'a, I>(rows: I, q: &SignalQuery) -> ContingencyTable
where
    I: Iterator<Item = (&'a [BTreeSet<String>], Option<f64>)>,
{
    let mut t = ContingencyTable::default();
    for (sens, filter_value) in rows {
        if let (Some(f), Some(v)) = (&q.filter, filter_value) {
            if !f.accepts(v) {
                continue;
            }
        }
        match (holds(sens, &q.drug), holds(sens, &q.reaction)) {
            (true, true) => t.a += 1,
            (true, false) => t.b += 1,
            (false, true) => t.c += 1,
            (false, false) => t.d += 1,
        }
    }
    t
}

pub fn contingency_original(rows: &[Record], q: &SignalQuery) -> ContingencyTable {
    tally(
        dedup(rows)
            .into_iter()
            .map(|r| (r.sensitive.as_slice(), q.filter.as_ref().map(|f| r.num[f.attr]))),
        q,
    )
}

/// Interval-valued cells are filtered on their midpoint.
pub fn contingency_published(rows: &[PublishedRecord], q: &SignalQuery) -> ContingencyTable {
    tally(
        rows.iter()
            .map(|r| (r.sensitive.as_slice(), q.filter.as_ref().map(|f| r.num[f.attr].midpoint()))),
        q,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalReport {
    pub original: ContingencyTable,
    pub anonymized: ContingencyTable,
    pub prr_original: Option<f64>,
    pub prr_anonymized: Option<f64>,
    /// `|PRR(D) − PRR(D')|`, `None` when either side is undefined.
    pub bias: Option<f64>,
}

pub fn signal_bias(original: &[Record], anonymized: &[PublishedRecord], q: &SignalQuery) -> SignalReport {
    let t0 = contingency_original(original, q);
    let t1 = contingency_published(anonymized, q);
    let (p0, p1) = (prr(&t0), prr(&t1));
    SignalReport {
        original: t0,
        anonymized: t1,
        prr_original: p0,
        prr_anonymized: p1,
        bias: p0.zip(p1).map(|(a, b)| (a - b).abs()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub records: usize,
    pub nil: f64,
    pub rr: f64,
    pub ar_rev: f64,
}

pub fn evaluate(original: &[Record], anonymized: &[PublishedRecord], schema: &QidSchema) -> Result<MetricReport> {
    let aligned = Alignment::new(original, anonymized)?;
    let sets = min_difference_sets(&aligned, schema);
    let n = sets.len().max(1) as f64;
    let rr = sets
        .iter()
        .map(|(g, hit)| if *hit { 1.0 / g.len() as f64 } else { 0.0 })
        .sum::<f64>()
        / n;
    let ar = sets
        .iter()
        .map(|(g, hit)| {
            if *hit {
                attribute_risk(g.iter().map(|&j| aligned.pairs[j].1))
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n;
    Ok(MetricReport {
        records: aligned.pairs.len(),
        nil: nil(original, anonymized, schema)?,
        rr,
        ar_rev: ar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_endpoint_and_midpoint() {
        let iv = NumValue::Interval { lo: 10.0, hi: 30.0 };
        assert!((interval_deviation(10.0, iv).unwrap() - 10.0).abs() < 1e-12);
        assert!((interval_deviation(20.0, iv).unwrap() - 5.0).abs() < 1e-12);
        assert!((interval_deviation(30.0, iv).unwrap() - 10.0).abs() < 1e-12);
        assert!((numeric_distance(20.0, iv, (0.0, 100.0)).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn reversed_interval_is_rejected() {
        let bad = NumValue::Interval { lo: 5.0, hi: 1.0 };
        assert!(numeric_distance(3.0, bad, (0.0, 10.0)).is_err());
        assert!(numeric_distance(3.0, NumValue::Point(1.0), (1.0, 1.0)).is_err());
    }

    #[test]
    fn point_distance_is_normalized() {
        let d = numeric_distance(60.0, NumValue::Point(70.0), (0.0, 200.0)).unwrap();
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn prr_hand_values() {
        let t = ContingencyTable { a: 10, b: 90, c: 10, d: 900 };
        assert!((prr(&t).unwrap() - 9.1).abs() < 1e-12);
        let flat = ContingencyTable { a: 5, b: 45, c: 20, d: 180 };
        assert!((prr(&flat).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(prr(&ContingencyTable { a: 1, b: 1, c: 0, d: 5 }), None);
        assert_eq!(prr(&ContingencyTable { a: 0, b: 0, c: 3, d: 5 }), None);
    }

    #[test]
    fn attribute_risk_hand_value() {
        let row = |vals: &[&str]| PublishedRecord {
            case_id: "x".into(),
            gid: None,
            cat: vec![],
            num: vec![],
            sensitive: vec![vals.iter().map(|v| v.to_string()).collect()],
        };
        // |G| = 5, s1 in two rows (0.4), s2 in one row (0.2)
        let g = [row(&["s1"]), row(&["s1", "s2"]), row(&[]), row(&[]), row(&[])];
        assert!((attribute_risk(g.iter()) - 0.3).abs() < 1e-12);
    }
}
