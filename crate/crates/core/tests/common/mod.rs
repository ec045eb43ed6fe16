//! Independent oracles and builders shared by integration tests. Nothing here
//! calls the library's distance, risk or mechanism code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srs_anon::model::{CategoricalAttr, NumValue, NumericAttr, PublishedRecord, QidSchema, Record};
use srs_anon::taxonomy::{NodeSpec, TaxonomyTree};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// An exact fraction `num / den` kept unreduced.
#[derive(Clone, Copy, Debug)]
pub struct Frac(pub u64, pub u64);

impl Frac {
    pub fn add(self, o: Frac) -> Frac {
        Frac(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    pub fn sub(self, o: Frac) -> Frac {
        Frac(self.0 * o.1 - o.0 * self.1, self.1 * o.1)
    }
    pub fn lt(self, o: Frac) -> bool {
        (self.0 as u128) * (o.1 as u128) < (o.0 as u128) * (self.1 as u128)
    }
    pub fn eq(self, o: Frac) -> bool {
        (self.0 as u128) * (o.1 as u128) == (o.0 as u128) * (self.1 as u128)
    }
    pub fn f(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

/// A taxonomy as a plain child -> parent map.
#[derive(Clone, Debug)]
pub struct ParentMap {
    pub parent: HashMap<String, Option<String>>,
}

impl ParentMap {
    pub fn new(edges: &[(&str, Option<&str>)]) -> Self {
        Self {
            parent: edges.iter().map(|(c, p)| (c.to_string(), p.map(str::to_string))).collect(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Self {
        let v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        let parent = v["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| {
                (
                    n["name"].as_str().unwrap().to_string(),
                    n.get("parent").and_then(|p| p.as_str()).map(str::to_string),
                )
            })
            .collect();
        Self { parent }
    }

    /// The node plus all of its ancestors.
    pub fn phi(&self, v: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut cur = Some(v.to_string());
        while let Some(c) = cur {
            cur = self.parent[&c].clone();
            out.insert(c);
        }
        out
    }

    pub fn is_ancestor_or_self(&self, anc: &str, v: &str) -> bool {
        self.phi(v).contains(anc)
    }

    /// `(|phi(u) ∪ phi(v)| − |phi(u) ∩ phi(v)|) / |phi(u) ∪ phi(v)|`.
    pub fn il(&self, u: &str, v: &str) -> Frac {
        let (a, b) = (self.phi(u), self.phi(v));
        let union = a.union(&b).count() as u64;
        let inter = a.intersection(&b).count() as u64;
        Frac(union - inter, union)
    }
}

/// `∫_L^U |x − a| dx / (U − L)` by the trapezoid rule on each linear piece,
/// which is exact for a piecewise-linear integrand.
pub fn quadrature_deviation(a: f64, lo: f64, hi: f64) -> f64 {
    if hi == lo {
        return (a - lo).abs();
    }
    let mut knots = vec![lo, hi];
    if lo < a && a < hi {
        knots.insert(1, a);
    }
    let steps = 64;
    let mut total = 0.0;
    for w in knots.windows(2) {
        let h = (w[1] - w[0]) / steps as f64;
        for i in 0..steps {
            let x0 = w[0] + h * i as f64;
            let x1 = x0 + h;
            total += h * ((x0 - a).abs() + (x1 - a).abs()) / 2.0;
        }
    }
    total / (hi - lo)
}

/// Oracle per-record distortion for a schema with names resolved through `trees`.
pub fn oracle_distance(r: &Record, p: &PublishedRecord, schema: &QidSchema, trees: &[ParentMap]) -> f64 {
    let mut d = 0.0;
    for (a, attr) in schema.categorical.iter().enumerate() {
        let u = attr.tree.node_name(r.cat[a]);
        let v = attr.tree.node_name(p.cat[a]);
        d += trees[a].il(u, v).f();
    }
    for (a, attr) in schema.numeric.iter().enumerate() {
        let dev = match p.num[a] {
            NumValue::Point(x) => (r.num[a] - x).abs(),
            NumValue::Interval { lo, hi } => quadrature_deviation(r.num[a], lo, hi),
        };
        d += dev / (attr.max - attr.min);
    }
    d
}

/// Brute-force RR and AR_rev; rows pair up by index.
pub fn oracle_rr_ar(orig: &[Record], anon: &[PublishedRecord], schema: &QidSchema, trees: &[ParentMap]) -> (f64, f64) {
    assert_eq!(orig.len(), anon.len());
    let n = orig.len();
    let mut rr = 0.0;
    let mut ar = 0.0;
    for (i, r) in orig.iter().enumerate() {
        let dists: Vec<f64> = anon.iter().map(|p| oracle_distance(r, p, schema, trees)).collect();
        let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let g: Vec<usize> = (0..n).filter(|&j| dists[j] == best).collect();
        if !g.contains(&i) {
            continue;
        }
        let size = g.len() as f64;
        rr += 1.0 / size;
        let mut counts: BTreeMap<(usize, String), f64> = BTreeMap::new();
        for &j in &g {
            for (a, set) in anon[j].sensitive.iter().enumerate() {
                for v in set {
                    *counts.entry((a, v.clone())).or_default() += 1.0;
                }
            }
        }
        if !counts.is_empty() {
            let s: f64 = counts.values().map(|c| (c / size).max(1.0 / size)).sum();
            ar += s / counts.len() as f64;
        }
    }
    (rr / n as f64, ar / n as f64)
}

/// Straight-line NIL: groups by gid, `Σ_g Σ_{r∈g} d(r) / (|QID|·|g|)`.
pub fn oracle_nil(orig: &[Record], anon: &[PublishedRecord], schema: &QidSchema, trees: &[ParentMap]) -> f64 {
    let qid = (schema.categorical.len() + schema.numeric.len()) as f64;
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in anon.iter().enumerate() {
        groups.entry(p.gid.unwrap()).or_default().push(i);
    }
    groups
        .values()
        .map(|rows| {
            let il: f64 = rows.iter().map(|&i| oracle_distance(&orig[i], &anon[i], schema, trees)).sum();
            il / (qid * rows.len() as f64)
        })
        .sum()
}

pub fn oracle_prr(a: u64, b: u64, c: u64, d: u64) -> Option<f64> {
    if a + b == 0 || c == 0 {
        return None;
    }
    Some((a as f64 / (a + b) as f64) / (c as f64 / (c + d) as f64))
}

pub fn age_edges() -> Vec<(&'static str, Option<&'static str>)> {
    vec![
        ("Any", None),
        ("Non-adult", Some("Any")),
        ("Adult", Some("Any")),
        ("Child", Some("Non-adult")),
        ("Adolescent", Some("Non-adult")),
        ("Young Adult", Some("Adult")),
        ("Middle-aged", Some("Adult")),
    ]
}

pub fn tree_from_edges(name: &str, edges: &[(&str, Option<&str>)]) -> TaxonomyTree {
    let specs: Vec<NodeSpec> = edges
        .iter()
        .map(|(c, p)| NodeSpec {
            name: c.to_string(),
            parent: p.map(str::to_string),
        })
        .collect();
    TaxonomyTree::from_nodes(name, &specs).unwrap()
}

/// One categorical (Age bands), one numeric (Weight in [0, 128]) and one
/// sensitive attribute.
pub fn small_schema() -> QidSchema {
    QidSchema::new(
        vec![CategoricalAttr {
            name: "Age".into(),
            tree: Arc::new(tree_from_edges("Age", &age_edges())),
        }],
        vec![NumericAttr {
            name: "Weight".into(),
            min: 0.0,
            max: 128.0,
        }],
        vec!["Reaction".into()],
    )
    .unwrap()
}

const REACTIONS: [&str; 4] = ["NAUSEA", "RASH", "HEADACHE", "FEVER"];
const LEAVES: [&str; 4] = ["Child", "Adolescent", "Young Adult", "Middle-aged"];

pub fn random_sensitive(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let mut s = BTreeSet::new();
    s.insert(REACTIONS[rng.gen_range(0..4)].to_string());
    if rng.gen_bool(0.4) {
        s.insert(REACTIONS[rng.gen_range(0..4)].to_string());
    }
    s
}

/// A random raw table of `n` distinct cases over [`small_schema`].
pub fn random_records(n: usize, rng: &mut ChaCha8Rng, schema: &QidSchema) -> Vec<Record> {
    let tree = &schema.categorical[0].tree;
    (0..n)
        .map(|i| Record {
            case_id: format!("c{i}"),
            cat: vec![tree.node(LEAVES[rng.gen_range(0..4)]).unwrap()],
            num: vec![rng.gen_range(0..=128) as f64],
            sensitive: vec![random_sensitive(rng)],
        })
        .collect()
}

/// A random "anonymized" version: each value kept, generalized to an
/// ancestor or replaced; numbers shifted or widened to power-of-two
/// intervals so that distances are exact binary fractions.
pub fn random_publication(orig: &[Record], rng: &mut ChaCha8Rng, schema: &QidSchema) -> Vec<PublishedRecord> {
    let tree = &schema.categorical[0].tree;
    let all: Vec<_> = tree.nodes().collect();
    orig.iter()
        .map(|r| {
            let cat = match rng.gen_range(0..3) {
                0 => r.cat[0],
                1 => tree.parent(r.cat[0]).unwrap_or(r.cat[0]),
                _ => all[rng.gen_range(0..all.len())],
            };
            let x = r.num[0];
            let num = match rng.gen_range(0..3) {
                0 => NumValue::Point(x),
                1 => NumValue::Point(x + rng.gen_range(-4..=4) as f64),
                _ => {
                    let w = [2.0, 4.0, 8.0][rng.gen_range(0..3)];
                    let lo = x - rng.gen_range(0..=(w as i32 + 2)) as f64;
                    NumValue::Interval { lo, hi: lo + w }
                }
            };
            PublishedRecord {
                case_id: r.case_id.clone(),
                gid: Some(rng.gen_range(0..3)),
                cat: vec![cat],
                num: vec![num],
                sensitive: r.sensitive.clone(),
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anonymizes every raw release in order, returning the published history
/// and the raw tables keyed by release index.
pub fn run_series(
    raw: &[Vec<Record>],
    cfg: &srs_anon::PrivacyConfig,
    schema: &QidSchema,
) -> (srs_anon::ReleaseHistory, BTreeMap<u32, Vec<Record>>) {
    let mut history = srs_anon::ReleaseHistory::default();
    let mut by_index = BTreeMap::new();
    for records in raw {
        let outcome = srs_anon::anonymize(records, &history, cfg, schema).unwrap();
        by_index.insert(outcome.release.index, records.clone());
        history.push(outcome.release).unwrap();
    }
    (history, by_index)
}
