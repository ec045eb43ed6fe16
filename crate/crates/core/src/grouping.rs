//! New-case-core grouping.
//!
//! New cases are clustered first into cores of at least `k` records that
//! respect every sensitive-value threshold; leftover new cases and all old
//! cases are then attached to the core that grows least in information loss
//! weighted by threshold stress. Groups therefore always hold `k` or more
//! new cases, which previous releases cannot link.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CaseSplit, PrivacyConfig, QidSchema, SuperRecord, Theta};
use crate::taxonomy::{generalize_lca, NodeId};

/// A cluster of super records that will share one QID treatment.
#[derive(Clone, Debug, PartialEq)]
pub struct QidGroup {
    pub members: Vec<SuperRecord>,
    /// Per member, whether its case is new in the current release.
    pub is_new: Vec<bool>,
    pub new_count: usize,
    /// Per categorical attribute, the lowest common ancestor of members.
    pub virtual_cat: Vec<NodeId>,
    /// Per numeric attribute, the interval covering every constituent value.
    pub virtual_num: Vec<(f64, f64)>,
}

impl QidGroup {
    pub fn new(members: Vec<SuperRecord>, is_new: Vec<bool>, schema: &QidSchema) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Argument("a QID group needs at least one member".into()));
        }
        if members.len() != is_new.len() {
            return Err(Error::Argument("membership flags do not match members".into()));
        }
        let mut g = Self {
            new_count: is_new.iter().filter(|&&n| n).count(),
            members,
            is_new,
            virtual_cat: Vec::new(),
            virtual_num: Vec::new(),
        };
        g.refresh(schema)?;
        Ok(g)
    }

    pub fn from_split(members: Vec<SuperRecord>, split: &CaseSplit, schema: &QidSchema) -> Result<Self> {
        let is_new = members.iter().map(|m| split.is_new(&m.case_id)).collect();
        Self::new(members, is_new, schema)
    }

    /// Recomputes the virtual generalization after member values change.
    pub fn refresh(&mut self, schema: &QidSchema) -> Result<()> {
        self.virtual_cat = schema
            .categorical
            .iter()
            .enumerate()
            .map(|(a, attr)| generalize_lca(self.members.iter().map(|m| m.cat[a]), &attr.tree))
            .collect::<Result<_>>()?;
        self.virtual_num = (0..schema.numeric.len())
            .map(|a| {
                self.members
                    .iter()
                    .flat_map(|m| m.constituents.iter().map(move |c| c.num[a]))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .collect();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Absorbs another group's members.
    pub fn absorb(&mut self, other: QidGroup, schema: &QidSchema) -> Result<()> {
        self.new_count += other.new_count;
        self.members.extend(other.members);
        self.is_new.extend(other.is_new);
        self.refresh(schema)
    }

    /// Number of members holding each `(sensitive attribute, value)`.
    pub fn sensitive_counts(&self) -> BTreeMap<(usize, &str), usize> {
        let mut counts = BTreeMap::new();
        for m in &self.members {
            for (a, set) in m.sensitive.iter().enumerate() {
                for v in set {
                    *counts.entry((a, v.as_str())).or_default() += 1;
                }
            }
        }
        counts
    }

    pub fn constituent_count(&self) -> usize {
        self.members.iter().map(|m| m.constituents.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundMode {
    /// Size at least `k` and every sensitive frequency within its threshold.
    Ms,
    /// At least `k` new cases.
    Nc,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    TooSmall { size: usize, k: usize },
    Frequency { attr: usize, value: String, freq: f64, theta: f64 },
    TooFewNew { new_count: usize, k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub violations: Vec<Violation>,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_bounds(g: &QidGroup, cfg: &PrivacyConfig, mode: BoundMode) -> BoundCheck {
    let mut violations = Vec::new();
    match mode {
        BoundMode::Ms => {
            if g.len() < cfg.k {
                violations.push(Violation::TooSmall { size: g.len(), k: cfg.k });
            }
            let n = g.len() as f64;
            for ((attr, value), count) in g.sensitive_counts() {
                let freq = count as f64 / n;
                let theta = cfg.theta.get(value);
                if freq > theta {
                    violations.push(Violation::Frequency {
                        attr,
                        value: value.to_owned(),
                        freq,
                        theta,
                    });
                }
            }
        }
        BoundMode::Nc => {
            if g.new_count < cfg.k {
                violations.push(Violation::TooFewNew { new_count: g.new_count, k: cfg.k });
            }
        }
    }
    BoundCheck { violations }
}

/// Interned sensitive values: `(attribute, value)` → dense id.
#[derive(Default)]
struct Interner<'a> {
    ids: HashMap<(usize, &'a str), u32>,
    theta: Vec<f64>,
}

impl<'a> Interner<'a> {
    fn intern(&mut self, attr: usize, value: &'a str, theta: &Theta) -> u32 {
        let next = self.ids.len() as u32;
        *self.ids.entry((attr, value)).or_insert_with(|| {
            self.theta.push(theta.get(value));
            next
        })
    }
}

/// Sufficient statistics of one super record for IL* and frequency scoring.
#[derive(Clone, Debug)]
struct Profile {
    cat: Vec<NodeId>,
    /// Σ over constituents of 1 / (depth + 1), per categorical attribute.
    inv_depth: Vec<f64>,
    n: f64,
    num: Vec<Moments>,
    sens: Vec<u32>,
}

#[derive(Clone, Copy, Debug)]
struct Moments {
    lo: f64,
    hi: f64,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
        sum: 0.0,
        sumsq: 0.0,
    };

    fn add(self, o: Moments) -> Moments {
        Moments {
            lo: self.lo.min(o.lo),
            hi: self.hi.max(o.hi),
            sum: self.sum + o.sum,
            sumsq: self.sumsq + o.sumsq,
        }
    }
}

/// Running statistics of a group under construction.
#[derive(Clone, Debug)]
struct Stats {
    members: usize,
    n: f64,
    lca: Vec<Option<NodeId>>,
    inv_depth: Vec<f64>,
    num: Vec<Moments>,
    counts: HashMap<u32, u32>,
    il: f64,
}

struct Scorer<'s> {
    schema: &'s QidSchema,
    ranges: Vec<f64>,
    theta: Vec<f64>,
}

impl<'s> Scorer<'s> {
    fn empty(&self) -> Stats {
        Stats {
            members: 0,
            n: 0.0,
            lca: vec![None; self.schema.categorical.len()],
            inv_depth: vec![0.0; self.schema.categorical.len()],
            num: vec![Moments::EMPTY; self.schema.numeric.len()],
            counts: HashMap::new(),
            il: 0.0,
        }
    }

    /// IL* of a group from its statistics, in closed form.
    fn il(&self, n: f64, lca: &[Option<NodeId>], inv_depth: &[f64], num: &[Moments]) -> f64 {
        let mut total = 0.0;
        for (a, attr) in self.schema.categorical.iter().enumerate() {
            if let Some(l) = lca[a] {
                let d = attr.tree.depth(l) as f64 + 1.0;
                total += n - d * inv_depth[a];
            }
        }
        for (a, m) in num.iter().enumerate() {
            let w = m.hi - m.lo;
            if w > 0.0 {
                let below = m.sumsq - 2.0 * m.lo * m.sum + n * m.lo * m.lo;
                let above = m.sumsq - 2.0 * m.hi * m.sum + n * m.hi * m.hi;
                total += (below + above) / (2.0 * w) / self.ranges[a];
            }
        }
        total
    }

    fn merged_lca(&self, stats: &Stats, p: &Profile) -> Vec<Option<NodeId>> {
        self.schema
            .categorical
            .iter()
            .enumerate()
            .map(|(a, attr)| {
                Some(match stats.lca[a] {
                    Some(l) => attr.tree.lca(l, p.cat[a]),
                    None => p.cat[a],
                })
            })
            .collect()
    }

    fn delta_il(&self, stats: &Stats, p: &Profile) -> f64 {
        let lca = self.merged_lca(stats, p);
        let inv: Vec<f64> = stats.inv_depth.iter().zip(&p.inv_depth).map(|(a, b)| a + b).collect();
        let num: Vec<Moments> = stats.num.iter().zip(&p.num).map(|(a, b)| a.add(*b)).collect();
        (self.il(stats.n + p.n, &lca, &inv, &num) - stats.il).max(0.0)
    }

    /// Π over sensitive values of `max(1, freq / θ)` after adding `p`.
    fn privacy_risk(&self, stats: &Stats, p: &Profile) -> f64 {
        let size = (stats.members + 1) as f64;
        let mut risk = 1.0;
        for (&s, &c) in &stats.counts {
            let c = c + u32::from(p.sens.binary_search(&s).is_ok());
            risk *= (c as f64 / size / self.theta[s as usize]).max(1.0);
        }
        for &s in &p.sens {
            if !stats.counts.contains_key(&s) {
                risk *= (1.0 / size / self.theta[s as usize]).max(1.0);
            }
        }
        risk
    }

    fn add(&self, stats: &mut Stats, p: &Profile) {
        stats.lca = self.merged_lca(stats, p);
        for (a, v) in p.inv_depth.iter().enumerate() {
            stats.inv_depth[a] += v;
        }
        for (a, m) in p.num.iter().enumerate() {
            stats.num[a] = stats.num[a].add(*m);
        }
        for &s in &p.sens {
            *stats.counts.entry(s).or_default() += 1;
        }
        stats.members += 1;
        stats.n += p.n;
        stats.il = self.il(stats.n, &stats.lca, &stats.inv_depth, &stats.num);
    }

    /// Whether the statistics satisfy the size and frequency bounds.
    fn passes(&self, stats: &Stats, k: usize) -> bool {
        stats.members >= k && self.within_theta(stats, None)
    }

    fn within_theta(&self, stats: &Stats, extra: Option<&Profile>) -> bool {
        let size = (stats.members + usize::from(extra.is_some())) as f64;
        let has = |s: u32| extra.is_some_and(|p| p.sens.binary_search(&s).is_ok());
        let existing = stats
            .counts
            .iter()
            .all(|(&s, &c)| (c + u32::from(has(s))) as f64 / size <= self.theta[s as usize]);
        let fresh = extra.map_or(true, |p| {
            p.sens
                .iter()
                .filter(|s| !stats.counts.contains_key(s))
                .all(|&s| 1.0 / size <= self.theta[s as usize])
        });
        existing && fresh
    }
}

fn profiles<'a>(
    records: &'a [SuperRecord],
    schema: &QidSchema,
    theta: &Theta,
    interner: &mut Interner<'a>,
) -> Vec<Profile> {
    records
        .iter()
        .map(|r| {
            let inv_depth = schema
                .categorical
                .iter()
                .enumerate()
                .map(|(a, attr)| {
                    r.constituents
                        .iter()
                        .map(|c| 1.0 / (attr.tree.depth(c.cat[a]) as f64 + 1.0))
                        .sum()
                })
                .collect();
            let num = (0..schema.numeric.len())
                .map(|a| {
                    r.constituents.iter().fold(Moments::EMPTY, |m, c| {
                        let v = c.num[a];
                        m.add(Moments { lo: v, hi: v, sum: v, sumsq: v * v })
                    })
                })
                .collect();
            let mut sens: Vec<u32> = r
                .sensitive
                .iter()
                .enumerate()
                .flat_map(|(a, set)| set.iter().map(move |v| (a, v.as_str())))
                .map(|(a, v)| interner.intern(a, v, theta))
                .collect();
            sens.sort_unstable();
            sens.dedup();
            Profile {
                cat: r.cat.clone(),
                inv_depth,
                n: r.constituents.len() as f64,
                num,
                sens,
            }
        })
        .collect()
}

fn scorer<'s>(schema: &'s QidSchema, interner: Interner<'_>) -> Scorer<'s> {
    Scorer {
        schema,
        ranges: schema.numeric.iter().map(|a| a.range()).collect(),
        theta: interner.theta,
    }
}

/// Increase of IL* when `r` joins `g`, both measured against the group's
/// virtual generalization (LCA per categorical attribute, covering interval
/// per numeric attribute).
pub fn delta_il(g: &QidGroup, r: &SuperRecord, schema: &QidSchema) -> f64 {
    let theta = Theta::uniform(1.0).expect("1.0 is a valid threshold");
    let mut interner = Interner::default();
    let all: Vec<SuperRecord> = g.members.iter().chain(std::iter::once(r)).cloned().collect();
    let ps = profiles(&all, schema, &theta, &mut interner);
    let sc = scorer(schema, interner);
    let mut stats = sc.empty();
    for p in &ps[..ps.len() - 1] {
        sc.add(&mut stats, p);
    }
    sc.delta_il(&stats, &ps[ps.len() - 1])
}

/// Threshold stress after `r` joins `g`: the product over sensitive values of
/// `max(1, freq / θ)`. Equal to 1 when no threshold would be exceeded.
pub fn privacy_risk(g: &QidGroup, r: &SuperRecord, theta: &Theta, schema: &QidSchema) -> f64 {
    let mut interner = Interner::default();
    let all: Vec<SuperRecord> = g.members.iter().chain(std::iter::once(r)).cloned().collect();
    let ps = profiles(&all, schema, theta, &mut interner);
    let sc = scorer(schema, interner);
    let mut stats = sc.empty();
    for p in &ps[..ps.len() - 1] {
        sc.add(&mut stats, p);
    }
    sc.privacy_risk(&stats, &ps[ps.len() - 1])
}

/// Output of [`ncc_grouping`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub groups: Vec<QidGroup>,
    /// Records that fit no group without breaking a threshold.
    pub suppressed: Vec<SuperRecord>,
}

/// Candidate ordering: product, then risk, then input position.
fn better(a: (f64, f64, usize), b: (f64, f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

pub fn ncc_grouping(records: &[SuperRecord], split: &CaseSplit, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<Grouping> {
    let k = cfg.k;
    let new_idx: Vec<usize> = (0..records.len()).filter(|&i| split.is_new(&records[i].case_id)).collect();
    let old_idx: Vec<usize> = (0..records.len()).filter(|&i| !split.is_new(&records[i].case_id)).collect();
    if new_idx.len() < k {
        return Err(Error::Infeasible(format!(
            "{} new cases, at least k = {k} are needed to form one group",
            new_idx.len()
        )));
    }

    let mut interner = Interner::default();
    let ps = profiles(records, schema, &cfg.theta, &mut interner);
    let sc = scorer(schema, interner);

    // Phase 1: cores of new cases only.
    let mut pool: Vec<usize> = new_idx;
    let mut cores: Vec<(Vec<usize>, Stats)> = Vec::new();
    let mut leftovers: Vec<usize> = Vec::new();
    while pool.len() >= k {
        let seed = pool.remove(0);
        let mut members = vec![seed];
        let mut stats = sc.empty();
        sc.add(&mut stats, &ps[seed]);
        while !sc.passes(&stats, k) && !pool.is_empty() {
            let (pos, _) = pool
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let risk = sc.privacy_risk(&stats, &ps[i]);
                    (pos, (sc.delta_il(&stats, &ps[i]) * risk, risk, i))
                })
                .min_by(|a, b| better(a.1, b.1))
                .expect("pool is not empty");
            let i = pool.remove(pos);
            sc.add(&mut stats, &ps[i]);
            members.push(i);
        }
        if sc.passes(&stats, k) {
            cores.push((members, stats));
        } else {
            // The pool ran dry before the core satisfied its bounds.
            leftovers.extend(members);
            break;
        }
    }
    leftovers.extend(pool);
    leftovers.sort_unstable();

    if cores.is_empty() {
        return Err(Error::Infeasible(format!(
            "no core of {k} new cases satisfies the sensitive-value thresholds"
        )));
    }

    // Phase 2: attach leftover new cases, then old cases.
    let mut suppressed = Vec::new();
    for i in leftovers.into_iter().chain(old_idx) {
        let p = &ps[i];
        let best = cores
            .par_iter()
            .enumerate()
            .filter(|(_, (_, stats))| sc.within_theta(stats, Some(p)))
            .map(|(gi, (_, stats))| {
                let risk = sc.privacy_risk(stats, p);
                (sc.delta_il(stats, p) * risk, risk, gi)
            })
            .min_by(|a, b| better(*a, *b));
        match best {
            Some((_, _, gi)) => {
                let (members, stats) = &mut cores[gi];
                sc.add(stats, p);
                members.push(i);
            }
            None => suppressed.push(records[i].clone()),
        }
    }

    let groups = cores
        .into_iter()
        .map(|(members, _)| {
            let recs = members.iter().map(|&i| records[i].clone()).collect();
            QidGroup::from_split(recs, split, schema)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Grouping { groups, suppressed })
}
