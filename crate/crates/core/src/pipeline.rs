//! End-to-end anonymization of one release.
//!
//! All variants merge same-case reports, classify cases against the history
//! and run new-case-core grouping. They then differ in how a group's QIDs are
//! published:
//!
//! * `num`: categorical values cover earlier clones and are generalized to the
//!   group LCA; groups with equal generalizations merge; numeric values get
//!   Laplace noise.
//! * `all`: groups merge on their virtual generalization without rewriting
//!   values; numeric values get Laplace noise and each categorical attribute
//!   is replaced by one exponential-mechanism draw per group.
//! * `baseline`: covering, then plain generalization (LCA and covering
//!   interval) with no noise.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grouping::{ncc_grouping, QidGroup};
use crate::mechanisms::{group_domain, perturb_numeric_group, ExponentialCandidates, NoiseStream};
use crate::model::{
    classify_cases, dedup, merge_super_records, NumValue, PrivacyConfig, PublishedRecord, QidSchema, Record, Release,
    ReleaseHistory, Variant,
};
use crate::taxonomy::NodeId;

#[derive(Clone, Debug, PartialEq)]
pub struct AnonymizeOutcome {
    pub release: Release,
    pub groups: Vec<QidGroup>,
    pub suppressed_cases: Vec<String>,
    pub suppressed_records: usize,
    pub duplicates_dropped: usize,
}

/// Generalizes each old case's categorical values so they cover the values
/// published for its earliest clone in the history window.
pub fn qidc_covering(
    groups: &mut [QidGroup],
    history: &ReleaseHistory,
    lifespan: Option<usize>,
    schema: &QidSchema,
) -> Result<()> {
    let window = history.window(lifespan);
    let mut earliest: HashMap<&str, Vec<NodeId>> = HashMap::new();
    for release in window {
        let mut here: HashMap<&str, Vec<NodeId>> = HashMap::new();
        for p in &release.records {
            if earliest.contains_key(p.case_id.as_str()) {
                continue;
            }
            if p.cat.len() != schema.categorical.len() {
                return Err(Error::DataIntegrity(format!(
                    "release {} row for case `{}` has {} categorical values, expected {}",
                    release.index,
                    p.case_id,
                    p.cat.len(),
                    schema.categorical.len()
                )));
            }
            match here.get_mut(p.case_id.as_str()) {
                None => {
                    for (a, &v) in p.cat.iter().enumerate() {
                        if v.index() >= schema.categorical[a].tree.len() {
                            return Err(Error::DataIntegrity(format!(
                                "case `{}` in release {} references an unknown `{}` node",
                                p.case_id, release.index, schema.categorical[a].name
                            )));
                        }
                    }
                    here.insert(p.case_id.as_str(), p.cat.clone());
                }
                Some(acc) => {
                    for (a, v) in acc.iter_mut().enumerate() {
                        *v = schema.categorical[a].tree.lca(*v, p.cat[a]);
                    }
                }
            }
        }
        earliest.extend(here);
    }

    for g in groups.iter_mut() {
        let mut changed = false;
        for (m, &is_new) in g.members.iter_mut().zip(&g.is_new) {
            if is_new {
                continue;
            }
            let Some(clone) = earliest.get(m.case_id.as_str()) else {
                continue;
            };
            for (a, attr) in schema.categorical.iter().enumerate() {
                let covered = attr.tree.lca(m.cat[a], clone[a]);
                if covered != m.cat[a] {
                    m.cat[a] = covered;
                    changed = true;
                }
            }
        }
        if changed {
            g.refresh(schema)?;
        }
    }
    Ok(())
}

/// Merges groups whose virtual categorical generalization is identical,
/// keeping the position of the first group of each tuple.
fn merge_identical(groups: Vec<QidGroup>, schema: &QidSchema) -> Result<Vec<QidGroup>> {
    let mut out: Vec<QidGroup> = Vec::with_capacity(groups.len());
    let mut slot: HashMap<Vec<NodeId>, usize> = HashMap::new();
    for g in groups {
        match slot.get(&g.virtual_cat) {
            Some(&i) => out[i].absorb(g, schema)?,
            None => {
                slot.insert(g.virtual_cat.clone(), out.len());
                out.push(g);
            }
        }
    }
    Ok(out)
}

/// Rewrites members' categorical values to the group LCA, then merges groups
/// with identical generalized tuples.
pub fn qidc_gen_and_merge(mut groups: Vec<QidGroup>, schema: &QidSchema) -> Result<Vec<QidGroup>> {
    for g in &mut groups {
        let lca = g.virtual_cat.clone();
        for m in &mut g.members {
            m.cat.clone_from(&lca);
        }
    }
    merge_identical(groups, schema)
}

/// Merges groups with identical virtual generalization; member values stay raw.
pub fn virtual_gen_and_merge(groups: Vec<QidGroup>, schema: &QidSchema) -> Result<Vec<QidGroup>> {
    merge_identical(groups, schema)
}

/// Published QIDs for one group: categorical values shared by all members,
/// numeric values per member.
#[derive(Clone, Debug, PartialEq)]
struct Treatment {
    cat: Vec<NodeId>,
    num: Vec<Vec<NumValue>>,
}

fn laplace_treatment(g: &QidGroup, gid: usize, index: u32, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<Vec<Vec<NumValue>>> {
    let mut per_member = vec![Vec::with_capacity(schema.numeric.len()); g.len()];
    for (a, attr) in schema.numeric.iter().enumerate() {
        let mut stream = NoiseStream::new(cfg.seed, index, gid as u64, &format!("lap:{}", attr.name));
        let noised = perturb_numeric_group(g, a, attr, cfg.epsilon, &mut stream)?;
        for (m, v) in noised.into_iter().enumerate() {
            per_member[m].push(NumValue::Point(v));
        }
    }
    Ok(per_member)
}

fn treat(g: &QidGroup, gid: usize, index: u32, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<Treatment> {
    match cfg.variant {
        Variant::Num => Ok(Treatment {
            cat: g.virtual_cat.clone(),
            num: laplace_treatment(g, gid, index, cfg, schema)?,
        }),
        Variant::All => {
            let num = laplace_treatment(g, gid, index, cfg, schema)?;
            let cat = schema
                .categorical
                .iter()
                .enumerate()
                .map(|(a, attr)| {
                    let dom = group_domain(g, a);
                    let mut stream = NoiseStream::new(cfg.seed, index, gid as u64, &format!("exp:{}", attr.name));
                    ExponentialCandidates::new(&dom, &attr.tree)?.choose(cfg.epsilon, &mut stream)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Treatment { cat, num })
        }
        Variant::Baseline => {
            let interval: Vec<NumValue> = g
                .virtual_num
                .iter()
                .map(|&(lo, hi)| NumValue::Interval { lo, hi })
                .collect();
            Ok(Treatment {
                cat: g.virtual_cat.clone(),
                num: vec![interval; g.len()],
            })
        }
    }
}

/// Expands super records back into their reports, stamped with the group's
/// treatment, and restores input order.
fn down_pose(records: &[&Record], groups: &[QidGroup], treatments: &[Treatment], index: u32) -> Release {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        positions.entry(r.case_id.as_str()).or_default().push(i);
    }
    let mut rows: Vec<(usize, PublishedRecord)> = Vec::with_capacity(records.len());
    for (gid, (g, t)) in groups.iter().zip(treatments).enumerate() {
        for (m, member) in g.members.iter().enumerate() {
            let pos = &positions[member.case_id.as_str()];
            for (j, c) in member.constituents.iter().enumerate() {
                rows.push((
                    pos[j],
                    PublishedRecord {
                        case_id: c.case_id.clone(),
                        gid: Some(gid as u32),
                        cat: t.cat.clone(),
                        num: t.num[m].clone(),
                        sensitive: c.sensitive.clone(),
                    },
                ));
            }
        }
    }
    rows.sort_by_key(|(p, _)| *p);
    Release {
        index,
        records: rows.into_iter().map(|(_, r)| r).collect(),
    }
}

fn run(records: &[Record], history: &ReleaseHistory, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<AnonymizeOutcome> {
    cfg.validate()?;
    let unique = dedup(records);
    let duplicates_dropped = records.len() - unique.len();
    let supers = merge_super_records(records, schema)?;
    let split = classify_cases(&supers, history, cfg.lifespan);
    let grouping = ncc_grouping(&supers, &split, cfg, schema)?;
    let mut groups = grouping.groups;

    groups = match cfg.variant {
        Variant::Num => {
            qidc_covering(&mut groups, history, cfg.lifespan, schema)?;
            qidc_gen_and_merge(groups, schema)?
        }
        Variant::All => virtual_gen_and_merge(groups, schema)?,
        Variant::Baseline => {
            qidc_covering(&mut groups, history, cfg.lifespan, schema)?;
            groups
        }
    };

    let index = history.next_index();
    let treatments = groups
        .par_iter()
        .enumerate()
        .map(|(gid, g)| treat(g, gid, index, cfg, schema))
        .collect::<Result<Vec<_>>>()?;
    let release = down_pose(&unique, &groups, &treatments, index);

    Ok(AnonymizeOutcome {
        release,
        groups,
        suppressed_records: grouping.suppressed.iter().map(|s| s.constituents.len()).sum(),
        suppressed_cases: grouping.suppressed.into_iter().map(|s| s.case_id).collect(),
        duplicates_dropped,
    })
}

fn require(cfg: &PrivacyConfig, variant: Variant) -> Result<()> {
    if cfg.variant == variant {
        Ok(())
    } else {
        Err(Error::Argument(format!("configuration is for variant `{}`, not `{variant}`", cfg.variant)))
    }
}

pub fn anonymize_num(records: &[Record], history: &ReleaseHistory, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<AnonymizeOutcome> {
    require(cfg, Variant::Num)?;
    run(records, history, cfg, schema)
}

pub fn anonymize_all(records: &[Record], history: &ReleaseHistory, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<AnonymizeOutcome> {
    require(cfg, Variant::All)?;
    run(records, history, cfg, schema)
}

pub fn anonymize_baseline(
    records: &[Record],
    history: &ReleaseHistory,
    cfg: &PrivacyConfig,
    schema: &QidSchema,
) -> Result<AnonymizeOutcome> {
    require(cfg, Variant::Baseline)?;
    run(records, history, cfg, schema)
}

/// Dispatches on `cfg.variant`.
pub fn anonymize(records: &[Record], history: &ReleaseHistory, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<AnonymizeOutcome> {
    run(records, history, cfg, schema)
}
