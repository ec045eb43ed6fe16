//! File formats: record CSVs, taxonomy/schema/theta JSON, background rules
//! and the release-history directory.
//!
//! Records are UTF-8 CSV with a header row. Multivalued sensitive cells are
//! `;`-separated. Published numeric values are points or `L-U` intervals.
//! Every write goes to a temporary file in the target directory and is
//! renamed into place, so a failed run never leaves partial output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attacks::{BackgroundRule, QidConstraint};
use crate::error::{Error, Result};
use crate::model::{
    CategoricalAttr, NumValue, NumericAttr, PrivacyConfig, PublishedRecord, QidSchema, Record, Release,
    ReleaseHistory, SensitiveSet, Theta, Variant, CASE_ID_COLUMN, GROUP_COLUMN,
};
use crate::taxonomy::{NodeSpec, TaxonomyTree};

pub const SCHEMA_FILE: &str = "schema.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_TAXONOMY_DIR: &str = "taxonomy";
const MULTI_SEP: char = ';';

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

// ---------------------------------------------------------------------------
// Taxonomies, schema, theta

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFile {
    name: String,
    nodes: Vec<NodeSpec>,
}

pub fn parse_taxonomy(bytes: &[u8], path: &Path) -> Result<TaxonomyTree> {
    let file: TaxonomyFile = serde_json::from_slice(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    TaxonomyTree::from_nodes(file.name, &file.nodes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_taxonomy(path: &Path) -> Result<TaxonomyTree> {
    parse_taxonomy(&read_file(path)?, path)
}

pub fn taxonomy_to_json(tree: &TaxonomyTree) -> Result<Vec<u8>> {
    let file = TaxonomyFile {
        name: tree.name().to_owned(),
        nodes: tree.to_specs(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn store_taxonomy(path: &Path, tree: &TaxonomyTree) -> Result<()> {
    write_atomic(path, &taxonomy_to_json(tree)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    categorical: Vec<CategoricalEntry>,
    numeric: Vec<NumericEntry>,
    sensitive: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CategoricalEntry {
    name: String,
    taxonomy: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct NumericEntry {
    name: String,
    min: f64,
    max: f64,
}

/// Loads `schema.json` from `dir`; taxonomy paths are relative to `dir`.
pub fn load_schema(dir: &Path) -> Result<QidSchema> {
    let path = dir.join(SCHEMA_FILE);
    let file: SchemaFile = read_json(&path)?;
    let categorical = file
        .categorical
        .into_iter()
        .map(|c| {
            let tree = load_taxonomy(&dir.join(&c.taxonomy))?;
            Ok(CategoricalAttr {
                name: c.name,
                tree: Arc::new(tree),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let numeric = file
        .numeric
        .into_iter()
        .map(|n| NumericAttr {
            name: n.name,
            min: n.min,
            max: n.max,
        })
        .collect();
    QidSchema::new(categorical, numeric, file.sensitive).map_err(|e| Error::format(&path, e.to_string()))
}

fn taxonomy_file_name(attr: &str) -> String {
    let stem: String = attr
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("{stem}.json")
}

/// Writes `schema.json` and one taxonomy file per categorical attribute.
pub fn store_schema(dir: &Path, schema: &QidSchema) -> Result<()> {
    let mut categorical = Vec::new();
    for attr in &schema.categorical {
        let file = taxonomy_file_name(&attr.name);
        store_taxonomy(&dir.join(&file), &attr.tree)?;
        categorical.push(CategoricalEntry {
            name: attr.name.clone(),
            taxonomy: file,
        });
    }
    let file = SchemaFile {
        categorical,
        numeric: schema
            .numeric
            .iter()
            .map(|n| NumericEntry {
                name: n.name.clone(),
                min: n.min,
                max: n.max,
            })
            .collect(),
        sensitive: schema.sensitive.clone(),
    };
    write_json(&dir.join(SCHEMA_FILE), &file)
}

/// Theta files are flat maps from sensitive value to threshold with a
/// required `default` entry.
pub fn parse_theta(bytes: &[u8], path: &Path) -> Result<Theta> {
    let mut map: BTreeMap<String, f64> =
        serde_json::from_slice(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let default = map
        .remove("default")
        .ok_or_else(|| Error::format(path, "missing required `default` threshold"))?;
    Theta::new(default, map).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_theta(path: &Path) -> Result<Theta> {
    parse_theta(&read_file(path)?, path)
}

pub fn theta_to_json(theta: &Theta) -> Result<Vec<u8>> {
    let mut map = theta.per_value.clone();
    map.insert("default".into(), theta.default);
    let mut bytes = serde_json::to_vec_pretty(&map)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RuleEntry {
    Categorical { value: String, attr: String, node: String },
    Numeric { value: String, attr: String, min: f64, max: f64 },
}

/// Background rules: a JSON array of
/// `{"value": V, "attr": A, "node": N}` (holders of V have A under N) or
/// `{"value": V, "attr": A, "min": L, "max": U}` (holders of V have A in [L, U]).
pub fn parse_background(bytes: &[u8], path: &Path, schema: &QidSchema) -> Result<Vec<BackgroundRule>> {
    let entries: Vec<RuleEntry> = serde_json::from_slice(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    entries
        .into_iter()
        .map(|e| match e {
            RuleEntry::Categorical { value, attr, node } => {
                let a = schema
                    .categorical_index(&attr)
                    .ok_or_else(|| Error::format(path, format!("`{attr}` is not a categorical attribute")))?;
                let node = schema.categorical[a].tree.node(&node)?;
                Ok(BackgroundRule {
                    value,
                    constraint: QidConstraint::Categorical { attr: a, node },
                })
            }
            RuleEntry::Numeric { value, attr, min, max } => {
                let a = schema
                    .numeric_index(&attr)
                    .ok_or_else(|| Error::format(path, format!("`{attr}` is not a numeric attribute")))?;
                if !(min <= max) {
                    return Err(Error::format(path, format!("rule for `{value}` has min > max")));
                }
                Ok(BackgroundRule {
                    value,
                    constraint: QidConstraint::Numeric { attr: a, min, max },
                })
            }
        })
        .collect()
}

pub fn load_background(path: &Path, schema: &QidSchema) -> Result<Vec<BackgroundRule>> {
    parse_background(&read_file(path)?, path, schema)
}

pub fn background_to_json(rules: &[BackgroundRule], schema: &QidSchema) -> Result<Vec<u8>> {
    let entries: Vec<RuleEntry> = rules
        .iter()
        .map(|r| match r.constraint {
            QidConstraint::Categorical { attr, node } => RuleEntry::Categorical {
                value: r.value.clone(),
                attr: schema.categorical[attr].name.clone(),
                node: schema.categorical[attr].tree.node_name(node).to_owned(),
            },
            QidConstraint::Numeric { attr, min, max } => RuleEntry::Numeric {
                value: r.value.clone(),
                attr: schema.numeric[attr].name.clone(),
                min,
                max,
            },
        })
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&entries)?;
    bytes.push(b'\n');
    Ok(bytes)
}

// ---------------------------------------------------------------------------
// Record CSVs

/// A raw row excluded during ingestion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub case_id: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRecords {
    pub records: Vec<Record>,
    pub rejections: Vec<Rejection>,
}

/// Column positions of each schema attribute in a CSV header.
struct Layout {
    case_id: usize,
    gid: Option<usize>,
    cat: Vec<usize>,
    num: Vec<usize>,
    sensitive: Vec<usize>,
    width: usize,
}

impl Layout {
    fn from_header(header: &csv::StringRecord, schema: &QidSchema, allow_gid: bool, path: &Path) -> Result<Self> {
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for (i, h) in header.iter().enumerate() {
            if pos.insert(h, i).is_some() {
                return Err(Error::format(path, format!("column `{h}` appears twice in the header")));
            }
        }
        let mut take = |name: &str| {
            pos.remove(name)
                .ok_or_else(|| Error::format(path, format!("header lacks column `{name}`")))
        };
        let case_id = take(CASE_ID_COLUMN)?;
        let cat = schema.categorical.iter().map(|a| take(&a.name)).collect::<Result<Vec<_>>>()?;
        let num = schema.numeric.iter().map(|a| take(&a.name)).collect::<Result<Vec<_>>>()?;
        let sensitive = schema.sensitive.iter().map(|s| take(s)).collect::<Result<Vec<_>>>()?;
        let gid = if allow_gid { pos.remove(GROUP_COLUMN) } else { None };
        if let Some(extra) = pos.keys().next() {
            return Err(Error::format(path, format!("header has unexpected column `{extra}`")));
        }
        Ok(Self {
            case_id,
            gid,
            cat,
            num,
            sensitive,
            width: header.len(),
        })
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn split_multi(cell: &str) -> SensitiveSet {
    cell.split(MULTI_SEP)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

fn join_multi(set: &SensitiveSet) -> String {
    set.iter().map(String::as_str).collect::<Vec<_>>().join(";")
}

fn parse_raw_row(row: &csv::StringRecord, layout: &Layout, schema: &QidSchema) -> std::result::Result<Record, String> {
    if row.len() != layout.width {
        return Err(format!("expected {} cells, found {}", layout.width, row.len()));
    }
    let cell = |i: usize| row.get(i).unwrap_or("");
    let case_id = cell(layout.case_id);
    if case_id.is_empty() {
        return Err(format!("empty `{CASE_ID_COLUMN}`"));
    }
    let mut cat = Vec::with_capacity(layout.cat.len());
    for (attr, &i) in schema.categorical.iter().zip(&layout.cat) {
        let v = cell(i);
        if v.is_empty() {
            return Err(format!("missing value for `{}`", attr.name));
        }
        cat.push(attr.tree.lookup(v).ok_or_else(|| format!("`{v}` is not a node of `{}`", attr.name))?);
    }
    let mut num = Vec::with_capacity(layout.num.len());
    for (attr, &i) in schema.numeric.iter().zip(&layout.num) {
        let v = cell(i);
        if v.is_empty() {
            return Err(format!("missing value for `{}`", attr.name));
        }
        let x: f64 = v
            .parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| format!("`{v}` is not a number for `{}`", attr.name))?;
        num.push(x);
    }
    let mut sensitive = Vec::with_capacity(layout.sensitive.len());
    for (name, &i) in schema.sensitive.iter().zip(&layout.sensitive) {
        let set = split_multi(cell(i));
        if set.is_empty() {
            return Err(format!("missing value for `{name}`"));
        }
        sensitive.push(set);
    }
    Ok(Record {
        case_id: case_id.to_owned(),
        cat,
        num,
        sensitive,
    })
}

/// Parses raw records. Rows with an empty declared cell, an unknown
/// categorical value or an unparseable number are excluded and reported.
pub fn read_records<R: Read>(reader: R, schema: &QidSchema, path: &Path) -> Result<LoadedRecords> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let layout = Layout::from_header(&header, schema, false, path)?;
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(Error::format(path, e.to_string())),
        }
        let line = row.position().map_or(0, |p| p.line());
        match parse_raw_row(&row, &layout, schema) {
            Ok(r) => records.push(r),
            Err(reason) => rejections.push(Rejection {
                line,
                case_id: row.get(layout.case_id).filter(|s| !s.is_empty()).map(str::to_owned),
                reason,
            }),
        }
    }
    Ok(LoadedRecords { records, rejections })
}

pub fn load_records(path: &Path, schema: &QidSchema) -> Result<LoadedRecords> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(std::io::BufReader::new(file), schema, path)
}

fn finish_csv(wtr: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    wtr.into_inner().map_err(|e| Error::Argument(format!("csv buffer: {e}")))
}

pub fn records_to_csv(records: &[Record], schema: &QidSchema) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![CASE_ID_COLUMN];
    header.extend(schema.columns());
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![r.case_id.clone()];
        row.extend(r.cat.iter().zip(&schema.categorical).map(|(&v, a)| a.tree.node_name(v).to_owned()));
        row.extend(r.num.iter().map(|v| v.to_string()));
        row.extend(r.sensitive.iter().map(join_multi));
        wtr.write_record(&row)?;
    }
    finish_csv(wtr)
}

pub fn store_records(path: &Path, records: &[Record], schema: &QidSchema) -> Result<()> {
    write_atomic(path, &records_to_csv(records, schema)?)
}

/// Serializes a published release: `case_id`, `gid`, then schema columns.
pub fn release_to_csv(release: &Release, schema: &QidSchema) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![CASE_ID_COLUMN, GROUP_COLUMN];
    header.extend(schema.columns());
    wtr.write_record(&header)?;
    for r in &release.records {
        let mut row = vec![r.case_id.clone(), r.gid.map(|g| g.to_string()).unwrap_or_default()];
        row.extend(r.cat.iter().zip(&schema.categorical).map(|(&v, a)| a.tree.node_name(v).to_owned()));
        row.extend(r.num.iter().map(|v| v.to_string()));
        row.extend(r.sensitive.iter().map(join_multi));
        wtr.write_record(&row)?;
    }
    finish_csv(wtr)
}

pub fn store_release(path: &Path, release: &Release, schema: &QidSchema) -> Result<()> {
    write_atomic(path, &release_to_csv(release, schema)?)
}

/// Parses a published release. The `gid` column is optional; categorical
/// cells may name any taxonomy node and numeric cells may be intervals.
/// Unlike raw ingestion, any malformed row is a format error.
pub fn read_release<R: Read>(reader: R, index: u32, schema: &QidSchema, path: &Path) -> Result<Release> {
    let mut rdr = csv_reader(reader);
    let header = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let layout = Layout::from_header(&header, schema, true, path)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::format(path, format!("line {line}: {reason}"));
        if row.len() != layout.width {
            return Err(bad(format!("expected {} cells, found {}", layout.width, row.len())));
        }
        let cell = |i: usize| row.get(i).unwrap_or("");
        let case_id = cell(layout.case_id);
        if case_id.is_empty() {
            return Err(bad(format!("empty `{CASE_ID_COLUMN}`")));
        }
        let gid = match layout.gid.map(cell).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => Some(s.parse::<u32>().map_err(|_| bad(format!("`{s}` is not a group id")))?),
        };
        let cat = schema
            .categorical
            .iter()
            .zip(&layout.cat)
            .map(|(a, &i)| {
                a.tree
                    .lookup(cell(i))
                    .ok_or_else(|| bad(format!("`{}` is not a node of `{}`", cell(i), a.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let num = schema
            .numeric
            .iter()
            .zip(&layout.num)
            .map(|(a, &i)| {
                NumValue::parse(cell(i)).ok_or_else(|| bad(format!("`{}` is not a value for `{}`", cell(i), a.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let sensitive = layout.sensitive.iter().map(|&i| split_multi(cell(i))).collect();
        records.push(PublishedRecord {
            case_id: case_id.to_owned(),
            gid,
            cat,
            num,
            sensitive,
        });
    }
    Ok(Release { index, records })
}

pub fn load_release(path: &Path, index: u32, schema: &QidSchema) -> Result<Release> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_release(std::io::BufReader::new(file), index, schema, path)
}

// ---------------------------------------------------------------------------
// Release history

/// Parameters recorded for each committed release.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseConfig {
    pub variant: Variant,
    pub k: usize,
    pub epsilon: f64,
    pub theta: Theta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifespan: Option<usize>,
    pub seed: u64,
}

impl From<&PrivacyConfig> for ReleaseConfig {
    fn from(c: &PrivacyConfig) -> Self {
        Self {
            variant: c.variant,
            k: c.k,
            epsilon: c.epsilon,
            theta: c.theta.clone(),
            lifespan: c.lifespan,
            seed: c.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u32,
    /// Anonymized release file, relative to the history directory.
    pub published: String,
    /// Raw input of the release, kept for auditing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ReleaseConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub releases: Vec<ManifestEntry>,
}

/// A history directory: `manifest.json`, `R_<i>.csv` published releases,
/// `D_<i>.csv` raw inputs and a `taxonomy/` copy of the schema.
#[derive(Clone, Debug)]
pub struct History {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub releases: ReleaseHistory,
    pub raw: BTreeMap<u32, Vec<Record>>,
}

impl History {
    pub fn schema_dir(dir: &Path) -> PathBuf {
        dir.join(HISTORY_TAXONOMY_DIR)
    }

    /// Opens `dir`; a missing directory or manifest is an empty history.
    pub fn open(dir: &Path, schema: &QidSchema) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = if manifest_path.exists() {
            read_json(&manifest_path)?
        } else {
            Manifest::default()
        };
        let mut releases = Vec::with_capacity(manifest.releases.len());
        let mut raw = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for e in &manifest.releases {
            if !seen.insert(e.index) {
                return Err(Error::format(&manifest_path, format!("release {} listed twice", e.index)));
            }
            releases.push(load_release(&dir.join(&e.published), e.index, schema)?);
            if let Some(r) = &e.raw {
                let path = dir.join(r);
                let loaded = load_records(&path, schema)?;
                if let Some(rej) = loaded.rejections.first() {
                    return Err(Error::format(&path, format!("line {}: {}", rej.line, rej.reason)));
                }
                raw.insert(e.index, loaded.records);
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            releases: ReleaseHistory::new(releases)?,
            raw,
        })
    }

    /// Stores the release and its raw input, then the manifest. The schema
    /// copy is written on the first commit.
    pub fn commit(&mut self, raw: &[Record], release: Release, cfg: &PrivacyConfig, schema: &QidSchema) -> Result<()> {
        let index = release.index;
        if index != self.releases.next_index() {
            return Err(Error::DataIntegrity(format!(
                "release {index} does not follow the history (next is {})",
                self.releases.next_index()
            )));
        }
        let schema_dir = Self::schema_dir(&self.dir);
        if !schema_dir.join(SCHEMA_FILE).exists() {
            store_schema(&schema_dir, schema)?;
        }
        let published = format!("R_{index}.csv");
        let raw_name = format!("D_{index}.csv");
        store_release(&self.dir.join(&published), &release, schema)?;
        store_records(&self.dir.join(&raw_name), raw, schema)?;
        let mut manifest = self.manifest.clone();
        manifest.releases.push(ManifestEntry {
            index,
            published,
            raw: Some(raw_name),
            config: Some(cfg.into()),
        });
        write_json(&self.dir.join(MANIFEST_FILE), &manifest)?;
        self.manifest = manifest;
        self.raw.insert(index, raw.to_vec());
        self.releases.push(release)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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
            vec![
                NumericAttr { name: "Age".into(), min: 0.0, max: 120.0 },
                NumericAttr { name: "Weight".into(), min: 20.0, max: 200.0 },
            ],
            vec!["Disease".into()],
        )
        .unwrap()
    }

    const P: &str = "test.csv";

    #[test]
    fn multivalued_cell_splits_on_semicolon() {
        let s = schema();
        let csv = "case_id,Gender,Age,Weight,Disease\n7,Male,35,72,Diabetes;Flu\n";
        let got = read_records(csv.as_bytes(), &s, Path::new(P)).unwrap();
        assert!(got.rejections.is_empty());
        let r = &got.records[0];
        assert_eq!(r.case_id, "7");
        assert_eq!(r.num, vec![35.0, 72.0]);
        let want: SensitiveSet = ["Diabetes", "Flu"].into_iter().map(String::from).collect();
        assert_eq!(r.sensitive[0], want);
    }

    #[test]
    fn rows_with_missing_or_bad_cells_are_rejected() {
        let s = schema();
        let csv = "case_id,Gender,Age,Weight,Disease\n1,Male,35,,Flu\n2,Male,abc,70,Flu\n3,Robot,35,70,Flu\n4,Female,30,60,HIV\n";
        let got = read_records(csv.as_bytes(), &s, Path::new(P)).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.rejections.len(), 3);
        assert_eq!(got.rejections[0].line, 2);
        assert_eq!(got.rejections[1].case_id.as_deref(), Some("2"));
    }

    #[test]
    fn empty_body_gives_no_records() {
        let got = read_records("case_id,Gender,Age,Weight,Disease\n".as_bytes(), &schema(), Path::new(P)).unwrap();
        assert!(got.records.is_empty() && got.rejections.is_empty());
    }

    #[test]
    fn header_mismatch_is_a_format_error() {
        let err = read_records("case_id,Gender,Age,Disease\n".as_bytes(), &schema(), Path::new(P)).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let err = read_records("case_id,Gender,Age,Weight,Disease,Extra\n".as_bytes(), &schema(), Path::new(P)).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn theta_requires_default() {
        let t = parse_theta(br#"{"default":0.4,"HIV":0.2}"#, Path::new(P)).unwrap();
        assert_eq!(t.get("HIV"), 0.2);
        assert_eq!(t.get("Flu"), 0.4);
        assert!(matches!(parse_theta(br#"{"HIV":0.2}"#, Path::new(P)), Err(Error::Format { .. })));
        assert!(parse_theta(br#"{"default":1.5}"#, Path::new(P)).is_err());
    }

    #[test]
    fn taxonomy_errors_surface_as_format_errors() {
        let dup = br#"{"name":"T","nodes":[{"name":"A"},{"name":"B","parent":"A"},{"name":"B","parent":"A"}]}"#;
        assert!(matches!(parse_taxonomy(dup, Path::new(P)), Err(Error::Format { .. })));
        let two_roots = br#"{"name":"T","nodes":[{"name":"A"},{"name":"B"}]}"#;
        assert!(matches!(parse_taxonomy(two_roots, Path::new(P)), Err(Error::Format { .. })));
    }

    #[test]
    fn release_csv_round_trips_byte_identically() {
        let s = schema();
        let csv = "case_id,gid,Gender,Age,Weight,Disease\n1,0,Any,30-45,72.5,Diabetes;Flu\n2,0,Male,-3.25,60-60,HIV\n";
        let r = read_release(csv.as_bytes(), 1, &s, Path::new(P)).unwrap();
        assert_eq!(r.records[0].num[0], NumValue::Interval { lo: 30.0, hi: 45.0 });
        assert_eq!(r.records[1].num[0], NumValue::Point(-3.25));
        assert_eq!(r.records[1].num[1], NumValue::Interval { lo: 60.0, hi: 60.0 });
        assert_eq!(String::from_utf8(release_to_csv(&r, &s).unwrap()).unwrap(), csv);
    }

    #[test]
    fn release_without_gid_column_loads() {
        let csv = "case_id,Gender,Age,Weight,Disease\n1,Any,30-45,70,Flu\n";
        let r = read_release(csv.as_bytes(), 2, &schema(), Path::new(P)).unwrap();
        assert_eq!(r.records[0].gid, None);
    }

    #[test]
    fn background_rules_resolve_against_schema() {
        let s = schema();
        let json = br#"[{"value":"Breast Cancer","attr":"Gender","node":"Female"},{"value":"COPD","attr":"Age","min":60,"max":120}]"#;
        let rules = parse_background(json, Path::new(P), &s).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(
            rules[1].constraint,
            QidConstraint::Numeric { attr: 0, min: 60.0, max: 120.0 }
        );
        let back = background_to_json(&rules, &s).unwrap();
        assert_eq!(parse_background(&back, Path::new(P), &s).unwrap(), rules);
        assert!(parse_background(br#"[{"value":"X","attr":"Disease","node":"Y"}]"#, Path::new(P), &s).is_err());
    }
}
