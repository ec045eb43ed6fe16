//! Command-line front end: `anonymize`, `audit`, `metrics`, `signal`, `synth`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use srs_anon::attacks::{audit_series, AuditConfig, DEFAULT_COVERAGE_FRACTION};
use srs_anon::io::{self, History, LoadedRecords};
use srs_anon::metrics::{evaluate, signal_bias, NumericFilter, SignalQuery};
use srs_anon::model::{PrivacyConfig, QidSchema, Variant};
use srs_anon::pipeline::anonymize;
use srs_anon::synth::{synth_generate, write_series, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "srs-anon", version, about = "Anonymize periodically released adverse-event report tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Anonymize one release and append it to the history.
    Anonymize(AnonymizeArgs),
    /// Run backward, forward and latest attacks over a history.
    Audit(AuditArgs),
    /// Distortion and disclosure-risk metrics of an anonymized table.
    Metrics(MetricsArgs),
    /// Drug-reaction PRR before and after anonymization.
    Signal(SignalArgs),
    /// Generate a synthetic raw release series.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    #[arg(long)]
    pub variant: Variant,
    #[arg(long)]
    pub k: usize,
    /// Privacy budget; required by the `num` and `all` variants.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub theta: PathBuf,
    /// Directory holding `schema.json` and the taxonomy files.
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
    /// Required by the `num` and `all` variants.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of recent releases that make a case old (default: all).
    #[arg(long)]
    pub lifespan: Option<usize>,
    #[arg(long)]
    pub json: bool,
    pub input: PathBuf,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Schema directory (default: HISTORY_DIR/taxonomy).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_COVERAGE_FRACTION)]
    pub coverage_fraction: f64,
    #[arg(long)]
    pub json: bool,
    pub history: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub anonymized: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SignalArgs {
    /// Drug value, optionally qualified as `Attr=Value`.
    #[arg(long)]
    pub drug: String,
    /// Reaction value, optionally qualified as `Attr=Value`.
    #[arg(long)]
    pub reaction: String,
    /// Numeric filter such as `Weight>60`.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub anonymized: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit status: 0 on success, 2 on usage errors, 1 otherwise.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Anonymize(a) => cmd_anonymize(a, out),
        Command::Audit(a) => cmd_audit(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Signal(a) => cmd_signal(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn load_schema(dir: &Path) -> Result<QidSchema> {
    io::load_schema(dir).with_context(|| format!("loading schema from {}", dir.display()))
}

fn load_clean(path: &Path, schema: &QidSchema) -> Result<LoadedRecords> {
    let loaded = io::load_records(path, schema)?;
    for r in &loaded.rejections {
        eprintln!(
            "rejected {}:{} ({}): {}",
            path.display(),
            r.line,
            r.case_id.as_deref().unwrap_or("?"),
            r.reason
        );
    }
    Ok(loaded)
}

fn cmd_anonymize(a: AnonymizeArgs, out: &mut dyn Write) -> Result<()> {
    let (epsilon, seed) = match (a.variant.is_randomized(), a.epsilon, a.seed) {
        (true, Some(e), Some(s)) => (e, s),
        (true, None, _) => return Err(UsageError(format!("--epsilon is required for variant `{}`", a.variant)).into()),
        (true, _, None) => {
            return Err(UsageError(format!("--seed is required for variant `{}` so runs are reproducible", a.variant)).into())
        }
        (false, e, s) => (e.unwrap_or(1.0), s.unwrap_or(0)),
    };
    let schema = load_schema(&a.taxonomy)?;
    let theta = io::load_theta(&a.theta)?;
    let cfg = PrivacyConfig::new(a.k, theta, epsilon, a.variant, seed)?.with_lifespan(a.lifespan)?;
    let loaded = load_clean(&a.input, &schema)?;
    let mut history = History::open(&a.history, &schema)?;

    let outcome = anonymize(&loaded.records, &history.releases, &cfg, &schema)?;
    let bytes = io::release_to_csv(&outcome.release, &schema)?;
    io::write_atomic(&a.output, &bytes)?;
    let index = outcome.release.index;
    let published = outcome.release.records.len();
    history.commit(&loaded.records, outcome.release, &cfg, &schema)?;

    if a.json {
        let summary = serde_json::json!({
            "release": index,
            "variant": a.variant,
            "input_rows": loaded.records.len() + loaded.rejections.len(),
            "rejected_rows": loaded.rejections.len(),
            "duplicate_rows": outcome.duplicates_dropped,
            "published_rows": published,
            "groups": outcome.groups.len(),
            "suppressed_rows": outcome.suppressed_records,
            "suppressed_cases": outcome.suppressed_cases,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    } else {
        writeln!(
            out,
            "release {index} ({}): {} rows read, {} rejected, {} duplicates dropped, {} published in {} groups, {} suppressed",
            a.variant,
            loaded.records.len() + loaded.rejections.len(),
            loaded.rejections.len(),
            outcome.duplicates_dropped,
            published,
            outcome.groups.len(),
            outcome.suppressed_records
        )?;
    }
    Ok(())
}

fn cmd_audit(a: AuditArgs, out: &mut dyn Write) -> Result<()> {
    let schema_dir = a.taxonomy.unwrap_or_else(|| History::schema_dir(&a.history));
    let schema = load_schema(&schema_dir)?;
    let theta = io::load_theta(&a.theta)?;
    if !a.history.join(io::MANIFEST_FILE).exists() {
        bail!("{} has no {}", a.history.display(), io::MANIFEST_FILE);
    }
    let history = History::open(&a.history, &schema)?;
    let background = a.background.as_deref().map(|p| io::load_background(p, &schema)).transpose()?;
    let cfg = AuditConfig {
        k: a.k,
        theta,
        coverage_fraction: a.coverage_fraction,
    };
    let report = audit_series(&history.releases, &history.raw, &cfg, &schema, background.as_deref())?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{report}")?;
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs, out: &mut dyn Write) -> Result<()> {
    let schema = load_schema(&a.taxonomy)?;
    let original = load_clean(&a.original, &schema)?;
    let anonymized = io::load_release(&a.anonymized, 0, &schema)?;
    let report = evaluate(&original.records, &anonymized.records, &schema)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(out, "records\t{}", report.records)?;
        writeln!(out, "NIL\t{}", report.nil)?;
        writeln!(out, "RR\t{}", report.rr)?;
        writeln!(out, "AR_rev\t{}", report.ar_rev)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| x.to_string())
}

fn cmd_signal(a: SignalArgs, out: &mut dyn Write) -> Result<()> {
    let schema = load_schema(&a.taxonomy)?;
    let filter = a.filter.as_deref().map(|f| NumericFilter::parse(f, &schema)).transpose()?;
    let query = SignalQuery::new(&a.drug, &a.reaction, filter, &schema)?;
    let original = load_clean(&a.original, &schema)?;
    let anonymized = io::load_release(&a.anonymized, 0, &schema)?;
    let report = signal_bias(&original.records, &anonymized.records, &query);
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        let t = |c: &srs_anon::metrics::ContingencyTable| format!("a={} b={} c={} d={}", c.a, c.b, c.c, c.d);
        writeln!(out, "original\t{}\tPRR={}", t(&report.original), fmt_opt(report.prr_original))?;
        writeln!(out, "anonymized\t{}\tPRR={}", t(&report.anonymized), fmt_opt(report.prr_anonymized))?;
        writeln!(out, "bias\t{}", fmt_opt(report.bias))?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg: SynthConfig = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", a.config.display()))?;
    let series = synth_generate(&cfg)?;
    write_series(&a.output, &series)?;
    writeln!(
        out,
        "wrote {} releases of {} rows to {}",
        series.releases.len(),
        cfg.records_per_release,
        a.output.display()
    )?;
    Ok(())
}
