//! Line-oriented text formats for datasets and models, plus CSV/JSON
//! reports.
//!
//! Dataset file:
//!
//! ```text
//! #driftguard-dataset v1 d=3
//! #feature 0 urls::http://www.google.com
//! #feature 1 intents::android_intent_action_VIEW
//! #feature 2 interesting_calls::Cipher(DES)
//! app-1<TAB>1420070400<TAB>1<TAB>0,2
//! app-2<TAB>1420070500<TAB>0<TAB>
//! ```
//!
//! Model file:
//!
//! ```text
//! #driftguard-model v1
//! d=3
//! bias=-1.2500000000000000e-1
//! fingerprint=<hex>
//! kind=svm-cb
//! encoding=dense
//! bounded=2,0
//! meta.iterations=2000
//! w 0 7.0000000000000007e-5
//! ...
//! ```
//!
//! Reals in model files carry 17 significant digits so they reload
//! bit-identically. Any other line starting with `#` is a comment (used for
//! provenance) and is skipped on load.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::dataset::{Dataset, FeatureDictionary, Label, SparseSample};
use crate::drift::{DriftReport, ScoreTrendPoint};
use crate::error::{Error, Result};
use crate::eval::{DecaySlopes, EvalReport};
use crate::model::LinearModel;
use crate::synth::GroundTruth;

const DATASET_MAGIC: &str = "#driftguard-dataset";
const MODEL_MAGIC: &str = "#driftguard-model";
const VERSION: &str = "v1";

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| {
        let _ = fs::remove_file(tmp);
        Error::io(path, e)
    })
}

fn write_comments(out: &mut String, comments: &[String]) {
    for line in comments {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
}

fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(text: &str, source: &str, line: usize) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| Error::parse(source, line, format!("invalid real {text:?}")))
}

// ---------------------------------------------------------------- datasets

pub fn render_dataset(dataset: &Dataset, comments: &[String]) -> Result<String> {
    let mut out = format!("{DATASET_MAGIC} {VERSION} d={}\n", dataset.d());
    write_comments(&mut out, comments);
    for (j, name) in dataset.dictionary().names().iter().enumerate() {
        if name.contains(['\n', '\r']) {
            return Err(Error::InvalidConfig(format!("feature name {name:?} contains a line break")));
        }
        out.push_str(&format!("#feature {j} {name}\n"));
    }
    for s in dataset.samples() {
        if s.id.is_empty() || s.id.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidSample {
                id: s.id.clone(),
                reason: "ids must be non-empty and free of tabs and line breaks".into(),
            });
        }
        let indices: Vec<String> = s.indices().iter().map(u32::to_string).collect();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, s.timestamp, s.label, indices.join(",")));
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, dataset: &Dataset, comments: &[String]) -> Result<()> {
    write_atomic(path, render_dataset(dataset, comments)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), &path.display().to_string())
}

/// Parses a dataset file; `source` names the input in error messages.
pub fn read_dataset<R: BufRead>(reader: R, source: &str) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "missing dataset header"))?;
    let header = header.map_err(|e| Error::io(source, e))?;
    let d = parse_dataset_header(&header, source)?;

    let mut names: Vec<String> = Vec::with_capacity(d);
    let mut dictionary: Option<std::sync::Arc<FeatureDictionary>> = None;
    let mut samples = Vec::new();
    let mut last_line = 1;

    for (no, line) in lines {
        let line = line.map_err(|e| Error::io(source, e))?;
        last_line = no;
        if let Some(rest) = line.strip_prefix("#feature ") {
            if dictionary.is_some() {
                return Err(Error::parse(source, no, "feature declaration after the first sample"));
            }
            let (idx, name) = rest
                .split_once(' ')
                .ok_or_else(|| Error::parse(source, no, "expected `#feature <index> <name>`"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(source, no, format!("invalid feature index {idx:?}")))?;
            if idx != names.len() {
                return Err(Error::parse(
                    source,
                    no,
                    format!("feature {idx} declared out of order, expected {}", names.len()),
                ));
            }
            names.push(name.to_string());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let dict = match &dictionary {
            Some(dict) => dict,
            None => dictionary.insert(std::sync::Arc::new(finish_dictionary(
                std::mem::take(&mut names),
                d,
                source,
                no,
            )?)),
        };
        samples.push(parse_sample(&line, dict.d(), source, no)?);
    }

    let dictionary = match dictionary {
        Some(dict) => dict,
        None => std::sync::Arc::new(finish_dictionary(names, d, source, last_line)?),
    };
    Dataset::new(dictionary, samples)
}

fn parse_dataset_header(header: &str, source: &str) -> Result<usize> {
    let mut parts = header.split(' ');
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(Error::parse(source, 1, format!("not a dataset file (expected `{DATASET_MAGIC}`)")));
    }
    match parts.next() {
        Some(VERSION) => {}
        Some(other) => return Err(Error::parse(source, 1, format!("unsupported format version {other:?}"))),
        None => return Err(Error::parse(source, 1, "missing format version")),
    }
    let d = parts
        .next()
        .and_then(|p| p.strip_prefix("d="))
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(source, 1, "missing or invalid `d=<dimension>`"))?;
    if parts.next().is_some() {
        return Err(Error::parse(source, 1, "trailing tokens in header"));
    }
    Ok(d)
}

fn finish_dictionary(names: Vec<String>, d: usize, source: &str, line: usize) -> Result<FeatureDictionary> {
    if names.len() != d {
        return Err(Error::parse(
            source,
            line,
            format!("header declares d={d} but {} features are listed", names.len()),
        ));
    }
    FeatureDictionary::new(names).map_err(|e| Error::parse(source, line, e.to_string()))
}

fn parse_sample(line: &str, d: usize, source: &str, no: usize) -> Result<SparseSample> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(Error::parse(
            source,
            no,
            format!("expected 4 tab-separated fields, found {}", fields.len()),
        ));
    }
    let id = fields[0];
    if id.is_empty() {
        return Err(Error::parse(source, no, "empty sample id"));
    }
    let timestamp: i64 = fields[1]
        .parse()
        .map_err(|_| Error::parse(source, no, format!("invalid timestamp {:?}", fields[1])))?;
    let label = fields[2]
        .parse::<u8>()
        .ok()
        .and_then(Label::from_u8)
        .ok_or_else(|| Error::parse(source, no, format!("label must be 0 or 1, found {:?}", fields[2])))?;
    let mut indices = Vec::new();
    if !fields[3].is_empty() {
        for token in fields[3].split(',') {
            let (idx, value) = match token.split_once(':') {
                Some((idx, value)) => (idx, Some(value)),
                None => (token, None),
            };
            if let Some(value) = value {
                if value.parse::<f64>().ok() != Some(1.0) {
                    return Err(Error::parse(
                        source,
                        no,
                        format!("feature {idx} has value {value}; only binary features are supported"),
                    ));
                }
            }
            let idx: u32 = idx
                .parse()
                .map_err(|_| Error::parse(source, no, format!("invalid feature index {idx:?}")))?;
            if idx as usize >= d {
                return Err(Error::parse(source, no, format!("feature index {idx} out of range for d={d}")));
            }
            indices.push(idx);
        }
    }
    SparseSample::new(id, timestamp, label, indices).map_err(|e| Error::parse(source, no, e.to_string()))
}

// ------------------------------------------------------------------ models

/// A model plus what was recorded about how it was trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: LinearModel,
    /// `svm` or `svm-cb`.
    pub kind: String,
    /// Echo of the training configuration, in insertion order.
    pub meta: Vec<(String, String)>,
    /// Bounded feature indices, most unstable first (empty for the baseline).
    pub bounded: Vec<usize>,
}

impl ModelFile {
    pub fn new(model: LinearModel, kind: impl Into<String>) -> Self {
        Self {
            model,
            kind: kind.into(),
            meta: Vec::new(),
            bounded: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn render_model(file: &ModelFile, comments: &[String]) -> Result<String> {
    let model = &file.model;
    let weights = model.weights();
    // only +0.0 is omitted so that -0.0 survives the round trip
    let zeros = weights.iter().filter(|w| w.to_bits() == 0).count();
    let sparse = 2 * zeros > weights.len();

    let mut out = format!("{MODEL_MAGIC} {VERSION}\n");
    write_comments(&mut out, comments);
    out.push_str(&format!("d={}\n", model.d()));
    out.push_str(&format!("bias={}\n", format_real(model.bias())));
    out.push_str(&format!("fingerprint={}\n", model.fingerprint()));
    out.push_str(&format!("kind={}\n", file.kind));
    out.push_str(&format!("encoding={}\n", if sparse { "sparse" } else { "dense" }));
    let bounded: Vec<String> = file.bounded.iter().map(usize::to_string).collect();
    out.push_str(&format!("bounded={}\n", bounded.join(",")));
    for (key, value) in &file.meta {
        if key.contains(['=', '\n']) || value.contains('\n') {
            return Err(Error::InvalidConfig(format!("metadata entry {key:?} cannot be stored")));
        }
        out.push_str(&format!("meta.{key}={value}\n"));
    }
    for (j, &w) in weights.iter().enumerate() {
        if !sparse || w.to_bits() != 0 {
            out.push_str(&format!("w {j} {}\n", format_real(w)));
        }
    }
    Ok(out)
}

pub fn save_model(path: &Path, file: &ModelFile, comments: &[String]) -> Result<()> {
    write_atomic(path, render_model(file, comments)?.as_bytes())
}

/// Loads a model; with `dictionary` given, its fingerprint must match.
pub fn load_model(path: &Path, dictionary: Option<&FeatureDictionary>) -> Result<ModelFile> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(BufReader::new(file), &path.display().to_string(), dictionary)
}

pub fn read_model<R: BufRead>(reader: R, source: &str, dictionary: Option<&FeatureDictionary>) -> Result<ModelFile> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "missing model header"))?;
    let header = header.map_err(|e| Error::io(source, e))?;
    match header.split_once(' ') {
        Some((MODEL_MAGIC, VERSION)) => {}
        Some((MODEL_MAGIC, other)) => {
            return Err(Error::parse(source, 1, format!("unsupported format version {other:?}")))
        }
        _ => return Err(Error::parse(source, 1, format!("not a model file (expected `{MODEL_MAGIC} {VERSION}`)"))),
    }

    let mut d: Option<usize> = None;
    let mut bias: Option<f64> = None;
    let mut fingerprint: Option<String> = None;
    let mut kind = String::from("svm");
    let mut sparse: Option<bool> = None;
    let mut bounded = Vec::new();
    let mut meta = Vec::new();
    let mut weights: Vec<Option<f64>> = Vec::new();
    let mut seen = 0usize;
    let mut last_line = 1;

    for (no, line) in lines {
        let line = line.map_err(|e| Error::io(source, e))?;
        last_line = no;
        if line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("w ") {
            let d = d.ok_or_else(|| Error::parse(source, no, "weight before `d=`"))?;
            if weights.is_empty() {
                weights = vec![None; d];
            }
            let (idx, value) = rest
                .split_once(' ')
                .ok_or_else(|| Error::parse(source, no, "expected `w <index> <value>`"))?;
            let idx: usize = idx
                .parse()
                .ok()
                .filter(|&i| i < d)
                .ok_or_else(|| Error::parse(source, no, format!("invalid weight index {idx:?}")))?;
            if weights[idx].is_some() {
                return Err(Error::parse(source, no, format!("weight {idx} given twice")));
            }
            weights[idx] = Some(parse_real(value, source, no)?);
            seen += 1;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source, no, format!("expected key=value, found {line:?}")))?;
        if seen > 0 {
            return Err(Error::parse(source, no, "header entry after weights"));
        }
        match key {
            "d" => {
                d = Some(
                    value
                        .parse()
                        .map_err(|_| Error::parse(source, no, format!("invalid dimension {value:?}")))?,
                )
            }
            "bias" => bias = Some(parse_real(value, source, no)?),
            "fingerprint" => fingerprint = Some(value.to_string()),
            "kind" => kind = value.to_string(),
            "encoding" => {
                sparse = Some(match value {
                    "dense" => false,
                    "sparse" => true,
                    other => return Err(Error::parse(source, no, format!("unknown encoding {other:?}"))),
                })
            }
            "bounded" => {
                bounded = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::parse(source, no, format!("invalid bounded set {value:?}")))?
                }
            }
            other => match other.strip_prefix("meta.") {
                Some(meta_key) => meta.push((meta_key.to_string(), value.to_string())),
                None => return Err(Error::parse(source, no, format!("unknown key {other:?}"))),
            },
        }
    }

    let missing = |what: &str| Error::parse(source, last_line, format!("truncated model file: missing {what}"));
    let d = d.ok_or_else(|| missing("`d=`"))?;
    let bias = bias.ok_or_else(|| missing("`bias=`"))?;
    let fingerprint = fingerprint.ok_or_else(|| missing("`fingerprint=`"))?;
    let sparse = sparse.ok_or_else(|| missing("`encoding=`"))?;
    if weights.is_empty() {
        weights = vec![None; d];
    }
    if !sparse && seen != d {
        return Err(Error::parse(
            source,
            last_line,
            format!("truncated model file: dense encoding needs {d} weights, found {seen}"),
        ));
    }
    if let Some(&j) = bounded.iter().find(|&&j| j >= d) {
        return Err(Error::parse(source, last_line, format!("bounded index {j} out of range")));
    }
    let weights: Vec<f64> = weights.into_iter().map(|w| w.unwrap_or(0.0)).collect();
    let model = LinearModel::new(weights, bias, fingerprint).map_err(|e| Error::parse(source, last_line, e.to_string()))?;

    if let Some(dict) = dictionary {
        let expected = dict.fingerprint();
        if model.fingerprint() != expected || model.d() != dict.d() {
            return Err(Error::DictionaryMismatch {
                model: model.fingerprint().to_string(),
                dataset: expected,
            });
        }
    }
    Ok(ModelFile {
        model,
        kind,
        meta,
        bounded,
    })
}

// ----------------------------------------------------------------- reports

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |v| v.to_string())
}

fn csv_body(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).map_err(|e| Error::Report(e.to_string()))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| Error::Report(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Drift report CSV, one row per feature in ascending-δ order.
pub fn render_drift_report(report: &DriftReport, comments: &[String]) -> Result<String> {
    let mut out = String::new();
    write_comments(&mut out, comments);
    let rows = report.ranked().enumerate().map(|(rank, r)| {
        vec![
            (rank + 1).to_string(),
            r.index.to_string(),
            r.name.clone(),
            r.weight.to_string(),
            r.slope.to_string(),
            r.delta.to_string(),
        ]
    });
    out.push_str(&csv_body(
        &["rank", "feature_index", "feature_name", "weight", "slope", "delta"],
        rows,
    )?);
    Ok(out)
}

pub fn save_drift_report(path: &Path, report: &DriftReport, comments: &[String]) -> Result<()> {
    write_atomic(path, render_drift_report(report, comments)?.as_bytes())
}

/// Per-slot evaluation CSV. Undefined metrics are written as `null`.
pub fn render_eval_report(report: &EvalReport, comments: &[String]) -> Result<String> {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str(&format!(
        "# model_id={} fpr_cap={} pauc=normalized area under ROC up to fpr_cap, divided by fpr_cap\n",
        report.model_id, report.fpr_cap
    ));
    let rows = report.slots.iter().map(|m| {
        vec![
            m.slot.to_string(),
            m.start.to_string(),
            m.end.to_string(),
            m.n_pos.to_string(),
            m.n_neg.to_string(),
            m.true_pos.to_string(),
            m.false_pos.to_string(),
            m.false_neg.to_string(),
            m.true_neg.to_string(),
            opt(m.precision),
            opt(m.recall),
            opt(m.pauc),
        ]
    });
    out.push_str(&csv_body(
        &[
            "slot_id",
            "slot_start",
            "slot_end",
            "n_pos",
            "n_neg",
            "tp",
            "fp",
            "fn",
            "tn",
            "precision",
            "recall",
            "pauc",
        ],
        rows,
    )?);
    Ok(out)
}

pub fn save_eval_report(path: &Path, report: &EvalReport, comments: &[String]) -> Result<()> {
    write_atomic(path, render_eval_report(report, comments)?.as_bytes())
}

#[derive(Debug, Serialize)]
pub struct EvalSummary<'a> {
    pub model_id: &'a str,
    pub boundary: Option<i64>,
    pub fpr_cap: f64,
    pub pauc_normalization: &'static str,
    pub decay_slope: &'a DecaySlopes,
}

impl<'a> EvalSummary<'a> {
    pub fn of(report: &'a EvalReport) -> Self {
        Self {
            model_id: &report.model_id,
            boundary: report.boundary,
            fpr_cap: report.fpr_cap,
            pauc_normalization: "divided by fpr_cap",
            decay_slope: &report.decay,
        }
    }
}

pub fn render_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Score statistics per slot; empty slots carry `null` statistics.
pub fn render_score_trend(points: &[ScoreTrendPoint], comments: &[String]) -> Result<String> {
    let mut out = String::new();
    write_comments(&mut out, comments);
    let rows = points.iter().map(|p| {
        let s = p.stats;
        vec![
            p.slot.to_string(),
            p.start.to_string(),
            p.end.to_string(),
            p.count.to_string(),
            opt(s.map(|s| s.mean)),
            opt(s.map(|s| s.std)),
            opt(s.map(|s| s.min)),
            opt(s.map(|s| s.max)),
        ]
    });
    out.push_str(&csv_body(
        &["slot_id", "slot_start", "slot_end", "count", "mean", "std", "min", "max"],
        rows,
    )?);
    Ok(out)
}

/// Ground truth as `{"<index>": {"group": "up"|"down", "planted_slope_sign": ±1}}`.
pub fn render_ground_truth(truth: &GroundTruth) -> Result<String> {
    render_json(&truth.planted)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Flushes `text` to an arbitrary writer (used for stdout output).
pub fn emit<W: Write>(mut writer: W, text: &str) -> Result<()> {
    writer
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<output>", e))
}
