//! JSON Lines files for log-scores, token log-probabilities and posteriors,
//! and pretty JSON for parameters and reports.
//!
//! Every JSONL file starts with a header object `{"class_names": [...]}`
//! followed by one record per line. Floats are written in shortest
//! round-trip form and negative zeros are written as `0.0`. Readers
//! validate everything they construct. See `docs/formats.md`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::{compose_label_score, LabelVector, LogScoreMatrix, PosteriorMatrix, TokenLogProbSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub logscores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    pub id: String,
    /// One array of per-token log-probabilities per class.
    pub tokens: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub id: String,
    pub posteriors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// Contents of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub ids: Vec<String>,
    pub scores: LogScoreMatrix,
    /// Present only when every record carries a label.
    pub labels: Option<LabelVector>,
    /// Some but not all records carried a label.
    pub partially_labelled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorFile {
    pub ids: Vec<String>,
    pub posteriors: PosteriorMatrix,
    pub labels: Option<LabelVector>,
    pub partially_labelled: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn canonical(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| if v == 0.0 { 0.0 } else { v }).collect()
}

/// Ids, row-major values, labels and the partially-labelled flag.
type Columns = (Vec<String>, Vec<f64>, Option<LabelVector>, bool);

/// Accumulates records of one JSONL file and enforces the shared rules:
/// width equal to the header's class count, unique ids, all-or-nothing
/// labels.
struct Collector {
    k: usize,
    ids: Vec<String>,
    seen: HashSet<String>,
    values: Vec<f64>,
    labels: Vec<usize>,
    unlabelled: usize,
}

impl Collector {
    fn new(k: usize) -> Self {
        Self { k, ids: Vec::new(), seen: HashSet::new(), values: Vec::new(), labels: Vec::new(), unlabelled: 0 }
    }

    fn push(&mut self, line: usize, id: String, row: &[f64], label: Option<usize>) -> Result<()> {
        if row.len() != self.k {
            return Err(Error::Schema {
                line,
                message: format!("{} values but the header declares {} classes", row.len(), self.k),
            });
        }
        if !self.seen.insert(id.clone()) {
            return Err(Error::DuplicateId { line, id });
        }
        match label {
            Some(l) if l >= self.k => {
                return Err(Error::Schema { line, message: format!("label {l} is not below {}", self.k) })
            }
            Some(l) => self.labels.push(l),
            None => self.unlabelled += 1,
        }
        self.ids.push(id);
        self.values.extend_from_slice(row);
        Ok(())
    }

    fn finish(self, line: usize) -> Result<Columns> {
        if self.ids.is_empty() {
            return Err(Error::Schema { line, message: "no records after the header".into() });
        }
        let partial = self.unlabelled > 0 && !self.labels.is_empty();
        if partial {
            log::warn!("{} of {} records lack a label; ignoring labels", self.unlabelled, self.ids.len());
        }
        let labels = if self.unlabelled == 0 { Some(LabelVector::new(self.labels, self.k)?) } else { None };
        Ok((self.ids, self.values, labels, partial))
    }
}

/// Streams a JSONL file: header first, then `on_record(k, line, record)`
/// for every non-blank line. Returns the header and the last line number.
fn read_jsonl<R, T, F>(reader: R, mut on_record: F) -> Result<(Header, usize)>
where
    R: BufRead,
    T: DeserializeOwned,
    F: FnMut(usize, usize, T) -> Result<()>,
{
    let mut header: Option<Header> = None;
    let mut line_no = 0;
    for line in reader.lines() {
        line_no += 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line)
                    .map_err(|e| Error::Parse { line: line_no, message: format!("bad header: {e}") })?;
                if h.class_names.len() < 2 {
                    return Err(Error::Schema {
                        line: line_no,
                        message: "header needs at least two class names".into(),
                    });
                }
                if h.class_names.iter().collect::<HashSet<_>>().len() != h.class_names.len() {
                    return Err(Error::Schema { line: line_no, message: "duplicate class names".into() });
                }
                header = Some(h);
            }
            Some(h) => {
                let record: T =
                    serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
                on_record(h.class_names.len(), line_no, record)?;
            }
        }
    }
    let header = header.ok_or(Error::Schema { line: line_no.max(1), message: "missing header".into() })?;
    Ok((header, line_no))
}

fn read_collected<R, T, F>(reader: R, mut to_row: F) -> Result<(Header, Columns)>
where
    R: BufRead,
    T: DeserializeOwned,
    F: FnMut(usize, T) -> Result<(String, Vec<f64>, Option<usize>)>,
{
    let mut collector: Option<Collector> = None;
    let (header, last_line) = read_jsonl(reader, |k, line, rec: T| {
        let (id, row, label) = to_row(line, rec)?;
        collector.get_or_insert_with(|| Collector::new(k)).push(line, id, &row, label)
    })?;
    let collector = collector.unwrap_or_else(|| Collector::new(header.class_names.len()));
    Ok((header, collector.finish(last_line)?))
}

pub fn read_scores_from<R: BufRead>(reader: R) -> Result<ScoreFile> {
    let (header, (ids, values, labels, partially_labelled)) = read_collected(reader, |line, r: ScoreRecord| {
        if let Some(j) = r.logscores.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema { line, message: format!("non-finite log-score at class {j}") });
        }
        Ok((r.id, r.logscores, r.label))
    })?;
    let n = ids.len();
    Ok(ScoreFile { ids, scores: LogScoreMatrix::new(values, n, header.class_names)?, labels, partially_labelled })
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreFile> {
    read_scores_from(open(path.as_ref())?)
}

/// Reads per-token log-probabilities and composes one log-score per class.
pub fn ingest_token_scores_from<R: BufRead>(reader: R) -> Result<ScoreFile> {
    let (header, (ids, values, labels, partially_labelled)) = read_collected(reader, |line, r: TokenScoreRecord| {
        let seq = TokenLogProbSequence::new(r.tokens).map_err(|e| Error::Schema { line, message: e.to_string() })?;
        Ok((r.id, compose_label_score(&seq), r.label))
    })?;
    let n = ids.len();
    Ok(ScoreFile { ids, scores: LogScoreMatrix::new(values, n, header.class_names)?, labels, partially_labelled })
}

pub fn ingest_token_scores(path: impl AsRef<Path>) -> Result<ScoreFile> {
    ingest_token_scores_from(open(path.as_ref())?)
}

pub fn read_posteriors_from<R: BufRead>(reader: R) -> Result<PosteriorFile> {
    let (header, (ids, values, labels, partially_labelled)) =
        read_collected(reader, |_, r: PosteriorRecord| Ok((r.id, r.posteriors, r.label)))?;
    let n = ids.len();
    Ok(PosteriorFile {
        ids,
        posteriors: PosteriorMatrix::new(values, n, header.class_names)?,
        labels,
        partially_labelled,
    })
}

pub fn read_posteriors(path: impl AsRef<Path>) -> Result<PosteriorFile> {
    read_posteriors_from(open(path.as_ref())?)
}

fn check_ids(ids: &[String], n: usize, labels: Option<&LabelVector>) -> Result<()> {
    if ids.len() != n {
        return Err(Error::ShapeMismatch(format!("{} ids for {n} rows", ids.len())));
    }
    if ids.iter().collect::<HashSet<_>>().len() != ids.len() {
        return Err(Error::InvalidConfig("ids must be unique".into()));
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", l.len())));
        }
    }
    Ok(())
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(std::io::Error::other)?;
    out.write_all(b"\n")
}

pub fn write_scores_to<W: Write>(
    mut out: W,
    ids: &[String],
    scores: &LogScoreMatrix,
    labels: Option<&LabelVector>,
) -> std::io::Result<()> {
    write_line(&mut out, &Header { class_names: scores.class_names().to_vec() })?;
    for (i, row) in scores.rows().enumerate() {
        let record =
            ScoreRecord { id: ids[i].clone(), logscores: canonical(row), label: labels.map(|l| l.labels()[i]) };
        write_line(&mut out, &record)?;
    }
    out.flush()
}

pub fn write_scores(
    path: impl AsRef<Path>,
    ids: &[String],
    scores: &LogScoreMatrix,
    labels: Option<&LabelVector>,
) -> Result<()> {
    let path = path.as_ref();
    check_ids(ids, scores.n_samples(), labels)?;
    write_scores_to(create(path)?, ids, scores, labels).map_err(io_err(path))
}

pub fn write_posteriors_to<W: Write>(
    mut out: W,
    ids: &[String],
    posteriors: &PosteriorMatrix,
    labels: Option<&LabelVector>,
) -> std::io::Result<()> {
    write_line(&mut out, &Header { class_names: posteriors.class_names().to_vec() })?;
    for (i, row) in posteriors.rows().enumerate() {
        let record =
            PosteriorRecord { id: ids[i].clone(), posteriors: canonical(row), label: labels.map(|l| l.labels()[i]) };
        write_line(&mut out, &record)?;
    }
    out.flush()
}

pub fn write_posteriors(
    path: impl AsRef<Path>,
    ids: &[String],
    posteriors: &PosteriorMatrix,
    labels: Option<&LabelVector>,
) -> Result<()> {
    let path = path.as_ref();
    check_ids(ids, posteriors.n_samples(), labels)?;
    write_posteriors_to(create(path)?, ids, posteriors, labels).map_err(io_err(path))
}

fn canonicalize_value(value: &mut serde_json::Value) {
    use serde_json::Value;
    match value {
        Value::Number(n) if n.is_f64() && n.as_f64() == Some(0.0) => {
            *value = Value::from(0.0);
        }
        Value::Array(items) => items.iter_mut().for_each(canonicalize_value),
        Value::Object(map) => map.values_mut().for_each(canonicalize_value),
        _ => {}
    }
}

/// Pretty JSON with sorted keys, shortest round-trip floats and no
/// negative zeros.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    canonicalize_value(&mut v);
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_canonical_json(value)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
}

pub fn write_report(report: &crate::metrics::EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<crate::metrics::EvaluationReport> {
    read_json(path)
}

pub fn write_params(params: &crate::calibration::AffineParams, path: impl AsRef<Path>) -> Result<()> {
    write_json(params, path)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<crate::calibration::AffineParams> {
    let params: crate::calibration::AffineParams = read_json(path)?;
    params.validate()?;
    Ok(params)
}
