//! File formats.
//!
//! Trajectories: JSON Lines, one `{"id": "...", "points": [[frame, x, y], ...]}`
//! per line, or long-form CSV with header `track_id,frame,x,y`.
//! Labels (assignments, ground truth): CSV `obs_id,<label|group>`.
//! Model state and DEM checkpoints: versioned JSON documents.
//! Segment statistics: JSON Lines, one segment per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dem::{DemState, SegmentStats};
use crate::error::{Error, Result};
use crate::model::{FeatureConfig, Metric, TrackPoint, Trajectory};
use crate::scalar::Scalar;
use crate::tigm::ModelState;

pub const STATE_FORMAT: &str = "tigm-model-state";
pub const CHECKPOINT_FORMAT: &str = "tigm-dem-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrajectoryFormat {
    #[default]
    Auto,
    Jsonl,
    Csv,
}

impl std::str::FromStr for TrajectoryFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(Error::param(format!("unknown trajectory format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// Sorted by `(completion_frame, id)`.
    pub trajectories: Vec<Trajectory>,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn detect(path: &Path, text: &str) -> TrajectoryFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "ndjson" | "json") => return TrajectoryFormat::Jsonl,
        Some("csv") => return TrajectoryFormat::Csv,
        _ => {}
    }
    match text.trim_start().chars().next() {
        Some('{') => TrajectoryFormat::Jsonl,
        _ => TrajectoryFormat::Csv,
    }
}

pub fn load_trajectories(path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<LoadReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let format = match format {
        TrajectoryFormat::Auto => detect(path, &text),
        f => f,
    };
    let raw = match format {
        TrajectoryFormat::Jsonl => parse_jsonl(path, &text)?,
        TrajectoryFormat::Csv => parse_csv(path, &text)?,
        TrajectoryFormat::Auto => unreachable!(),
    };
    let mut report = LoadReport::default();
    for (line, t) in raw {
        if t.points.len() < 2 {
            report.skipped += 1;
            report.warnings.push(format!(
                "{}:{line}: trajectory {:?} has {} point(s); skipped",
                path.display(),
                t.id,
                t.points.len()
            ));
            continue;
        }
        t.validate().map_err(|e| format_err(path, line, e.to_string()))?;
        report.trajectories.push(t);
    }
    report.trajectories.sort_by(|a, b| {
        a.completion_frame()
            .cmp(&b.completion_frame())
            .then_with(|| a.id.cmp(&b.id))
    });
    for w in report.trajectories.windows(2) {
        if w[0].id == w[1].id {
            return Err(format_err(path, 0, format!("duplicate trajectory id {:?}", w[0].id)));
        }
    }
    Ok(report)
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    points: Vec<(f64, f64, f64)>,
}

fn to_frame(path: &Path, line: usize, v: f64) -> Result<u64> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format_err(path, line, format!("frame {v} is not a nonnegative integer")))
    }
}

fn parse_jsonl(path: &Path, text: &str) -> Result<Vec<(usize, Trajectory)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord =
            serde_json::from_str(line).map_err(|e| format_err(path, line_no, e.to_string()))?;
        let points = rec
            .points
            .iter()
            .map(|&(f, x, y)| Ok(TrackPoint::new(to_frame(path, line_no, f)?, x, y)))
            .collect::<Result<Vec<_>>>()?;
        out.push((line_no, Trajectory { id: rec.id, points }));
    }
    Ok(out)
}

fn parse_csv(path: &Path, text: &str) -> Result<Vec<(usize, Trajectory)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| format_err(path, 1, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, 1, format!("missing column {name:?}")))
    };
    let (c_id, c_frame, c_x, c_y) = (col("track_id")?, col("frame")?, col("x")?, col("y")?);

    // track id -> (first line, points)
    let mut tracks: BTreeMap<String, (usize, Vec<TrackPoint>)> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line_no = i + 2;
        let rec = rec.map_err(|e| format_err(path, line_no, e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|_| format_err(path, line_no, format!("bad number {:?}", field(c))))
        };
        let frame = to_frame(path, line_no, num(c_frame)?)?;
        let p = TrackPoint::new(frame, num(c_x)?, num(c_y)?);
        tracks
            .entry(field(c_id).to_string())
            .or_insert_with(|| (line_no, Vec::new()))
            .1
            .push(p);
    }
    Ok(tracks
        .into_iter()
        .map(|(id, (line, mut points))| {
            points.sort_by_key(|p| p.frame);
            (line, Trajectory { id, points })
        })
        .collect())
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn trajectories_to_jsonl(trajectories: &[Trajectory]) -> String {
    let mut s = String::new();
    for t in trajectories {
        let points: Vec<(u64, f64, f64)> = t.points.iter().map(|p| (p.frame, p.x, p.y)).collect();
        let rec = serde_json::json!({ "id": t.id, "points": points });
        s.push_str(&rec.to_string());
        s.push('\n');
    }
    s
}

pub fn trajectories_to_csv(trajectories: &[Trajectory]) -> String {
    let mut s = String::from("track_id,frame,x,y\n");
    for t in trajectories {
        for p in &t.points {
            s.push_str(&format!("{},{},{},{}\n", t.id, p.frame, p.x, p.y));
        }
    }
    s
}

/// `obs_id,<column>` rows in id order.
pub fn labels_to_csv<L: std::fmt::Display>(column: &str, labels: impl IntoIterator<Item = (u64, L)>) -> String {
    let mut s = format!("obs_id,{column}\n");
    for (id, l) in labels {
        s.push_str(&format!("{id},{l}\n"));
    }
    s
}

/// Reads a two-column `obs_id,<label>` CSV with a header row.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<u64, i64>> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(path, line_no, "expected two columns"));
        };
        let id: u64 = id
            .parse()
            .map_err(|_| format_err(path, line_no, format!("bad obs_id {id:?}")))?;
        let label: i64 = label
            .parse()
            .map_err(|_| format_err(path, line_no, format!("bad label {label:?}")))?;
        if out.insert(id, label).is_some() {
            return Err(format_err(path, line_no, format!("duplicate obs_id {id}")));
        }
    }
    Ok(out)
}

/// Like [`read_labels`] but rejects negative labels.
pub fn read_nonnegative_labels(path: impl AsRef<Path>) -> Result<BTreeMap<u64, u64>> {
    let path = path.as_ref();
    read_labels(path)?
        .into_iter()
        .map(|(id, l)| {
            u64::try_from(l)
                .map(|l| (id, l))
                .map_err(|_| format_err(path, 0, format!("negative label {l} for obs {id}")))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct StateDocument<T: Scalar> {
    format: String,
    version: u32,
    state: ModelState<T>,
}

/// Everything needed to resume a DEM run: the engine state, the feature
/// mapping it was built with, and the labels already finalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = "M: Default"))]
pub struct DemCheckpoint<T: Scalar, M: Metric<T> = crate::model::Euclidean> {
    pub format: String,
    pub version: u32,
    pub features: FeatureConfig,
    pub finalized: BTreeMap<u64, u64>,
    pub dem: DemState<T, M>,
}

impl<T: Scalar, M: Metric<T>> DemCheckpoint<T, M> {
    pub fn new(features: FeatureConfig, finalized: BTreeMap<u64, u64>, dem: DemState<T, M>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: FORMAT_VERSION,
            features,
            finalized,
            dem,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

impl<T: Scalar, M: Metric<T> + Default> DemCheckpoint<T, M> {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        check_header(&doc.format, doc.version, CHECKPOINT_FORMAT)?;
        doc.features.validate()?;
        doc.dem.check_window()?;
        doc.dem.model.check_invariants()?;
        Ok(doc)
    }
}

fn check_header(found: &str, version: u32, format: &str) -> Result<()> {
    if found != format {
        return Err(Error::InvalidInput(format!(
            "expected a {format} document, found {found:?}"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported {format} version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn state_to_json<T: Scalar>(state: &ModelState<T>) -> Result<String> {
    let doc = StateDocument {
        format: STATE_FORMAT.into(),
        version: FORMAT_VERSION,
        state: state.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn state_from_json<T: Scalar>(text: &str) -> Result<ModelState<T>> {
    let doc: StateDocument<T> = serde_json::from_str(text)?;
    check_header(&doc.format, doc.version, STATE_FORMAT)?;
    doc.state.check_invariants()?;
    Ok(doc.state)
}

pub fn segments_to_jsonl<T: Scalar>(segments: &[SegmentStats<T>]) -> Result<String> {
    let mut s = String::new();
    for seg in segments {
        s.push_str(&serde_json::to_string(seg)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
