//! Recording metadata, feature matrices, and their on-disk formats.
//!
//! Manifests are UTF-8 text, one record per line with six tab-separated
//! fields: `sample_id speaker_id gender task state feature_path`. Lines
//! starting with `#` and blank lines are ignored.
//!
//! Feature matrices are stored either as FMAT binaries (little-endian,
//! row-major) or as CSV with a `T,D,frame_period_ms` header row.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Gender::Male),
            "F" => Ok(Gender::Female),
            other => Err(Error::UnknownGender(other.to_string())),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The nine speech assessment tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Task {
    /// Sustained vowel /a/.
    A,
    /// Maximum phonation time.
    Mpt,
    /// Diadochokinesis.
    Ddk,
    Words,
    Sent,
    /// Prosodic sentences.
    ProsSent,
    /// Read text.
    Text,
    /// Story telling from a picture book.
    Frog,
    /// Free conversation.
    Convers,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::A,
        Task::Mpt,
        Task::Ddk,
        Task::Words,
        Task::Sent,
        Task::ProsSent,
        Task::Text,
        Task::Frog,
        Task::Convers,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::A => "A",
            Task::Mpt => "MPT",
            Task::Ddk => "DDK",
            Task::Words => "WORDS",
            Task::Sent => "SENT",
            Task::ProsSent => "PROS-SENT",
            Task::Text => "TEXT",
            Task::Frog => "FROG",
            Task::Convers => "CONVERS",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Medication state of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum State {
    Off,
    On,
}

impl State {
    pub fn as_str(self) -> &'static str {
        match self {
            State::Off => "OFF",
            State::On => "ON",
        }
    }

    /// `-1` for OFF, `+1` for ON.
    pub fn sign(self) -> f64 {
        match self {
            State::Off => -1.0,
            State::On => 1.0,
        }
    }

    /// Class index used by the neural classifier: 0 = OFF, 1 = ON.
    pub fn index(self) -> usize {
        match self {
            State::Off => 0,
            State::On => 1,
        }
    }
}

impl FromStr for State {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ON" => Ok(State::On),
            "OFF" => Ok(State::Off),
            other => Err(Error::UnknownState(other.to_string())),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub task: Task,
    pub state: State,
    pub feature_path: String,
}

impl SampleRecord {
    fn parse(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: format!("expected 6 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::MalformedLine {
                line: line_no,
                reason: "empty field".into(),
            });
        }
        Ok(SampleRecord {
            sample_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            gender: fields[2].parse()?,
            task: fields[3].parse()?,
            state: fields[4].parse()?,
            feature_path: fields[5].to_string(),
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.sample_id, self.speaker_id, self.gender, self.task, self.state, self.feature_path
        )
    }
}

/// Parses manifest text. Record order is preserved.
pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let record = SampleRecord::parse(line, i + 1)?;
        if !seen.insert(record.sample_id.clone()) {
            return Err(Error::DuplicateSampleId(record.sample_id));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn manifest_to_string(records: &[SampleRecord]) -> String {
    let mut out = String::from("# sample_id\tspeaker_id\tgender\ttask\tstate\tfeature_path\n");
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest_to_string(records)).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

/// A `T x D` frame-level feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    values: Array2<f64>,
    frame_period_ms: f64,
}

impl FrameFeatures {
    pub fn new(values: Array2<f64>, frame_period_ms: f64) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if !(frame_period_ms.is_finite() && frame_period_ms > 0.0) {
            return Err(Error::MalformedFeatures(format!(
                "frame period must be positive, got {frame_period_ms}"
            )));
        }
        check_finite(&values)?;
        Ok(FrameFeatures {
            values,
            frame_period_ms,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_period_ms(&self) -> f64 {
        self.frame_period_ms
    }

    /// Uniformly subsamples to at most `max_frames` frames (frame `floor(i*T/max)`).
    pub fn capped(&self, max_frames: usize) -> FrameFeatures {
        let t = self.frames();
        if max_frames == 0 || t <= max_frames {
            return self.clone();
        }
        let idx: Vec<usize> = (0..max_frames).map(|i| i * t / max_frames).collect();
        FrameFeatures {
            values: self.values.select(ndarray::Axis(0), &idx),
            frame_period_ms: self.frame_period_ms * t as f64 / max_frames as f64,
        }
    }
}

fn check_finite(values: &Array2<f64>) -> Result<()> {
    if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteValue { row, col });
    }
    Ok(())
}

/// A fixed-length utterance-level feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures(Array1<f64>);

impl UtteranceFeatures {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: 0, col: i });
        }
        Ok(UtteranceFeatures(values))
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const FMAT_VERSION: u32 = 1;
const FMAT_HEADER_LEN: usize = 4 + 3 * 4 + 8;

pub fn encode_fmat(m: &FrameFeatures) -> Vec<u8> {
    let mut buf = Vec::with_capacity(FMAT_HEADER_LEN + 8 * m.values.len());
    buf.extend_from_slice(FMAT_MAGIC);
    buf.extend_from_slice(&FMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&m.frame_period_ms.to_le_bytes());
    for v in m.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_fmat(bytes: &[u8]) -> Result<FrameFeatures> {
    if bytes.len() < 4 || &bytes[..4] != FMAT_MAGIC {
        return Err(Error::BadMagic { expected: "FMAT" });
    }
    if bytes.len() < FMAT_HEADER_LEN {
        return Err(Error::DimensionMismatch("truncated FMAT header".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FMAT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let t = u32_at(8) as usize;
    let d = u32_at(12) as usize;
    let period = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[FMAT_HEADER_LEN..];
    if !payload.len().is_multiple_of(8) || payload.len() / 8 != t * d {
        return Err(Error::DimensionMismatch(format!(
            "header declares {t}x{d} = {} values, payload holds {} bytes",
            t * d,
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((t, d), data)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    FrameFeatures::new(values, period)
}

pub fn parse_feature_csv(text: &str) -> Result<FrameFeatures> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedFeatures("missing CSV header".into()))?;
    let head: Vec<&str> = header.split(',').map(str::trim).collect();
    if head.len() != 3 {
        return Err(Error::MalformedFeatures(
            "CSV header must be T,D,frame_period_ms".into(),
        ));
    }
    let bad = |what: &str| Error::MalformedFeatures(format!("bad CSV header field {what}"));
    let t: usize = head[0].parse().map_err(|_| bad("T"))?;
    let d: usize = head[1].parse().map_err(|_| bad("D"))?;
    let period: f64 = head[2].parse().map_err(|_| bad("frame_period_ms"))?;

    let mut data = Vec::with_capacity(t * d);
    let mut rows = 0;
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "CSV row {row} has {} values, header declares D={d}",
                cells.len()
            )));
        }
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::MalformedFeatures(format!("unparseable value {cell:?} at ({row}, {col})"))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows != t {
        return Err(Error::DimensionMismatch(format!(
            "CSV header declares T={t}, found {rows} rows"
        )));
    }
    let values =
        Array2::from_shape_vec((t, d), data).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    FrameFeatures::new(values, period)
}

pub fn feature_csv_string(m: &FrameFeatures) -> String {
    let mut out = format!("{},{},{}\n", m.frames(), m.dim(), m.frame_period_ms);
    for row in m.values.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads an FMAT file, or a CSV file when the extension is `.csv`.
pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<FrameFeatures> {
    let path = path.as_ref();
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_feature_csv(&text)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_fmat(&bytes)
    }
}

/// Writes FMAT, or CSV when the extension is `.csv`.
pub fn write_feature_matrix(path: impl AsRef<Path>, m: &FrameFeatures) -> Result<()> {
    let path = path.as_ref();
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        if is_csv(path) {
            f.write_all(feature_csv_string(m).as_bytes())?;
        } else {
            f.write_all(&encode_fmat(m))?;
        }
        f.flush()
    };
    write().map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}
