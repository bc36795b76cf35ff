//! File formats: sweep/trace/series CSV, record header + binary payload,
//! OFF tables, and JSON with fixed 17-significant-digit floats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use crate::gapfit::QiSeries;
use crate::iqcal::IqTrace;
use crate::pulse::Tag;
use crate::resonance::ComplexSweep;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Pretty JSON formatter that prints every float as `{:.16e}`.
struct SigFigFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SigFigFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes with 17 significant digits per float; non-finite floats become `null`.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigFigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serializing to memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    write_text(path, &to_json_string(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

fn read_rows(path: &Path, expected: &[&str]) -> Result<Vec<Vec<String>>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e))?;
    let headers = rdr.headers().map_err(|e| parse_err(path, e))?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    rdr.records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| parse_err(path, e))
        })
        .collect()
}

fn num(path: &Path, line: usize, s: &str) -> Result<f64, IoError> {
    s.parse::<f64>()
        .map_err(|_| parse_err(path, format!("row {line}: not a number: {s:?}")))
}

fn csv_text(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub const SWEEP_HEADER: [&str; 3] = ["freq_hz", "re", "im"];

pub fn sweep_csv(sweep: &ComplexSweep) -> String {
    csv_text(
        &SWEEP_HEADER.join(","),
        sweep
            .freqs()
            .iter()
            .zip(sweep.s21())
            .map(|(f, z)| format!("{f},{},{}", z.re, z.im)),
    )
}

pub fn write_sweep(path: &Path, sweep: &ComplexSweep) -> Result<(), IoError> {
    write_text(path, &sweep_csv(sweep))
}

pub fn read_sweep(path: &Path) -> Result<ComplexSweep, IoError> {
    let rows = read_rows(path, &SWEEP_HEADER)?;
    let mut freqs = Vec::with_capacity(rows.len());
    let mut s21 = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        freqs.push(num(path, k + 2, &r[0])?);
        s21.push(Complex64::new(num(path, k + 2, &r[1])?, num(path, k + 2, &r[2])?));
    }
    ComplexSweep::new(freqs, s21).map_err(|e| parse_err(path, e))
}

pub const TRACE_HEADER: [&str; 3] = ["axis", "i", "q"];

pub fn trace_csv(trace: &IqTrace) -> String {
    csv_text(
        &TRACE_HEADER.join(","),
        trace
            .axis
            .iter()
            .zip(&trace.points)
            .map(|(a, z)| format!("{a},{},{}", z.re, z.im)),
    )
}

pub fn read_trace(path: &Path) -> Result<IqTrace, IoError> {
    let rows = read_rows(path, &TRACE_HEADER)?;
    let mut axis = Vec::with_capacity(rows.len());
    let mut pts = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        axis.push(num(path, k + 2, &r[0])?);
        pts.push(Complex64::new(num(path, k + 2, &r[1])?, num(path, k + 2, &r[2])?));
    }
    IqTrace::new(axis, pts).map_err(|e| parse_err(path, e))
}

pub const QI_HEADER: [&str; 3] = ["temperature_k", "inv_qi", "inv_qi_err"];

/// JSON sidecar of a [`QiSeries`] CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QiSidecar {
    pub resonator_id: String,
    pub f0_hz: f64,
    pub alpha: f64,
}

/// `series.csv` → `series.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn qi_series_csv(series: &QiSeries) -> String {
    csv_text(
        &QI_HEADER.join(","),
        (0..series.temperatures.len())
            .map(|k| format!("{},{},{}", series.temperatures[k], series.inv_qi[k], series.inv_qi_err[k])),
    )
}

pub fn write_qi_series(path: &Path, series: &QiSeries, alpha: f64) -> Result<(), IoError> {
    write_text(path, &qi_series_csv(series))?;
    write_json(
        &sidecar_path(path),
        &QiSidecar {
            resonator_id: series.resonator_id.clone(),
            f0_hz: series.f0_hz,
            alpha,
        },
    )
}

pub fn read_qi_series(path: &Path) -> Result<(QiSeries, QiSidecar), IoError> {
    let rows = read_rows(path, &QI_HEADER)?;
    let side_path = sidecar_path(path);
    let side: QiSidecar = read_json(&side_path)?;
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut e = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        t.push(num(path, k + 2, &r[0])?);
        y.push(num(path, k + 2, &r[1])?);
        e.push(num(path, k + 2, &r[2])?);
    }
    let series = QiSeries::new(t, y, e, side.f0_hz, side.resonator_id.clone()).map_err(|err| parse_err(path, err))?;
    Ok((series, side))
}

/// Header of a record file; the payload sits next to it with extension `.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub sample_rate_hz: f64,
    pub record_length: usize,
    pub n_records: usize,
    pub channels: usize,
}

/// Samples indexed `[channel][record][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub header: RecordHeader,
    pub data: Vec<Vec<Vec<f64>>>,
}

pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Header JSON text and little-endian f64 payload, channel-major.
pub fn encode_records(file: &RecordFile) -> Result<(String, Vec<u8>), IoError> {
    let h = &file.header;
    if file.data.len() != h.channels
        || file
            .data
            .iter()
            .any(|c| c.len() != h.n_records || c.iter().any(|r| r.len() != h.record_length))
    {
        return Err(IoError::Parse {
            path: PathBuf::new(),
            msg: "record data does not match header".into(),
        });
    }
    let mut bytes = Vec::with_capacity(8 * h.channels * h.n_records * h.record_length);
    for ch in &file.data {
        for rec in ch {
            for v in rec {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok((to_json_string(h), bytes))
}

/// Writes `header.json` and its `.bin` payload.
pub fn write_records(header_path: &Path, file: &RecordFile) -> Result<(), IoError> {
    let (header, bytes) = encode_records(file)?;
    let bin = payload_path(header_path);
    write_text(header_path, &header)?;
    fs::write(&bin, bytes).map_err(io_err(&bin))
}

pub fn read_records(header_path: &Path) -> Result<RecordFile, IoError> {
    let header: RecordHeader = read_json(header_path)?;
    if !(header.sample_rate_hz > 0.0) || header.channels == 0 {
        return Err(parse_err(header_path, "sample_rate_hz and channels must be positive"));
    }
    let bin = payload_path(header_path);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let expected = 8 * header.channels * header.n_records * header.record_length;
    if bytes.len() != expected {
        return Err(parse_err(&bin, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut it = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let data = (0..header.channels)
        .map(|_| {
            (0..header.n_records)
                .map(|_| it.by_ref().take(header.record_length).collect())
                .collect()
        })
        .collect();
    Ok(RecordFile { header, data })
}

pub const RECORD_CSV_HEADER: [&str; 3] = ["record_index", "sample_index", "value"];

/// Single-channel CSV fallback; rows may come in any order but every record
/// must be complete.
pub fn read_records_csv(path: &Path, sample_rate_hz: f64) -> Result<RecordFile, IoError> {
    let rows = read_rows(path, &RECORD_CSV_HEADER)?;
    let mut recs: Vec<Vec<Option<f64>>> = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let ri: usize = r[0].parse().map_err(|_| parse_err(path, format!("row {}: bad record index", k + 2)))?;
        let si: usize = r[1].parse().map_err(|_| parse_err(path, format!("row {}: bad sample index", k + 2)))?;
        let v = num(path, k + 2, &r[2])?;
        if recs.len() <= ri {
            recs.resize(ri + 1, Vec::new());
        }
        if recs[ri].len() <= si {
            recs[ri].resize(si + 1, None);
        }
        recs[ri][si] = Some(v);
    }
    let len = recs.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(recs.len());
    for (i, r) in recs.into_iter().enumerate() {
        if r.len() != len || r.iter().any(Option::is_none) {
            return Err(parse_err(path, format!("record {i} is incomplete")));
        }
        out.push(r.into_iter().map(|v| v.expect("checked")).collect());
    }
    Ok(RecordFile {
        header: RecordHeader {
            sample_rate_hz,
            record_length: len,
            n_records: out.len(),
            channels: 1,
        },
        data: vec![out],
    })
}

pub fn records_csv(records: &[Vec<f64>]) -> String {
    csv_text(
        &RECORD_CSV_HEADER.join(","),
        records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(s, v)| format!("{i},{s},{v}"))),
    )
}

pub const OFF_HEADER: [&str; 3] = ["record_index", "off_value", "tag"];

#[derive(Debug, Clone, PartialEq)]
pub struct OffRow {
    pub record_index: usize,
    pub off_value: f64,
    pub tag: Tag,
}

pub fn off_csv(rows: &[OffRow]) -> String {
    csv_text(
        &OFF_HEADER.join(","),
        rows.iter()
            .map(|r| format!("{},{},{}", r.record_index, r.off_value, r.tag.as_str())),
    )
}

pub fn read_off(path: &Path) -> Result<Vec<OffRow>, IoError> {
    read_rows(path, &OFF_HEADER)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            Ok(OffRow {
                record_index: r[0]
                    .parse()
                    .map_err(|_| parse_err(path, format!("row {}: bad record index", k + 2)))?,
                off_value: num(path, k + 2, &r[1])?,
                tag: r[2].parse().map_err(|e| parse_err(path, format!("row {}: {e}", k + 2)))?,
            })
        })
        .collect()
}

pub fn spectrum_csv(centers: &[f64], counts: &[u64], model: &[f64]) -> String {
    csv_text(
        "bin_center,counts,model",
        centers
            .iter()
            .zip(counts)
            .zip(model)
            .map(|((c, n), m)| format!("{c},{n},{m}")),
    )
}
