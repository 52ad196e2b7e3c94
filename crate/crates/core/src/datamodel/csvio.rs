//! Scenario CSV reader/writer.
//!
//! Schema: `time_s,adc1..adc6,temp_c[,dfx..dmz][,afx..amz]`. The drift and
//! applied-load column groups are each all-present or all-absent. Floats are
//! written in shortest round-trip form, so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Scenario, SensorFrame, Wrench, DEFAULT_RATE_HZ};
use crate::error::{Error, Result};

const BASE_COLUMNS: [&str; 8] = ["time_s", "adc1", "adc2", "adc3", "adc4", "adc5", "adc6", "temp_c"];
const DRIFT_COLUMNS: [&str; 6] = ["dfx", "dfy", "dfz", "dmx", "dmy", "dmz"];
const APPLIED_COLUMNS: [&str; 6] = ["afx", "afy", "afz", "amx", "amy", "amz"];

/// Which optional column groups a scenario file carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColumnLayout {
    pub drift: bool,
    pub applied: bool,
}

impl ColumnLayout {
    pub fn of(s: &Scenario) -> Self {
        Self {
            drift: s.truth_drift.is_some(),
            applied: s.truth_applied.is_some(),
        }
    }

    pub fn columns(&self) -> Vec<&'static str> {
        let mut c = BASE_COLUMNS.to_vec();
        if self.drift {
            c.extend(DRIFT_COLUMNS);
        }
        if self.applied {
            c.extend(APPLIED_COLUMNS);
        }
        c
    }

    pub fn width(&self) -> usize {
        8 + 6 * (self.drift as usize + self.applied as usize)
    }

    pub fn from_header<'a>(fields: impl IntoIterator<Item = &'a str>) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = fields.into_iter().map(str::trim).collect();
        for layout in [
            ColumnLayout { drift: false, applied: false },
            ColumnLayout { drift: true, applied: false },
            ColumnLayout { drift: false, applied: true },
            ColumnLayout { drift: true, applied: true },
        ] {
            if fields == layout.columns() {
                return Ok(layout);
            }
        }
        Err(format!(
            "unrecognised header `{}`; expected {} with optional dfx..dmz and afx..amz groups",
            fields.join(","),
            BASE_COLUMNS.join(",")
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioRow {
    pub frame: SensorFrame,
    pub drift: Option<Wrench>,
    pub applied: Option<Wrench>,
}

fn parse_f64(s: &str, col: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("column {col}: `{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("column {col}: `{s}` is not finite"));
    }
    Ok(v)
}

fn parse_count(s: &str, col: &str) -> std::result::Result<i32, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<i32>() {
        return Ok(v);
    }
    let v = parse_f64(t, col)?;
    if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
        return Err(format!("column {col}: `{s}` is not an integer ADC count"));
    }
    Ok(v as i32)
}

/// Parses one data row. The error string carries no position; callers add it.
pub fn parse_scenario_row<'a>(
    fields: impl IntoIterator<Item = &'a str>,
    layout: ColumnLayout,
) -> std::result::Result<ScenarioRow, String> {
    let fields: Vec<&str> = fields.into_iter().collect();
    if fields.len() != layout.width() {
        return Err(format!("expected {} fields, found {}", layout.width(), fields.len()));
    }
    let time_s = parse_f64(fields[0], "time_s")?;
    let mut adc = [0i32; 6];
    for (k, a) in adc.iter_mut().enumerate() {
        *a = parse_count(fields[1 + k], BASE_COLUMNS[1 + k])?;
    }
    let temp_c = parse_f64(fields[7], "temp_c")?;
    let mut at = 8;
    let mut group = |names: &[&str; 6]| -> std::result::Result<Wrench, String> {
        let mut v = [0.0; 6];
        for (k, x) in v.iter_mut().enumerate() {
            *x = parse_f64(fields[at + k], names[k])?;
        }
        at += 6;
        Ok(Wrench::from_array(v))
    };
    let drift = if layout.drift { Some(group(&DRIFT_COLUMNS)?) } else { None };
    let applied = if layout.applied { Some(group(&APPLIED_COLUMNS)?) } else { None };
    Ok(ScenarioRow {
        frame: SensorFrame { time_s, adc, temp_c },
        drift,
        applied,
    })
}

/// Reads a scenario from CSV text. The sample rate is inferred from the
/// median frame spacing (default rate when fewer than two frames).
pub fn read_scenario<R: Read>(reader: R, name: &str) -> Result<Scenario> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(e, 1))?,
        None => return Err(Error::Parse { line: 1, msg: "missing header".into() }),
    };
    let header_line = header.position().map_or(1, |p| p.line() as usize);
    let layout = ColumnLayout::from_header(header.iter())
        .map_err(|msg| Error::Parse { line: header_line, msg })?;

    let mut frames = Vec::new();
    let mut drift = layout.drift.then(Vec::new);
    let mut applied = layout.applied.then(Vec::new);
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = parse_scenario_row(rec.iter(), layout).map_err(|msg| Error::Parse { line, msg })?;
        frames.push(row.frame);
        if let (Some(d), Some(v)) = (drift.as_mut(), row.drift) {
            d.push(v);
        }
        if let (Some(a), Some(v)) = (applied.as_mut(), row.applied) {
            a.push(v);
        }
    }

    let s = Scenario {
        name: name.to_string(),
        sample_rate_hz: infer_rate(&frames),
        frames,
        truth_drift: drift,
        truth_applied: applied,
        meta: BTreeMap::new(),
    };
    s.validate()?;
    Ok(s)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn infer_rate(frames: &[SensorFrame]) -> f64 {
    if frames.len() < 2 {
        return DEFAULT_RATE_HZ;
    }
    let mut dts: Vec<f64> = frames.windows(2).map(|w| w[1].time_s - w[0].time_s).collect();
    dts.sort_by(f64::total_cmp);
    let median = dts[dts.len() / 2];
    if median > 0.0 {
        1.0 / median
    } else {
        // Non-increasing times; validation reports the offending row.
        DEFAULT_RATE_HZ
    }
}

pub fn write_scenario<W: Write>(s: &Scenario, w: &mut W) -> Result<()> {
    let layout = ColumnLayout::of(s);
    writeln!(w, "{}", layout.columns().join(","))?;
    for (i, f) in s.frames.iter().enumerate() {
        write!(
            w,
            "{},{},{},{},{},{},{},{}",
            f.time_s, f.adc[0], f.adc[1], f.adc[2], f.adc[3], f.adc[4], f.adc[5], f.temp_c
        )?;
        for list in [&s.truth_drift, &s.truth_applied].into_iter().flatten() {
            for v in list[i].to_array() {
                write!(w, ",{v}")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_scenario_csv(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let name = path
        .file_stem()
        .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
    let mut s = read_scenario(file, &name)?;
    s.meta.insert("source".into(), path.display().to_string());
    Ok(s)
}

pub fn save_scenario_csv(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scenario(s, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize, drift: bool, applied: bool, seed: u64) -> Scenario {
        let mut x = seed | 1;
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x % 100_000) as f64 / 1000.0 - 50.0
        };
        let frames: Vec<SensorFrame> = (0..n)
            .map(|i| SensorFrame {
                time_s: i as f64 / 10.0,
                adc: [i as i32, -3, 7, 8191, -8192, 0],
                temp_c: next() * 0.9,
            })
            .collect();
        let mut wrenches = |k: usize| -> Vec<Wrench> {
            (0..k).map(|_| Wrench::from_array(std::array::from_fn(|_| next() / 7.0))).collect()
        };
        Scenario {
            name: "sample".into(),
            sample_rate_hz: 10.0,
            frames,
            truth_drift: drift.then(|| wrenches(n)),
            truth_applied: applied.then(|| wrenches(n)),
            meta: BTreeMap::new(),
        }
    }

    fn assert_same_numbers(a: &Scenario, b: &Scenario) {
        assert_eq!(a.frames.len(), b.frames.len());
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert!((x.time_s - y.time_s).abs() <= 1e-9);
            assert!((x.temp_c - y.temp_c).abs() <= 1e-9);
            assert_eq!(x.adc, y.adc);
        }
        for (la, lb) in [(&a.truth_drift, &b.truth_drift), (&a.truth_applied, &b.truth_applied)] {
            assert_eq!(la.is_some(), lb.is_some());
            if let (Some(la), Some(lb)) = (la, lb) {
                for (x, y) in la.iter().zip(lb) {
                    for (p, q) in x.to_array().iter().zip(y.to_array()) {
                        assert!((p - q).abs() <= 1e-9);
                    }
                }
            }
        }
        if a.frames.len() >= 2 {
            assert!((a.sample_rate_hz - b.sample_rate_hz).abs() <= 1e-9 * a.sample_rate_hz);
        }
    }

    #[test]
    fn three_rows() {
        let text = "time_s,adc1,adc2,adc3,adc4,adc5,adc6,temp_c\n0,1,2,3,4,5,6,20\n0.1,1,2,3,4,5,6,20.5\n0.2,1,2,3,4,5,6,21\n";
        let s = read_scenario(text.as_bytes(), "x").unwrap();
        assert_eq!(s.frames.len(), 3);
        assert!(s.truth_drift.is_none());
        assert!((s.sample_rate_hz - 10.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_timestamp_names_the_row() {
        let text = "time_s,adc1,adc2,adc3,adc4,adc5,adc6,temp_c\n0,1,2,3,4,5,6,20\n0.1,1,2,3,4,5,6,20\n0.1,1,2,3,4,5,6,20\n";
        match read_scenario(text.as_bytes(), "x") {
            Err(Error::Validation { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("does not increase"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "time_s,adc1,adc2,adc3,adc4,adc5,adc6,temp_c\n0,1,2,3,4,5,6,20\n0.1,1,2,x,4,5,6,20\n";
        match read_scenario(text.as_bytes(), "x") {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("adc3"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        let short = "time_s,adc1,adc2,adc3,adc4,adc5,adc6,temp_c\n0,1,2\n";
        assert!(matches!(read_scenario(short.as_bytes(), "x"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn partial_column_group_is_rejected() {
        let text = "time_s,adc1,adc2,adc3,adc4,adc5,adc6,temp_c,dfx,dfy\n";
        assert!(matches!(read_scenario(text.as_bytes(), "x"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_scenario("".as_bytes(), "x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_and_single_frame_files() {
        let mut buf = Vec::new();
        write_scenario(&sample(0, true, true, 1), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("time_s,adc1"));

        let mut buf = Vec::new();
        write_scenario(&sample(1, false, false, 1), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = sample(25, true, true, 9);
        save_scenario_csv(&s, &path).unwrap();
        let back = load_scenario_csv(&path).unwrap();
        assert_eq!(back.name, "s");
        assert_same_numbers(&s, &back);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let s = sample(2, false, false, 1);
        let err = save_scenario_csv(&s, "/nonexistent-dir/x/y.csv").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(n in 0usize..40, drift: bool, applied: bool, seed in any::<u64>()) {
            let s = sample(n, drift, applied, seed);
            let mut buf = Vec::new();
            write_scenario(&s, &mut buf).unwrap();
            let back = read_scenario(&buf[..], "sample").unwrap();
            assert_same_numbers(&s, &back);
        }
    }
}
