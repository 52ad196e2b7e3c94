//! Raw ADC → wrench → drift-compensated wrench, in batch and streaming form.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datamodel::{parse_scenario_row, ColumnLayout, FullScale, Scenario, SensorFrame, TemperatureWindow, Wrench};
use crate::error::{Error, Result};
use crate::linalg::{solve_least_squares, Matrix, Vector};
use crate::models::{DriftModel, Workspace};

pub const CALIBRATION_FORMAT: &str = "driftcomp-calibration";
pub const CALIBRATION_VERSION: u32 = 1;
/// Full-scale span of the converter in counts, used by the default matrix.
pub const ADC_HALF_SPAN: f64 = 8192.0;

/// Linear calibration `wrench = c · adc + o`.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationMatrix {
    pub c: Matrix,
    pub o: Vector,
}

impl Default for CalibrationMatrix {
    /// Diagonal matrix mapping ±8192 counts onto each axis range.
    fn default() -> Self {
        let fs = FullScale::default();
        Self::diagonal(std::array::from_fn(|i| fs.ranges[i] / ADC_HALF_SPAN), [0.0; 6])
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationDocument {
    format: String,
    version: u32,
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl CalibrationMatrix {
    pub fn new(c: Matrix, o: Vector) -> Result<Self> {
        if c.shape() != (6, 6) || o.len() != 6 {
            return Err(Error::rejected(format!(
                "calibration must be 6×6 with 6 offsets, got {:?} and {}",
                c.shape(),
                o.len()
            )));
        }
        Ok(Self { c, o })
    }

    pub fn diagonal(gains: [f64; 6], offset: [f64; 6]) -> Self {
        let mut c = Matrix::zeros(6, 6);
        for (i, g) in gains.iter().enumerate() {
            c.set(i, i, *g);
        }
        Self {
            c,
            o: Vector::new(offset.to_vec()).expect("finite offset"),
        }
    }

    pub fn apply(&self, adc: &[f64; 6]) -> Wrench {
        let c = self.c.as_slice();
        let o = self.o.as_slice();
        Wrench::from_array(std::array::from_fn(|i| {
            c[i * 6..i * 6 + 6].iter().zip(adc).map(|(a, b)| a * b).sum::<f64>() + o[i]
        }))
    }

    /// ADC values (not rounded) whose calibrated wrench is `w`.
    pub fn inverse_image(&self, w: &Wrench) -> Result<[f64; 6]> {
        let rhs: Vec<f64> = w.to_array().iter().zip(self.o.as_slice()).map(|(a, b)| a - b).collect();
        let x = solve_least_squares(&self.c, &Matrix::new(6, 1, rhs)?, 0.0)?;
        Ok(std::array::from_fn(|i| x.get(i, 0)))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let doc = CalibrationDocument {
            format: CALIBRATION_FORMAT.into(),
            version: CALIBRATION_VERSION,
            matrix: (0..6).map(|i| self.c.row(i).to_vec()).collect(),
            offset: self.o.as_slice().to_vec(),
        };
        serde_json::to_writer_pretty(&mut w, &doc)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: std::io::Read>(r: R) -> Result<Self> {
        let doc: CalibrationDocument = serde_json::from_reader(r)?;
        if doc.format != CALIBRATION_FORMAT {
            return Err(Error::Format(format!("not a calibration file (format `{}`)", doc.format)));
        }
        if doc.version != CALIBRATION_VERSION {
            return Err(Error::Format(format!("unsupported calibration version {}", doc.version)));
        }
        if doc.matrix.len() != 6 || doc.matrix.iter().any(|r| r.len() != 6) || doc.offset.len() != 6 {
            return Err(Error::Format("calibration needs a 6×6 matrix and 6 offsets".into()));
        }
        let c = Matrix::from_rows(&doc.matrix).map_err(|e| Error::Format(e.to_string()))?;
        let o = Vector::new(doc.offset).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(c, o)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub fn raw_to_wrench(adc: &[f64; 6], calib: &CalibrationMatrix) -> Wrench {
    calib.apply(adc)
}

pub fn compensate(measured: &Wrench, drift: &Wrench) -> Wrench {
    *measured - *drift
}

/// Streaming compensator: a fixed-length temperature ring feeding the drift
/// model, plus the calibration.
#[derive(Clone, Debug)]
pub struct CompensatorState {
    model: Arc<DriftModel>,
    calib: CalibrationMatrix,
    window: usize,
    // Every sample is stored twice, `window` apart, so the oldest-first view
    // is always the contiguous slice `ring[head..head + window]`.
    ring: Vec<f64>,
    head: usize,
    count_seen: u64,
    ws: Workspace,
}

impl CompensatorState {
    pub fn new(model: Arc<DriftModel>, calib: CalibrationMatrix) -> Self {
        let window = model.window();
        Self {
            model,
            calib,
            window,
            ring: vec![0.0; 2 * window],
            head: 0,
            count_seen: 0,
            ws: Workspace::default(),
        }
    }

    /// Like [`CompensatorState::new`] but checks a requested window length
    /// against the model.
    pub fn with_window(model: Arc<DriftModel>, calib: CalibrationMatrix, window: usize) -> Result<Self> {
        if window != model.window() {
            return Err(Error::Config(format!(
                "window {window} does not match the model's window {}",
                model.window()
            )));
        }
        Ok(Self::new(model, calib))
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    pub fn calibration(&self) -> &CalibrationMatrix {
        &self.calib
    }

    pub fn count_seen(&self) -> u64 {
        self.count_seen
    }

    /// Current temperature window, oldest first. Empty before the first frame.
    pub fn window(&self) -> &[f64] {
        if self.count_seen == 0 {
            &[]
        } else {
            &self.ring[self.head..self.head + self.window]
        }
    }

    pub fn reset(&mut self) {
        self.count_seen = 0;
        self.head = 0;
    }

    fn push_temp(&mut self, t: f64) {
        if self.count_seen == 0 {
            self.ring.fill(t);
        } else {
            self.ring[self.head] = t;
            self.ring[self.head + self.window] = t;
            self.head = (self.head + 1) % self.window;
        }
        self.count_seen += 1;
    }

    /// Consumes one frame; returns `(compensated, drift)`.
    pub fn push_frame(&mut self, frame: &SensorFrame) -> Result<(Wrench, Wrench)> {
        if !frame.temp_c.is_finite() || !frame.time_s.is_finite() {
            return Err(Error::rejected("frame has non-finite time or temperature"));
        }
        self.push_temp(frame.temp_c);
        let raw = self.calib.apply(&frame.adc_f64());
        let drift = self.model.predict_with(&self.ring[self.head..self.head + self.window], &mut self.ws);
        Ok((compensate(&raw, &drift), drift))
    }
}

/// Per-frame pipeline outputs aligned with the scenario frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioRun {
    pub raw: Vec<Wrench>,
    pub drift: Vec<Wrench>,
    pub compensated: Vec<Wrench>,
}

pub fn run_scenario(s: &Scenario, state: &mut CompensatorState) -> Result<ScenarioRun> {
    if s.is_empty() {
        return Err(Error::rejected("scenario has no frames"));
    }
    let mut out = ScenarioRun {
        raw: Vec::with_capacity(s.len()),
        drift: Vec::with_capacity(s.len()),
        compensated: Vec::with_capacity(s.len()),
    };
    for f in &s.frames {
        let (comp, drift) = state.push_frame(f)?;
        out.raw.push(comp + drift);
        out.drift.push(drift);
        out.compensated.push(comp);
    }
    Ok(out)
}

/// Drift for every frame, built from explicitly materialized windows
/// (first-temperature padding during warm-up). Independent of the ring
/// buffer, so it serves as the reference for the streaming path.
pub fn batch_drift(model: &DriftModel, s: &Scenario) -> Result<Vec<Wrench>> {
    let temps = s.temps();
    let n = model.window();
    let mut out = Vec::with_capacity(temps.len());
    for k in 0..temps.len() {
        let lo = (k + 1).saturating_sub(n);
        let mut w = vec![temps[0]; n - (k + 1 - lo)];
        w.extend_from_slice(&temps[lo..=k]);
        out.push(model.predict(&TemperatureWindow::new(w)?)?);
    }
    Ok(out)
}

/// Counts from a streaming run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub rows: usize,
    pub skipped: usize,
}

pub const STREAM_HEADER: &str = "time_s,fx,fy,fz,mx,my,mz,dfx,dfy,dfz,dmx,dmy,dmz";

/// Reads scenario CSV rows from `input`, writes one compensated row per
/// valid input row to `output` (flushed per row), and reports bad rows to
/// `errors` with their line number.
pub fn stream_compensate<R: BufRead, W: Write, E: Write>(
    state: &mut CompensatorState,
    input: R,
    mut output: W,
    mut errors: E,
) -> Result<StreamSummary> {
    let mut summary = StreamSummary::default();
    let mut layout: Option<ColumnLayout> = None;
    let mut last_time: Option<f64> = None;
    writeln!(output, "{STREAM_HEADER}")?;
    output.flush()?;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields = text.split(',');
        let Some(l) = layout else {
            match ColumnLayout::from_header(fields) {
                Ok(l) => layout = Some(l),
                Err(msg) => return Err(Error::Parse { line: lineno, msg }),
            }
            continue;
        };
        let row = match parse_scenario_row(fields, l) {
            Ok(r) => r,
            Err(msg) => {
                writeln!(errors, "line {lineno}: {msg}; row skipped")?;
                summary.skipped += 1;
                continue;
            }
        };
        if last_time.is_some_and(|t| row.frame.time_s <= t) {
            writeln!(
                errors,
                "line {lineno}: time_s {} does not increase; row skipped",
                row.frame.time_s
            )?;
            summary.skipped += 1;
            continue;
        }
        last_time = Some(row.frame.time_s);
        let (c, d) = state.push_frame(&row.frame)?;
        let (c, d) = (c.to_array(), d.to_array());
        write!(output, "{}", row.frame.time_s)?;
        for v in c.iter().chain(&d) {
            write!(output, ",{v}")?;
        }
        writeln!(output)?;
        output.flush()?;
        summary.rows += 1;
    }
    Ok(summary)
}
