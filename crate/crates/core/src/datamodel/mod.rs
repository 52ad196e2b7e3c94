//! Sensor-domain types shared by every other module.

mod csvio;

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{
    load_scenario_csv, parse_scenario_row, read_scenario, save_scenario_csv, write_scenario,
    ColumnLayout, ScenarioRow,
};

/// TMP117 resolution in °C.
pub const TEMP_RESOLUTION_C: f64 = 0.0078125;
/// TMP117 operating envelope in °C.
pub const TEMP_MIN_C: f64 = -55.0;
pub const TEMP_MAX_C: f64 = 125.0;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_RATE_HZ: f64 = 10.0;

pub const AXIS_NAMES: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];
pub const AXIS_UNITS: [&str; 6] = ["N", "N", "N", "N·m", "N·m", "N·m"];

/// Six-axis force/torque value. Forces in N, moments in N·m.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench {
        fx: 0.0,
        fy: 0.0,
        fz: 0.0,
        mx: 0.0,
        my: 0.0,
        mz: 0.0,
    };

    pub fn new(fx: f64, fy: f64, fz: f64, mx: f64, my: f64, mz: f64) -> Self {
        Self {
            fx,
            fy,
            fz,
            mx,
            my,
            mz,
        }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.fx, self.fy, self.fz, self.mx, self.my, self.mz]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Checks finiteness and the per-axis full-scale bounds.
    pub fn validate(&self, fs: &FullScale) -> Result<()> {
        for (i, (v, r)) in self.to_array().iter().zip(fs.ranges).enumerate() {
            if !v.is_finite() {
                return Err(Error::rejected(format!("{} is not finite", AXIS_NAMES[i])));
            }
            if v.abs() > r {
                return Err(Error::rejected(format!(
                    "{} = {v} exceeds full scale ±{r} {}",
                    AXIS_NAMES[i], AXIS_UNITS[i]
                )));
            }
        }
        Ok(())
    }

    fn zip_with(self, o: Wrench, f: impl Fn(f64, f64) -> f64) -> Wrench {
        let (a, b) = (self.to_array(), o.to_array());
        Wrench::from_array(std::array::from_fn(|i| f(a[i], b[i])))
    }
}

impl Add for Wrench {
    type Output = Wrench;
    fn add(self, o: Wrench) -> Wrench {
        self.zip_with(o, |a, b| a + b)
    }
}

impl Sub for Wrench {
    type Output = Wrench;
    fn sub(self, o: Wrench) -> Wrench {
        self.zip_with(o, |a, b| a - b)
    }
}

impl Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::from_array(self.to_array().map(|v| -v))
    }
}

impl Mul<f64> for Wrench {
    type Output = Wrench;
    fn mul(self, k: f64) -> Wrench {
        Wrench::from_array(self.to_array().map(|v| v * k))
    }
}

/// Per-axis measurement range used for validation and full-scale error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullScale {
    pub ranges: [f64; 6],
}

impl Default for FullScale {
    fn default() -> Self {
        Self {
            ranges: [600.0, 600.0, 2000.0, 14.0, 14.0, 20.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorFrame {
    pub time_s: f64,
    pub adc: [i32; 6],
    pub temp_c: f64,
}

impl SensorFrame {
    pub fn adc_f64(&self) -> [f64; 6] {
        self.adc.map(f64::from)
    }
}

/// The most recent temperatures, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureWindow {
    temps_c: Vec<f64>,
}

impl TemperatureWindow {
    pub fn new(temps_c: Vec<f64>) -> Result<Self> {
        if temps_c.is_empty() {
            return Err(Error::rejected("temperature window is empty"));
        }
        if temps_c.iter().any(|t| !t.is_finite()) {
            return Err(Error::rejected("temperature window has a non-finite entry"));
        }
        Ok(Self { temps_c })
    }

    pub fn constant(temp_c: f64, len: usize) -> Result<Self> {
        Self::new(vec![temp_c; len])
    }

    pub fn len(&self) -> usize {
        self.temps_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps_c.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.temps_c.last().expect("window is never empty")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.temps_c
    }
}

/// A labeled (or unlabeled) time series of sensor frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub sample_rate_hz: f64,
    pub frames: Vec<SensorFrame>,
    pub truth_drift: Option<Vec<Wrench>>,
    pub truth_applied: Option<Vec<Wrench>>,
    pub meta: BTreeMap<String, String>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn temps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.temp_c).collect()
    }

    /// Checks every structural invariant. Row numbers in errors are
    /// 1-based frame indices.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::Validation {
                row: 0,
                msg: format!("sample rate must be positive, got {}", self.sample_rate_hz),
            });
        }
        for (name, list) in [("truth_drift", &self.truth_drift), ("truth_applied", &self.truth_applied)] {
            if let Some(l) = list {
                if l.len() != self.frames.len() {
                    return Err(Error::Validation {
                        row: 0,
                        msg: format!("{name} has {} entries for {} frames", l.len(), self.frames.len()),
                    });
                }
                if let Some(i) = l.iter().position(|w| !w.is_finite()) {
                    return Err(Error::Validation {
                        row: i + 1,
                        msg: format!("{name} is not finite"),
                    });
                }
            }
        }
        let period = 1.0 / self.sample_rate_hz;
        for (i, f) in self.frames.iter().enumerate() {
            let row = i + 1;
            if !f.time_s.is_finite() || f.time_s < 0.0 {
                return Err(Error::Validation {
                    row,
                    msg: format!("time_s must be finite and nonnegative, got {}", f.time_s),
                });
            }
            if !(TEMP_MIN_C..=TEMP_MAX_C).contains(&f.temp_c) {
                return Err(Error::Validation {
                    row,
                    msg: format!("temp_c {} outside [{TEMP_MIN_C}, {TEMP_MAX_C}] °C", f.temp_c),
                });
            }
            if i > 0 {
                let dt = f.time_s - self.frames[i - 1].time_s;
                if dt <= 0.0 {
                    return Err(Error::Validation {
                        row,
                        msg: format!(
                            "time_s {} does not increase (previous {})",
                            f.time_s,
                            self.frames[i - 1].time_s
                        ),
                    });
                }
                if ((dt - period) / period).abs() > 0.01 {
                    return Err(Error::Validation {
                        row,
                        msg: format!(
                            "sample spacing {dt} s inconsistent with {} Hz",
                            self.sample_rate_hz
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Fills `truth_drift` from `measured − applied` when only the applied
    /// load is known. `measured` is the calibrated wrench per frame.
    pub fn derive_drift_labels(&mut self, measured: &[Wrench]) -> Result<()> {
        if self.truth_drift.is_some() {
            return Ok(());
        }
        let applied = self.truth_applied.as_ref().ok_or_else(|| {
            Error::Labeling("scenario has neither drift labels nor applied-load truth".into())
        })?;
        if measured.len() != applied.len() {
            return Err(Error::rejected("measured wrench list does not match frames"));
        }
        self.truth_drift = Some(measured.iter().zip(applied).map(|(m, a)| *m - *a).collect());
        Ok(())
    }
}

/// Windows paired with drift targets, ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedSet {
    pub inputs: Vec<TemperatureWindow>,
    pub targets: Vec<Wrench>,
    pub axis_scale: [f64; 6],
}

impl SupervisedSet {
    pub fn new(inputs: Vec<TemperatureWindow>, targets: Vec<Wrench>) -> Result<Self> {
        let axis_scale = axis_scale_of(&targets);
        Self::with_scale(inputs, targets, axis_scale)
    }

    pub fn with_scale(
        inputs: Vec<TemperatureWindow>,
        targets: Vec<Wrench>,
        axis_scale: [f64; 6],
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::rejected(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if axis_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::rejected("axis_scale entries must be positive"));
        }
        Ok(Self {
            inputs,
            targets,
            axis_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn normalized_targets(&self) -> Vec<[f64; 6]> {
        self.targets
            .iter()
            .map(|t| {
                let a = t.to_array();
                std::array::from_fn(|i| a[i] / self.axis_scale[i])
            })
            .collect()
    }
}

/// Per-axis max-abs of `targets`, floored at 1e-6.
pub fn axis_scale_of(targets: &[Wrench]) -> [f64; 6] {
    let mut s = [1e-6f64; 6];
    for t in targets {
        for (si, v) in s.iter_mut().zip(t.to_array()) {
            *si = si.max(v.abs());
        }
    }
    s
}

/// Slides a window over the scenario, labeling each window with the drift
/// at its newest frame.
pub fn windows_from_scenario(s: &Scenario, window: usize, stride: usize) -> Result<SupervisedSet> {
    windows_in_range(s, window, stride, 0..s.frames.len())
}

/// Like [`windows_from_scenario`], restricted to target indices inside
/// `targets`. Windows may reach back before the range start; target indices
/// earlier than `window − 1` are skipped.
pub fn windows_in_range(
    s: &Scenario,
    window: usize,
    stride: usize,
    targets: std::ops::Range<usize>,
) -> Result<SupervisedSet> {
    let drift = s
        .truth_drift
        .as_ref()
        .ok_or_else(|| Error::Labeling(format!("scenario `{}` has no drift labels", s.name)))?;
    if window == 0 || stride == 0 {
        return Err(Error::rejected("window and stride must be at least 1"));
    }
    if s.frames.len() < window {
        return Err(Error::rejected(format!(
            "scenario has {} frames, fewer than the window of {window}",
            s.frames.len()
        )));
    }
    let end = targets.end.min(s.frames.len());
    let start = targets.start.max(window - 1);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut i = start;
    while i < end {
        let temps = s.frames[i + 1 - window..=i].iter().map(|f| f.temp_c).collect();
        inputs.push(TemperatureWindow::new(temps)?);
        labels.push(drift[i]);
        i += stride;
    }
    SupervisedSet::new(inputs, labels)
}

/// Rounds to the nearest TMP117 resolution step.
pub fn quantize_temperature(t_c: f64) -> f64 {
    (t_c / TEMP_RESOLUTION_C).round() * TEMP_RESOLUTION_C
}
