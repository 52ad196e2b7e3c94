//! Synthetic drift scenarios.
//!
//! Measured case temperature follows a protocol profile; the internal
//! temperature that drives drift lags it through a first-order filter, and
//! drift is a cubic of the lagged temperature. Because of the lag, drift is
//! not a function of the instantaneous reading.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{quantize_temperature, Scenario, SensorFrame, Wrench};
use crate::error::{Error, Result};
use crate::pipeline::CalibrationMatrix;

pub const REFERENCE_TEMP_C: f64 = 20.0;
pub const DEFAULT_TAU_S: f64 = 30.0;
/// White temperature noise before quantization, about 1.3 LSB of the sensor.
pub const DEFAULT_TEMP_NOISE_C: f64 = 0.01;
pub const DEFAULT_ADC_NOISE_COUNTS: i32 = 2;
pub const DEFAULT_WALK_COMPRESS: f64 = 2.0;

// Independent random streams derived from one user seed.
const STREAM_TEMP_NOISE: u64 = 0x7465_6d70;
const STREAM_ADC_NOISE: u64 = 0x6164_6300;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub tau_s: f64,
    /// Initial internal temperature; `None` starts at the first reading.
    pub t_int_0: Option<f64>,
    /// Per axis `[c1, c2, c3]` multiplying `(T_int − 20)^k`.
    pub drift_coeffs: [[f64; 3]; 6],
    pub axis_gain: [f64; 6],
}

impl Default for ThermalModel {
    fn default() -> Self {
        Self {
            tau_s: DEFAULT_TAU_S,
            t_int_0: None,
            drift_coeffs: [
                [0.55, 0.004, 0.00018],
                [-0.45, 0.006, -0.00012],
                [1.6, 0.025, 0.0007],
                [0.018, -0.00025, 0.000006],
                [-0.022, 0.0002, -0.000005],
                [0.012, 0.00015, 0.000004],
            ],
            axis_gain: [1.0; 6],
        }
    }
}

impl ThermalModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_s > 0.0 && self.tau_s.is_finite()) {
            return Err(Error::Config(format!("tau_s must be positive, got {}", self.tau_s)));
        }
        let finite = self.drift_coeffs.iter().flatten().chain(&self.axis_gain).all(|v| v.is_finite());
        if !finite || self.t_int_0.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("thermal model has non-finite parameters".into()));
        }
        Ok(())
    }

    /// Drift at a given internal temperature; zero at the reference.
    pub fn drift_at(&self, t_int: f64) -> Wrench {
        let d = t_int - REFERENCE_TEMP_C;
        Wrench::from_array(std::array::from_fn(|i| {
            let [c1, c2, c3] = self.drift_coeffs[i];
            self.axis_gain[i] * d * (c1 + d * (c2 + d * c3))
        }))
    }
}

/// First-order lag `T[k+1] = T[k] + (dt/τ)(measured[k] − T[k])`.
pub fn internal_temperature(measured: &[f64], tm: &ThermalModel, dt_s: f64) -> Result<Vec<f64>> {
    if !(dt_s > 0.0 && dt_s.is_finite()) {
        return Err(Error::Config(format!("dt must be positive, got {dt_s}")));
    }
    tm.validate()?;
    let Some(&first) = measured.first() else {
        return Ok(Vec::new());
    };
    let a = dt_s / tm.tau_s;
    let mut t = tm.t_int_0.unwrap_or(first);
    let mut out = Vec::with_capacity(measured.len());
    for &m in measured {
        out.push(t);
        t += a * (m - t);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// Climate-chamber program: starting at `start_c`, ramp through `legs`
    /// in order at each leg's fixed rate, repeating the program until the
    /// duration is covered.
    ChamberCycle { start_c: f64, legs: Vec<ChamberLeg> },
    /// Linear ramp from `start_c` by `rise_c` over the profile duration.
    Heater { start_c: f64, rise_c: f64 },
    /// Linear ramp from `start_c` down by `drop_c` over the profile duration.
    Ice { start_c: f64, drop_c: f64 },
    /// Foot contact on cold, hot, then cold plates. Each plate lasts
    /// `plate_s / compress`; the case approaches the plate temperature with
    /// time constant `contact_tau_s` starting from `ambient_c`.
    Walking {
        cold_c: f64,
        hot_c: f64,
        ambient_c: f64,
        plate_s: f64,
        compress: f64,
        contact_tau_s: f64,
    },
    Constant { level_c: f64 },
}

/// One linear ramp of a chamber program.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChamberLeg {
    pub target_c: f64,
    /// Ramp rate magnitude in °C/s.
    pub rate_c_per_s: f64,
}

impl ChamberLeg {
    pub const fn new(target_c: f64, rate_c_per_s: f64) -> Self {
        Self { target_c, rate_c_per_s }
    }
}

/// Default chamber program, starting and ending at −20 °C.
///
/// One slow calibration sweep up to 60 °C and back, decelerating in stages
/// into long creeps near room temperature, followed by fast full-range
/// triangles.
pub const DEFAULT_CHAMBER_LEGS: &[ChamberLeg] = &[
    ChamberLeg::new(12.0, 0.5),
    ChamberLeg::new(18.0, 0.2),
    ChamberLeg::new(22.0, 0.1),
    ChamberLeg::new(37.0, 0.05),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(26.0, 0.5),
    ChamberLeg::new(21.0, 0.2),
    ChamberLeg::new(18.0, 0.1),
    ChamberLeg::new(8.0, 0.025),
    ChamberLeg::new(-20.0, 0.5),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(-20.0, 0.5),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(-20.0, 0.5),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(-20.0, 0.5),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(-20.0, 0.5),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(-20.0, 0.5),
    ChamberLeg::new(60.0, 0.5),
    ChamberLeg::new(-20.0, 0.5),
];

/// Duration of one pass through `legs` starting from `start_c`.
pub fn chamber_program_s(start_c: f64, legs: &[ChamberLeg]) -> f64 {
    let mut from = start_c;
    legs.iter()
        .map(|l| {
            let d = (l.target_c - from).abs() / l.rate_c_per_s;
            from = l.target_c;
            d
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    pub duration_s: f64,
    pub seed: u64,
    pub noise_sigma_c: f64,
}

impl ProfileSpec {
    pub fn chamber(seed: u64) -> Self {
        let legs = DEFAULT_CHAMBER_LEGS.to_vec();
        Self {
            duration_s: chamber_program_s(-20.0, &legs),
            kind: ProfileKind::ChamberCycle { start_c: -20.0, legs },
            seed,
            noise_sigma_c: DEFAULT_TEMP_NOISE_C,
        }
    }

    pub fn heater(seed: u64) -> Self {
        Self {
            kind: ProfileKind::Heater {
                start_c: 25.0,
                rise_c: 10.0,
            },
            duration_s: 200.0,
            seed,
            noise_sigma_c: DEFAULT_TEMP_NOISE_C,
        }
    }

    pub fn ice(seed: u64) -> Self {
        Self {
            kind: ProfileKind::Ice {
                start_c: 15.0,
                drop_c: 5.0,
            },
            duration_s: 300.0,
            seed,
            noise_sigma_c: DEFAULT_TEMP_NOISE_C,
        }
    }

    pub fn walking(seed: u64, compress: f64) -> Self {
        let plate_s = 1200.0;
        Self {
            kind: ProfileKind::Walking {
                cold_c: -20.0,
                hot_c: 70.0,
                ambient_c: 20.0,
                plate_s,
                compress,
                contact_tau_s: 600.0,
            },
            duration_s: 3.0 * plate_s / compress,
            seed,
            noise_sigma_c: DEFAULT_TEMP_NOISE_C,
        }
    }

    pub fn constant(seed: u64, level_c: f64, duration_s: f64) -> Self {
        Self {
            kind: ProfileKind::Constant { level_c },
            duration_s,
            seed,
            noise_sigma_c: DEFAULT_TEMP_NOISE_C,
        }
    }

    /// Default spec for a profile name as used on the command line.
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        Ok(match name {
            "chamber" | "chamber_cycle" | "chamber-cycle" => Self::chamber(seed),
            "heater" | "heating" => Self::heater(seed),
            "ice" | "cooling" => Self::ice(seed),
            "walking" | "walk" => Self::walking(seed, DEFAULT_WALK_COMPRESS),
            "constant" => Self::constant(seed, REFERENCE_TEMP_C, 60.0),
            other => {
                return Err(Error::Config(format!(
                    "unknown profile `{other}` (chamber, heater, ice, walking, constant)"
                )))
            }
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ProfileKind::ChamberCycle { .. } => "chamber",
            ProfileKind::Heater { .. } => "heater",
            ProfileKind::Ice { .. } => "ice",
            ProfileKind::Walking { .. } => "walking",
            ProfileKind::Constant { .. } => "constant",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration_s)));
        }
        if !(self.noise_sigma_c >= 0.0 && self.noise_sigma_c.is_finite()) {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        let ok = match &self.kind {
            ProfileKind::ChamberCycle { start_c, legs } => {
                start_c.is_finite()
                    && !legs.is_empty()
                    && legs.iter().all(|l| l.target_c.is_finite() && l.rate_c_per_s > 0.0 && l.rate_c_per_s.is_finite())
                    && chamber_program_s(*start_c, legs) > 0.0
            }
            ProfileKind::Walking {
                plate_s,
                compress,
                contact_tau_s,
                ..
            } => *plate_s > 0.0 && *compress > 0.0 && *contact_tau_s > 0.0,
            _ => true,
        };
        if !ok {
            return Err(Error::Config(format!("invalid {} profile parameters", self.kind_name())));
        }
        Ok(())
    }

    fn frames(&self, rate_hz: f64) -> usize {
        (self.duration_s * rate_hz).round().max(1.0) as usize
    }
}

/// Noise-free protocol curve sampled at `rate_hz`.
pub fn base_curve(spec: &ProfileSpec, rate_hz: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::Config(format!("sample rate must be positive, got {rate_hz}")));
    }
    let n = spec.frames(rate_hz);
    let dt = 1.0 / rate_hz;
    let times = (0..n).map(|k| k as f64 * dt);
    Ok(match spec.kind {
        ProfileKind::Constant { level_c } => vec![level_c; n],
        ProfileKind::ChamberCycle { start_c, ref legs } => {
            let mut out = Vec::with_capacity(n);
            let (mut leg, mut from, mut leg_start) = (0, start_c, 0.0);
            let leg_len = |from: f64, l: &ChamberLeg| (l.target_c - from).abs() / l.rate_c_per_s;
            for t in times {
                while t >= leg_start + leg_len(from, &legs[leg]) {
                    leg_start += leg_len(from, &legs[leg]);
                    from = legs[leg].target_c;
                    leg = (leg + 1) % legs.len();
                }
                let l = &legs[leg];
                out.push(from + (l.target_c - from).signum() * l.rate_c_per_s * (t - leg_start));
            }
            out
        }
        ProfileKind::Heater { start_c, rise_c } => times.map(|t| start_c + rise_c * t / spec.duration_s).collect(),
        ProfileKind::Ice { start_c, drop_c } => times.map(|t| start_c - drop_c * t / spec.duration_s).collect(),
        ProfileKind::Walking {
            cold_c,
            hot_c,
            ambient_c,
            plate_s,
            compress,
            contact_tau_s,
        } => {
            let plate = plate_s / compress;
            let plates = [cold_c, hot_c, cold_c];
            let a = dt / contact_tau_s;
            let mut temp = ambient_c;
            (0..n)
                .map(|k| {
                    let out = temp;
                    let idx = ((k as f64 * dt / plate) as usize).min(2);
                    temp += a * (plates[idx] - temp);
                    out
                })
                .collect()
        }
    })
}

/// Measured temperatures: protocol curve plus Gaussian sensor noise, then
/// quantized to the temperature sensor's resolution.
pub fn gen_profile(spec: &ProfileSpec, rate_hz: f64) -> Result<Vec<f64>> {
    let base = base_curve(spec, rate_hz)?;
    let mut rng = stream(spec.seed, STREAM_TEMP_NOISE);
    let noise = Normal::new(0.0, spec.noise_sigma_c).map_err(|e| Error::Config(e.to_string()))?;
    Ok(base.into_iter().map(|t| quantize_temperature(t + noise.sample(&mut rng))).collect())
}

/// Applied load over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadSchedule {
    Constant { load: Wrench },
    /// Stance/swing gait: `load` for the first `duty` fraction of each
    /// period, zero otherwise.
    SquareWave { load: Wrench, period_s: f64, duty: f64 },
}

impl LoadSchedule {
    /// Default stance pattern for the walking protocol.
    pub fn gait() -> Self {
        LoadSchedule::SquareWave {
            load: Wrench::new(4.0, -2.5, 120.0, 0.3, -0.4, 0.05),
            period_s: 1.0,
            duty: 0.6,
        }
    }

    pub fn at(&self, t_s: f64) -> Wrench {
        match *self {
            LoadSchedule::Constant { load } => load,
            LoadSchedule::SquareWave { load, period_s, duty } => {
                if (t_s / period_s).fract() < duty {
                    load
                } else {
                    Wrench::ZERO
                }
            }
        }
    }
}

/// Optional knobs for [`gen_scenario_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioOptions {
    pub calib: CalibrationMatrix,
    pub adc_noise_counts: i32,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            calib: CalibrationMatrix::default(),
            adc_noise_counts: DEFAULT_ADC_NOISE_COUNTS,
        }
    }
}

pub fn gen_scenario(spec: &ProfileSpec, tm: &ThermalModel, rate_hz: f64, load: Option<&LoadSchedule>) -> Result<Scenario> {
    gen_scenario_with(spec, tm, rate_hz, load, &ScenarioOptions::default())
}

pub fn gen_scenario_with(
    spec: &ProfileSpec,
    tm: &ThermalModel,
    rate_hz: f64,
    load: Option<&LoadSchedule>,
    opts: &ScenarioOptions,
) -> Result<Scenario> {
    let measured = gen_profile(spec, rate_hz)?;
    let dt = 1.0 / rate_hz;
    let internal = internal_temperature(&measured, tm, dt)?;
    if opts.adc_noise_counts < 0 {
        return Err(Error::Config("ADC noise amplitude must be nonnegative".into()));
    }
    let mut rng = stream(spec.seed, STREAM_ADC_NOISE);
    let amp = opts.adc_noise_counts;
    let n = measured.len();
    let (mut frames, mut drift, mut applied) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let time_s = k as f64 * dt;
        let d = tm.drift_at(internal[k]);
        let a = load.map_or(Wrench::ZERO, |l| l.at(time_s));
        let counts = opts.calib.inverse_image(&(a + d))?;
        let adc = std::array::from_fn(|i| {
            let jitter = if amp > 0 { rng.random_range(-amp..=amp) } else { 0 };
            counts[i].round() as i32 + jitter
        });
        frames.push(SensorFrame {
            time_s,
            adc,
            temp_c: measured[k],
        });
        drift.push(d);
        applied.push(a);
    }
    let mut meta = BTreeMap::new();
    meta.insert("profile".into(), spec.kind_name().into());
    meta.insert("seed".into(), spec.seed.to_string());
    meta.insert("rate_hz".into(), rate_hz.to_string());
    meta.insert("tau_s".into(), tm.tau_s.to_string());
    meta.insert("spec".into(), serde_json::to_string(spec)?);
    if let ProfileKind::Walking { compress, .. } = spec.kind {
        meta.insert("compress".into(), compress.to_string());
    }
    let s = Scenario {
        name: spec.kind_name().into(),
        sample_rate_hz: rate_hz,
        frames,
        truth_drift: Some(drift),
        truth_applied: Some(applied),
        meta,
    };
    s.validate()?;
    Ok(s)
}

/// Internal temperatures of a generated scenario, recomputed from its
/// readings.
pub fn scenario_internal_temperature(s: &Scenario, tm: &ThermalModel) -> Result<Vec<f64>> {
    internal_temperature(&s.temps(), tm, 1.0 / s.sample_rate_hz)
}
