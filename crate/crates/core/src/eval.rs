//! Per-axis error metrics and method comparison reports.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FullScale, Scenario, SupervisedSet, Wrench, AXIS_NAMES, AXIS_UNITS};
use crate::error::{Error, Result};
use crate::models::{DriftModel, Family, Workspace};
use crate::pipeline::{run_scenario, CalibrationMatrix, CompensatorState};

pub const NO_COMPENSATION: &str = "No compensation";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisRmse {
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl AxisRmse {
    pub fn from_array(a: [f64; 6]) -> Self {
        let [fx, fy, fz, mx, my, mz] = a;
        Self { fx, fy, fz, mx, my, mz }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.fx, self.fy, self.fz, self.mx, self.my, self.mz]
    }
}

pub fn rmse_axes(pred: &[Wrench], truth: &[Wrench]) -> Result<AxisRmse> {
    if pred.len() != truth.len() {
        return Err(Error::rejected(format!(
            "{} predictions but {} truth samples",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::rejected("RMSE of an empty series"));
    }
    let mut acc = [0.0; 6];
    for (p, t) in pred.iter().zip(truth) {
        let e = (*p - *t).to_array();
        for (a, v) in acc.iter_mut().zip(e) {
            *a += v * v;
        }
    }
    let n = pred.len() as f64;
    Ok(AxisRmse::from_array(acc.map(|a| (a / n).sqrt())))
}

/// RMSE as a percentage of each axis's measurement range.
pub fn full_scale_pct(r: &AxisRmse, ranges: &[f64; 6]) -> Result<[f64; 6]> {
    if let Some(i) = ranges.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::rejected(format!(
            "full-scale range for {} must be positive, got {}",
            AXIS_NAMES[i], ranges[i]
        )));
    }
    let a = r.to_array();
    Ok(std::array::from_fn(|i| 100.0 * a[i] / ranges[i]))
}

/// Root of the mean squared error over samples and all six axes, with each
/// axis divided by `scale`.
pub fn normalized_rmse(model: &DriftModel, set: &SupervisedSet, scale: &[f64; 6]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::rejected("normalized RMSE of an empty set"));
    }
    let preds: Vec<[f64; 6]> = set
        .inputs
        .par_iter()
        .map_init(Workspace::default, |ws, w| model.predict_with(w.as_slice(), ws).to_array())
        .collect();
    let mut acc = 0.0;
    for (p, t) in preds.iter().zip(&set.targets) {
        let t = t.to_array();
        for i in 0..6 {
            let e = (p[i] - t[i]) / scale[i];
            acc += e * e;
        }
    }
    Ok((acc / (6 * set.len()) as f64).sqrt())
}

/// Per-frame series from one compensation method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    pub name: String,
    pub drift: Vec<Wrench>,
    pub compensated: Vec<Wrench>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub seed: Option<String>,
    pub frames: usize,
    pub rows: Vec<(String, AxisRmse)>,
    /// Method with the lowest summed full-scale percentage.
    pub best: String,
    pub full_scale_pct: [f64; 6],
}

impl ComparisonReport {
    pub fn row(&self, name: &str) -> Option<&AxisRmse> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

fn method_rank(name: &str) -> usize {
    if name == NO_COMPENSATION {
        return 0;
    }
    Family::ALL.iter().position(|f| f.label() == name).map_or(Family::ALL.len() + 1, |p| p + 1)
}

/// Runs the streaming pipeline once per model and scores every method
/// against the scenario's ground truth. Compensated output is compared with
/// the applied load when it is known, otherwise predicted drift is compared
/// with the drift labels.
pub fn evaluate_methods(
    s: &Scenario,
    models: &[(String, Arc<DriftModel>)],
    calib: &CalibrationMatrix,
) -> Result<(ComparisonReport, Vec<MethodRun>)> {
    if s.truth_applied.is_none() && s.truth_drift.is_none() {
        return Err(Error::Labeling(format!("scenario `{}` has no ground truth", s.name)));
    }
    if s.is_empty() {
        return Err(Error::rejected("scenario has no frames"));
    }
    let mut names: Vec<&str> = models.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&NO_COMPENSATION) {
        return Err(Error::Config("method names must be unique".into()));
    }

    let raw: Vec<Wrench> = s.frames.iter().map(|f| calib.apply(&f.adc_f64())).collect();
    let mut runs: Vec<MethodRun> = models
        .par_iter()
        .map(|(name, m)| {
            let mut state = CompensatorState::new(Arc::clone(m), calib.clone());
            let r = run_scenario(s, &mut state)?;
            Ok(MethodRun {
                name: name.clone(),
                drift: r.drift,
                compensated: r.compensated,
            })
        })
        .collect::<Result<_>>()?;
    runs.push(MethodRun {
        name: NO_COMPENSATION.into(),
        drift: vec![Wrench::ZERO; raw.len()],
        compensated: raw,
    });
    runs.sort_by(|a, b| method_rank(&a.name).cmp(&method_rank(&b.name)).then(a.name.cmp(&b.name)));

    let rows = runs
        .iter()
        .map(|r| {
            let rmse = match (&s.truth_applied, &s.truth_drift) {
                (Some(applied), _) => rmse_axes(&r.compensated, applied)?,
                (None, Some(drift)) => rmse_axes(&r.drift, drift)?,
                (None, None) => unreachable!(),
            };
            if !rmse.to_array().iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence(format!("non-finite RMSE for {}", r.name)));
            }
            Ok((r.name.clone(), rmse))
        })
        .collect::<Result<Vec<_>>>()?;

    let ranges = FullScale::default().ranges;
    let mut best = (f64::INFINITY, String::new(), [0.0; 6]);
    for (name, r) in &rows {
        let pct = full_scale_pct(r, &ranges)?;
        let total: f64 = pct.iter().sum();
        if total < best.0 {
            best = (total, name.clone(), pct);
        }
    }
    let report = ComparisonReport {
        scenario: s.name.clone(),
        seed: s.meta.get("seed").cloned(),
        frames: s.len(),
        rows,
        best: best.1,
        full_scale_pct: best.2,
    };
    Ok((report, runs))
}

pub fn compare_methods(
    s: &Scenario,
    models: &[(String, Arc<DriftModel>)],
    calib: &CalibrationMatrix,
) -> Result<ComparisonReport> {
    evaluate_methods(s, models, calib).map(|(r, _)| r)
}

/// Names each model by its family label.
pub fn label_models(models: impl IntoIterator<Item = DriftModel>) -> Vec<(String, Arc<DriftModel>)> {
    models.into_iter().map(|m| (m.family().label().to_string(), Arc::new(m))).collect()
}

fn meta_line(r: &ComparisonReport) -> String {
    let units: Vec<String> = AXIS_NAMES.iter().zip(AXIS_UNITS).map(|(a, u)| format!("{a}[{u}]")).collect();
    format!(
        "# meta: scenario={} seed={} frames={} metric=rmse units={}",
        r.scenario,
        r.seed.as_deref().unwrap_or("none"),
        r.frames,
        units.join(";")
    )
}

/// `method,fx,fy,fz,mx,my,mz` with a leading `# meta:` comment.
pub fn write_report_csv<W: Write>(r: &ComparisonReport, mut w: W) -> Result<()> {
    writeln!(w, "{}", meta_line(r))?;
    writeln!(w, "method,{}", AXIS_NAMES.join(","))?;
    for (name, rmse) in &r.rows {
        let vals: Vec<String> = rmse.to_array().iter().map(|v| format!("{v:.4}")).collect();
        writeln!(w, "{name},{}", vals.join(","))?;
    }
    Ok(())
}

/// Aligned text table with four decimals.
pub fn format_table(r: &ComparisonReport) -> String {
    let head: Vec<String> = AXIS_NAMES
        .iter()
        .zip(AXIS_UNITS)
        .map(|(a, u)| format!("{a} [{u}]"))
        .collect();
    let width = r.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(NO_COMPENSATION.len()).max(6);
    let mut out = format!("RMSE, scenario `{}` ({} frames)\n", r.scenario, r.frames);
    out += &format!("{:<width$}", "method");
    for h in &head {
        out += &format!(" {h:>12}");
    }
    out.push('\n');
    for (name, rmse) in &r.rows {
        out += &format!("{name:<width$}");
        for v in rmse.to_array() {
            out += &format!(" {v:>12.4}");
        }
        out.push('\n');
    }
    out += &format!("{:<width$}", "% FS best");
    for v in r.full_scale_pct {
        out += &format!(" {v:>12.4}");
    }
    out += &format!("\nbest method: {}\n", r.best);
    out
}

/// Long-format plot data: `time_s,axis,value,series`. Series are the true
/// drift (when known), and each method's predicted drift and compensated
/// output.
pub fn write_plot_csv<W: Write>(s: &Scenario, runs: &[MethodRun], mut w: W) -> Result<()> {
    writeln!(w, "time_s,axis,value,series")?;
    let mut series: Vec<(String, &[Wrench])> = Vec::new();
    if let Some(d) = &s.truth_drift {
        series.push(("truth_drift".into(), d));
    }
    if let Some(a) = &s.truth_applied {
        series.push(("truth_applied".into(), a));
    }
    for r in runs {
        if r.name != NO_COMPENSATION {
            series.push((format!("{}:drift", r.name), &r.drift));
        }
        series.push((format!("{}:compensated", r.name), &r.compensated));
    }
    for (name, data) in &series {
        for (f, v) in s.frames.iter().zip(data.iter()) {
            for (axis, x) in AXIS_NAMES.iter().zip(v.to_array()) {
                writeln!(w, "{},{axis},{x},{name}", f.time_s)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_scenario, LoadSchedule, ProfileSpec, ThermalModel};
    use crate::models::{init_model, ModelSpec};
    use proptest::prelude::*;

    fn w(a: [f64; 6]) -> Wrench {
        Wrench::from_array(a)
    }

    #[test]
    fn identical_series_have_zero_rmse() {
        let p = vec![w([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]); 4];
        assert_eq!(rmse_axes(&p, &p).unwrap(), AxisRmse::default());
    }

    #[test]
    fn constant_fx_error() {
        let truth = vec![Wrench::ZERO; 5];
        let pred = vec![w([3.0, 0.0, 0.0, 0.0, 0.0, 0.0]); 5];
        assert_eq!(rmse_axes(&pred, &truth).unwrap().to_array(), [3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_sample_fz() {
        let truth = vec![Wrench::ZERO; 2];
        let pred = vec![w([0.0, 0.0, 3.0, 0.0, 0.0, 0.0]), w([0.0, 0.0, 4.0, 0.0, 0.0, 0.0])];
        let r = rmse_axes(&pred, &truth).unwrap();
        assert!((r.fz - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((r.fz - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn rmse_rejects_bad_lengths() {
        assert!(rmse_axes(&[Wrench::ZERO], &[]).is_err());
        assert!(rmse_axes(&[], &[]).is_err());
    }

    #[test]
    fn full_scale_examples() {
        let ranges = FullScale::default().ranges;
        assert_eq!(full_scale_pct(&AxisRmse::default(), &ranges).unwrap(), [0.0; 6]);
        let r = AxisRmse { fz: 2.0, ..AxisRmse::default() };
        assert!((full_scale_pct(&r, &ranges).unwrap()[2] - 0.1).abs() < 1e-12);
        // 2 N on a 600 N axis is a third of a percent, above the 0.2 % headline.
        let r = AxisRmse { fx: 2.0, ..AxisRmse::default() };
        let fx = full_scale_pct(&r, &ranges).unwrap()[0];
        assert!((fx - 1.0 / 3.0).abs() < 1e-12);
        let mut bad = ranges;
        bad[4] = 0.0;
        assert!(full_scale_pct(&r, &bad).is_err());
    }

    #[test]
    fn zero_drift_scenario_ties() {
        let spec = ProfileSpec {
            noise_sigma_c: 0.0,
            ..ProfileSpec::constant(1, 20.0, 20.0)
        };
        let tm = ThermalModel {
            t_int_0: Some(20.0),
            ..ThermalModel::default()
        };
        let s = gen_scenario(&spec, &tm, 10.0, Some(&LoadSchedule::gait())).unwrap();
        let zero = init_model(ModelSpec::new(Family::Lsm), 0).unwrap();
        let r = compare_methods(&s, &label_models([zero]), &CalibrationMatrix::default()).unwrap();
        assert_eq!(r.rows.len(), 2);
        for (_, rmse) in &r.rows {
            // ADC rounding and ±2 count noise only.
            let fs = FullScale::default().ranges;
            for (v, f) in rmse.to_array().iter().zip(fs) {
                assert!(*v <= 2.5 * f / 8192.0);
            }
        }
    }

    #[test]
    fn rows_follow_method_order() {
        let s = gen_scenario(&ProfileSpec::heater(1), &ThermalModel::default(), 10.0, None).unwrap();
        let models: Vec<DriftModel> = [Family::Gru, Family::Lsm, Family::Tcn, Family::MlpSeq, Family::Mlp]
            .iter()
            .map(|&f| init_model(ModelSpec::new(f), 1).unwrap())
            .collect();
        let r = compare_methods(&s, &label_models(models), &CalibrationMatrix::default()).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, [NO_COMPENSATION, "LSM", "MLP", "MLP-Seq", "TCN", "GRU"]);
    }

    #[test]
    fn no_compensation_row_is_raw_drift() {
        let s = gen_scenario(&ProfileSpec::ice(2), &ThermalModel::default(), 10.0, None).unwrap();
        let calib = CalibrationMatrix::default();
        let r = compare_methods(&s, &[], &calib).unwrap();
        let raw: Vec<Wrench> = s.frames.iter().map(|f| calib.apply(&f.adc_f64())).collect();
        let direct = rmse_axes(&raw, s.truth_applied.as_ref().unwrap()).unwrap();
        assert_eq!(*r.row(NO_COMPENSATION).unwrap(), direct);
        let drift_only = rmse_axes(s.truth_drift.as_ref().unwrap(), &vec![Wrench::ZERO; s.len()]).unwrap();
        for ((a, b), lsb) in direct.to_array().iter().zip(drift_only.to_array()).zip(calib.c.as_slice().iter().step_by(7)) {
            assert!((a - b).abs() <= 2.5 * lsb);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = gen_scenario(&ProfileSpec::ice(2), &ThermalModel::default(), 10.0, None).unwrap();
        let m = init_model(ModelSpec::new(Family::Lsm), 0).unwrap();
        let models = label_models([m.clone(), m]);
        assert!(matches!(compare_methods(&s, &models, &CalibrationMatrix::default()), Err(Error::Config(_))));
    }

    #[test]
    fn report_outputs() {
        let s = gen_scenario(&ProfileSpec::heater(9), &ThermalModel::default(), 10.0, None).unwrap();
        let m = init_model(ModelSpec::new(Family::Gru), 0).unwrap();
        let (r, runs) = evaluate_methods(&s, &label_models([m]), &CalibrationMatrix::default()).unwrap();
        let mut csv = Vec::new();
        write_report_csv(&r, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# meta: scenario=heater seed=9"));
        assert_eq!(lines[1], "method,fx,fy,fz,mx,my,mz");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("GRU,"));
        let decimals = lines[2].split(',').nth(1).unwrap().split('.').nth(1).unwrap();
        assert_eq!(decimals.len(), 4);

        let table = format_table(&r);
        assert!(table.contains("fz [N]") && table.contains(NO_COMPENSATION));

        let mut plot = Vec::new();
        write_plot_csv(&s, &runs, &mut plot).unwrap();
        let plot = String::from_utf8(plot).unwrap();
        assert_eq!(plot.lines().next(), Some("time_s,axis,value,series"));
        // truth_drift, truth_applied, GRU drift + compensated, raw.
        assert_eq!(plot.lines().count(), 1 + 5 * 6 * s.len());
    }

    #[test]
    fn requires_ground_truth() {
        let mut s = gen_scenario(&ProfileSpec::ice(2), &ThermalModel::default(), 10.0, None).unwrap();
        s.truth_applied = None;
        s.truth_drift = None;
        assert!(matches!(compare_methods(&s, &[], &CalibrationMatrix::default()), Err(Error::Labeling(_))));
    }

    proptest! {
        #[test]
        fn rmse_permutation_and_shift_invariant(
            data in prop::collection::vec((prop::array::uniform6(-100.0f64..100.0), prop::array::uniform6(-100.0f64..100.0)), 1..30),
            shift in prop::array::uniform6(-50.0f64..50.0),
            rot in 0usize..30,
        ) {
            let pred: Vec<Wrench> = data.iter().map(|(p, _)| w(*p)).collect();
            let truth: Vec<Wrench> = data.iter().map(|(_, t)| w(*t)).collect();
            let base = rmse_axes(&pred, &truth).unwrap().to_array();

            let k = rot % pred.len();
            let (mut p2, mut t2) = (pred.clone(), truth.clone());
            p2.rotate_left(k);
            t2.rotate_left(k);
            p2.reverse();
            t2.reverse();
            let permuted = rmse_axes(&p2, &t2).unwrap().to_array();

            let c = w(shift);
            let ps: Vec<Wrench> = pred.iter().map(|x| *x + c).collect();
            let ts: Vec<Wrench> = truth.iter().map(|x| *x + c).collect();
            let shifted = rmse_axes(&ps, &ts).unwrap().to_array();
            for i in 0..6 {
                prop_assert!((base[i] - permuted[i]).abs() <= 1e-9 * (1.0 + base[i]));
                prop_assert!((base[i] - shifted[i]).abs() <= 1e-9 * (1.0 + base[i]));
                prop_assert!(base[i] >= 0.0);
            }
        }
    }
}
