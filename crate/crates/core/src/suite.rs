//! End-to-end experiments: chronological splits, training every family on a
//! chamber dataset, and the held-out convergence table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{gen_scenario, ProfileSpec, ThermalModel};
use crate::datamodel::{windows_in_range, Scenario, SupervisedSet, DEFAULT_RATE_HZ, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::eval::normalized_rmse;
use crate::models::{init_model, DriftModel, Family, ModelSpec};
use crate::training::{train, TrainConfig};

pub const TRAIN_FRACTION: f64 = 0.8;

/// Train and held-out windows from a chronological split at
/// `train_fraction` of the frames. Test windows may reach back into the
/// training span for their history, but their targets never do.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: SupervisedSet,
    pub test: SupervisedSet,
}

pub fn chronological_split(
    s: &Scenario,
    window: usize,
    train_fraction: f64,
    train_stride: usize,
    test_stride: usize,
) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let cut = (s.len() as f64 * train_fraction).round() as usize;
    let train = windows_in_range(s, window, train_stride, 0..cut)?;
    let test = windows_in_range(s, window, test_stride, cut..s.len())?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::rejected(format!("split of {} frames leaves an empty side", s.len())));
    }
    Ok(Split { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub family: Family,
    pub train_nrmse: f64,
    pub test_nrmse: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct ConvergenceRun {
    pub rows: Vec<ConvergenceRow>,
    pub models: Vec<DriftModel>,
    pub histories: Vec<Vec<f64>>,
}

/// Settings for [`chamber_convergence`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rate_hz: f64,
    pub window: usize,
    pub train_stride: usize,
    pub train: TrainConfig,
    pub families: Vec<Family>,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rate_hz: DEFAULT_RATE_HZ,
            window: DEFAULT_WINDOW,
            train_stride: 8,
            train: TrainConfig {
                lr: 0.01,
                batch: 32,
                max_epochs: 300,
                seed,
                ..TrainConfig::default()
            },
            families: Family::ALL.to_vec(),
        }
    }
}

pub fn chamber_dataset(seed: u64, rate_hz: f64) -> Result<Scenario> {
    gen_scenario(&ProfileSpec::chamber(seed), &ThermalModel::default(), rate_hz, None)
}

/// Trains every requested family on the first 80 % of `s` and scores each
/// on the last 20 %, in units normalized by the training set's per-axis
/// scale.
pub fn convergence(s: &Scenario, cfg: &ExperimentConfig) -> Result<ConvergenceRun> {
    let split = chronological_split(s, cfg.window, TRAIN_FRACTION, cfg.train_stride, 1)?;
    let scale = split.train.axis_scale;
    let mut out = ConvergenceRun {
        rows: Vec::new(),
        models: Vec::new(),
        histories: Vec::new(),
    };
    for &family in &cfg.families {
        let init = init_model(ModelSpec::new(family).with_window(cfg.window), cfg.seed)?;
        let t = train(&init, &split.train, &cfg.train)?;
        out.rows.push(ConvergenceRow {
            family,
            train_nrmse: normalized_rmse(&t.model, &split.train, &scale)?,
            test_nrmse: normalized_rmse(&t.model, &split.test, &scale)?,
            best_epoch: t.best_epoch,
        });
        out.models.push(t.model);
        out.histories.push(t.history);
    }
    Ok(out)
}

pub fn chamber_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceRun> {
    convergence(&chamber_dataset(cfg.seed, cfg.rate_hz)?, cfg)
}

/// `method,train_nrmse,test_nrmse,best_epoch`, four decimals.
pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], seed: u64, mut w: W) -> Result<()> {
    writeln!(w, "# meta: scenario=chamber seed={seed} metric=normalized_rmse units=dimensionless")?;
    writeln!(w, "method,train_nrmse,test_nrmse,best_epoch")?;
    for r in rows {
        writeln!(w, "{},{:.4},{:.4},{}", r.family.label(), r.train_nrmse, r.test_nrmse, r.best_epoch)?;
    }
    Ok(())
}

/// True when held-out RMSE orders GRU < TCN < MLP-Seq ≤ MLP < LSM and GRU
/// is at most a tenth of LSM.
pub fn ordering_holds(rows: &[ConvergenceRow]) -> bool {
    let get = |f: Family| rows.iter().find(|r| r.family == f).map(|r| r.test_nrmse);
    let (Some(lsm), Some(mlp), Some(seq), Some(tcn), Some(gru)) =
        (get(Family::Lsm), get(Family::Mlp), get(Family::MlpSeq), get(Family::Tcn), get(Family::Gru))
    else {
        return false;
    };
    gru < tcn && tcn < seq && seq <= mlp && mlp < lsm && gru <= 0.1 * lsm
}
