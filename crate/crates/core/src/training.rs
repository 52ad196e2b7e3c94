//! Adam and the mini-batch training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::SupervisedSet;
use crate::error::{Error, Result};
use crate::models::{batch_gradient, batch_loss, lsm_fit, DriftModel, GradientBundle, Net, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop once the full-set RMSE (normalized units) drops to this value.
    pub early_stop_rmse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 128,
            max_epochs: 2000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            early_stop_rmse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if let Some(r) = self.early_stop_rmse {
            if !(r >= 0.0) {
                return bad("early-stop RMSE must be nonnegative");
            }
        }
        Ok(())
    }
}

/// Adam moment estimates, shaped like the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&[f64]]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters are left untouched if any
/// gradient entry is non-finite.
pub fn adam_step(
    params: &mut [&mut [f64]],
    names: &[String],
    grads: &GradientBundle,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.tensors.len() || params.len() != state.m.len() {
        return Err(Error::rejected(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.tensors.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads.tensors).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::rejected(format!("tensor {i}: shape mismatch")));
        }
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("tensor{i}"));
            return Err(Error::Divergence(format!(
                "non-finite gradient for {name}[{k}] at step {}",
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], &grads.tensors[i]);
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DriftModel,
    /// Full-set mean squared normalized error after each epoch.
    pub history: Vec<f64>,
    /// 1-based epoch of the returned parameters; 0 for closed-form fits.
    pub best_epoch: usize,
    /// Full-set loss of the returned parameters.
    pub best_loss: f64,
}

pub fn train(model: &DriftModel, set: &SupervisedSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, set, cfg, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch as `(epoch, loss)`.
pub fn train_with_progress(
    model: &DriftModel,
    set: &SupervisedSet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::rejected("training set is empty"));
    }
    let mut model = model.clone();
    model.axis_scale = set.axis_scale;
    let targets = set.normalized_targets();
    let mut feats = Vec::with_capacity(set.len());
    for w in &set.inputs {
        if model.spec.family == crate::models::Family::MlpSeq && w.len() != model.spec.window {
            return Err(Error::rejected(format!(
                "window of {} does not match model window {}",
                w.len(),
                model.spec.window
            )));
        }
        feats.push(model.features(w.as_slice()));
    }
    let xs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();

    let mut net = model.net.clone();
    let outcome = match &mut net {
        Net::Lsm(_) => {
            let fitted = lsm_fit(set)?;
            model.net = Net::Lsm(fitted);
            let loss = lsm_loss(&model, set);
            return Ok(TrainOutcome {
                model,
                history: Vec::new(),
                best_epoch: 0,
                best_loss: loss,
            });
        }
        Net::Mlp(n) => run(n, &xs, &targets, cfg, &mut progress)?,
        Net::Tcn(n) => run(n, &xs, &targets, cfg, &mut progress)?,
        Net::Gru(n) => run(n, &xs, &targets, cfg, &mut progress)?,
    };
    let (history, best_epoch, best_loss) = outcome;
    model.net = net;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_loss,
    })
}

fn lsm_loss(model: &DriftModel, set: &SupervisedSet) -> f64 {
    let mut ws = crate::models::Workspace::default();
    let mut sq = 0.0;
    for (w, t) in set.inputs.iter().zip(set.normalized_targets()) {
        let y = model.normalize_target(&model.predict_with(w.as_slice(), &mut ws));
        sq += y.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    sq / (6.0 * set.len() as f64)
}

/// Trains `net` in place, leaving it at the best parameters seen.
fn run<N: Network>(
    net: &mut N,
    xs: &[&[f64]],
    ys: &[[f64; 6]],
    cfg: &TrainConfig,
    progress: &mut impl FnMut(usize, f64),
) -> Result<(Vec<f64>, usize, f64)> {
    let names = net.param_names();
    let mut state = AdamState::new(&net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut bx: Vec<&[f64]> = Vec::with_capacity(cfg.batch);
    let mut by: Vec<[f64; 6]> = Vec::with_capacity(cfg.batch);

    let mut best = net.clone();
    let mut best_loss = batch_loss(net, xs, ys);
    let mut best_epoch = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            bx.clear();
            by.clear();
            bx.extend(chunk.iter().map(|&i| xs[i]));
            by.extend(chunk.iter().map(|&i| ys[i]));
            let (_, grads) = batch_gradient(net, &bx, &by)?;
            adam_step(&mut net.params_mut(), &names, &grads, &mut state, cfg)?;
        }
        let loss = batch_loss(net, xs, ys);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("training loss became {loss} at epoch {epoch}")));
        }
        history.push(loss);
        progress(epoch, loss);
        if loss < best_loss || best_epoch == 0 {
            best_loss = loss;
            best_epoch = epoch;
            best = net.clone();
        }
        if cfg.early_stop_rmse.is_some_and(|r| loss.sqrt() <= r) {
            break;
        }
    }
    if best_epoch > 0 {
        *net = best;
    }
    Ok((history, best_epoch, best_loss))
}

/// Loss history as `epoch,loss` CSV, epochs numbered from 1.
pub fn write_history<W: Write>(history: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

pub fn save_history(history: &[f64], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_history(history, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Caps the global worker pool at `DRIFTCOMP_THREADS` when set. Results do
/// not depend on the thread count.
pub fn configure_threads_from_env() {
    if let Some(n) = std::env::var("DRIFTCOMP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
