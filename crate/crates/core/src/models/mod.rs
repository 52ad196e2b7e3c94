//! Drift-prediction model families.
//!
//! Every network maps a window of normalized temperatures to a normalized
//! six-axis drift; [`DriftModel`] wraps a network with the normalization
//! constants needed to go to and from physical units. LSM works in physical
//! units directly and is fitted in closed form.

mod gru;
mod io;
mod lsm;
mod mlp;
mod tcn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{TemperatureWindow, Wrench, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub use gru::{gru_cell, gru_forward, GruModel};
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT, MODEL_VERSION};
pub use lsm::{lsm_fit, lsm_predict, LsmModel};
pub use mlp::{mlp_forward, Activation, MlpModel};
pub use tcn::{receptive_field, tcn_forward, TcnBlock, TcnModel, TCN_DILATIONS, TCN_KERNEL};

pub const DEFAULT_MLP_WIDTH: usize = 36;
pub const DEFAULT_MLP_DEPTH: usize = 3;
pub const DEFAULT_GRU_HIDDEN: usize = 32;
pub const DEFAULT_TCN_CHANNELS: usize = 16;

/// Samples per parallel work unit in batch gradients. Fixed so the reduction
/// order, and therefore every bit of the result, is independent of the
/// number of worker threads.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Lsm,
    Mlp,
    MlpSeq,
    Tcn,
    Gru,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Lsm, Family::Mlp, Family::MlpSeq, Family::Tcn, Family::Gru];

    pub fn tag(self) -> &'static str {
        match self {
            Family::Lsm => "lsm",
            Family::Mlp => "mlp",
            Family::MlpSeq => "mlp-seq",
            Family::Tcn => "tcn",
            Family::Gru => "gru",
        }
    }

    /// Name used in report rows.
    pub fn label(self) -> &'static str {
        match self {
            Family::Lsm => "LSM",
            Family::Mlp => "MLP",
            Family::MlpSeq => "MLP-Seq",
            Family::Tcn => "TCN",
            Family::Gru => "GRU",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.tag().eq_ignore_ascii_case(s) || f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }

    pub fn default_hidden(self) -> usize {
        match self {
            Family::Lsm => 0,
            Family::Mlp | Family::MlpSeq => DEFAULT_MLP_WIDTH,
            Family::Tcn => DEFAULT_TCN_CHANNELS,
            Family::Gru => DEFAULT_GRU_HIDDEN,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Maps °C to the network input range: `(t − center) / half_range`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub center_c: f64,
    pub half_range_c: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        // [-20, 60] °C chamber range onto [-1, 1].
        Self {
            center_c: 20.0,
            half_range_c: 40.0,
        }
    }
}

impl InputNorm {
    #[inline]
    pub fn apply(&self, t_c: f64) -> f64 {
        (t_c - self.center_c) / self.half_range_c
    }
}

/// Architecture choice for one model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub window: usize,
    /// MLP layer width, TCN channel count or GRU hidden width.
    pub hidden: usize,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            window: DEFAULT_WINDOW,
            hidden: family.default_hidden(),
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    /// Width of the feature vector the network consumes.
    pub fn input_len(&self) -> usize {
        match self.family {
            Family::Lsm | Family::Mlp => 1,
            _ => self.window,
        }
    }
}

/// ∂loss/∂parameter, one buffer per parameter tensor in the owning model's
/// parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros_like(params: &[&[f64]]) -> Self {
        Self {
            tensors: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &GradientBundle) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reusable buffers so inference and per-sample gradients do not allocate
/// once warm.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    pub(crate) features: Vec<f64>,
    pub(crate) bufs: [Vec<f64>; 8],
    pub(crate) tcn_plan: Option<tcn::TcnPlan>,
    pub(crate) scratch: Vec<f64>,
}

/// A trainable network over normalized inputs and outputs.
pub trait Network: Clone + Send + Sync {
    /// Forward pass; `x` is the feature vector (one scalar per time step for
    /// the sequence models).
    fn predict(&self, x: &[f64], ws: &mut Workspace) -> [f64; 6];

    /// Forward and backward for one sample of the mean-squared-error loss.
    /// Adds `weight · ∂Σ(y − target)²/∂θ` into `grads` and returns
    /// `Σ(y − target)²`.
    fn accumulate(
        &self,
        x: &[f64],
        target: &[f64; 6],
        weight: f64,
        grads: &mut GradientBundle,
        ws: &mut Workspace,
    ) -> f64;

    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Mean-squared-error loss over a batch and all six axes, with its exact
/// gradient. Work is split into fixed chunks that may run in parallel; chunk
/// results are summed in order.
pub fn batch_gradient<N: Network>(net: &N, xs: &[&[f64]], ys: &[[f64; 6]]) -> Result<(f64, GradientBundle)> {
    if xs.is_empty() {
        return Err(Error::rejected("empty batch"));
    }
    if xs.len() != ys.len() {
        return Err(Error::rejected(format!("{} inputs but {} targets", xs.len(), ys.len())));
    }
    let weight = 1.0 / (6.0 * xs.len() as f64);
    let params = net.params();
    let parts: Vec<(f64, GradientBundle)> = xs
        .par_chunks(GRAD_CHUNK)
        .zip(ys.par_chunks(GRAD_CHUNK))
        .map(|(xc, yc)| {
            let mut g = GradientBundle::zeros_like(&params);
            let mut ws = Workspace::default();
            let mut sq = 0.0;
            for (x, y) in xc.iter().zip(yc) {
                sq += net.accumulate(x, y, weight, &mut g, &mut ws);
            }
            (sq, g)
        })
        .collect();
    let mut iter = parts.into_iter();
    let (mut sq, mut grads) = iter.next().expect("nonempty batch");
    for (s, g) in iter {
        sq += s;
        grads.add_assign(&g);
    }
    Ok((sq * weight, grads))
}

/// Mean squared error of a network over a set, no gradients.
pub fn batch_loss<N: Network>(net: &N, xs: &[&[f64]], ys: &[[f64; 6]]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let parts: Vec<f64> = xs
        .par_chunks(GRAD_CHUNK)
        .zip(ys.par_chunks(GRAD_CHUNK))
        .map(|(xc, yc)| {
            let mut ws = Workspace::default();
            xc.iter()
                .zip(yc)
                .map(|(x, y)| {
                    let p = net.predict(x, &mut ws);
                    p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum()
        })
        .collect();
    parts.iter().sum::<f64>() / (6.0 * xs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Net {
    Lsm(LsmModel),
    Mlp(MlpModel),
    Tcn(TcnModel),
    Gru(GruModel),
}

/// A drift model of any family together with its normalization constants.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftModel {
    pub spec: ModelSpec,
    pub norm: InputNorm,
    /// Per-axis target scale; network outputs are multiplied by it.
    pub axis_scale: [f64; 6],
    pub net: Net,
}

impl DriftModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn window(&self) -> usize {
        self.spec.window
    }

    /// Normalized feature vector for a window of temperatures (°C).
    pub fn features_into(&self, temps_c: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self.spec.family {
            Family::Lsm | Family::Mlp => out.push(self.norm.apply(*temps_c.last().expect("nonempty window"))),
            _ => out.extend(temps_c.iter().map(|&t| self.norm.apply(t))),
        }
    }

    pub fn features(&self, temps_c: &[f64]) -> Vec<f64> {
        let mut v = Vec::new();
        self.features_into(temps_c, &mut v);
        v
    }

    fn check_window(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::rejected("empty temperature window"));
        }
        if self.spec.family == Family::MlpSeq && len != self.spec.window {
            return Err(Error::rejected(format!(
                "sequence MLP expects a window of {}, got {len}",
                self.spec.window
            )));
        }
        Ok(())
    }

    /// Drift in physical units for a window of temperatures.
    pub fn predict(&self, w: &TemperatureWindow) -> Result<Wrench> {
        self.check_window(w.len())?;
        let mut ws = Workspace::default();
        Ok(self.predict_with(w.as_slice(), &mut ws))
    }

    /// Allocation-free prediction once `ws` is warm. The window length must
    /// already be valid for this model.
    pub fn predict_with(&self, temps_c: &[f64], ws: &mut Workspace) -> Wrench {
        let mut feats = std::mem::take(&mut ws.features);
        self.features_into(temps_c, &mut feats);
        let out = match &self.net {
            Net::Lsm(m) => return m.predict_temp(*temps_c.last().expect("nonempty window")),
            Net::Mlp(m) => m.predict(&feats, ws),
            Net::Tcn(m) => m.predict(&feats, ws),
            Net::Gru(m) => m.predict(&feats, ws),
        };
        ws.features = feats;
        Wrench::from_array(std::array::from_fn(|i| out[i] * self.axis_scale[i]))
    }

    pub fn param_count(&self) -> usize {
        match &self.net {
            Net::Lsm(_) => 12,
            Net::Mlp(m) => m.param_count(),
            Net::Tcn(m) => m.param_count(),
            Net::Gru(m) => m.param_count(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.net {
            Net::Lsm(_) => vec!["c_t".into(), "o".into()],
            Net::Mlp(m) => m.param_names(),
            Net::Tcn(m) => m.param_names(),
            Net::Gru(m) => m.param_names(),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match &self.net {
            Net::Lsm(m) => vec![m.c_t.as_slice(), m.o.as_slice()],
            Net::Mlp(m) => m.params(),
            Net::Tcn(m) => m.params(),
            Net::Gru(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.net {
            Net::Lsm(m) => vec![m.c_t.as_mut_slice(), m.o.as_mut_slice()],
            Net::Mlp(m) => m.params_mut(),
            Net::Tcn(m) => m.params_mut(),
            Net::Gru(m) => m.params_mut(),
        }
    }

    /// Maps physical targets to the normalized space the network is trained in.
    pub fn normalize_target(&self, w: &Wrench) -> [f64; 6] {
        let a = w.to_array();
        std::array::from_fn(|i| a[i] / self.axis_scale[i])
    }
}

/// Exact loss and gradient for a batch of windows and physical drift targets.
pub fn backward(
    model: &DriftModel,
    inputs: &[TemperatureWindow],
    targets: &[Wrench],
) -> Result<(f64, GradientBundle)> {
    if inputs.is_empty() {
        return Err(Error::rejected("empty batch"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::rejected(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    for w in inputs {
        model.check_window(w.len())?;
    }
    let feats: Vec<Vec<f64>> = inputs.iter().map(|w| model.features(w.as_slice())).collect();
    let xs: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
    let ys: Vec<[f64; 6]> = targets.iter().map(|t| model.normalize_target(t)).collect();
    match &model.net {
        Net::Lsm(_) => Err(Error::Config(
            "LSM is fitted in closed form and has no gradient path".into(),
        )),
        Net::Mlp(m) => batch_gradient(m, &xs, &ys),
        Net::Tcn(m) => batch_gradient(m, &xs, &ys),
        Net::Gru(m) => batch_gradient(m, &xs, &ys),
    }
}

/// Deterministic initialization. Every weight matrix and bias is drawn
/// uniformly from `±√(1/fan_in)` of its layer.
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<DriftModel> {
    if spec.window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if spec.family != Family::Lsm && spec.hidden == 0 {
        return Err(Error::Config("hidden width must be at least 1".into()));
    }
    if spec.family == Family::Tcn && receptive_field(TCN_KERNEL, &TCN_DILATIONS) < spec.window {
        return Err(Error::Config(format!(
            "window {} exceeds the TCN receptive field {}",
            spec.window,
            receptive_field(TCN_KERNEL, &TCN_DILATIONS)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = match spec.family {
        Family::Lsm => Net::Lsm(LsmModel::zeros()),
        Family::Mlp | Family::MlpSeq => Net::Mlp(MlpModel::init(
            spec.input_len(),
            &[spec.hidden; DEFAULT_MLP_DEPTH],
            &mut rng,
        )),
        Family::Tcn => Net::Tcn(TcnModel::init(1, spec.hidden, &TCN_DILATIONS, &mut rng)),
        Family::Gru => Net::Gru(GruModel::init(1, spec.hidden, &mut rng)),
    };
    Ok(DriftModel {
        spec,
        norm: InputNorm::default(),
        axis_scale: [1.0; 6],
        net,
    })
}

/// [`init_model`] with the default window.
pub fn init_params(kind: Family, seed: u64, hidden: usize) -> Result<DriftModel> {
    init_model(ModelSpec::new(kind).with_hidden(hidden), seed)
}

pub(crate) fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let data = uniform_values(rng, rows * cols, fan_in);
    Matrix::new(rows, cols, data).expect("finite init")
}

pub(crate) fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vector {
    Vector::new(uniform_values(rng, len, fan_in)).expect("finite init")
}

fn uniform_values(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    use rand::Rng;
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
