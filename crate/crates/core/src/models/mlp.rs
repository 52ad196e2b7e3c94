use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_matrix, uniform_vector, GradientBundle, Network, Workspace};
use crate::error::{Error, Result};
use crate::linalg::{gemv, gemv_t_acc, outer_acc, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Fully connected network: ReLU hidden layers and a linear 6-wide output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<(Matrix, Vector)>,
    pub input_width: usize,
    pub activation: Activation,
}

impl MlpModel {
    pub fn init(input_width: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_width;
        for &width in hidden.iter().chain(std::iter::once(&6)) {
            layers.push((
                uniform_matrix(rng, width, fan_in, fan_in),
                uniform_vector(rng, width, fan_in),
            ));
            fan_in = width;
        }
        Self {
            layers,
            input_width,
            activation: Activation::Relu,
        }
    }

    /// Builds a model from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<(Matrix, Vector)>) -> Result<Self> {
        if layers.len() > 6 {
            return Err(Error::rejected(format!("at most 6 layers supported, got {}", layers.len())));
        }
        let input_width = layers.first().map(|(w, _)| w.cols()).ok_or_else(|| Error::rejected("no layers"))?;
        let mut width = input_width;
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.cols() != width || b.len() != w.rows() {
                return Err(Error::rejected(format!(
                    "layer {i}: weight {}×{}, bias {}, incoming width {width}",
                    w.rows(),
                    w.cols(),
                    b.len()
                )));
            }
            width = w.rows();
        }
        if width != 6 {
            return Err(Error::rejected(format!("output width {width}, expected 6")));
        }
        Ok(Self {
            layers,
            input_width,
            activation: Activation::Relu,
        })
    }

    /// Fills `ws.bufs[l]` with the post-activation output of layer `l`.
    fn forward_cached(&self, x: &[f64], ws: &mut Workspace) {
        let n = self.layers.len();
        debug_assert!(n <= ws.bufs.len());
        for l in 0..n {
            let (w, b) = &self.layers[l];
            let (prev, rest) = ws.bufs.split_at_mut(l);
            let out = &mut rest[0];
            out.resize(w.rows(), 0.0);
            let input: &[f64] = if l == 0 { x } else { &prev[l - 1] };
            gemv(w, input, out);
            let last = l + 1 == n;
            for (o, &bi) in out.iter_mut().zip(b.as_slice()) {
                *o += bi;
                if !last && *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
    }
}

/// Forward pass on an already normalized feature vector.
pub fn mlp_forward(m: &MlpModel, x: &Vector) -> Result<Vector> {
    if x.len() != m.input_width {
        return Err(Error::rejected(format!(
            "input width {} does not match model width {}",
            x.len(),
            m.input_width
        )));
    }
    let out = m.predict(x.as_slice(), &mut Workspace::default());
    Vector::new(out.to_vec())
}

impl Network for MlpModel {
    fn predict(&self, x: &[f64], ws: &mut Workspace) -> [f64; 6] {
        self.forward_cached(x, ws);
        let out = &ws.bufs[self.layers.len() - 1];
        std::array::from_fn(|i| out[i])
    }

    fn accumulate(
        &self,
        x: &[f64],
        target: &[f64; 6],
        weight: f64,
        grads: &mut GradientBundle,
        ws: &mut Workspace,
    ) -> f64 {
        self.forward_cached(x, ws);
        let n = self.layers.len();
        let mut delta = std::mem::take(&mut ws.bufs[7]);
        let mut next = std::mem::take(&mut ws.bufs[6]);
        delta.clear();
        let mut sq = 0.0;
        for (y, t) in ws.bufs[n - 1].iter().zip(target) {
            let e = y - t;
            sq += e * e;
            delta.push(2.0 * weight * e);
        }
        for l in (0..n).rev() {
            let (w, _) = &self.layers[l];
            let input: &[f64] = if l == 0 { x } else { &ws.bufs[l - 1] };
            outer_acc(&mut grads.tensors[2 * l], &delta, input);
            for (g, d) in grads.tensors[2 * l + 1].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                next.clear();
                next.resize(w.cols(), 0.0);
                gemv_t_acc(w, &delta, &mut next);
                for (d, &a) in next.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                std::mem::swap(&mut delta, &mut next);
            }
        }
        ws.bufs[7] = delta;
        ws.bufs[6] = next;
        sq
    }

    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
            .collect()
    }
}
