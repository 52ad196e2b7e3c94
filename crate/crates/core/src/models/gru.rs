use rand_chacha::ChaCha8Rng;

use super::{sigmoid, uniform_matrix, uniform_vector, GradientBundle, InputNorm, Network, Workspace};
use crate::datamodel::TemperatureWindow;
use crate::error::{Error, Result};
use crate::linalg::{gemv, gemv_acc, gemv_t_acc, outer_acc, Matrix, Vector};

/// Gated recurrent unit without gate biases, followed by an affine head on
/// the final hidden state.
///
/// ```text
/// r = σ(W_xr x + W_hr h)
/// z = σ(W_xz x + W_hz h)
/// g = tanh(W_hg (r ⊙ h) + W_xg x)
/// h' = (1 − z) ⊙ g + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruModel {
    pub w_xr: Matrix,
    pub w_hr: Matrix,
    pub w_xz: Matrix,
    pub w_hz: Matrix,
    pub w_xg: Matrix,
    pub w_hg: Matrix,
    pub head_w: Matrix,
    pub head_b: Vector,
    pub hidden: usize,
}

impl GruModel {
    pub fn init(input_width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let (iw, h) = (input_width, hidden);
        Self {
            w_xr: uniform_matrix(rng, h, iw, iw),
            w_hr: uniform_matrix(rng, h, h, h),
            w_xz: uniform_matrix(rng, h, iw, iw),
            w_hz: uniform_matrix(rng, h, h, h),
            w_xg: uniform_matrix(rng, h, iw, iw),
            w_hg: uniform_matrix(rng, h, h, h),
            head_w: uniform_matrix(rng, 6, h, h),
            head_b: uniform_vector(rng, 6, h),
            hidden,
        }
    }

    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        let (iw, h) = (input_width, hidden);
        Self {
            w_xr: Matrix::zeros(h, iw),
            w_hr: Matrix::zeros(h, h),
            w_xz: Matrix::zeros(h, iw),
            w_hz: Matrix::zeros(h, h),
            w_xg: Matrix::zeros(h, iw),
            w_hg: Matrix::zeros(h, h),
            head_w: Matrix::zeros(6, h),
            head_b: Vector::zeros(6),
            hidden,
        }
    }

    pub fn input_width(&self) -> usize {
        self.w_xr.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, iw) = (self.hidden, self.input_width());
        let checks = [
            ("w_xr", self.w_xr.shape(), (h, iw)),
            ("w_hr", self.w_hr.shape(), (h, h)),
            ("w_xz", self.w_xz.shape(), (h, iw)),
            ("w_hz", self.w_hz.shape(), (h, h)),
            ("w_xg", self.w_xg.shape(), (h, iw)),
            ("w_hg", self.w_hg.shape(), (h, h)),
            ("head_w", self.head_w.shape(), (6, h)),
            ("head_b", (self.head_b.len(), 1), (6, 1)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::rejected(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    /// One recurrence step. `tmp` must hold at least `hidden` entries.
    #[allow(clippy::too_many_arguments)]
    fn step(&self, x: &[f64], h_prev: &[f64], r: &mut [f64], z: &mut [f64], g: &mut [f64], tmp: &mut [f64], h: &mut [f64]) {
        gemv(&self.w_xr, x, r);
        gemv_acc(&self.w_hr, h_prev, r);
        gemv(&self.w_xz, x, z);
        gemv_acc(&self.w_hz, h_prev, z);
        for i in 0..self.hidden {
            r[i] = sigmoid(r[i]);
            z[i] = sigmoid(z[i]);
            tmp[i] = r[i] * h_prev[i];
        }
        gemv(&self.w_hg, tmp, g);
        gemv_acc(&self.w_xg, x, g);
        for i in 0..self.hidden {
            g[i] = g[i].tanh();
            h[i] = (1.0 - z[i]) * g[i] + z[i] * h_prev[i];
        }
    }

    /// Runs the recurrence over `xs` (time-major, `input_width` values per
    /// step), keeping every state in `ws` for the backward pass.
    fn forward_cached(&self, xs: &[f64], ws: &mut Workspace) -> usize {
        let (hd, iw) = (self.hidden, self.input_width());
        let steps = xs.len() / iw;
        let [hs, rs, zs, gs, tmp, ..] = &mut ws.bufs;
        hs.clear();
        hs.resize((steps + 1) * hd, 0.0);
        for b in [&mut *rs, &mut *zs, &mut *gs] {
            b.resize(steps * hd, 0.0);
        }
        tmp.resize(hd, 0.0);
        for t in 0..steps {
            let (done, next) = hs.split_at_mut((t + 1) * hd);
            let span = t * hd..(t + 1) * hd;
            self.step(
                &xs[t * iw..(t + 1) * iw],
                &done[t * hd..],
                &mut rs[span.clone()],
                &mut zs[span.clone()],
                &mut gs[span],
                tmp,
                &mut next[..hd],
            );
        }
        steps
    }

    fn head(&self, h: &[f64]) -> [f64; 6] {
        let mut y = [0.0; 6];
        gemv(&self.head_w, h, &mut y);
        for (o, b) in y.iter_mut().zip(self.head_b.as_slice()) {
            *o += b;
        }
        y
    }
}

/// A single recurrence step on explicit vectors.
pub fn gru_cell(m: &GruModel, x_t: &Vector, h_prev: &Vector) -> Result<Vector> {
    m.validate()?;
    if x_t.len() != m.input_width() || h_prev.len() != m.hidden {
        return Err(Error::rejected(format!(
            "input {} / state {} do not match input width {} / hidden {}",
            x_t.len(),
            h_prev.len(),
            m.input_width(),
            m.hidden
        )));
    }
    let hd = m.hidden;
    let (mut r, mut z, mut g, mut tmp, mut h) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]);
    m.step(x_t.as_slice(), h_prev.as_slice(), &mut r, &mut z, &mut g, &mut tmp, &mut h);
    Vector::new(h)
}

/// Normalizes the window, folds the cell over it from a zero state and
/// applies the head.
pub fn gru_forward(m: &GruModel, w: &TemperatureWindow) -> Result<Vector> {
    m.validate()?;
    if m.input_width() != 1 {
        return Err(Error::rejected("temperature windows feed a single input channel"));
    }
    if w.is_empty() {
        return Err(Error::rejected("empty temperature window"));
    }
    let norm = InputNorm::default();
    let xs: Vec<f64> = w.as_slice().iter().map(|&t| norm.apply(t)).collect();
    Vector::new(m.predict(&xs, &mut Workspace::default()).to_vec())
}

impl Network for GruModel {
    fn predict(&self, x: &[f64], ws: &mut Workspace) -> [f64; 6] {
        let hd = self.hidden;
        let steps = x.len() / self.input_width();
        let [h, hn, r, z, g, tmp, ..] = &mut ws.bufs;
        for b in [&mut *h, &mut *hn, &mut *r, &mut *z, &mut *g, &mut *tmp] {
            b.resize(hd, 0.0);
        }
        h.fill(0.0);
        let iw = self.input_width();
        for t in 0..steps {
            self.step(&x[t * iw..(t + 1) * iw], h, r, z, g, tmp, hn);
            std::mem::swap(h, hn);
        }
        self.head(h)
    }

    fn accumulate(
        &self,
        x: &[f64],
        target: &[f64; 6],
        weight: f64,
        grads: &mut GradientBundle,
        ws: &mut Workspace,
    ) -> f64 {
        let (hd, iw) = (self.hidden, self.input_width());
        let steps = self.forward_cached(x, ws);
        let [hs, rs, zs, gs, tmp, dh, dhp, da] = &mut ws.bufs;
        let y = self.head(&hs[steps * hd..]);

        let mut dy = [0.0; 6];
        let mut sq = 0.0;
        for i in 0..6 {
            let e = y[i] - target[i];
            sq += e * e;
            dy[i] = 2.0 * weight * e;
        }
        let [g_xr, g_hr, g_xz, g_hz, g_xg, g_hg, g_hw, g_hb] = &mut grads.tensors[..] else {
            unreachable!("GRU gradient bundle has eight tensors")
        };
        outer_acc(g_hw, &dy, &hs[steps * hd..]);
        for (g, d) in g_hb.iter_mut().zip(&dy) {
            *g += d;
        }
        dh.clear();
        dh.resize(hd, 0.0);
        gemv_t_acc(&self.head_w, &dy, dh);
        dhp.resize(hd, 0.0);
        da.resize(3 * hd, 0.0);

        for t in (0..steps).rev() {
            let xt = &x[t * iw..(t + 1) * iw];
            let hp = &hs[t * hd..(t + 1) * hd];
            let r = &rs[t * hd..(t + 1) * hd];
            let z = &zs[t * hd..(t + 1) * hd];
            let g = &gs[t * hd..(t + 1) * hd];
            let (da_r, rest) = da.split_at_mut(hd);
            let (da_z, da_g) = rest.split_at_mut(hd);
            for i in 0..hd {
                dhp[i] = dh[i] * z[i];
                da_g[i] = dh[i] * (1.0 - z[i]) * (1.0 - g[i] * g[i]);
                da_z[i] = dh[i] * (hp[i] - g[i]) * z[i] * (1.0 - z[i]);
                tmp[i] = r[i] * hp[i];
            }
            outer_acc(g_hg, da_g, tmp);
            outer_acc(g_xg, da_g, xt);
            tmp.fill(0.0);
            gemv_t_acc(&self.w_hg, da_g, tmp);
            for i in 0..hd {
                dhp[i] += tmp[i] * r[i];
                da_r[i] = tmp[i] * hp[i] * r[i] * (1.0 - r[i]);
            }
            outer_acc(g_xz, da_z, xt);
            outer_acc(g_hz, da_z, hp);
            outer_acc(g_xr, da_r, xt);
            outer_acc(g_hr, da_r, hp);
            gemv_t_acc(&self.w_hz, da_z, dhp);
            gemv_t_acc(&self.w_hr, da_r, dhp);
            std::mem::swap(dh, dhp);
        }
        sq
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.w_xr.as_slice(),
            self.w_hr.as_slice(),
            self.w_xz.as_slice(),
            self.w_hz.as_slice(),
            self.w_xg.as_slice(),
            self.w_hg.as_slice(),
            self.head_w.as_slice(),
            self.head_b.as_slice(),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_xr.as_mut_slice(),
            self.w_hr.as_mut_slice(),
            self.w_xz.as_mut_slice(),
            self.w_hz.as_mut_slice(),
            self.w_xg.as_mut_slice(),
            self.w_hg.as_mut_slice(),
            self.head_w.as_mut_slice(),
            self.head_b.as_mut_slice(),
        ]
    }

    fn param_names(&self) -> Vec<String> {
        ["w_xr", "w_hr", "w_xz", "w_hz", "w_xg", "w_hg", "head_w", "head_b"]
            .map(String::from)
            .to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_halve_state() {
        let m = GruModel::zeros(1, 3);
        let h = gru_cell(&m, &v(&[0.8]), &v(&[1.0, -2.0, 0.5])).unwrap();
        assert_eq!(h.as_slice(), &[0.5, -1.0, 0.25]);
    }

    #[test]
    fn single_candidate_weight() {
        let mut m = GruModel::zeros(1, 1);
        m.w_xg.set(0, 0, 1.0);
        let h = gru_cell(&m, &v(&[1.0]), &v(&[0.0])).unwrap();
        assert!((h[0] - 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn saturated_update_gate_keeps_state() {
        let mut m = GruModel::zeros(1, 2);
        m.w_xz.set(0, 0, 100.0);
        m.w_xz.set(1, 0, 100.0);
        m.w_xg.set(0, 0, 5.0);
        m.w_xg.set(1, 0, -5.0);
        let hp = v(&[0.3, -0.7]);
        let h = gru_cell(&m, &v(&[1.0]), &hp).unwrap();
        for i in 0..2 {
            assert!((h[i] - hp[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let m = GruModel::zeros(1, 3);
        assert!(matches!(gru_cell(&m, &v(&[1.0]), &v(&[0.0; 2])), Err(Error::RejectedInput(_))));
        assert!(matches!(gru_cell(&m, &v(&[1.0, 2.0]), &v(&[0.0; 3])), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = GruModel::zeros(1, 4);
        let w = TemperatureWindow::new(vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(gru_forward(&m, &w).unwrap().as_slice(), &[0.0; 6]);
    }

    #[test]
    fn length_one_window_is_one_cell_plus_head() {
        let m = GruModel::init(1, 5, &mut ChaCha8Rng::seed_from_u64(3));
        let w = TemperatureWindow::new(vec![35.0]).unwrap();
        let y = gru_forward(&m, &w).unwrap();
        let h = gru_cell(&m, &v(&[InputNorm::default().apply(35.0)]), &Vector::zeros(5)).unwrap();
        let expect = crate::linalg::mat_vec(&m.head_w, &h).unwrap();
        for i in 0..6 {
            assert!((y[i] - (expect[i] + m.head_b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn order_matters() {
        let m = GruModel::init(1, 8, &mut ChaCha8Rng::seed_from_u64(11));
        let a = TemperatureWindow::new(vec![-10.0, 0.0, 15.0, 40.0]).unwrap();
        let b = TemperatureWindow::new(vec![40.0, 15.0, 0.0, -10.0]).unwrap();
        assert_ne!(gru_forward(&m, &a).unwrap(), gru_forward(&m, &b).unwrap());
    }

    proptest! {
        #[test]
        fn state_is_convex_combination(seed in 0u64..1000, x in -3.0f64..3.0, hp in prop::collection::vec(-2.0f64..2.0, 6)) {
            let m = GruModel::init(1, 6, &mut ChaCha8Rng::seed_from_u64(seed));
            let h = gru_cell(&m, &v(&[x]), &v(&hp)).unwrap();
            let bound = hp.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            for i in 0..6 {
                prop_assert!(h[i].abs() <= bound + 1e-12);
            }
        }
    }
}
