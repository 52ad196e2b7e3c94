use rand_chacha::ChaCha8Rng;

use super::{uniform_matrix, uniform_vector, GradientBundle, InputNorm, Network, Workspace};
use crate::datamodel::TemperatureWindow;
use crate::error::{Error, Result};
use crate::linalg::{dot, gemv, Matrix, Vector};

pub const TCN_KERNEL: usize = 2;
pub const TCN_DILATIONS: [usize; 4] = [1, 2, 4, 8];

pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + (kernel - 1) * dilations.iter().map(|d| 2 * d).sum::<usize>()
}

/// Residual block: two dilated causal convolutions with ReLU, plus an
/// identity or 1×1 projection shortcut.
///
/// Convolution weights are `out_ch × (in_ch · kernel)`; tap `j` of input
/// channel `c` sits at column `c · kernel + j` and reads
/// `x[t − (kernel − 1 − j) · dilation]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TcnBlock {
    pub conv1_w: Matrix,
    pub conv1_b: Vector,
    pub conv2_w: Matrix,
    pub conv2_b: Vector,
    pub down: Option<(Matrix, Vector)>,
    pub dilation: usize,
}

impl TcnBlock {
    fn in_channels(&self, kernel: usize) -> usize {
        self.conv1_w.cols() / kernel
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnModel {
    pub blocks: Vec<TcnBlock>,
    pub channels: usize,
    pub kernel: usize,
    pub head_w: Matrix,
    pub head_b: Vector,
}

/// Time positions each block must evaluate so that the last output step is
/// exact. Anything outside these sets never influences the prediction.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TcnPlan {
    len: usize,
    dilations: Vec<usize>,
    h1_pos: Vec<Vec<usize>>,
    out_pos: Vec<Vec<usize>>,
}

impl TcnPlan {
    fn new(len: usize, kernel: usize, dilations: &[usize]) -> Self {
        let mut need = vec![false; len];
        need[len - 1] = true;
        let mut h1_pos = Vec::with_capacity(dilations.len());
        let mut out_pos = Vec::with_capacity(dilations.len());
        let taps = |src: &[bool], d: usize, dst: &mut [bool]| {
            for (t, _) in src.iter().enumerate().filter(|(_, &n)| n) {
                for j in 0..kernel {
                    if let Some(p) = t.checked_sub(j * d) {
                        dst[p] = true;
                    }
                }
            }
        };
        for &d in dilations.iter().rev() {
            let mut h1 = vec![false; len];
            taps(&need, d, &mut h1);
            let mut input = need.clone();
            taps(&h1, d, &mut input);
            out_pos.push(positions(&need));
            h1_pos.push(positions(&h1));
            need = input;
        }
        h1_pos.reverse();
        out_pos.reverse();
        Self {
            len,
            dilations: dilations.to_vec(),
            h1_pos,
            out_pos,
        }
    }
}

fn positions(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &n)| n).map(|(t, _)| t).collect()
}

/// Gathers the `cin × k` taps feeding position `t`, in weight-row order.
#[inline]
fn gather(input: &[f64], cin: usize, k: usize, d: usize, len: usize, t: usize, z: &mut [f64]) {
    for ci in 0..cin {
        let x = &input[ci * len..(ci + 1) * len];
        for j in 0..k {
            let shift = (k - 1 - j) * d;
            z[ci * k + j] = if t >= shift { x[t - shift] } else { 0.0 };
        }
    }
}

/// Causal dilated convolution evaluated at `pos` only. Buffers are
/// channel-major with stride `len`.
#[allow(clippy::too_many_arguments)]
fn conv_at(
    w: &Matrix,
    b: &[f64],
    input: &[f64],
    cin: usize,
    k: usize,
    d: usize,
    len: usize,
    pos: &[usize],
    out: &mut [f64],
    z: &mut Vec<f64>,
) {
    let stride = cin * k;
    z.resize(stride, 0.0);
    for &t in pos {
        gather(input, cin, k, d, len, t, z);
        for (co, wrow) in w.as_slice().chunks_exact(stride).enumerate() {
            out[co * len + t] = b[co] + dot(wrow, z);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_back(
    w: &Matrix,
    input: &[f64],
    cin: usize,
    k: usize,
    d: usize,
    len: usize,
    pos: &[usize],
    g_pre: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut g_in: Option<&mut [f64]>,
    z: &mut Vec<f64>,
) {
    let stride = cin * k;
    z.resize(2 * stride, 0.0);
    let (taps, gz) = z.split_at_mut(stride);
    for &t in pos {
        gather(input, cin, k, d, len, t, taps);
        gz.fill(0.0);
        let mut any = false;
        for (co, (wrow, gwrow)) in w.as_slice().chunks_exact(stride).zip(gw.chunks_exact_mut(stride)).enumerate() {
            let gp = g_pre[co * len + t];
            if gp == 0.0 {
                continue;
            }
            any = true;
            gb[co] += gp;
            for ((g, &x), (acc, &wv)) in gwrow.iter_mut().zip(taps.iter()).zip(gz.iter_mut().zip(wrow)) {
                *g += gp * x;
                *acc += wv * gp;
            }
        }
        if let (true, Some(g)) = (any, g_in.as_deref_mut()) {
            for ci in 0..cin {
                for j in 0..k {
                    let shift = (k - 1 - j) * d;
                    if t >= shift {
                        g[ci * len + t - shift] += gz[ci * k + j];
                    }
                }
            }
        }
    }
}

impl TcnModel {
    pub fn init(in_channels: usize, channels: usize, dilations: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let k = TCN_KERNEL;
        let mut cin = in_channels;
        let mut blocks = Vec::with_capacity(dilations.len());
        for &d in dilations {
            let conv1_w = uniform_matrix(rng, channels, cin * k, cin * k);
            let conv1_b = uniform_vector(rng, channels, cin * k);
            let conv2_w = uniform_matrix(rng, channels, channels * k, channels * k);
            let conv2_b = uniform_vector(rng, channels, channels * k);
            let down = (cin != channels).then(|| (uniform_matrix(rng, channels, cin, cin), uniform_vector(rng, channels, cin)));
            blocks.push(TcnBlock {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                down,
                dilation: d,
            });
            cin = channels;
        }
        Self {
            blocks,
            channels,
            kernel: k,
            head_w: uniform_matrix(rng, 6, channels, channels),
            head_b: uniform_vector(rng, 6, channels),
        }
    }

    pub fn zeros(in_channels: usize, channels: usize, dilations: &[usize]) -> Self {
        let k = TCN_KERNEL;
        let mut cin = in_channels;
        let blocks = dilations
            .iter()
            .map(|&d| {
                let b = TcnBlock {
                    conv1_w: Matrix::zeros(channels, cin * k),
                    conv1_b: Vector::zeros(channels),
                    conv2_w: Matrix::zeros(channels, channels * k),
                    conv2_b: Vector::zeros(channels),
                    down: (cin != channels).then(|| (Matrix::zeros(channels, cin), Vector::zeros(channels))),
                    dilation: d,
                };
                cin = channels;
                b
            })
            .collect();
        Self {
            blocks,
            channels,
            kernel: k,
            head_w: Matrix::zeros(6, channels),
            head_b: Vector::zeros(6),
        }
    }

    pub fn dilations(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dilation).collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations())
    }

    pub fn validate(&self) -> Result<()> {
        let (k, ch) = (self.kernel, self.channels);
        if k == 0 || ch == 0 || self.blocks.is_empty() {
            return Err(Error::rejected("TCN needs a kernel, channels and at least one block"));
        }
        let mut prev = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            if !b.dilation.is_power_of_two() || b.dilation <= prev {
                return Err(Error::rejected(format!(
                    "block {i}: dilations must be strictly increasing powers of two"
                )));
            }
            prev = b.dilation;
            let cin = b.in_channels(k);
            let down_ok = match &b.down {
                None => cin == ch,
                Some((w, bias)) => w.shape() == (ch, cin) && bias.len() == ch,
            };
            if b.conv1_w.rows() != ch
                || b.conv1_w.cols() != cin * k
                || b.conv1_b.len() != ch
                || b.conv2_w.shape() != (ch, ch * k)
                || b.conv2_b.len() != ch
                || !down_ok
                || (i > 0 && cin != ch)
            {
                return Err(Error::rejected(format!("block {i}: inconsistent shapes")));
            }
        }
        if self.head_w.shape() != (6, ch) || self.head_b.len() != 6 {
            return Err(Error::rejected("TCN head must be 6×channels with 6 biases"));
        }
        Ok(())
    }

    fn padded_len(&self, n: usize) -> usize {
        n.max(self.receptive_field())
    }

    fn ensure_plan(&self, len: usize, ws: &mut Workspace) {
        let stale = match &ws.tcn_plan {
            Some(p) => p.len != len || p.dilations.len() != self.blocks.len() || p.dilations.iter().zip(&self.blocks).any(|(d, b)| *d != b.dilation),
            None => true,
        };
        if stale {
            ws.tcn_plan = Some(TcnPlan::new(len, self.kernel, &self.dilations()));
        }
    }

    /// Forward over the padded sequence; block activations stay in `ws` for
    /// the backward pass. Returns the padded length.
    fn forward_cached(&self, x: &[f64], ws: &mut Workspace) -> usize {
        let len = self.padded_len(x.len());
        self.ensure_plan(len, ws);
        let plan = ws.tcn_plan.as_ref().expect("plan");
        let (ch, k) = (self.channels, self.kernel);
        let block_len = ch * len;
        let scratch = &mut ws.scratch;
        let [inp, h1s, h2s, outs, ..] = &mut ws.bufs;
        // Single input channel: left-pad with the oldest value.
        inp.clear();
        inp.resize(len - x.len(), x[0]);
        inp.extend_from_slice(x);
        for b in [&mut *h1s, &mut *h2s, &mut *outs] {
            b.resize(self.blocks.len() * block_len, 0.0);
        }
        for (bi, blk) in self.blocks.iter().enumerate() {
            let cin = blk.in_channels(k);
            let (prev_outs, cur_outs) = outs.split_at_mut(bi * block_len);
            let a: &[f64] = if bi == 0 { inp } else { &prev_outs[(bi - 1) * block_len..] };
            let h1 = &mut h1s[bi * block_len..(bi + 1) * block_len];
            let h2 = &mut h2s[bi * block_len..(bi + 1) * block_len];
            let out = &mut cur_outs[..block_len];
            let (hp, op) = (&plan.h1_pos[bi], &plan.out_pos[bi]);
            conv_at(&blk.conv1_w, blk.conv1_b.as_slice(), a, cin, k, blk.dilation, len, hp, h1, scratch);
            for c in 0..ch {
                for &t in hp {
                    let v = &mut h1[c * len + t];
                    *v = v.max(0.0);
                }
            }
            conv_at(&blk.conv2_w, blk.conv2_b.as_slice(), h1, ch, k, blk.dilation, len, op, h2, scratch);
            for c in 0..ch {
                for &t in op {
                    let i = c * len + t;
                    h2[i] = h2[i].max(0.0);
                    let res = match &blk.down {
                        None => a[i],
                        Some((w, b)) => {
                            b[c] + (0..cin).map(|ci| w.get(c, ci) * a[ci * len + t]).sum::<f64>()
                        }
                    };
                    out[i] = (h2[i] + res).max(0.0);
                }
            }
        }
        len
    }

    fn last_step(&self, ws: &mut Workspace, len: usize) -> [f64; 6] {
        let ch = self.channels;
        let [_, _, _, outs, feat, ..] = &mut ws.bufs;
        let last = &outs[(self.blocks.len() - 1) * ch * len..];
        feat.clear();
        feat.extend((0..ch).map(|c| last[c * len + len - 1]));
        let mut y = [0.0; 6];
        gemv(&self.head_w, feat, &mut y);
        for (o, b) in y.iter_mut().zip(self.head_b.as_slice()) {
            *o += b;
        }
        y
    }
}

/// Normalizes and left-pads the window, then evaluates the network at the
/// final time step.
pub fn tcn_forward(m: &TcnModel, w: &TemperatureWindow) -> Result<Vector> {
    m.validate()?;
    if m.blocks[0].in_channels(m.kernel) != 1 {
        return Err(Error::rejected("temperature windows feed a single input channel"));
    }
    if w.is_empty() {
        return Err(Error::rejected("empty temperature window"));
    }
    let norm = InputNorm::default();
    let xs: Vec<f64> = w.as_slice().iter().map(|&t| norm.apply(t)).collect();
    Vector::new(m.predict(&xs, &mut Workspace::default()).to_vec())
}

impl Network for TcnModel {
    fn predict(&self, x: &[f64], ws: &mut Workspace) -> [f64; 6] {
        let len = self.forward_cached(x, ws);
        self.last_step(ws, len)
    }

    fn accumulate(
        &self,
        x: &[f64],
        target: &[f64; 6],
        weight: f64,
        grads: &mut GradientBundle,
        ws: &mut Workspace,
    ) -> f64 {
        let len = self.forward_cached(x, ws);
        let y = self.last_step(ws, len);
        let (ch, k) = (self.channels, self.kernel);
        let block_len = ch * len;
        let nb = self.blocks.len();

        let mut dy = [0.0; 6];
        let mut sq = 0.0;
        for i in 0..6 {
            let e = y[i] - target[i];
            sq += e * e;
            dy[i] = 2.0 * weight * e;
        }
        // Parameter tensors: per block conv1 w/b, conv2 w/b, optional
        // projection w/b; then the head.
        let mut offsets = Vec::with_capacity(nb);
        let mut idx = 0;
        for b in &self.blocks {
            offsets.push(idx);
            idx += if b.down.is_some() { 6 } else { 4 };
        }
        let head_idx = idx;

        let plan = ws.tcn_plan.take().expect("plan");
        let scratch = &mut ws.scratch;
        let [inp, h1s, h2s, outs, feat, g_out, g_h, g_in] = &mut ws.bufs;
        {
            let (gw, rest) = grads.tensors[head_idx..].split_at_mut(1);
            crate::linalg::outer_acc(&mut gw[0], &dy, feat);
            for (g, d) in rest[0].iter_mut().zip(&dy) {
                *g += d;
            }
        }
        g_out.clear();
        g_out.resize(block_len, 0.0);
        for c in 0..ch {
            g_out[c * len + len - 1] = (0..6).map(|i| self.head_w.get(i, c) * dy[i]).sum();
        }
        g_h.resize(block_len, 0.0);

        for bi in (0..nb).rev() {
            let blk = &self.blocks[bi];
            let cin = blk.in_channels(k);
            let a: &[f64] = if bi == 0 { inp } else { &outs[(bi - 1) * block_len..bi * block_len] };
            let h1 = &h1s[bi * block_len..(bi + 1) * block_len];
            let h2 = &h2s[bi * block_len..(bi + 1) * block_len];
            let out = &outs[bi * block_len..(bi + 1) * block_len];
            let (hp, op) = (&plan.h1_pos[bi], &plan.out_pos[bi]);
            let need_in = bi > 0;
            g_in.clear();
            g_in.resize(cin * len, 0.0);
            g_h.fill(0.0);

            let o = offsets[bi];
            let [g1w, g1b, g2w, g2b, rest @ ..] = &mut grads.tensors[o..] else {
                unreachable!()
            };
            for c in 0..ch {
                for &t in op {
                    let i = c * len + t;
                    if out[i] <= 0.0 {
                        g_out[i] = 0.0;
                    }
                    let gp = g_out[i];
                    if h2[i] > 0.0 {
                        g_h[i] = gp;
                    }
                    match &blk.down {
                        None => g_in[i] += gp,
                        Some((w, _)) => {
                            rest[1][c] += gp;
                            for ci in 0..cin {
                                rest[0][c * cin + ci] += gp * a[ci * len + t];
                                g_in[ci * len + t] += w.get(c, ci) * gp;
                            }
                        }
                    }
                }
            }
            // Conv2 back into the first activation; reuse g_out as its buffer.
            g_out.fill(0.0);
            conv_back(&blk.conv2_w, h1, ch, k, blk.dilation, len, op, g_h, g2w, g2b, Some(g_out), scratch);
            for c in 0..ch {
                for &t in hp {
                    if h1[c * len + t] <= 0.0 {
                        g_out[c * len + t] = 0.0;
                    }
                }
            }
            conv_back(&blk.conv1_w, a, cin, k, blk.dilation, len, hp, g_out, g1w, g1b, need_in.then_some(&mut g_in[..]), scratch);
            if need_in {
                std::mem::swap(g_out, g_in);
            }
        }
        ws.tcn_plan = Some(plan);
        sq
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend([b.conv1_w.as_slice(), b.conv1_b.as_slice(), b.conv2_w.as_slice(), b.conv2_b.as_slice()]);
            if let Some((w, bias)) = &b.down {
                v.extend([w.as_slice(), bias.as_slice()]);
            }
        }
        v.extend([self.head_w.as_slice(), self.head_b.as_slice()]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend([
                b.conv1_w.as_mut_slice(),
                b.conv1_b.as_mut_slice(),
                b.conv2_w.as_mut_slice(),
                b.conv2_b.as_mut_slice(),
            ]);
            if let Some((w, bias)) = &mut b.down {
                v.extend([w.as_mut_slice(), bias.as_mut_slice()]);
            }
        }
        v.extend([self.head_w.as_mut_slice(), self.head_b.as_mut_slice()]);
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for n in ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"] {
                v.push(format!("block{i}.{n}"));
            }
            if b.down.is_some() {
                v.push(format!("block{i}.down.weight"));
                v.push(format!("block{i}.down.bias"));
            }
        }
        v.extend(["head_w".to_string(), "head_b".to_string()]);
        v
    }
}
