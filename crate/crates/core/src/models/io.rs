use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DriftModel, Family, GruModel, InputNorm, LsmModel, MlpModel, ModelSpec, Net, Network, TcnModel, TCN_KERNEL};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const MODEL_FORMAT: &str = "driftcomp-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    family: Family,
    window: usize,
    hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dilations: Vec<usize>,
    input_norm: InputNorm,
    axis_scale: [f64; 6],
    params: Vec<Tensor>,
}

fn shapes(model: &DriftModel) -> Vec<(String, usize, usize)> {
    let m = |name: &str, x: &Matrix| (name.to_string(), x.rows(), x.cols());
    let v = |name: &str, x: &Vector| (name.to_string(), x.len(), 1);
    match &model.net {
        Net::Lsm(l) => vec![m("c_t", &l.c_t), v("o", &l.o)],
        Net::Mlp(n) => n
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| [m(&format!("layer{i}.weight"), w), v(&format!("layer{i}.bias"), b)])
            .collect(),
        Net::Gru(g) => {
            let names = g.param_names();
            let mats = [&g.w_xr, &g.w_hr, &g.w_xz, &g.w_hz, &g.w_xg, &g.w_hg, &g.head_w];
            let mut out: Vec<_> = names.iter().zip(mats).map(|(n, x)| m(n, x)).collect();
            out.push(v("head_b", &g.head_b));
            out
        }
        Net::Tcn(t) => {
            let mut out = Vec::new();
            for (i, b) in t.blocks.iter().enumerate() {
                out.push(m(&format!("block{i}.conv1.weight"), &b.conv1_w));
                out.push(v(&format!("block{i}.conv1.bias"), &b.conv1_b));
                out.push(m(&format!("block{i}.conv2.weight"), &b.conv2_w));
                out.push(v(&format!("block{i}.conv2.bias"), &b.conv2_b));
                if let Some((w, bias)) = &b.down {
                    out.push(m(&format!("block{i}.down.weight"), w));
                    out.push(v(&format!("block{i}.down.bias"), bias));
                }
            }
            out.push(m("head_w", &t.head_w));
            out.push(v("head_b", &t.head_b));
            out
        }
    }
}

pub fn write_model<W: Write>(model: &DriftModel, mut w: W) -> Result<()> {
    let params = shapes(model)
        .into_iter()
        .zip(model.params())
        .map(|((name, rows, cols), data)| Tensor {
            name,
            rows,
            cols,
            data: data.to_vec(),
        })
        .collect();
    let (kernel, dilations) = match &model.net {
        Net::Tcn(t) => (Some(t.kernel), t.dilations()),
        _ => (None, Vec::new()),
    };
    let doc = Document {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        family: model.spec.family,
        window: model.spec.window,
        hidden: model.spec.hidden,
        kernel,
        dilations,
        input_norm: model.norm,
        axis_scale: model.axis_scale,
        params,
    };
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<DriftModel> {
    let doc: Document = serde_json::from_reader(r)?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::Format(format!("not a model file (format `{}`)", doc.format)));
    }
    if doc.version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", doc.version)));
    }
    if doc.window == 0 {
        return Err(Error::Format("window must be at least 1".into()));
    }
    if !doc.input_norm.center_c.is_finite() || !(doc.input_norm.half_range_c.is_finite() && doc.input_norm.half_range_c != 0.0) {
        return Err(Error::Format("invalid input normalization".into()));
    }
    if doc.axis_scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::Format("axis_scale entries must be positive and finite".into()));
    }
    let spec = ModelSpec {
        family: doc.family,
        window: doc.window,
        hidden: doc.hidden,
    };
    let net = match doc.family {
        Family::Lsm => Net::Lsm(LsmModel::zeros()),
        Family::Mlp | Family::MlpSeq => {
            // Layer widths come from the stored weight shapes.
            let mut layers = Vec::new();
            for t in doc.params.iter().step_by(2) {
                layers.push((Matrix::zeros(t.rows, t.cols), Vector::zeros(t.rows)));
            }
            let m = MlpModel::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?;
            if m.input_width != spec.input_len() {
                return Err(Error::Format(format!(
                    "MLP input width {} does not match family and window",
                    m.input_width
                )));
            }
            Net::Mlp(m)
        }
        Family::Gru => Net::Gru(GruModel::zeros(1, doc.hidden)),
        Family::Tcn => {
            if doc.kernel != Some(TCN_KERNEL) {
                return Err(Error::Format(format!("TCN kernel must be {TCN_KERNEL}")));
            }
            let t = TcnModel::zeros(1, doc.hidden, &doc.dilations);
            t.validate().map_err(|e| Error::Format(e.to_string()))?;
            Net::Tcn(t)
        }
    };
    let mut model = DriftModel {
        spec,
        norm: doc.input_norm,
        axis_scale: doc.axis_scale,
        net,
    };
    let expected = shapes(&model);
    if expected.len() != doc.params.len() {
        return Err(Error::Format(format!(
            "expected {} parameter tensors, found {}",
            expected.len(),
            doc.params.len()
        )));
    }
    for ((name, rows, cols), t) in expected.iter().zip(&doc.params) {
        if *name != t.name || *rows != t.rows || *cols != t.cols || t.data.len() != rows * cols {
            return Err(Error::Format(format!(
                "tensor `{}` ({}×{}, {} values) does not match expected `{name}` ({rows}×{cols})",
                t.name,
                t.rows,
                t.cols,
                t.data.len()
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("tensor `{name}` has non-finite values")));
        }
    }
    for (dst, t) in model.params_mut().into_iter().zip(&doc.params) {
        dst.copy_from_slice(&t.data);
    }
    Ok(model)
}

pub fn save_model(model: &DriftModel, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DriftModel> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}
