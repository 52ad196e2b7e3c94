use crate::datamodel::{SupervisedSet, TemperatureWindow, Wrench};
use crate::error::{Error, Result};
use crate::linalg::{solve_least_squares, Matrix, Vector, DEFAULT_RIDGE};

/// Linear temperature model: `drift = o + c_t · t` per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LsmModel {
    /// 6×1, N or N·m per °C.
    pub c_t: Matrix,
    pub o: Vector,
}

impl LsmModel {
    pub fn zeros() -> Self {
        Self {
            c_t: Matrix::zeros(6, 1),
            o: Vector::zeros(6),
        }
    }

    pub fn new(c_t: [f64; 6], o: [f64; 6]) -> Result<Self> {
        Ok(Self {
            c_t: Matrix::new(6, 1, c_t.to_vec())?,
            o: Vector::new(o.to_vec())?,
        })
    }

    pub fn predict_temp(&self, t_c: f64) -> Wrench {
        let c = self.c_t.as_slice();
        let o = self.o.as_slice();
        Wrench::from_array(std::array::from_fn(|i| o[i] + c[i] * t_c))
    }
}

/// Least-squares fit of `o + c_t·t` per axis against the last temperature of
/// each window.
pub fn lsm_fit(set: &SupervisedSet) -> Result<LsmModel> {
    let n = set.len();
    if n < 2 {
        return Err(Error::rejected(format!("LSM fit needs at least 2 samples, got {n}")));
    }
    let temps: Vec<f64> = set.inputs.iter().map(TemperatureWindow::last).collect();
    if temps.iter().all(|&t| t == temps[0]) {
        return Err(Error::Singular(format!(
            "all {n} temperatures equal {} °C; the [1, t] design has rank 1",
            temps[0]
        )));
    }
    let mut a = Vec::with_capacity(2 * n);
    let mut b = Vec::with_capacity(6 * n);
    for (t, y) in temps.iter().zip(&set.targets) {
        a.extend_from_slice(&[1.0, *t]);
        b.extend_from_slice(&y.to_array());
    }
    let x = solve_least_squares(&Matrix::new(n, 2, a)?, &Matrix::new(n, 6, b)?, DEFAULT_RIDGE)?;
    LsmModel::new(
        std::array::from_fn(|i| x.get(1, i)),
        std::array::from_fn(|i| x.get(0, i)),
    )
}

pub fn lsm_predict(m: &LsmModel, w: &TemperatureWindow) -> Wrench {
    m.predict_temp(w.last())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_from(temps: &[f64], f: impl Fn(f64) -> Wrench) -> SupervisedSet {
        let inputs = temps
            .iter()
            .map(|&t| TemperatureWindow::new(vec![t - 1.0, t]).unwrap())
            .collect();
        let targets = temps.iter().map(|&t| f(t)).collect();
        SupervisedSet::new(inputs, targets).unwrap()
    }

    #[test]
    fn recovers_exact_line() {
        let temps: Vec<f64> = (0..20).map(|i| -10.0 + 3.5 * i as f64).collect();
        let set = set_from(&temps, |t| Wrench::new(2.0 * t + 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let m = lsm_fit(&set).unwrap();
        assert!((m.c_t.get(0, 0) - 2.0).abs() < 1e-9);
        assert!((m.o[0] - 1.0).abs() < 1e-9);
        for i in 1..6 {
            assert!(m.c_t.get(i, 0).abs() < 1e-9 && m.o[i].abs() < 1e-9);
        }
    }

    #[test]
    fn constant_targets() {
        let temps = [0.0, 10.0, 20.0, 30.0];
        let k = [4.0, -1.0, 2.5, 0.1, 0.2, 0.3];
        let set = set_from(&temps, |_| Wrench::from_array(k));
        let m = lsm_fit(&set).unwrap();
        // Closed-form 2×2 ridge solution as the reference.
        let r = DEFAULT_RIDGE;
        let (n, st, stt) = (4.0, 60.0, 1400.0);
        let det = (n + r) * (stt + r) - st * st;
        for i in 0..6 {
            let (sy, sty) = (n * k[i], st * k[i]);
            let o = ((stt + r) * sy - st * sty) / det;
            let c = ((n + r) * sty - st * sy) / det;
            assert!((m.o[i] - o).abs() < 1e-12 && (m.c_t.get(i, 0) - c).abs() < 1e-12);
            assert!((m.o[i] - k[i]).abs() < 1e-8 * k[i].abs().max(1.0));
            assert!(m.c_t.get(i, 0).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_orthogonal_to_regressors() {
        let temps: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() * 30.0 + 10.0).collect();
        let set = set_from(&temps, |t| {
            Wrench::new(t.sin(), t * t * 0.01, (t / 7.0).cos(), 0.3 * t, -t, 1.0 / (t + 50.0))
        });
        let m = lsm_fit(&set).unwrap();
        for axis in 0..6 {
            let (mut r1, mut rt) = (0.0, 0.0);
            for (w, y) in set.inputs.iter().zip(&set.targets) {
                let res = lsm_predict(&m, w).to_array()[axis] - y.to_array()[axis];
                r1 += res;
                rt += res * w.last();
            }
            assert!(r1.abs() < 1e-8 && rt.abs() < 1e-8, "axis {axis}: {r1} {rt}");
        }
    }

    #[test]
    fn identical_temperatures_are_singular() {
        let set = set_from(&[25.0; 5], |t| Wrench::new(t, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(matches!(lsm_fit(&set), Err(Error::Singular(_))));
    }

    #[test]
    fn predict_examples() {
        let m = LsmModel::new([0.0; 6], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = TemperatureWindow::new(vec![10.0, 33.0]).unwrap();
        assert_eq!(lsm_predict(&m, &w).to_array(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let m = LsmModel::new([0.0, 0.0, 1.0, 0.0, 0.0, 0.0], [0.0; 6]).unwrap();
        let w = TemperatureWindow::constant(25.0, 10).unwrap();
        assert_eq!(lsm_predict(&m, &w).fz, 25.0);
    }

    #[test]
    fn prediction_is_affine() {
        let m = LsmModel::new([0.5, -1.25, 3.0, 0.01, -0.02, 0.125], [1.0, 2.0, -3.0, 0.5, 0.25, -0.75]).unwrap();
        let p = |t: f64| m.predict_temp(t).to_array();
        let (t1, t2) = (12.5, -7.25);
        let (a, b, z, s) = (p(t1), p(t2), p(0.0), p(t1 + t2));
        for i in 0..6 {
            assert!((a[i] + b[i] - z[i] - s[i]).abs() < 1e-12);
        }
    }
}
