use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Maximum relative error between the tape gradient of scalar `f` at `x` and
/// a central finite difference with the given step, over every coordinate.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, step, &coords)
}

/// Like [`grad_check`] but only perturbs the listed coordinates.
pub fn grad_check_coords<F>(f: F, x: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let value = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(t.clone(), false);
        let y = f(&mut g, v)?;
        scalar_of(&g, y)
    };
    let analytic = |t: &Tensor| -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.param(t.clone());
        let y = f(&mut g, v)?;
        scalar_of(&g, y)?;
        Ok(g.backward(y)?.wrt(v))
    };
    compare_gradients(value, analytic, x, step, coords)
}

/// Finite-difference comparison for an arbitrary value/gradient pair.
/// Useful for checking hand-written gradient rules.
pub fn compare_gradients<V, G>(value: V, gradient: G, x: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    V: Fn(&Tensor) -> Result<f64>,
    G: Fn(&Tensor) -> Result<Tensor>,
{
    if !(step > 0.0) {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let grad = gradient(x)?;
    if grad.shape() != x.shape() {
        return Err(Error::Shape {
            kind: "grad_check",
            lhs: x.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::Invalid(format!("coordinate {i} out of range")));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = value(&probe)?;
        probe.data_mut()[i] = orig - step;
        let fm = value(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        if err.is_nan() {
            return Err(Error::NonFinite(format!("gradient at coordinate {i}")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn scalar_of(g: &Graph, y: Var) -> Result<f64> {
    let t = g.value(y);
    if t.numel() != 1 {
        return Err(Error::Invalid(format!(
            "function must return a scalar, got shape {:?}",
            t.shape()
        )));
    }
    let v = t.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("function value {v}")));
    }
    Ok(v)
}
