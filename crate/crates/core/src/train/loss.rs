use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Mean cross-entropy of `logits: B×K` against integer labels, optionally
/// weighting each sample by its class weight (normalised by the weight sum).
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize], class_weights: Option<&[f64]>) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape {
            kind: "cross_entropy",
            lhs: s,
            rhs: vec![labels.len()],
        });
    }
    let (b, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut onehot = vec![0.0; b * k];
    for (i, &y) in labels.iter().enumerate() {
        onehot[i * k + y] = 1.0;
    }
    let onehot = g.constant(Tensor::new(vec![b, k], onehot)?);
    let lse = g.logsumexp(logits, 1, false)?;
    let picked = g.mul(logits, onehot)?;
    let picked = g.sum(picked, 1, false)?;
    let nll = g.sub(lse, picked)?;
    match class_weights {
        None => g.mean(nll, 0, false),
        Some(w) => {
            let per: Vec<f64> = labels.iter().map(|&y| w[y]).collect();
            let total: f64 = per.iter().sum();
            let wv = g.constant(Tensor::vector(per.into_iter().map(|v| v / total).collect()));
            let weighted = g.mul(nll, wv)?;
            g.sum(weighted, 0, false)
        }
    }
}

/// Loss terms of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub l_cls: Var,
    pub l_delta: Var,
    pub l_tv: Var,
}

/// `L = L_cls + α·L_delta + β·L_tv`.
pub fn total_loss(g: &mut Graph, l_cls: Var, l_delta: Var, l_tv: Var, alpha: f64, beta: f64) -> Result<LossTerms> {
    let a = g.scale(l_delta, alpha);
    let b = g.scale(l_tv, beta);
    let reg = g.add(a, b)?;
    let total = g.add(l_cls, reg)?;
    Ok(LossTerms {
        total,
        l_cls,
        l_delta,
        l_tv,
    })
}

/// Inverse-frequency weights `n / (k · n_c)`; absent classes get weight 0.
pub fn balanced_class_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                labels.len() as f64 / (n_classes as f64 * c as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[5, 4]));
        let ce = cross_entropy(&mut g, l, &[0, 1, 2, 3, 0], None).unwrap();
        assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn regularizers_add_with_weights() {
        let mut g = Graph::new();
        let cls = g.constant(Tensor::scalar(0.5));
        let ld = g.constant(Tensor::scalar(4.0));
        let lt = g.constant(Tensor::scalar(2.0));
        let t = total_loss(&mut g, cls, ld, lt, 1e-4, 1e-4).unwrap();
        assert!((g.value(t.total).item() - 0.5006).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[1, 3]));
        assert!(cross_entropy(&mut g, l, &[3], None).is_err());
    }
}
