//! Pixel losses. Each returns the scalar loss and its gradient with respect
//! to the prediction(s). An optional mask restricts the average to the
//! selected pixels.

use crate::error::{Error, Result};

fn check(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("prediction {} vs target {}", pred.len(), target.len())));
    }
    let n = match mask {
        Some(m) if m.len() != pred.len() => {
            return Err(Error::ShapeMismatch(format!("mask {} vs prediction {}", m.len(), pred.len())))
        }
        Some(m) => m.iter().filter(|&&b| b).count(),
        None => pred.len(),
    };
    if n == 0 {
        return Err(Error::InvalidArgument("loss over zero pixels".into()));
    }
    Ok(n)
}

#[inline]
fn selected(mask: Option<&[bool]>, i: usize) -> bool {
    mask.is_none_or(|m| m[i])
}

/// Mean squared error.
pub fn mse_loss(pred: &[f64], target: &[f64], mask: Option<&[bool]>) -> Result<(f64, Vec<f64>)> {
    let n = check(pred, target, mask)? as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if selected(mask, i) {
            let r = pred[i] - target[i];
            loss += r * r;
            grad[i] = 2.0 * r / n;
        }
    }
    Ok((loss / n, grad))
}

/// Gaussian negative log-likelihood, ½[(y − μ)²·e^(−s) + s] averaged over
/// pixels, where s = log σ². Returns (loss, d/dμ, d/ds).
pub fn gaussian_nll_loss(
    mean: &[f64],
    log_var: &[f64],
    target: &[f64],
    mask: Option<&[bool]>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = check(mean, target, mask)?;
    if log_var.len() != mean.len() {
        return Err(Error::ShapeMismatch(format!("log-variance {} vs mean {}", log_var.len(), mean.len())));
    }
    let n = n as f64;
    let mut loss = 0.0;
    let mut d_mean = vec![0.0; mean.len()];
    let mut d_log_var = vec![0.0; mean.len()];
    for i in 0..mean.len() {
        if selected(mask, i) {
            let r = target[i] - mean[i];
            let inv_var = (-log_var[i]).exp();
            loss += 0.5 * (r * r * inv_var + log_var[i]);
            d_mean[i] = -r * inv_var / n;
            d_log_var[i] = 0.5 * (1.0 - r * r * inv_var) / n;
        }
    }
    Ok((loss / n, d_mean, d_log_var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_zero_on_match() {
        let (l, g) = mse_loss(&[0.2, 0.4], &[0.2, 0.4], None).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_mse_ignores_unselected() {
        let (l, g) = mse_loss(&[1.0, 5.0], &[0.0, 0.0], Some(&[true, false])).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g, vec![2.0, 0.0]);
        assert!(mse_loss(&[1.0], &[0.0], Some(&[false])).is_err());
    }

    #[test]
    fn nll_zero_at_perfect_unit_variance() {
        let (l, dm, _) = gaussian_nll_loss(&[0.3, 0.7], &[0.0, 0.0], &[0.3, 0.7], None).unwrap();
        assert_eq!(l, 0.0);
        assert!(dm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variance_gradient_sign_tracks_residual() {
        // d loss / d σ² has the sign of σ² − r², so the loss falls with σ²
        // exactly while σ² < r²
        let r: f64 = 0.3;
        for &var in &[0.01, 0.05, 0.08, 0.1, 0.5, 2.0] {
            let s: f64 = f64::ln(var);
            let (_, _, ds) = gaussian_nll_loss(&[0.0], &[s], &[r], None).unwrap();
            // dσ²/ds = σ² > 0, so sign(d/dσ²) == sign(d/ds)
            assert_eq!(ds[0] < 0.0, var < r * r, "var {var}");
        }
    }
}
