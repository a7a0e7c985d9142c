//! Recovery metrics reported by the experiment runner.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Value reported when the recovery error is exactly zero.
pub const NMSE_FLOOR_DB: f64 = -300.0;
/// Value reported for a perfect reconstruction.
pub const PSNR_CEIL_DB: f64 = 300.0;

/// `10 log10(mean ||x - x_hat||^2 / mean ||x||^2)` over the columns of the
/// batch (ratio of means, not mean of ratios).
pub fn nmse_db(x_true: ArrayView2<'_, f64>, x_hat: ArrayView2<'_, f64>) -> Result<f64> {
    if x_true.dim() != x_hat.dim() {
        return Err(Error::mismatch(format!("{:?}", x_true.dim()), format!("{:?}", x_hat.dim())));
    }
    if x_true.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let signal: f64 = x_true.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::param("x_true", "all-zero ground truth"));
    }
    let error: f64 = x_true
        .iter()
        .zip(x_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    // Both sums share the factor 1/S, so it cancels.
    if error == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (error / signal).log10()).max(NMSE_FLOOR_DB))
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(image_true: ArrayView2<'_, f64>, image_hat: ArrayView2<'_, f64>, peak: f64) -> Result<f64> {
    if image_true.dim() != image_hat.dim() {
        return Err(Error::mismatch(format!("{:?}", image_true.dim()), format!("{:?}", image_hat.dim())));
    }
    if image_true.is_empty() {
        return Err(Error::Empty("image"));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::param("peak", format!("{peak} is not positive")));
    }
    let mse = image_true
        .iter()
        .zip(image_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / image_true.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CEIL_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CEIL_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn nmse_examples() {
        let x = array![[1.0, 0.0], [-2.0, 3.0]];
        assert_eq!(nmse_db(x.view(), Array2::zeros((2, 2)).view()).unwrap(), 0.0);
        assert_eq!(nmse_db(x.view(), x.view()).unwrap(), NMSE_FLOOR_DB);
        // Squared errors {1, 3}, signal powers {2, 2}.
        let x = array![[1.0, 1.0], [1.0, 1.0]];
        let hat = array![[0.0, 1.0], [1.0, 1.0 + 3f64.sqrt()]];
        let v = nmse_db(x.view(), hat.view()).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn nmse_is_ratio_of_means() {
        // Errors {1, 0}, powers {1, 9}: ratio of means 1/10, mean of ratios 1/2.
        let x = array![[1.0, 3.0]];
        let hat = array![[0.0, 3.0]];
        assert!((nmse_db(x.view(), hat.view()).unwrap() + 10.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_errors() {
        let z = Array2::<f64>::zeros((2, 2));
        assert!(nmse_db(z.view(), z.view()).is_err());
        assert!(nmse_db(z.view(), Array2::zeros((2, 3)).view()).is_err());
        assert!(nmse_db(Array2::zeros((2, 0)).view(), Array2::zeros((2, 0)).view()).is_err());
    }

    #[test]
    fn psnr_examples() {
        let img = array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(psnr(img.view(), img.view(), 1.0).unwrap(), PSNR_CEIL_DB);
        let off = img.mapv(|v| v + 1.0);
        assert!(psnr(img.view(), off.view(), 1.0).unwrap().abs() < 1e-12);
        let half = img.mapv(|v| v - 0.5);
        let want = 10.0 * 4f64.log10();
        assert!((psnr(img.view(), half.view(), 1.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 6.0206).abs() < 1e-4);
        assert!(psnr(img.view(), img.view(), 0.0).is_err());
    }
}
