//! Training objective: pixel and feature reconstruction plus a KL term.

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::predictor::EventDistribution;

/// Mean absolute error over all elements.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "l1 operands {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

/// `KL(q || p)` for diagonal Gaussians `(B, N, D)`, summed over the event
/// dimensions and averaged over the batch.
pub fn gaussian_kl(q: &EventDistribution, p: &EventDistribution) -> Result<Tensor> {
    if q.mu.dims() != p.mu.dims() || q.sigma.dims() != p.sigma.dims() {
        return Err(Error::ShapeMismatch(format!(
            "kl operands {:?} and {:?}",
            q.mu.dims(),
            p.mu.dims()
        )));
    }
    let batch = q.mu.dim(0)? as f64;
    let var_q = q.sigma.sqr()?;
    let var_p = p.sigma.sqr()?;
    let diff = (&q.mu - &p.mu)?.sqr()?;
    // log(sp/sq) + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2
    let log_ratio = (p.sigma.log()? - q.sigma.log()?)?;
    let frac = ((var_q + diff)? / (var_p * 2.0)?)?;
    let kl = ((log_ratio + frac)? - 0.5)?;
    Ok((kl.sum_all()? / batch)?)
}

/// Scalar pieces of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub feature: f64,
    pub kl: f64,
    pub total: f64,
}

/// `gamma * pixel + feature + beta * kl`, returned alongside its parts.
pub fn compose_loss(
    pixel: &Tensor,
    feature: &Tensor,
    kl: Option<&Tensor>,
    gamma: f64,
    beta: f64,
) -> Result<(Tensor, LossBreakdown)> {
    let mut total = ((pixel * gamma)? + feature)?;
    let mut kl_val = 0.0;
    if let Some(kl) = kl {
        total = (total + (kl * beta)?)?;
        kl_val = scalar(kl)?;
    }
    let parts = LossBreakdown {
        pixel: scalar(pixel)?,
        feature: scalar(feature)?,
        kl: kl_val,
        total: scalar(&total)?,
    };
    Ok((total, parts))
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
    }

    fn dist(mu: &[f64], sigma: &[f64], shape: &[usize]) -> EventDistribution {
        EventDistribution {
            mu: t(mu, shape),
            sigma: t(sigma, shape),
        }
    }

    #[test]
    fn l1_hand_value() {
        let a = t(&[0.0, 1.0, 2.0, 3.0], &[2, 2]);
        let b = t(&[1.0, 1.0, 0.0, 3.5], &[2, 2]);
        assert!((scalar(&l1(&a, &b).unwrap()).unwrap() - 0.875).abs() < 1e-15);
        assert!(l1(&a, &t(&[0.0; 2], &[2])).is_err());
    }

    #[test]
    fn kl_identical_is_zero() {
        let q = dist(&[0.3, -1.0], &[0.5, 2.0], &[1, 1, 2]);
        assert!(scalar(&gaussian_kl(&q, &q).unwrap()).unwrap().abs() < 1e-14);
    }

    #[test]
    fn kl_closed_form() {
        // q = N(1, 1), p = N(0, 1): 0.5 per dim
        let q = dist(&[1.0; 4], &[1.0; 4], &[2, 1, 2]);
        let p = dist(&[0.0; 4], &[1.0; 4], &[2, 1, 2]);
        let kl = scalar(&gaussian_kl(&q, &p).unwrap()).unwrap();
        assert!((kl - 1.0).abs() < 1e-14, "{kl}");
        // q = N(0, 0.5^2), p = N(0, 1): ln 2 + 0.125 - 0.5
        let q = dist(&[0.0], &[0.5], &[1, 1, 1]);
        let p = dist(&[0.0], &[1.0], &[1, 1, 1]);
        let kl = scalar(&gaussian_kl(&q, &p).unwrap()).unwrap();
        assert!((kl - (2f64.ln() - 0.375)).abs() < 1e-14);
    }

    #[test]
    fn composed_total() {
        let (total, parts) = compose_loss(
            &t(&[2.0], &[]),
            &t(&[0.5], &[]),
            Some(&t(&[100.0], &[])),
            0.01,
            1e-3,
        )
        .unwrap();
        assert!((parts.total - 0.62).abs() < 1e-12);
        assert_eq!(scalar(&total).unwrap(), parts.total);
        let (_, parts) = compose_loss(&t(&[2.0], &[]), &t(&[0.5], &[]), None, 0.01, 1.0).unwrap();
        assert!((parts.total - 0.52).abs() < 1e-12);
        assert_eq!(parts.kl, 0.0);
    }
}
