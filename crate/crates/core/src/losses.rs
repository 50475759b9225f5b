//! Color, eikonal, relight and mask losses with their gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_e: 0.1,
            lambda_r: 1.0,
            lambda_m: 0.1,
        }
    }
}

impl LossWeights {
    /// Defaults for data without object masks.
    pub fn without_masks() -> Self {
        Self {
            lambda_m: 0.0,
            ..Self::default()
        }
    }
}

/// How the relight residual is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RelightPenalty {
    /// Mean of `|c_r|`.
    #[default]
    Abs,
    /// Mean of `c_r²`.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub color: f64,
    pub eikonal: f64,
    pub relight: f64,
    pub mask: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LossError {
    #[error("non-finite {0} loss")]
    NonFinite(&'static str),
}

/// Mean over rays of the squared RGB error, and its gradient.
pub fn color_loss<T: Real>(pred: &[[T; 3]], gt: &[[T; 3]]) -> (T, Vec<[T; 3]>) {
    assert_eq!(pred.len(), gt.len());
    assert!(!pred.is_empty());
    let n = T::lit(pred.len() as f64);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let mut d = [T::zero(); 3];
            for k in 0..3 {
                let e = p[k] - g[k];
                loss += e * e;
                d[k] = (e + e) / n;
            }
            d
        })
        .collect();
    (loss / n, grad)
}

/// Mean of `(‖g‖ − 1)²` over the rows of `gradients`; zero when empty.
pub fn eikonal_loss<T: Real>(gradients: &Matrix<T>) -> (T, Matrix<T>) {
    let n = gradients.rows;
    let mut d = Matrix::zeros(n, 3);
    if n == 0 {
        return (T::zero(), d);
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    for r in 0..n {
        let g = gradients.row(r);
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let e = norm - T::one();
        loss += e * e;
        if norm > T::zero() {
            let s = (e + e) * inv_n / norm;
            for k in 0..3 {
                d.set(r, k, s * g[k]);
            }
        }
    }
    (loss * inv_n, d)
}

/// Mean over samples and channels of the residual penalty.
pub fn relight_loss<T: Real>(residuals: &Matrix<T>, penalty: RelightPenalty) -> (T, Matrix<T>) {
    let count = residuals.data.len();
    let mut d = Matrix::zeros(residuals.rows, residuals.cols);
    if count == 0 {
        return (T::zero(), d);
    }
    let inv = T::one() / T::lit(count as f64);
    let mut loss = T::zero();
    for (g, &r) in d.data.iter_mut().zip(&residuals.data) {
        match penalty {
            RelightPenalty::Abs => {
                loss += r.abs();
                *g = if r > T::zero() {
                    inv
                } else if r < T::zero() {
                    -inv
                } else {
                    T::zero()
                };
            }
            RelightPenalty::Squared => {
                loss += r * r;
                *g = (r + r) * inv;
            }
        }
    }
    (loss * inv, d)
}

/// Opacity clamp inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-5;

/// Mean binary cross-entropy between mask bits and accumulated opacity.
pub fn mask_loss<T: Real>(mask: &[bool], opacity: &[T]) -> (T, Vec<T>) {
    assert_eq!(mask.len(), opacity.len());
    if mask.is_empty() {
        return (T::zero(), Vec::new());
    }
    let eps = T::lit(BCE_EPS);
    let n = T::lit(mask.len() as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); mask.len()];
    for (i, (&m, &o)) in mask.iter().zip(opacity).enumerate() {
        let c = o.max(eps).min(T::one() - eps);
        let inside = o > eps && o < T::one() - eps;
        if m {
            loss -= c.ln();
            if inside {
                grad[i] = -T::one() / (c * n);
            }
        } else {
            loss -= (T::one() - c).ln();
            if inside {
                grad[i] = T::one() / ((T::one() - c) * n);
            }
        }
    }
    (loss / n, grad)
}

/// Weighted sum of the components.
pub fn total_loss(color: f64, eikonal: f64, relight: f64, mask: f64, w: &LossWeights) -> Result<LossBreakdown, LossError> {
    for (name, v) in [("color", color), ("eikonal", eikonal), ("relight", relight), ("mask", mask)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    // A zero weight removes the term even if it would be huge.
    let term = |l: f64, v: f64| if l == 0.0 { 0.0 } else { l * v };
    Ok(LossBreakdown {
        color,
        eikonal,
        relight,
        mask,
        total: term(w.lambda_c, color) + term(w.lambda_e, eikonal) + term(w.lambda_r, relight) + term(w.lambda_m, mask),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn color_examples() {
        let a = [[0.2f64, 0.4, 0.6], [0.1, 0.1, 0.1]];
        assert_eq!(color_loss(&a, &a).0, 0.0);
        assert_eq!(color_loss(&[[0.0f64; 3]], &[[1.0; 3]]).0, 3.0);
        let pred = [[1.0f64, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(color_loss(&pred, &[[0.0; 3]; 2]).0, 1.0);
        let swapped = [pred[1], pred[0]];
        assert_eq!(color_loss(&swapped, &[[0.0; 3]; 2]).0, 1.0);
    }

    #[test]
    fn eikonal_examples() {
        let unit = Matrix::from_vec(2, 3, vec![1.0f64, 0.0, 0.0, 0.0, 0.6, 0.8]);
        assert!(eikonal_loss(&unit).0.abs() < 1e-15);
        assert_eq!(eikonal_loss(&Matrix::<f64>::zeros(4, 3)).0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = Matrix::zeros(100, 3);
        for r in 0..100 {
            let p: [f64; 3] = core::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            m.row_mut(r).copy_from_slice(&[p[0] / n, p[1] / n, p[2] / n]);
        }
        assert!(eikonal_loss(&m).0 < 1e-12);
    }

    #[test]
    fn relight_examples() {
        assert_eq!(relight_loss(&Matrix::<f64>::zeros(3, 3), RelightPenalty::Abs).0, 0.0);
        let r = Matrix::from_vec(2, 3, vec![1.0f64, 1.0, 1.0, -1.0, -1.0, -1.0]);
        assert_eq!(relight_loss(&r, RelightPenalty::Abs).0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
        let k = 2.5;
        let scaled = Matrix::from_vec(4, 3, base.data.iter().map(|v| v * k).collect());
        let (a, _) = relight_loss(&base, RelightPenalty::Abs);
        assert!((relight_loss(&scaled, RelightPenalty::Abs).0 - k * a).abs() < 1e-12);
    }

    #[test]
    fn mask_examples() {
        assert!(mask_loss(&[true], &[1.0f64]).0 < 1e-4);
        assert!(mask_loss(&[false], &[0.0f64]).0 < 1e-4);
        assert!((mask_loss(&[true], &[0.5f64]).0 - 0.693147).abs() < 1e-6);
        assert!(mask_loss(&[true, false], &[0.0f64, 1.0]).0.is_finite());
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).unwrap().total, 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap().total - 2.2).abs() < 1e-12);
        let nm = LossWeights::without_masks();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 1e300, &nm).unwrap().total, 0.0);
        assert_eq!(total_loss(1.0, f64::NAN, 0.0, 0.0, &w), Err(LossError::NonFinite("eikonal")));
        let b = total_loss(0.3, 0.7, 0.2, 0.9, &w).unwrap();
        assert!((b.total - (0.3 + 0.07 + 0.2 + 0.09)).abs() < 1e-9);
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], g: &[f64]) {
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let d = (f(&p) - f(&m)) / 2e-6;
            assert!((d - g[i]).abs() < 1e-6, "{i}: {d} vs {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.5..1.5)).collect();
        let gt = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5], [0.9, 0.0, 1.0], [0.3, 0.3, 0.3]];
        let as_rgb = |v: &[f64]| v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
        let (_, g) = color_loss(&as_rgb(&x), &gt);
        fd(|v| color_loss(&as_rgb(v), &gt).0, &x, &g.concat());
        let m = |v: &[f64]| Matrix::from_vec(4, 3, v.to_vec());
        let (_, g) = eikonal_loss(&m(&x));
        fd(|v| eikonal_loss(&m(v)).0, &x, &g.data);
        for p in [RelightPenalty::Abs, RelightPenalty::Squared] {
            let (_, g) = relight_loss(&m(&x), p);
            fd(|v| relight_loss(&m(v), p).0, &x, &g.data);
        }
        let o = [0.2, 0.7, 0.5, 0.99];
        let mk = [true, false, true, false];
        let (_, g) = mask_loss(&mk, &o);
        fd(|v| mask_loss(&mk, v).0, &o, &g);
    }
}
