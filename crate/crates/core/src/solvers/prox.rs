//! Proximal and projection primitives.

use alloc::vec::Vec;

use nalgebra::DVector;

use super::SolverError;

/// Soft-thresholding of a scalar: `max(v - rho, 0) - max(-v - rho, 0)`.
#[inline]
pub fn shrink(v: f64, rho: f64) -> f64 {
    (v - rho).max(0.0) - (-v - rho).max(0.0)
}

/// Entrywise soft-thresholding, the proximal map of `rho * ||.||_1`.
pub fn soft_threshold(x: &DVector<f64>, rho: f64) -> DVector<f64> {
    x.map(|v| shrink(v, rho))
}

pub fn soft_threshold_in_place(x: &mut [f64], rho: f64) {
    if rho == 0.0 {
        return;
    }
    for v in x {
        *v = shrink(*v, rho);
    }
}

/// Exponent of the unit ball the dual variable lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DualNorm {
    L1,
    L2,
    Linf,
}

impl DualNorm {
    /// `1`, `2`, or `f64::INFINITY`; anything else is unsupported.
    pub fn from_exponent(n: f64) -> Result<Self, SolverError> {
        if n == 1.0 {
            Ok(Self::L1)
        } else if n == 2.0 {
            Ok(Self::L2)
        } else if n == f64::INFINITY {
            Ok(Self::Linf)
        } else {
            Err(SolverError::UnsupportedNorm(n))
        }
    }

    pub fn norm(self, y: &[f64]) -> f64 {
        norm(y, self)
    }
}

pub fn norm(y: &[f64], n: DualNorm) -> f64 {
    match n {
        DualNorm::L1 => y.iter().map(|v| v.abs()).sum(),
        DualNorm::L2 => libm::sqrt(y.iter().map(|v| v * v).sum()),
        DualNorm::Linf => y.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Euclidean projection onto the unit ball of the given norm.
pub fn project_ball(y: &DVector<f64>, n: DualNorm) -> DVector<f64> {
    let mut out = y.clone();
    project_ball_in_place(out.as_mut_slice(), n);
    out
}

pub fn project_ball_in_place(y: &mut [f64], n: DualNorm) {
    match n {
        DualNorm::L2 => {
            let r = norm(y, DualNorm::L2);
            if r > 1.0 {
                y.iter_mut().for_each(|v| *v /= r);
            }
        }
        DualNorm::Linf => y.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0)),
        DualNorm::L1 => {
            if norm(y, DualNorm::L1) <= 1.0 {
                return;
            }
            // sort-based simplex threshold on |y|
            let mut mags: Vec<f64> = y.iter().map(|v| v.abs()).collect();
            mags.sort_unstable_by(|a, b| b.total_cmp(a));
            let mut cum = 0.0;
            let mut tau = 0.0;
            for (k, m) in mags.iter().enumerate() {
                cum += m;
                let t = (cum - 1.0) / (k + 1) as f64;
                if *m > t {
                    tau = t;
                }
            }
            y.iter_mut().for_each(|v| *v = shrink(*v, tau));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shrink_examples() {
        assert_abs_diff_eq!(shrink(1.2, 0.5), 0.7, epsilon = 1e-15);
        assert_eq!(shrink(-0.3, 0.5), 0.0);
        assert_abs_diff_eq!(shrink(-1.5, 0.5), -1.0, epsilon = 1e-15);
        let x = DVector::from_row_slice(&[1.0, -2.0, 0.0, 3.5]);
        assert_eq!(soft_threshold(&x, 0.0), x);
    }

    #[test]
    fn projection_examples() {
        let p = project_ball(&DVector::from_row_slice(&[3.0, 4.0]), DualNorm::L2);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
        let inside = DVector::from_row_slice(&[0.3, 0.4]);
        assert_eq!(project_ball(&inside, DualNorm::L2), inside);
        let c = project_ball(&DVector::from_row_slice(&[0.5, -2.0]), DualNorm::Linf);
        assert_eq!(c.as_slice(), &[0.5, -1.0]);
    }

    #[test]
    fn l1_projection() {
        let p = project_ball(&DVector::from_row_slice(&[2.0, 0.0]), DualNorm::L1);
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        let p = project_ball(&DVector::from_row_slice(&[1.0, -1.0, 0.1]), DualNorm::L1);
        assert_abs_diff_eq!(p.as_slice(), [0.5, -0.5, 0.0].as_slice(), epsilon = 1e-15);
        assert_abs_diff_eq!(norm(p.as_slice(), DualNorm::L1), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn exponents() {
        assert_eq!(DualNorm::from_exponent(2.0), Ok(DualNorm::L2));
        assert_eq!(DualNorm::from_exponent(f64::INFINITY), Ok(DualNorm::Linf));
        assert_eq!(DualNorm::from_exponent(3.0), Err(SolverError::UnsupportedNorm(3.0)));
    }
}
