//! Vector, norm and projection primitives, plus the Laplace distribution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// A point in the optimization domain.
pub type Point = DVector<f64>;

/// L¹ norm.
pub fn norm1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Axis-aligned box `[lower, upper]`, the only supported domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxBounds", into = "BoxBounds")]
pub struct BoxDomain {
    lower: Point,
    upper: Point,
}

#[derive(Serialize, Deserialize)]
struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxBounds> for BoxDomain {
    type Error = Error;

    fn try_from(b: BoxBounds) -> Result<Self> {
        BoxDomain::new(b.lower, b.upper)
    }
}

impl From<BoxDomain> for BoxBounds {
    fn from(d: BoxDomain) -> Self {
        BoxBounds {
            lower: d.lower.as_slice().to_vec(),
            upper: d.upper.as_slice().to_vec(),
        }
    }
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::param("domain must have dimension at least 1"));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::param(format!(
                    "domain side {k} must satisfy finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lower: Point::from_vec(lower),
            upper: Point::from_vec(upper),
        })
    }

    /// `[-half_width, half_width]^dim`.
    pub fn centered_cube(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Point {
        &self.lower
    }

    pub fn upper(&self) -> &Point {
        &self.upper
    }

    /// Euclidean diameter `‖upper − lower‖₂` (the constant C1).
    pub fn diameter(&self) -> f64 {
        (&self.upper - &self.lower).norm()
    }

    /// `sup_{x ∈ box} ‖x‖₂`, attained at the corner of largest magnitude.
    pub fn sup_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .map(|(lo, hi)| {
                let m = lo.abs().max(hi.abs());
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Euclidean projection onto the box (componentwise clamp).
    pub fn project(&self, x: &[f64]) -> Result<Point> {
        self.check_dim(x.len())?;
        Ok(Point::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
        ))
    }

    /// Projects every row of an `N × n` state matrix in place.
    pub fn project_rows(&self, states: &mut DMatrix<f64>) -> Result<()> {
        self.check_dim(states.ncols())?;
        for (k, mut col) in states.column_iter_mut().enumerate() {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            col.apply(|v| *v = v.clamp(lo, hi));
        }
        Ok(())
    }

    /// A uniform point of the box, one stream draw per component.
    pub fn sample(&self, rng: &mut RandomStream) -> Point {
        Point::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(self.upper.iter())
                .map(|(lo, hi)| rng.next_range(*lo, *hi)),
        )
    }

    /// The corner opposite to the one nearest `x`.
    pub fn far_corner(&self, x: &[f64]) -> Point {
        Point::from_iterator(
            self.dim(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (lo, hi))| if (v - lo) < (hi - v) { *hi } else { *lo }),
        )
    }
}

/// Scale of a Laplace distribution, `Lap(scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParam(f64);

impl LaplaceParam {
    pub fn new(scale: f64) -> Result<Self> {
        if scale > 0.0 && scale.is_finite() {
            Ok(Self(scale))
        } else {
            Err(Error::param(format!(
                "Laplace scale must be positive and finite, got {scale}"
            )))
        }
    }

    pub fn scale(&self) -> f64 {
        self.0
    }

    /// Inverse CDF evaluated at `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let centered = u - 0.5;
        -self.0 * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
    }

    /// One draw, consuming exactly one word of the stream.
    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        self.quantile(rng.next_uniform())
    }

    /// `log(1/(2b)) − |x|/b`.
    pub fn log_density(&self, x: f64) -> f64 {
        -(2.0 * self.0).ln() - x.abs() / self.0
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.0 * self.0
    }
}

/// `Σ_{s=1}^{t} β^{t−s} a_s` with `t = sequence.len()`.
pub fn geometric_tail_limit(beta: f64, sequence: &[f64]) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param(format!("beta must lie in (0, 1), got {beta}")));
    }
    // Horner form: ((a_1 β + a_2) β + …) β + a_t
    Ok(sequence.iter().fold(0.0, |acc, a| acc * beta + a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn square() -> BoxDomain {
        BoxDomain::centered_cube(2, 1.0).unwrap()
    }

    #[test]
    fn project_examples() {
        let d = square();
        assert_eq!(d.project(&[0.3, -0.7]).unwrap().as_slice(), &[0.3, -0.7]);
        assert_eq!(d.project(&[2.5, -3.0]).unwrap().as_slice(), &[1.0, -1.0]);
        assert_eq!(d.project(&[1.0, 7.2]).unwrap().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn project_dimension_mismatch() {
        assert!(matches!(
            square().project(&[0.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoxDomain::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxDomain::new(vec![], vec![]).is_err());
        assert!(BoxDomain::new(vec![0.0, f64::NEG_INFINITY], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn diameter_and_sup_norm() {
        let d = square();
        assert_abs_diff_eq!(d.diameter(), 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(d.sup_norm(), 2f64.sqrt(), epsilon = 1e-15);
        let skew = BoxDomain::new(vec![-3.0, 0.5], vec![1.0, 2.0]).unwrap();
        // corners: max |x| per side is 3 and 2
        assert_abs_diff_eq!(skew.sup_norm(), 13f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn sup_norm_matches_corner_enumeration() {
        let d = BoxDomain::new(vec![-0.2, -5.0, 1.0], vec![3.0, 0.1, 4.0]).unwrap();
        let mut best: f64 = 0.0;
        for mask in 0..8u32 {
            let c: Vec<f64> = (0..3)
                .map(|k| if mask >> k & 1 == 1 { d.upper()[k] } else { d.lower()[k] })
                .collect();
            best = best.max(norm2(&c));
        }
        assert_abs_diff_eq!(d.sup_norm(), best, epsilon = 1e-14);
    }

    #[test]
    fn laplace_quantile_examples() {
        let one = LaplaceParam::new(1.0).unwrap();
        assert_eq!(one.quantile(0.5), 0.0);
        assert_abs_diff_eq!(one.quantile(0.75), std::f64::consts::LN_2, epsilon = 1e-12);
        let two = LaplaceParam::new(2.0).unwrap();
        assert_abs_diff_eq!(two.quantile(0.25), -1.386294361119891, epsilon = 1e-12);
    }

    #[test]
    fn laplace_log_density_examples() {
        let half = LaplaceParam::new(0.5).unwrap();
        assert_eq!(half.log_density(0.0), 0.0);
        let one = LaplaceParam::new(1.0).unwrap();
        assert_abs_diff_eq!(one.log_density(1.0), -1.693147180559945, epsilon = 1e-12);
        let two = LaplaceParam::new(2.0).unwrap();
        assert_abs_diff_eq!(two.log_density(-4.0), -3.386294361119891, epsilon = 1e-12);
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        assert!(LaplaceParam::new(0.0).is_err());
        assert!(LaplaceParam::new(-1.0).is_err());
        assert!(LaplaceParam::new(f64::NAN).is_err());
    }

    #[test]
    fn laplace_sample_moments() {
        let c = 0.7;
        let lap = LaplaceParam::new(c).unwrap();
        let mut rng = StreamKey::new(2024, Purpose::Audit, 0, 0).stream(0);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| lap.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 5.0 * c / (n as f64).sqrt() * 3.0, "mean {mean}");
        assert!((var / lap.variance() - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm1(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(norm2(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(norm1(&[3.0, -4.0]), 7.0);
        assert_eq!(norm2(&[3.0, -4.0]), 5.0);
    }

    #[test]
    fn geometric_tail_examples() {
        assert_eq!(geometric_tail_limit(0.5, &[0.0; 4]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            geometric_tail_limit(0.5, &[1.0, 1.0, 1.0]).unwrap(),
            1.75,
            epsilon = 1e-15
        );
        let harmonic: Vec<f64> = (1..=10_000).map(|s| 1.0 / s as f64).collect();
        assert!(geometric_tail_limit(0.9, &harmonic).unwrap() < 0.01);
        assert!(geometric_tail_limit(1.0, &[1.0]).is_err());
        assert!(geometric_tail_limit(0.0, &[1.0]).is_err());
    }

    #[test]
    fn geometric_tail_matches_direct_sum() {
        let a: Vec<f64> = (1..=30).map(|s| (s as f64).sin()).collect();
        let beta: f64 = 0.83;
        let t = a.len();
        let direct: f64 = (1..=t).map(|s| beta.powi((t - s) as i32) * a[s - 1]).sum();
        assert_abs_diff_eq!(geometric_tail_limit(beta, &a).unwrap(), direct, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn projection_lands_in_box(x in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let d = BoxDomain::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 3.0]).unwrap();
            let p = d.project(&x).unwrap();
            prop_assert!(d.contains(p.as_slice()));
        }

        #[test]
        fn laplace_symmetric(u in 0.001f64..0.999, b in 0.01f64..10.0) {
            let lap = LaplaceParam::new(b).unwrap();
            prop_assert!((lap.quantile(u) + lap.quantile(1.0 - u)).abs() < 1e-9 * b);
        }
    }
}
