//! Piecewise-linear fuzzy sets and the min/max connectives.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuzzyError {
    #[error("membership input must be finite, got {0}")]
    NonFinite(f64),
    #[error("inverse membership needs a monotone linear set, `{0}` is not")]
    UnsupportedShape(String),
    #[error("membership degree {0} outside [0, 1]")]
    Domain(f64),
    #[error("connective needs at least one degree")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipFunction {
    /// `clip(a * x + b, 0, 1)`.
    Linear { a: f64, b: f64 },
    /// Zero outside `[left, right]`, one at `peak`.
    Triangle { left: f64, peak: f64, right: f64 },
    /// Zero outside `[left_foot, right_foot]`, one on `[left_shoulder, right_shoulder]`.
    Trapezoid {
        left_foot: f64,
        left_shoulder: f64,
        right_shoulder: f64,
        right_foot: f64,
    },
}

fn rising(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= hi {
        1.0
    } else if x <= lo {
        0.0
    } else {
        (x - lo) / (hi - lo)
    }
}

fn falling(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        1.0
    } else if x >= hi {
        0.0
    } else {
        (hi - x) / (hi - lo)
    }
}

impl MembershipFunction {
    /// Evaluates without the finiteness check; NaN in gives NaN out.
    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        match *self {
            MembershipFunction::Linear { a, b } => (a * x + b).clamp(0.0, 1.0),
            MembershipFunction::Triangle { left, peak, right } => {
                if x < left || x > right {
                    0.0
                } else if x <= peak {
                    rising(x, left, peak)
                } else {
                    falling(x, peak, right)
                }
            }
            MembershipFunction::Trapezoid {
                left_foot,
                left_shoulder,
                right_shoulder,
                right_foot,
            } => {
                if x < left_foot || x > right_foot {
                    0.0
                } else if x < left_shoulder {
                    rising(x, left_foot, left_shoulder)
                } else if x <= right_shoulder {
                    1.0
                } else {
                    falling(x, right_shoulder, right_foot)
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, FuzzyError> {
        if !x.is_finite() {
            return Err(FuzzyError::NonFinite(x));
        }
        Ok(self.eval_unchecked(x))
    }

    /// Breakpoints must be finite and nondecreasing; a linear slope must be finite.
    pub fn is_well_formed(&self) -> bool {
        match *self {
            MembershipFunction::Linear { a, b } => a.is_finite() && b.is_finite(),
            MembershipFunction::Triangle { left, peak, right } => {
                [left, peak, right].iter().all(|v| v.is_finite()) && left <= peak && peak <= right
            }
            MembershipFunction::Trapezoid {
                left_foot,
                left_shoulder,
                right_shoulder,
                right_foot,
            } => {
                let v = [left_foot, left_shoulder, right_shoulder, right_foot];
                v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] <= w[1])
            }
        }
    }

    pub fn is_monotone(&self) -> bool {
        matches!(self, MembershipFunction::Linear { a, .. } if *a != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzySet {
    pub name: String,
    pub mf: MembershipFunction,
}

impl FuzzySet {
    pub fn new(name: impl Into<String>, mf: MembershipFunction) -> Self {
        Self {
            name: name.into(),
            mf,
        }
    }
}

impl fmt::Display for FuzzySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

pub fn membership(set: &FuzzySet, x: f64) -> Result<f64, FuzzyError> {
    set.mf.eval(x)
}

/// Fuzzy intersection: the minimum degree.
pub fn fuzzy_and(degrees: &[f64]) -> Result<f64, FuzzyError> {
    check_degrees(degrees)?;
    Ok(degrees.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Fuzzy union: the maximum degree.
pub fn fuzzy_or(degrees: &[f64]) -> Result<f64, FuzzyError> {
    check_degrees(degrees)?;
    Ok(degrees.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn check_degrees(degrees: &[f64]) -> Result<(), FuzzyError> {
    if degrees.is_empty() {
        return Err(FuzzyError::Empty);
    }
    match degrees.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        Some(&d) => Err(FuzzyError::Domain(d)),
        None => Ok(()),
    }
}

/// Solves `membership(set, z) = w` on the ramp of a monotone linear set.
///
/// The plateau degrees 0 and 1 map to the ramp endpoints, so the result is
/// continuous in `w`.
pub fn inverse_membership(set: &FuzzySet, w: f64) -> Result<f64, FuzzyError> {
    let MembershipFunction::Linear { a, b } = set.mf else {
        return Err(FuzzyError::UnsupportedShape(set.name.clone()));
    };
    if a == 0.0 {
        return Err(FuzzyError::UnsupportedShape(set.name.clone()));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(FuzzyError::Domain(w));
    }
    Ok((w - b) / a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn large() -> FuzzySet {
        FuzzySet::new("large", MembershipFunction::Linear { a: 0.5, b: -1.0 })
    }

    #[test]
    fn clipped_linear_example() {
        let s = large();
        assert_eq!(membership(&s, 2.0).unwrap(), 0.0);
        assert_eq!(membership(&s, 4.0).unwrap(), 1.0);
        assert_eq!(membership(&s, 3.0).unwrap(), 0.5);
        assert_eq!(membership(&s, 100.0).unwrap(), 1.0);
        assert_eq!(membership(&s, -100.0).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_input() {
        assert!(matches!(membership(&large(), f64::INFINITY), Err(FuzzyError::NonFinite(_))));
    }

    #[test]
    fn triangle_and_trapezoid() {
        let tri = MembershipFunction::Triangle { left: -6.0, peak: 0.0, right: 6.0 };
        assert_eq!(tri.eval(0.0).unwrap(), 1.0);
        assert_eq!(tri.eval(3.0).unwrap(), 0.5);
        assert_eq!(tri.eval(-3.0).unwrap(), 0.5);
        assert_eq!(tri.eval(7.0).unwrap(), 0.0);
        let trap = MembershipFunction::Trapezoid {
            left_foot: 0.0,
            left_shoulder: 1.0,
            right_shoulder: 2.0,
            right_foot: 4.0,
        };
        assert_eq!(trap.eval(0.5).unwrap(), 0.5);
        assert_eq!(trap.eval(1.5).unwrap(), 1.0);
        assert_eq!(trap.eval(3.0).unwrap(), 0.5);
        // degenerate shoulders behave like a crisp step
        let step = MembershipFunction::Trapezoid {
            left_foot: 1.0,
            left_shoulder: 1.0,
            right_shoulder: 2.0,
            right_foot: 2.0,
        };
        assert_eq!(step.eval(1.0).unwrap(), 1.0);
        assert_eq!(step.eval(2.0).unwrap(), 1.0);
        assert_eq!(step.eval(2.5).unwrap(), 0.0);
    }

    #[test]
    fn connectives() {
        assert_eq!(fuzzy_and(&[0.3, 0.7]).unwrap(), 0.3);
        assert_eq!(fuzzy_and(&[1.0]).unwrap(), 1.0);
        assert_eq!(fuzzy_or(&[0.3, 0.7]).unwrap(), 0.7);
        assert_eq!(fuzzy_or(&[0.0]).unwrap(), 0.0);
        assert_eq!(fuzzy_and(&[]), Err(FuzzyError::Empty));
        assert_eq!(fuzzy_or(&[0.5, 1.5]), Err(FuzzyError::Domain(1.5)));
    }

    #[test]
    fn and_or_match_exhaustive_pairwise_grid() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for &a in &grid {
            for &b in &grid {
                let lo = if a < b { a } else { b };
                let hi = if a > b { a } else { b };
                assert_eq!(fuzzy_and(&[a, b]).unwrap(), lo);
                assert_eq!(fuzzy_or(&[a, b]).unwrap(), hi);
            }
        }
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse_membership(&large(), 0.5).unwrap(), 3.0);
        let falling = FuzzySet::new("f", MembershipFunction::Linear { a: -0.25, b: 0.5 });
        assert_eq!(inverse_membership(&falling, 1.0).unwrap(), -2.0);
        // plateaus map to the ramp ends
        assert_eq!(inverse_membership(&large(), 0.0).unwrap(), 2.0);
        assert_eq!(inverse_membership(&large(), 1.0).unwrap(), 4.0);
    }

    #[test]
    fn inverse_errors() {
        let tri = FuzzySet::new("t", MembershipFunction::Triangle { left: 0.0, peak: 1.0, right: 2.0 });
        assert!(matches!(inverse_membership(&tri, 0.5), Err(FuzzyError::UnsupportedShape(_))));
        let flat = FuzzySet::new("flat", MembershipFunction::Linear { a: 0.0, b: 0.5 });
        assert!(matches!(inverse_membership(&flat, 0.5), Err(FuzzyError::UnsupportedShape(_))));
        assert_eq!(inverse_membership(&large(), 1.2), Err(FuzzyError::Domain(1.2)));
    }

    fn arb_mf() -> impl Strategy<Value = MembershipFunction> {
        prop_oneof![
            (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| MembershipFunction::Linear { a, b }),
            prop::array::uniform3(-10.0f64..10.0).prop_map(|mut v| {
                v.sort_by(f64::total_cmp);
                MembershipFunction::Triangle { left: v[0], peak: v[1], right: v[2] }
            }),
            prop::array::uniform4(-10.0f64..10.0).prop_map(|mut v| {
                v.sort_by(f64::total_cmp);
                MembershipFunction::Trapezoid {
                    left_foot: v[0],
                    left_shoulder: v[1],
                    right_shoulder: v[2],
                    right_foot: v[3],
                }
            }),
        ]
    }

    proptest! {
        #[test]
        fn membership_in_unit_interval(mf in arb_mf(), x in -1e6f64..1e6) {
            let m = mf.eval(x).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }

        #[test]
        fn monotone_sign_matches_slope(a in -5.0f64..5.0, b in -2.0f64..2.0, level in 0.01f64..0.99) {
            prop_assume!(a.abs() > 1e-3);
            let mf = MembershipFunction::Linear { a, b };
            let h = 1e-6;
            // a point whose raw value lies strictly inside (0, 1)
            let x = (level - b) / a;
            let d = mf.eval(x + h).unwrap() - mf.eval(x - h).unwrap();
            prop_assert_eq!(d.signum(), a.signum());
        }

        #[test]
        fn lattice_laws(xs in prop::collection::vec(0.0f64..=1.0, 1..10), ys in prop::collection::vec(0.0f64..=1.0, 1..10)) {
            let and = |v: &[f64]| fuzzy_and(v).unwrap();
            let or = |v: &[f64]| fuzzy_or(v).unwrap();
            prop_assert!(or(&xs) >= and(&xs));
            // idempotent
            let doubled: Vec<f64> = xs.iter().chain(&xs).copied().collect();
            prop_assert_eq!(and(&doubled), and(&xs));
            prop_assert_eq!(or(&doubled), or(&xs));
            // commutative
            let mut rev = xs.clone();
            rev.reverse();
            prop_assert_eq!(and(&rev), and(&xs));
            prop_assert_eq!(or(&rev), or(&xs));
            // associative
            let joined: Vec<f64> = xs.iter().chain(&ys).copied().collect();
            prop_assert_eq!(and(&[and(&xs), and(&ys)]), and(&joined));
            prop_assert_eq!(or(&[or(&xs), or(&ys)]), or(&joined));
            // absorption: a ∧ (a ∨ b) = a, a ∨ (a ∧ b) = a
            let (a, b) = (xs[0], ys[0]);
            prop_assert_eq!(and(&[a, or(&[a, b])]), a);
            prop_assert_eq!(or(&[a, and(&[a, b])]), a);
        }

        #[test]
        fn inverse_round_trip(a in prop_oneof![-5.0f64..-0.01, 0.01f64..5.0], b in -3.0f64..3.0, w in 0.001f64..0.999) {
            let s = FuzzySet::new("c", MembershipFunction::Linear { a, b });
            let z = inverse_membership(&s, w).unwrap();
            prop_assert!((membership(&s, z).unwrap() - w).abs() < 1e-12);
        }
    }
}
