//! Central-difference stencil weights of arbitrary even accuracy.
//!
//! Weights come from the moment conditions
//!
//! ```text
//!   sum_k w_k * k^q  =  degree! * [q == degree]      q = 0 .. accuracy + degree - 1
//! ```
//!
//! over the symmetric offsets `-m ..= m` with `m = accuracy / 2`, solved in
//! exact rational arithmetic. The first `2m + 1` conditions form a square
//! Vandermonde system; the remaining ones hold automatically by symmetry and
//! are asserted after the solve. Weights are pure numbers — the `1/dx^degree`
//! factor is folded in later, when stencils are lowered to kernels.

use crate::expr::Rational;
use super::DiscretizeError;

#[derive(Clone, Debug)]
pub struct StencilSpec {
    pub degree: usize,
    pub accuracy: usize,
    /// Symmetric offsets `-m ..= m`.
    pub offsets: Vec<i64>,
    /// Exact weight per offset.
    pub weights: Vec<Rational>,
}

impl StencilSpec {
    /// Half-width `m`: the one-sided footprint.
    pub fn half_width(&self) -> usize {
        self.accuracy / 2
    }
}

pub fn central_coefficients(
    degree: usize,
    accuracy: usize,
) -> Result<StencilSpec, DiscretizeError> {
    if !(1..=2).contains(&degree) {
        return Err(DiscretizeError::Value(format!(
            "derivative degree must be 1 or 2, got {degree}"
        )));
    }
    if accuracy < 2 || accuracy % 2 != 0 {
        return Err(DiscretizeError::Value(format!(
            "stencil accuracy must be a positive even integer, got {accuracy}"
        )));
    }
    let m = (accuracy / 2) as i64;
    let offsets: Vec<i64> = (-m..=m).collect();
    let n = offsets.len();

    // Square system: rows are moments q = 0 .. 2m.
    let mut rows: Vec<Vec<Rational>> = Vec::with_capacity(n);
    for q in 0..n {
        let mut row: Vec<Rational> = offsets
            .iter()
            .map(|&k| {
                Rational::integer(k)
                    .pow(q as i64)
                    .expect("nonnegative power of an integer")
            })
            .collect();
        row.push(moment_rhs(degree, q));
        rows.push(row);
    }
    let weights = solve_exact(&mut rows)?;

    // The over-determined tail (degree 2 has one extra condition) and the
    // square part itself are re-checked directly.
    for q in 0..=(accuracy + degree - 1) {
        let total: Rational = offsets
            .iter()
            .zip(&weights)
            .map(|(&k, w)| w * &Rational::integer(k).pow(q as i64).unwrap())
            .fold(Rational::zero(), |acc, t| acc + t);
        if total != moment_rhs(degree, q) {
            return Err(DiscretizeError::Value(format!(
                "moment condition q={q} violated for degree {degree}, accuracy {accuracy}"
            )));
        }
    }

    Ok(StencilSpec {
        degree,
        accuracy,
        offsets,
        weights,
    })
}

fn moment_rhs(degree: usize, q: usize) -> Rational {
    if q == degree {
        let fact: i64 = (1..=degree as i64).product();
        Rational::integer(fact)
    } else {
        Rational::zero()
    }
}

/// Gaussian elimination with partial (first-nonzero) pivoting on an
/// augmented matrix; exact in rational arithmetic.
fn solve_exact(rows: &mut [Vec<Rational>]) -> Result<Vec<Rational>, DiscretizeError> {
    let n = rows.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| !rows[r][col].is_zero())
            .ok_or_else(|| DiscretizeError::Value("singular stencil system".into()))?;
        rows.swap(col, pivot_row);
        let pivot = rows[col][col].clone();
        for entry in rows[col][col..].iter_mut() {
            *entry = entry.checked_div(&pivot).expect("nonzero pivot");
        }
        for r in 0..n {
            if r != col && !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                for c in col..=n {
                    let sub = &factor * &rows[col][c];
                    rows[r][c] = &rows[r][c] - &sub;
                }
            }
        }
    }
    Ok(rows.iter().map(|row| row[n].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn weights(degree: usize, accuracy: usize) -> Vec<Rational> {
        central_coefficients(degree, accuracy).unwrap().weights
    }

    #[test]
    fn first_derivative_weights_match_the_classic_tables() {
        assert_eq!(weights(1, 2), vec![rat(-1, 2), rat(0, 1), rat(1, 2)]);
        assert_eq!(
            weights(1, 4),
            vec![rat(1, 12), rat(-2, 3), rat(0, 1), rat(2, 3), rat(-1, 12)]
        );
        assert_eq!(
            weights(1, 6),
            vec![
                rat(-1, 60),
                rat(3, 20),
                rat(-3, 4),
                rat(0, 1),
                rat(3, 4),
                rat(-3, 20),
                rat(1, 60)
            ]
        );
        assert_eq!(
            weights(1, 8),
            vec![
                rat(1, 280),
                rat(-4, 105),
                rat(1, 5),
                rat(-4, 5),
                rat(0, 1),
                rat(4, 5),
                rat(-1, 5),
                rat(4, 105),
                rat(-1, 280)
            ]
        );
        assert_eq!(
            weights(1, 10),
            vec![
                rat(-1, 1260),
                rat(5, 504),
                rat(-5, 84),
                rat(5, 21),
                rat(-5, 6),
                rat(0, 1),
                rat(5, 6),
                rat(-5, 21),
                rat(5, 84),
                rat(-5, 504),
                rat(1, 1260)
            ]
        );
        assert_eq!(
            weights(1, 12),
            vec![
                rat(1, 5544),
                rat(-1, 385),
                rat(1, 56),
                rat(-5, 63),
                rat(15, 56),
                rat(-6, 7),
                rat(0, 1),
                rat(6, 7),
                rat(-15, 56),
                rat(5, 63),
                rat(-1, 56),
                rat(1, 385),
                rat(-1, 5544)
            ]
        );
    }

    #[test]
    fn second_derivative_weights_match_the_classic_tables() {
        assert_eq!(weights(2, 2), vec![rat(1, 1), rat(-2, 1), rat(1, 1)]);
        assert_eq!(
            weights(2, 4),
            vec![rat(-1, 12), rat(4, 3), rat(-5, 2), rat(4, 3), rat(-1, 12)]
        );
        assert_eq!(
            weights(2, 6),
            vec![
                rat(1, 90),
                rat(-3, 20),
                rat(3, 2),
                rat(-49, 18),
                rat(3, 2),
                rat(-3, 20),
                rat(1, 90)
            ]
        );
        assert_eq!(
            weights(2, 8),
            vec![
                rat(-1, 560),
                rat(8, 315),
                rat(-1, 5),
                rat(8, 5),
                rat(-205, 72),
                rat(8, 5),
                rat(-1, 5),
                rat(8, 315),
                rat(-1, 560)
            ]
        );
        assert_eq!(
            weights(2, 10),
            vec![
                rat(1, 3150),
                rat(-5, 1008),
                rat(5, 126),
                rat(-5, 21),
                rat(5, 3),
                rat(-5269, 1800),
                rat(5, 3),
                rat(-5, 21),
                rat(5, 126),
                rat(-5, 1008),
                rat(1, 3150)
            ]
        );
        assert_eq!(
            weights(2, 12),
            vec![
                rat(-1, 16632),
                rat(2, 1925),
                rat(-1, 112),
                rat(10, 189),
                rat(-15, 56),
                rat(12, 7),
                rat(-5369, 1800),
                rat(12, 7),
                rat(-15, 56),
                rat(10, 189),
                rat(-1, 112),
                rat(2, 1925),
                rat(-1, 16632)
            ]
        );
    }

    #[test]
    fn weight_symmetry_holds_for_all_orders() {
        for acc in [2usize, 4, 6, 8, 10, 12] {
            let w1 = weights(1, acc);
            let w2 = weights(2, acc);
            let m = acc / 2;
            assert!(w1[m].is_zero(), "degree-1 centre weight at accuracy {acc}");
            for k in 0..=m {
                assert_eq!(w1[m - k], -&w1[m + k], "degree-1 accuracy {acc} k {k}");
                assert_eq!(w2[m - k], w2[m + k], "degree-2 accuracy {acc} k {k}");
            }
            let zero_sum = |w: &[Rational]| {
                w.iter().fold(Rational::zero(), |a, b| a + b.clone()).is_zero()
            };
            assert!(zero_sum(&w1) && zero_sum(&w2));
        }
    }

    #[test]
    fn stencils_differentiate_monomials_exactly() {
        // Exactness on x^q sampled on an integer grid around any base point:
        // the stencil must recover d^g/dx^g x^q at x = b, i.e.
        // q!/(q-g)! * b^(q-g), for all q up to accuracy + degree - 1.
        for acc in [2usize, 4, 6, 8, 10, 12] {
            for degree in [1usize, 2] {
                let spec = central_coefficients(degree, acc).unwrap();
                for q in 0..=(acc + degree - 1) {
                    for base in [-3i64, 0, 2] {
                        let applied: Rational = spec
                            .offsets
                            .iter()
                            .zip(&spec.weights)
                            .map(|(&k, w)| {
                                w * &Rational::integer(base + k).pow(q as i64).unwrap()
                            })
                            .fold(Rational::zero(), |a, t| a + t);
                        let expect = if q >= degree {
                            let mut c = 1i64;
                            for j in 0..degree {
                                c *= (q - j) as i64;
                            }
                            &Rational::integer(c)
                                * &Rational::integer(base).pow((q - degree) as i64).unwrap()
                        } else {
                            Rational::zero()
                        };
                        assert_eq!(
                            applied, expect,
                            "degree {degree} accuracy {acc} monomial {q} base {base}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(central_coefficients(0, 2).is_err());
        assert!(central_coefficients(3, 2).is_err());
        assert!(central_coefficients(1, 3).is_err());
        assert!(central_coefficients(1, 0).is_err());
    }
}
