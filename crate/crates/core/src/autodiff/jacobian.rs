use super::{Dual, DualScalar, Real};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Full Jacobian of a vector function by forward mode, one column per pass.
///
/// Row `i` is the gradient of output `i`. Non-finite entries are reported with
/// their (row, column) indices.
pub fn jacobian<F>(func: F, at: &[f64]) -> Result<Mat<f64>>
where
    F: Fn(&[DualScalar]) -> Vec<DualScalar>,
{
    let jac = jacobian_dual(|x: &[Dual<f64>]| func(x), at);
    let bad: Vec<(usize, usize)> = (0..jac.rows())
        .flat_map(|i| (0..jac.cols()).map(move |j| (i, j)))
        .filter(|&(i, j)| !jac[(i, j)].is_finite())
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonFiniteJacobian(bad));
    }
    Ok(jac)
}

/// Jacobian over an arbitrary scalar type; with `S = Var` the entries stay
/// differentiable on the tape.
pub fn jacobian_dual<S, F>(func: F, at: &[S]) -> Mat<S>
where
    S: Real,
    F: Fn(&[Dual<S>]) -> Vec<Dual<S>>,
{
    let n = at.len();
    let mut columns: Vec<Vec<S>> = Vec::with_capacity(n);
    let mut rows = 0;
    for j in 0..n {
        let x: Vec<Dual<S>> =
            at.iter().enumerate().map(|(k, &v)| Dual::new(v, if k == j { S::one() } else { S::zero() })).collect();
        let y = func(&x);
        rows = y.len();
        columns.push(y.into_iter().map(|d| d.eps).collect());
    }
    Mat::from_fn(rows, n, |i, j| columns[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map() {
        let j = jacobian(|x| x.to_vec(), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(j, Mat::identity(3));
    }

    #[test]
    fn product_and_square() {
        let f = |x: &[DualScalar]| vec![x[0] * x[1], x[0] * x[0]];
        let j = jacobian(f, &[2.0, 3.0]).unwrap();
        assert_eq!(j, Mat::from_rows(&[vec![3.0, 2.0], vec![4.0, 0.0]]));
        // finite-difference cross-check
        let fv = |a: f64, b: f64| [a * b, a * a];
        let h = 1e-6;
        for col in 0..2 {
            let (mut p, mut m) = ([2.0, 3.0], [2.0, 3.0]);
            p[col] += h;
            m[col] -= h;
            let (yp, ym) = (fv(p[0], p[1]), fv(m[0], m[1]));
            for row in 0..2 {
                let fd = (yp[row] - ym[row]) / (2.0 * h);
                assert!((fd - j[(row, col)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn non_finite_entries_are_located() {
        let f = |x: &[DualScalar]| vec![x[0], x[1].sqrt()];
        match jacobian(f, &[1.0, 0.0]) {
            Err(Error::NonFiniteJacobian(idx)) => assert!(idx.contains(&(1, 1)) && idx.iter().all(|&(r, _)| r == 1)),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }
}
