//! Minimal-norm projection kernels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `argmin ‖ν‖²` subject to `lower ≤ q + ν ≤ upper`, element-wise.
///
/// Bounds may be infinite. The constraints are separable, so the answer is
/// the clamp of 0 into `[lower − q, upper − q]`.
pub fn qp_solve_box_halfspace(q: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    check_box(q, lower, upper)?;
    Ok(q.iter()
        .zip(lower.iter().zip(upper))
        .map(|(qi, (l, u))| 0.0f64.max(l - qi).min(u - qi))
        .collect())
}

fn check_box(q: &[f64], lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != q.len() || upper.len() != q.len() {
        return Err(Error::ShapeMismatch {
            expected: (1, q.len()),
            found: (lower.len(), upper.len()),
        });
    }
    for (dim, (l, u)) in lower.iter().zip(upper).enumerate() {
        if l.is_nan() || u.is_nan() || l > u {
            return Err(Error::Infeasible {
                dim,
                lower: *l,
                upper: *u,
            });
        }
    }
    Ok(())
}

/// Same problem as [`qp_solve_box_halfspace`], solved as a general
/// least-distance program with [`least_distance`].
pub fn qp_solve_box_active_set(q: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    check_box(q, lower, upper)?;
    let n = q.len();
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..n {
        if lower[i].is_finite() {
            rows.push((i, 1.0, lower[i] - q[i]));
        }
        if upper[i].is_finite() {
            rows.push((i, -1.0, q[i] - upper[i]));
        }
    }
    let mut g = DMatrix::zeros(rows.len(), n);
    let mut h = DVector::zeros(rows.len());
    for (r, (i, sign, rhs)) in rows.into_iter().enumerate() {
        g[(r, i)] = sign;
        h[r] = rhs;
    }
    let nu = least_distance(&g, &h)?;
    Ok(nu.iter().copied().collect())
}

/// Solves `min ½‖x‖²  s.t.  G x ≥ h` through its non-negative least-squares
/// dual (Lawson and Hanson's LDP construction).
pub fn least_distance(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = g.shape();
    if h.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (h.len(), 1),
        });
    }
    if m == 0 {
        return Ok(DVector::zeros(n));
    }
    // E = [Gᵀ; hᵀ], f = e_{n+1}
    let mut e = DMatrix::zeros(n + 1, m);
    e.view_mut((0, 0), (n, m)).copy_from(&g.transpose());
    e.row_mut(n).copy_from(&h.transpose());
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;

    let u = nnls(&e, &f, 100 * (m + 1))?;
    let r = &e * &u - &f;
    let tail = r[n];
    if tail.abs() < 1e-14 {
        return Err(Error::Infeasible {
            dim: 0,
            lower: f64::NAN,
            upper: f64::NAN,
        });
    }
    Ok(DVector::from_iterator(n, (0..n).map(|j| -r[j] / tail)))
}

/// Lawson–Hanson active-set NNLS: `min ‖A x − b‖`, `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    let n = a.ncols();
    let tol = 1e-13 * a.norm().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut iter = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else {
            return Ok(x);
        };
        passive[t] = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::NonConvergence { steps: max_iter });
            }
            let z = passive_solve(a, b, &passive);
            let infeasible: Vec<usize> = (0..n).filter(|&j| passive[j] && z[j] <= 0.0).collect();
            if infeasible.is_empty() {
                x = z;
                break;
            }
            let alpha = infeasible
                .iter()
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
}

/// Unconstrained least squares restricted to the passive columns.
fn passive_solve(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&idx);
    let sol = sub
        .svd(true, true)
        .solve(b, 1e-14)
        .expect("SVD computed with both factors");
    let mut z = DVector::zeros(passive.len());
    for (k, &j) in idx.iter().enumerate() {
        z[j] = sol[k];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_inside_box() {
        let nu = qp_solve_box_halfspace(&[0.0, 1.0], &[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(nu, vec![0.0, 0.0]);
    }

    #[test]
    fn one_sided_floor() {
        let nu = qp_solve_box_halfspace(&[0.0], &[0.03], &[f64::INFINITY]).unwrap();
        assert_eq!(nu, vec![0.03]);
        let nu = qp_solve_box_active_set(&[0.0], &[0.03], &[f64::INFINITY]).unwrap();
        assert!((nu[0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn infeasible_box() {
        assert!(matches!(
            qp_solve_box_halfspace(&[0.0], &[1.0], &[0.0]),
            Err(Error::Infeasible { dim: 0, .. })
        ));
        assert!(qp_solve_box_active_set(&[0.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn ldp_coupled_halfspace() {
        // x + y ≥ 2 → (1, 1)
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let h = DVector::from_vec(vec![2.0]);
        let x = least_distance(&g, &h).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ldp_detects_infeasible() {
        // x ≥ 1 and −x ≥ 0
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_vec(vec![1.0, 0.0]);
        assert!(least_distance(&g, &h).is_err());
    }
}
