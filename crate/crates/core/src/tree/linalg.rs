//! Small dense solves that work for both scalar modes.

use super::scalar::Scalar;

/// Solution of `A x = b` with the smallest Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastNorm<S> {
    pub x: Vec<S>,
    pub rank: usize,
}

/// Reduced row echelon form in place; returns the pivot columns.
fn rref<S: Scalar>(m: &mut [Vec<S>], n_cols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n_cols {
        if row == m.len() {
            break;
        }
        let best = (row..m.len())
            .max_by(|&a, &b| {
                m[a][col]
                    .abs_value()
                    .partial_cmp(&m[b][col].abs_value())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty range");
        if m[best][col].is_negligible() {
            for r in row..m.len() {
                m[r][col] = S::zero();
            }
            continue;
        }
        m.swap(row, best);
        let p = m[row][col].clone();
        for v in m[row].iter_mut() {
            *v = v.clone() / p.clone();
        }
        for r in 0..m.len() {
            if r != row && !m[r][col].is_negligible() {
                let f = m[r][col].clone();
                for c in 0..m[r].len() {
                    let sub = f.clone() * m[row][c].clone();
                    m[r][c] = m[r][c].clone() - sub;
                }
            }
            if r != row {
                m[r][col] = S::zero();
            }
        }
        pivots.push(col);
        row += 1;
    }
    pivots
}

/// Least-norm solution of the square or rectangular system `A x = b`, or
/// `None` when `b` is outside the range of `A`.
pub fn least_norm_solve<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Option<LeastNorm<S>> {
    let n = a.first().map_or(0, Vec::len);
    let mut m: Vec<Vec<S>> = a
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    let pivots = rref(&mut m, n);
    let rank = pivots.len();
    if m[rank..].iter().any(|r| !r[n].is_negligible()) {
        return None;
    }
    let mut x = vec![S::zero(); n];
    for (r, &c) in pivots.iter().enumerate() {
        x[c] = m[r][n].clone();
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    if free.is_empty() {
        return Some(LeastNorm { x, rank });
    }
    // Null-space basis: one vector per free column.
    let basis: Vec<Vec<S>> = free
        .iter()
        .map(|&f| {
            let mut v = vec![S::zero(); n];
            v[f] = S::one();
            for (r, &c) in pivots.iter().enumerate() {
                v[c] = -m[r][f].clone();
            }
            v
        })
        .collect();
    // Remove the null-space component: solve (N'N) y = N'x, x -= N y.
    let dot = |u: &[S], v: &[S]| {
        u.iter()
            .zip(v)
            .fold(S::zero(), |acc, (p, q)| acc + p.clone() * q.clone())
    };
    let gram: Vec<Vec<S>> = basis
        .iter()
        .map(|u| basis.iter().map(|v| dot(u, v)).collect())
        .collect();
    let rhs: Vec<S> = basis.iter().map(|u| dot(u, &x)).collect();
    let y = least_norm_solve(&gram, &rhs)?.x;
    for (v, yk) in basis.iter().zip(&y) {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi = xi.clone() - yk.clone() * vi.clone();
        }
    }
    Some(LeastNorm { x, rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn q(s: &str) -> BigRational {
        <BigRational as Scalar>::parse(s).unwrap()
    }

    #[test]
    fn full_rank_exact() {
        let a = vec![vec![q("2"), q("1")], vec![q("1"), q("3")]];
        let b = vec![q("1"), q("2")];
        let s = least_norm_solve(&a, &b).unwrap();
        assert_eq!(s.rank, 2);
        assert_eq!(s.x, vec![q("1/5"), q("3/5")]);
    }

    #[test]
    fn singular_gives_least_norm() {
        // Rank one: x1 + x2 = 2 has least-norm solution (1, 1).
        let a = vec![vec![q("1"), q("1")], vec![q("2"), q("2")]];
        let b = vec![q("2"), q("4")];
        let s = least_norm_solve(&a, &b).unwrap();
        assert_eq!(s.rank, 1);
        assert_eq!(s.x, vec![q("1"), q("1")]);
        assert!(least_norm_solve(&a, &[q("1"), q("1")]).is_none());
    }

    #[test]
    fn float_mode_matches() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let s = least_norm_solve(&a, &[3.0, 3.0]).unwrap();
        assert!((s.x[0] - 1.5).abs() < 1e-14 && (s.x[1] - 1.5).abs() < 1e-14);
        let zero = least_norm_solve(&[vec![0.0]], &[0.0]).unwrap();
        assert_eq!((zero.x[0], zero.rank), (0.0, 0));
    }
}
