//! Thomas algorithm for tridiagonal systems.

/// Solves `A x = rhs` in place for tridiagonal `A`.
///
/// `sub[i]` multiplies `x[i-1]` in row `i` (`sub[0]` unused), `diag[i]`
/// multiplies `x[i]`, `sup[i]` multiplies `x[i+1]` (last entry unused).
/// `scratch` must have the same length as `rhs`. Returns `false` on a zero pivot.
pub fn solve_in_place(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) -> bool {
    let n = rhs.len();
    debug_assert!(sub.len() == n && diag.len() == n && sup.len() == n && scratch.len() == n);
    if n == 0 {
        return true;
    }
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return false;
    }
    scratch[0] = sup[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * scratch[i - 1];
        if pivot == 0.0 {
            return false;
        }
        scratch[i] = sup[i] / pivot;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn apply(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 {
                    v += sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    #[test]
    fn solves_small_system() {
        let sub = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let sup = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 0.0, 1.0];
        let mut scratch = [0.0; 3];
        assert!(solve_in_place(&sub, &diag, &sup, &mut rhs, &mut scratch));
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut rhs = [1.0, 1.0];
        let mut scratch = [0.0; 2];
        assert!(!solve_in_place(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &mut rhs, &mut scratch));
    }

    proptest! {
        #[test]
        fn residual_is_small_for_dominant_systems(
            rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..60)
        ) {
            let n = rows.len();
            let sub: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let sup: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let diag: Vec<f64> = rows.iter().map(|r| 2.5 + r.2).collect();
            let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let mut rhs = apply(&sub, &diag, &sup, &x);
            let mut scratch = vec![0.0; n];
            prop_assert!(solve_in_place(&sub, &diag, &sup, &mut rhs, &mut scratch));
            for (a, b) in rhs.iter().zip(&x) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
