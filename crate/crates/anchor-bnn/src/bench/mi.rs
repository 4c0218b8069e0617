//! Mutual information between scalar variables via the Kraskov k-nearest-
//! neighbor estimator (variant 1), used to screen influential inputs when
//! building per-output functional priors.

use statrs::function::gamma::digamma;

/// Result of an MI estimate, in nats, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub nats: f64,
    /// Set when either variable is constant; the estimate is then 0 by
    /// convention.
    pub degenerate: bool,
}

pub const DEFAULT_KNN: usize = 3;

/// KSG estimator 1 with `k = 3`.
pub fn mutual_information(x: &[f64], y: &[f64]) -> MiEstimate {
    mutual_information_k(x, y, DEFAULT_KNN)
}

/// KSG estimator 1:
/// `I = psi(k) + psi(N) - < psi(n_x + 1) + psi(n_y + 1) >` where `n_x`,
/// `n_y` count neighbors strictly inside the k-NN max-norm radius.
pub fn mutual_information_k(x: &[f64], y: &[f64], k: usize) -> MiEstimate {
    assert_eq!(x.len(), y.len(), "aligned samples required");
    let n = x.len();
    if n < k + 1 {
        return MiEstimate {
            nats: 0.0,
            degenerate: true,
        };
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return MiEstimate {
            nats: 0.0,
            degenerate: true,
        };
    }
    let mut psi_sum = 0.0;
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if j != i {
                let dx = (x[j] - x[i]).abs();
                let dy = (y[j] - y[i]).abs();
                dists.push(dx.max(dy));
            }
        }
        // k-th smallest joint distance
        let (_, eps, _) =
            dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let eps = *eps;
        let mut n_x = 0usize;
        let mut n_y = 0usize;
        for j in 0..n {
            if j != i {
                if (x[j] - x[i]).abs() < eps {
                    n_x += 1;
                }
                if (y[j] - y[i]).abs() < eps {
                    n_y += 1;
                }
            }
        }
        psi_sum += digamma((n_x + 1) as f64) + digamma((n_y + 1) as f64);
    }
    let nats = digamma(k as f64) + digamma(n as f64) - psi_sum / n as f64;
    MiEstimate {
        nats: nats.max(0.0),
        degenerate: false,
    }
}

/// For each output column, the indices of input columns whose MI estimate
/// reaches `threshold` (nats).
pub fn influential_subsets(
    x_cols: &[Vec<f64>],
    y_cols: &[Vec<f64>],
    threshold: f64,
) -> Vec<Vec<usize>> {
    y_cols
        .iter()
        .map(|y| {
            x_cols
                .iter()
                .enumerate()
                .filter(|(_, x)| mutual_information(x, y).nats >= threshold)
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Seed::new(seed).rng();
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn independent_variables_near_zero() {
        let n = 10_000;
        let x = normals(n, 1);
        let y = normals(n, 2);
        let mi = mutual_information(&x, &y);
        assert!(!mi.degenerate);
        assert!(mi.nats < 0.05, "mi {}", mi.nats);
    }

    #[test]
    fn deterministic_dependence_is_large() {
        let n = 10_000;
        let x = normals(n, 3);
        let mi = mutual_information(&x, &x.clone());
        assert!(mi.nats > 2.0, "mi {}", mi.nats);
    }

    #[test]
    fn nonlinear_dependence_detected() {
        // y = x^2 has zero linear correlation for symmetric x
        let n = 10_000;
        let x = normals(n, 4);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let mi = mutual_information(&x, &y);
        assert!(mi.nats > 0.5, "mi {}", mi.nats);
    }

    #[test]
    fn constant_input_degenerate() {
        let y = normals(100, 5);
        let x = vec![1.0; 100];
        let mi = mutual_information(&x, &y);
        assert!(mi.degenerate);
        assert_eq!(mi.nats, 0.0);
    }

    #[test]
    fn threshold_zero_selects_everything() {
        let n = 200;
        let x_cols = vec![normals(n, 6), normals(n, 7)];
        let y_cols = vec![normals(n, 8)];
        let subsets = influential_subsets(&x_cols, &y_cols, 0.0);
        assert_eq!(subsets[0], vec![0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn estimator_symmetric(seed in 0u64..50) {
            let n = 400;
            let x = normals(n, seed * 2 + 10);
            let mut rng = Seed::new(seed * 2 + 11).rng();
            // correlated pair
            let y: Vec<f64> = x
                .iter()
                .map(|&v| 0.7 * v + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let a = mutual_information(&x, &y).nats;
            let b = mutual_information(&y, &x).nats;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
