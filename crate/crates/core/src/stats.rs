//! Descriptive statistics shared across the pipeline: sample moments,
//! average ranks, Pearson/Spearman correlation with tie handling, and the
//! standard-normal tail used for regression p-values.
//!
//! Correlations return `None` when either axis has zero variance; callers
//! report that as "absent" rather than inventing a value.

use crate::num::{lit, Scalar};

/// Arithmetic mean; `None` on an empty slice.
pub fn mean<F: Scalar>(xs: &[F]) -> Option<F> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(F::zero(), |a, &b| a + b);
    Some(sum / lit(xs.len() as f64))
}

/// Unbiased (n−1) sample variance; `None` when fewer than two values.
pub fn sample_variance<F: Scalar>(xs: &[F]) -> Option<F> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss = xs.iter().fold(F::zero(), |a, &x| a + (x - m) * (x - m));
    Some(ss / lit((xs.len() - 1) as f64))
}

/// 1-based ranks with ties replaced by the mean of the ranks they occupy.
///
/// Values must be finite; comparison is exact, so only bit-identical values
/// tie.
pub fn average_ranks<F: Scalar>(xs: &[F]) -> Vec<F> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("ranks require finite values"));

    let mut ranks = vec![F::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = lit::<F>((i + j + 2) as f64) / lit(2.0);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson product-moment correlation.
///
/// `None` when fewer than two pairs or when either axis is constant.
/// Panics on length mismatch (programmer error, not data).
pub fn pearson<F: Scalar>(xs: &[F], ys: &[F]) -> Option<F> {
    assert_eq!(xs.len(), ys.len(), "pearson requires paired samples");
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman<F: Scalar>(xs: &[F], ys: &[F]) -> Option<F> {
    assert_eq!(xs.len(), ys.len(), "spearman requires paired samples");
    if xs.len() < 2 {
        return None;
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

pub mod normal {
    //! Standard-normal tail probabilities via Cody's rational approximations
    //! for erfc (relative error near machine precision in the f64 instance).

    use crate::num::{lit, Scalar};

    /// 97.5% standard-normal quantile, for two-sided 95% intervals.
    pub const Z_975: f64 = 1.959963984540054;

    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI: f64 = 5.6418958354775628695e-1; // 1/sqrt(pi)

    /// erf on |x| ≤ 0.46875.
    fn erf_small<F: Scalar>(x: F) -> F {
        let z = x * x;
        let mut num = lit::<F>(A[4]) * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + lit(A[i])) * z;
            den = (den + lit(B[i])) * z;
        }
        x * (num + lit(A[3])) / (den + lit(B[3]))
    }

    /// exp(−y²) evaluated as exp(−hi²)·exp(−(y−hi)(y+hi)) to limit the
    /// argument-rounding error that dominates the tail.
    fn exp_neg_y2<F: Scalar>(y: F) -> F {
        let hi = (y * lit(16.0)).trunc() / lit(16.0);
        let del = (y - hi) * (y + hi);
        (-hi * hi).exp() * (-del).exp()
    }

    /// erfc on 0.46875 < y ≤ 4.
    fn erfc_mid<F: Scalar>(y: F) -> F {
        let mut num = lit::<F>(C[8]) * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + lit(C[i])) * y;
            den = (den + lit(D[i])) * y;
        }
        exp_neg_y2(y) * (num + lit(C[7])) / (den + lit(D[7]))
    }

    /// erfc on y > 4.
    fn erfc_large<F: Scalar>(y: F) -> F {
        if y > lit(26.6) {
            return F::zero(); // below the smallest positive normal f64
        }
        let z = F::one() / (y * y);
        let mut num = lit::<F>(P[5]) * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + lit(P[i])) * z;
            den = (den + lit(Q[i])) * z;
        }
        let r = z * (num + lit(P[4])) / (den + lit(Q[4]));
        exp_neg_y2(y) * (lit::<F>(SQRPI) - r) / y
    }

    /// Complementary error function.
    pub fn erfc<F: Scalar>(x: F) -> F {
        let y = x.abs();
        let result = if y <= lit(0.46875) {
            F::one() - erf_small(x)
        } else if y <= lit(4.0) {
            erfc_mid(y)
        } else {
            erfc_large(y)
        };
        if x < F::zero() && y > lit(0.46875) {
            lit::<F>(2.0) - result
        } else {
            result
        }
    }

    /// Upper tail P(Z > z) of the standard normal.
    pub fn sf<F: Scalar>(z: F) -> F {
        lit::<F>(0.5) * erfc(z / lit(std::f64::consts::SQRT_2))
    }

    /// Two-sided tail P(|Z| > |z|).
    pub fn two_sided_p<F: Scalar>(z: F) -> F {
        erfc(z.abs() / lit(std::f64::consts::SQRT_2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) tied-rank oracle: rank = (#smaller) + (#equal + 1)/2.
    fn brute_ranks(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                let less = xs.iter().filter(|&&v| v < x).count() as f64;
                let equal = xs.iter().filter(|&&v| v == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    /// Direct moment-formula Pearson, independent of the library path.
    fn brute_pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
        let n = xs.len() as f64;
        if xs.len() < 2 {
            return None;
        }
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        if sxx == 0.0 || syy == 0.0 {
            None
        } else {
            Some(sxy / (sxx * syy).sqrt())
        }
    }

    /// Composite-Simpson integral of the standard normal density on [0, z].
    fn phi_integral(z: f64) -> f64 {
        let n = 20_000; // even panel count
        let h = z / n as f64;
        let dens = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = dens(0.0) + dens(z);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * dens(h * k as f64);
        }
        acc * h / 3.0
    }

    #[test]
    fn ranks_average_ties() {
        // [10, 20, 20, 30] -> ranks [1, 2.5, 2.5, 4]
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn perfect_anticorrelation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [4.0, 3.0, 2.0, 1.0];
        assert_abs_diff_eq!(pearson(&xs, &ys).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman(&xs, &ys).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_axis_has_no_correlation() {
        let xs = [1.0, 1.0, 1.0];
        let ys = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&xs, &ys), None);
        assert_eq!(spearman(&ys, &xs), None);
    }

    #[test]
    fn correlations_match_brute_force_on_random_tied_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..200 {
            let n = rng.random_range(2..=12);
            // Small integer support forces plenty of exact ties.
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();

            let br = brute_ranks(&xs);
            for (a, b) in average_ranks(&xs).iter().zip(&br) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }

            match (pearson(&xs, &ys), brute_pearson(&xs, &ys)) {
                (Some(a), Some(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-12),
                (None, None) => {}
                (a, b) => panic!("pearson disagreement: {a:?} vs {b:?}"),
            }
            match (spearman(&xs, &ys), brute_pearson(&brute_ranks(&xs), &brute_ranks(&ys))) {
                (Some(a), Some(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-12),
                (None, None) => {}
                (a, b) => panic!("spearman disagreement: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn kernels_instantiate_at_f32() {
        let xs: [f32; 4] = [1.0, 2.0, 3.0, 4.0];
        let ys: [f32; 4] = [2.0, 4.0, 6.0, 8.0];
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-6);
        assert!((normal::two_sided_p(0.0f32) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normal_tail_reference_points() {
        // erfc(1) to 15 digits
        assert_abs_diff_eq!(normal::erfc(1.0f64), 0.157_299_207_050_285_13, epsilon = 1e-15);
        assert_abs_diff_eq!(normal::two_sided_p(0.0f64), 1.0, epsilon = 1e-15);
        // z at the 97.5% quantile gives p = 0.05
        assert_abs_diff_eq!(normal::two_sided_p(1.959964f64), 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(normal::two_sided_p(normal::Z_975), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn normal_tail_matches_quadrature_oracle() {
        for i in 0..=80 {
            let z = 0.1 * i as f64; // 0.0 ..= 8.0
            let p_oracle = 1.0 - 2.0 * phi_integral(z);
            assert_abs_diff_eq!(normal::two_sided_p(z), p_oracle, epsilon = 1e-9);
            assert_abs_diff_eq!(normal::two_sided_p(-z), p_oracle, epsilon = 1e-9);
        }
        // far tail: p is already < 1e-9, quadrature no longer needed
        assert!(normal::two_sided_p(9.0f64) < 1e-9);
        assert!(normal::two_sided_p(40.0f64) >= 0.0);
    }
}
