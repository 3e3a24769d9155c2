//! Residual-driven priors over regions and candidate basis functions, the
//! residual likelihood, the optional dynamic-data factor, and the Gibbs
//! conditional flip probability with its linear-dependence penalty.

use faer::{Mat, Side};

use crate::{Error, Result};

const PROB_EPS: f64 = 1e-6;

/// Prior inclusion probabilities for one time interval.
#[derive(Clone, Debug)]
pub struct PriorModel {
    /// Region inclusion probabilities, one per region slot.
    pub region_probs: Vec<f64>,
    /// Per region slot: candidate inclusion probabilities.
    pub candidate_probs: Vec<Vec<f64>>,
    /// Budgets the normalization targeted.
    pub n_omega: usize,
    pub n_basis: usize,
    /// Cached local norms behind `region_probs`, for audit output.
    pub local_norms: Vec<f64>,
}

/// Posterior variant and scales.
#[derive(Clone, Debug)]
pub struct PosteriorSpec {
    pub variant: PosteriorVariant,
    /// Likelihood precision: likelihood = exp(-||R||^2 / sigma_l^2).
    pub sigma_l: f64,
    /// Optional observations: (observation dof indices, observed values,
    /// sigma_d).
    pub data: Option<DataTerm>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorVariant {
    AroundFixed,
    AroundPrevious,
}

#[derive(Clone, Debug)]
pub struct DataTerm {
    pub indices: Vec<usize>,
    pub observed: Vec<f64>,
    pub sigma_d: f64,
}

impl PosteriorSpec {
    pub fn new(variant: PosteriorVariant, sigma_l: f64) -> Self {
        assert!(sigma_l > 0.0, "sigma_l must be positive");
        PosteriorSpec {
            variant,
            sigma_l,
            data: None,
        }
    }
}

/// Region inclusion probabilities from local residual norms:
/// `alpha_k = |R_k| / |R|`, normalized so the expected number of selected
/// regions is `n_omega`, then clamped at one.
pub fn region_prior(local_norms: &[f64], global_norm: f64, n_omega: usize) -> Result<Vec<f64>> {
    assert!(n_omega >= 1, "region budget must be at least 1");
    if let Some(bad) = local_norms.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::Numerics(format!("negative local residual norm {bad}")));
    }
    if global_norm == 0.0 {
        if local_norms.iter().any(|v| *v != 0.0) {
            return Err(Error::Numerics(
                "zero global norm with nonzero local norms".into(),
            ));
        }
        return Ok(vec![0.0; local_norms.len()]);
    }
    let alphas: Vec<f64> = local_norms.iter().map(|v| v / global_norm).collect();
    let sum: f64 = alphas.iter().sum();
    if sum == 0.0 {
        return Ok(vec![0.0; local_norms.len()]);
    }
    Ok(alphas
        .iter()
        .map(|a| (a * n_omega as f64 / sum).min(1.0))
        .collect())
}

/// Candidate inclusion probabilities from the absolute Pearson correlation
/// between the region's residual slice and each candidate's image in the
/// same test coordinates, normalized to an expected count of `n_basis`.
/// Zero-variance candidate images get probability zero with a warning.
pub fn basis_prior(
    residual_slice: &[f64],
    candidate_images: &[Vec<f64>],
    n_basis: usize,
) -> Result<Vec<f64>> {
    assert!(!candidate_images.is_empty(), "need at least one candidate");
    let mut alphas = Vec::with_capacity(candidate_images.len());
    for (k, image) in candidate_images.iter().enumerate() {
        if image.len() != residual_slice.len() {
            return Err(Error::dim(format!(
                "candidate image {k} has {} coords, residual slice has {}",
                image.len(),
                residual_slice.len()
            )));
        }
        match pearson(residual_slice, image) {
            Some(c) => alphas.push(c.abs()),
            None => {
                eprintln!("warning: candidate {k} has a zero-variance image; prior set to 0");
                alphas.push(0.0);
            }
        }
    }
    let sum: f64 = alphas.iter().sum();
    if sum == 0.0 {
        return Ok(alphas);
    }
    Ok(alphas
        .iter()
        .map(|a| (a * n_basis as f64 / sum).min(1.0))
        .collect())
}

/// Pearson correlation; `None` when either argument has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Unnormalized log-likelihood `-||R||^2 / sigma_l^2`.
pub fn log_likelihood(residual_norm: f64, sigma_l: f64) -> f64 {
    assert!(sigma_l > 0.0);
    -(residual_norm * residual_norm) / (sigma_l * sigma_l)
}

/// Dynamic-data log factor `-||D(u) - D_obs||^2 / sigma_d^2`; zero when no
/// observations are present.
pub fn log_data_factor(predicted: &[f64], observed: &[f64], sigma_d: f64) -> Result<f64> {
    assert!(sigma_d > 0.0);
    if predicted.len() != observed.len() {
        return Err(Error::dim(format!(
            "data factor: {} predictions vs {} observations",
            predicted.len(),
            observed.len()
        )));
    }
    let ss: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o) * (p - o))
        .sum();
    Ok(-ss / (sigma_d * sigma_d))
}

/// Gibbs conditional inclusion probability for one candidate bit.
///
/// Combines the prior odds `alpha/(1-alpha)` with the factor
/// `F = penalty * exp((r^2_without - r^2_with) / sigma_l^2)`, so that
/// `sigma_l^2 log F` is the difference of the two squared residual norms up
/// to the dependence penalty. Evaluated in log-odds to avoid overflow.
pub fn gibbs_flip_probability(
    prior_alpha: f64,
    residual_sq_without: f64,
    residual_sq_with: f64,
    gram_penalty: f64,
    sigma_l: f64,
) -> f64 {
    assert!(sigma_l > 0.0);
    assert!(residual_sq_without >= 0.0 && residual_sq_with >= 0.0);
    assert!(
        gram_penalty > 0.0 && gram_penalty <= 1.0 + 1e-12,
        "penalty must lie in (0, 1], got {gram_penalty}"
    );
    let a = prior_alpha.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let log_odds = (a / (1.0 - a)).ln()
        + gram_penalty.ln()
        + (residual_sq_without - residual_sq_with) / (sigma_l * sigma_l);
    sigmoid(log_odds)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Normalizes the columns and returns the product of the singular values of
/// their Gram matrix (the absolute determinant): one for orthonormal sets,
/// tending to zero as the last column becomes linearly dependent.
pub fn gram_penalty(active_columns: &[Vec<f64>], candidate: &[f64]) -> f64 {
    let cols: Vec<&[f64]> = active_columns
        .iter()
        .map(|c| c.as_slice())
        .chain(std::iter::once(candidate))
        .collect();
    let g = normalized_gram(&cols);
    let m = g.nrows();
    match g.singular_values() {
        Ok(sv) => sv.iter().take(m).product(),
        Err(_) => 0.0,
    }
}

fn normalized_gram(cols: &[&[f64]]) -> Mat<f64> {
    let m = cols.len();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| crate::linalg::norm2(c).max(1e-300))
        .collect();
    Mat::from_fn(m, m, |i, j| {
        crate::linalg::dot(cols[i], cols[j]) / (norms[i] * norms[j])
    })
}

/// The marginal dependence penalty for adding one candidate to an active
/// set: the ratio `det G(active + candidate) / det G(active)` of normalized
/// Gram determinants, computed as the Schur complement
/// `1 - g^T G_active^{-1} g`. Equals `gram_penalty` when the active columns
/// are orthonormal; lies in (0, 1].
pub fn gram_update_penalty(gram: &Mat<f64>, active: &[usize], candidate: usize) -> f64 {
    let m = active.len();
    if m == 0 {
        return 1.0;
    }
    let g_act = Mat::from_fn(m, m, |i, j| gram[(active[i], active[j])]);
    let g_vec: Vec<f64> = active.iter().map(|a| gram[(*a, candidate)]).collect();
    match g_act.llt(Side::Lower) {
        Ok(llt) => {
            let b = Mat::from_fn(m, 1, |i, _| g_vec[i]);
            let x = faer::linalg::solvers::Solve::solve(&llt, &b);
            let q: f64 = (0..m).map(|i| g_vec[i] * x[(i, 0)]).sum();
            (1.0 - q).clamp(1e-300, 1.0)
        }
        // active set numerically dependent already: adding anything is
        // maximally penalized
        Err(_) => 1e-300,
    }
}

/// Builds the full normalized Gram matrix of a column family (columns given
/// as dense vectors), used with [`gram_update_penalty`].
pub fn normalized_gram_matrix(columns: &[Vec<f64>]) -> Mat<f64> {
    let cols: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    normalized_gram(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_prior_matches_hand_evaluation() {
        // norms (3,4), global 5, budget 1
        let p = region_prior(&[3.0, 4.0], 5.0, 1).unwrap();
        assert!((p[0] - 3.0 / 7.0).abs() < 1e-12);
        assert!((p[1] - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn region_prior_saturates_under_full_budget() {
        let p = region_prior(&[2.0, 2.0, 2.0], 2.0 * 3.0f64.sqrt(), 3).unwrap();
        for v in p {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn region_prior_concentrates_on_dominant_region() {
        let p = region_prior(&[1e-9, 5.0, 1e-9], 5.0, 1).unwrap();
        assert!(p[1] > 0.999_999);
        assert!(p[0] < 1e-9);
    }

    #[test]
    fn region_prior_zero_everywhere() {
        let p = region_prior(&[0.0, 0.0], 0.0, 2).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn region_prior_normalization_before_clamping_sums_to_budget() {
        let norms = [1.0, 2.0, 3.0, 4.0];
        let global = (30.0f64).sqrt();
        let n_omega = 2;
        let alphas: Vec<f64> = norms.iter().map(|v| v / global).collect();
        let sum: f64 = alphas.iter().sum();
        let pre_clamp: Vec<f64> = alphas.iter().map(|a| a * n_omega as f64 / sum).collect();
        assert!((pre_clamp.iter().sum::<f64>() - n_omega as f64).abs() < 1e-12);
    }

    #[test]
    fn basis_prior_rewards_alignment() {
        let r = vec![1.0, 2.0, -1.0, 0.5];
        let aligned: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        let orthogonal = vec![1.0, -0.5, 0.0, 0.0];
        let p = basis_prior(&r, &[aligned, orthogonal], 1).unwrap();
        assert!(p[0] > p[1]);
        assert!(p[0] <= 1.0);
    }

    #[test]
    fn basis_prior_hand_normalization() {
        // correlations (0.8, 0.2) scaled to sum 1
        // craft images with those exact correlations via mixing
        let r = vec![1.0, -1.0, 1.0, -1.0];
        // image = c * r + sqrt(1-c^2) * z with z orthogonal to r, unit var
        let z = vec![1.0, 1.0, -1.0, -1.0];
        let mk = |c: f64| -> Vec<f64> {
            r.iter()
                .zip(&z)
                .map(|(a, b)| c * a + (1.0 - c * c).sqrt() * b)
                .collect()
        };
        let p = basis_prior(&r, &[mk(0.8), mk(0.2)], 1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-10, "{p:?}");
        assert!((p[1] - 0.2).abs() < 1e-10);
    }

    #[test]
    fn basis_prior_flags_zero_variance() {
        let r = vec![1.0, 2.0, 3.0];
        let flat = vec![4.0, 4.0, 4.0];
        let live = vec![1.0, 2.0, 3.1];
        let p = basis_prior(&r, &[flat, live], 1).unwrap();
        assert_eq!(p[0], 0.0);
        assert!(p[1] > 0.9);
    }

    #[test]
    fn priors_are_scale_invariant() {
        let norms = [0.3, 0.9, 0.1];
        let global = crate::linalg::norm2(&norms);
        let p1 = region_prior(&norms, global, 2).unwrap();
        let scaled: Vec<f64> = norms.iter().map(|v| v * 1e6).collect();
        let p2 = region_prior(&scaled, global * 1e6, 2).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = vec![1.0, -2.0, 0.5];
        let imgs = vec![vec![0.9, -1.8, 0.6], vec![0.5, 0.5, -1.0]];
        let q1 = basis_prior(&r, &imgs, 1).unwrap();
        let r_scaled: Vec<f64> = r.iter().map(|v| v * 777.0).collect();
        let q2 = basis_prior(&r_scaled, &imgs, 1).unwrap();
        for (a, b) in q1.iter().zip(&q2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_values() {
        assert_eq!(log_likelihood(0.0, 1e-3), 0.0);
        assert!((log_likelihood(1e-3, 1e-3) + 1.0).abs() < 1e-12);
        // paper scale: sigma_l = 1e-3, residual 2e-3 -> -4
        assert!((log_likelihood(2e-3, 1e-3) + 4.0).abs() < 1e-10);
    }

    #[test]
    fn log_data_factor_values() {
        assert_eq!(log_data_factor(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), 0.0);
        assert!((log_data_factor(&[1.0], &[2.0], 1.0).unwrap() + 1.0).abs() < 1e-12);
        // residuals (1,2), sigma_d = 1 -> -5
        assert!((log_data_factor(&[1.0, 2.0], &[0.0, 0.0], 1.0).unwrap() + 5.0).abs() < 1e-12);
        assert!(log_data_factor(&[1.0], &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn flip_probability_neutral_evidence() {
        let p = gibbs_flip_probability(0.5, 1.0, 1.0, 1.0, 1e-2);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flip_probability_hand_case() {
        // residual drop of sigma^2 ln 2 doubles the odds: alpha 0.5 -> 2/3
        let sigma: f64 = 1e-2;
        let drop = sigma * sigma * 2.0f64.ln();
        let p = gibbs_flip_probability(0.5, 1.0 + drop, 1.0, 1.0, sigma);
        assert!((p - 2.0 / 3.0).abs() < 1e-10, "{p}");
    }

    #[test]
    fn flip_probability_saturates_and_stays_finite() {
        let p = gibbs_flip_probability(0.5, 1.0, 0.0, 1.0, 1e-6);
        assert!(p > 1.0 - 1e-12);
        let q = gibbs_flip_probability(0.5, 0.0, 1.0, 1.0, 1e-6);
        assert!(q < 1e-12);
        assert!(p.is_finite() && q.is_finite());
    }

    #[test]
    fn flip_probability_is_monotone() {
        let mut last = 0.0;
        for drop in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let p = gibbs_flip_probability(0.3, 1.0 + drop, 1.0, 1.0, 1.0);
            assert!(p >= last);
            last = p;
        }
        let mut last = 0.0;
        for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let p = gibbs_flip_probability(alpha, 1.0, 1.0, 1.0, 1.0);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn gram_penalty_orthonormal_is_one() {
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 0.0];
        let c = vec![0.0, 0.0, 2.0]; // normalization handles scale
        let p = gram_penalty(&[a, b], &c);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_penalty_duplicate_is_zero() {
        let a = vec![1.0, 2.0, 0.0];
        let p = gram_penalty(&[a.clone()], &a);
        assert!(p.abs() < 1e-12);
    }

    #[test]
    fn gram_penalty_sixty_degrees() {
        // two unit columns at 60 degrees: det = 1 - cos^2 = 0.75
        let a = vec![1.0, 0.0];
        let c = vec![0.5, 3.0f64.sqrt() / 2.0];
        let p = gram_penalty(&[a], &c);
        assert!((p - 0.75).abs() < 1e-12, "{p}");
    }

    #[test]
    fn update_penalty_matches_det_ratio() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let gram = normalized_gram_matrix(&cols);
        let active = [0usize, 1, 2];
        let cand = 4;
        let ratio = gram_update_penalty(&gram, &active, cand);
        // oracle: determinant ratio via gram_penalty on explicit columns
        let act: Vec<Vec<f64>> = active.iter().map(|i| cols[*i].clone()).collect();
        let det_with = gram_penalty(&act, &cols[cand]);
        let sub = normalized_gram_matrix(&act);
        let det_act: f64 = {
            let m = sub.nrows();
            sub.singular_values().unwrap().iter().take(m).product()
        };
        assert!((ratio - det_with / det_act).abs() < 1e-10, "{ratio}");
    }

    #[test]
    fn update_penalty_empty_active_set_is_one() {
        let cols = vec![vec![1.0, 0.0], vec![0.7, 0.7]];
        let gram = normalized_gram_matrix(&cols);
        assert_eq!(gram_update_penalty(&gram, &[], 1), 1.0);
    }
}
