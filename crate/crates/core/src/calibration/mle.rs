//! Maximum-likelihood Dirichlet prior for a set of vote tallies.
//!
//! Fixed-point iteration on the Dirichlet-multinomial likelihood:
//!
//! ```text
//! αⱼ ← αⱼ · Σᵢ [ψ(yᵢⱼ + αⱼ) − ψ(αⱼ)] / Σᵢ [ψ(nᵢ + α₀) − ψ(α₀)]
//! ```
//!
//! Each update maximizes a lower bound on the likelihood, so the likelihood
//! never decreases. Sums run over count histograms in ascending count order,
//! which makes the result independent of instance order.

use std::collections::BTreeMap;

use crate::corpus::VoteCounts;
use crate::special::digamma;

use super::loss::dirichlet_multinomial_log_likelihood;
use super::{CalibrationError, DirichletParams};

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// Record the log-likelihood after every iteration.
    pub trace: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 10_000, min_alpha: 1e-6, max_alpha: 1e6, trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub alpha: DirichletParams,
    pub iterations: usize,
    /// Max absolute component change on the final iteration.
    pub residual: f64,
    pub log_likelihood: f64,
    pub warnings: Vec<String>,
    /// Log-likelihood of the initial point followed by every iterate, when traced.
    pub trace: Vec<f64>,
}

/// Σᵢ [ψ(y + a) − ψ(a)] over a histogram of y values.
fn digamma_gap(histogram: &BTreeMap<u64, usize>, a: f64) -> Result<f64, CalibrationError> {
    let base = digamma(a)?;
    let mut total = 0.0;
    for (&y, &freq) in histogram {
        if y > 0 {
            total += freq as f64 * (digamma(y as f64 + a)? - base);
        }
    }
    Ok(total)
}

pub fn fit_dirichlet_mle(data: &[VoteCounts], options: &MleOptions) -> Result<MleFit, CalibrationError> {
    if data.len() < 2 {
        return Err(CalibrationError::TooFewInstances { needed: 2, got: data.len() });
    }
    let labels = data[0].labels().to_vec();
    let k = labels.len();
    let mut per_class = vec![BTreeMap::<u64, usize>::new(); k];
    let mut totals = BTreeMap::<u64, usize>::new();
    for (i, votes) in data.iter().enumerate() {
        super::ensure_labels(&labels, votes.labels())?;
        let n = votes.total();
        if n == 0 {
            return Err(CalibrationError::NoVotes(i));
        }
        *totals.entry(n).or_default() += 1;
        for (hist, &y) in per_class.iter_mut().zip(votes.counts()) {
            *hist.entry(y).or_default() += 1;
        }
    }

    let mut warnings = Vec::new();
    for (label, hist) in labels.iter().zip(&per_class) {
        if hist.keys().all(|&y| y == 0) {
            warnings.push(format!(
                "class {label} received no votes in any instance; its alpha is held at the {} clamp",
                options.min_alpha
            ));
        }
    }

    let mut alpha = vec![1.0; k];
    let mut trace = Vec::new();
    let likelihood = |alpha: &[f64]| {
        DirichletParams::new(labels.clone(), alpha.to_vec())
            .and_then(|p| dirichlet_multinomial_log_likelihood(data, &p))
    };
    if options.trace {
        trace.push(likelihood(&alpha)?);
    }

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let alpha0: f64 = alpha.iter().sum();
        let denominator = digamma_gap(&totals, alpha0)?;
        let mut next = Vec::with_capacity(k);
        for (hist, &a) in per_class.iter().zip(&alpha) {
            let updated = a * digamma_gap(hist, a)? / denominator;
            next.push(updated.clamp(options.min_alpha, options.max_alpha));
        }
        residual = next.iter().zip(&alpha).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        alpha = next;
        if options.trace {
            trace.push(likelihood(&alpha)?);
        }
        if residual < options.tolerance {
            let log_likelihood = likelihood(&alpha)?;
            for (label, &a) in labels.iter().zip(&alpha) {
                if a >= options.max_alpha {
                    warnings.push(format!("alpha for class {label} reached the {} clamp", options.max_alpha));
                }
            }
            return Ok(MleFit {
                alpha: DirichletParams::new(labels, alpha)?,
                iterations,
                residual,
                log_likelihood,
                warnings,
                trace,
            });
        }
    }
    Err(CalibrationError::NonConvergence { iterations, residual, last: alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution, Gamma};

    fn votes(y: &[u64]) -> VoteCounts {
        VoteCounts::with_labels(&["a", "b"], y.to_vec()).unwrap()
    }

    fn sample(alpha: (f64, f64), n: u64, count: usize, seed: u64) -> Vec<VoteCounts> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g1 = Gamma::new(alpha.0, 1.0).unwrap();
        let g2 = Gamma::new(alpha.1, 1.0).unwrap();
        (0..count)
            .map(|_| {
                let x = g1.sample(&mut rng);
                let y = g2.sample(&mut rng);
                let p = x / (x + y);
                let k = Binomial::new(n, p).unwrap().sample(&mut rng);
                votes(&[k, n - k])
            })
            .collect()
    }

    #[test]
    fn symmetric_data_gives_symmetric_fit() {
        let fit = fit_dirichlet_mle(&[votes(&[1, 0]), votes(&[0, 1])], &MleOptions::default()).unwrap();
        let a = fit.alpha.alpha();
        assert!((a[0] - a[1]).abs() < 1e-8);
        assert!(a[0] > 0.0);
    }

    #[test]
    fn recovers_generating_parameters() {
        let data = sample((2.0, 5.0), 50, 2_000, 7);
        let options = MleOptions { trace: true, ..MleOptions::default() };
        let fit = fit_dirichlet_mle(&data, &options).unwrap();
        let a = fit.alpha.alpha();
        assert!((a[0] - 2.0).abs() / 2.0 < 0.10, "{a:?}");
        assert!((a[1] - 5.0).abs() / 5.0 < 0.10, "{a:?}");
        for w in fit.trace.windows(2) {
            // Summing thousands of log-beta terms carries rounding noise
            // proportional to the total's magnitude.
            let tol = 1e-10_f64.max(1e-13 * w[0].abs());
            assert!(w[1] >= w[0] - tol, "likelihood decreased: {} -> {}", w[0], w[1]);
        }
        // Coarse grid around the fit: no grid point beats the fixed point.
        let mut best = f64::NEG_INFINITY;
        let mut best_at = (0.0, 0.0);
        for i in 0..=40 {
            for j in 0..=40 {
                let cand = (a[0] * (0.9 + 0.005 * i as f64), a[1] * (0.9 + 0.005 * j as f64));
                let p = DirichletParams::new(vec!["a".into(), "b".into()], vec![cand.0, cand.1]).unwrap();
                let ll = dirichlet_multinomial_log_likelihood(&data, &p).unwrap();
                if ll > best {
                    best = ll;
                    best_at = cand;
                }
            }
        }
        assert!(fit.log_likelihood >= best - 1e-8);
        assert!((best_at.0 - a[0]).abs() <= 0.005 * a[0] + 1e-12);
        assert!((best_at.1 - a[1]).abs() <= 0.005 * a[1] + 1e-12);
    }

    #[test]
    fn unvoted_class_hits_the_clamp() {
        let three = |y: [u64; 3]| VoteCounts::with_labels(&["a", "b", "c"], y.to_vec()).unwrap();
        let data = vec![three([3, 1, 0]), three([1, 2, 0]), three([2, 2, 0]), three([0, 4, 0]), three([4, 0, 0])];
        let fit = fit_dirichlet_mle(&data, &MleOptions::default()).unwrap();
        assert_eq!(fit.alpha.alpha()[2], 1e-6);
        assert!(fit.warnings.iter().any(|w| w.contains("class c")));
    }

    #[test]
    fn single_voted_class_has_no_finite_optimum() {
        // With every vote on one label the likelihood keeps rising as that
        // label's alpha grows, so the iteration never settles.
        let data = vec![votes(&[3, 0]), votes(&[1, 0]), votes(&[2, 0])];
        let err = fit_dirichlet_mle(&data, &MleOptions::default()).unwrap_err();
        assert!(matches!(err, CalibrationError::NonConvergence { iterations: 10_000, .. }));
    }

    #[test]
    fn order_and_label_invariance() {
        let data = sample((1.5, 3.0), 20, 200, 11);
        let fit = fit_dirichlet_mle(&data, &MleOptions::default()).unwrap();
        let mut reversed = data.clone();
        reversed.reverse();
        let fit_rev = fit_dirichlet_mle(&reversed, &MleOptions::default()).unwrap();
        assert_eq!(fit.alpha.alpha(), fit_rev.alpha.alpha());
        let swapped: Vec<_> = data.iter().map(|v| v.permuted(&[1, 0])).collect();
        let fit_swap = fit_dirichlet_mle(&swapped, &MleOptions::default()).unwrap();
        assert!((fit_swap.alpha.alpha()[0] - fit.alpha.alpha()[1]).abs() < 1e-8);
        assert!((fit_swap.alpha.alpha()[1] - fit.alpha.alpha()[0]).abs() < 1e-8);
    }

    #[test]
    fn iterates_stay_in_clamp_and_likelihood_is_monotone() {
        let datasets = [
            sample((0.3, 0.7), 5, 100, 1),
            sample((10.0, 10.0), 30, 100, 2),
            vec![votes(&[5, 0]), votes(&[0, 5]), votes(&[5, 5])],
        ];
        for data in &datasets {
            let options = MleOptions { trace: true, ..MleOptions::default() };
            let fit = fit_dirichlet_mle(data, &options).unwrap();
            assert!(fit.alpha.alpha().iter().all(|&a| (1e-6..=1e6).contains(&a)));
            for w in fit.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10);
            }
        }
    }

    #[test]
    fn underdispersed_data_drifts_to_the_upper_clamp() {
        // Tallies tighter than binomial put the MLE at α → ∞.
        let data = vec![votes(&[1, 1]), votes(&[2, 2]), votes(&[3, 3])];
        match fit_dirichlet_mle(&data, &MleOptions::default()) {
            Ok(fit) => assert!(fit.alpha.alpha().iter().all(|&a| a > 1e3)),
            Err(CalibrationError::NonConvergence { last, .. }) => assert!(last.iter().all(|&a| a > 1e3), "{last:?}"),
            Err(other) => panic!("{other}"),
        }
    }

    #[test]
    fn reports_non_convergence() {
        let data = sample((2.0, 5.0), 50, 100, 3);
        let options = MleOptions { max_iterations: 3, ..MleOptions::default() };
        match fit_dirichlet_mle(&data, &options) {
            Err(CalibrationError::NonConvergence { iterations, residual, last }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-10);
                assert_eq!(last.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn precondition_errors() {
        assert!(matches!(
            fit_dirichlet_mle(&[votes(&[1, 0])], &MleOptions::default()),
            Err(CalibrationError::TooFewInstances { .. })
        ));
        assert!(matches!(
            fit_dirichlet_mle(&[votes(&[1, 0]), votes(&[0, 0])], &MleOptions::default()),
            Err(CalibrationError::NoVotes(1))
        ));
    }
}
