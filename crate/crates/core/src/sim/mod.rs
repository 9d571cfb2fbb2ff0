//! Synthetic data generators and experiment drivers.

mod groups;
mod risk;

pub use groups::{
    f1_score, gen_group_images, gen_group_log, run_group_experiment, GroupExperimentConfig, GroupMetrics,
    GroupSample,
};
pub use groups::quarter_region;
pub use risk::{
    gen_hier_dataset, gen_hier_log, run_risk_experiment, Estimator, HierSample, RiskExperimentConfig, RiskRow,
    RiskTable,
};

use statrs::distribution::{Binomial, DiscreteCDF};

/// One-sided paired sign test of `a < b`: the probability of at least as many
/// pairs with `aᵢ < bᵢ` under a fair coin. Ties and NaN pairs are dropped.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> f64 {
    let (mut wins, mut trials) = (0u64, 0u64);
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
            trials += 1;
        } else if x > y {
            trials += 1;
        }
    }
    if wins == 0 {
        return 1.0;
    }
    let bin = Binomial::new(0.5, trials).expect("valid binomial");
    bin.sf(wins - 1)
}

/// Mean and standard error `sd/√m` of the finite entries.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let m = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}
