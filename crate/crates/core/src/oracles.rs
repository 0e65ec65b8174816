//! Sampling experiments over adjacent databases: the direct experiment
//! (fair bit, fresh per-user Skellam noise) and its resampling twin (sum
//! first, then a biased bit and noise drawn conditionally on the sum).
//! The two produce identical joint distributions; the bias posterior is
//! sandwiched by the DP guarantee of the aggregate noise.

use crate::dist::{
    ln_skellam_pmf, sample_skellam, DistError, SkellamParams, SkellamPmfTable,
};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid adjacent pair: {0}")]
    InvalidPair(String),
    #[error("sum {0} is numerically outside the support of the aggregate noise")]
    OutOfSupport(i64),
    #[error("conditional sampler exhausted its truncated support")]
    SupportExhausted,
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Two databases of equal length differing in exactly one coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacentPair {
    d0: Vec<i64>,
    d1: Vec<i64>,
}

impl AdjacentPair {
    pub fn new(d0: Vec<i64>, d1: Vec<i64>) -> Result<Self, OracleError> {
        if d0.is_empty() || d0.len() != d1.len() {
            return Err(OracleError::InvalidPair(
                "databases must be non-empty and of equal length".into(),
            ));
        }
        let differing = d0.iter().zip(&d1).filter(|(a, b)| a != b).count();
        if differing != 1 {
            return Err(OracleError::InvalidPair(format!(
                "databases differ in {differing} coordinates, expected exactly 1"
            )));
        }
        Ok(AdjacentPair { d0, d1 })
    }

    pub fn n(&self) -> usize {
        self.d0.len()
    }

    pub fn d(&self, b: u8) -> &[i64] {
        if b == 0 {
            &self.d0
        } else {
            &self.d1
        }
    }

    pub fn sum(&self, b: u8) -> i64 {
        self.d(b).iter().sum()
    }

    /// |d0[i] - d1[i]| at the differing coordinate.
    pub fn sensitivity(&self) -> i64 {
        self.d0
            .iter()
            .zip(&self.d1)
            .map(|(a, b)| (a - b).abs())
            .max()
            .expect("non-empty")
    }
}

/// Output of either experiment: the chosen bit, the noisy database and its sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentOutput {
    pub b: u8,
    pub x: Vec<i64>,
    pub s: i64,
}

/// Direct experiment: fair bit b, x = D_b + fresh Sk(mu_user) noise per
/// coordinate, s the sum of x.
pub fn run_exp1<R: Rng>(
    pair: &AdjacentPair,
    mu_user: f64,
    rng: &mut R,
) -> Result<ExperimentOutput, OracleError> {
    let params = SkellamParams::new(mu_user)?;
    let b = u8::from(rng.random::<bool>());
    let x: Vec<i64> = pair
        .d(b)
        .iter()
        .map(|&d| Ok(d + sample_skellam(params, rng)?))
        .collect::<Result<_, DistError>>()?;
    let s = x.iter().sum();
    Ok(ExperimentOutput { b, x, s })
}

// ln pmf below this is treated as numerically zero mass.
const LN_UNDERFLOW: f64 = -745.0;

fn posterior_from_ln(ln0: f64, ln1: f64, s: i64) -> Result<f64, OracleError> {
    if ln0 < LN_UNDERFLOW && ln1 < LN_UNDERFLOW {
        return Err(OracleError::OutOfSupport(s));
    }
    // p = p0 / (p0 + p1) computed through the log-ratio
    Ok(1.0 / (1.0 + (ln1 - ln0).exp()))
}

/// Posterior probability of b = 0 given the released sum s, when the
/// aggregate noise is Sk(n * mu_user).
pub fn bias_p(s: i64, pair: &AdjacentPair, mu_user: f64) -> Result<f64, OracleError> {
    let agg = SkellamParams::new(pair.n() as f64 * mu_user)?;
    let ln0 = ln_skellam_pmf(s - pair.sum(0), agg)?;
    let ln1 = ln_skellam_pmf(s - pair.sum(1), agg)?;
    posterior_from_ln(ln0, ln1, s)
}

/// Sample the noise vector conditioned on its total y, coordinate by
/// coordinate: e_i follows the law proportional to
/// psi_{(n-i) mu}(r - e) * psi_mu(e) with r the remaining total, and the
/// last coordinate is fixed by the constraint.
pub fn conditional_noise_sample<R: Rng>(
    s: i64,
    b: u8,
    pair: &AdjacentPair,
    mu_user: f64,
    rng: &mut R,
) -> Result<Vec<i64>, OracleError> {
    Exp2Runner::new(pair.clone(), mu_user)?.conditional_noise(s - pair.sum(b), rng)
}

/// Resampling experiment with the per-(pair, mu_user) pmf tables cached, so
/// bulk runs avoid recomputing Bessel series.
pub struct Exp2Runner {
    pair: AdjacentPair,
    mu_user: f64,
    single: SkellamParams,
    /// levels[l-1] tabulates Sk(l * mu_user)
    levels: Vec<SkellamPmfTable>,
}

impl Exp2Runner {
    pub fn new(pair: AdjacentPair, mu_user: f64) -> Result<Self, OracleError> {
        let single = SkellamParams::new(mu_user)?;
        let n = pair.n() as f64;
        // wide enough for typical draws; out-of-range lookups fall back to
        // the direct series evaluation
        let width_single = (20.0 * mu_user.sqrt()).ceil() as i64;
        let width_agg = (20.0 * (n * mu_user).sqrt()).ceil() as i64;
        let half_width = 2 * width_agg + width_single + pair.sum(0).abs().max(pair.sum(1).abs());
        let levels = (1..=pair.n())
            .map(|l| {
                SkellamPmfTable::new(SkellamParams::new(l as f64 * mu_user)?, half_width)
            })
            .collect::<Result<_, DistError>>()?;
        Ok(Exp2Runner {
            pair,
            mu_user,
            single,
            levels,
        })
    }

    pub fn pair(&self) -> &AdjacentPair {
        &self.pair
    }

    /// ln psi_{level * mu_user}(k), from the table when in range.
    fn ln_pmf_level(&self, level: usize, k: i64) -> Result<f64, OracleError> {
        match self.levels[level - 1].ln_pmf(k) {
            Some(v) => Ok(v),
            None => Ok(ln_skellam_pmf(k, self.levels[level - 1].params())?),
        }
    }

    pub fn bias_p(&self, s: i64) -> Result<f64, OracleError> {
        let n = self.pair.n();
        let ln0 = self.ln_pmf_level(n, s - self.pair.sum(0))?;
        let ln1 = self.ln_pmf_level(n, s - self.pair.sum(1))?;
        posterior_from_ln(ln0, ln1, s)
    }

    pub fn conditional_noise<R: Rng>(
        &self,
        y: i64,
        rng: &mut R,
    ) -> Result<Vec<i64>, OracleError> {
        let n = self.pair.n();
        let mut e = Vec::with_capacity(n);
        let mut remaining = y;
        let width = (20.0 * self.mu_user.sqrt()).ceil() as i64;
        for i in 1..n {
            // truncated support for this coordinate
            let hw = width + remaining.abs();
            let mut ln_terms = Vec::with_capacity((2 * hw + 1) as usize);
            let mut max_ln = f64::NEG_INFINITY;
            for v in -hw..=hw {
                let ln_t = self.ln_pmf_level(n - i, remaining - v)?
                    + self.ln_pmf_level(1, v)?;
                if ln_t > max_ln {
                    max_ln = ln_t;
                }
                ln_terms.push(ln_t);
            }
            if !max_ln.is_finite() {
                return Err(OracleError::SupportExhausted);
            }
            let weights: Vec<f64> = ln_terms.iter().map(|&t| (t - max_ln).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut threshold = rng.random::<f64>() * total;
            let mut chosen = hw; // fall back to the last support point
            for (idx, w) in weights.iter().enumerate() {
                threshold -= w;
                if threshold <= 0.0 {
                    chosen = idx as i64 - hw;
                    break;
                }
            }
            e.push(chosen);
            remaining -= chosen;
        }
        e.push(remaining);
        Ok(e)
    }

    /// Full resampling run: draw s through the direct experiment's marginal
    /// (in a scope that keeps nothing but s), then the biased bit, then the
    /// conditional noise.
    pub fn run<R: Rng>(&self, rng: &mut R) -> Result<ExperimentOutput, OracleError> {
        let s = {
            let b_tmp = u8::from(rng.random::<bool>());
            let mut s = self.pair.sum(b_tmp);
            for _ in 0..self.pair.n() {
                s += sample_skellam(self.single, rng)?;
            }
            s
        };
        let p = self.bias_p(s)?;
        let b = u8::from(rng.random::<f64>() >= p);
        let e = self.conditional_noise(s - self.pair.sum(b), rng)?;
        let x: Vec<i64> = self.pair.d(b).iter().zip(&e).map(|(d, n)| d + n).collect();
        debug_assert_eq!(x.iter().sum::<i64>(), s);
        Ok(ExperimentOutput { b, x, s })
    }
}

/// One-shot resampling experiment; for bulk runs build an [`Exp2Runner`].
pub fn run_exp2<R: Rng>(
    pair: &AdjacentPair,
    mu_user: f64,
    rng: &mut R,
) -> Result<ExperimentOutput, OracleError> {
    Exp2Runner::new(pair.clone(), mu_user)?.run(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{skellam_pmf, RngStream};
    use crate::mechanisms::{calibrate_skellam_variance, MechanismParams};
    use std::collections::HashMap;

    #[test]
    fn pair_validation() {
        assert!(AdjacentPair::new(vec![0, 0], vec![1, 0]).is_ok());
        assert!(AdjacentPair::new(vec![0, 0], vec![1, 1]).is_err());
        assert!(AdjacentPair::new(vec![0, 0], vec![0, 0]).is_err());
        assert!(AdjacentPair::new(vec![0], vec![1, 0]).is_err());
        assert!(AdjacentPair::new(vec![], vec![]).is_err());
        let p = AdjacentPair::new(vec![0, 3], vec![2, 3]).unwrap();
        assert_eq!(p.sensitivity(), 2);
        assert_eq!(p.sum(0), 3);
        assert_eq!(p.sum(1), 5);
    }

    #[test]
    fn exp1_sum_consistency_and_mean() {
        let pair = AdjacentPair::new(vec![0], vec![1]).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let runs = 20_000;
        let mut total = 0i64;
        for _ in 0..runs {
            let out = run_exp1(&pair, 1.0, &mut rng).unwrap();
            assert_eq!(out.s, out.x.iter().sum::<i64>());
            total += out.s;
        }
        // mean of s is b/2 contribution 0.5; noise var 1 + bit var 0.25
        let mean = total as f64 / runs as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn exp1_noise_variance_matches() {
        let pair = AdjacentPair::new(vec![0, 0, 0], vec![1, 0, 0]).unwrap();
        let mu = 4.0;
        let mut rng = RngStream::new(12, 0).rng();
        let runs = 20_000usize;
        let mut sum = 0f64;
        let mut sumsq = 0f64;
        let mut count = 0usize;
        for _ in 0..runs {
            let out = run_exp1(&pair, mu, &mut rng).unwrap();
            for (x, d) in out.x.iter().zip(pair.d(out.b)) {
                let e = (x - d) as f64;
                sum += e;
                sumsq += e * e;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        // 5 sigma tolerance on the variance estimate
        assert!((var - mu).abs() < 0.3, "var {var}");
    }

    #[test]
    fn bias_symmetric_point_is_half() {
        // sums 0 and 2; s = 1 is equidistant so p = 1/2 by symmetry
        let pair = AdjacentPair::new(vec![0], vec![2]).unwrap();
        let p = bias_p(1, &pair, 4.0).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "p {p}");
    }

    #[test]
    fn bias_bounded_under_calibrated_mechanism() {
        let eps = 0.1f64;
        let params = MechanismParams {
            epsilon: eps,
            delta: 1e-5,
            beta: 0.05,
            gamma: 1.0,
            sensitivity: 1,
            n_users: 1000,
            lambda_queries: 1,
        };
        let mu = calibrate_skellam_variance(&params).unwrap();
        let n = 4usize;
        let mu_user = mu / n as f64;
        let pair = AdjacentPair::new(vec![0, 0, 0, 0], vec![1, 0, 0, 0]).unwrap();
        let lo = 1.0 / (1.0 + eps.exp());
        let hi = eps.exp() / (1.0 + eps.exp());
        assert!((lo - 0.4750208125).abs() < 1e-9);
        assert!((hi - 0.5249791875).abs() < 1e-9);
        let runner = Exp2Runner::new(pair.clone(), mu_user).unwrap();
        let mut rng = RngStream::new(13, 0).rng();
        let agg = SkellamParams::new(mu).unwrap();
        for _ in 0..2_000 {
            let b = u8::from(rng.random::<bool>());
            let s = pair.sum(b) + sample_skellam(agg, &mut rng).unwrap();
            let p = runner.bias_p(s).unwrap();
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12, "p {p} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn bias_tail_sweep_approaches_bound() {
        let eps = 0.1f64;
        let params = MechanismParams {
            epsilon: eps,
            delta: 1e-5,
            beta: 0.05,
            gamma: 1.0,
            sensitivity: 1,
            n_users: 1000,
            lambda_queries: 1,
        };
        let mu = calibrate_skellam_variance(&params).unwrap();
        let pair = AdjacentPair::new(vec![0], vec![1]).unwrap();
        let hi = eps.exp() / (1.0 + eps.exp());
        let mut max_p = 0.0f64;
        // s far below 0 favors d0 (its residual is smaller in magnitude);
        // stay inside the DP region |s| < mu*sinh(eps), beyond which the
        // ratio guarantee is absorbed by delta
        let s_max = (0.95 * mu * (eps).sinh()) as i64;
        for i in 0..=40 {
            let s = -(i * s_max) / 40;
            let p = bias_p(s, &pair, mu).unwrap();
            assert!(p <= hi + 1e-12, "p {p} beyond bound at s {s}");
            max_p = max_p.max(p);
        }
        assert!(max_p > 0.52, "sweep never approached the bound: {max_p}");
    }

    #[test]
    fn conditional_n1_is_deterministic() {
        let pair = AdjacentPair::new(vec![0], vec![1]).unwrap();
        let mut rng = RngStream::new(14, 0).rng();
        let e = conditional_noise_sample(7, 0, &pair, 4.0, &mut rng).unwrap();
        assert_eq!(e, vec![7]);
        let e = conditional_noise_sample(7, 1, &pair, 4.0, &mut rng).unwrap();
        assert_eq!(e, vec![6]);
    }

    #[test]
    fn conditional_sum_constraint_always_holds() {
        let pair = AdjacentPair::new(vec![0, 0, 0], vec![1, 0, 0]).unwrap();
        let runner = Exp2Runner::new(pair.clone(), 4.0).unwrap();
        let mut rng = RngStream::new(15, 0).rng();
        for y in [-9i64, -2, 0, 3, 11] {
            for _ in 0..200 {
                let e = runner.conditional_noise(y, &mut rng).unwrap();
                assert_eq!(e.len(), 3);
                assert_eq!(e.iter().sum::<i64>(), y);
            }
        }
    }

    #[test]
    fn conditional_first_coordinate_matches_brute_force() {
        // law of e1 given total y: psi_{2mu}(y - e) psi_mu(e), normalized
        let mu = 4.0;
        let y = 2i64;
        let single = SkellamParams::new(mu).unwrap();
        let rest = SkellamParams::new(2.0 * mu).unwrap();
        let mut brute: HashMap<i64, f64> = HashMap::new();
        let mut z = 0.0;
        for e1 in -50..=50i64 {
            let w = skellam_pmf(e1, single).unwrap() * skellam_pmf(y - e1, rest).unwrap();
            brute.insert(e1, w);
            z += w;
        }
        for v in brute.values_mut() {
            *v /= z;
        }
        let pair = AdjacentPair::new(vec![0, 0, 0], vec![1, 0, 0]).unwrap();
        let runner = Exp2Runner::new(pair, mu).unwrap();
        let mut rng = RngStream::new(16, 0).rng();
        let runs = 100_000usize;
        let mut counts: HashMap<i64, usize> = HashMap::new();
        for _ in 0..runs {
            let e = runner.conditional_noise(y, &mut rng).unwrap();
            *counts.entry(e[0]).or_default() += 1;
        }
        // total variation between empirical marginal and the brute-force law
        let mut tv = 0.0;
        for e1 in -50..=50i64 {
            let emp = counts.get(&e1).copied().unwrap_or(0) as f64 / runs as f64;
            tv += (emp - brute[&e1]).abs();
        }
        tv /= 2.0;
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn conditional_pmf_normalizes() {
        // the truncated, exponentiated law the sampler walks must carry
        // total mass 1 against the closed-form aggregate pmf
        let mu = 4.0;
        let y = 3i64;
        let single = SkellamParams::new(mu).unwrap();
        let rest = SkellamParams::new(2.0 * mu).unwrap();
        let agg = SkellamParams::new(3.0 * mu).unwrap();
        let hw = (20.0 * mu.sqrt()).ceil() as i64 + y.abs();
        let mut total = 0.0;
        for e1 in -hw..=hw {
            total += skellam_pmf(e1, single).unwrap() * skellam_pmf(y - e1, rest).unwrap();
        }
        let ratio = total / skellam_pmf(y, agg).unwrap();
        assert!((ratio - 1.0).abs() < 1e-8, "ratio {ratio}");
    }

    #[test]
    fn exp2_sum_consistency_and_fair_marginal() {
        let pair = AdjacentPair::new(vec![0, 0, 0], vec![1, 0, 0]).unwrap();
        let runner = Exp2Runner::new(pair, 4.0).unwrap();
        let mut rng = RngStream::new(17, 0).rng();
        let runs = 20_000usize;
        let mut ones = 0usize;
        for _ in 0..runs {
            let out = runner.run(&mut rng).unwrap();
            assert_eq!(out.s, out.x.iter().sum::<i64>());
            ones += out.b as usize;
        }
        let mean = ones as f64 / runs as f64;
        // fair within 5 sigma of a Bernoulli(1/2) average
        let tol = 5.0 * 0.5 / (runs as f64).sqrt();
        assert!((mean - 0.5).abs() < tol, "mean b {mean}");
    }

    #[test]
    fn experiments_agree_in_distribution() {
        let pair = AdjacentPair::new(vec![0, 0, 0], vec![1, 0, 0]).unwrap();
        let mu = 4.0;
        let runner = Exp2Runner::new(pair.clone(), mu).unwrap();
        let runs = 20_000usize;
        let mut h1: HashMap<(u8, i64), usize> = HashMap::new();
        let mut h2: HashMap<(u8, i64), usize> = HashMap::new();
        let mut r1 = RngStream::new(18, 0).rng();
        let mut r2 = RngStream::new(18, 1).rng();
        let clamp = |s: i64| s.clamp(-60, 60);
        for _ in 0..runs {
            let o1 = run_exp1(&pair, mu, &mut r1).unwrap();
            *h1.entry((o1.b, clamp(o1.s))).or_default() += 1;
            let o2 = runner.run(&mut r2).unwrap();
            *h2.entry((o2.b, clamp(o2.s))).or_default() += 1;
        }
        let keys: std::collections::HashSet<_> = h1.keys().chain(h2.keys()).collect();
        let mut tv = 0.0;
        for k in keys {
            let a = h1.get(k).copied().unwrap_or(0) as f64 / runs as f64;
            let b = h2.get(k).copied().unwrap_or(0) as f64 / runs as f64;
            tv += (a - b).abs();
        }
        tv /= 2.0;
        assert!(tv < 0.025, "tv {tv}");
    }

    #[test]
    fn underflow_reported_out_of_support() {
        let pair = AdjacentPair::new(vec![0], vec![1]).unwrap();
        // s astronomically far in the tail of Sk(1)
        assert!(matches!(
            bias_p(1_000_000, &pair, 1.0),
            Err(OracleError::OutOfSupport(_))
        ));
    }
}
