//! Experiment driver: simulates n users and an aggregator over repeated
//! epochs, runs the three mechanisms through the aggregation scheme,
//! measures empirical error and produces the benchmark sweep tables.
//!
//! Error statistics use a fast path (the aggregate error is identically the
//! sum of the noise shares, so encryption can be skipped); a handful of
//! repeats per sweep point additionally run the full encrypt/decrypt
//! pipeline and assert the two paths agree exactly.

use crate::dist::{DistError, NoiseSpec, RngStream};
use crate::mechanisms::{
    accuracy_alpha, per_user_noise_spec, MechanismError, MechanismKind, MechanismParams,
};
use crate::psa::{
    choose_modulus, psa_decrypt, psa_encrypt, setup, Ciphertext, EpochBuffer, KeyMaterial,
    PsaError, PsaParams, TimeTagSet,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("fast path and full encryption disagree (fast {fast}, crypto {crypto})")]
    PathMismatch { fast: i64, crypto: i64 },
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Psa(#[from] PsaError),
}

/// Which parameter the experiment sweeps, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepSpec {
    #[default]
    None,
    Delta(Vec<f64>),
    Gamma(Vec<f64>),
}

/// How per-user plaintexts are produced. Error statistics are
/// data-independent for additive noise, so this only matters for the
/// full-crypto path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataGenerator {
    #[default]
    Zeros,
    UniformInRange {
        m: i64,
    },
    Fixed(Vec<i64>),
}

impl DataGenerator {
    fn generate<R: Rng>(&self, n: u64, rng: &mut R) -> Result<Vec<i64>, HarnessError> {
        match self {
            DataGenerator::Zeros => Ok(vec![0; n as usize]),
            DataGenerator::UniformInRange { m } => {
                if *m < 1 {
                    return Err(HarnessError::InvalidConfig("range m must be >= 1".into()));
                }
                Ok((0..n).map(|_| rng.random_range(-m..=*m)).collect())
            }
            DataGenerator::Fixed(v) => {
                if v.len() != n as usize {
                    return Err(HarnessError::InvalidConfig(format!(
                        "fixed data has {} entries, expected {n}",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }

    fn magnitude_bound(&self, default_m: i64) -> i64 {
        match self {
            DataGenerator::Zeros => default_m,
            DataGenerator::UniformInRange { m } => *m,
            DataGenerator::Fixed(v) => v.iter().map(|x| x.abs()).max().unwrap_or(0).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mechanism: MechanismKind,
    pub params: MechanismParams,
    pub repeats: u64,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub data: DataGenerator,
    pub seed: u64,
    /// run a few repeats per point through full encryption and assert the
    /// aggregate matches the fast path
    #[serde(default)]
    pub full_crypto: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repeats < 1 {
            return Err(HarnessError::InvalidConfig("repeats must be >= 1".into()));
        }
        match &self.sweep {
            SweepSpec::Delta(v) | SweepSpec::Gamma(v) if v.is_empty() => {
                return Err(HarnessError::InvalidConfig(
                    "sweep list must be non-empty".into(),
                ));
            }
            _ => {}
        }
        self.params.validate()?;
        Ok(())
    }
}

/// Statistics for one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPointReport {
    /// the swept delta or gamma; None for an unswept run
    pub sweep_value: Option<f64>,
    pub mean_abs_error: f64,
    pub std_error: f64,
    /// empirical frequency of |error| > alpha
    pub tail_frequency_at_alpha: f64,
    pub alpha: f64,
    pub repeats: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mechanism: MechanismKind,
    pub points: Vec<SweepPointReport>,
}

fn sweep_points(config: &ExperimentConfig) -> Vec<(Option<f64>, MechanismParams)> {
    match &config.sweep {
        SweepSpec::None => vec![(None, config.params)],
        SweepSpec::Delta(ds) => ds
            .iter()
            .map(|&d| {
                let mut p = config.params;
                p.delta = d;
                (Some(d), p)
            })
            .collect(),
        SweepSpec::Gamma(gs) => gs
            .iter()
            .map(|&g| {
                let mut p = config.params;
                p.gamma = g;
                (Some(g), p)
            })
            .collect(),
    }
}

/// Sum of n noise shares drawn from spec: the exact aggregate error of one
/// epoch, without touching the cipher path.
fn draw_aggregate_error<R: Rng>(
    spec: &NoiseSpec,
    n: u64,
    rng: &mut R,
) -> Result<i64, DistError> {
    let mut total = 0i64;
    for _ in 0..n {
        total += spec.sample(rng)?;
    }
    Ok(total)
}

/// Run the repeats of one sweep point across worker threads; the returned
/// errors are indexed by repeat, so the merge is order-independent.
fn run_point_errors(
    spec: &NoiseSpec,
    n: u64,
    repeats: u64,
    seed: u64,
    stream_base: u64,
) -> Result<Vec<i64>, HarnessError> {
    let mut errors = vec![0i64; repeats as usize];
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(repeats as usize)
        .max(1);
    let chunk = repeats.div_ceil(workers as u64) as usize;
    let failure = std::sync::Mutex::new(None::<DistError>);
    std::thread::scope(|scope| {
        for (w, slot) in errors.chunks_mut(chunk).enumerate() {
            let failure = &failure;
            let first = w * chunk;
            scope.spawn(move || {
                for (off, e) in slot.iter_mut().enumerate() {
                    let r = (first + off) as u64;
                    let mut rng = RngStream::new(seed, stream_base + r).rng();
                    match draw_aggregate_error(spec, n, &mut rng) {
                        Ok(v) => *e = v,
                        Err(err) => {
                            *failure.lock().unwrap() = Some(err);
                            return;
                        }
                    }
                }
            });
        }
    });
    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err.into());
    }
    Ok(errors)
}

/// PSA instance sized for one experiment point: modulus covers the data plus
/// twelve standard deviations of the total noise.
fn psa_instance_for(
    spec: &NoiseSpec,
    params: &MechanismParams,
    m: i64,
) -> Result<PsaParams, HarnessError> {
    let total_variance = params.n_users as f64 * spec.variance();
    let q = choose_modulus(m, params.n_users, total_variance, 12.0)?;
    Ok(PsaParams {
        kappa: 8,
        lambda: 1,
        q,
        n: params.n_users,
        m,
        gamma: params.gamma,
        slack_s: 1,
        noise: *spec,
    })
}

/// Run one epoch through the real pipeline with explicit noise shares and
/// compare against the fast-path error.
fn assert_paths_agree(
    psa: &PsaParams,
    keys: &KeyMaterial,
    tags: &TimeTagSet,
    data: &[i64],
    noise: &[i64],
) -> Result<(), HarnessError> {
    let outcome = run_epoch_with_noise(psa, keys, tags, data, noise, 0)?;
    let fast = noise.iter().sum::<i64>();
    let crypto = outcome.decrypted - outcome.true_sum;
    if fast != crypto {
        return Err(HarnessError::PathMismatch { fast, crypto });
    }
    Ok(())
}

pub fn run_accuracy_experiment(config: &ExperimentConfig) -> Result<ErrorReport, HarnessError> {
    config.validate()?;
    let mut points = Vec::new();
    for (pi, (sweep_value, params)) in sweep_points(config).into_iter().enumerate() {
        let spec = per_user_noise_spec(config.mechanism, &params)?;
        let alpha = accuracy_alpha(&params)?;
        let stream_base = pi as u64 * config.repeats;
        let errors = run_point_errors(
            &spec,
            params.n_users,
            config.repeats,
            config.seed,
            stream_base,
        )?;
        if config.full_crypto {
            let m = config.data.magnitude_bound(1);
            let psa = psa_instance_for(&spec, &params, m)?;
            for r in 0..config.repeats.min(2) {
                // replay the exact same stream the fast path consumed
                let mut rng = RngStream::new(config.seed, stream_base + r).rng();
                let noise: Vec<i64> = (0..params.n_users)
                    .map(|_| spec.sample(&mut rng))
                    .collect::<Result<_, _>>()?;
                debug_assert_eq!(noise.iter().sum::<i64>(), errors[r as usize]);
                let mut setup_rng = RngStream::new(config.seed, u64::MAX - r).rng();
                let (keys, tags) = setup(&psa, &mut setup_rng)?;
                let data = config.data.generate(params.n_users, &mut setup_rng)?;
                assert_paths_agree(&psa, &keys, &tags, &data, &noise)?;
            }
        }
        let n_rep = errors.len() as f64;
        let mean_abs = errors.iter().map(|e| e.abs() as f64).sum::<f64>() / n_rep;
        let mean = errors.iter().map(|&e| e as f64).sum::<f64>() / n_rep;
        let var = errors
            .iter()
            .map(|&e| (e as f64 - mean) * (e as f64 - mean))
            .sum::<f64>()
            / n_rep;
        let tail = errors.iter().filter(|e| e.abs() as f64 > alpha).count() as f64 / n_rep;
        points.push(SweepPointReport {
            sweep_value,
            mean_abs_error: mean_abs,
            std_error: var.sqrt(),
            tail_frequency_at_alpha: tail,
            alpha,
            repeats: config.repeats,
        });
    }
    Ok(ErrorReport {
        mechanism: config.mechanism,
        points,
    })
}

/// Result of one full encrypted epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochOutcome {
    pub true_sum: i64,
    pub decrypted: i64,
    pub ciphers: Vec<Ciphertext>,
}

/// One epoch of the real pipeline with the noise shares given explicitly;
/// ciphertexts pass through the epoch buffer, so duplicates are rejected.
pub fn run_epoch_with_noise(
    params: &PsaParams,
    keys: &KeyMaterial,
    tags: &TimeTagSet,
    data: &[i64],
    noise: &[i64],
    epoch: u32,
) -> Result<EpochOutcome, HarnessError> {
    if data.len() != params.n as usize || noise.len() != params.n as usize {
        return Err(HarnessError::InvalidConfig(format!(
            "data/noise length must equal n = {}",
            params.n
        )));
    }
    let tag = &tags.tags[epoch as usize % tags.tags.len()];
    let mut buffer = EpochBuffer::new(epoch, params.n);
    for (i, (&x, &e)) in data.iter().zip(noise).enumerate() {
        let c = psa_encrypt(&keys.shares[i], tag, x, params.m, e, i as u32, epoch)?;
        buffer.submit(c)?;
    }
    let decrypted = psa_decrypt(&keys.aggregator_key, tag, buffer.ciphers(), params.n)?;
    Ok(EpochOutcome {
        true_sum: data.iter().sum(),
        decrypted,
        ciphers: buffer.ciphers().to_vec(),
    })
}

/// Full single-epoch pipeline: fresh keys, per-user noise from the params'
/// spec (zero for users flagged compromised), encrypt, aggregate, decrypt.
pub fn end_to_end_epoch<R: Rng>(
    params: &PsaParams,
    data: &[i64],
    compromised: &[bool],
    rng: &mut R,
) -> Result<EpochOutcome, HarnessError> {
    if !compromised.is_empty() && compromised.len() != params.n as usize {
        return Err(HarnessError::InvalidConfig(
            "compromised mask length must equal n".into(),
        ));
    }
    let (keys, tags) = setup(params, rng)?;
    let noise: Vec<i64> = (0..params.n as usize)
        .map(|i| {
            if compromised.get(i).copied().unwrap_or(false) {
                Ok(0)
            } else {
                params.noise.sample(rng)
            }
        })
        .collect::<Result<_, DistError>>()?;
    run_epoch_with_noise(params, &keys, &tags, data, &noise, 0)
}

/// One row of a benchmark table: mean |error| of each mechanism at a sweep
/// value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub sweep_value: f64,
    pub geometric: f64,
    pub skellam: f64,
    pub binomial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Output {
    /// delta swept over 1e-1 .. 1e-8 at gamma = 1
    pub delta_rows: Vec<Figure1Row>,
    /// gamma swept over 0.1 .. 1.0 at delta = 1e-5
    pub gamma_rows: Vec<Figure1Row>,
}

fn rows_to_csv(label: &str, rows: &[Figure1Row]) -> String {
    let mut out = format!("{label},geometric,skellam,binomial\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.sweep_value, r.geometric, r.skellam, r.binomial
        ));
    }
    out
}

impl Figure1Output {
    pub fn delta_csv(&self) -> String {
        rows_to_csv("delta", &self.delta_rows)
    }

    pub fn gamma_csv(&self) -> String {
        rows_to_csv("gamma", &self.gamma_rows)
    }
}

pub const FIGURE1_EPSILON: f64 = 0.1;
pub const FIGURE1_N: u64 = 1000;
pub const FIGURE1_REPEATS: u64 = 1000;

fn figure1_params(n: u64) -> MechanismParams {
    MechanismParams {
        epsilon: FIGURE1_EPSILON,
        delta: 1e-5,
        beta: 0.05,
        gamma: 1.0,
        sensitivity: 1,
        n_users: n,
        lambda_queries: 1,
    }
}

fn figure1_sweep(
    sweep: SweepSpec,
    n: u64,
    repeats: u64,
    seed: u64,
) -> Result<Vec<Figure1Row>, HarnessError> {
    let mechanisms = [
        MechanismKind::Geometric,
        MechanismKind::Skellam,
        MechanismKind::Binomial,
    ];
    let mut per_mech = Vec::new();
    for (mi, &mech) in mechanisms.iter().enumerate() {
        let config = ExperimentConfig {
            mechanism: mech,
            params: figure1_params(n),
            repeats,
            sweep: sweep.clone(),
            data: DataGenerator::Zeros,
            seed: seed.wrapping_add(mi as u64),
            full_crypto: false,
        };
        per_mech.push(run_accuracy_experiment(&config)?);
    }
    let n_points = per_mech[0].points.len();
    let mut rows = Vec::with_capacity(n_points);
    for i in 0..n_points {
        rows.push(Figure1Row {
            sweep_value: per_mech[0].points[i].sweep_value.expect("swept run"),
            geometric: per_mech[0].points[i].mean_abs_error,
            skellam: per_mech[1].points[i].mean_abs_error,
            binomial: per_mech[2].points[i].mean_abs_error,
        });
    }
    Ok(rows)
}

/// Reproduce the benchmark figure at the given scale: mean |error| of the
/// three mechanisms, left table over delta at gamma = 1, right table over
/// gamma at delta = 1e-5.
pub fn reproduce_figure1_scaled(
    n: u64,
    repeats: u64,
    seed: u64,
) -> Result<Figure1Output, HarnessError> {
    let deltas: Vec<f64> = (1..=8).map(|k| 10f64.powi(-k)).collect();
    let gammas: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    Ok(Figure1Output {
        delta_rows: figure1_sweep(SweepSpec::Delta(deltas), n, repeats, seed)?,
        gamma_rows: figure1_sweep(SweepSpec::Gamma(gammas), n, repeats, seed.wrapping_add(1000))?,
    })
}

/// The benchmark at full scale: epsilon = 0.1, S = 1, n = 1000, 1000 repeats.
pub fn reproduce_figure1(seed: u64) -> Result<Figure1Output, HarnessError> {
    reproduce_figure1_scaled(FIGURE1_N, FIGURE1_REPEATS, seed)
}
