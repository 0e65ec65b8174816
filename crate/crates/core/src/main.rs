//! Command-line front end: accuracy simulations, the benchmark figure,
//! calibration numbers, a file-based encrypt/aggregate pipeline, and the
//! TCP aggregator/client pair.

use clap::{Args, Parser, Subcommand, ValueEnum};
use skellam_psa::dist::{NoiseSpec, RngStream};
use skellam_psa::harness::{
    reproduce_figure1_scaled, run_accuracy_experiment, DataGenerator, ExperimentConfig, SweepSpec,
    FIGURE1_N, FIGURE1_REPEATS,
};
use skellam_psa::mechanisms::{
    accuracy_alpha, binomial_total_trials, calibrate_skellam_variance, per_user_noise_spec,
    skellam_variance_upper_bound, split_per_user, MechanismKind, MechanismParams,
};
use skellam_psa::netproto::{run_client, serve_aggregator};
use skellam_psa::psa::{choose_modulus, psa_decrypt, psa_encrypt, setup, Ciphertext, KeyFile,
    PsaParams};
use skellam_psa::zq::RingElement;
use std::error::Error;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "skellam-psa", version, about = "Private stream aggregation with discrete DP noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum MechanismArg {
    Skellam,
    Geometric,
    Binomial,
    None,
}

impl From<MechanismArg> for MechanismKind {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Skellam => MechanismKind::Skellam,
            MechanismArg::Geometric => MechanismKind::Geometric,
            MechanismArg::Binomial => MechanismKind::Binomial,
            MechanismArg::None => MechanismKind::None,
        }
    }
}

#[derive(Debug, Args)]
struct PrivacyArgs {
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// lower bound on the fraction of uncompromised users
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// query sensitivity S
    #[arg(long, default_value_t = 1)]
    sensitivity: u64,
    /// number of users
    #[arg(long, default_value_t = 1000)]
    n: u64,
    /// number of composed queries
    #[arg(long, default_value_t = 1)]
    lambda_queries: u64,
}

impl PrivacyArgs {
    fn params(&self) -> MechanismParams {
        MechanismParams {
            epsilon: self.epsilon,
            delta: self.delta,
            beta: self.beta,
            gamma: self.gamma,
            sensitivity: self.sensitivity,
            n_users: self.n,
            lambda_queries: self.lambda_queries,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an accuracy experiment and report error statistics as JSON
    Simulate {
        /// JSON experiment config; other flags are ignored when given
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MechanismArg::Skellam)]
        mechanism: MechanismArg,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[arg(long, default_value_t = 100)]
        repeats: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// verify the fast path against full encryption on a few repeats
        #[arg(long)]
        full_crypto: bool,
        /// write the JSON report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the mean-|error| benchmark tables (CSV)
    Figure1 {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// users per epoch (benchmark scale: 1000)
        #[arg(long, default_value_t = FIGURE1_N)]
        n: u64,
        /// repeats per sweep point (benchmark scale: 1000)
        #[arg(long, default_value_t = FIGURE1_REPEATS)]
        repeats: u64,
    },
    /// Print calibrated noise levels and the accuracy bound as JSON
    Calibrate {
        #[command(flatten)]
        privacy: PrivacyArgs,
    },
    /// Generate aggregator and per-user key files
    Keygen {
        #[arg(long, default_value_t = 16)]
        kappa: u64,
        #[arg(long)]
        n: u64,
        /// number of pre-distributed time tags (= supported epochs)
        #[arg(long, default_value_t = 16)]
        lambda: u64,
        /// plaintext magnitude bound
        #[arg(long, default_value_t = 1000)]
        m: i64,
        /// total noise variance the modulus must absorb
        #[arg(long, default_value_t = 0.0)]
        noise_variance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Encrypt one value with a share file; prints the cipher as JSON
    Encrypt {
        #[arg(long)]
        share: PathBuf,
        #[arg(long)]
        user: u32,
        #[arg(long, default_value_t = 0)]
        epoch: u32,
        #[arg(long)]
        value: i64,
        /// plaintext magnitude bound
        #[arg(long, default_value_t = 1000)]
        m: i64,
        /// explicit noise to add (0 = deterministic encryption)
        #[arg(long, default_value_t = 0)]
        noise_value: i64,
    },
    /// Decrypt an epoch from a file of JSON cipher lines
    Aggregate {
        /// aggregator key file
        #[arg(long)]
        keys: PathBuf,
        /// file with one JSON cipher per line, as printed by `encrypt`
        #[arg(long)]
        ciphers: PathBuf,
        #[arg(long)]
        n: u64,
    },
    /// Run the aggregator service
    Serve {
        #[arg(long)]
        bind: String,
        /// aggregator key file
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        epochs: u32,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        /// append per-epoch aggregates to this CSV file
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a user client against an aggregator
    Client {
        #[arg(long)]
        connect: String,
        /// user share file
        #[arg(long)]
        share: PathBuf,
        /// file with one integer plaintext per line
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = MechanismArg::None)]
        noise: MechanismArg,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[arg(long)]
        user: u32,
        /// plaintext magnitude bound
        #[arg(long, default_value_t = 1000)]
        m: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CipherRecord {
    user_id: u32,
    epoch: u32,
    value: u64,
}

fn write_output(path: Option<&PathBuf>, content: &str) -> Result<(), Box<dyn Error>> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run() -> Result<(), Box<dyn Error>> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            mechanism,
            privacy,
            repeats,
            seed,
            full_crypto,
            out,
        } => {
            let config = match config {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => ExperimentConfig {
                    mechanism: mechanism.into(),
                    params: privacy.params(),
                    repeats,
                    sweep: SweepSpec::None,
                    data: DataGenerator::Zeros,
                    seed,
                    full_crypto,
                },
            };
            let report = run_accuracy_experiment(&config)?;
            let json = serde_json::to_string_pretty(&report)?;
            write_output(out.as_ref(), &format!("{json}\n"))?;
        }
        Command::Figure1 {
            seed,
            out_dir,
            n,
            repeats,
        } => {
            let out = reproduce_figure1_scaled(n, repeats, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            let delta_path = out_dir.join("figure1_delta.csv");
            let gamma_path = out_dir.join("figure1_gamma.csv");
            std::fs::write(&delta_path, out.delta_csv())?;
            std::fs::write(&gamma_path, out.gamma_csv())?;
            eprintln!("wrote {} and {}", delta_path.display(), gamma_path.display());
        }
        Command::Calibrate { privacy } => {
            let p = privacy.params();
            let mu = calibrate_skellam_variance(&p)?;
            let split = split_per_user(MechanismKind::Skellam, mu, p.gamma, p.n_users)?;
            let report = serde_json::json!({
                "skellam_mu": mu,
                "skellam_mu_upper_bound": skellam_variance_upper_bound(&p)?,
                "skellam_mu_user": split.per_user_variance,
                "alpha": accuracy_alpha(&p)?,
                "binomial_total_trials": binomial_total_trials(&p)?,
                "geometric": per_user_noise_spec(MechanismKind::Geometric, &p)
                    .map(|s| match s {
                        NoiseSpec::Geometric { alpha, activation } =>
                            serde_json::json!({"alpha": alpha, "activation": activation}),
                        _ => serde_json::Value::Null,
                    })?,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Keygen {
            kappa,
            n,
            lambda,
            m,
            noise_variance,
            seed,
            out_dir,
        } => {
            let q = choose_modulus(m, n, noise_variance, 12.0)?;
            let params = PsaParams {
                kappa,
                lambda,
                q,
                n,
                m,
                gamma: 1.0,
                slack_s: 1,
                noise: NoiseSpec::None,
            };
            let mut rng = RngStream::new(seed, 0).rng();
            let (keys, tags) = setup(&params, &mut rng)?;
            std::fs::create_dir_all(&out_dir)?;
            let mk = |key| KeyFile {
                kappa,
                lambda,
                q,
                n,
                key,
                tags: tags.tags.clone(),
            };
            let agg_path = out_dir.join("aggregator.keys");
            mk(keys.aggregator_key.clone()).save(&agg_path)?;
            for (i, share) in keys.shares.iter().enumerate() {
                mk(share.clone()).save(&out_dir.join(format!("user_{i}.keys")))?;
            }
            eprintln!(
                "wrote {} and {n} user share files under {} (q = {})",
                agg_path.display(),
                out_dir.display(),
                q.value()
            );
        }
        Command::Encrypt {
            share,
            user,
            epoch,
            value,
            m,
            noise_value,
        } => {
            let share = KeyFile::load(&share)?;
            let tag = &share.tags[epoch as usize % share.tags.len()];
            let cipher = psa_encrypt(&share.key, tag, value, m, noise_value, user, epoch)?;
            let record = CipherRecord {
                user_id: user,
                epoch,
                value: cipher.value.residue(),
            };
            println!("{}", serde_json::to_string(&record)?);
        }
        Command::Aggregate { keys, ciphers, n } => {
            let agg = KeyFile::load(&keys)?;
            let mut parsed: Vec<Ciphertext> = Vec::new();
            for line in std::fs::read_to_string(&ciphers)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CipherRecord = serde_json::from_str(line)?;
                if rec.value >= agg.q.value() {
                    return Err(format!("cipher residue {} out of range", rec.value).into());
                }
                parsed.push(Ciphertext {
                    epoch: rec.epoch,
                    user: rec.user_id,
                    value: RingElement::new(rec.value as i64, agg.q),
                });
            }
            let epoch = parsed.first().map(|c| c.epoch).unwrap_or(0);
            let tag = &agg.tags[epoch as usize % agg.tags.len()];
            let sum = psa_decrypt(&agg.key, tag, &parsed, n)?;
            println!("{sum}");
        }
        Command::Serve {
            bind,
            keys,
            n,
            epochs,
            timeout_secs,
            log,
        } => {
            let key = KeyFile::load(&keys)?;
            let aggregates = serve_aggregator(
                &bind,
                &key,
                epochs,
                n,
                Duration::from_secs(timeout_secs),
                log.as_deref(),
            )?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "epoch,aggregate")?;
            for (epoch, sum) in aggregates {
                writeln!(stdout, "{epoch},{sum}")?;
            }
        }
        Command::Client {
            connect,
            share,
            data,
            noise,
            privacy,
            user,
            m,
            seed,
        } => {
            let share = KeyFile::load(&share)?;
            let values: Vec<i64> = std::fs::read_to_string(&data)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().parse())
                .collect::<Result<_, _>>()?;
            let spec = per_user_noise_spec(noise.into(), &privacy.params())?;
            let mut rng = RngStream::new(seed, user as u64).rng();
            let acks = run_client(connect.as_str(), &share, user, &values, m, &spec, &mut rng)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "epoch,aggregate")?;
            for (epoch, sum) in acks {
                writeln!(stdout, "{epoch},{sum}")?;
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
