//! The PSA scheme: generic construction over a key-homomorphic weak PRF and
//! the concrete DLWE-style instantiation F_s(t) = <t, s> + e over Z_q, with
//! modulus sizing so the noisy aggregate decodes without wraparound.
//!
//! Noise is injected by the caller into encryption so that the same code path
//! serves honest users (a Skellam draw), compromised users (zero) and tests
//! (fixed vectors).

use crate::dist::NoiseSpec;
use crate::zq::{inner_product, is_prime_u64, Modulus, RingElement, RingVector, ZqError};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const KEY_FILE_MAGIC: &[u8; 4] = b"PSA1";
pub const KEY_FILE_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum PsaError {
    #[error("plaintext {0} outside [-{1}, {1}]")]
    PlaintextOutOfRange(i64, i64),
    #[error("expected {expected} ciphertexts, got {got}")]
    WrongCiphertextCount { expected: usize, got: usize },
    #[error("ciphertext epoch {got} does not match expected epoch {expected}")]
    EpochMismatch { expected: u32, got: u32 },
    #[error("duplicate ciphertext for user {user} in epoch {epoch}")]
    DuplicateCiphertext { user: u32, epoch: u32 },
    #[error("aggregate magnitude exceeds the decodable range (wraparound)")]
    Wraparound,
    #[error("no prime modulus below 2^63 satisfies the headroom requirement")]
    ModulusTooLarge,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed key file: {0}")]
    MalformedKeyFile(String),
    #[error(transparent)]
    Zq(#[from] ZqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Public parameters of a PSA instance.
#[derive(Debug, Clone)]
pub struct PsaParams {
    pub kappa: u64,
    pub lambda: u64,
    pub q: Modulus,
    pub n: u64,
    /// plaintexts lie in {-m, ..., m}
    pub m: i64,
    pub gamma: f64,
    pub slack_s: u64,
    pub noise: NoiseSpec,
}

/// n user key shares plus the aggregator key s_0 = -sum(s_i).
#[derive(Debug, Clone)]
pub struct KeyMaterial {
    pub shares: Vec<RingVector>,
    pub aggregator_key: RingVector,
}

/// The lambda public time tags fixed at setup.
#[derive(Debug, Clone)]
pub struct TimeTagSet {
    pub tags: Vec<RingVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ciphertext {
    pub epoch: u32,
    pub user: u32,
    pub value: RingElement,
}

fn uniform_ring_vector<R: Rng>(kappa: u64, q: Modulus, rng: &mut R) -> RingVector {
    let elements = (0..kappa)
        .map(|_| RingElement::new(rng.random_range(0..q.value()) as i64, q))
        .collect();
    RingVector::new(elements).expect("kappa >= 1")
}

/// Generate n uniform key shares with s_0 the negated sum, and lambda
/// uniform time tags.
pub fn setup<R: Rng>(params: &PsaParams, rng: &mut R) -> Result<(KeyMaterial, TimeTagSet), PsaError> {
    if params.kappa < 1 || params.n < 1 || params.lambda < 1 {
        return Err(PsaError::InvalidParameter(
            "kappa, n, lambda must be >= 1".into(),
        ));
    }
    let mut shares = Vec::with_capacity(params.n as usize);
    let mut sum: Option<RingVector> = None;
    for _ in 0..params.n {
        let s = uniform_ring_vector(params.kappa, params.q, rng);
        sum = Some(match sum {
            None => s.clone(),
            Some(acc) => acc.add(&s)?,
        });
        shares.push(s);
    }
    let aggregator_key = sum.expect("n >= 1").neg();
    let tags = (0..params.lambda)
        .map(|_| uniform_ring_vector(params.kappa, params.q, rng))
        .collect();
    Ok((
        KeyMaterial {
            shares,
            aggregator_key,
        },
        TimeTagSet { tags },
    ))
}

/// Smallest odd prime q with (q-1)/2 >= m*n + ceil(headroom_k * sqrt(mu_total)),
/// so the noisy aggregate stays inside the central range. The default
/// headroom of 12 standard deviations makes Skellam wraparound negligible.
pub fn choose_modulus(
    m: i64,
    n: u64,
    total_noise_variance: f64,
    headroom_k: f64,
) -> Result<Modulus, PsaError> {
    if m < 0 || n < 1 || total_noise_variance < 0.0 || headroom_k < 0.0 {
        return Err(PsaError::InvalidParameter(
            "m >= 0, n >= 1, variance and headroom >= 0".into(),
        ));
    }
    let budget = m as u128 * n as u128
        + (headroom_k * total_noise_variance.sqrt()).ceil() as u128;
    let min_q = 2 * budget + 1;
    if min_q >= 1u128 << 63 {
        return Err(PsaError::ModulusTooLarge);
    }
    let mut q = (min_q as u64).max(3);
    if q % 2 == 0 {
        q += 1;
    }
    loop {
        if q >= 1u64 << 63 {
            return Err(PsaError::ModulusTooLarge);
        }
        if is_prime_u64(q) {
            return Ok(Modulus::new(q).expect("odd prime below 2^63"));
        }
        q += 2;
    }
}

/// c = reduce_central(<tag, share> + e + x).
pub fn psa_encrypt(
    share: &RingVector,
    tag: &RingVector,
    x: i64,
    m: i64,
    noise_e: i64,
    user: u32,
    epoch: u32,
) -> Result<Ciphertext, PsaError> {
    if x.abs() > m {
        return Err(PsaError::PlaintextOutOfRange(x, m));
    }
    let prf = inner_product(tag, share)?;
    let value = prf
        .add(&RingElement::new(noise_e, prf.modulus()))?
        .add(&RingElement::new(x, prf.modulus()))?;
    Ok(Ciphertext { epoch, user, value })
}

/// lift(<tag, s_0> + sum_i c_i) = sum_i x_i + sum_i e_i, valid while the
/// true value stays within the central range.
pub fn psa_decrypt(
    agg_key: &RingVector,
    tag: &RingVector,
    ciphers: &[Ciphertext],
    n: u64,
) -> Result<i64, PsaError> {
    if ciphers.len() != n as usize {
        return Err(PsaError::WrongCiphertextCount {
            expected: n as usize,
            got: ciphers.len(),
        });
    }
    let epoch = ciphers[0].epoch;
    for c in ciphers {
        if c.epoch != epoch {
            return Err(PsaError::EpochMismatch {
                expected: epoch,
                got: c.epoch,
            });
        }
    }
    let mut acc = inner_product(tag, agg_key)?;
    for c in ciphers {
        acc = acc.add(&c.value)?;
    }
    Ok(acc.lift())
}

/// The abstract key-homomorphic weak PRF of the generic construction,
/// together with the plaintext embedding phi and its inverse.
pub trait WeakPrf {
    /// Deterministic part of F_s(t).
    fn eval(&self, key: &RingVector, tag: &RingVector) -> Result<RingElement, PsaError>;
    /// phi: embed a plaintext into the group.
    fn embed(&self, x: i64, q: Modulus) -> RingElement;
    /// phi^{-1}, injective over {-max_magnitude, ..., max_magnitude};
    /// signals wraparound when the decoded value falls outside.
    fn invert(&self, v: RingElement, max_magnitude: i64) -> Result<i64, PsaError>;
}

/// F_s(t) = <t, s> over Z_q with the identity embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct DlweWeakPrf;

impl WeakPrf for DlweWeakPrf {
    fn eval(&self, key: &RingVector, tag: &RingVector) -> Result<RingElement, PsaError> {
        Ok(inner_product(tag, key)?)
    }

    fn embed(&self, x: i64, q: Modulus) -> RingElement {
        RingElement::new(x, q)
    }

    fn invert(&self, v: RingElement, max_magnitude: i64) -> Result<i64, PsaError> {
        let x = v.lift();
        if x.abs() > max_magnitude {
            return Err(PsaError::Wraparound);
        }
        Ok(x)
    }
}

/// Run the full generic pipeline over a data matrix (one row per epoch,
/// one column per user) with no noise, returning the decrypted aggregate of
/// every epoch. Decryption must equal the exact column sums.
pub fn generic_psa_roundtrip<P: WeakPrf>(
    prf: &P,
    params: &PsaParams,
    keys: &KeyMaterial,
    tags: &TimeTagSet,
    data: &[Vec<i64>],
) -> Result<Vec<i64>, PsaError> {
    let mut out = Vec::with_capacity(data.len());
    for (j, row) in data.iter().enumerate() {
        if row.len() != params.n as usize {
            return Err(PsaError::WrongCiphertextCount {
                expected: params.n as usize,
                got: row.len(),
            });
        }
        let tag = &tags.tags[j % tags.tags.len()];
        let mut acc = prf.eval(&keys.aggregator_key, tag)?;
        for (i, &x) in row.iter().enumerate() {
            if x.abs() > params.m {
                return Err(PsaError::PlaintextOutOfRange(x, params.m));
            }
            let c = prf
                .eval(&keys.shares[i], tag)?
                .add(&prf.embed(x, params.q))?;
            acc = acc.add(&c)?;
        }
        out.push(prf.invert(acc, params.m * params.n as i64)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    GaussianExample,
    SkellamExample,
}

/// Concrete parameter presets following the instantiation examples:
/// Skellam per-user variance 4 lambda^2 kappa s^2 with lambda = 3 kappa + 1,
/// Gaussian per-user parameter 2 kappa / pi. These are functional desk-scale
/// instantiations, not cryptographically certified sizes.
pub fn security_parameter_preset(
    kind: PresetKind,
    kappa: u64,
    gamma: f64,
    n: u64,
) -> Result<PsaParams, PsaError> {
    if kappa < 16 {
        return Err(PsaError::InvalidParameter("kappa must be >= 16".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) || n < 1 {
        return Err(PsaError::InvalidParameter(
            "gamma in (0,1], n >= 1".into(),
        ));
    }
    let lambda = 3 * kappa + 1;
    let log2_kappa = (kappa as f64).log2();
    let slack_s = (log2_kappa * log2_kappa / 4.0).ceil() as u64;
    let m = 1i64;
    let (noise, per_user_variance) = match kind {
        PresetKind::SkellamExample => {
            let mu_user =
                4.0 * (lambda * lambda) as f64 * kappa as f64 * (slack_s * slack_s) as f64;
            (
                NoiseSpec::Skellam(
                    crate::dist::SkellamParams::new(mu_user)
                        .map_err(|e| PsaError::InvalidParameter(e.to_string()))?,
                ),
                mu_user,
            )
        }
        PresetKind::GaussianExample => {
            let nu_user = 2.0 * kappa as f64 / std::f64::consts::PI;
            (NoiseSpec::DiscreteGaussian { nu: nu_user }, nu_user)
        }
    };
    // worst case for range: all n users add noise
    let q = choose_modulus(m, n, n as f64 * per_user_variance, 12.0)?;
    Ok(PsaParams {
        kappa,
        lambda,
        q,
        n,
        m,
        gamma,
        slack_s,
        noise,
    })
}

/// Collects one epoch's ciphertexts, enforcing one submission per user.
#[derive(Debug)]
pub struct EpochBuffer {
    epoch: u32,
    n: u64,
    ciphers: Vec<Ciphertext>,
}

impl EpochBuffer {
    pub fn new(epoch: u32, n: u64) -> Self {
        EpochBuffer {
            epoch,
            n,
            ciphers: Vec::with_capacity(n as usize),
        }
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    /// Accept a ciphertext; the first submission per user wins.
    pub fn submit(&mut self, c: Ciphertext) -> Result<(), PsaError> {
        if c.epoch != self.epoch {
            return Err(PsaError::EpochMismatch {
                expected: self.epoch,
                got: c.epoch,
            });
        }
        if self.ciphers.iter().any(|existing| existing.user == c.user) {
            return Err(PsaError::DuplicateCiphertext {
                user: c.user,
                epoch: c.epoch,
            });
        }
        self.ciphers.push(c);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.ciphers.len() == self.n as usize
    }

    pub fn ciphers(&self) -> &[Ciphertext] {
        &self.ciphers
    }
}

/// On-disk key/share file: magic "PSA1", then little-endian u64 fields
/// version, kappa, lambda, q, n, then vectors of kappa little-endian u64
/// residues in [0, q). The first vector is the key; the remaining lambda
/// vectors are the pre-distributed time tags.
#[derive(Debug, Clone)]
pub struct KeyFile {
    pub kappa: u64,
    pub lambda: u64,
    pub q: Modulus,
    pub n: u64,
    pub key: RingVector,
    pub tags: Vec<RingVector>,
}

impl KeyFile {
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), PsaError> {
        w.write_all(KEY_FILE_MAGIC)?;
        for field in [
            KEY_FILE_VERSION,
            self.kappa,
            self.lambda,
            self.q.value(),
            self.n,
        ] {
            w.write_all(&field.to_le_bytes())?;
        }
        for vector in std::iter::once(&self.key).chain(&self.tags) {
            for e in vector.elements() {
                w.write_all(&e.residue().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, PsaError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != KEY_FILE_MAGIC {
            return Err(PsaError::MalformedKeyFile("bad magic".into()));
        }
        let mut u64s = [0u64; 5];
        for slot in &mut u64s {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *slot = u64::from_le_bytes(buf);
        }
        let [version, kappa, lambda, q_raw, n] = u64s;
        if version != KEY_FILE_VERSION {
            return Err(PsaError::MalformedKeyFile(format!(
                "unsupported version {version}"
            )));
        }
        if kappa == 0 {
            return Err(PsaError::MalformedKeyFile("kappa is zero".into()));
        }
        let q = Modulus::new(q_raw)
            .map_err(|e| PsaError::MalformedKeyFile(format!("bad modulus: {e}")))?;
        let mut read_vector = |label: &str| -> Result<RingVector, PsaError> {
            let mut elements = Vec::with_capacity(kappa as usize);
            for _ in 0..kappa {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf).map_err(|_| {
                    PsaError::MalformedKeyFile(format!("truncated {label} vector"))
                })?;
                let residue = u64::from_le_bytes(buf);
                if residue >= q.value() {
                    return Err(PsaError::MalformedKeyFile(format!(
                        "residue {residue} out of range for q={}",
                        q.value()
                    )));
                }
                elements.push(RingElement::new(residue as i64, q));
            }
            Ok(RingVector::new(elements)?)
        };
        let key = read_vector("key")?;
        let mut tags = Vec::with_capacity(lambda as usize);
        for _ in 0..lambda {
            tags.push(read_vector("tag")?);
        }
        Ok(KeyFile {
            kappa,
            lambda,
            q,
            n,
            key,
            tags,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PsaError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self, PsaError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}
