//! Distributed private stream aggregation over Z_q with discrete
//! differential-privacy noise (Skellam, symmetric geometric, binomial).

pub mod dist;
pub mod harness;
pub mod mechanisms;
pub mod netproto;
pub mod oracles;
pub mod psa;
pub mod zq;
