//! Fixed-point encoding of reals into the Paillier plaintext space.
//!
//! A real `x` maps to `round(x · scale) mod n`, with negative values in the
//! upper half of `[0, n)`. One homomorphic scalar multiplication by another
//! encoded value doubles the effective scale, so results of a
//! sum-then-scale aggregation decode with `scale²`.

use num_bigint::BigUint;
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::paillier::PublicKey;

/// Default scale factor: six decimal digits of resolution.
pub const DEFAULT_SCALE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    scale: u64,
    modulus: BigUint,
    half_modulus: BigUint,
}

impl FixedPointCodec {
    pub fn new(scale: u64, modulus: BigUint) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Config("codec scale must be positive".into()));
        }
        let half_modulus = &modulus >> 1;
        Ok(FixedPointCodec {
            scale,
            modulus,
            half_modulus,
        })
    }

    /// Codec bound to a public key's modulus.
    pub fn for_key(scale: u64, pk: &PublicKey) -> Result<Self> {
        Self::new(scale, pk.modulus().clone())
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Roundtrip error bound of a single encode/decode: `1 / scale`.
    pub fn tolerance(&self) -> f64 {
        1.0 / self.scale as f64
    }

    /// Encode a real into `[0, n)`. Requires `|x| < n / (2·scale)`.
    pub fn encode(&self, x: f64) -> Result<BigUint> {
        if !x.is_finite() {
            return Err(Error::Encoding(format!("cannot encode non-finite value {x}")));
        }
        let scaled = (x * self.scale as f64).round();
        let magnitude = BigUint::from_f64(scaled.abs())
            .ok_or_else(|| Error::Encoding(format!("cannot encode value {x}")))?;
        if magnitude > self.half_modulus {
            return Err(Error::Encoding(format!(
                "magnitude overflow: |{x}|·{} exceeds n/2",
                self.scale
            )));
        }
        if scaled < 0.0 {
            Ok(&self.modulus - magnitude)
        } else {
            Ok(magnitude)
        }
    }

    /// Decode a plaintext at the base scale.
    pub fn decode(&self, m: &BigUint) -> f64 {
        self.decode_at(m, self.scale as f64)
    }

    /// Decode a plaintext carrying two scale factors, as produced by one
    /// scalar multiplication of two encoded values.
    pub fn decode_double_scale(&self, m: &BigUint) -> f64 {
        let s = self.scale as f64;
        self.decode_at(m, s * s)
    }

    fn decode_at(&self, m: &BigUint, divisor: f64) -> f64 {
        if m > &self.half_modulus {
            let magnitude = &self.modulus - m;
            -(magnitude.to_f64().unwrap_or(f64::INFINITY)) / divisor
        } else {
            m.to_f64().unwrap_or(f64::INFINITY) / divisor
        }
    }

    /// Snap a real to the nearest representable value (encode then decode).
    pub fn quantize(&self, x: f64) -> Result<f64> {
        Ok(self.decode(&self.encode(x)?))
    }
}
