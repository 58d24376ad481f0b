//! Paillier cryptosystem over `num-bigint` integers.
//!
//! Supports the two homomorphic operations the aggregation protocol needs:
//! ciphertext + ciphertext addition and ciphertext × plaintext scalar
//! multiplication. The generator is fixed to `g = n + 1`, which turns
//! `g^m mod n²` into the single multiplication `1 + m·n`.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest key size accepted by [`keygen`]. Test suites use 128–512 bits;
/// production runs default to 2048.
pub const MIN_KEY_BITS: u64 = 128;

/// Default key size for non-test runs.
pub const DEFAULT_KEY_BITS: u64 = 2048;

/// Public half of a Paillier key: modulus `n` with `g = n + 1` implied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PublicKeyRepr", into = "PublicKeyRepr")]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
}

/// Secret half: Carmichael value `lambda` and the decryption factor `mu`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SecretKeyRepr", into = "SecretKeyRepr")]
pub struct SecretKey {
    n: BigUint,
    n_squared: BigUint,
    lambda: BigUint,
    mu: BigUint,
}

/// A matched public/secret key pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// A Paillier ciphertext: an integer in `[0, n²)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ciphertext {
    value: BigUint,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Ciphertext `1`, the deterministic trivial encryption of zero.
    pub fn trivial_zero() -> Self {
        Ciphertext {
            value: BigUint::one(),
        }
    }
}

impl PublicKey {
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }
}

impl SecretKey {
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }
}

impl KeyPair {
    /// Bit length of the modulus.
    pub fn bits(&self) -> u64 {
        self.public.n.bits()
    }
}

// --- serialization representations: big integers as decimal strings ---

#[derive(Serialize, Deserialize)]
struct PublicKeyRepr {
    n: String,
    g: String,
}

#[derive(Serialize, Deserialize)]
struct SecretKeyRepr {
    n: String,
    lambda: String,
    mu: String,
}

fn parse_decimal(s: &str, field: &str) -> Result<BigUint> {
    s.parse::<BigUint>()
        .map_err(|_| Error::Serde(format!("{field} is not a decimal integer")))
}

impl TryFrom<PublicKeyRepr> for PublicKey {
    type Error = Error;
    fn try_from(repr: PublicKeyRepr) -> Result<Self> {
        let n = parse_decimal(&repr.n, "n")?;
        let g = parse_decimal(&repr.g, "g")?;
        if g != &n + BigUint::one() {
            return Err(Error::Serde("unsupported generator: expected g = n + 1".into()));
        }
        let n_squared = &n * &n;
        Ok(PublicKey { n, n_squared })
    }
}

impl From<PublicKey> for PublicKeyRepr {
    fn from(pk: PublicKey) -> Self {
        PublicKeyRepr {
            g: (&pk.n + BigUint::one()).to_string(),
            n: pk.n.to_string(),
        }
    }
}

impl TryFrom<SecretKeyRepr> for SecretKey {
    type Error = Error;
    fn try_from(repr: SecretKeyRepr) -> Result<Self> {
        let n = parse_decimal(&repr.n, "n")?;
        let lambda = parse_decimal(&repr.lambda, "lambda")?;
        let mu = parse_decimal(&repr.mu, "mu")?;
        let n_squared = &n * &n;
        Ok(SecretKey {
            n,
            n_squared,
            lambda,
            mu,
        })
    }
}

impl From<SecretKey> for SecretKeyRepr {
    fn from(sk: SecretKey) -> Self {
        SecretKeyRepr {
            n: sk.n.to_string(),
            lambda: sk.lambda.to_string(),
            mu: sk.mu.to_string(),
        }
    }
}

impl TryFrom<String> for Ciphertext {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Ok(Ciphertext {
            value: parse_decimal(&s, "ciphertext")?,
        })
    }
}

impl From<Ciphertext> for String {
    fn from(c: Ciphertext) -> String {
        c.value.to_string()
    }
}

// --- key generation ---

const SMALL_PRIMES: [u32; 30] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127,
];

fn is_probable_prime<R: RngCore>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }

    // n - 1 = d * 2^s with d odd
    let n_minus_one = n - BigUint::one();
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn gen_prime<R: RngCore>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, 30, rng) {
            return candidate;
        }
    }
}

fn mod_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    let a = BigInt::from(a.clone());
    let m = BigInt::from(modulus.clone());
    let ext = a.extended_gcd(&m);
    if !ext.gcd.is_one() {
        return None;
    }
    let mut x = ext.x % &m;
    if x.is_negative() {
        x += &m;
    }
    x.to_biguint()
}

/// `L(x) = (x - 1) / n`, defined on values `≡ 1 (mod n)`.
fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - BigUint::one()) / n
}

/// Generate a Paillier key pair of roughly `bits` modulus bits,
/// deterministically for a fixed `seed`.
pub fn keygen(bits: u64, seed: u64) -> Result<KeyPair> {
    if bits < MIN_KEY_BITS {
        return Err(Error::Config(format!(
            "key_bits must be at least {MIN_KEY_BITS} (got {bits})"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    keygen_with_rng(bits, &mut rng)
}

/// Key generation driven by an explicit randomness source.
pub fn keygen_with_rng<R: RngCore>(bits: u64, rng: &mut R) -> Result<KeyPair> {
    if bits < MIN_KEY_BITS {
        return Err(Error::Config(format!(
            "key_bits must be at least {MIN_KEY_BITS} (got {bits})"
        )));
    }
    let half = bits / 2;
    loop {
        let p = gen_prime(half, rng);
        let q = gen_prime(bits - half, rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        let p_minus = &p - BigUint::one();
        let q_minus = &q - BigUint::one();
        // gcd(n, phi(n)) must be 1 for decryption to be well defined.
        if !n.gcd(&(&p_minus * &q_minus)).is_one() {
            continue;
        }
        let n_squared = &n * &n;
        let lambda = p_minus.lcm(&q_minus);
        // g = n + 1, so g^lambda mod n² = 1 + lambda·n mod n².
        let g = &n + BigUint::one();
        let u = g.modpow(&lambda, &n_squared);
        let mu = match mod_inverse(&l_function(&u, &n), &n) {
            Some(mu) => mu,
            None => continue,
        };
        let public = PublicKey {
            n: n.clone(),
            n_squared: n_squared.clone(),
        };
        let secret = SecretKey {
            n,
            n_squared,
            lambda,
            mu,
        };
        return Ok(KeyPair { public, secret });
    }
}

// --- core operations ---

/// Encrypt plaintext `m ∈ [0, n)` with fresh randomness from `rng`.
pub fn encrypt<R: RngCore>(pk: &PublicKey, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
    if m >= &pk.n {
        return Err(Error::Domain(format!(
            "plaintext out of range: m must be in [0, n), got {} bits",
            m.bits()
        )));
    }
    let r = loop {
        let candidate = rng.gen_biguint_range(&BigUint::one(), &pk.n);
        if candidate.gcd(&pk.n).is_one() {
            break candidate;
        }
    };
    // g = n + 1: g^m mod n² = 1 + m·n.
    let g_m = BigUint::one() + m * &pk.n;
    let r_n = r.modpow(&pk.n, &pk.n_squared);
    Ok(Ciphertext {
        value: (g_m * r_n) % &pk.n_squared,
    })
}

/// Decrypt a ciphertext produced under the matching public key.
///
/// A ciphertext produced under a different key of the same size decrypts to
/// an undefined plaintext without error; cross-key use is not detectable at
/// this layer.
pub fn decrypt(sk: &SecretKey, c: &Ciphertext) -> Result<BigUint> {
    if c.value.is_zero() || c.value >= sk.n_squared {
        return Err(Error::Decryption(
            "ciphertext outside (0, n²)".into(),
        ));
    }
    if !c.value.gcd(&sk.n).is_one() {
        return Err(Error::Decryption("ciphertext shares a factor with n".into()));
    }
    let u = c.value.modpow(&sk.lambda, &sk.n_squared);
    Ok((l_function(&u, &sk.n) * &sk.mu) % &sk.n)
}

/// Homomorphic addition: the result decrypts to `(m1 + m2) mod n`.
pub fn he_add(pk: &PublicKey, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
    if c1.value >= pk.n_squared || c2.value >= pk.n_squared {
        return Err(Error::Domain("ciphertext exceeds n² for this key".into()));
    }
    Ok(Ciphertext {
        value: (&c1.value * &c2.value) % &pk.n_squared,
    })
}

/// Homomorphic scalar multiplication: decrypts to `(m · k) mod n`
/// for plaintext scalar `k ∈ [0, n)`.
pub fn he_scalar_mul(pk: &PublicKey, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext> {
    if c.value >= pk.n_squared {
        return Err(Error::Domain("ciphertext exceeds n² for this key".into()));
    }
    if k >= &pk.n {
        return Err(Error::Domain("scalar out of range: k must be in [0, n)".into()));
    }
    Ok(Ciphertext {
        value: c.value.modpow(k, &pk.n_squared),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_key(bits: u64, seed: u64) -> KeyPair {
        keygen(bits, seed).unwrap()
    }

    #[test]
    fn roundtrip_small() {
        let kp = test_key(128, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = encrypt(&kp.public, &BigUint::from(5u32), &mut rng).unwrap();
        assert_eq!(decrypt(&kp.secret, &c).unwrap(), BigUint::from(5u32));
    }

    #[test]
    fn keygen_deterministic_for_seed() {
        let a = test_key(128, 1);
        let b = test_key(128, 1);
        assert_eq!(a.public.n, b.public.n);
        assert_eq!(a.secret.lambda, b.secret.lambda);
        let c = test_key(128, 2);
        assert_ne!(a.public.n, c.public.n);
    }

    #[test]
    fn keygen_rejects_short_keys() {
        assert!(matches!(keygen(64, 1), Err(Error::Config(_))));
    }

    #[test]
    fn modulus_has_requested_bits() {
        for bits in [128u64, 256, 512] {
            let kp = test_key(bits, 3);
            let got = kp.bits();
            assert!(got == bits || got == bits - 1, "bits {bits} -> {got}");
        }
    }

    #[test]
    fn roundtrip_oracle_512() {
        // Exhaustive roundtrip oracle over sampled plaintexts.
        let kp = test_key(512, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let m = rng.gen_biguint_range(&BigUint::zero(), kp.public.modulus());
            let c = encrypt(&kp.public, &m, &mut rng).unwrap();
            assert_eq!(decrypt(&kp.secret, &c).unwrap(), m);
        }
    }

    #[test]
    fn zero_roundtrip_and_boundary() {
        let kp = test_key(128, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c0 = encrypt(&kp.public, &BigUint::zero(), &mut rng).unwrap();
        assert_eq!(decrypt(&kp.secret, &c0).unwrap(), BigUint::zero());
        let top = kp.public.modulus() - BigUint::one();
        let c = encrypt(&kp.public, &top, &mut rng).unwrap();
        assert_eq!(decrypt(&kp.secret, &c).unwrap(), top);
    }

    #[test]
    fn encryption_is_probabilistic() {
        let kp = test_key(128, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = BigUint::from(42u32);
        for _ in 0..100 {
            let c1 = encrypt(&kp.public, &m, &mut rng).unwrap();
            let c2 = encrypt(&kp.public, &m, &mut rng).unwrap();
            assert_ne!(c1, c2);
            assert_eq!(decrypt(&kp.secret, &c1).unwrap(), m);
            assert_eq!(decrypt(&kp.secret, &c2).unwrap(), m);
        }
    }

    #[test]
    fn ciphertext_never_equals_plaintext_encoding() {
        let kp = test_key(128, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in [0u32, 1, 42, 100_000] {
            let m = BigUint::from(m);
            let c = encrypt(&kp.public, &m, &mut rng).unwrap();
            assert_ne!(c.value, m);
        }
    }

    #[test]
    fn plaintext_out_of_range_rejected() {
        let kp = test_key(128, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = encrypt(&kp.public, kp.public.modulus(), &mut rng);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn malformed_ciphertext_rejected() {
        let kp = test_key(128, 12);
        let too_big = Ciphertext {
            value: kp.public.modulus_squared().clone(),
        };
        assert!(matches!(decrypt(&kp.secret, &too_big), Err(Error::Decryption(_))));
        let shares_factor = Ciphertext {
            value: kp.public.modulus().clone(),
        };
        assert!(matches!(
            decrypt(&kp.secret, &shares_factor),
            Err(Error::Decryption(_))
        ));
    }

    #[test]
    fn wrong_key_decrypt_is_undefined_or_error() {
        let kp1 = test_key(128, 21);
        let kp2 = test_key(128, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = BigUint::from(77u32);
        let c = encrypt(&kp1.public, &m, &mut rng).unwrap();
        match decrypt(&kp2.secret, &c) {
            Ok(v) => assert_ne!(v, m),
            Err(Error::Decryption(_)) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }
    }

    #[test]
    fn he_add_matches_plaintext_sum() {
        let kp = test_key(128, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = |m: u32, rng: &mut ChaCha8Rng| encrypt(&kp.public, &BigUint::from(m), rng).unwrap();

        let zero = he_add(&kp.public, &enc(0, &mut rng), &enc(0, &mut rng)).unwrap();
        assert_eq!(decrypt(&kp.secret, &zero).unwrap(), BigUint::zero());

        let seven = he_add(&kp.public, &enc(3, &mut rng), &enc(4, &mut rng)).unwrap();
        assert_eq!(decrypt(&kp.secret, &seven).unwrap(), BigUint::from(7u32));

        let mut acc = enc(1, &mut rng);
        for m in 2..=5 {
            acc = he_add(&kp.public, &acc, &enc(m, &mut rng)).unwrap();
        }
        assert_eq!(decrypt(&kp.secret, &acc).unwrap(), BigUint::from(15u32));
    }

    #[test]
    fn he_scalar_mul_matches_plaintext_product() {
        let kp = test_key(128, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = encrypt(&kp.public, &BigUint::from(6u32), &mut rng).unwrap();

        let identity = he_scalar_mul(&kp.public, &c, &BigUint::one()).unwrap();
        assert_eq!(decrypt(&kp.secret, &identity).unwrap(), BigUint::from(6u32));

        let zeroed = he_scalar_mul(&kp.public, &c, &BigUint::zero()).unwrap();
        assert_eq!(decrypt(&kp.secret, &zeroed).unwrap(), BigUint::zero());

        let forty_two = he_scalar_mul(&kp.public, &c, &BigUint::from(7u32)).unwrap();
        assert_eq!(decrypt(&kp.secret, &forty_two).unwrap(), BigUint::from(42u32));

        let err = he_scalar_mul(&kp.public, &c, kp.public.modulus());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn random_add_and_scalar_mul_properties() {
        let kp = test_key(256, 33);
        let n = kp.public.modulus().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a = rng.gen_biguint_range(&BigUint::zero(), &n);
            let b = rng.gen_biguint_range(&BigUint::zero(), &n);
            let ca = encrypt(&kp.public, &a, &mut rng).unwrap();
            let cb = encrypt(&kp.public, &b, &mut rng).unwrap();
            let sum = he_add(&kp.public, &ca, &cb).unwrap();
            assert_eq!(decrypt(&kp.secret, &sum).unwrap(), (&a + &b) % &n);

            let k = rng.gen_biguint_range(&BigUint::zero(), &n);
            let prod = he_scalar_mul(&kp.public, &ca, &k).unwrap();
            assert_eq!(decrypt(&kp.secret, &prod).unwrap(), (&a * &k) % &n);
        }
    }

    #[test]
    fn key_json_roundtrip_uses_decimal_strings() {
        let kp = test_key(128, 41);
        let pk_json = serde_json::to_string(&kp.public).unwrap();
        let sk_json = serde_json::to_string(&kp.secret).unwrap();
        assert!(pk_json.contains("\"n\""));
        assert!(pk_json.contains("\"g\""));
        assert!(sk_json.contains("\"lambda\""));
        assert!(sk_json.contains("\"mu\""));

        let pk: PublicKey = serde_json::from_str(&pk_json).unwrap();
        let sk: SecretKey = serde_json::from_str(&sk_json).unwrap();
        assert_eq!(pk, kp.public);
        assert_eq!(sk, kp.secret);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = encrypt(&pk, &BigUint::from(123u32), &mut rng).unwrap();
        let c_json = serde_json::to_string(&c).unwrap();
        let c_back: Ciphertext = serde_json::from_str(&c_json).unwrap();
        assert_eq!(decrypt(&sk, &c_back).unwrap(), BigUint::from(123u32));
    }
}
