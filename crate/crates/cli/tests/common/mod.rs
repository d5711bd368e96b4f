//! Shared acceptance-test support: a textbook affine-curve oracle, an
//! independent derivation-path evaluator, and a deterministic RNG.
//!
//! The oracle deliberately reimplements everything from first principles —
//! affine coordinates, extended-Euclid inversion, MSB-first double-and-add
//! — so it shares no arithmetic path with the engine it checks.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use sha2::{Digest, Sha256};

/// Deterministic splitmix64 generator; acceptance runs are reproducible.
pub struct Rng(pub u64);

impl Rng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn bytes32(&mut self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for chunk in out.chunks_mut(8) {
            chunk.copy_from_slice(&self.next_u64().to_be_bytes());
        }
        out
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }
}

/// Textbook affine secp256k1 arithmetic. Points are `None` at infinity.
pub struct Oracle {
    pub p: BigInt,
    pub n: BigUint,
    pub g: (BigInt, BigInt),
}

pub type Point = Option<(BigInt, BigInt)>;

impl Oracle {
    pub fn secp256k1() -> Oracle {
        let h = |s: &str| BigInt::parse_bytes(s.as_bytes(), 16).expect("const");
        Oracle {
            p: h("fffffffffffffffffffffffffffffffffffffffffffffffffffffffefffffc2f"),
            n: BigUint::parse_bytes(
                b"fffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364141",
                16,
            )
            .expect("const"),
            g: (
                h("79be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798"),
                h("483ada7726a3c4655da4fbfc0e1108a8fd17b448a68554199c47d08ffb10d4b8"),
            ),
        }
    }

    fn modp(&self, v: &BigInt) -> BigInt {
        let r = v % &self.p;
        if r.sign() == Sign::Minus {
            r + &self.p
        } else {
            r
        }
    }

    fn inv(&self, v: &BigInt) -> BigInt {
        let e = self.modp(v).extended_gcd(&self.p);
        assert!(e.gcd.is_one(), "inverse of zero requested");
        self.modp(&e.x)
    }

    pub fn add(&self, a: &Point, b: &Point) -> Point {
        let (ax, ay) = match a {
            None => return b.clone(),
            Some(p) => p,
        };
        let (bx, by) = match b {
            None => return a.clone(),
            Some(p) => p,
        };
        if ax == bx && self.modp(&(ay + by)).is_zero() {
            return None;
        }
        let lambda = if ax == bx && ay == by {
            // tangent slope 3x² / 2y (a = 0 on secp256k1)
            self.modp(&(3 * ax * ax * self.inv(&(2 * ay))))
        } else {
            self.modp(&((by - ay) * self.inv(&(bx - ax))))
        };
        let x3 = self.modp(&(&lambda * &lambda - ax - bx));
        let y3 = self.modp(&(lambda * (ax - &x3) - ay));
        Some((x3, y3))
    }

    /// MSB-first double-and-add.
    pub fn mul(&self, k: &BigUint, base: &Point) -> Point {
        let mut acc: Point = None;
        for i in (0..k.bits()).rev() {
            acc = self.add(&acc, &acc);
            if k.bit(i) {
                acc = self.add(&acc, base);
            }
        }
        acc
    }

    pub fn generator(&self) -> Point {
        Some(self.g.clone())
    }

    pub fn compress(&self, point: &Point) -> [u8; 33] {
        let (x, y) = point.as_ref().expect("finite point");
        let mut out = [0u8; 33];
        out[0] = if (y % 2u8).is_zero() { 0x02 } else { 0x03 };
        let raw = x.to_biguint().expect("reduced").to_bytes_be();
        out[1 + (32 - raw.len())..].copy_from_slice(&raw);
        out
    }
}

pub fn sha(data: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    out.copy_from_slice(&Sha256::digest(data));
    out
}

/// One step of an oracle-side derivation path.
#[derive(Debug, Clone)]
pub enum OracleStep {
    Parallel { seed: [u8; 32], label: [u8; 32] },
    Sequential { seed: [u8; 32], depth: u32 },
}

/// Independent path evaluation: parallel steps add SHA-256(seed ‖ label),
/// sequential steps add the rehash chain values for stages 2..=depth, all
/// modulo the group order.
pub fn derive_secret(oracle: &Oracle, master: &BigUint, path: &[OracleStep]) -> BigUint {
    let n = &oracle.n;
    let mut sk = master.clone();
    for step in path {
        match step {
            OracleStep::Parallel { seed, label } => {
                let mut buf = Vec::with_capacity(64);
                buf.extend_from_slice(seed);
                buf.extend_from_slice(label);
                sk = (sk + BigUint::from_bytes_be(&sha(&buf))) % n;
            }
            OracleStep::Sequential { seed, depth } => {
                for stage in 2..=*depth {
                    let mut h = *seed;
                    for _ in 0..stage - 1 {
                        h = sha(&h);
                    }
                    sk = (sk + BigUint::from_bytes_be(&h)) % n;
                }
            }
        }
    }
    sk
}

/// Compressed public key for a secret via the oracle's own arithmetic.
pub fn public_of(oracle: &Oracle, sk: &BigUint) -> [u8; 33] {
    oracle.compress(&oracle.mul(sk, &oracle.generator()))
}
