//! Short-Weierstrass elliptic-curve arithmetic over configurable parameters.
//!
//! The engine defaults to secp256k1 but every operation runs against the
//! parameters supplied at construction, so a contract may fix its own curve
//! and base point. Points use Jacobian coordinates internally; only the
//! affine form is exposed.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::hashes::Hash32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CurveError {
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("PointNotOnCurve: affine coordinates do not satisfy the curve equation")]
    PointNotOnCurve,
    #[error("PointAtInfinity: operation requires a finite point")]
    PointAtInfinity,
    #[error("ZeroScalar: value reduced to zero modulo the group order")]
    ZeroScalar,
    #[error("BadEncoding: {0}")]
    BadEncoding(String),
}

/// Domain parameters of a short-Weierstrass curve y² = x³ + ax + b over 𝔽_p,
/// with a distinguished generator of prime order n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurveParams {
    pub p: BigUint,
    pub a: BigUint,
    pub b: BigUint,
    pub gx: BigUint,
    pub gy: BigUint,
    pub n: BigUint,
}

impl CurveParams {
    pub fn secp256k1() -> Self {
        let hexu = |s: &str| BigUint::parse_bytes(s.as_bytes(), 16).expect("const hex");
        CurveParams {
            p: hexu("fffffffffffffffffffffffffffffffffffffffffffffffffffffffefffffc2f"),
            a: BigUint::zero(),
            b: BigUint::from(7u32),
            gx: hexu("79be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798"),
            gy: hexu("483ada7726a3c4655da4fbfc0e1108a8fd17b448a68554199c47d08ffb10d4b8"),
            n: hexu("fffffffffffffffffffffffffffffffebaaedce6af48a03bbfd25e8cd0364141"),
        }
    }
}

/// A point on the curve: the group identity or an affine pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CurvePoint {
    Infinity,
    Affine { x: BigUint, y: BigUint },
}

impl CurvePoint {
    pub fn is_infinity(&self) -> bool {
        matches!(self, CurvePoint::Infinity)
    }
}

/// A non-zero scalar modulo the group order. Constructed through [`Curve`]
/// so the range invariant 0 < value < n always holds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Scalar(BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    /// Big-endian 32-byte encoding.
    pub fn to_bytes(&self) -> [u8; 32] {
        let raw = self.0.to_bytes_be();
        let mut out = [0u8; 32];
        out[32 - raw.len()..].copy_from_slice(&raw);
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

/// Validated curve context carrying the domain parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Curve {
    params: CurveParams,
}

impl Curve {
    pub fn new(params: CurveParams) -> Result<Self, CurveError> {
        if params.p <= BigUint::from(3u8) || params.p.is_even() {
            return Err(CurveError::InvalidParams(
                "field prime must be an odd prime > 3".into(),
            ));
        }
        if params.n <= BigUint::one() {
            return Err(CurveError::InvalidParams(
                "group order must exceed 1".into(),
            ));
        }
        if params.a >= params.p || params.b >= params.p {
            return Err(CurveError::InvalidParams(
                "coefficients must be reduced mod p".into(),
            ));
        }
        // 4a³ + 27b² ≠ 0 rules out singular curves.
        let four_a3 =
            (BigUint::from(4u8) * params.a.modpow(&BigUint::from(3u8), &params.p)) % &params.p;
        let twenty7_b2 = (BigUint::from(27u8) * (&params.b * &params.b)) % &params.p;
        if (four_a3 + twenty7_b2) % &params.p == BigUint::zero() {
            return Err(CurveError::InvalidParams(
                "singular curve: 4a³ + 27b² = 0".into(),
            ));
        }
        let curve = Curve { params };
        let g = curve.generator();
        if !curve.contains(&g) {
            return Err(CurveError::InvalidParams(
                "generator is not on the curve".into(),
            ));
        }
        if !curve.mul_biguint(&g, &curve.params.n).is_infinity() {
            return Err(CurveError::InvalidParams(
                "generator order does not divide n".into(),
            ));
        }
        Ok(curve)
    }

    pub fn secp256k1() -> Self {
        Curve::new(CurveParams::secp256k1()).expect("secp256k1 parameters are valid")
    }

    pub fn params(&self) -> &CurveParams {
        &self.params
    }

    pub fn order(&self) -> &BigUint {
        &self.params.n
    }

    pub fn generator(&self) -> CurvePoint {
        CurvePoint::Affine {
            x: self.params.gx.clone(),
            y: self.params.gy.clone(),
        }
    }

    /// True if the point is the identity or satisfies the curve equation.
    pub fn contains(&self, point: &CurvePoint) -> bool {
        match point {
            CurvePoint::Infinity => true,
            CurvePoint::Affine { x, y } => {
                if x >= &self.params.p || y >= &self.params.p {
                    return false;
                }
                let p = &self.params.p;
                let lhs = (y * y) % p;
                let rhs = (x * x % p * x + &self.params.a * x + &self.params.b) % p;
                lhs == rhs
            }
        }
    }

    /// Group addition.
    pub fn add(&self, lhs: &CurvePoint, rhs: &CurvePoint) -> CurvePoint {
        let j = self.jac_add(&self.to_jacobian(lhs), &self.to_jacobian(rhs));
        self.to_affine(&j)
    }

    pub fn neg(&self, point: &CurvePoint) -> CurvePoint {
        match point {
            CurvePoint::Infinity => CurvePoint::Infinity,
            CurvePoint::Affine { x, y } => {
                let ny = if y.is_zero() {
                    BigUint::zero()
                } else {
                    &self.params.p - y
                };
                CurvePoint::Affine {
                    x: x.clone(),
                    y: ny,
                }
            }
        }
    }

    /// Scalar multiplication `k × point`.
    pub fn mul(&self, point: &CurvePoint, k: &Scalar) -> CurvePoint {
        self.mul_biguint(point, &k.0)
    }

    /// Scalar multiplication by an arbitrary non-negative integer, without
    /// reduction modulo the group order.
    pub fn mul_biguint(&self, point: &CurvePoint, k: &BigUint) -> CurvePoint {
        if k.is_zero() || point.is_infinity() {
            return CurvePoint::Infinity;
        }
        let base = self.to_jacobian(point);
        let mut acc = Jacobian::infinity();
        for i in (0..k.bits()).rev() {
            acc = self.jac_double(&acc);
            if k.bit(i) {
                acc = self.jac_add(&acc, &base);
            }
        }
        self.to_affine(&acc)
    }

    /// Compressed 33-byte SEC1-style encoding: parity prefix plus big-endian x.
    pub fn compress(&self, point: &CurvePoint) -> Result<[u8; 33], CurveError> {
        match point {
            CurvePoint::Infinity => Err(CurveError::PointAtInfinity),
            CurvePoint::Affine { x, y } => {
                let mut out = [0u8; 33];
                out[0] = if y.is_even() { 0x02 } else { 0x03 };
                let raw = x.to_bytes_be();
                if raw.len() > 32 {
                    return Err(CurveError::BadEncoding(
                        "x coordinate exceeds 32 bytes".into(),
                    ));
                }
                out[1 + (32 - raw.len())..].copy_from_slice(&raw);
                Ok(out)
            }
        }
    }

    /// Inverse of [`Curve::compress`]. Requires p ≡ 3 (mod 4), which holds
    /// for secp256k1; other residues would need a general square root.
    pub fn decompress(&self, bytes: &[u8]) -> Result<CurvePoint, CurveError> {
        if bytes.len() != 33 || (bytes[0] != 0x02 && bytes[0] != 0x03) {
            return Err(CurveError::BadEncoding(
                "expected 33 bytes with 02/03 prefix".into(),
            ));
        }
        let p = &self.params.p;
        if p % BigUint::from(4u8) != BigUint::from(3u8) {
            return Err(CurveError::BadEncoding(
                "decompression needs p ≡ 3 mod 4".into(),
            ));
        }
        let x = BigUint::from_bytes_be(&bytes[1..]);
        if &x >= p {
            return Err(CurveError::BadEncoding(
                "x coordinate not reduced mod p".into(),
            ));
        }
        let rhs = (&x * &x % p * &x + &self.params.a * &x + &self.params.b) % p;
        let exp = (p + BigUint::one()) >> 2;
        let mut y = rhs.modpow(&exp, p);
        if (&y * &y) % p != rhs {
            return Err(CurveError::BadEncoding(
                "x has no square root on the curve".into(),
            ));
        }
        let want_odd = bytes[0] == 0x03;
        if y.is_odd() != want_odd {
            y = p - &y;
        }
        Ok(CurvePoint::Affine { x, y })
    }

    // ---- scalar arithmetic modulo the group order ----

    /// Reduce an arbitrary big-endian byte string modulo n, rejecting zero.
    pub fn scalar_from_bytes(&self, bytes: &[u8]) -> Result<Scalar, CurveError> {
        self.scalar_from_biguint(BigUint::from_bytes_be(bytes))
    }

    pub fn scalar_from_hash(&self, hash: &Hash32) -> Result<Scalar, CurveError> {
        self.scalar_from_bytes(hash.as_bytes())
    }

    pub fn scalar_from_u64(&self, v: u64) -> Result<Scalar, CurveError> {
        self.scalar_from_biguint(BigUint::from(v))
    }

    pub fn scalar_from_biguint(&self, v: BigUint) -> Result<Scalar, CurveError> {
        let reduced = v % &self.params.n;
        if reduced.is_zero() {
            return Err(CurveError::ZeroScalar);
        }
        Ok(Scalar(reduced))
    }

    /// (a + b) mod n, rejecting a zero result.
    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Result<Scalar, CurveError> {
        let sum = (&a.0 + &b.0) % &self.params.n;
        if sum.is_zero() {
            return Err(CurveError::ZeroScalar);
        }
        Ok(Scalar(sum))
    }

    /// (a · b) mod n, rejecting a zero result.
    pub fn scalar_mul(&self, a: &Scalar, b: &Scalar) -> Result<Scalar, CurveError> {
        let prod = (&a.0 * &b.0) % &self.params.n;
        if prod.is_zero() {
            return Err(CurveError::ZeroScalar);
        }
        Ok(Scalar(prod))
    }

    /// Multiplicative inverse modulo n.
    pub fn scalar_inv(&self, a: &Scalar) -> Scalar {
        let inv = mod_inverse(&a.0, &self.params.n).expect("n is prime and a is non-zero");
        Scalar(inv)
    }

    // ---- field helpers ----

    fn fsub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        let p = &self.params.p;
        if a >= b {
            (a - b) % p
        } else {
            (a + p - b) % p
        }
    }

    // ---- Jacobian internals ----

    fn to_jacobian(&self, point: &CurvePoint) -> Jacobian {
        match point {
            CurvePoint::Infinity => Jacobian::infinity(),
            CurvePoint::Affine { x, y } => Jacobian {
                x: x.clone(),
                y: y.clone(),
                z: BigUint::one(),
            },
        }
    }

    fn to_affine(&self, j: &Jacobian) -> CurvePoint {
        if j.z.is_zero() {
            return CurvePoint::Infinity;
        }
        let p = &self.params.p;
        let zinv = mod_inverse(&j.z, p).expect("non-zero z has an inverse mod prime p");
        let zinv2 = (&zinv * &zinv) % p;
        let zinv3 = (&zinv2 * &zinv) % p;
        CurvePoint::Affine {
            x: (&j.x * zinv2) % p,
            y: (&j.y * zinv3) % p,
        }
    }

    fn jac_double(&self, pt: &Jacobian) -> Jacobian {
        let p = &self.params.p;
        if pt.z.is_zero() || pt.y.is_zero() {
            return Jacobian::infinity();
        }
        let y2 = (&pt.y * &pt.y) % p;
        let s = (BigUint::from(4u8) * &pt.x % p * &y2) % p;
        let x2 = (&pt.x * &pt.x) % p;
        let z2 = (&pt.z * &pt.z) % p;
        let z4 = (&z2 * &z2) % p;
        let m = (BigUint::from(3u8) * &x2 + &self.params.a * z4) % p;
        let x3 = self.fsub(&((&m * &m) % p), &((BigUint::from(2u8) * &s) % p));
        let y4 = (&y2 * &y2) % p;
        let y3 = self.fsub(
            &(&m * self.fsub(&s, &x3) % p),
            &((BigUint::from(8u8) * y4) % p),
        );
        let z3 = (BigUint::from(2u8) * &pt.y % p * &pt.z) % p;
        Jacobian {
            x: x3,
            y: y3,
            z: z3,
        }
    }

    fn jac_add(&self, a: &Jacobian, b: &Jacobian) -> Jacobian {
        let p = &self.params.p;
        if a.z.is_zero() {
            return b.clone();
        }
        if b.z.is_zero() {
            return a.clone();
        }
        let z1z1 = (&a.z * &a.z) % p;
        let z2z2 = (&b.z * &b.z) % p;
        let u1 = (&a.x * &z2z2) % p;
        let u2 = (&b.x * &z1z1) % p;
        let s1 = (&a.y * &z2z2 % p * &b.z) % p;
        let s2 = (&b.y * &z1z1 % p * &a.z) % p;
        if u1 == u2 {
            if s1 != s2 {
                return Jacobian::infinity();
            }
            return self.jac_double(a);
        }
        let h = self.fsub(&u2, &u1);
        let r = self.fsub(&s2, &s1);
        let h2 = (&h * &h) % p;
        let h3 = (&h2 * &h) % p;
        let u1h2 = (&u1 * &h2) % p;
        let r2 = (&r * &r) % p;
        let x3 = self.fsub(&self.fsub(&r2, &h3), &((BigUint::from(2u8) * &u1h2) % p));
        let y3 = self.fsub(&(&r * self.fsub(&u1h2, &x3) % p), &((&s1 * &h3) % p));
        let z3 = (&a.z * &b.z % p * &h) % p;
        Jacobian {
            x: x3,
            y: y3,
            z: z3,
        }
    }
}

#[derive(Debug, Clone)]
struct Jacobian {
    x: BigUint,
    y: BigUint,
    z: BigUint,
}

impl Jacobian {
    fn infinity() -> Self {
        Jacobian {
            x: BigUint::one(),
            y: BigUint::one(),
            z: BigUint::zero(),
        }
    }
}

/// Inverse of `a` modulo `m` via the extended Euclidean algorithm.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from_biguint(Sign::Plus, a.clone());
    let m_int = BigInt::from_biguint(Sign::Plus, m.clone());
    let ext = a.extended_gcd(&m_int);
    if !ext.gcd.is_one() {
        return None;
    }
    let mut x = ext.x % &m_int;
    if x.sign() == Sign::Minus {
        x += &m_int;
    }
    x.to_biguint()
}
