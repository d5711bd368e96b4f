//! Hierarchical key derivation, generator values, and common secrets.
//!
//! Child keys are formed additively: a generator value — a hash of public
//! seed material reduced to a scalar — is added to the parent private key,
//! while the matching public key gains the generator value times the base
//! point. Either side of a relationship can therefore pre-compute the
//! other's public sub-key for any tree node from seeds alone, and matching
//! nodes across two hierarchies yield one ECDH point from both directions.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::curve::{Curve, CurveError, CurvePoint, Scalar};
use crate::error::ParseError;
use crate::hashes::{sha256, sha256_concat, Hash32};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("DegenerateGenerator: generator value reduced to zero")]
    DegenerateGenerator,
    #[error("DegenerateChildKey: derived key is zero or the point at infinity")]
    DegenerateChildKey,
    #[error("DegenerateSecret: common secret is the point at infinity")]
    DegenerateSecret,
    #[error("InvalidPoint: point is missing, off-curve, or the identity")]
    InvalidPoint,
    #[error("InvalidBasePoint: base point must be a finite curve point of full order")]
    InvalidBasePoint,
    #[error("InvalidDepth: sequential steps need depth ≥ 2, got {0}")]
    InvalidDepth(u32),
    #[error("Curve: {0}")]
    Curve(#[from] CurveError),
}

/// One edge class in the derivation tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathStep {
    /// An independent sibling: generator value = SHA-256(seed ‖ label).
    Parallel { seed: Hash32, label: Hash32 },
    /// Position `depth` on a rehash chain: each stage from 2 to `depth`
    /// contributes SHA-256 applied stage−1 times to the seed.
    Sequential { seed: Hash32, depth: u32 },
}

/// Tree coordinates of a key: an ordered list of steps from the master node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct KeyPath(Vec<PathStep>);

impl KeyPath {
    pub fn root() -> Self {
        KeyPath(Vec::new())
    }

    pub fn new(steps: Vec<PathStep>) -> Self {
        KeyPath(steps)
    }

    pub fn parallel(seed: Hash32, label: Hash32) -> Self {
        KeyPath(vec![PathStep::Parallel { seed, label }])
    }

    pub fn steps(&self) -> &[PathStep] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, step: PathStep) {
        self.0.push(step);
    }

    /// `self` followed by `suffix`.
    pub fn join(&self, suffix: &KeyPath) -> KeyPath {
        let mut steps = self.0.clone();
        steps.extend(suffix.0.iter().cloned());
        KeyPath(steps)
    }
}

impl fmt::Display for KeyPath {
    /// `p:<seedhex>:<labelhex>/s:<seedhex>:<depth>`; the master node is empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            match step {
                PathStep::Parallel { seed, label } => write!(f, "p:{}:{}", seed, label)?,
                PathStep::Sequential { seed, depth } => write!(f, "s:{}:{}", seed, depth)?,
            }
        }
        Ok(())
    }
}

impl FromStr for KeyPath {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(KeyPath::root());
        }
        let mut steps = Vec::new();
        for part in s.split('/') {
            let fields: Vec<&str> = part.split(':').collect();
            match fields.as_slice() {
                ["p", seed, label] => steps.push(PathStep::Parallel {
                    seed: Hash32::from_hex(seed)?,
                    label: Hash32::from_hex(label)?,
                }),
                ["s", seed, depth] => {
                    let depth: u32 = depth
                        .parse()
                        .map_err(|_| ParseError::BadPath(part.into()))?;
                    if depth < 2 {
                        return Err(ParseError::BadPath(part.into()));
                    }
                    steps.push(PathStep::Sequential {
                        seed: Hash32::from_hex(seed)?,
                        depth,
                    })
                }
                _ => return Err(ParseError::BadPath(part.into())),
            }
        }
        Ok(KeyPath(steps))
    }
}

impl Serialize for KeyPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for KeyPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// An asymmetric key pair positioned at a node of the derivation tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub sk: Scalar,
    pub pk: CurvePoint,
    pub path: KeyPath,
}

/// The ECDH point two counterparties compute independently at one tree node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonSecret {
    pub point: CurvePoint,
    pub path: KeyPath,
}

/// 32-byte symmetric key deterministically drawn from a common secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; 32]);

impl SymmetricKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// XOR keystream built from SHA-256(key ‖ block counter). Applying it
    /// twice restores the input; this models access control for repository
    /// bodies, not authenticated transport.
    pub fn xor_stream(&self, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(data.len());
        for (block, chunk) in data.chunks(32).enumerate() {
            let mut material = Vec::with_capacity(40);
            material.extend_from_slice(&self.0);
            material.extend_from_slice(&(block as u64).to_be_bytes());
            let pad = sha256(&material);
            for (i, byte) in chunk.iter().enumerate() {
                out.push(byte ^ pad.as_bytes()[i]);
            }
        }
        out
    }
}

/// SHA-256 applied `rounds` times; zero rounds is the identity.
pub fn iterated_hash(seed: &Hash32, rounds: u32) -> Hash32 {
    let mut h = *seed;
    for _ in 0..rounds {
        h = sha256(h.as_bytes());
    }
    h
}

/// Derivation context: a validated curve plus the base point every public
/// key is formed against. The base defaults to the curve generator and may
/// be any finite full-order point agreed per contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyDeriver {
    curve: Curve,
    base: CurvePoint,
}

impl KeyDeriver {
    /// secp256k1 with its standard generator.
    pub fn secp256k1() -> Self {
        let curve = Curve::secp256k1();
        let base = curve.generator();
        KeyDeriver { curve, base }
    }

    /// Custom base point; must be finite, on the curve, and of full order.
    pub fn with_base(curve: Curve, base: CurvePoint) -> Result<Self, KeyError> {
        if base.is_infinity() || !curve.contains(&base) {
            return Err(KeyError::InvalidBasePoint);
        }
        if !curve.mul_biguint(&base, curve.order()).is_infinity() {
            return Err(KeyError::InvalidBasePoint);
        }
        Ok(KeyDeriver { curve, base })
    }

    pub fn curve(&self) -> &Curve {
        &self.curve
    }

    pub fn base(&self) -> &CurvePoint {
        &self.base
    }

    /// Master pair from an explicit secret scalar, rooted at the empty path.
    pub fn keypair_from_secret(&self, sk: Scalar) -> KeyPair {
        let pk = self.curve.mul(&self.base, &sk);
        KeyPair {
            sk,
            pk,
            path: KeyPath::root(),
        }
    }

    /// Master pair whose secret is SHA-256 of arbitrary seed bytes, reduced.
    pub fn keypair_from_seed(&self, seed: &[u8]) -> Result<KeyPair, KeyError> {
        let sk = self
            .curve
            .scalar_from_hash(&sha256(seed))
            .map_err(|_| KeyError::DegenerateChildKey)?;
        Ok(self.keypair_from_secret(sk))
    }

    /// GV = SHA-256(seed ‖ label) reduced modulo the group order.
    pub fn generator_value(&self, seed: &Hash32, label: &Hash32) -> Result<Scalar, KeyError> {
        let digest = sha256_concat(seed.as_bytes(), label.as_bytes());
        self.curve
            .scalar_from_hash(&digest)
            .map_err(|_| KeyError::DegenerateGenerator)
    }

    /// child = (parent + gv) mod n.
    pub fn derive_child_private(&self, parent: &Scalar, gv: &Scalar) -> Result<Scalar, KeyError> {
        self.curve
            .scalar_add(parent, gv)
            .map_err(|_| KeyError::DegenerateChildKey)
    }

    /// pk = sk × base.
    pub fn public_from_private(&self, sk: &Scalar) -> CurvePoint {
        self.curve.mul(&self.base, sk)
    }

    /// child = parent + gv × base. Needs no private material.
    pub fn derive_child_public(
        &self,
        parent_pk: &CurvePoint,
        gv: &Scalar,
    ) -> Result<CurvePoint, KeyError> {
        if parent_pk.is_infinity() || !self.curve.contains(parent_pk) {
            return Err(KeyError::InvalidPoint);
        }
        let step = self.curve.mul(&self.base, gv);
        let child = self.curve.add(parent_pk, &step);
        if child.is_infinity() {
            return Err(KeyError::DegenerateChildKey);
        }
        Ok(child)
    }

    /// All generator values a path contributes, in application order.
    fn path_generators(&self, path: &KeyPath) -> Result<Vec<Scalar>, KeyError> {
        let mut gvs = Vec::new();
        for step in path.steps() {
            match step {
                PathStep::Parallel { seed, label } => gvs.push(self.generator_value(seed, label)?),
                PathStep::Sequential { seed, depth } => {
                    if *depth < 2 {
                        return Err(KeyError::InvalidDepth(*depth));
                    }
                    for stage in 2..=*depth {
                        let digest = iterated_hash(seed, stage - 1);
                        let gv = self
                            .curve
                            .scalar_from_hash(&digest)
                            .map_err(|_| KeyError::DegenerateGenerator)?;
                        gvs.push(gv);
                    }
                }
            }
        }
        Ok(gvs)
    }

    /// Fold a path over a master pair on the private side; the public key is
    /// recomputed from the final secret.
    pub fn derive_path(&self, master: &KeyPair, path: &KeyPath) -> Result<KeyPair, KeyError> {
        let mut sk = master.sk.clone();
        for gv in self.path_generators(path)? {
            sk = self.derive_child_private(&sk, &gv)?;
        }
        let pk = self.public_from_private(&sk);
        Ok(KeyPair {
            sk,
            pk,
            path: master.path.join(path),
        })
    }

    /// Fold a path on the public side only — pre-computable by the
    /// counterparty since the generator values are public seed material.
    pub fn derive_path_public(
        &self,
        master_pk: &CurvePoint,
        path: &KeyPath,
    ) -> Result<CurvePoint, KeyError> {
        if master_pk.is_infinity() || !self.curve.contains(master_pk) {
            return Err(KeyError::InvalidPoint);
        }
        let mut pk = master_pk.clone();
        for gv in self.path_generators(path)? {
            pk = self.derive_child_public(&pk, &gv)?;
        }
        Ok(pk)
    }

    /// ECDH at the root path: own_sk × other_pk.
    pub fn common_secret(
        &self,
        own_sk: &Scalar,
        other_pk: &CurvePoint,
    ) -> Result<CommonSecret, KeyError> {
        self.common_secret_at(own_sk, other_pk, KeyPath::root())
    }

    /// ECDH labelled with the tree node both sides derived their keys at.
    pub fn common_secret_at(
        &self,
        own_sk: &Scalar,
        other_pk: &CurvePoint,
        path: KeyPath,
    ) -> Result<CommonSecret, KeyError> {
        if other_pk.is_infinity() || !self.curve.contains(other_pk) {
            return Err(KeyError::InvalidPoint);
        }
        let point = self.curve.mul(other_pk, own_sk);
        if point.is_infinity() {
            return Err(KeyError::DegenerateSecret);
        }
        Ok(CommonSecret { point, path })
    }

    /// SHA-256 of the compressed common-secret point.
    pub fn symmetric_key_from_cs(&self, cs: &CommonSecret) -> SymmetricKey {
        let enc = self
            .curve
            .compress(&cs.point)
            .expect("common secrets are finite points");
        SymmetricKey(*sha256(&enc).as_bytes())
    }

    /// Compressed public-key hex, the interchange form used in documents.
    pub fn pk_hex(&self, pk: &CurvePoint) -> Result<String, KeyError> {
        Ok(hex::encode(self.curve.compress(pk)?))
    }

    pub fn pk_from_hex(&self, s: &str) -> Result<CurvePoint, KeyError> {
        let bytes = hex::decode(s).map_err(|_| KeyError::InvalidPoint)?;
        Ok(self.curve.decompress(&bytes)?)
    }
}
