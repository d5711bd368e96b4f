//! Minimal transaction-script language and its evaluator.
//!
//! The opcode set covers exactly what the engine's outputs need: data
//! pushes, DUP/HASH160/EQUAL(VERIFY) for pay-to-hash patterns, CHECKSIG,
//! and CHECKMULTISIG over redeem scripts whose slot list mixes public keys
//! with 32-byte metadata blocks. Metadata blocks count toward n but are
//! skipped during signature matching. Evaluation is total: malformed input
//! yields `false`, never a panic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::CurvePoint;
use crate::ecdsa::{verify, Signature};
use crate::hashes::{hash160, Hash20, Hash32};
use crate::keys::KeyDeriver;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("InvalidM: m must satisfy 1 ≤ m ≤ number of keys, got m={m} over {keys} keys")]
    InvalidM { m: u8, keys: usize },
    #[error("TooManyItems: keys + metadata blocks exceed 15 slots ({0})")]
    TooManyItems(usize),
    #[error("Malformed: {0}")]
    Malformed(String),
    #[error("InvalidKey: public key cannot be encoded")]
    InvalidKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opcode {
    Dup,
    Hash160,
    Equal,
    EqualVerify,
    CheckSig,
    CheckMultiSig,
    /// Small-integer constant 0..=16 (OP_m / OP_n).
    Num(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptItem {
    Push(#[serde(with = "hex::serde")] Vec<u8>),
    Op(Opcode),
}

impl ScriptItem {
    pub fn render(&self) -> String {
        match self {
            ScriptItem::Push(data) => format!("push:{}", hex::encode(data)),
            ScriptItem::Op(op) => format!("op:{}", op.name()),
        }
    }
}

impl Opcode {
    fn code(&self) -> u8 {
        match self {
            Opcode::Dup => 0x76,
            Opcode::Hash160 => 0xa9,
            Opcode::Equal => 0x87,
            Opcode::EqualVerify => 0x88,
            Opcode::CheckSig => 0xac,
            Opcode::CheckMultiSig => 0xae,
            Opcode::Num(k) => 0x50 + k,
        }
    }

    fn from_code(code: u8) -> Option<Opcode> {
        match code {
            0x76 => Some(Opcode::Dup),
            0xa9 => Some(Opcode::Hash160),
            0x87 => Some(Opcode::Equal),
            0x88 => Some(Opcode::EqualVerify),
            0xac => Some(Opcode::CheckSig),
            0xae => Some(Opcode::CheckMultiSig),
            0x50..=0x60 => Some(Opcode::Num(code - 0x50)),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Opcode::Dup => "DUP".into(),
            Opcode::Hash160 => "HASH160".into(),
            Opcode::Equal => "EQUAL".into(),
            Opcode::EqualVerify => "EQUALVERIFY".into(),
            Opcode::CheckSig => "CHECKSIG".into(),
            Opcode::CheckMultiSig => "CHECKMULTISIG".into(),
            Opcode::Num(k) => format!("{k}"),
        }
    }
}

/// Deterministic length-prefixed script encoding: pushes as
/// `0x01 ‖ u16 length ‖ bytes`, opcodes as `0x02 ‖ code`.
pub fn serialize_script(items: &[ScriptItem]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        match item {
            ScriptItem::Push(data) => {
                out.push(0x01);
                out.extend_from_slice(&(data.len() as u16).to_be_bytes());
                out.extend_from_slice(data);
            }
            ScriptItem::Op(op) => {
                out.push(0x02);
                out.push(op.code());
            }
        }
    }
    out
}

pub fn parse_script(bytes: &[u8]) -> Result<Vec<ScriptItem>, ScriptError> {
    let mut items = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        match bytes[pos] {
            0x01 => {
                if pos + 3 > bytes.len() {
                    return Err(ScriptError::Malformed("truncated push header".into()));
                }
                let len = u16::from_be_bytes([bytes[pos + 1], bytes[pos + 2]]) as usize;
                pos += 3;
                if pos + len > bytes.len() {
                    return Err(ScriptError::Malformed("truncated push data".into()));
                }
                items.push(ScriptItem::Push(bytes[pos..pos + len].to_vec()));
                pos += len;
            }
            0x02 => {
                if pos + 2 > bytes.len() {
                    return Err(ScriptError::Malformed("truncated opcode".into()));
                }
                let op = Opcode::from_code(bytes[pos + 1]).ok_or_else(|| {
                    ScriptError::Malformed(format!("unknown opcode {:#04x}", bytes[pos + 1]))
                })?;
                items.push(ScriptItem::Op(op));
                pos += 2;
            }
            tag => {
                return Err(ScriptError::Malformed(format!(
                    "unknown item tag {tag:#04x}"
                )))
            }
        }
    }
    Ok(items)
}

/// A compressed public key as it appears inside scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressedKey(pub [u8; 33]);

impl CompressedKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl Serialize for CompressedKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CompressedKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 33] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 33 bytes"))?;
        Ok(CompressedKey(arr))
    }
}

/// An m-of-n multisig redeem script whose slot list carries both public
/// keys and 32-byte metadata blocks; n counts every slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedeemScript {
    pub m: u8,
    /// Compressed public keys, in signing order.
    pub keys: Vec<CompressedKey>,
    /// 32-byte metadata blocks (repository look-up keys, line pointers).
    pub metadata: Vec<Hash32>,
}

impl RedeemScript {
    pub fn n(&self) -> usize {
        self.keys.len() + self.metadata.len()
    }

    /// Layout: OP_m, metadata pushes, key pushes, OP_n, OP_CHECKMULTISIG.
    pub fn to_items(&self) -> Vec<ScriptItem> {
        let mut items = vec![ScriptItem::Op(Opcode::Num(self.m))];
        for block in &self.metadata {
            items.push(ScriptItem::Push(block.as_bytes().to_vec()));
        }
        for key in &self.keys {
            items.push(ScriptItem::Push(key.0.to_vec()));
        }
        items.push(ScriptItem::Op(Opcode::Num(self.n() as u8)));
        items.push(ScriptItem::Op(Opcode::CheckMultiSig));
        items
    }

    pub fn script_bytes(&self) -> Vec<u8> {
        serialize_script(&self.to_items())
    }

    /// HASH160 of the canonical script bytes — the P2SH address.
    pub fn p2sh_address(&self) -> Hash20 {
        hash160(&self.script_bytes())
    }
}

/// Validates slot counts and assembles a redeem script.
pub fn build_redeem_script(
    deriver: &KeyDeriver,
    m: u8,
    keys: &[CurvePoint],
    metadata: &[Hash32],
) -> Result<RedeemScript, ScriptError> {
    if m == 0 || m as usize > keys.len() {
        return Err(ScriptError::InvalidM {
            m,
            keys: keys.len(),
        });
    }
    let n = keys.len() + metadata.len();
    if n > 15 {
        return Err(ScriptError::TooManyItems(n));
    }
    let mut encoded = Vec::with_capacity(keys.len());
    for key in keys {
        let bytes = deriver
            .curve()
            .compress(key)
            .map_err(|_| ScriptError::InvalidKey)?;
        encoded.push(CompressedKey(bytes));
    }
    Ok(RedeemScript {
        m,
        keys: encoded,
        metadata: metadata.to_vec(),
    })
}

/// Where an output's value is locked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptPubkey {
    P2sh(Hash20),
    P2pkh(Hash20),
}

impl ScriptPubkey {
    pub fn render(&self) -> String {
        match self {
            ScriptPubkey::P2sh(h) => format!("P2SH {h}"),
            ScriptPubkey::P2pkh(h) => format!("P2PKH {h}"),
        }
    }
}

/// HASH160 of a compressed public key, for P2PKH outputs.
pub fn p2pkh_hash(deriver: &KeyDeriver, pk: &CurvePoint) -> Result<Hash20, ScriptError> {
    let enc = deriver
        .curve()
        .compress(pk)
        .map_err(|_| ScriptError::InvalidKey)?;
    Ok(hash160(&enc))
}

/// Evaluate an unlocking script against an output script for a transaction
/// digest. Total: every malformed case is `false`.
pub fn eval(
    deriver: &KeyDeriver,
    script_sig: &[ScriptItem],
    script_pubkey: &ScriptPubkey,
    digest: &Hash32,
) -> bool {
    // Unlocking data must be push-only.
    let mut stack: Vec<Vec<u8>> = Vec::new();
    for item in script_sig {
        match item {
            ScriptItem::Push(data) => stack.push(data.clone()),
            ScriptItem::Op(_) => return false,
        }
    }
    match script_pubkey {
        ScriptPubkey::P2pkh(key_hash) => {
            let program = [
                ScriptItem::Op(Opcode::Dup),
                ScriptItem::Op(Opcode::Hash160),
                ScriptItem::Push(key_hash.as_bytes().to_vec()),
                ScriptItem::Op(Opcode::EqualVerify),
                ScriptItem::Op(Opcode::CheckSig),
            ];
            run(deriver, &program, stack, digest)
        }
        ScriptPubkey::P2sh(script_hash) => {
            // The embedded script's hash gates evaluation.
            let Some(redeem_bytes) = stack.pop() else {
                return false;
            };
            if hash160(&redeem_bytes) != *script_hash {
                return false;
            }
            let Ok(program) = parse_script(&redeem_bytes) else {
                return false;
            };
            run(deriver, &program, stack, digest)
        }
    }
}

fn run(
    deriver: &KeyDeriver,
    program: &[ScriptItem],
    mut stack: Vec<Vec<u8>>,
    digest: &Hash32,
) -> bool {
    for item in program {
        match item {
            ScriptItem::Push(data) => stack.push(data.clone()),
            ScriptItem::Op(op) => match op {
                Opcode::Num(k) => stack.push(encode_num(*k)),
                Opcode::Dup => {
                    let Some(top) = stack.last().cloned() else {
                        return false;
                    };
                    stack.push(top);
                }
                Opcode::Hash160 => {
                    let Some(top) = stack.pop() else { return false };
                    stack.push(hash160(&top).as_bytes().to_vec());
                }
                Opcode::Equal => {
                    let (Some(a), Some(b)) = (stack.pop(), stack.pop()) else {
                        return false;
                    };
                    stack.push(encode_bool(a == b));
                }
                Opcode::EqualVerify => {
                    let (Some(a), Some(b)) = (stack.pop(), stack.pop()) else {
                        return false;
                    };
                    if a != b {
                        return false;
                    }
                }
                Opcode::CheckSig => {
                    let (Some(pk), Some(sig)) = (stack.pop(), stack.pop()) else {
                        return false;
                    };
                    stack.push(encode_bool(check_one(deriver, &sig, &pk, digest)));
                }
                Opcode::CheckMultiSig => {
                    let Some(result) = check_multisig(deriver, &mut stack, digest) else {
                        return false;
                    };
                    stack.push(encode_bool(result));
                }
            },
        }
    }
    matches!(stack.last(), Some(top) if truthy(top))
}

/// Pops n, the n slot items, m, and treats everything left on the stack as
/// the provided signatures. Every signature must match a distinct slot key
/// in order; metadata blocks never match; at least m signatures required.
fn check_multisig(deriver: &KeyDeriver, stack: &mut Vec<Vec<u8>>, digest: &Hash32) -> Option<bool> {
    let n = decode_num(&stack.pop()?)?;
    if n as usize > stack.len() {
        return None;
    }
    let mut slots: Vec<Vec<u8>> = Vec::with_capacity(n as usize);
    for _ in 0..n {
        slots.push(stack.pop()?);
    }
    slots.reverse(); // restore script order
    let m = decode_num(&stack.pop()?)?;
    if m == 0 || m > n {
        return None;
    }
    // Everything below m on the stack is the provided signatures, bottom to
    // top in signing order.
    let sigs: Vec<Vec<u8>> = std::mem::take(stack);
    if (sigs.len() as u8) < m {
        return Some(false);
    }
    let mut slot_iter = slots.iter();
    for sig in &sigs {
        let mut matched = false;
        for slot in slot_iter.by_ref() {
            if check_one(deriver, sig, slot, digest) {
                matched = true;
                break;
            }
        }
        if !matched {
            return Some(false);
        }
    }
    Some(true)
}

/// One signature against one slot item. Non-key slots (wrong length or
/// undecodable bytes) match nothing.
fn check_one(deriver: &KeyDeriver, sig: &[u8], slot: &[u8], digest: &Hash32) -> bool {
    if slot.len() != 33 {
        return false;
    }
    let Ok(pk) = deriver.curve().decompress(slot) else {
        return false;
    };
    let Some(signature) = Signature::from_bytes(deriver, sig) else {
        return false;
    };
    verify(deriver, &pk, digest, &signature)
}

fn encode_bool(b: bool) -> Vec<u8> {
    if b {
        vec![1]
    } else {
        Vec::new()
    }
}

fn encode_num(k: u8) -> Vec<u8> {
    if k == 0 {
        Vec::new()
    } else {
        vec![k]
    }
}

fn decode_num(bytes: &[u8]) -> Option<u8> {
    match bytes {
        [] => Some(0),
        [k] if *k <= 16 => Some(*k),
        _ => None,
    }
}

fn truthy(bytes: &[u8]) -> bool {
    bytes.iter().any(|b| *b != 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecdsa::sign;
    use crate::hashes::sha256;
    use crate::keys::KeyPair;

    fn setup() -> (KeyDeriver, Vec<KeyPair>, Hash32) {
        let d = KeyDeriver::secp256k1();
        let pairs = (0u8..4)
            .map(|i| {
                d.keypair_from_seed(&[b"script key ".as_slice(), &[i]].concat())
                    .unwrap()
            })
            .collect();
        (d, pairs, sha256(b"spend digest"))
    }

    fn meta(byte: u8) -> Hash32 {
        Hash32([byte; 32])
    }

    #[test]
    fn redeem_layout_matches_slot_counts() {
        let (d, pairs, _) = setup();
        let keys = [pairs[0].pk.clone(), pairs[1].pk.clone()];
        let script = build_redeem_script(&d, 2, &keys, &[meta(1), meta(2)]).unwrap();
        assert_eq!(script.n(), 4);
        let items = script.to_items();
        assert_eq!(items[0], ScriptItem::Op(Opcode::Num(2)));
        assert_eq!(items[5], ScriptItem::Op(Opcode::Num(4)));
        assert_eq!(items[6], ScriptItem::Op(Opcode::CheckMultiSig));

        let three_keys = [
            pairs[0].pk.clone(),
            pairs[1].pk.clone(),
            pairs[2].pk.clone(),
        ];
        let wider = build_redeem_script(&d, 2, &three_keys, &[meta(1), meta(2)]).unwrap();
        assert_eq!(wider.n(), 5);
    }

    #[test]
    fn redeem_rejects_bad_m_and_overflow() {
        let (d, pairs, _) = setup();
        let keys = [pairs[0].pk.clone()];
        assert!(matches!(
            build_redeem_script(&d, 2, &keys, &[]),
            Err(ScriptError::InvalidM { .. })
        ));
        assert!(matches!(
            build_redeem_script(&d, 0, &keys, &[]),
            Err(ScriptError::InvalidM { .. })
        ));
        let blocks: Vec<Hash32> = (0..15).map(meta).collect();
        assert!(matches!(
            build_redeem_script(&d, 1, &keys, &blocks),
            Err(ScriptError::TooManyItems(16))
        ));
    }

    #[test]
    fn p2sh_address_is_deterministic_and_order_sensitive() {
        let (d, pairs, _) = setup();
        let keys = [pairs[0].pk.clone(), pairs[1].pk.clone()];
        let a = build_redeem_script(&d, 2, &keys, &[meta(1), meta(2)]).unwrap();
        let b = build_redeem_script(&d, 2, &keys, &[meta(1), meta(2)]).unwrap();
        assert_eq!(a.p2sh_address(), b.p2sh_address());
        let swapped = build_redeem_script(&d, 2, &keys, &[meta(2), meta(1)]).unwrap();
        assert_ne!(a.p2sh_address(), swapped.p2sh_address());
    }

    #[test]
    fn script_bytes_parse_round_trip() {
        let (d, pairs, _) = setup();
        let script = build_redeem_script(&d, 1, &[pairs[0].pk.clone()], &[meta(9)]).unwrap();
        let bytes = script.script_bytes();
        assert_eq!(parse_script(&bytes).unwrap(), script.to_items());
        assert!(parse_script(&[0x01, 0x00]).is_err());
        assert!(parse_script(&[0xff]).is_err());
    }

    #[test]
    fn multisig_two_of_two_with_metadata() {
        let (d, pairs, digest) = setup();
        let keys = [pairs[0].pk.clone(), pairs[1].pk.clone()];
        let script = build_redeem_script(&d, 2, &keys, &[meta(1), meta(2)]).unwrap();
        let spk = ScriptPubkey::P2sh(script.p2sh_address());

        let sig0 = sign(&d, &pairs[0].sk, &digest);
        let sig1 = sign(&d, &pairs[1].sk, &digest);
        let full = vec![
            ScriptItem::Push(sig0.to_bytes().to_vec()),
            ScriptItem::Push(sig1.to_bytes().to_vec()),
            ScriptItem::Push(script.script_bytes()),
        ];
        assert!(eval(&d, &full, &spk, &digest));

        // One signature cannot satisfy m = 2.
        let short = vec![
            ScriptItem::Push(sig0.to_bytes().to_vec()),
            ScriptItem::Push(script.script_bytes()),
        ];
        assert!(!eval(&d, &short, &spk, &digest));

        // Order must follow the key list.
        let swapped = vec![
            ScriptItem::Push(sig1.to_bytes().to_vec()),
            ScriptItem::Push(sig0.to_bytes().to_vec()),
            ScriptItem::Push(script.script_bytes()),
        ];
        assert!(!eval(&d, &swapped, &spk, &digest));
    }

    #[test]
    fn multisig_skips_unsigned_keys() {
        let (d, pairs, digest) = setup();
        let keys = [
            pairs[0].pk.clone(),
            pairs[1].pk.clone(),
            pairs[2].pk.clone(),
        ];
        let script = build_redeem_script(&d, 2, &keys, &[meta(7)]).unwrap();
        let spk = ScriptPubkey::P2sh(script.p2sh_address());
        // Keys 1 and 2 sign; key 0 is skipped.
        let sig1 = sign(&d, &pairs[1].sk, &digest);
        let sig2 = sign(&d, &pairs[2].sk, &digest);
        let items = vec![
            ScriptItem::Push(sig1.to_bytes().to_vec()),
            ScriptItem::Push(sig2.to_bytes().to_vec()),
            ScriptItem::Push(script.script_bytes()),
        ];
        assert!(eval(&d, &items, &spk, &digest));
    }

    #[test]
    fn p2sh_rejects_wrong_embedded_script() {
        let (d, pairs, digest) = setup();
        let script = build_redeem_script(&d, 1, &[pairs[0].pk.clone()], &[]).unwrap();
        let other = build_redeem_script(&d, 1, &[pairs[1].pk.clone()], &[]).unwrap();
        let spk = ScriptPubkey::P2sh(script.p2sh_address());
        let sig = sign(&d, &pairs[1].sk, &digest);
        let items = vec![
            ScriptItem::Push(sig.to_bytes().to_vec()),
            ScriptItem::Push(other.script_bytes()),
        ];
        assert!(!eval(&d, &items, &spk, &digest));
    }

    #[test]
    fn p2pkh_happy_and_sad_paths() {
        let (d, pairs, digest) = setup();
        let hash = p2pkh_hash(&d, &pairs[0].pk).unwrap();
        let spk = ScriptPubkey::P2pkh(hash);
        let sig = sign(&d, &pairs[0].sk, &digest);
        let pk_bytes = d.curve().compress(&pairs[0].pk).unwrap().to_vec();
        let good = vec![
            ScriptItem::Push(sig.to_bytes().to_vec()),
            ScriptItem::Push(pk_bytes.clone()),
        ];
        assert!(eval(&d, &good, &spk, &digest));

        let wrong_key = vec![
            ScriptItem::Push(sig.to_bytes().to_vec()),
            ScriptItem::Push(d.curve().compress(&pairs[1].pk).unwrap().to_vec()),
        ];
        assert!(!eval(&d, &wrong_key, &spk, &digest));

        // Ops in the unlocking script are rejected outright.
        let with_op = vec![ScriptItem::Op(Opcode::Dup), ScriptItem::Push(pk_bytes)];
        assert!(!eval(&d, &with_op, &spk, &digest));
    }

    #[test]
    fn hash160_of_generator_matches_published_vector() {
        // HASH160 of the compressed secp256k1 generator, a widely published
        // value, ties compression and hashing to external truth.
        let d = KeyDeriver::secp256k1();
        let hash = p2pkh_hash(&d, &d.curve().generator()).unwrap();
        assert_eq!(hash.to_hex(), "751e76e8199196d454941c45d1b3a323f1433bd6");
    }

    #[test]
    fn eval_never_panics_on_junk() {
        let (d, _, digest) = setup();
        let spk = ScriptPubkey::P2sh(hash160(b"nothing sensible"));
        assert!(!eval(&d, &[], &spk, &digest));
        let junk = vec![ScriptItem::Push(vec![0xde, 0xad])];
        assert!(!eval(&d, &junk, &spk, &digest));
    }
}
