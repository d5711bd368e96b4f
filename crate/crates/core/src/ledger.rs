//! Simulated UTXO ledger.
//!
//! One broadcast confirms one transaction into its own block; `tick`
//! advances an empty block so lock-times can mature. The chain never
//! reorganises and keeps full history, so contract status is always
//! readable from public data alone.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::curve::Scalar;
use crate::ecdsa::sign;
use crate::hashes::{sha256, Hash32};
use crate::keys::KeyDeriver;
use crate::script::{eval, serialize_script, ScriptItem, ScriptPubkey};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("UnknownPrevOut: input {0} does not reference a confirmed output")]
    UnknownPrevOut(OutPoint),
    #[error("DoubleSpend: output {0} is already spent")]
    DoubleSpend(OutPoint),
    #[error("ScriptFailure: input {0} does not satisfy its output script")]
    ScriptFailure(u32),
    #[error("Immature: lock_time {lock_time} exceeds current height {height}")]
    Immature { lock_time: u64, height: u64 },
    #[error("OutputsExceedInputs: outputs {outputs} exceed spendable inputs {inputs}")]
    OutputsExceedInputs { inputs: u64, outputs: u64 },
    #[error("MalformedTransaction: {0}")]
    MalformedTransaction(String),
    #[error("DuplicateTransaction: {0} is already confirmed")]
    DuplicateTransaction(Hash32),
    #[error("BadInputIndex: transaction has no input {0}")]
    BadInputIndex(u32),
    #[error("CorruptSnapshot: {0}")]
    CorruptSnapshot(String),
}

/// Reference to one output of a confirmed transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Hash32,
    pub index: u32,
}

impl OutPoint {
    pub fn new(txid: Hash32, index: u32) -> Self {
        OutPoint { txid, index }
    }

    /// Funding transactions mint value from outside the chain; they mark
    /// their single input with the zero txid and a per-funding counter.
    pub fn funding_marker(counter: u32) -> Self {
        OutPoint {
            txid: Hash32::ZERO,
            index: counter,
        }
    }

    pub fn is_funding_marker(&self) -> bool {
        self.txid == Hash32::ZERO
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxInput {
    pub prev: OutPoint,
    pub script_sig: Vec<ScriptItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutput {
    pub value: u64,
    pub script_pubkey: ScriptPubkey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
    pub lock_time: u64,
}

const TX_VERSION: u32 = 1;

impl Transaction {
    /// Deterministic length-prefixed body; `with_sigs = false` empties every
    /// unlocking script, which is the form signatures commit to.
    fn serialize_body(&self, with_sigs: bool) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&TX_VERSION.to_be_bytes());
        out.extend_from_slice(&(self.inputs.len() as u32).to_be_bytes());
        for input in &self.inputs {
            out.extend_from_slice(input.prev.txid.as_bytes());
            out.extend_from_slice(&input.prev.index.to_be_bytes());
            let script = if with_sigs {
                serialize_script(&input.script_sig)
            } else {
                Vec::new()
            };
            out.extend_from_slice(&(script.len() as u32).to_be_bytes());
            out.extend_from_slice(&script);
        }
        out.extend_from_slice(&(self.outputs.len() as u32).to_be_bytes());
        for output in &self.outputs {
            out.extend_from_slice(&output.value.to_be_bytes());
            match &output.script_pubkey {
                ScriptPubkey::P2sh(h) => {
                    out.push(0x01);
                    out.extend_from_slice(h.as_bytes());
                }
                ScriptPubkey::P2pkh(h) => {
                    out.push(0x02);
                    out.extend_from_slice(h.as_bytes());
                }
            }
        }
        out.extend_from_slice(&self.lock_time.to_be_bytes());
        out
    }

    /// SHA-256 of the full canonical serialization.
    pub fn id(&self) -> Hash32 {
        sha256(&self.serialize_body(true))
    }

    /// Digest an input signature commits to: the body with every unlocking
    /// script emptied, followed by the input index.
    pub fn sighash(&self, input_index: u32) -> Hash32 {
        let mut body = self.serialize_body(false);
        body.extend_from_slice(&input_index.to_be_bytes());
        sha256(&body)
    }

    pub fn outpoint(&self, index: u32) -> OutPoint {
        OutPoint::new(self.id(), index)
    }
}

/// Spend state of an output as read from public chain data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtxoStatus {
    Unspent,
    Spent(Hash32),
    Unknown,
}

impl fmt::Display for UtxoStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtxoStatus::Unspent => write!(f, "Unspent"),
            UtxoStatus::Spent(by) => write!(f, "Spent by {by}"),
            UtxoStatus::Unknown => write!(f, "Unknown"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub txs: Vec<Transaction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UtxoEntry {
    output: TxOutput,
    spent_by: Option<Hash32>,
}

/// Ledger conservation figures recomputed from the block list alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerAudit {
    pub total_funded: u64,
    pub total_fees: u64,
    pub total_unspent: u64,
    pub double_spend_free: bool,
}

impl LedgerAudit {
    pub fn conserved(&self) -> bool {
        self.double_spend_free && self.total_unspent + self.total_fees == self.total_funded
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    deriver: KeyDeriver,
    blocks: Vec<Block>,
    utxos: std::collections::BTreeMap<OutPoint, UtxoEntry>,
    funding_counter: u32,
}

impl Chain {
    pub fn new(deriver: KeyDeriver) -> Self {
        Chain {
            deriver,
            blocks: Vec::new(),
            utxos: std::collections::BTreeMap::new(),
            funding_counter: 0,
        }
    }

    pub fn deriver(&self) -> &KeyDeriver {
        &self.deriver
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    /// Mint `value` to an output script. Models the external funds agents
    /// and issuers bring to the chain.
    pub fn fund(&mut self, script_pubkey: ScriptPubkey, value: u64) -> OutPoint {
        let tx = Transaction {
            inputs: vec![TxInput {
                prev: OutPoint::funding_marker(self.funding_counter),
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value,
                script_pubkey,
            }],
            lock_time: 0,
        };
        self.funding_counter += 1;
        let txid = tx.id();
        self.confirm(tx);
        OutPoint::new(txid, 0)
    }

    /// Validate and confirm a transaction into the next block.
    pub fn broadcast(&mut self, tx: Transaction) -> Result<Hash32, LedgerError> {
        let txid = tx.id();
        if self.find_tx(&txid).is_some() {
            return Err(LedgerError::DuplicateTransaction(txid));
        }
        if tx.inputs.is_empty() || tx.outputs.is_empty() {
            return Err(LedgerError::MalformedTransaction(
                "needs at least one input and one output".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for input in &tx.inputs {
            if input.prev.is_funding_marker() {
                return Err(LedgerError::UnknownPrevOut(input.prev));
            }
            if !seen.insert(input.prev) {
                return Err(LedgerError::DoubleSpend(input.prev));
            }
        }
        if tx.lock_time > self.height() {
            return Err(LedgerError::Immature {
                lock_time: tx.lock_time,
                height: self.height(),
            });
        }
        let mut input_total: u64 = 0;
        for input in &tx.inputs {
            let entry = self
                .utxos
                .get(&input.prev)
                .ok_or(LedgerError::UnknownPrevOut(input.prev))?;
            if entry.spent_by.is_some() {
                return Err(LedgerError::DoubleSpend(input.prev));
            }
            input_total = input_total
                .checked_add(entry.output.value)
                .ok_or_else(|| LedgerError::MalformedTransaction("input value overflow".into()))?;
        }
        let mut output_total: u64 = 0;
        for output in &tx.outputs {
            output_total = output_total
                .checked_add(output.value)
                .ok_or_else(|| LedgerError::MalformedTransaction("output value overflow".into()))?;
        }
        if output_total > input_total {
            return Err(LedgerError::OutputsExceedInputs {
                inputs: input_total,
                outputs: output_total,
            });
        }
        for (i, input) in tx.inputs.iter().enumerate() {
            let spk = self.utxos[&input.prev].output.script_pubkey.clone();
            if !eval_script(
                &self.deriver,
                &input.script_sig,
                &spk,
                &tx,
                i as u32,
                self.height(),
            ) {
                return Err(LedgerError::ScriptFailure(i as u32));
            }
        }
        self.confirm(tx);
        Ok(txid)
    }

    fn confirm(&mut self, tx: Transaction) {
        let txid = tx.id();
        for input in &tx.inputs {
            if !input.prev.is_funding_marker() {
                self.utxos.get_mut(&input.prev).expect("validated").spent_by = Some(txid);
            }
        }
        for (i, output) in tx.outputs.iter().enumerate() {
            self.utxos.insert(
                OutPoint::new(txid, i as u32),
                UtxoEntry {
                    output: output.clone(),
                    spent_by: None,
                },
            );
        }
        let height = self.height() + 1;
        self.blocks.push(Block {
            height,
            txs: vec![tx],
        });
    }

    /// Advance one empty block.
    pub fn tick(&mut self) {
        let height = self.height() + 1;
        self.blocks.push(Block {
            height,
            txs: Vec::new(),
        });
    }

    pub fn utxo_status(&self, outpoint: &OutPoint) -> UtxoStatus {
        match self.utxos.get(outpoint) {
            None => UtxoStatus::Unknown,
            Some(UtxoEntry {
                spent_by: Some(txid),
                ..
            }) => UtxoStatus::Spent(*txid),
            Some(_) => UtxoStatus::Unspent,
        }
    }

    pub fn output(&self, outpoint: &OutPoint) -> Option<&TxOutput> {
        self.utxos.get(outpoint).map(|e| &e.output)
    }

    pub fn find_tx(&self, txid: &Hash32) -> Option<&Transaction> {
        self.blocks
            .iter()
            .flat_map(|b| b.txs.iter())
            .find(|tx| tx.id() == *txid)
    }

    /// Transactions confirmed in the block at `height` (1-based).
    pub fn txs_at(&self, height: u64) -> Vec<Transaction> {
        self.blocks
            .iter()
            .find(|b| b.height == height)
            .map(|b| b.txs.clone())
            .unwrap_or_default()
    }

    /// Unspent outputs locked to a script, in outpoint order.
    pub fn unspent_by_script(&self, script_pubkey: &ScriptPubkey) -> Vec<(OutPoint, u64)> {
        self.utxos
            .iter()
            .filter(|(_, e)| e.spent_by.is_none() && e.output.script_pubkey == *script_pubkey)
            .map(|(op, e)| (*op, e.output.value))
            .collect()
    }

    /// Sign one input with a secret key, producing the signature push item.
    /// The input must reference a confirmed output.
    pub fn sign_input(
        &self,
        tx: &Transaction,
        input_index: u32,
        sk: &Scalar,
    ) -> Result<ScriptItem, LedgerError> {
        let input = tx
            .inputs
            .get(input_index as usize)
            .ok_or(LedgerError::BadInputIndex(input_index))?;
        if !self.utxos.contains_key(&input.prev) {
            return Err(LedgerError::UnknownPrevOut(input.prev));
        }
        let sig = sign(&self.deriver, sk, &tx.sighash(input_index));
        Ok(ScriptItem::Push(sig.to_bytes().to_vec()))
    }

    /// Recompute conservation figures from the block list alone, ignoring
    /// the incremental UTXO bookkeeping.
    pub fn audit(&self) -> LedgerAudit {
        let mut fresh: std::collections::BTreeMap<OutPoint, (u64, bool)> = Default::default();
        let mut total_funded = 0u64;
        let mut total_fees = 0u64;
        let mut double_spend_free = true;
        for block in &self.blocks {
            for tx in &block.txs {
                let txid = tx.id();
                let funding = tx.inputs.iter().all(|i| i.prev.is_funding_marker());
                let mut spent = 0u64;
                if funding {
                    total_funded += tx.outputs.iter().map(|o| o.value).sum::<u64>();
                } else {
                    for input in &tx.inputs {
                        match fresh.get_mut(&input.prev) {
                            Some((value, unspent)) => {
                                if !*unspent {
                                    double_spend_free = false;
                                }
                                spent += *value;
                                *unspent = false;
                            }
                            None => double_spend_free = false,
                        }
                    }
                    let out: u64 = tx.outputs.iter().map(|o| o.value).sum();
                    total_fees += spent.saturating_sub(out);
                }
                for (i, output) in tx.outputs.iter().enumerate() {
                    fresh.insert(OutPoint::new(txid, i as u32), (output.value, true));
                }
            }
        }
        let total_unspent = fresh
            .values()
            .filter(|(_, unspent)| *unspent)
            .map(|(v, _)| v)
            .sum();
        LedgerAudit {
            total_funded,
            total_fees,
            total_unspent,
            double_spend_free,
        }
    }

    /// Chain state as a canonical-serializable document.
    pub fn dump_json(&self) -> serde_json::Value {
        json!({
            "height": self.height(),
            "blocks": self.blocks.iter().map(|b| json!({
                "height": b.height,
                "txs": b.txs.iter().map(|tx| json!({
                    "id": tx.id().to_hex(),
                    "tx": serde_json::to_value(tx).expect("transactions serialize"),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }

    /// Serializable snapshot of the full chain state.
    pub fn snapshot(&self) -> ChainSnapshot {
        let params = self.deriver.curve().params();
        ChainSnapshot {
            curve: CurveSnapshot {
                p: params.p.to_str_radix(16),
                a: params.a.to_str_radix(16),
                b: params.b.to_str_radix(16),
                gx: params.gx.to_str_radix(16),
                gy: params.gy.to_str_radix(16),
                n: params.n.to_str_radix(16),
            },
            base: hex::encode(
                self.deriver
                    .curve()
                    .compress(self.deriver.base())
                    .expect("base is finite"),
            ),
            blocks: self.blocks.clone(),
            funding_counter: self.funding_counter,
        }
    }

    /// Rebuild a chain from a snapshot, replaying every block to restore
    /// the UTXO set.
    pub fn restore(snapshot: &ChainSnapshot) -> Result<Chain, LedgerError> {
        use num_bigint::BigUint;
        let corrupt = |m: &str| LedgerError::CorruptSnapshot(m.to_string());
        let big = |s: &str| {
            BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| corrupt("bad curve constant"))
        };
        let params = crate::curve::CurveParams {
            p: big(&snapshot.curve.p)?,
            a: big(&snapshot.curve.a)?,
            b: big(&snapshot.curve.b)?,
            gx: big(&snapshot.curve.gx)?,
            gy: big(&snapshot.curve.gy)?,
            n: big(&snapshot.curve.n)?,
        };
        let curve = crate::curve::Curve::new(params).map_err(|e| corrupt(&e.to_string()))?;
        let base_bytes = hex::decode(&snapshot.base).map_err(|_| corrupt("bad base point hex"))?;
        let base = curve
            .decompress(&base_bytes)
            .map_err(|e| corrupt(&e.to_string()))?;
        let deriver = KeyDeriver::with_base(curve, base).map_err(|e| corrupt(&e.to_string()))?;
        let mut chain = Chain::new(deriver);
        for (i, block) in snapshot.blocks.iter().enumerate() {
            if block.height != i as u64 + 1 {
                return Err(corrupt("non-sequential block heights"));
            }
            for tx in &block.txs {
                let txid = tx.id();
                for input in &tx.inputs {
                    if input.prev.is_funding_marker() {
                        continue;
                    }
                    let entry = chain
                        .utxos
                        .get_mut(&input.prev)
                        .ok_or_else(|| corrupt("input references a missing output"))?;
                    if entry.spent_by.is_some() {
                        return Err(corrupt("double spend in snapshot"));
                    }
                    entry.spent_by = Some(txid);
                }
                for (j, output) in tx.outputs.iter().enumerate() {
                    chain.utxos.insert(
                        OutPoint::new(txid, j as u32),
                        UtxoEntry {
                            output: output.clone(),
                            spent_by: None,
                        },
                    );
                }
            }
            chain.blocks.push(block.clone());
        }
        chain.funding_counter = snapshot.funding_counter;
        Ok(chain)
    }

    /// Human-readable dump of every confirmed transaction.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            for tx in &block.txs {
                out.push_str(&render_tx(tx, Some(block.height)));
                out.push('\n');
            }
        }
        out
    }
}

/// Serializable curve parameters, as lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveSnapshot {
    pub p: String,
    pub a: String,
    pub b: String,
    pub gx: String,
    pub gy: String,
    pub n: String,
}

/// Full chain state for persistence across CLI invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSnapshot {
    pub curve: CurveSnapshot,
    pub base: String,
    pub blocks: Vec<Block>,
    pub funding_counter: u32,
}

/// Field-by-field transaction listing in the classic dump layout.
pub fn render_tx(tx: &Transaction, height: Option<u64>) -> String {
    let mut s = String::new();
    s.push_str(&format!("Transaction-ID: {}\n", tx.id()));
    if let Some(h) = height {
        s.push_str(&format!("Block-Height: {h}\n"));
    }
    s.push_str(&format!("Version: {TX_VERSION}\n"));
    s.push_str(&format!("Inputs: {}\n", tx.inputs.len()));
    for (i, input) in tx.inputs.iter().enumerate() {
        s.push_str(&format!("  [{i}] Previous Output: {}\n", input.prev));
        let rendered: Vec<String> = input.script_sig.iter().map(|it| it.render()).collect();
        s.push_str(&format!("      ScriptSig: {}\n", rendered.join(" ")));
    }
    s.push_str(&format!("Outputs: {}\n", tx.outputs.len()));
    for (i, output) in tx.outputs.iter().enumerate() {
        s.push_str(&format!("  [{i}] Value: {}\n", output.value));
        s.push_str(&format!(
            "      ScriptPubKey: {}\n",
            output.script_pubkey.render()
        ));
    }
    s.push_str(&format!("Lock-Time: {}\n", tx.lock_time));
    s
}

/// Evaluate one input's unlocking script against an output script. The
/// digest covers the whole transaction body; the height parameter is unused
/// by the current opcode set (lock-time is enforced at broadcast).
pub fn eval_script(
    deriver: &KeyDeriver,
    script_sig: &[ScriptItem],
    script_pubkey: &ScriptPubkey,
    tx: &Transaction,
    input_index: u32,
    _height: u64,
) -> bool {
    eval(deriver, script_sig, script_pubkey, &tx.sighash(input_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::KeyPair;
    use crate::script::{build_redeem_script, p2pkh_hash};

    fn setup() -> (KeyDeriver, Chain, KeyPair) {
        let d = KeyDeriver::secp256k1();
        let chain = Chain::new(d.clone());
        let pair = d.keypair_from_seed(b"ledger owner").unwrap();
        (d, chain, pair)
    }

    fn p2pkh(d: &KeyDeriver, pair: &KeyPair) -> ScriptPubkey {
        ScriptPubkey::P2pkh(p2pkh_hash(d, &pair.pk).unwrap())
    }

    fn spend_to(
        chain: &Chain,
        d: &KeyDeriver,
        from: OutPoint,
        owner: &KeyPair,
        outputs: Vec<TxOutput>,
        lock_time: u64,
    ) -> Transaction {
        let mut tx = Transaction {
            inputs: vec![TxInput {
                prev: from,
                script_sig: Vec::new(),
            }],
            outputs,
            lock_time,
        };
        let sig = chain.sign_input(&tx, 0, &owner.sk).unwrap();
        let pk_push = ScriptItem::Push(d.curve().compress(&owner.pk).unwrap().to_vec());
        tx.inputs[0].script_sig = vec![sig, pk_push];
        tx
    }

    #[test]
    fn fund_broadcast_and_status() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 10_000);
        assert_eq!(chain.utxo_status(&funded), UtxoStatus::Unspent);

        let tx = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 9_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        let txid = chain.broadcast(tx).unwrap();
        assert_eq!(chain.utxo_status(&funded), UtxoStatus::Spent(txid));
        assert_eq!(
            chain.utxo_status(&OutPoint::new(txid, 0)),
            UtxoStatus::Unspent
        );
        assert_eq!(
            chain.utxo_status(&OutPoint::new(sha256(b"nowhere"), 0)),
            UtxoStatus::Unknown
        );
        // Implicit fee of 1000.
        let audit = chain.audit();
        assert_eq!(audit.total_fees, 1_000);
        assert!(audit.conserved());
    }

    #[test]
    fn rejects_double_spend() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let spend1 = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 4_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        let spend2 = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 3_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        chain.broadcast(spend1).unwrap();
        assert!(matches!(
            chain.broadcast(spend2),
            Err(LedgerError::DoubleSpend(_))
        ));
    }

    #[test]
    fn rejects_overspend_and_unknown_prevout() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 1_000);
        let over = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 2_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        assert!(matches!(
            chain.broadcast(over),
            Err(LedgerError::OutputsExceedInputs { .. })
        ));

        let ghost = Transaction {
            inputs: vec![TxInput {
                prev: OutPoint::new(sha256(b"ghost"), 0),
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value: 1,
                script_pubkey: p2pkh(&d, &pair),
            }],
            lock_time: 0,
        };
        assert!(matches!(
            chain.broadcast(ghost),
            Err(LedgerError::UnknownPrevOut(_))
        ));
    }

    #[test]
    fn lock_time_matures_with_ticks() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let height = chain.height();
        let locked = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 4_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            height + 5,
        );
        let err = chain.broadcast(locked.clone()).unwrap_err();
        assert!(matches!(err, LedgerError::Immature { .. }));
        for _ in 0..5 {
            chain.tick();
        }
        chain.broadcast(locked).unwrap();
    }

    #[test]
    fn script_failure_on_wrong_signer() {
        let (d, mut chain, pair) = setup();
        let stranger = d.keypair_from_seed(b"stranger").unwrap();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let theft = spend_to(
            &chain,
            &d,
            funded,
            &stranger,
            vec![TxOutput {
                value: 4_000,
                script_pubkey: p2pkh(&d, &stranger),
            }],
            0,
        );
        assert!(matches!(
            chain.broadcast(theft),
            Err(LedgerError::ScriptFailure(0))
        ));
    }

    #[test]
    fn p2sh_multisig_spend_end_to_end() {
        let (d, mut chain, _) = setup();
        let a = d.keypair_from_seed(b"holder a").unwrap();
        let b = d.keypair_from_seed(b"holder b").unwrap();
        let redeem = build_redeem_script(
            &d,
            2,
            &[a.pk.clone(), b.pk.clone()],
            &[sha256(b"entry"), sha256(b"line")],
        )
        .unwrap();
        let funded = chain.fund(ScriptPubkey::P2sh(redeem.p2sh_address()), 7_000);

        let mut spend = Transaction {
            inputs: vec![TxInput {
                prev: funded,
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value: 6_500,
                script_pubkey: p2pkh(&d, &a),
            }],
            lock_time: 0,
        };
        let sig_a = chain.sign_input(&spend, 0, &a.sk).unwrap();
        let sig_b = chain.sign_input(&spend, 0, &b.sk).unwrap();
        spend.inputs[0].script_sig = vec![sig_a, sig_b, ScriptItem::Push(redeem.script_bytes())];
        chain.broadcast(spend).unwrap();
        assert!(matches!(chain.utxo_status(&funded), UtxoStatus::Spent(_)));
    }

    #[test]
    fn tamper_after_signing_invalidates() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let mut tx = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 4_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        tx.outputs[0].value = 3_999;
        assert!(matches!(
            chain.broadcast(tx),
            Err(LedgerError::ScriptFailure(0))
        ));
    }

    #[test]
    fn sign_input_errors() {
        let (d, chain, pair) = setup();
        let tx = Transaction {
            inputs: vec![TxInput {
                prev: OutPoint::new(sha256(b"ghost"), 0),
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value: 1,
                script_pubkey: p2pkh(&d, &pair),
            }],
            lock_time: 0,
        };
        assert!(matches!(
            chain.sign_input(&tx, 0, &pair.sk),
            Err(LedgerError::UnknownPrevOut(_))
        ));
        assert!(matches!(
            chain.sign_input(&tx, 5, &pair.sk),
            Err(LedgerError::BadInputIndex(5))
        ));
    }

    #[test]
    fn duplicate_inputs_within_tx_rejected() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let mut tx = Transaction {
            inputs: vec![
                TxInput {
                    prev: funded,
                    script_sig: Vec::new(),
                },
                TxInput {
                    prev: funded,
                    script_sig: Vec::new(),
                },
            ],
            outputs: vec![TxOutput {
                value: 1_000,
                script_pubkey: p2pkh(&d, &pair),
            }],
            lock_time: 0,
        };
        let sig = chain.sign_input(&tx, 0, &pair.sk).unwrap();
        let pk = ScriptItem::Push(d.curve().compress(&pair.pk).unwrap().to_vec());
        tx.inputs[0].script_sig = vec![sig.clone(), pk.clone()];
        tx.inputs[1].script_sig = vec![sig, pk];
        assert!(matches!(
            chain.broadcast(tx),
            Err(LedgerError::DoubleSpend(_))
        ));
    }

    #[test]
    fn snapshot_round_trip_preserves_state() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let tx = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 4_500,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        let txid = chain.broadcast(tx).unwrap();
        chain.tick();

        let snapshot = chain.snapshot();
        let bytes = crate::canonical::struct_to_canonical(&snapshot).unwrap();
        let parsed: ChainSnapshot = serde_json::from_slice(&bytes).unwrap();
        let restored = Chain::restore(&parsed).unwrap();
        assert_eq!(restored.height(), chain.height());
        assert_eq!(restored.utxo_status(&funded), UtxoStatus::Spent(txid));
        assert_eq!(
            restored.utxo_status(&OutPoint::new(txid, 0)),
            UtxoStatus::Unspent
        );
        assert_eq!(restored.dump_text(), chain.dump_text());
        // Canonical snapshot bytes are stable.
        assert_eq!(
            crate::canonical::struct_to_canonical(&restored.snapshot()).unwrap(),
            bytes
        );
    }

    #[test]
    fn dump_text_is_deterministic() {
        let (d, mut chain, pair) = setup();
        let funded = chain.fund(p2pkh(&d, &pair), 5_000);
        let tx = spend_to(
            &chain,
            &d,
            funded,
            &pair,
            vec![TxOutput {
                value: 4_500,
                script_pubkey: p2pkh(&d, &pair),
            }],
            0,
        );
        chain.broadcast(tx).unwrap();
        let first = chain.dump_text();
        assert_eq!(first, chain.dump_text());
        assert!(first.contains("Transaction-ID:"));
        assert!(first.contains("ScriptPubKey: P2PKH"));
    }
}
