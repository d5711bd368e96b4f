//! Bilateral exchange of contract underlyings.
//!
//! An owner advertises an entity with an invitation script — its metadata,
//! the wanted counterpart, and two derived keys dedicated to the entity —
//! published in the invitation DHT (a separate resource from the contract
//! repository) and anchored on chain by an invitation transaction whose
//! P2SH metadata carries the script's look-up key and a wanted-entity tag.
//! Matching scans the DHT for complementary invitations; settlement is a
//! single exchange transaction spending both invitation outputs and
//! assigning each tokenized entity to the other side's contract and
//! issuer, so no partial exchange can ever confirm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::struct_to_canonical;
use crate::dht::{DhtError, DhtStore, LookupKey};
use crate::hashes::{sha256, Hash32};
use crate::keys::{KeyDeriver, KeyError, KeyPair, KeyPath, SymmetricKey};
use crate::ledger::{Chain, LedgerError, OutPoint, Transaction, TxInput, TxOutput, UtxoStatus};
use crate::predicate::{joint_sets, Comparison};
use crate::rational::Rational;
use crate::script::{CompressedKey, RedeemScript, ScriptError, ScriptItem, ScriptPubkey};
use crate::token::TokenMetadata;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExchangeError {
    #[error("InsufficientFunding: funding output covers {available}, need {needed}")]
    InsufficientFunding { needed: u64, available: u64 },
    #[error("UnpublishedInvitation: {0} has no confirmed invitation transaction")]
    UnpublishedInvitation(LookupKey),
    #[error("InvitationSpent: invitation output {0} is already consumed")]
    InvitationSpent(OutPoint),
    #[error("BadSignature: {0}")]
    BadSignature(String),
    #[error("QuantityOutOfRange: offered quantity falls outside the wanted bounds")]
    QuantityOutOfRange,
    #[error("SelfExchange: offered and wanted entities are indistinguishable")]
    SelfExchange,
    #[error("BadDocument: {0}")]
    BadDocument(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Dht(#[from] DhtError),
}

/// An entity underlying a contract, as offered or wanted in an exchange.
///
/// For an offered entity the token's `transfer_units` is the exact quantity
/// changing hands. For a wanted entity it is the minimum acceptable
/// quantity and `total_units` (when positive) the maximum — the quantity
/// bounds advertised on chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDescriptor {
    pub entity_type: String,
    pub quantity: TokenMetadata,
    pub contract_ref: LookupKey,
}

impl EntityDescriptor {
    fn wanted_accepts(&self, offered_units: Rational) -> bool {
        let min = self.quantity.transfer_units;
        if offered_units < min {
            return false;
        }
        if self.quantity.total_units > 0
            && offered_units > Rational::integer(self.quantity.total_units as i128)
        {
            return false;
        }
        true
    }
}

/// One exchange condition; both parties' lists must be jointly satisfiable.
pub type Condition = Comparison;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvitationMetadata {
    pub offered: EntityDescriptor,
    pub wanted: EntityDescriptor,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub scope: Option<String>,
}

/// The published invitation script: metadata plus the two derived keys
/// dedicated to this entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvitationScript {
    pub metadata: InvitationMetadata,
    pub issuer_pk: CompressedKey,
    pub agent_pk: CompressedKey,
}

impl InvitationScript {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        struct_to_canonical(self).expect("scripts contain no floats")
    }

    /// The DHT look-up key: SHA-256 of the canonical script.
    pub fn dht_key(&self) -> LookupKey {
        sha256(&self.canonical_bytes())
    }

    /// Tag embedded in the invitation transaction naming the wanted entity
    /// and its quantity bounds.
    pub fn wanted_tag(&self) -> Hash32 {
        sha256(&struct_to_canonical(&self.metadata.wanted).expect("descriptors contain no floats"))
    }

    /// Redeem script of the invitation output: 1-of-2 over the agent and
    /// issuer keys with the look-up key and wanted tag as metadata blocks.
    /// Spend-side policy is enforced when the exchange is built.
    pub fn invitation_redeem(&self) -> RedeemScript {
        RedeemScript {
            m: 1,
            keys: vec![self.agent_pk, self.issuer_pk],
            metadata: vec![self.dht_key(), self.wanted_tag()],
        }
    }
}

/// A published invitation: script, its DHT key, and the chain anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvitationRecord {
    pub script: InvitationScript,
    pub dht_key: LookupKey,
    pub invitation_txid: Hash32,
}

impl InvitationRecord {
    pub fn outpoint(&self) -> OutPoint {
        OutPoint::new(self.invitation_txid, 0)
    }
}

/// Derive both parties' entity-dedicated keys and assemble the script.
pub fn make_invitation_script(
    deriver: &KeyDeriver,
    issuer_master: &KeyPair,
    agent_master: &KeyPair,
    path: &KeyPath,
    metadata: InvitationMetadata,
) -> Result<InvitationScript, ExchangeError> {
    if metadata.offered.entity_type == metadata.wanted.entity_type
        && metadata.offered.contract_ref == metadata.wanted.contract_ref
    {
        return Err(ExchangeError::SelfExchange);
    }
    let issuer_sub = deriver.derive_path(issuer_master, path)?;
    let agent_sub = deriver.derive_path(agent_master, path)?;
    Ok(InvitationScript {
        metadata,
        issuer_pk: CompressedKey(
            deriver
                .curve()
                .compress(&issuer_sub.pk)
                .map_err(KeyError::from)?,
        ),
        agent_pk: CompressedKey(
            deriver
                .curve()
                .compress(&agent_sub.pk)
                .map_err(KeyError::from)?,
        ),
    })
}

/// A spendable wallet output funding the invitation transaction.
pub struct InvitationFunding<'a> {
    pub outpoint: OutPoint,
    pub key: &'a KeyPair,
    pub invitation_value: u64,
    pub fee: u64,
}

/// Publish the script in the invitation DHT, broadcast the anchoring
/// transaction, and note the transaction id beside the entry.
pub fn publish_invitation(
    exchange_dht: &mut DhtStore,
    chain: &mut Chain,
    script: &InvitationScript,
    funding: &InvitationFunding,
) -> Result<InvitationRecord, ExchangeError> {
    let deriver = chain.deriver().clone();
    let dht_key = exchange_dht.put(&script.canonical_bytes());

    let available = chain
        .output(&funding.outpoint)
        .filter(|_| chain.utxo_status(&funding.outpoint) == UtxoStatus::Unspent)
        .map(|o| o.value)
        .ok_or(LedgerError::UnknownPrevOut(funding.outpoint))?;
    let needed = funding.invitation_value + funding.fee;
    if available < needed {
        return Err(ExchangeError::InsufficientFunding { needed, available });
    }
    let redeem = script.invitation_redeem();
    let mut outputs = vec![TxOutput {
        value: funding.invitation_value,
        script_pubkey: ScriptPubkey::P2sh(redeem.p2sh_address()),
    }];
    let change = available - needed;
    if change > 0 {
        outputs.push(TxOutput {
            value: change,
            script_pubkey: ScriptPubkey::P2pkh(crate::script::p2pkh_hash(
                &deriver,
                &funding.key.pk,
            )?),
        });
    }
    let mut tx = Transaction {
        inputs: vec![TxInput {
            prev: funding.outpoint,
            script_sig: Vec::new(),
        }],
        outputs,
        lock_time: 0,
    };
    let sig = chain.sign_input(&tx, 0, &funding.key.sk)?;
    let pk_push = ScriptItem::Push(
        deriver
            .curve()
            .compress(&funding.key.pk)
            .map_err(KeyError::from)?
            .to_vec(),
    );
    tx.inputs[0].script_sig = vec![sig, pk_push];
    let invitation_txid = chain.broadcast(tx)?;

    let line = struct_to_canonical(&serde_json::json!({ "ti": invitation_txid.to_hex() }))
        .expect("tx link line is canonical");
    exchange_dht.append_line(&dht_key, &line)?;
    Ok(InvitationRecord {
        script: script.clone(),
        dht_key,
        invitation_txid,
    })
}

fn record_from_entry(dht: &DhtStore, key: &LookupKey, body: &[u8]) -> Option<InvitationRecord> {
    let script: InvitationScript = serde_json::from_slice(body).ok()?;
    let lines = dht.lines(key).ok()?;
    let last = lines.last()?;
    let doc: serde_json::Value = serde_json::from_slice(last).ok()?;
    let txid = Hash32::from_hex(doc.get("ti")?.as_str()?).ok()?;
    Some(InvitationRecord {
        script,
        dht_key: *key,
        invitation_txid: txid,
    })
}

/// Mutual fit of two invitations: entity types and quantity bounds cross-
/// match, the joint condition list is satisfiable, and scopes agree.
fn compatible(k: &InvitationMetadata, m: &InvitationMetadata) -> bool {
    let entities_fit = |wanted: &EntityDescriptor, offered: &EntityDescriptor| {
        wanted.entity_type == offered.entity_type
            && wanted.wanted_accepts(offered.quantity.transfer_units)
    };
    if !entities_fit(&k.wanted, &m.offered) || !entities_fit(&m.wanted, &k.offered) {
        return false;
    }
    let joint: Vec<&Comparison> = k.conditions.iter().chain(m.conditions.iter()).collect();
    match joint_sets(&joint, &Default::default()) {
        Ok(sets) => {
            if sets.values().any(|s| s.is_empty()) {
                return false;
            }
        }
        // Mismatched condition types on a shared key simply do not match.
        Err(_) => return false,
    }
    match (&k.scope, &m.scope) {
        (Some(a), Some(b)) => a == b,
        _ => true,
    }
}

/// Conditions pinned to a single value by the joint constraint sets.
fn exact_condition_count(k: &InvitationMetadata, m: &InvitationMetadata) -> usize {
    let joint: Vec<&Comparison> = k.conditions.iter().chain(m.conditions.iter()).collect();
    match joint_sets(&joint, &Default::default()) {
        Ok(sets) => sets.values().filter(|s| s.is_singleton()).count(),
        Err(_) => 0,
    }
}

/// Scan the invitation DHT for published counterparts of `record`.
/// Candidates are ordered by exactly-pinned condition count (descending),
/// then look-up key.
pub fn match_invitations(
    exchange_dht: &DhtStore,
    record: &InvitationRecord,
) -> Result<Vec<InvitationRecord>, ExchangeError> {
    if record_from_entry(
        exchange_dht,
        &record.dht_key,
        exchange_dht.get(&record.dht_key).unwrap_or(&[]),
    )
    .is_none()
    {
        return Err(ExchangeError::UnpublishedInvitation(record.dht_key));
    }
    let mut candidates: Vec<(usize, InvitationRecord)> = Vec::new();
    for (key, body) in exchange_dht.scan(|_| true) {
        if key == record.dht_key {
            continue;
        }
        let Some(candidate) = record_from_entry(exchange_dht, &key, body) else {
            continue;
        };
        if compatible(&record.script.metadata, &candidate.script.metadata) {
            let exact = exact_condition_count(&record.script.metadata, &candidate.script.metadata);
            candidates.push((exact, candidate));
        }
    }
    candidates.sort_by(|(ea, a), (eb, b)| eb.cmp(ea).then(a.dht_key.cmp(&b.dht_key)));
    Ok(candidates.into_iter().map(|(_, r)| r).collect())
}

/// Who signs one side of the exchange.
pub struct SideSigners<'a> {
    pub agent: &'a KeyPair,
    pub issuer: Option<&'a KeyPair>,
}

/// Signature strictness. The initiating side A needs at least its agent;
/// side B always needs both agent and issuer. Symmetric strictness demands
/// the issuer on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExchangePolicy {
    #[default]
    Asymmetric,
    SymmetricStrict,
}

/// Settlement terms of one exchange: signature policy and the fee taken
/// out of side k's invitation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExchangeTerms {
    pub policy: ExchangePolicy,
    pub fee: u64,
}

/// Build the atomic exchange transaction settling invitations k and m:
/// both invitation outputs in, one tokenized assignment out per side. The
/// fee comes out of side k's invitation value. The entity token documents
/// are stored in the invitation DHT and referenced from the output redeem
/// scripts' metadata blocks.
pub fn build_exchange_tx(
    chain: &Chain,
    exchange_dht: &mut DhtStore,
    record_k: &InvitationRecord,
    record_m: &InvitationRecord,
    side_a: &SideSigners,
    side_b: &SideSigners,
    terms: ExchangeTerms,
) -> Result<Transaction, ExchangeError> {
    let ExchangeTerms { policy, fee } = terms;
    let deriver = chain.deriver().clone();
    let curve = deriver.curve();

    for record in [record_k, record_m] {
        match chain.utxo_status(&record.outpoint()) {
            UtxoStatus::Unspent => {}
            _ => return Err(ExchangeError::InvitationSpent(record.outpoint())),
        }
    }
    let meta_k = &record_k.script.metadata;
    let meta_m = &record_m.script.metadata;
    if !compatible(meta_k, meta_m) {
        return Err(ExchangeError::QuantityOutOfRange);
    }

    // Key possession checks before any signing.
    let expect_key =
        |pair: &KeyPair, want: &CompressedKey, what: &str| -> Result<(), ExchangeError> {
            let enc = curve.compress(&pair.pk).map_err(KeyError::from)?;
            if enc != want.0 {
                return Err(ExchangeError::BadSignature(format!(
                    "{what} key does not match the script"
                )));
            }
            Ok(())
        };
    expect_key(side_a.agent, &record_k.script.agent_pk, "side A agent")?;
    if let Some(issuer) = side_a.issuer {
        expect_key(issuer, &record_k.script.issuer_pk, "side A issuer")?;
    } else if policy == ExchangePolicy::SymmetricStrict {
        return Err(ExchangeError::BadSignature(
            "side A issuer signature required".into(),
        ));
    }
    expect_key(side_b.agent, &record_m.script.agent_pk, "side B agent")?;
    let issuer_b = side_b
        .issuer
        .ok_or_else(|| ExchangeError::BadSignature("side B issuer signature required".into()))?;
    expect_key(issuer_b, &record_m.script.issuer_pk, "side B issuer")?;

    let value_k = chain
        .output(&record_k.outpoint())
        .expect("status checked")
        .value;
    let value_m = chain
        .output(&record_m.outpoint())
        .expect("status checked")
        .value;
    if value_k < fee {
        return Err(ExchangeError::InsufficientFunding {
            needed: fee,
            available: value_k,
        });
    }

    // Token documents travel by content address.
    let token_ref_k = exchange_dht.put(&struct_to_canonical(&meta_k.offered).expect("no floats"));
    let token_ref_m = exchange_dht.put(&struct_to_canonical(&meta_m.offered).expect("no floats"));

    // Entity k moves to side B's contract and issuer; entity m to side A's.
    let redeem_to_b = RedeemScript {
        m: 2,
        keys: vec![record_m.script.agent_pk, record_m.script.issuer_pk],
        metadata: vec![token_ref_k, meta_m.offered.contract_ref],
    };
    let redeem_to_a = RedeemScript {
        m: 2,
        keys: vec![record_k.script.agent_pk, record_k.script.issuer_pk],
        metadata: vec![token_ref_m, meta_k.offered.contract_ref],
    };
    let mut tx = Transaction {
        inputs: vec![
            TxInput {
                prev: record_k.outpoint(),
                script_sig: Vec::new(),
            },
            TxInput {
                prev: record_m.outpoint(),
                script_sig: Vec::new(),
            },
        ],
        outputs: vec![
            TxOutput {
                value: value_k - fee,
                script_pubkey: ScriptPubkey::P2sh(redeem_to_b.p2sh_address()),
            },
            TxOutput {
                value: value_m,
                script_pubkey: ScriptPubkey::P2sh(redeem_to_a.p2sh_address()),
            },
        ],
        lock_time: 0,
    };

    // Side A unlocks invitation k; side B unlocks invitation m. Signatures
    // go in redeem-key order: agent first, issuer second.
    let mut sig_items_a = vec![chain.sign_input(&tx, 0, &side_a.agent.sk)?];
    if let Some(issuer) = side_a.issuer {
        sig_items_a.push(chain.sign_input(&tx, 0, &issuer.sk)?);
    }
    sig_items_a.push(ScriptItem::Push(
        record_k.script.invitation_redeem().script_bytes(),
    ));
    tx.inputs[0].script_sig = sig_items_a;

    let sig_items_b = vec![
        chain.sign_input(&tx, 1, &side_b.agent.sk)?,
        chain.sign_input(&tx, 1, &issuer_b.sk)?,
        ScriptItem::Push(record_m.script.invitation_redeem().script_bytes()),
    ];
    tx.inputs[1].script_sig = sig_items_b;
    Ok(tx)
}

/// Symmetric channel key for one entity: ECDH between the issuer-side pair
/// and the agent-side public key at the same path.
pub fn entity_channel_key(
    deriver: &KeyDeriver,
    issuer_side: &KeyPair,
    agent_side_pk: &crate::curve::CurvePoint,
) -> Result<SymmetricKey, ExchangeError> {
    let cs = deriver.common_secret_at(&issuer_side.sk, agent_side_pk, issuer_side.path.clone())?;
    Ok(deriver.symmetric_key_from_cs(&cs))
}
