//! Master, subordinate and templates-manager agents.
//!
//! Agents own a master key pair and a wallet of P2PKH outputs on the
//! simulated chain. Announcing a contract turns a repository entry into a
//! multisig existence UTXO; issuing a subcontract walks the six-step
//! protocol (shared-seed key derivation, repository linking, redeem script
//! with metadata blocks, nominal payment, confirmation, pre-created repay
//! transaction); monitoring steps the subcontract's DFA and releases
//! checkpoint payments when it completes. A templates manager reallocates
//! budget among master agents between activity intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{validate_model, AgentProgram, ContractModel, RepoError, StateId};
use crate::curve::CurvePoint;
use crate::dht::{DhtError, DhtStore, LookupKey};
use crate::ecdsa::Signature;
use crate::hashes::{sha256, Hash32};
use crate::keys::{KeyDeriver, KeyError, KeyPair, KeyPath};
use crate::ledger::{Chain, LedgerError, OutPoint, Transaction, TxInput, TxOutput, UtxoStatus};
use crate::predicate::ParamValue;
use crate::rational::Rational;
use crate::script::{
    build_redeem_script, p2pkh_hash, RedeemScript, ScriptError, ScriptItem, ScriptPubkey,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("InsufficientBudget: need {needed} sat, spendable {available}")]
    InsufficientBudget { needed: u64, available: u64 },
    #[error("ParentComplete: parent contract's existence output is already spent")]
    ParentComplete,
    #[error("AlreadyPaid: checkpoint was paid by {0}")]
    AlreadyPaid(Hash32),
    #[error("PoolTooSmall: pool {pool} cannot cover {needed} in floors")]
    PoolTooSmall { pool: u64, needed: u64 },
    #[error("InvalidShares: {0}")]
    InvalidShares(String),
    #[error("UnknownSigner: signer's key is not in the redeem script")]
    UnknownSigner,
    #[error("BadModel: {0}")]
    BadModel(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Repo(#[from] RepoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Master,
    Subordinate,
    TemplatesManager,
}

/// An agent process: role, master keys, derived-key cache, spendable budget
/// and the DFA positions of the contracts it monitors.
#[derive(Debug, Clone)]
pub struct Agent {
    pub name: String,
    pub role: AgentRole,
    pub keypair: KeyPair,
    pub budget: u64,
    pub derived_keys: BTreeMap<KeyPath, KeyPair>,
    pub program: Option<AgentProgram>,
    contract_states: BTreeMap<OutPoint, StateId>,
}

impl Agent {
    pub fn new(
        name: &str,
        role: AgentRole,
        deriver: &KeyDeriver,
        seed: &[u8],
    ) -> Result<Self, KeyError> {
        Ok(Agent {
            name: name.to_string(),
            role,
            keypair: deriver.keypair_from_seed(seed)?,
            budget: 0,
            derived_keys: BTreeMap::new(),
            program: None,
            contract_states: BTreeMap::new(),
        })
    }

    pub fn from_keypair(name: &str, role: AgentRole, keypair: KeyPair) -> Self {
        Agent {
            name: name.to_string(),
            role,
            keypair,
            budget: 0,
            derived_keys: BTreeMap::new(),
            program: None,
            contract_states: BTreeMap::new(),
        }
    }

    /// The wallet script all of this agent's liquid funds sit under.
    pub fn p2pkh(&self, deriver: &KeyDeriver) -> ScriptPubkey {
        ScriptPubkey::P2pkh(p2pkh_hash(deriver, &self.keypair.pk).expect("master keys are finite"))
    }

    /// Derive (and cache) the sub-key at a path.
    pub fn sub_key(&mut self, deriver: &KeyDeriver, path: &KeyPath) -> Result<KeyPair, KeyError> {
        if let Some(pair) = self.derived_keys.get(path) {
            return Ok(pair.clone());
        }
        let pair = deriver.derive_path(&self.keypair, path)?;
        self.derived_keys.insert(path.clone(), pair.clone());
        Ok(pair)
    }

    /// Unspent wallet outputs, in deterministic outpoint order.
    pub fn spendable(&self, chain: &Chain) -> Vec<(OutPoint, u64)> {
        chain.unspent_by_script(&self.p2pkh(chain.deriver()))
    }

    pub fn refresh_budget(&mut self, chain: &Chain) {
        self.budget = self.spendable(chain).iter().map(|(_, v)| v).sum();
    }

    pub fn dfa_state(&self, existence: &OutPoint) -> Option<&StateId> {
        self.contract_states.get(existence)
    }
}

/// Mint chain funds into an agent's wallet.
pub fn fund_agent(chain: &mut Chain, agent: &mut Agent, amount: u64) -> OutPoint {
    let outpoint = chain.fund(agent.p2pkh(chain.deriver()), amount);
    agent.refresh_budget(chain);
    outpoint
}

/// A live contract as seen from the chain: its repository entry, the
/// existence UTXO, the two governing keys and the redeem script that
/// spends it. Status is always read from public chain data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractHandle {
    pub repo_key: LookupKey,
    pub existence_utxo: OutPoint,
    pub issuer_pk: CurvePoint,
    pub agent_pk: CurvePoint,
    pub redeem: RedeemScript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractStatus {
    Active,
    Complete,
}

impl std::fmt::Display for ContractStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContractStatus::Active => f.write_str("Active"),
            ContractStatus::Complete => f.write_str("Complete"),
        }
    }
}

impl ContractHandle {
    /// Active exactly while the existence output is unspent.
    pub fn status(&self, chain: &Chain) -> ContractStatus {
        match chain.utxo_status(&self.existence_utxo) {
            UtxoStatus::Unspent => ContractStatus::Active,
            _ => ContractStatus::Complete,
        }
    }
}

/// A checkpoint payment bound to a subcontract's completion.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub index: u32,
    pub amount: u64,
    pub subcontract: ContractHandle,
    paid: Option<Hash32>,
}

impl Checkpoint {
    pub fn new(index: u32, amount: u64, subcontract: ContractHandle) -> Self {
        Checkpoint {
            index,
            amount,
            subcontract,
            paid: None,
        }
    }

    pub fn paid(&self) -> Option<Hash32> {
        self.paid
    }
}

/// Which seed both parties feed their sub-key derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    /// Transaction id of the parent's existence UTXO (available earliest).
    #[default]
    ExistenceTxid,
    /// SHA-256 of the parent's redeem script bytes.
    RedeemScriptHash,
}

/// Lifetime of a subcontract and how its repay transaction is gated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubcontractTerm {
    /// Repay transaction is lock-timed to the expiry height.
    FixedUntil { expiry_height: u64 },
    /// Repay requires every governing key including the monitor's; the
    /// monitor collects a fee output.
    OpenEnded {
        monitor_pk: CurvePoint,
        monitor_fee: u64,
    },
}

pub struct AnnounceRequest<'a> {
    pub model: &'a ContractModel,
    /// Instance line of a semi-template this announcement realizes.
    pub instance_line: Option<u64>,
    pub issuer_pk: CurvePoint,
    /// Value locked in the existence output.
    pub existence_value: u64,
    pub fee: u64,
}

pub struct SubcontractRequest<'a> {
    pub model: &'a ContractModel,
    /// Approving counterparties whose keys join the redeem script.
    pub counterparty_keys: Vec<CurvePoint>,
    pub term: SubcontractTerm,
    pub nominal_value: u64,
    pub fee: u64,
    pub repay_fee: u64,
    /// Repay destination: the agent (false) or the issuer (true).
    pub repay_to_issuer: bool,
    pub seed_source: SeedSource,
    /// Also embed the parent's repository key as a metadata block.
    pub include_parent_ref: bool,
}

/// Everything step six leaves behind: the live handle, the held repay
/// transaction and the derivation path both parties used.
#[derive(Debug, Clone)]
pub struct IssuedSubcontract {
    pub handle: ContractHandle,
    pub repay: Transaction,
    pub path: KeyPath,
}

/// 32-byte metadata block pointing at instance line `index`.
pub fn line_pointer(index: u64) -> Hash32 {
    let mut bytes = [0u8; 32];
    bytes[24..].copy_from_slice(&index.to_be_bytes());
    Hash32(bytes)
}

/// Pick wallet inputs covering `needed`, smallest outpoint first.
fn select_inputs(
    agent: &Agent,
    chain: &Chain,
    needed: u64,
) -> Result<(Vec<OutPoint>, u64), AgentError> {
    let mut chosen = Vec::new();
    let mut total = 0u64;
    for (outpoint, value) in agent.spendable(chain) {
        chosen.push(outpoint);
        total += value;
        if total >= needed {
            return Ok((chosen, total));
        }
    }
    Err(AgentError::InsufficientBudget {
        needed,
        available: total,
    })
}

/// Sign every input of a wallet-funded transaction with the agent's master key.
fn sign_wallet_inputs(
    chain: &Chain,
    tx: &mut Transaction,
    agent: &Agent,
) -> Result<(), AgentError> {
    let pk_push = ScriptItem::Push(
        chain
            .deriver()
            .curve()
            .compress(&agent.keypair.pk)
            .expect("finite key")
            .to_vec(),
    );
    for i in 0..tx.inputs.len() {
        let sig = chain.sign_input(tx, i as u32, &agent.keypair.sk)?;
        tx.inputs[i].script_sig = vec![sig, pk_push.clone()];
    }
    Ok(())
}

/// Assemble a multisig unlocking script: signatures in redeem-key order,
/// then the redeem script itself.
pub fn multisig_script_sig(
    chain: &Chain,
    tx: &Transaction,
    input_index: u32,
    redeem: &RedeemScript,
    signers: &[&KeyPair],
) -> Result<Vec<ScriptItem>, AgentError> {
    let curve = chain.deriver().curve();
    let mut ordered: Vec<(usize, &KeyPair)> = Vec::with_capacity(signers.len());
    for signer in signers {
        let enc = curve
            .compress(&signer.pk)
            .map_err(|_| AgentError::UnknownSigner)?;
        let pos = redeem
            .keys
            .iter()
            .position(|k| k.0 == enc)
            .ok_or(AgentError::UnknownSigner)?;
        ordered.push((pos, signer));
    }
    ordered.sort_by_key(|(pos, _)| *pos);
    let mut items = Vec::with_capacity(signers.len() + 1);
    for (_, signer) in ordered {
        items.push(chain.sign_input(tx, input_index, &signer.sk)?);
    }
    items.push(ScriptItem::Push(redeem.script_bytes()));
    Ok(items)
}

/// Add one more signature to a partially signed multisig input, keeping
/// redeem-key order. Models circulating a transaction to its signatories.
pub fn add_multisig_signature(
    chain: &Chain,
    tx: &mut Transaction,
    input_index: u32,
    redeem: &RedeemScript,
    signer: &KeyPair,
) -> Result<(), AgentError> {
    let deriver = chain.deriver();
    let digest = tx.sighash(input_index);
    // Existing signatures, re-keyed to their redeem positions.
    let mut by_position: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
    let input = tx
        .inputs
        .get(input_index as usize)
        .ok_or(LedgerError::BadInputIndex(input_index))?;
    for item in &input.script_sig {
        let ScriptItem::Push(bytes) = item else {
            continue;
        };
        let Some(sig) = Signature::from_bytes(deriver, bytes) else {
            continue;
        };
        for (pos, key) in redeem.keys.iter().enumerate() {
            if let Ok(pk) = deriver.curve().decompress(&key.0) {
                if crate::ecdsa::verify(deriver, &pk, &digest, &sig) {
                    by_position.insert(pos, bytes.clone());
                    break;
                }
            }
        }
    }
    let enc = deriver
        .curve()
        .compress(&signer.pk)
        .map_err(|_| AgentError::UnknownSigner)?;
    let pos = redeem
        .keys
        .iter()
        .position(|k| k.0 == enc)
        .ok_or(AgentError::UnknownSigner)?;
    let ScriptItem::Push(sig_bytes) = chain.sign_input(tx, input_index, &signer.sk)? else {
        unreachable!("sign_input returns a push")
    };
    by_position.insert(pos, sig_bytes);
    let mut items: Vec<ScriptItem> = by_position.into_values().map(ScriptItem::Push).collect();
    items.push(ScriptItem::Push(redeem.script_bytes()));
    tx.inputs[input_index as usize].script_sig = items;
    Ok(())
}

/// Announce a contract: store (or locate) its repository entry, lock a
/// nominal value under a 2-of-2 multisig P2SH whose metadata blocks carry
/// the entry key (and instance line pointer), and return the live handle.
pub fn announce_contract(
    agent: &mut Agent,
    chain: &mut Chain,
    repo: &mut DhtStore,
    request: &AnnounceRequest,
) -> Result<ContractHandle, AgentError> {
    let deriver = chain.deriver().clone();
    let repo_key = repo.put(&request.model.canonical_bytes());

    let mut metadata = vec![repo_key];
    if let Some(line) = request.instance_line {
        metadata.push(line_pointer(line));
    }
    let redeem = build_redeem_script(
        &deriver,
        2,
        &[agent.keypair.pk.clone(), request.issuer_pk.clone()],
        &metadata,
    )?;

    let needed = request.existence_value + request.fee;
    let (inputs, total) = select_inputs(agent, chain, needed)?;
    let change = total - needed;
    let mut outputs = vec![TxOutput {
        value: request.existence_value,
        script_pubkey: ScriptPubkey::P2sh(redeem.p2sh_address()),
    }];
    if change > 0 {
        outputs.push(TxOutput {
            value: change,
            script_pubkey: agent.p2pkh(&deriver),
        });
    }
    let mut tx = Transaction {
        inputs: inputs
            .into_iter()
            .map(|prev| TxInput {
                prev,
                script_sig: Vec::new(),
            })
            .collect(),
        outputs,
        lock_time: 0,
    };
    sign_wallet_inputs(chain, &mut tx, agent)?;
    let txid = chain.broadcast(tx)?;
    agent.refresh_budget(chain);

    let handle = ContractHandle {
        repo_key,
        existence_utxo: OutPoint::new(txid, 0),
        issuer_pk: request.issuer_pk.clone(),
        agent_pk: agent.keypair.pk.clone(),
        redeem,
    };
    agent
        .contract_states
        .insert(handle.existence_utxo, request.model.initial_state().clone());
    Ok(handle)
}

/// Issue a subcontract under an active parent, walking all six steps.
pub fn issue_subcontract(
    agent: &mut Agent,
    issuer: &KeyPair,
    chain: &mut Chain,
    repo: &mut DhtStore,
    parent: &ContractHandle,
    request: &SubcontractRequest,
) -> Result<IssuedSubcontract, AgentError> {
    if parent.status(chain) == ContractStatus::Complete {
        return Err(AgentError::ParentComplete);
    }
    let deriver = chain.deriver().clone();

    // Step one: both parties derive sub-keys from the same parent seed.
    let seed = match request.seed_source {
        SeedSource::ExistenceTxid => parent.existence_utxo.txid,
        SeedSource::RedeemScriptHash => sha256(&parent.redeem.script_bytes()),
    };

    // Step two: the subcontract entry embeds a link to the parent's entry.
    let mut doc: serde_json::Value = serde_json::from_slice(&request.model.canonical_bytes())
        .expect("model bytes are valid JSON");
    doc.as_object_mut()
        .expect("models serialize to objects")
        .insert(
            "master_ref".into(),
            serde_json::Value::String(parent.repo_key.to_hex()),
        );
    let body = crate::canonical::to_canonical_bytes(&doc)
        .map_err(|e| AgentError::BadModel(e.to_string()))?;
    let sub_key = repo.put(&body);

    // The entry hash labels the derivation; the seed ties it to the parent.
    let path = KeyPath::parallel(seed, sub_key);
    let agent_sub = agent.sub_key(&deriver, &path)?;
    // The issuer's public sub-key is computable without any private material.
    let issuer_sub_pk = deriver.derive_path_public(&issuer.pk, &path)?;

    // Step three: redeem script with metadata blocks and governing keys.
    let mut metadata = vec![sub_key];
    if request.include_parent_ref {
        metadata.push(parent.repo_key);
    }
    let mut keys = vec![agent_sub.pk.clone()];
    keys.extend(request.counterparty_keys.iter().cloned());
    let m = match &request.term {
        SubcontractTerm::FixedUntil { .. } => {
            keys.push(issuer_sub_pk.clone());
            2
        }
        SubcontractTerm::OpenEnded { monitor_pk, .. } => {
            // Every key is compulsory so the repay cannot confirm without
            // the monitor's sign-off.
            keys.push(monitor_pk.clone());
            keys.push(issuer_sub_pk.clone());
            keys.len() as u8
        }
    };
    let redeem = build_redeem_script(&deriver, m, &keys, &metadata)?;

    // Step four: pay the nominal amount to the script's P2SH address.
    let needed = request.nominal_value + request.fee;
    let (inputs, total) = select_inputs(agent, chain, needed)?;
    let change = total - needed;
    let mut outputs = vec![TxOutput {
        value: request.nominal_value,
        script_pubkey: ScriptPubkey::P2sh(redeem.p2sh_address()),
    }];
    if change > 0 {
        outputs.push(TxOutput {
            value: change,
            script_pubkey: agent.p2pkh(&deriver),
        });
    }
    let mut nominal_tx = Transaction {
        inputs: inputs
            .into_iter()
            .map(|prev| TxInput {
                prev,
                script_sig: Vec::new(),
            })
            .collect(),
        outputs,
        lock_time: 0,
    };
    sign_wallet_inputs(chain, &mut nominal_tx, agent)?;

    // Step five: confirmation yields the subcontract transaction id.
    let sub_txid = chain.broadcast(nominal_tx)?;
    agent.refresh_budget(chain);
    let existence = OutPoint::new(sub_txid, 0);

    // Step six: pre-create the repay transaction.
    let issuer_sub = deriver.derive_path(issuer, &path)?;
    let repay_value = request.nominal_value.checked_sub(request.repay_fee).ok_or(
        AgentError::InsufficientBudget {
            needed: request.repay_fee,
            available: request.nominal_value,
        },
    )?;
    let repay_owner_pk = if request.repay_to_issuer {
        &issuer.pk
    } else {
        &agent.keypair.pk
    };
    let repay_spk = ScriptPubkey::P2pkh(p2pkh_hash(&deriver, repay_owner_pk)?);
    let mut repay = match &request.term {
        SubcontractTerm::FixedUntil { expiry_height } => Transaction {
            inputs: vec![TxInput {
                prev: existence,
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value: repay_value,
                script_pubkey: repay_spk,
            }],
            lock_time: *expiry_height,
        },
        SubcontractTerm::OpenEnded {
            monitor_pk,
            monitor_fee,
        } => {
            let body =
                repay_value
                    .checked_sub(*monitor_fee)
                    .ok_or(AgentError::InsufficientBudget {
                        needed: *monitor_fee,
                        available: repay_value,
                    })?;
            Transaction {
                inputs: vec![TxInput {
                    prev: existence,
                    script_sig: Vec::new(),
                }],
                outputs: vec![
                    TxOutput {
                        value: *monitor_fee,
                        script_pubkey: ScriptPubkey::P2pkh(p2pkh_hash(&deriver, monitor_pk)?),
                    },
                    TxOutput {
                        value: body,
                        script_pubkey: repay_spk,
                    },
                ],
                lock_time: 0,
            }
        }
    };
    // The issuing parties sign now; an open-ended repay still awaits its
    // monitor (and any counterparties) before it can confirm.
    repay.inputs[0].script_sig =
        multisig_script_sig(chain, &repay, 0, &redeem, &[&agent_sub, &issuer_sub])?;

    let handle = ContractHandle {
        repo_key: sub_key,
        existence_utxo: existence,
        issuer_pk: issuer_sub_pk,
        agent_pk: agent_sub.pk.clone(),
        redeem,
    };
    agent
        .contract_states
        .insert(existence, request.model.initial_state().clone());
    Ok(IssuedSubcontract {
        handle,
        repay,
        path,
    })
}

/// Step the subcontract's DFA with fresh observations; when it reaches a
/// terminal state and the existence UTXO is still spendable, broadcast the
/// checkpoint payment and return its id.
pub fn monitor_and_trigger(
    agent: &mut Agent,
    chain: &mut Chain,
    repo: &DhtStore,
    checkpoint: &mut Checkpoint,
    observations: &BTreeMap<String, ParamValue>,
    cosigners: &[&KeyPair],
    payee_pk: &CurvePoint,
) -> Result<Option<Hash32>, AgentError> {
    if let Some(txid) = checkpoint.paid {
        return Err(AgentError::AlreadyPaid(txid));
    }
    let handle = &checkpoint.subcontract;
    let body = repo
        .get(&handle.repo_key)
        .ok_or(RepoError::UnknownKey(handle.repo_key))?;
    let model = validate_model(body).map_err(|v| {
        AgentError::BadModel(
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    let current = agent
        .contract_states
        .get(&handle.existence_utxo)
        .cloned()
        .unwrap_or_else(|| model.initial_state().clone());
    let (next, _actions) = crate::contract::step_dfa(&model, &current, observations)
        .map_err(|e| AgentError::BadModel(e.to_string()))?;
    agent
        .contract_states
        .insert(handle.existence_utxo, next.clone());

    if !model.is_terminal(&next) {
        return Ok(None);
    }
    if chain.utxo_status(&handle.existence_utxo) != UtxoStatus::Unspent {
        return Ok(None);
    }
    let deriver = chain.deriver().clone();
    let mut closure = Transaction {
        inputs: vec![TxInput {
            prev: handle.existence_utxo,
            script_sig: Vec::new(),
        }],
        outputs: vec![TxOutput {
            value: checkpoint.amount,
            script_pubkey: ScriptPubkey::P2pkh(p2pkh_hash(&deriver, payee_pk)?),
        }],
        lock_time: 0,
    };
    closure.inputs[0].script_sig =
        multisig_script_sig(chain, &closure, 0, &handle.redeem, cosigners)?;
    let txid = chain.broadcast(closure)?;
    checkpoint.paid = Some(txid);
    Ok(Some(txid))
}

/// Floor-then-proportional allocation: every master receives the floor plus
/// its share of the remainder (rounded down); rounding leftovers go to the
/// highest share, ties resolved by ascending compressed-key order.
pub fn compute_allocations(
    entries: &[([u8; 33], Rational)],
    pool: u64,
    floor: u64,
) -> Result<Vec<u64>, AgentError> {
    if entries.is_empty() {
        return Err(AgentError::InvalidShares(
            "no masters to allocate to".into(),
        ));
    }
    let share_sum = entries
        .iter()
        .fold(Rational::zero(), |acc, (_, s)| acc + *s);
    if share_sum != Rational::one() {
        return Err(AgentError::InvalidShares(format!(
            "shares sum to {share_sum}, expected 1"
        )));
    }
    if entries.iter().any(|(_, s)| s.is_negative()) {
        return Err(AgentError::InvalidShares("negative share".into()));
    }
    let floors = floor
        .checked_mul(entries.len() as u64)
        .ok_or(AgentError::InvalidShares("floor overflow".into()))?;
    if pool < floors {
        return Err(AgentError::PoolTooSmall {
            pool,
            needed: floors,
        });
    }
    let remainder = pool - floors;
    let mut allocations: Vec<u64> = entries
        .iter()
        .map(|(_, share)| {
            floor + (*share * Rational::integer(remainder as i128)).floor_i128() as u64
        })
        .collect();
    let assigned: u64 = allocations.iter().sum();
    let leftover = pool - assigned;
    if leftover > 0 {
        let top = entries
            .iter()
            .enumerate()
            .max_by(|(_, (key_a, share_a)), (_, (key_b, share_b))| {
                share_a.cmp(share_b).then(key_b.cmp(key_a))
            })
            .map(|(i, _)| i)
            .expect("non-empty");
        allocations[top] += leftover;
    }
    Ok(allocations)
}

/// Move `pool` satoshi from the manager's wallet to the masters according
/// to [`compute_allocations`], in one fee-less transaction.
pub fn allocate_budgets(
    manager: &mut Agent,
    masters: &mut [(&mut Agent, Rational)],
    chain: &mut Chain,
    pool: u64,
    floor: u64,
) -> Result<Vec<u64>, AgentError> {
    let deriver = chain.deriver().clone();
    let entries: Vec<([u8; 33], Rational)> = masters
        .iter()
        .map(|(agent, share)| {
            (
                deriver
                    .curve()
                    .compress(&agent.keypair.pk)
                    .expect("finite key"),
                *share,
            )
        })
        .collect();
    let allocations = compute_allocations(&entries, pool, floor)?;

    let (inputs, total) = select_inputs(manager, chain, pool)?;
    let mut outputs: Vec<TxOutput> = masters
        .iter()
        .zip(&allocations)
        .map(|((agent, _), value)| TxOutput {
            value: *value,
            script_pubkey: agent.p2pkh(&deriver),
        })
        .collect();
    let change = total - pool;
    if change > 0 {
        outputs.push(TxOutput {
            value: change,
            script_pubkey: manager.p2pkh(&deriver),
        });
    }
    let mut tx = Transaction {
        inputs: inputs
            .into_iter()
            .map(|prev| TxInput {
                prev,
                script_sig: Vec::new(),
            })
            .collect(),
        outputs,
        lock_time: 0,
    };
    sign_wallet_inputs(chain, &mut tx, manager)?;
    chain.broadcast(tx)?;
    manager.refresh_budget(chain);
    for (agent, _) in masters.iter_mut() {
        agent.refresh_budget(chain);
    }
    Ok(allocations)
}

/// End-of-interval sweep: everything above `minimum` returns to the
/// manager's pool in one fee-less transaction; returns the swept amount.
pub fn close_interval(
    manager: &mut Agent,
    master: &mut Agent,
    chain: &mut Chain,
    minimum: u64,
) -> Result<u64, AgentError> {
    let deriver = chain.deriver().clone();
    master.refresh_budget(chain);
    let returned = master.budget.saturating_sub(minimum);
    if returned == 0 {
        return Ok(0);
    }
    let (inputs, total) = select_inputs(master, chain, returned)?;
    let mut outputs = vec![TxOutput {
        value: returned,
        script_pubkey: manager.p2pkh(&deriver),
    }];
    let change = total - returned;
    if change > 0 {
        outputs.push(TxOutput {
            value: change,
            script_pubkey: master.p2pkh(&deriver),
        });
    }
    let mut tx = Transaction {
        inputs: inputs
            .into_iter()
            .map(|prev| TxInput {
                prev,
                script_sig: Vec::new(),
            })
            .collect(),
        outputs,
        lock_time: 0,
    };
    sign_wallet_inputs(chain, &mut tx, master)?;
    chain.broadcast(tx)?;
    manager.refresh_budget(chain);
    master.refresh_budget(chain);
    Ok(returned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{Action, Dfa, ParamSource, ParameterSpec, StateDef, Transition};
    use crate::predicate::{CmpOp, Comparison, ValueDomain};

    fn deriver() -> KeyDeriver {
        KeyDeriver::secp256k1()
    }

    fn approval_model() -> ContractModel {
        ContractModel {
            scheme_version: "1".into(),
            parameters: vec![ParameterSpec {
                name: "certificate".into(),
                source: ParamSource::OffChain,
                domain: ValueDomain::Tags(vec!["pending".into(), "issued".into()]),
            }],
            dfa: Dfa {
                states: vec![
                    StateDef {
                        id: "pending".into(),
                        initial: true,
                        terminal: false,
                    },
                    StateDef {
                        id: "approved".into(),
                        initial: false,
                        terminal: true,
                    },
                ],
                transitions: vec![Transition {
                    from: "pending".into(),
                    to: "approved".into(),
                    trigger: vec![Comparison {
                        param: "certificate".into(),
                        op: CmpOp::Eq,
                        value: ParamValue::Tag("issued".into()),
                    }],
                    rules: vec!["pay".into()],
                }],
            },
            rules: [(
                "pay".to_string(),
                Action::CreateTransaction {
                    template: "closure".into(),
                },
            )]
            .into(),
            instance_params: BTreeMap::new(),
        }
    }

    struct World {
        chain: Chain,
        repo: DhtStore,
        agent: Agent,
        issuer: KeyPair,
    }

    fn world() -> World {
        let d = deriver();
        let mut chain = Chain::new(d.clone());
        let mut agent = Agent::new("master_agent", AgentRole::Master, &d, b"agent seed").unwrap();
        let issuer = d.keypair_from_seed(b"issuer seed").unwrap();
        fund_agent(&mut chain, &mut agent, 100_000);
        World {
            chain,
            repo: DhtStore::single(),
            agent,
            issuer,
        }
    }

    fn announce(world: &mut World, value: u64, fee: u64) -> ContractHandle {
        let model = approval_model();
        announce_contract(
            &mut world.agent,
            &mut world.chain,
            &mut world.repo,
            &AnnounceRequest {
                model: &model,
                instance_line: None,
                issuer_pk: world.issuer.pk.clone(),
                existence_value: value,
                fee,
            },
        )
        .unwrap()
    }

    fn sub_request<'a>(model: &'a ContractModel, term: SubcontractTerm) -> SubcontractRequest<'a> {
        SubcontractRequest {
            model,
            counterparty_keys: Vec::new(),
            term,
            nominal_value: 4_000,
            fee: 400,
            repay_fee: 200,
            repay_to_issuer: false,
            seed_source: SeedSource::default(),
            include_parent_ref: true,
        }
    }

    #[test]
    fn announce_debits_existence_value_plus_fee() {
        let mut w = world();
        let handle = announce(&mut w, 10_000, 1_000);
        assert_eq!(handle.status(&w.chain), ContractStatus::Active);
        assert_eq!(w.agent.budget, 100_000 - 10_000 - 1_000);
        assert!(w.repo.contains(&handle.repo_key));
        // The redeem script carries the repository key as its metadata block.
        assert_eq!(handle.redeem.metadata, vec![handle.repo_key]);
    }

    #[test]
    fn announce_without_funds_fails() {
        let d = deriver();
        let mut chain = Chain::new(d.clone());
        let mut agent = Agent::new("poor", AgentRole::Master, &d, b"poor seed").unwrap();
        let issuer = d.keypair_from_seed(b"issuer seed").unwrap();
        let model = approval_model();
        let err = announce_contract(
            &mut agent,
            &mut chain,
            &mut DhtStore::single(),
            &AnnounceRequest {
                model: &model,
                instance_line: None,
                issuer_pk: issuer.pk,
                existence_value: 10,
                fee: 1,
            },
        )
        .unwrap_err();
        assert!(matches!(err, AgentError::InsufficientBudget { .. }));
    }

    #[test]
    fn two_instance_lines_two_distinct_handles() {
        let mut w = world();
        let model = approval_model();
        let mut handles = Vec::new();
        for line in [0u64, 1] {
            handles.push(
                announce_contract(
                    &mut w.agent,
                    &mut w.chain,
                    &mut w.repo,
                    &AnnounceRequest {
                        model: &model,
                        instance_line: Some(line),
                        issuer_pk: w.issuer.pk.clone(),
                        existence_value: 2_000,
                        fee: 100,
                    },
                )
                .unwrap(),
            );
        }
        assert_ne!(handles[0].existence_utxo, handles[1].existence_utxo);
        assert_eq!(handles[0].repo_key, handles[1].repo_key);
        assert_eq!(handles[0].status(&w.chain), ContractStatus::Active);
        assert_eq!(handles[1].status(&w.chain), ContractStatus::Active);
    }

    #[test]
    fn fixed_until_repay_matures_at_expiry() {
        let mut w = world();
        let parent = announce(&mut w, 10_000, 1_000);
        let model = approval_model();
        let expiry = w.chain.height() + 5;
        let issued = issue_subcontract(
            &mut w.agent,
            &w.issuer,
            &mut w.chain,
            &mut w.repo,
            &parent,
            &sub_request(
                &model,
                SubcontractTerm::FixedUntil {
                    expiry_height: expiry,
                },
            ),
        )
        .unwrap();
        assert_eq!(issued.handle.status(&w.chain), ContractStatus::Active);
        // Both metadata blocks: subcontract entry then parent entry.
        assert_eq!(
            issued.handle.redeem.metadata,
            vec![issued.handle.repo_key, parent.repo_key]
        );

        let early = w.chain.broadcast(issued.repay.clone()).unwrap_err();
        assert!(matches!(early, LedgerError::Immature { .. }));
        while w.chain.height() < expiry {
            w.chain.tick();
        }
        w.chain.broadcast(issued.repay).unwrap();
        assert_eq!(issued.handle.status(&w.chain), ContractStatus::Complete);
    }

    #[test]
    fn open_ended_repay_needs_monitor_signature() {
        let mut w = world();
        let d = deriver();
        let parent = announce(&mut w, 10_000, 1_000);
        let model = approval_model();
        let monitor = d.keypair_from_seed(b"monitor seed").unwrap();
        let issued = issue_subcontract(
            &mut w.agent,
            &w.issuer,
            &mut w.chain,
            &mut w.repo,
            &parent,
            &sub_request(
                &model,
                SubcontractTerm::OpenEnded {
                    monitor_pk: monitor.pk.clone(),
                    monitor_fee: 300,
                },
            ),
        )
        .unwrap();

        let mut repay = issued.repay.clone();
        let unsigned = w.chain.broadcast(repay.clone()).unwrap_err();
        assert!(matches!(unsigned, LedgerError::ScriptFailure(_)));

        add_multisig_signature(&w.chain, &mut repay, 0, &issued.handle.redeem, &monitor).unwrap();
        let txid = w.chain.broadcast(repay).unwrap();
        // Monitor's fee is the first output.
        let fee_out = w.chain.output(&OutPoint::new(txid, 0)).unwrap();
        assert_eq!(fee_out.value, 300);
        assert_eq!(issued.handle.status(&w.chain), ContractStatus::Complete);
    }

    #[test]
    fn issue_on_complete_parent_fails() {
        let mut w = world();
        let parent = announce(&mut w, 10_000, 1_000);
        let model = approval_model();
        let expiry = w.chain.height();
        let issued = issue_subcontract(
            &mut w.agent,
            &w.issuer,
            &mut w.chain,
            &mut w.repo,
            &parent,
            &sub_request(
                &model,
                SubcontractTerm::FixedUntil {
                    expiry_height: expiry,
                },
            ),
        )
        .unwrap();
        // Retire the PARENT by spending its existence output via its own repay path.
        let mut retire = Transaction {
            inputs: vec![TxInput {
                prev: parent.existence_utxo,
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value: 9_000,
                script_pubkey: w.agent.p2pkh(w.chain.deriver()),
            }],
            lock_time: 0,
        };
        retire.inputs[0].script_sig = multisig_script_sig(
            &w.chain,
            &retire,
            0,
            &parent.redeem,
            &[&w.agent.keypair.clone(), &w.issuer.clone()],
        )
        .unwrap();
        w.chain.broadcast(retire).unwrap();
        assert_eq!(parent.status(&w.chain), ContractStatus::Complete);

        let err = issue_subcontract(
            &mut w.agent,
            &w.issuer,
            &mut w.chain,
            &mut w.repo,
            &parent,
            &sub_request(
                &model,
                SubcontractTerm::FixedUntil {
                    expiry_height: expiry + 50,
                },
            ),
        )
        .unwrap_err();
        assert!(matches!(err, AgentError::ParentComplete));
        drop(issued);
    }

    #[test]
    fn seed_agreement_both_sources() {
        let mut w = world();
        let d = deriver();
        let parent = announce(&mut w, 10_000, 1_000);
        let model = approval_model();
        for source in [SeedSource::ExistenceTxid, SeedSource::RedeemScriptHash] {
            let mut request = sub_request(
                &model,
                SubcontractTerm::FixedUntil {
                    expiry_height: w.chain.height() + 100,
                },
            );
            request.seed_source = source;
            let issued = issue_subcontract(
                &mut w.agent,
                &w.issuer,
                &mut w.chain,
                &mut w.repo,
                &parent,
                &request,
            )
            .unwrap();
            // The issuer, deriving privately at the same path, lands on the
            // exact public key the agent pre-computed.
            let issuer_side = d.derive_path(&w.issuer, &issued.path).unwrap();
            assert_eq!(issuer_side.pk, issued.handle.issuer_pk);
            let expected_seed = match source {
                SeedSource::ExistenceTxid => parent.existence_utxo.txid,
                SeedSource::RedeemScriptHash => sha256(&parent.redeem.script_bytes()),
            };
            match &issued.path.steps()[0] {
                crate::keys::PathStep::Parallel { seed, .. } => assert_eq!(*seed, expected_seed),
                other => panic!("unexpected step {other:?}"),
            }
        }
    }

    #[test]
    fn monitor_pays_once_at_terminal() {
        let mut w = world();
        let d = deriver();
        let parent = announce(&mut w, 10_000, 1_000);
        let model = approval_model();
        let counterparty = d.keypair_from_seed(b"control department").unwrap();
        let mut request = sub_request(
            &model,
            SubcontractTerm::FixedUntil {
                expiry_height: w.chain.height() + 100,
            },
        );
        request.counterparty_keys = vec![counterparty.pk.clone()];
        let issued = issue_subcontract(
            &mut w.agent,
            &w.issuer,
            &mut w.chain,
            &mut w.repo,
            &parent,
            &request,
        )
        .unwrap();
        // Subcontract transactions are signed with the per-subcontract keys.
        let issuer_sub = d.derive_path(&w.issuer, &issued.path).unwrap();
        let mut checkpoint = Checkpoint::new(1, 1_500, issued.handle.clone());

        // Unsatisfied trigger: no payment, no state change on chain.
        let pending: BTreeMap<String, ParamValue> =
            [("certificate".to_string(), ParamValue::Tag("pending".into()))].into();
        let result = monitor_and_trigger(
            &mut w.agent,
            &mut w.chain,
            &w.repo,
            &mut checkpoint,
            &pending,
            &[&counterparty, &issuer_sub],
            &counterparty.pk,
        )
        .unwrap();
        assert!(result.is_none());
        assert!(checkpoint.paid().is_none());

        // Satisfied trigger: terminal state, payment broadcast, handle Complete.
        let issued_obs: BTreeMap<String, ParamValue> =
            [("certificate".to_string(), ParamValue::Tag("issued".into()))].into();
        let txid = monitor_and_trigger(
            &mut w.agent,
            &mut w.chain,
            &w.repo,
            &mut checkpoint,
            &issued_obs,
            &[&counterparty, &issuer_sub],
            &counterparty.pk,
        )
        .unwrap()
        .expect("payment triggered");
        assert_eq!(checkpoint.paid(), Some(txid));
        assert_eq!(
            checkpoint.subcontract.status(&w.chain),
            ContractStatus::Complete
        );
        let paid_out = w.chain.output(&OutPoint::new(txid, 0)).unwrap();
        assert_eq!(paid_out.value, 1_500);

        let again = monitor_and_trigger(
            &mut w.agent,
            &mut w.chain,
            &w.repo,
            &mut checkpoint,
            &issued_obs,
            &[&counterparty, &issuer_sub],
            &counterparty.pk,
        )
        .unwrap_err();
        assert!(matches!(again, AgentError::AlreadyPaid(_)));
    }

    #[test]
    fn allocation_rule_examples() {
        let d = deriver();
        let key = |seed: &[u8]| {
            d.curve()
                .compress(&d.keypair_from_seed(seed).unwrap().pk)
                .unwrap()
        };
        let half = Rational::new(1, 2).unwrap();
        let equal = [(key(b"a"), half), (key(b"b"), half)];
        assert_eq!(
            compute_allocations(&equal, 1_000, 100).unwrap(),
            vec![500, 500]
        );

        let skewed = [
            (key(b"a"), Rational::new(3, 4).unwrap()),
            (key(b"b"), Rational::new(1, 4).unwrap()),
        ];
        assert_eq!(
            compute_allocations(&skewed, 1_000, 100).unwrap(),
            vec![700, 300]
        );

        assert!(matches!(
            compute_allocations(&equal, 150, 100),
            Err(AgentError::PoolTooSmall { .. })
        ));
        let bad = [(key(b"a"), half), (key(b"b"), Rational::new(1, 3).unwrap())];
        assert!(matches!(
            compute_allocations(&bad, 1_000, 0),
            Err(AgentError::InvalidShares(_))
        ));

        // Rounding leftover lands on the highest share.
        let thirds = [
            (key(b"a"), Rational::new(2, 3).unwrap()),
            (key(b"b"), Rational::new(1, 3).unwrap()),
        ];
        let alloc = compute_allocations(&thirds, 1_000, 0).unwrap();
        assert_eq!(alloc.iter().sum::<u64>(), 1_000);
        assert_eq!(alloc, vec![667, 333]);
    }

    #[test]
    fn allocate_and_close_conserve_on_chain() {
        let d = deriver();
        let mut chain = Chain::new(d.clone());
        let mut manager =
            Agent::new("templates_manager", AgentRole::TemplatesManager, &d, b"mgr").unwrap();
        let mut a = Agent::new("master_a", AgentRole::Master, &d, b"ma").unwrap();
        let mut b = Agent::new("master_b", AgentRole::Master, &d, b"mb").unwrap();
        fund_agent(&mut chain, &mut manager, 10_000);

        let half = Rational::new(1, 2).unwrap();
        let allocations = {
            let mut masters = [(&mut a, half), (&mut b, half)];
            allocate_budgets(&mut manager, &mut masters, &mut chain, 1_000, 100).unwrap()
        };
        assert_eq!(allocations, vec![500, 500]);
        assert_eq!(a.budget, 500);
        assert_eq!(b.budget, 500);
        assert_eq!(manager.budget, 9_000);

        // Sweep master A back down to a 100 sat retainer.
        let returned = close_interval(&mut manager, &mut a, &mut chain, 100).unwrap();
        assert_eq!(returned, 400);
        assert_eq!(a.budget, 100);
        assert_eq!(manager.budget, 9_400);

        let below = close_interval(&mut manager, &mut a, &mut chain, 1_000).unwrap();
        assert_eq!(below, 0);
        assert_eq!(a.budget, 100);

        // Budget ops are fee-less, so the chain conserves exactly.
        let audit = chain.audit();
        assert!(audit.conserved());
        assert_eq!(audit.total_fees, 0);
        assert_eq!(manager.budget + a.budget + b.budget, 10_000);
    }

    #[test]
    fn handle_status_tracks_utxo_equivalence() {
        let mut w = world();
        let handle = announce(&mut w, 5_000, 500);
        assert_eq!(handle.status(&w.chain), ContractStatus::Active);
        assert_eq!(
            w.chain.utxo_status(&handle.existence_utxo),
            UtxoStatus::Unspent
        );
        let mut close = Transaction {
            inputs: vec![TxInput {
                prev: handle.existence_utxo,
                script_sig: Vec::new(),
            }],
            outputs: vec![TxOutput {
                value: 4_500,
                script_pubkey: w.agent.p2pkh(w.chain.deriver()),
            }],
            lock_time: 0,
        };
        close.inputs[0].script_sig = multisig_script_sig(
            &w.chain,
            &close,
            0,
            &handle.redeem,
            &[&w.agent.keypair.clone(), &w.issuer.clone()],
        )
        .unwrap();
        w.chain.broadcast(close).unwrap();
        assert_eq!(handle.status(&w.chain), ContractStatus::Complete);
        assert!(matches!(
            w.chain.utxo_status(&handle.existence_utxo),
            UtxoStatus::Spent(_)
        ));
    }
}
