//! Replayable scenario files.
//!
//! A scenario is a canonical document declaring named parties (with
//! deterministic key seeds) and an ordered event list. Replaying it drives
//! the agents, ledger, repositories and exchange through their public
//! operations and emits a textual trace with every confirmed transaction
//! in the standard dump layout. All randomness enters through the file, so
//! identical inputs produce byte-identical traces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{
    add_multisig_signature, allocate_budgets, announce_contract, close_interval, fund_agent,
    issue_subcontract, monitor_and_trigger, Agent, AgentRole, AnnounceRequest, Checkpoint,
    ContractHandle, IssuedSubcontract, SeedSource, SubcontractRequest, SubcontractTerm,
};
use crate::contract::{append_instance_line, derive_semi_template, ContractModel};
use crate::dht::{DhtStore, LookupKey};
use crate::exchange::{
    build_exchange_tx, make_invitation_script, match_invitations, publish_invitation,
    EntityDescriptor, ExchangePolicy, InvitationFunding, InvitationMetadata, InvitationRecord,
};
use crate::hashes::Hash32;
use crate::keys::{KeyDeriver, KeyPair, KeyPath};
use crate::ledger::{render_tx, Chain, OutPoint};
use crate::predicate::{Comparison, ParamValue};
use crate::rational::Rational;
use crate::token::TokenMetadata;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("EventError at event {index}: {message}")]
    Event { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyKind {
    MasterAgent,
    SubordinateAgent,
    TemplatesManager,
    Party,
}

impl PartyKind {
    fn role(self) -> AgentRole {
        match self {
            PartyKind::MasterAgent | PartyKind::Party => AgentRole::Master,
            PartyKind::SubordinateAgent => AgentRole::Subordinate,
            PartyKind::TemplatesManager => AgentRole::TemplatesManager,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyDecl {
    pub name: String,
    pub kind: PartyKind,
    /// Arbitrary seed string; the master secret is SHA-256 of its bytes.
    pub seed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TermSpec {
    FixedUntil { height: u64 },
    OpenEnded { monitor: String, monitor_fee: u64 },
}

/// An entity reference inside a scenario: the contract field names a
/// stored model by its event id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEntity {
    pub entity_type: String,
    pub quantity: TokenMetadata,
    pub contract: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum ScenarioEvent {
    Fund {
        party: String,
        amount: u64,
    },
    StoreModel {
        id: String,
        model: Box<ContractModel>,
    },
    DeriveSemiTemplate {
        id: String,
        template: String,
        #[serde(default)]
        amendments: BTreeMap<String, Value>,
    },
    AppendLine {
        id: String,
        template: String,
        params: BTreeMap<String, ParamValue>,
    },
    Announce {
        id: String,
        agent: String,
        issuer: String,
        model: String,
        #[serde(default)]
        line: Option<String>,
        value: u64,
        fee: u64,
    },
    IssueSub(Box<IssueSubDecl>),
    Checkpoint {
        id: String,
        subcontract: String,
        index: u32,
        amount: u64,
    },
    Observe {
        checkpoint: String,
        agent: String,
        observations: BTreeMap<String, ParamValue>,
        cosigners: Vec<String>,
        payee: String,
    },
    BroadcastRepay {
        issued: String,
    },
    SignRepay {
        issued: String,
        signer: String,
    },
    Tick {
        count: u64,
    },
    Invite(Box<InviteDecl>),
    Match {
        record: String,
    },
    Exchange {
        id: String,
        k: String,
        m: String,
        a_agent: String,
        #[serde(default)]
        a_issuer: Option<String>,
        b_agent: String,
        b_issuer: String,
        fee: u64,
    },
    Allocate {
        manager: String,
        masters: Vec<ShareDecl>,
        pool: u64,
        floor: u64,
    },
    CloseInterval {
        manager: String,
        agent: String,
        minimum: u64,
    },
    Status {
        of: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareDecl {
    pub agent: String,
    pub share: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueSubDecl {
    pub id: String,
    pub agent: String,
    pub issuer: String,
    pub parent: String,
    pub model: String,
    #[serde(default)]
    pub counterparties: Vec<String>,
    pub term: TermSpec,
    pub value: u64,
    pub fee: u64,
    pub repay_fee: u64,
    #[serde(default)]
    pub seed_source: SeedSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InviteDecl {
    pub id: String,
    pub issuer: String,
    pub agent: String,
    pub path: String,
    pub offered: ScenarioEntity,
    pub wanted: ScenarioEntity,
    #[serde(default)]
    pub conditions: Vec<Comparison>,
    #[serde(default)]
    pub scope: Option<String>,
    pub funding_party: String,
    pub value: u64,
    pub fee: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_nodes")]
    pub dht_nodes: u32,
    /// Optional custom base point (compressed hex) for all key material.
    #[serde(default)]
    pub base_point: Option<String>,
    pub parties: Vec<PartyDecl>,
    pub events: Vec<ScenarioEvent>,
}

fn default_nodes() -> u32 {
    1
}

pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    serde_json::from_slice(bytes).map_err(|e| ScenarioError::Parse(e.to_string()))
}

/// Everything a replay leaves behind, for inspection and persistence.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub trace: String,
    pub chain: Chain,
    pub contract_repo: DhtStore,
    pub invitation_dht: DhtStore,
}

#[derive(Default)]
struct Symbols {
    keys: BTreeMap<String, LookupKey>,
    lines: BTreeMap<String, (LookupKey, u64)>,
    handles: BTreeMap<String, ContractHandle>,
    issued: BTreeMap<String, IssuedSubcontract>,
    checkpoints: BTreeMap<String, (Checkpoint, KeyPath)>,
    records: BTreeMap<String, (InvitationRecord, KeyPath, String, String)>,
}

struct Runner {
    deriver: KeyDeriver,
    chain: Chain,
    repo: DhtStore,
    invitations: DhtStore,
    parties: BTreeMap<String, Agent>,
    symbols: Symbols,
    dumped_height: u64,
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome, ScenarioError> {
    let deriver = match &scenario.base_point {
        None => KeyDeriver::secp256k1(),
        Some(hex_point) => {
            let standard = KeyDeriver::secp256k1();
            let base = standard
                .pk_from_hex(hex_point)
                .map_err(|e| ScenarioError::Parse(format!("bad base point: {e}")))?;
            KeyDeriver::with_base(standard.curve().clone(), base)
                .map_err(|e| ScenarioError::Parse(format!("bad base point: {e}")))?
        }
    };
    let mut runner = Runner {
        chain: Chain::new(deriver.clone()),
        repo: DhtStore::new(scenario.dht_nodes).map_err(|e| ScenarioError::Parse(e.to_string()))?,
        invitations: DhtStore::new(scenario.dht_nodes)
            .map_err(|e| ScenarioError::Parse(e.to_string()))?,
        parties: BTreeMap::new(),
        symbols: Symbols::default(),
        dumped_height: 0,
        deriver,
    };
    for decl in &scenario.parties {
        let agent = Agent::new(
            &decl.name,
            decl.kind.role(),
            &runner.deriver,
            decl.seed.as_bytes(),
        )
        .map_err(|e| ScenarioError::Parse(format!("party {}: {e}", decl.name)))?;
        runner.parties.insert(decl.name.clone(), agent);
    }
    let mut trace = String::new();
    for (index, event) in scenario.events.iter().enumerate() {
        runner
            .apply(index, event, &mut trace)
            .map_err(|message| ScenarioError::Event { index, message })?;
        runner.dump_new_txs(&mut trace);
    }
    Ok(ScenarioOutcome {
        trace,
        chain: runner.chain,
        contract_repo: runner.repo,
        invitation_dht: runner.invitations,
    })
}

impl Runner {
    fn dump_new_txs(&mut self, trace: &mut String) {
        while self.dumped_height < self.chain.height() {
            self.dumped_height += 1;
            for tx in self.chain.txs_at(self.dumped_height) {
                trace.push_str("-- confirmed --\n");
                trace.push_str(&render_tx(&tx, Some(self.dumped_height)));
            }
        }
    }

    fn party(&self, name: &str) -> Result<&Agent, String> {
        self.parties
            .get(name)
            .ok_or_else(|| format!("unknown party {name}"))
    }

    fn take_party(&mut self, name: &str) -> Result<Agent, String> {
        self.parties
            .remove(name)
            .ok_or_else(|| format!("unknown party {name}"))
    }

    fn model_key(&self, reference: &str) -> Result<LookupKey, String> {
        if let Some(key) = self.symbols.keys.get(reference) {
            return Ok(*key);
        }
        Hash32::from_hex(reference).map_err(|_| format!("unknown model reference {reference}"))
    }

    fn load_model(&self, reference: &str) -> Result<ContractModel, String> {
        let key = self.model_key(reference)?;
        let body = self
            .repo
            .get(&key)
            .ok_or_else(|| format!("model {reference} not stored"))?;
        crate::contract::validate_model(body).map_err(|v| {
            format!(
                "stored model invalid: {}",
                v.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )
        })
    }

    fn handle(&self, reference: &str) -> Result<ContractHandle, String> {
        if let Some(h) = self.symbols.handles.get(reference) {
            return Ok(h.clone());
        }
        if let Some(issued) = self.symbols.issued.get(reference) {
            return Ok(issued.handle.clone());
        }
        Err(format!("unknown contract reference {reference}"))
    }

    /// A cosigner signs with whichever of its keys the redeem script lists:
    /// the sub-key derived at the subcontract's path, or its master key.
    fn resolve_signer(
        &self,
        name: &str,
        path: &KeyPath,
        redeem_keys: &[crate::script::CompressedKey],
    ) -> Result<KeyPair, String> {
        let party = self.party(name)?;
        let derived = self
            .deriver
            .derive_path(&party.keypair, path)
            .map_err(|e| format!("derive for {name}: {e}"))?;
        let curve = self.deriver.curve();
        let derived_enc = curve.compress(&derived.pk).map_err(|e| e.to_string())?;
        if redeem_keys.iter().any(|k| k.0 == derived_enc) {
            return Ok(derived);
        }
        let master_enc = curve
            .compress(&party.keypair.pk)
            .map_err(|e| e.to_string())?;
        if redeem_keys.iter().any(|k| k.0 == master_enc) {
            return Ok(party.keypair.clone());
        }
        Err(format!("{name} holds no key in the redeem script"))
    }

    fn entity(&self, decl: &ScenarioEntity) -> Result<EntityDescriptor, String> {
        let key = self.model_key(&decl.contract)?;
        if !self.repo.contains(&key) {
            return Err(format!(
                "entity contract {} not in the repository",
                decl.contract
            ));
        }
        Ok(EntityDescriptor {
            entity_type: decl.entity_type.clone(),
            quantity: decl.quantity.clone(),
            contract_ref: key,
        })
    }

    fn apply(
        &mut self,
        index: usize,
        event: &ScenarioEvent,
        trace: &mut String,
    ) -> Result<(), String> {
        match event {
            ScenarioEvent::Fund { party, amount } => {
                let mut agent = self.take_party(party)?;
                fund_agent(&mut self.chain, &mut agent, *amount);
                trace.push_str(&format!(
                    "== [{index}] fund: {party} += {amount} (budget {})\n",
                    agent.budget
                ));
                self.parties.insert(party.clone(), agent);
            }
            ScenarioEvent::StoreModel { id, model } => {
                let violations = crate::contract::validate_model(&model.canonical_bytes())
                    .err()
                    .map(|v| {
                        v.iter()
                            .map(|x| x.to_string())
                            .collect::<Vec<_>>()
                            .join("; ")
                    });
                if let Some(v) = violations {
                    return Err(format!("model {id} invalid: {v}"));
                }
                let key = self.repo.put(&model.canonical_bytes());
                self.symbols.keys.insert(id.clone(), key);
                trace.push_str(&format!("== [{index}] store_model: {id} = {key}\n"));
            }
            ScenarioEvent::DeriveSemiTemplate {
                id,
                template,
                amendments,
            } => {
                let template_key = self.model_key(template)?;
                let key = derive_semi_template(&mut self.repo, &template_key, amendments)
                    .map_err(|e| e.to_string())?;
                self.symbols.keys.insert(id.clone(), key);
                trace.push_str(&format!(
                    "== [{index}] derive_semi_template: {id} = {key} (from {template})\n"
                ));
            }
            ScenarioEvent::AppendLine {
                id,
                template,
                params,
            } => {
                let key = self.model_key(template)?;
                let line = append_instance_line(&mut self.repo, &key, params)
                    .map_err(|e| e.to_string())?;
                self.symbols.lines.insert(id.clone(), (key, line));
                trace.push_str(&format!(
                    "== [{index}] append_line: {id} = line {line} of {template}\n"
                ));
            }
            ScenarioEvent::Announce {
                id,
                agent,
                issuer,
                model,
                line,
                value,
                fee,
            } => {
                let model = self.load_model(model)?;
                let issuer_pk = self.party(issuer)?.keypair.pk.clone();
                let instance_line = match line {
                    None => None,
                    Some(reference) => Some(
                        self.symbols
                            .lines
                            .get(reference)
                            .map(|(_, idx)| *idx)
                            .or_else(|| reference.parse().ok())
                            .ok_or_else(|| format!("unknown line reference {reference}"))?,
                    ),
                };
                let mut acting = self.take_party(agent)?;
                let result = announce_contract(
                    &mut acting,
                    &mut self.chain,
                    &mut self.repo,
                    &AnnounceRequest {
                        model: &model,
                        instance_line,
                        issuer_pk,
                        existence_value: *value,
                        fee: *fee,
                    },
                );
                self.parties.insert(agent.clone(), acting);
                let handle = result.map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] announce: {id} existence={} repo={}\n",
                    handle.existence_utxo, handle.repo_key
                ));
                self.symbols.handles.insert(id.clone(), handle);
            }
            ScenarioEvent::IssueSub(decl) => {
                let IssueSubDecl {
                    id,
                    agent,
                    issuer,
                    parent,
                    model,
                    counterparties,
                    term,
                    value,
                    fee,
                    repay_fee,
                    seed_source,
                } = decl.as_ref();
                let model = self.load_model(model)?;
                let parent_handle = self.handle(parent)?;
                let issuer_pair = self.party(issuer)?.keypair.clone();
                let counterparty_keys = counterparties
                    .iter()
                    .map(|name| self.party(name).map(|p| p.keypair.pk.clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                let term = match term {
                    TermSpec::FixedUntil { height } => SubcontractTerm::FixedUntil {
                        expiry_height: *height,
                    },
                    TermSpec::OpenEnded {
                        monitor,
                        monitor_fee,
                    } => SubcontractTerm::OpenEnded {
                        monitor_pk: self.party(monitor)?.keypair.pk.clone(),
                        monitor_fee: *monitor_fee,
                    },
                };
                let mut acting = self.take_party(agent)?;
                let result = issue_subcontract(
                    &mut acting,
                    &issuer_pair,
                    &mut self.chain,
                    &mut self.repo,
                    &parent_handle,
                    &SubcontractRequest {
                        model: &model,
                        counterparty_keys,
                        term,
                        nominal_value: *value,
                        fee: *fee,
                        repay_fee: *repay_fee,
                        repay_to_issuer: false,
                        seed_source: *seed_source,
                        include_parent_ref: true,
                    },
                );
                self.parties.insert(agent.clone(), acting);
                let issued = result.map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] issue_sub: {id} existence={} repo={} path={}\n",
                    issued.handle.existence_utxo, issued.handle.repo_key, issued.path
                ));
                self.symbols.issued.insert(id.clone(), issued);
            }
            ScenarioEvent::Checkpoint {
                id,
                subcontract,
                index: cp_index,
                amount,
            } => {
                let issued = self
                    .symbols
                    .issued
                    .get(subcontract)
                    .ok_or_else(|| format!("unknown subcontract {subcontract}"))?;
                let checkpoint = Checkpoint::new(*cp_index, *amount, issued.handle.clone());
                self.symbols
                    .checkpoints
                    .insert(id.clone(), (checkpoint, issued.path.clone()));
                trace.push_str(&format!(
                    "== [{index}] checkpoint: {id} Z_{cp_index} = {amount}\n"
                ));
            }
            ScenarioEvent::Observe {
                checkpoint,
                agent,
                observations,
                cosigners,
                payee,
            } => {
                let (mut cp, path) = self
                    .symbols
                    .checkpoints
                    .remove(checkpoint)
                    .ok_or_else(|| format!("unknown checkpoint {checkpoint}"))?;
                let redeem_keys = cp.subcontract.redeem.keys.clone();
                let signer_pairs = cosigners
                    .iter()
                    .map(|name| self.resolve_signer(name, &path, &redeem_keys))
                    .collect::<Result<Vec<_>, _>>()?;
                let signer_refs: Vec<&KeyPair> = signer_pairs.iter().collect();
                let payee_pk = self.party(payee)?.keypair.pk.clone();
                let mut acting = self.take_party(agent)?;
                let result = monitor_and_trigger(
                    &mut acting,
                    &mut self.chain,
                    &self.repo,
                    &mut cp,
                    observations,
                    &signer_refs,
                    &payee_pk,
                );
                self.parties.insert(agent.clone(), acting);
                let paid = result.map_err(|e| e.to_string())?;
                match paid {
                    Some(txid) => trace.push_str(&format!(
                        "== [{index}] observe: {checkpoint} -> paid Z_{} = {} in {txid}\n",
                        cp.index, cp.amount
                    )),
                    None => trace.push_str(&format!(
                        "== [{index}] observe: {checkpoint} -> no payment\n"
                    )),
                }
                self.symbols
                    .checkpoints
                    .insert(checkpoint.clone(), (cp, path));
            }
            ScenarioEvent::BroadcastRepay { issued } => {
                let repay = self
                    .symbols
                    .issued
                    .get(issued)
                    .ok_or_else(|| format!("unknown subcontract {issued}"))?
                    .repay
                    .clone();
                match self.chain.broadcast(repay) {
                    Ok(txid) => {
                        trace.push_str(&format!("== [{index}] repay {issued}: confirmed {txid}\n"))
                    }
                    Err(e) => {
                        trace.push_str(&format!("== [{index}] repay {issued}: rejected ({e})\n"))
                    }
                }
            }
            ScenarioEvent::SignRepay { issued, signer } => {
                let signer_pair = self.party(signer)?.keypair.clone();
                let entry = self
                    .symbols
                    .issued
                    .get_mut(issued)
                    .ok_or_else(|| format!("unknown subcontract {issued}"))?;
                let redeem = entry.handle.redeem.clone();
                add_multisig_signature(&self.chain, &mut entry.repay, 0, &redeem, &signer_pair)
                    .map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] sign_repay: {signer} signed {issued}\n"
                ));
            }
            ScenarioEvent::Tick { count } => {
                for _ in 0..*count {
                    self.chain.tick();
                }
                trace.push_str(&format!(
                    "== [{index}] tick: height now {}\n",
                    self.chain.height()
                ));
            }
            ScenarioEvent::Invite(decl) => {
                let InviteDecl {
                    id,
                    issuer,
                    agent,
                    path,
                    offered,
                    wanted,
                    conditions,
                    scope,
                    funding_party,
                    value,
                    fee,
                } = decl.as_ref();
                let path: KeyPath = path.parse().map_err(|e| format!("bad path: {e}"))?;
                let metadata = InvitationMetadata {
                    offered: self.entity(offered)?,
                    wanted: self.entity(wanted)?,
                    conditions: conditions.clone(),
                    scope: scope.clone(),
                };
                let issuer_pair = self.party(issuer)?.keypair.clone();
                let agent_pair = self.party(agent)?.keypair.clone();
                let script = make_invitation_script(
                    &self.deriver,
                    &issuer_pair,
                    &agent_pair,
                    &path,
                    metadata,
                )
                .map_err(|e| e.to_string())?;
                let funder = self.party(funding_party)?.keypair.clone();
                let funding_outpoint = self
                    .chain
                    .unspent_by_script(&crate::script::ScriptPubkey::P2pkh(
                        crate::script::p2pkh_hash(&self.deriver, &funder.pk)
                            .map_err(|e| e.to_string())?,
                    ))
                    .into_iter()
                    .find(|(_, v)| *v >= value + fee)
                    .map(|(op, _)| op)
                    .ok_or_else(|| {
                        format!("{funding_party} has no output covering {}", value + fee)
                    })?;
                let record = publish_invitation(
                    &mut self.invitations,
                    &mut self.chain,
                    &script,
                    &InvitationFunding {
                        outpoint: funding_outpoint,
                        key: &funder,
                        invitation_value: *value,
                        fee: *fee,
                    },
                )
                .map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] invite: {id} dht_key={} ti={}\n",
                    record.dht_key, record.invitation_txid
                ));
                self.symbols
                    .records
                    .insert(id.clone(), (record, path, issuer.clone(), agent.clone()));
            }
            ScenarioEvent::Match { record } => {
                let (rec, _, _, _) = self
                    .symbols
                    .records
                    .get(record)
                    .ok_or_else(|| format!("unknown invitation {record}"))?;
                let candidates =
                    match_invitations(&self.invitations, rec).map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] match {record}: {} candidate(s)\n",
                    candidates.len()
                ));
                for candidate in candidates {
                    trace.push_str(&format!("   candidate dht_key={}\n", candidate.dht_key));
                }
            }
            ScenarioEvent::Exchange {
                id,
                k,
                m,
                a_agent,
                a_issuer,
                b_agent,
                b_issuer,
                fee,
            } => {
                let (rec_k, path_k, _, _) = self
                    .symbols
                    .records
                    .get(k)
                    .ok_or_else(|| format!("unknown invitation {k}"))?
                    .clone();
                let (rec_m, path_m, _, _) = self
                    .symbols
                    .records
                    .get(m)
                    .ok_or_else(|| format!("unknown invitation {m}"))?
                    .clone();
                let derive = |name: &str, path: &KeyPath| -> Result<KeyPair, String> {
                    let party = self.party(name)?;
                    self.deriver
                        .derive_path(&party.keypair, path)
                        .map_err(|e| format!("derive for {name}: {e}"))
                };
                let a_agent_pair = derive(a_agent, &path_k)?;
                let a_issuer_pair = match a_issuer {
                    Some(name) => Some(derive(name, &path_k)?),
                    None => None,
                };
                let b_agent_pair = derive(b_agent, &path_m)?;
                let b_issuer_pair = derive(b_issuer, &path_m)?;
                let tx = build_exchange_tx(
                    &self.chain,
                    &mut self.invitations,
                    &rec_k,
                    &rec_m,
                    &crate::exchange::SideSigners {
                        agent: &a_agent_pair,
                        issuer: a_issuer_pair.as_ref(),
                    },
                    &crate::exchange::SideSigners {
                        agent: &b_agent_pair,
                        issuer: Some(&b_issuer_pair),
                    },
                    crate::exchange::ExchangeTerms {
                        policy: ExchangePolicy::Asymmetric,
                        fee: *fee,
                    },
                )
                .map_err(|e| e.to_string())?;
                let txid = self.chain.broadcast(tx).map_err(|e| e.to_string())?;
                trace.push_str(&format!("== [{index}] exchange: {id} = {txid}\n"));
            }
            ScenarioEvent::Allocate {
                manager,
                masters,
                pool,
                floor,
            } => {
                let mut mgr = self.take_party(manager)?;
                let mut taken: Vec<(String, Agent, Rational)> = Vec::new();
                for decl in masters {
                    let agent = self.take_party(&decl.agent)?;
                    taken.push((decl.agent.clone(), agent, decl.share));
                }
                let result = {
                    let mut refs: Vec<(&mut Agent, Rational)> =
                        taken.iter_mut().map(|(_, a, s)| (a, *s)).collect();
                    allocate_budgets(&mut mgr, &mut refs, &mut self.chain, *pool, *floor)
                };
                self.parties.insert(manager.clone(), mgr);
                for (name, agent, _) in taken {
                    self.parties.insert(name, agent);
                }
                let allocations = result.map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] allocate: pool {pool} -> {allocations:?}\n"
                ));
            }
            ScenarioEvent::CloseInterval {
                manager,
                agent,
                minimum,
            } => {
                let mut mgr = self.take_party(manager)?;
                let result = match self.take_party(agent) {
                    Ok(mut master) => {
                        let r = close_interval(&mut mgr, &mut master, &mut self.chain, *minimum);
                        self.parties.insert(agent.clone(), master);
                        r
                    }
                    Err(e) => {
                        self.parties.insert(manager.clone(), mgr);
                        return Err(e);
                    }
                };
                self.parties.insert(manager.clone(), mgr);
                let returned = result.map_err(|e| e.to_string())?;
                trace.push_str(&format!(
                    "== [{index}] close_interval: {agent} returned {returned}\n"
                ));
            }
            ScenarioEvent::Status { of } => {
                let line = self.status_line(of)?;
                trace.push_str(&format!("== [{index}] status {of}: {line}\n"));
            }
        }
        Ok(())
    }

    fn status_line(&self, reference: &str) -> Result<String, String> {
        if let Ok(handle) = self.handle(reference) {
            return Ok(format!(
                "{} (existence {} {})",
                handle.status(&self.chain),
                handle.existence_utxo,
                self.chain.utxo_status(&handle.existence_utxo)
            ));
        }
        if let Some((record, _, _, _)) = self.symbols.records.get(reference) {
            return Ok(format!(
                "invitation output {} {}",
                record.outpoint(),
                self.chain.utxo_status(&record.outpoint())
            ));
        }
        if let Some((txid_hex, index)) = reference.rsplit_once(':') {
            let txid = Hash32::from_hex(txid_hex).map_err(|e| e.to_string())?;
            let index: u32 = index
                .parse()
                .map_err(|_| format!("bad output index in {reference}"))?;
            return Ok(self
                .chain
                .utxo_status(&OutPoint::new(txid, index))
                .to_string());
        }
        Err(format!("unknown status target {reference}"))
    }
}
