//! Scenario-driving command line for the covenant engine.
//!
//! State lives in two places between invocations: `--chain` (a canonical
//! chain snapshot) and `--store` (a directory with `contracts/` and
//! `invitations/` DHT dumps). Every verb maps onto one engine operation or
//! a fixed composition; all key material arrives through flags or scenario
//! files, so repeated runs are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use covenant::agents::{
    announce_contract, issue_subcontract, Agent, AgentRole, AnnounceRequest, SubcontractRequest,
    SubcontractTerm,
};
use covenant::canonical::{struct_to_canonical, to_canonical_string};
use covenant::contract::validate_model;
use covenant::curve::Scalar;
use covenant::dht::DhtStore;
use covenant::exchange::{
    build_exchange_tx, match_invitations, publish_invitation, ExchangePolicy, ExchangeTerms,
    InvitationFunding, InvitationMetadata, InvitationRecord, InvitationScript, SideSigners,
};
use covenant::hashes::Hash32;
use covenant::keys::{KeyDeriver, KeyPair, KeyPath};
use covenant::ledger::{Chain, ChainSnapshot, OutPoint};
use covenant::rational::Rational;
use covenant::scenario::{parse_scenario, run_scenario};
use covenant::script::ScriptPubkey;
use covenant::token::{is_divisible, make_token, split_token, token_value};

#[derive(Parser)]
#[command(
    name = "covenant",
    version,
    about = "Smart-contract orchestration over a simulated UTXO ledger"
)]
struct Cli {
    /// Chain state file; created on first mutation.
    #[arg(long, global = true, default_value = "chain.json")]
    chain: PathBuf,
    /// Store directory holding contracts/ and invitations/ DHT dumps.
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,
    /// Custom base point (compressed hex) for freshly created chains.
    #[arg(long, global = true)]
    base: Option<String>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Canonical,
}

#[derive(Subcommand)]
enum Command {
    /// Deterministic key pair from a seed string.
    Keygen {
        #[arg(long)]
        seed: String,
    },
    /// Derive a child key along a path (private or public side).
    Derive {
        /// Path like p:<seedhex>:<labelhex>/s:<seedhex>:<depth>.
        #[arg(long)]
        path: String,
        /// 32-byte secret (hex) for private derivation.
        #[arg(long)]
        secret: Option<String>,
        /// Compressed public key (hex) for public-only derivation.
        #[arg(long)]
        public: Option<String>,
    },
    /// ECDH common secret and symmetric key from one secret and one public key.
    Secret {
        #[arg(long)]
        secret: String,
        #[arg(long)]
        public: String,
    },
    /// Validate a contract model document and store it in the repository.
    ContractCreate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Mint value to a public key's wallet (simulated external funds).
    Fund {
        #[arg(long)]
        public: String,
        #[arg(long)]
        amount: u64,
    },
    /// Announce a stored contract: lock an existence output under 2-of-2 P2SH.
    ContractAnnounce {
        #[arg(long)]
        agent_secret: String,
        #[arg(long)]
        issuer_public: String,
        #[arg(long)]
        model_key: String,
        #[arg(long)]
        line: Option<u64>,
        #[arg(long)]
        value: u64,
        #[arg(long)]
        fee: u64,
    },
    /// Issue a subcontract under an active parent (six-step protocol).
    SubcontractIssue {
        #[arg(long)]
        agent_secret: String,
        #[arg(long)]
        issuer_secret: String,
        /// Parent existence output as txid:index.
        #[arg(long)]
        parent: String,
        /// Parent repository key (hex).
        #[arg(long)]
        parent_key: String,
        /// Parent instance line, when the announcement used one.
        #[arg(long)]
        parent_line: Option<u64>,
        /// Subcontract model repository key (hex).
        #[arg(long)]
        model_key: String,
        /// Counterparty compressed keys joining the redeem script.
        #[arg(long = "counterparty")]
        counterparties: Vec<String>,
        /// Fixed-term expiry height; mutually exclusive with --monitor-public.
        #[arg(long)]
        expiry: Option<u64>,
        /// Monitor key for an open-ended subcontract.
        #[arg(long)]
        monitor_public: Option<String>,
        #[arg(long, default_value_t = 0)]
        monitor_fee: u64,
        #[arg(long)]
        value: u64,
        #[arg(long)]
        fee: u64,
        #[arg(long, default_value_t = 0)]
        repay_fee: u64,
        /// Write the held repay transaction here for later broadcast.
        #[arg(long)]
        repay_out: Option<PathBuf>,
    },
    /// Spend state of an output: Unspent, Spent or Unknown.
    Status { txid: String, index: u32 },
    /// Validate token metadata; optionally split and value it.
    Token {
        #[arg(long)]
        total: u64,
        #[arg(long)]
        transfer: String,
        #[arg(long)]
        rate: String,
        /// Comma-separated quantities to split into.
        #[arg(long)]
        split: Option<String>,
    },
    /// Publish an exchange invitation from a metadata document.
    Invite {
        #[arg(long)]
        issuer_secret: String,
        #[arg(long)]
        agent_secret: String,
        #[arg(long)]
        path: String,
        /// InvitationMetadata document (JSON file).
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        funding_secret: String,
        #[arg(long)]
        value: u64,
        #[arg(long)]
        fee: u64,
    },
    /// List candidate counterparts for a published invitation.
    #[command(name = "match")]
    Match {
        #[arg(long)]
        key: String,
    },
    /// Settle two matched invitations atomically.
    Exchange {
        #[arg(long)]
        k: String,
        #[arg(long)]
        m: String,
        /// Side A agent derived secret (hex).
        #[arg(long)]
        a_agent_secret: String,
        #[arg(long)]
        a_issuer_secret: Option<String>,
        #[arg(long)]
        b_agent_secret: String,
        #[arg(long)]
        b_issuer_secret: String,
        #[arg(long)]
        fee: u64,
    },
    /// Advance empty blocks so lock-times mature.
    ChainTick {
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Dump the chain as field-by-field text or canonical JSON.
    ChainDump,
    /// Replay a scenario file from fresh state and persist the result.
    ScenarioRun { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            if !report.is_empty() {
                // A closed pipe downstream is not a failure of the command.
                use std::io::Write;
                let _ = writeln!(std::io::stdout(), "{report}");
            }
            ExitCode::SUCCESS
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

struct Stores {
    chain: Chain,
    repo: DhtStore,
    invitations: DhtStore,
}

fn deriver_for_new_state(cli: &Cli) -> Result<KeyDeriver, String> {
    let standard = KeyDeriver::secp256k1();
    match &cli.base {
        None => Ok(standard),
        Some(hex_point) => {
            let base = standard.pk_from_hex(hex_point).map_err(|e| e.to_string())?;
            KeyDeriver::with_base(standard.curve().clone(), base).map_err(|e| e.to_string())
        }
    }
}

fn load_stores(cli: &Cli) -> Result<Stores, String> {
    let chain = if cli.chain.exists() {
        let bytes = fs::read(&cli.chain).map_err(|e| format!("Io: {e}"))?;
        let snapshot: ChainSnapshot =
            serde_json::from_slice(&bytes).map_err(|e| format!("CorruptSnapshot: {e}"))?;
        Chain::restore(&snapshot).map_err(|e| e.to_string())?
    } else {
        Chain::new(deriver_for_new_state(cli)?)
    };
    let repo = load_dht(&cli.store.join("contracts"))?;
    let invitations = load_dht(&cli.store.join("invitations"))?;
    Ok(Stores {
        chain,
        repo,
        invitations,
    })
}

fn load_dht(dir: &Path) -> Result<DhtStore, String> {
    if dir.exists() {
        DhtStore::load_dir(dir).map_err(|e| e.to_string())
    } else {
        Ok(DhtStore::single())
    }
}

fn save_stores(cli: &Cli, stores: &Stores) -> Result<(), String> {
    let bytes = struct_to_canonical(&stores.chain.snapshot()).map_err(|e| e.to_string())?;
    fs::write(&cli.chain, bytes).map_err(|e| format!("Io: {e}"))?;
    stores
        .repo
        .dump_dir(&cli.store.join("contracts"))
        .map_err(|e| e.to_string())?;
    stores
        .invitations
        .dump_dir(&cli.store.join("invitations"))
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn parse_secret(deriver: &KeyDeriver, hex_secret: &str) -> Result<KeyPair, String> {
    let bytes = hex::decode(hex_secret).map_err(|_| "BadHex: secret is not hex".to_string())?;
    let scalar: Scalar = deriver
        .curve()
        .scalar_from_bytes(&bytes)
        .map_err(|e| e.to_string())?;
    Ok(deriver.keypair_from_secret(scalar))
}

fn parse_hash(hex_hash: &str) -> Result<Hash32, String> {
    Hash32::from_hex(hex_hash).map_err(|e| e.to_string())
}

fn parse_outpoint(s: &str) -> Result<OutPoint, String> {
    let (txid, index) = s
        .rsplit_once(':')
        .ok_or_else(|| "BadOutpoint: expected txid:index".to_string())?;
    Ok(OutPoint::new(
        parse_hash(txid)?,
        index
            .parse()
            .map_err(|_| "BadOutpoint: bad index".to_string())?,
    ))
}

fn agent_for(deriver: &KeyDeriver, secret: &str) -> Result<Agent, String> {
    let pair = parse_secret(deriver, secret)?;
    Ok(Agent::from_keypair("cli_agent", AgentRole::Master, pair))
}

/// Rebuild an invitation record from the published store entry.
fn record_from_store(store: &DhtStore, key: &Hash32) -> Result<InvitationRecord, String> {
    let body = store
        .get(key)
        .ok_or_else(|| format!("UnknownKey: {key} is not in the invitation store"))?;
    let script: InvitationScript =
        serde_json::from_slice(body).map_err(|e| format!("BadDocument: {e}"))?;
    let lines = store.lines(key).map_err(|e| e.to_string())?;
    let last = lines
        .last()
        .ok_or_else(|| format!("UnpublishedInvitation: {key} has no invitation transaction"))?;
    let doc: serde_json::Value =
        serde_json::from_slice(last).map_err(|e| format!("BadDocument: {e}"))?;
    let txid = doc
        .get("ti")
        .and_then(|v| v.as_str())
        .ok_or_else(|| "BadDocument: malformed transaction link".to_string())?;
    Ok(InvitationRecord {
        script,
        dht_key: *key,
        invitation_txid: parse_hash(txid)?,
    })
}

fn run(cli: &Cli) -> Result<String, String> {
    match &cli.command {
        Command::Keygen { seed } => {
            let deriver = deriver_for_new_state(cli)?;
            let pair = deriver
                .keypair_from_seed(seed.as_bytes())
                .map_err(|e| e.to_string())?;
            Ok(format!(
                "secret: {}\npublic: {}",
                pair.sk.to_hex(),
                deriver.pk_hex(&pair.pk).map_err(|e| e.to_string())?
            ))
        }
        Command::Derive {
            path,
            secret,
            public,
        } => {
            let deriver = deriver_for_new_state(cli)?;
            let path: KeyPath = path
                .parse()
                .map_err(|e: covenant::error::ParseError| e.to_string())?;
            match (secret, public) {
                (Some(secret), None) => {
                    let master = parse_secret(&deriver, secret)?;
                    let derived = deriver
                        .derive_path(&master, &path)
                        .map_err(|e| e.to_string())?;
                    Ok(format!(
                        "secret: {}\npublic: {}",
                        derived.sk.to_hex(),
                        deriver.pk_hex(&derived.pk).map_err(|e| e.to_string())?
                    ))
                }
                (None, Some(public)) => {
                    let master_pk = deriver.pk_from_hex(public).map_err(|e| e.to_string())?;
                    let derived = deriver
                        .derive_path_public(&master_pk, &path)
                        .map_err(|e| e.to_string())?;
                    Ok(format!(
                        "public: {}",
                        deriver.pk_hex(&derived).map_err(|e| e.to_string())?
                    ))
                }
                _ => Err("UsageError: pass exactly one of --secret or --public".into()),
            }
        }
        Command::Secret { secret, public } => {
            let deriver = deriver_for_new_state(cli)?;
            let own = parse_secret(&deriver, secret)?;
            let other = deriver.pk_from_hex(public).map_err(|e| e.to_string())?;
            let cs = deriver
                .common_secret(&own.sk, &other)
                .map_err(|e| e.to_string())?;
            let key = deriver.symmetric_key_from_cs(&cs);
            Ok(format!(
                "common_secret: {}\nsymmetric_key: {}",
                deriver.pk_hex(&cs.point).map_err(|e| e.to_string())?,
                key.to_hex()
            ))
        }
        Command::ContractCreate { model } => {
            let raw = fs::read(model).map_err(|e| format!("Io: {e}"))?;
            let parsed = match validate_model(&raw) {
                Ok(model) => model,
                Err(violations) => {
                    let listing = violations
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join("\n");
                    return Err(format!("InvalidModel:\n{listing}"));
                }
            };
            let mut stores = load_stores(cli)?;
            let key = stores.repo.put(&parsed.canonical_bytes());
            save_stores(cli, &stores)?;
            Ok(format!("stored: {key}"))
        }
        Command::Fund { public, amount } => {
            let mut stores = load_stores(cli)?;
            let deriver = stores.chain.deriver().clone();
            let pk = deriver.pk_from_hex(public).map_err(|e| e.to_string())?;
            let spk = ScriptPubkey::P2pkh(
                covenant::script::p2pkh_hash(&deriver, &pk).map_err(|e| e.to_string())?,
            );
            let outpoint = stores.chain.fund(spk, *amount);
            save_stores(cli, &stores)?;
            Ok(format!("funded: {outpoint}"))
        }
        Command::ContractAnnounce {
            agent_secret,
            issuer_public,
            model_key,
            line,
            value,
            fee,
        } => {
            let mut stores = load_stores(cli)?;
            let deriver = stores.chain.deriver().clone();
            let mut agent = agent_for(&deriver, agent_secret)?;
            agent.refresh_budget(&stores.chain);
            let issuer_pk = deriver
                .pk_from_hex(issuer_public)
                .map_err(|e| e.to_string())?;
            let key = parse_hash(model_key)?;
            let body = stores
                .repo
                .get(&key)
                .ok_or_else(|| format!("UnknownKey: {key} is not in the contract store"))?
                .to_vec();
            let model = validate_model(&body).map_err(|v| {
                format!(
                    "InvalidModel: {}",
                    v.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join("; ")
                )
            })?;
            let handle = announce_contract(
                &mut agent,
                &mut stores.chain,
                &mut stores.repo,
                &AnnounceRequest {
                    model: &model,
                    instance_line: *line,
                    issuer_pk,
                    existence_value: *value,
                    fee: *fee,
                },
            )
            .map_err(|e| e.to_string())?;
            save_stores(cli, &stores)?;
            Ok(format!(
                "announced: existence={} repo={} budget={}",
                handle.existence_utxo, handle.repo_key, agent.budget
            ))
        }
        Command::SubcontractIssue {
            agent_secret,
            issuer_secret,
            parent,
            parent_key,
            parent_line,
            model_key,
            counterparties,
            expiry,
            monitor_public,
            monitor_fee,
            value,
            fee,
            repay_fee,
            repay_out,
        } => {
            let mut stores = load_stores(cli)?;
            let deriver = stores.chain.deriver().clone();
            let mut agent = agent_for(&deriver, agent_secret)?;
            agent.refresh_budget(&stores.chain);
            let issuer = parse_secret(&deriver, issuer_secret)?;
            let parent_outpoint = parse_outpoint(parent)?;
            let parent_repo_key = parse_hash(parent_key)?;

            // The announce-time redeem script is public data; rebuild it.
            let mut metadata = vec![parent_repo_key];
            if let Some(line) = parent_line {
                metadata.push(covenant::agents::line_pointer(*line));
            }
            let parent_redeem = covenant::script::build_redeem_script(
                &deriver,
                2,
                &[agent.keypair.pk.clone(), issuer.pk.clone()],
                &metadata,
            )
            .map_err(|e| e.to_string())?;
            let parent_handle = covenant::agents::ContractHandle {
                repo_key: parent_repo_key,
                existence_utxo: parent_outpoint,
                issuer_pk: issuer.pk.clone(),
                agent_pk: agent.keypair.pk.clone(),
                redeem: parent_redeem,
            };

            let sub_key = parse_hash(model_key)?;
            let body = stores
                .repo
                .get(&sub_key)
                .ok_or_else(|| format!("UnknownKey: {sub_key} is not in the contract store"))?
                .to_vec();
            let model = validate_model(&body).map_err(|v| {
                format!(
                    "InvalidModel: {}",
                    v.iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join("; ")
                )
            })?;
            let counterparty_keys = counterparties
                .iter()
                .map(|hex_pk| deriver.pk_from_hex(hex_pk).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            let term = match (expiry, monitor_public) {
                (Some(height), None) => SubcontractTerm::FixedUntil {
                    expiry_height: *height,
                },
                (None, Some(monitor)) => SubcontractTerm::OpenEnded {
                    monitor_pk: deriver.pk_from_hex(monitor).map_err(|e| e.to_string())?,
                    monitor_fee: *monitor_fee,
                },
                _ => {
                    return Err(
                        "UsageError: pass exactly one of --expiry or --monitor-public".into(),
                    )
                }
            };
            let issued = issue_subcontract(
                &mut agent,
                &issuer,
                &mut stores.chain,
                &mut stores.repo,
                &parent_handle,
                &SubcontractRequest {
                    model: &model,
                    counterparty_keys,
                    term,
                    nominal_value: *value,
                    fee: *fee,
                    repay_fee: *repay_fee,
                    repay_to_issuer: false,
                    seed_source: Default::default(),
                    include_parent_ref: true,
                },
            )
            .map_err(|e| e.to_string())?;
            if let Some(path) = repay_out {
                let bytes = struct_to_canonical(&issued.repay).map_err(|e| e.to_string())?;
                fs::write(path, bytes).map_err(|e| format!("Io: {e}"))?;
            }
            save_stores(cli, &stores)?;
            Ok(format!(
                "issued: existence={} repo={} path={}",
                issued.handle.existence_utxo, issued.handle.repo_key, issued.path
            ))
        }
        Command::Status { txid, index } => {
            let stores = load_stores(cli)?;
            let outpoint = OutPoint::new(parse_hash(txid)?, *index);
            Ok(stores.chain.utxo_status(&outpoint).to_string())
        }
        Command::Token {
            total,
            transfer,
            rate,
            split,
        } => {
            let transfer: Rational = transfer
                .parse()
                .map_err(|e: covenant::error::ParseError| e.to_string())?;
            let rate: Rational = rate
                .parse()
                .map_err(|e: covenant::error::ParseError| e.to_string())?;
            let token = make_token(*total, transfer, rate).map_err(|e| e.to_string())?;
            let mut report = format!(
                "token: tu={} xu={} pr={}\ndivisible: {}",
                token.total_units,
                token.transfer_units,
                token.pegging_rate,
                is_divisible(&token)
            );
            if is_divisible(&token) {
                let value = token_value(&token).map_err(|e| e.to_string())?;
                report.push_str(&format!("\nvalue: {} ({})", value, value.percent_string()));
            }
            if let Some(quantities) = split {
                let parts = quantities
                    .split(',')
                    .map(|q| q.trim().parse::<Rational>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?;
                let children = split_token(&token, &parts).map_err(|e| e.to_string())?;
                for (i, child) in children.iter().enumerate() {
                    report.push_str(&format!("\nsplit[{i}]: xu={}", child.transfer_units));
                }
            }
            Ok(report)
        }
        Command::Invite {
            issuer_secret,
            agent_secret,
            path,
            metadata,
            funding_secret,
            value,
            fee,
        } => {
            let mut stores = load_stores(cli)?;
            let deriver = stores.chain.deriver().clone();
            let issuer = parse_secret(&deriver, issuer_secret)?;
            let agent = parse_secret(&deriver, agent_secret)?;
            let path: KeyPath = path
                .parse()
                .map_err(|e: covenant::error::ParseError| e.to_string())?;
            let raw = fs::read(metadata).map_err(|e| format!("Io: {e}"))?;
            let meta: InvitationMetadata =
                serde_json::from_slice(&raw).map_err(|e| format!("BadDocument: {e}"))?;
            for descriptor in [&meta.offered, &meta.wanted] {
                if !stores.repo.contains(&descriptor.contract_ref) {
                    return Err(format!(
                        "UnknownKey: entity contract {} is not in the contract store",
                        descriptor.contract_ref
                    ));
                }
            }
            let script =
                covenant::exchange::make_invitation_script(&deriver, &issuer, &agent, &path, meta)
                    .map_err(|e| e.to_string())?;
            let funder = parse_secret(&deriver, funding_secret)?;
            let spk = ScriptPubkey::P2pkh(
                covenant::script::p2pkh_hash(&deriver, &funder.pk).map_err(|e| e.to_string())?,
            );
            let outpoint = stores
                .chain
                .unspent_by_script(&spk)
                .into_iter()
                .find(|(_, v)| *v >= value + fee)
                .map(|(op, _)| op)
                .ok_or_else(|| {
                    "InsufficientFunding: no wallet output covers value + fee".to_string()
                })?;
            let record = publish_invitation(
                &mut stores.invitations,
                &mut stores.chain,
                &script,
                &InvitationFunding {
                    outpoint,
                    key: &funder,
                    invitation_value: *value,
                    fee: *fee,
                },
            )
            .map_err(|e| e.to_string())?;
            save_stores(cli, &stores)?;
            Ok(format!(
                "invitation: dht_key={} ti={}",
                record.dht_key, record.invitation_txid
            ))
        }
        Command::Match { key } => {
            let stores = load_stores(cli)?;
            let record = record_from_store(&stores.invitations, &parse_hash(key)?)?;
            let candidates =
                match_invitations(&stores.invitations, &record).map_err(|e| e.to_string())?;
            let mut report = format!("candidates: {}", candidates.len());
            for candidate in candidates {
                report.push_str(&format!(
                    "\n  dht_key={} ti={}",
                    candidate.dht_key, candidate.invitation_txid
                ));
            }
            Ok(report)
        }
        Command::Exchange {
            k,
            m,
            a_agent_secret,
            a_issuer_secret,
            b_agent_secret,
            b_issuer_secret,
            fee,
        } => {
            let mut stores = load_stores(cli)?;
            let deriver = stores.chain.deriver().clone();
            let record_k = record_from_store(&stores.invitations, &parse_hash(k)?)?;
            let record_m = record_from_store(&stores.invitations, &parse_hash(m)?)?;
            let a_agent = parse_secret(&deriver, a_agent_secret)?;
            let a_issuer = a_issuer_secret
                .as_ref()
                .map(|s| parse_secret(&deriver, s))
                .transpose()?;
            let b_agent = parse_secret(&deriver, b_agent_secret)?;
            let b_issuer = parse_secret(&deriver, b_issuer_secret)?;
            let tx = build_exchange_tx(
                &stores.chain,
                &mut stores.invitations,
                &record_k,
                &record_m,
                &SideSigners {
                    agent: &a_agent,
                    issuer: a_issuer.as_ref(),
                },
                &SideSigners {
                    agent: &b_agent,
                    issuer: Some(&b_issuer),
                },
                ExchangeTerms {
                    policy: ExchangePolicy::Asymmetric,
                    fee: *fee,
                },
            )
            .map_err(|e| e.to_string())?;
            let txid = stores.chain.broadcast(tx).map_err(|e| e.to_string())?;
            save_stores(cli, &stores)?;
            Ok(format!("exchange: {txid}"))
        }
        Command::ChainTick { count } => {
            let mut stores = load_stores(cli)?;
            for _ in 0..*count {
                stores.chain.tick();
            }
            let height = stores.chain.height();
            save_stores(cli, &stores)?;
            Ok(format!("height: {height}"))
        }
        Command::ChainDump => {
            let stores = load_stores(cli)?;
            match cli.format {
                Format::Text => Ok(stores.chain.dump_text()),
                Format::Canonical => {
                    to_canonical_string(&stores.chain.dump_json()).map_err(|e| e.to_string())
                }
            }
        }
        Command::ScenarioRun { file } => {
            let raw = fs::read(file).map_err(|e| format!("Io: {e}"))?;
            let scenario = parse_scenario(&raw).map_err(|e| e.to_string())?;
            let outcome = run_scenario(&scenario).map_err(|e| e.to_string())?;
            let stores = Stores {
                chain: outcome.chain,
                repo: outcome.contract_repo,
                invitations: outcome.invitation_dht,
            };
            save_stores(cli, &stores)?;
            Ok(outcome.trace)
        }
    }
}
