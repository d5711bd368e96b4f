//! Smart-contract orchestration engine over a simulated UTXO ledger.
//!
//! The crate wires together hierarchical key derivation with per-node common
//! secrets, DFA-encoded contract models stored in content-addressed
//! repositories, three-parameter tokenization, multisig script evaluation on
//! a simulated chain, agent-driven subcontract issuance, and bilateral
//! exchange of contract underlyings.

pub mod agents;
pub mod canonical;
pub mod contract;
pub mod curve;
pub mod dht;
pub mod ecdsa;
pub mod error;
pub mod exchange;
pub mod hashes;
pub mod keys;
pub mod ledger;
pub mod predicate;
pub mod rational;
pub mod scenario;
pub mod script;
pub mod token;
