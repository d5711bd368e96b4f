//! Codified contract documents and their deterministic finite automaton.
//!
//! A contract model declares typed parameters, a DFA whose transitions
//! carry triggers and rule references, a rules table of actions, and
//! per-instance parameter values. Validation proves the automaton
//! deterministic over the declared value domains before anything executes
//! it; compilation turns the model into agent bindings and script
//! templates. Repository entries reuse validated bodies as templates:
//! institutions derive amended semi-templates, then instantiate them by
//! appending metadata lines that never move the hashed body.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{struct_to_canonical, to_canonical_bytes};
use crate::dht::{DhtStore, LookupKey};
use crate::predicate::{satisfiable, Comparison, ParamValue, ValueDomain};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub String);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StateId {
    fn from(s: &str) -> Self {
        StateId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    OnChain,
    OffChain,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub source: ParamSource,
    pub domain: ValueDomain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: StateId,
    #[serde(default)]
    pub initial: bool,
    #[serde(default)]
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: StateId,
    pub to: StateId,
    /// Conjunction of comparisons; all must hold to fire.
    pub trigger: Vec<Comparison>,
    /// Rules applied during the transition, by rules-table id.
    #[serde(default)]
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dfa {
    pub states: Vec<StateDef>,
    pub transitions: Vec<Transition>,
}

/// What a rule does when its transition fires. Template and payload strings
/// may reference declared parameters as `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    CreateTransaction {
        template: String,
    },
    CirculateForSignature {
        template: String,
        signers: Vec<String>,
    },
    NotifyOffChain {
        channel: String,
        payload: String,
    },
    VerifyPastRecord {
        query: String,
    },
    MonitorParameter {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractModel {
    pub scheme_version: String,
    pub parameters: Vec<ParameterSpec>,
    pub dfa: Dfa,
    pub rules: BTreeMap<String, Action>,
    #[serde(default)]
    pub instance_params: BTreeMap<String, ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("DeterminismError: transitions {first} and {second} out of {state} fire together")]
    Determinism {
        state: StateId,
        first: usize,
        second: usize,
    },
    #[error("DanglingReference: {0}")]
    DanglingReference(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("UnknownState: {0}")]
    UnknownState(StateId),
    #[error("MissingObservation: trigger references {0} but no value was observed")]
    MissingObservation(String),
    #[error("BadObservation: {0}")]
    BadObservation(String),
    #[error("AmbiguousTransition: more than one trigger satisfied in {0}")]
    AmbiguousTransition(StateId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepoError {
    #[error("UnknownKey: {0} is not stored")]
    UnknownKey(LookupKey),
    #[error("BadDocument: {0}")]
    BadDocument(String),
}

impl ContractModel {
    /// Canonical document bytes; the repository look-up key is their SHA-256.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        struct_to_canonical(self).expect("models contain no floats")
    }

    pub fn state(&self, id: &StateId) -> Option<&StateDef> {
        self.dfa.states.iter().find(|s| s.id == *id)
    }

    pub fn initial_state(&self) -> &StateId {
        &self
            .dfa
            .states
            .iter()
            .find(|s| s.initial)
            .expect("validated: exactly one initial")
            .id
    }

    pub fn is_terminal(&self, id: &StateId) -> bool {
        self.state(id).map(|s| s.terminal).unwrap_or(false)
    }

    fn domains(&self) -> BTreeMap<String, ValueDomain> {
        self.parameters
            .iter()
            .map(|p| (p.name.clone(), p.domain.clone()))
            .collect()
    }
}

/// Parse a canonical document and enforce every model invariant. All
/// violations are collected rather than stopping at the first.
pub fn validate_model(document: &[u8]) -> Result<ContractModel, Vec<Violation>> {
    let model: ContractModel = serde_json::from_slice(document)
        .map_err(|e| vec![Violation::Schema(format!("document does not parse: {e}"))])?;
    let violations = check_model(&model);
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(violations)
    }
}

fn check_model(model: &ContractModel) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut state_ids = BTreeSet::new();
    for state in &model.dfa.states {
        if !state_ids.insert(state.id.clone()) {
            violations.push(Violation::Schema(format!("duplicate state {}", state.id)));
        }
    }
    let initial_count = model.dfa.states.iter().filter(|s| s.initial).count();
    if initial_count != 1 {
        violations.push(Violation::Schema(format!(
            "expected exactly one initial state, found {initial_count}"
        )));
    }
    if !model.dfa.states.iter().any(|s| s.terminal) {
        violations.push(Violation::Schema(
            "at least one terminal state is required".into(),
        ));
    }
    let mut param_names = BTreeSet::new();
    for param in &model.parameters {
        if !param_names.insert(param.name.clone()) {
            violations.push(Violation::Schema(format!(
                "duplicate parameter {}",
                param.name
            )));
        }
        if let ValueDomain::IntRange { min, max } = param.domain {
            if min > max {
                violations.push(Violation::Schema(format!(
                    "parameter {} has an empty domain",
                    param.name
                )));
            }
        }
    }

    for (i, transition) in model.dfa.transitions.iter().enumerate() {
        for state in [&transition.from, &transition.to] {
            if !state_ids.contains(state) {
                violations.push(Violation::DanglingReference(format!(
                    "transition {i} references unknown state {state}"
                )));
            }
        }
        for rule in &transition.rules {
            if !model.rules.contains_key(rule) {
                violations.push(Violation::DanglingReference(format!(
                    "transition {i} references unknown rule {rule}"
                )));
            }
        }
        for cmp in &transition.trigger {
            match param_names.contains(&cmp.param) {
                false => violations.push(Violation::DanglingReference(format!(
                    "transition {i} trigger references unknown parameter {}",
                    cmp.param
                ))),
                true => {
                    let domain = &model
                        .parameters
                        .iter()
                        .find(|p| p.name == cmp.param)
                        .unwrap()
                        .domain;
                    let compatible = matches!(
                        (domain, &cmp.value),
                        (ValueDomain::IntRange { .. }, ParamValue::Int(_))
                            | (ValueDomain::Tags(_), ParamValue::Tag(_))
                    );
                    if !compatible {
                        violations.push(Violation::Schema(format!(
                            "transition {i} trigger on {} does not match the parameter type",
                            cmp.param
                        )));
                    }
                }
            }
        }
    }

    for (rule_id, action) in &model.rules {
        for placeholder in action_placeholders(action) {
            if !param_names.contains(&placeholder) {
                violations.push(Violation::DanglingReference(format!(
                    "rule {rule_id} references unknown parameter {placeholder}"
                )));
            }
        }
        if let Action::MonitorParameter { name } = action {
            if !param_names.contains(name) {
                violations.push(Violation::DanglingReference(format!(
                    "rule {rule_id} monitors unknown parameter {name}"
                )));
            }
        }
    }

    for name in model.instance_params.keys() {
        if !param_names.contains(name) {
            violations.push(Violation::DanglingReference(format!(
                "instance parameter {name} is not declared"
            )));
        }
    }

    // Reachability over the declared transition graph.
    if initial_count == 1 {
        let initial = model
            .dfa
            .states
            .iter()
            .find(|s| s.initial)
            .unwrap()
            .id
            .clone();
        let mut reachable = BTreeSet::from([initial.clone()]);
        let mut queue = VecDeque::from([initial]);
        while let Some(state) = queue.pop_front() {
            for t in model.dfa.transitions.iter().filter(|t| t.from == state) {
                if reachable.insert(t.to.clone()) {
                    queue.push_back(t.to.clone());
                }
            }
        }
        for state in &model.dfa.states {
            if !reachable.contains(&state.id) {
                violations.push(Violation::Schema(format!(
                    "state {} is unreachable",
                    state.id
                )));
            }
        }
    }

    // Determinism: no two triggers out of one state may be jointly
    // satisfiable over the declared domains.
    let domains = model.domains();
    for (i, a) in model.dfa.transitions.iter().enumerate() {
        for (j, b) in model.dfa.transitions.iter().enumerate().skip(i + 1) {
            if a.from != b.from {
                continue;
            }
            let joint: Vec<&Comparison> = a.trigger.iter().chain(b.trigger.iter()).collect();
            match satisfiable(&joint, &domains) {
                Ok(true) => violations.push(Violation::Determinism {
                    state: a.from.clone(),
                    first: i,
                    second: j,
                }),
                Ok(false) => {}
                Err(e) => violations.push(Violation::Schema(format!(
                    "transitions {i} and {j} cannot be compared: {e}"
                ))),
            }
        }
    }

    violations
}

fn action_placeholders(action: &Action) -> Vec<String> {
    let text = match action {
        Action::CreateTransaction { template } => template.clone(),
        Action::CirculateForSignature { template, .. } => template.clone(),
        Action::NotifyOffChain { channel, payload } => format!("{channel} {payload}"),
        Action::VerifyPastRecord { query } => query.clone(),
        Action::MonitorParameter { .. } => String::new(),
    };
    extract_placeholders(&text)
}

fn extract_placeholders(text: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start + 1..].find('}') else {
            break;
        };
        names.push(rest[start + 1..start + 1 + len].to_string());
        rest = &rest[start + 1 + len + 1..];
    }
    names
}

fn substitute(
    text: &str,
    model: &ContractModel,
    observations: &BTreeMap<String, ParamValue>,
) -> String {
    let mut out = text.to_string();
    for name in extract_placeholders(text) {
        let value = observations
            .get(&name)
            .or_else(|| model.instance_params.get(&name));
        if let Some(v) = value {
            out = out.replace(&format!("{{{name}}}"), &v.to_string());
        }
    }
    out
}

fn resolve_action(
    action: &Action,
    model: &ContractModel,
    obs: &BTreeMap<String, ParamValue>,
) -> Action {
    match action {
        Action::CreateTransaction { template } => Action::CreateTransaction {
            template: substitute(template, model, obs),
        },
        Action::CirculateForSignature { template, signers } => Action::CirculateForSignature {
            template: substitute(template, model, obs),
            signers: signers.clone(),
        },
        Action::NotifyOffChain { channel, payload } => Action::NotifyOffChain {
            channel: channel.clone(),
            payload: substitute(payload, model, obs),
        },
        Action::VerifyPastRecord { query } => Action::VerifyPastRecord {
            query: substitute(query, model, obs),
        },
        Action::MonitorParameter { name } => Action::MonitorParameter { name: name.clone() },
    }
}

/// Advance the DFA one step. Exactly one satisfied trigger moves to its
/// target and returns the transition's resolved actions; none leaves the
/// state unchanged with no actions.
pub fn step_dfa(
    model: &ContractModel,
    state: &StateId,
    observations: &BTreeMap<String, ParamValue>,
) -> Result<(StateId, Vec<Action>), StepError> {
    if model.state(state).is_none() {
        return Err(StepError::UnknownState(state.clone()));
    }
    let mut fired: Option<&Transition> = None;
    for transition in model.dfa.transitions.iter().filter(|t| t.from == *state) {
        let mut all = true;
        for cmp in &transition.trigger {
            let observed = observations
                .get(&cmp.param)
                .ok_or_else(|| StepError::MissingObservation(cmp.param.clone()))?;
            match cmp.eval(observed) {
                Ok(true) => {}
                Ok(false) => {
                    all = false;
                    break;
                }
                Err(e) => return Err(StepError::BadObservation(e.to_string())),
            }
        }
        if all {
            if fired.is_some() {
                return Err(StepError::AmbiguousTransition(state.clone()));
            }
            fired = Some(transition);
        }
    }
    match fired {
        None => Ok((state.clone(), Vec::new())),
        Some(t) => {
            let actions = t
                .rules
                .iter()
                .filter_map(|rule| model.rules.get(rule))
                .map(|a| resolve_action(a, model, observations))
                .collect();
            Ok((t.to.clone(), actions))
        }
    }
}

/// What an agent watches while sitting in a state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorSpec {
    /// Parameters the trigger reads.
    pub params: Vec<String>,
    /// Parameters named by MonitorParameter rules on the transition.
    pub monitors: Vec<String>,
}

/// One compiled transition: watch `monitor` in `state`, and when the
/// trigger fires move to `target` running `actions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub state: StateId,
    pub target: StateId,
    pub trigger: Vec<Comparison>,
    pub monitor: MonitorSpec,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProgram {
    pub bindings: Vec<Binding>,
}

/// Named placeholder slots a transaction template exposes: keys, metadata
/// references, an amount and an optional lock-time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptTemplate {
    pub name: String,
    pub key_slots: Vec<String>,
    pub metadata_slots: Vec<String>,
    pub amount_slot: String,
    pub lock_time_slot: String,
}

impl ScriptTemplate {
    fn for_transaction(name: &str) -> ScriptTemplate {
        ScriptTemplate {
            name: name.to_string(),
            key_slots: vec![
                "agent_pubkey".into(),
                "counterparty_pubkey".into(),
                "issuer_pubkey".into(),
            ],
            metadata_slots: vec!["contract_entry".into(), "master_entry".into()],
            amount_slot: "amount".into(),
            lock_time_slot: "lock_time".into(),
        }
    }
}

/// Compile a validated model: one binding per transition, one script
/// template per CreateTransaction action.
pub fn compile(model: &ContractModel) -> (AgentProgram, Vec<ScriptTemplate>) {
    let mut bindings = Vec::new();
    let mut templates = Vec::new();
    for transition in &model.dfa.transitions {
        let mut params: Vec<String> = transition.trigger.iter().map(|c| c.param.clone()).collect();
        params.dedup();
        let mut monitors = Vec::new();
        let mut actions = Vec::new();
        for rule in &transition.rules {
            if let Some(action) = model.rules.get(rule) {
                if let Action::MonitorParameter { name } = action {
                    monitors.push(name.clone());
                }
                if let Action::CreateTransaction { template } = action {
                    templates.push(ScriptTemplate::for_transaction(template));
                }
                actions.push(action.clone());
            }
        }
        bindings.push(Binding {
            state: transition.from.clone(),
            target: transition.to.clone(),
            trigger: transition.trigger.clone(),
            monitor: MonitorSpec { params, monitors },
            actions,
        });
    }
    (AgentProgram { bindings }, templates)
}

/// Copy a stored template, apply top-level amendments (a null value removes
/// the field), link the copy back to the original via `master_ref`, and
/// store it as the institution's own semi-template.
pub fn derive_semi_template(
    repo: &mut DhtStore,
    template_key: &LookupKey,
    amendments: &BTreeMap<String, Value>,
) -> Result<LookupKey, RepoError> {
    let body = repo
        .get(template_key)
        .ok_or(RepoError::UnknownKey(*template_key))?;
    let mut doc: Value = serde_json::from_slice(body)
        .map_err(|e| RepoError::BadDocument(format!("template is not a document: {e}")))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| RepoError::BadDocument("template body is not an object".into()))?;
    for (field, value) in amendments {
        if value.is_null() {
            obj.remove(field);
        } else {
            obj.insert(field.clone(), value.clone());
        }
    }
    obj.insert("master_ref".into(), Value::String(template_key.to_hex()));
    let bytes = to_canonical_bytes(&doc).map_err(|e| RepoError::BadDocument(e.to_string()))?;
    Ok(repo.put(&bytes))
}

/// Instantiate a semi-template by appending one metadata line beside the
/// hashed body; the entry's look-up key never changes.
pub fn append_instance_line(
    repo: &mut DhtStore,
    semi_template_key: &LookupKey,
    params: &BTreeMap<String, ParamValue>,
) -> Result<u64, RepoError> {
    let line = struct_to_canonical(params).map_err(|e| RepoError::BadDocument(e.to_string()))?;
    let index = repo
        .append_line(semi_template_key, &line)
        .map_err(|_| RepoError::UnknownKey(*semi_template_key))?;
    Ok(index as u64)
}

/// Read back one instance line as the parameter map it was appended as.
pub fn read_instance_line(
    repo: &DhtStore,
    semi_template_key: &LookupKey,
    index: u64,
) -> Result<BTreeMap<String, ParamValue>, RepoError> {
    let lines = repo
        .lines(semi_template_key)
        .map_err(|_| RepoError::UnknownKey(*semi_template_key))?;
    let line = lines
        .get(index as usize)
        .ok_or_else(|| RepoError::BadDocument(format!("no instance line {index}")))?;
    serde_json::from_slice(line).map_err(|e| RepoError::BadDocument(e.to_string()))
}
