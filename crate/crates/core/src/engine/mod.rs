//! Protocol state machines driven by per-party strategies.
//!
//! Every protocol is compiled into a [`Protocol`]: a fixed set of candidate
//! transactions ([`Move`]s), each owned by one party, with its
//! counterparty pre-signatures already attached. The [`runner`] steps the
//! shared clock and offers each party its currently publishable moves in
//! `(time, round, chain, party)` order; strategies decide which to publish.

mod enumerate;
mod protocol;
mod protocols;
mod runner;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::chainsim::{format_base_units, Amount, ChainError, ChainId, Digest, PartyId, TimePoint, Transaction, World};
use crate::contracts::ContractError;

pub use enumerate::{
    check_safety, enumerate_strategies, game_value, Enumerated, GameValue, Guarantee, ProtocolKind, ProtocolSpec,
    SafetyReport, Violation, MAX_LEAVES,
};
pub use protocol::{Move, Protocol};
pub use protocols::{
    build_future, build_htlc_payment, build_swap, build_swaption, run_atomic_swap, run_htlc_payment,
    run_margin_swaption, run_swaption, run_swaption_with_cancellation, BuildOptions, FutureTerms, Mutation, SwapTerms,
    SwaptionTerms,
};
pub use runner::{replay, run, Chooser, FirstChoice, ScriptedChooser};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{party} holds {has} on {chain}, needs {needs}")]
    Underfunded { party: PartyId, chain: ChainId, has: Amount, needs: Amount },
    #[error("missing pre-signatures for {0:?}")]
    MissingPreSignatures(Vec<String>),
    #[error("invalid terms: {0}")]
    InvalidTerms(String),
    #[error("enumeration exceeded {0} leaves")]
    DepthExceeded(usize),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Fund,
    Accept,
    Renege,
    DepositPrincipal,
    Default,
    Exercise,
    Cancel,
    LetExpire,
    Cheat,
    Claim,
    PublishBreachRemedy,
    PublishRefund,
    Wait,
}

impl Action {
    pub const ALL: [Action; 13] = [
        Action::Fund,
        Action::Accept,
        Action::Renege,
        Action::DepositPrincipal,
        Action::Default,
        Action::Exercise,
        Action::Cancel,
        Action::LetExpire,
        Action::Cheat,
        Action::Claim,
        Action::PublishBreachRemedy,
        Action::PublishRefund,
        Action::Wait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Fund => "fund",
            Action::Accept => "accept",
            Action::Renege => "renege",
            Action::DepositPrincipal => "deposit",
            Action::Default => "default",
            Action::Exercise => "exercise",
            Action::Cancel => "cancel",
            Action::LetExpire => "let_expire",
            Action::Cheat => "cheat",
            Action::Claim => "claim",
            Action::PublishBreachRemedy => "breach_remedy",
            Action::PublishRefund => "refund",
            Action::Wait => "wait",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Moves an honest party publishes whenever they become possible.
    pub fn is_reactive(self) -> bool {
        matches!(self, Action::Claim | Action::PublishBreachRemedy | Action::PublishRefund)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic scripted behavior: publish every possible move whose action
/// is enabled, at or after that action's earliest time.
///
/// Marker actions (`Renege`, `Default`, `LetExpire`, `Wait`) enable nothing;
/// they exist so scripts read like the decision they encode. `Cheat`
/// enables both `Exercise` and `Cancel`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Policy {
    pub actions: BTreeSet<Action>,
    pub not_before: BTreeMap<Action, TimePoint>,
    /// Ignore the honest-play guards (ordering and deadlines) on moves.
    pub reckless: bool,
}

impl Policy {
    /// Reactive moves plus `intent`.
    pub fn honest(intent: &[Action]) -> Policy {
        let mut actions: BTreeSet<Action> = [Action::Claim, Action::PublishBreachRemedy, Action::PublishRefund].into();
        actions.extend(intent.iter().copied());
        Policy { actions, ..Policy::default() }
    }

    /// Takes no action at all.
    pub fn silent() -> Policy {
        Policy::default()
    }

    pub fn at(mut self, action: Action, t: TimePoint) -> Policy {
        self.actions.insert(action);
        self.not_before.insert(action, t);
        self
    }

    pub fn enables(&self, action: Action) -> bool {
        self.actions.contains(&action)
            || (matches!(action, Action::Exercise | Action::Cancel) && self.actions.contains(&Action::Cheat))
    }

    fn earliest(&self, action: Action) -> TimePoint {
        let own = self.not_before.get(&action).copied();
        let cheat = if matches!(action, Action::Exercise | Action::Cancel) {
            self.not_before.get(&Action::Cheat).copied()
        } else {
            None
        };
        own.or(cheat).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    Policy(Policy),
    /// Follows the policy but exercises and honors principal deposits only
    /// when that is worth more at the current price.
    Rational { policy: Policy, prices: crate::econ::PricePath },
    /// Branches over every possible move at each decision point; resolved
    /// by the run's [`Chooser`].
    Adversary,
}

impl Strategy {
    pub fn honest(intent: &[Action]) -> Strategy {
        Strategy::Policy(Policy::honest(intent))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub time: TimePoint,
    pub chain: ChainId,
    pub party: PartyId,
    pub action: Action,
    pub label: String,
    pub txid: Option<Digest>,
    pub amounts: Vec<Amount>,
}

impl Event {
    /// `time chain party action:label txid amounts...`
    pub fn record(&self) -> String {
        let mut s = format!(
            "{} {} {} {}:{} {}",
            self.time,
            self.chain,
            self.party,
            self.action,
            self.label,
            self.txid.map(|d| d.to_hex()).unwrap_or_else(|| "-".into())
        );
        for a in &self.amounts {
            s.push(' ');
            s.push_str(&a.to_string());
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub protocol: String,
    pub events: Vec<Event>,
    /// Published transactions in publish order, for replay.
    pub published: Vec<(TimePoint, ChainId, Transaction)>,
    pub outcome: Outcome,
    /// Adversary branch choices taken, in order.
    pub choices: Vec<usize>,
}

impl Trace {
    pub fn records(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.record());
            s.push('\n');
        }
        s
    }

    pub fn text(&self) -> String {
        let mut s = format!("protocol {}\n", self.protocol);
        for e in &self.events {
            let tx = e.txid.map(|d| format!(" tx {}", d.short())).unwrap_or_default();
            let amts: Vec<String> = e.amounts.iter().map(|a| a.to_string()).collect();
            let amts = if amts.is_empty() { String::new() } else { format!(" [{}]", amts.join(", ")) };
            s.push_str(&format!("t={:<4} {:<6} {:<6} {:<14} {}{}{}\n", e.time, e.chain, e.party, e.action, e.label, tx, amts));
        }
        s.push_str(&self.outcome.text());
        s
    }

    pub fn published_labels(&self) -> Vec<&str> {
        self.events.iter().filter(|e| e.txid.is_some()).map(|e| e.label.as_str()).collect()
    }
}

/// Final per-party wallet holdings, the starting holdings they are compared
/// against, and which contract paths were taken.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Outcome {
    pub initial: BTreeMap<(PartyId, ChainId), Amount>,
    pub balances: BTreeMap<(PartyId, ChainId), Amount>,
    pub dispositions: Vec<String>,
    /// Publish time of each taken move.
    pub taken: BTreeMap<String, TimePoint>,
    /// Named secrets that appeared on some chain, with first reveal time.
    pub revealed: BTreeMap<String, TimePoint>,
    /// Value still held by contract outputs at the end of the run, per chain.
    pub locked: BTreeMap<ChainId, Amount>,
}

impl Outcome {
    pub fn capture(world: &World, parties: &[PartyId], initial: BTreeMap<(PartyId, ChainId), Amount>) -> Outcome {
        let mut balances = BTreeMap::new();
        let mut locked = BTreeMap::new();
        for chain in world.chains() {
            for p in parties {
                balances.insert((p.clone(), chain.chain.clone()), chain.wallet_balance(p));
            }
            let wallet: Amount = parties.iter().map(|p| chain.wallet_balance(p)).sum();
            let mut rest = chain.utxo_total() - wallet;
            // outputs owned by parties outside this protocol are not contracts
            for (_, u) in chain.utxos() {
                if let crate::chainsim::Predicate::Sig(p) = &u.output.predicate {
                    if !parties.contains(p) {
                        rest = rest - u.output.amount;
                    }
                }
            }
            locked.insert(chain.chain.clone(), rest);
        }
        Outcome { initial, balances, locked, ..Outcome::default() }
    }

    pub fn balance(&self, party: &PartyId, chain: &ChainId) -> Amount {
        self.balances.get(&(party.clone(), chain.clone())).copied().unwrap_or_default()
    }

    /// Signed change in base units against the starting holdings.
    pub fn delta(&self, party: &PartyId, chain: &ChainId) -> i128 {
        let key = (party.clone(), chain.clone());
        let end = self.balances.get(&key).copied().unwrap_or_default().0 as i128;
        let start = self.initial.get(&key).copied().unwrap_or_default().0 as i128;
        end - start
    }

    pub fn took(&self, label: &str) -> bool {
        self.dispositions.iter().any(|d| d == label)
    }

    pub fn text(&self) -> String {
        let mut s = String::from("balances\n");
        for ((p, c), a) in &self.balances {
            let d = self.delta(p, c);
            let sign = if d >= 0 { "+" } else { "" };
            s.push_str(&format!("  {p:<6} {c:<6} {a:>12} ({sign}{})\n", format_base_units(d)));
        }
        s
    }
}
