//! Predicate templates for every contract output used by the protocols.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chainsim::{Amount, Hash, PartyId, Predicate, SignatureRecord, TimeDelta, TimePoint, Transaction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("payee and payer must differ (both {0})")]
    SameParty(PartyId),
    #[error("expiry {expiry} must be later than {now}")]
    ExpiryInPast { expiry: TimePoint, now: TimePoint },
    #[error("delay must be at least 1")]
    ZeroDelay,
    #[error("margin {margin} must be positive and below principal {principal}")]
    BadMargin { margin: Amount, principal: Amount },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HtlcSpec {
    pub payee: PartyId,
    pub payer: PartyId,
    pub hash: Hash,
    pub expiry: TimePoint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AntiCheatSpec {
    pub owner: PartyId,
    pub punisher: PartyId,
    pub punish_hash: Hash,
    pub delay: TimeDelta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarginContractSpec {
    pub depositor: PartyId,
    pub beneficiary: PartyId,
    pub margin: Amount,
    pub principal: Amount,
    pub margin_expiry: TimePoint,
}

fn sig(p: &PartyId) -> Predicate {
    Predicate::Sig(p.clone())
}

impl HtlcSpec {
    pub fn validate(&self, now: TimePoint) -> Result<(), ContractError> {
        if self.payee == self.payer {
            return Err(ContractError::SameParty(self.payee.clone()));
        }
        if self.expiry <= now {
            return Err(ContractError::ExpiryInPast { expiry: self.expiry, now });
        }
        Ok(())
    }
}

/// `Any(All(payee, preimage), All(payer, expiry))`.
pub fn htlc_predicate(spec: &HtlcSpec) -> Result<Predicate, ContractError> {
    if spec.payee == spec.payer {
        return Err(ContractError::SameParty(spec.payee.clone()));
    }
    Ok(Predicate::Any(vec![
        Predicate::All(vec![sig(&spec.payee), Predicate::Preimage(spec.hash)]),
        Predicate::All(vec![sig(&spec.payer), Predicate::AbsTime(spec.expiry)]),
    ]))
}

/// Hashlock branch needs both signatures plus the secret, so neither side can
/// redirect the pre-signed spend.
pub fn funding_contract_predicate(
    a: &PartyId,
    b: &PartyId,
    hash: Hash,
    refund_party: &PartyId,
    refund_time: TimePoint,
) -> Result<Predicate, ContractError> {
    if a == b {
        return Err(ContractError::SameParty(a.clone()));
    }
    Ok(Predicate::Any(vec![
        Predicate::All(vec![sig(a), sig(b), Predicate::Preimage(hash)]),
        Predicate::All(vec![sig(refund_party), Predicate::AbsTime(refund_time)]),
    ]))
}

pub fn anticheat_predicate(spec: &AntiCheatSpec) -> Result<Predicate, ContractError> {
    if spec.delay == 0 {
        return Err(ContractError::ZeroDelay);
    }
    if spec.owner == spec.punisher {
        return Err(ContractError::SameParty(spec.owner.clone()));
    }
    Ok(Predicate::Any(vec![
        Predicate::All(vec![sig(&spec.punisher), Predicate::Preimage(spec.punish_hash)]),
        Predicate::All(vec![sig(&spec.owner), Predicate::RelTime(spec.delay)]),
    ]))
}

pub fn cancel_expiration_predicate(b: &PartyId, cancel_hash: Hash, expiry: TimePoint) -> Predicate {
    Predicate::Any(vec![
        Predicate::All(vec![sig(b), Predicate::Preimage(cancel_hash)]),
        Predicate::All(vec![sig(b), Predicate::AbsTime(expiry)]),
    ])
}

pub fn margin_contract_predicate(spec: &MarginContractSpec) -> Result<Predicate, ContractError> {
    if spec.depositor == spec.beneficiary {
        return Err(ContractError::SameParty(spec.depositor.clone()));
    }
    if spec.margin == Amount::ZERO || spec.margin >= spec.principal {
        return Err(ContractError::BadMargin { margin: spec.margin, principal: spec.principal });
    }
    Ok(Predicate::Any(vec![
        Predicate::All(vec![sig(&spec.depositor), sig(&spec.beneficiary)]),
        Predicate::All(vec![sig(&spec.beneficiary), Predicate::AbsTime(spec.margin_expiry)]),
    ]))
}

/// Holder's principal under early cancellation: the writer claims with the
/// exercise secret, the holder cancels with the cancel secret. Both branches
/// need both signatures so outputs are fixed by pre-signed children.
pub fn cancellable_holder_contract(
    holder: &PartyId,
    writer: &PartyId,
    exercise_hash: Hash,
    cancel_hash: Hash,
) -> Result<Predicate, ContractError> {
    if holder == writer {
        return Err(ContractError::SameParty(holder.clone()));
    }
    Ok(Predicate::Any(vec![
        Predicate::All(vec![sig(holder), sig(writer), Predicate::Preimage(exercise_hash)]),
        Predicate::All(vec![sig(holder), sig(writer), Predicate::Preimage(cancel_hash)]),
    ]))
}

/// Writer's principal under early cancellation: the holder exercises (into an
/// anti-cheat contract) with the exercise secret; the writer reclaims with
/// the cancel secret or after expiry.
pub fn cancellable_writer_contract(
    holder: &PartyId,
    writer: &PartyId,
    exercise_hash: Hash,
    cancel_hash: Hash,
    expiry: TimePoint,
) -> Result<Predicate, ContractError> {
    if holder == writer {
        return Err(ContractError::SameParty(holder.clone()));
    }
    let Predicate::Any(mut branches) = cancel_expiration_predicate(writer, cancel_hash, expiry) else {
        unreachable!()
    };
    branches.insert(0, Predicate::All(vec![sig(holder), sig(writer), Predicate::Preimage(exercise_hash)]));
    Ok(Predicate::Any(branches))
}

/// Partially signed children exchanged before a contract is funded.
///
/// Each entry is keyed by a child label and lists the counterparty
/// signatures that the publishing party will need.
#[derive(Clone, Debug, Default)]
pub struct ContractSetup {
    children: BTreeMap<String, PreSigned>,
}

#[derive(Clone, Debug)]
pub struct PreSigned {
    pub tx: Transaction,
    pub required: Vec<PartyId>,
    pub signatures: Vec<SignatureRecord>,
}

impl PreSigned {
    pub fn is_complete(&self) -> bool {
        self.required.iter().all(|p| self.signatures.iter().any(|s| &s.signer == p))
    }
}

impl ContractSetup {
    pub fn insert(&mut self, label: impl Into<String>, child: PreSigned) {
        self.children.insert(label.into(), child);
    }

    pub fn get(&self, label: &str) -> Option<&PreSigned> {
        self.children.get(label)
    }

    pub fn get_mut(&mut self, label: &str) -> Option<&mut PreSigned> {
        self.children.get_mut(label)
    }

    /// Labels whose required pre-signatures are missing.
    pub fn missing(&self) -> Vec<String> {
        self.children.iter().filter(|(_, c)| !c.is_complete()).map(|(l, _)| l.clone()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.missing().is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.children.keys().map(|s| s.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::{eval_predicate, hash_secret, sign, Digest, OutPoint, Output, Secret, SigMode, Witness};

    fn p(s: &str) -> PartyId {
        PartyId::new(s)
    }

    fn spend() -> Transaction {
        Transaction::new(vec![OutPoint::new(Digest([7; 32]), 0)], vec![Output::to_party(Amount(1), &p("x"))], 50)
    }

    fn witness(signers: &[&str], secrets: &[Secret]) -> Witness {
        let tx = spend();
        let mut w = Witness::default();
        for s in signers {
            w = w.with_sig(sign(&p(s), &tx, SigMode::CommitAll, 0).unwrap());
        }
        for s in secrets {
            w = w.with_preimage(*s);
        }
        w
    }

    fn eval(pred: &Predicate, w: &Witness, now: TimePoint) -> bool {
        eval_predicate(pred, w, now, 40, &spend(), 0)
    }

    #[test]
    fn htlc_template_shape() {
        let a = Secret::derive(0, "A");
        let spec = HtlcSpec { payee: p("alice"), payer: p("bob"), hash: hash_secret(&a), expiry: 50 };
        let pred = htlc_predicate(&spec).unwrap();
        assert!(eval(&pred, &witness(&["alice"], &[a]), 10));
        assert!(!eval(&pred, &witness(&["alice"], &[Secret::derive(0, "Z")]), 10));
        assert!(eval(&pred, &witness(&["bob"], &[]), 50));
        assert!(!eval(&pred, &witness(&["bob"], &[]), 49));
        assert!(!eval(&pred, &witness(&["alice"], &[]), 60));
        let bad = HtlcSpec { payer: p("alice"), ..spec };
        assert_eq!(htlc_predicate(&bad), Err(ContractError::SameParty(p("alice"))));
    }

    #[test]
    fn funding_requires_both_signers() {
        let a = Secret::derive(0, "A");
        let pred = funding_contract_predicate(&p("alice"), &p("bob"), hash_secret(&a), &p("bob"), 50).unwrap();
        assert!(eval(&pred, &witness(&["alice", "bob"], &[a]), 10));
        assert!(!eval(&pred, &witness(&["alice"], &[a]), 10));
        assert!(eval(&pred, &witness(&["bob"], &[]), 50));
        assert!(funding_contract_predicate(&p("bob"), &p("bob"), hash_secret(&a), &p("bob"), 50).is_err());
    }

    #[test]
    fn htlc_is_single_signer_funding_contract() {
        let h = hash_secret(&Secret::derive(0, "A"));
        let htlc = htlc_predicate(&HtlcSpec { payee: p("alice"), payer: p("bob"), hash: h, expiry: 9 }).unwrap();
        let funding = funding_contract_predicate(&p("alice"), &p("bob"), h, &p("bob"), 9).unwrap();
        let (Predicate::Any(hb), Predicate::Any(fb)) = (&htlc, &funding) else { panic!() };
        assert_eq!(hb[1], fb[1]);
        let Predicate::All(f0) = &fb[0] else { panic!() };
        let reduced: Vec<_> = f0.iter().filter(|l| **l != Predicate::Sig(p("bob"))).cloned().collect();
        assert_eq!(hb[0], Predicate::All(reduced));
    }

    #[test]
    fn anticheat_branches() {
        let a3 = Secret::derive(0, "A3");
        let spec = AntiCheatSpec { owner: p("alice"), punisher: p("bob"), punish_hash: hash_secret(&a3), delay: 1 };
        let pred = anticheat_predicate(&spec).unwrap();
        assert!(eval(&pred, &witness(&["bob"], &[a3]), 40));
        assert!(!eval(&pred, &witness(&["bob"], &[]), 40));
        assert!(!eval(&pred, &witness(&["alice"], &[]), 40));
        assert!(eval(&pred, &witness(&["alice"], &[]), 41));
        assert_eq!(anticheat_predicate(&AntiCheatSpec { delay: 0, ..spec }), Err(ContractError::ZeroDelay));
    }

    #[test]
    fn cancel_expiration_branches() {
        let a3 = Secret::derive(0, "A3");
        let pred = cancel_expiration_predicate(&p("bob"), hash_secret(&a3), 50);
        assert!(eval(&pred, &witness(&["bob"], &[a3]), 10));
        assert!(eval(&pred, &witness(&["bob"], &[]), 50));
        assert!(!eval(&pred, &witness(&["bob"], &[]), 49));
    }

    #[test]
    fn margin_contract_validation() {
        let spec = MarginContractSpec {
            depositor: p("bob"),
            beneficiary: p("alice"),
            margin: Amount(200_000),
            principal: Amount::coins(1),
            margin_expiry: 50,
        };
        let pred = margin_contract_predicate(&spec).unwrap();
        assert!(eval(&pred, &witness(&["alice", "bob"], &[]), 10));
        assert!(eval(&pred, &witness(&["alice"], &[]), 50));
        assert!(!eval(&pred, &witness(&["alice"], &[]), 49));
        assert!(!eval(&pred, &witness(&["bob"], &[]), 99));
        let bad = MarginContractSpec { margin: Amount::coins(1), ..spec.clone() };
        assert!(matches!(margin_contract_predicate(&bad), Err(ContractError::BadMargin { .. })));
        let bad = MarginContractSpec { margin: Amount::ZERO, ..spec };
        assert!(margin_contract_predicate(&bad).is_err());
    }
}
