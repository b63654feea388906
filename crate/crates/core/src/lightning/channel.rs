use std::collections::BTreeMap;

use crate::chainsim::{sign, Amount, ChainId, Digest, Hash, OutPoint, Output, PartyId, Predicate, SigMode, TimePoint, Transaction, World};
use crate::contracts::{htlc_predicate, HtlcSpec};

use super::LightningError;

/// A hashed timelock output held inside a channel, with the metadata needed
/// to settle it in-channel or after a close.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelContract {
    pub output: Output,
    pub payer: PartyId,
    pub payee: PartyId,
    pub hash: Hash,
    pub expiry: TimePoint,
    /// Routed position this contract belongs to, if any.
    pub position: Option<usize>,
}

impl ChannelContract {
    pub fn htlc(
        payer: &PartyId,
        payee: &PartyId,
        amount: Amount,
        hash: Hash,
        expiry: TimePoint,
    ) -> Result<ChannelContract, LightningError> {
        let spec = HtlcSpec { payee: payee.clone(), payer: payer.clone(), hash, expiry };
        Ok(ChannelContract {
            output: Output::new(amount, htlc_predicate(&spec)?),
            payer: payer.clone(),
            payee: payee.clone(),
            hash,
            expiry,
            position: None,
        })
    }

    pub fn amount(&self) -> Amount {
        self.output.amount
    }

    fn well_formed(&self) -> bool {
        let spec = HtlcSpec { payee: self.payee.clone(), payer: self.payer.clone(), hash: self.hash, expiry: self.expiry };
        self.output.amount > Amount::ZERO && htlc_predicate(&spec).map(|p| p == self.output.predicate).unwrap_or(false)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub chain: ChainId,
    pub parties: (PartyId, PartyId),
    pub balances: (Amount, Amount),
    pub contracts: BTreeMap<String, ChannelContract>,
    pub funding: OutPoint,
    pub capacity: Amount,
    /// Commitment txid once closed.
    pub closed: Option<Digest>,
}

/// A proposed next state: new balances, contracts to drop and contracts to add.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelUpdate {
    pub balances: (Amount, Amount),
    pub remove: Vec<String>,
    pub add: Vec<(String, ChannelContract)>,
}

fn funding_predicate(a: &PartyId, b: &PartyId) -> Predicate {
    Predicate::All(vec![Predicate::Sig(a.clone()), Predicate::Sig(b.clone())])
}

/// Funds a channel from both wallets in one transaction.
pub fn open_channel(
    world: &mut World,
    chain: &ChainId,
    a: &PartyId,
    b: &PartyId,
    fund_a: Amount,
    fund_b: Amount,
) -> Result<Channel, LightningError> {
    let capacity = fund_a + fund_b;
    if a == b || capacity == Amount::ZERO {
        return Err(LightningError::BadChannel);
    }
    let mut inputs = Vec::new();
    let mut change = Vec::new();
    for (party, need) in [(a, fund_a), (b, fund_b)] {
        if need == Amount::ZERO {
            continue;
        }
        let mut got = Amount::ZERO;
        for (op, amt) in world.chain(chain)?.wallet_utxos(party) {
            if got >= need {
                break;
            }
            inputs.push((party.clone(), op));
            got = got + amt;
        }
        if got < need {
            return Err(LightningError::InsufficientFunds { party: party.clone(), chain: chain.clone(), needs: need, has: got });
        }
        if got > need {
            change.push(Output::to_party(got - need, party));
        }
    }
    let mut outputs = vec![Output::new(capacity, funding_predicate(a, b))];
    outputs.extend(change);
    let mut tx = Transaction::new(inputs.iter().map(|(_, op)| *op).collect(), outputs, world.now());
    let sigs: BTreeMap<PartyId, _> = [a, b]
        .into_iter()
        .map(|p| Ok((p.clone(), sign(p, &tx, SigMode::CommitAll, 0)?)))
        .collect::<Result<_, LightningError>>()?;
    for (input, (owner, _)) in tx.inputs.iter_mut().zip(&inputs) {
        input.witness.signatures.insert(sigs[owner].clone());
    }
    let txid = world.publish(chain, tx)?;
    Ok(Channel {
        chain: chain.clone(),
        parties: (a.clone(), b.clone()),
        balances: (fund_a, fund_b),
        contracts: BTreeMap::new(),
        funding: OutPoint::new(txid, 0),
        capacity,
        closed: None,
    })
}

/// Applies a cooperative update. Both parties must consent and the new state
/// must hold exactly the channel's capacity.
pub fn update_channel(channel: &Channel, update: &ChannelUpdate, consent: (bool, bool)) -> Result<Channel, LightningError> {
    if channel.closed.is_some() {
        return Err(LightningError::BadChannel);
    }
    if !consent.0 {
        return Err(LightningError::NoConsent(channel.parties.0.clone()));
    }
    if !consent.1 {
        return Err(LightningError::NoConsent(channel.parties.1.clone()));
    }
    let mut next = channel.clone();
    next.balances = update.balances;
    for id in &update.remove {
        next.contracts.remove(id).ok_or_else(|| LightningError::UnknownContract(id.clone()))?;
    }
    for (id, c) in &update.add {
        let between = (c.payer == channel.parties.0 && c.payee == channel.parties.1)
            || (c.payer == channel.parties.1 && c.payee == channel.parties.0);
        if !between || !c.well_formed() {
            return Err(LightningError::BadContract(id.clone()));
        }
        if next.contracts.insert(id.clone(), c.clone()).is_some() {
            return Err(LightningError::DuplicateContract(id.clone()));
        }
    }
    let got = next.held();
    if got != channel.capacity {
        return Err(LightningError::NotConserved { expected: channel.capacity, got });
    }
    Ok(next)
}

/// Publishes the latest agreed state. Returns the commitment transaction.
pub fn close_channel(world: &mut World, channel: &mut Channel) -> Result<Transaction, LightningError> {
    if channel.closed.is_some() {
        return Err(LightningError::BadChannel);
    }
    let (tx, _) = channel.commitment(world.now())?;
    channel.closed = Some(world.publish(&channel.chain, tx.clone())?);
    Ok(tx)
}

impl Channel {
    /// Balances plus every live contract.
    pub fn held(&self) -> Amount {
        self.balances.0 + self.balances.1 + self.contracts.values().map(|c| c.amount()).sum()
    }

    pub fn side(&self, party: &PartyId) -> Option<usize> {
        if &self.parties.0 == party {
            Some(0)
        } else if &self.parties.1 == party {
            Some(1)
        } else {
            None
        }
    }

    pub fn balance(&self, party: &PartyId) -> Amount {
        match self.side(party) {
            Some(0) => self.balances.0,
            Some(_) => self.balances.1,
            None => Amount::ZERO,
        }
    }

    pub fn other(&self, party: &PartyId) -> &PartyId {
        if &self.parties.0 == party {
            &self.parties.1
        } else {
            &self.parties.0
        }
    }

    pub fn is_open(&self) -> bool {
        self.closed.is_none()
    }

    /// The signed transaction closing into the current state, and the output
    /// index of each contract in it.
    pub fn commitment(&self, now: TimePoint) -> Result<(Transaction, BTreeMap<String, u32>), LightningError> {
        let mut outputs = Vec::new();
        for (p, b) in [(&self.parties.0, self.balances.0), (&self.parties.1, self.balances.1)] {
            if b > Amount::ZERO {
                outputs.push(Output::to_party(b, p));
            }
        }
        let mut index = BTreeMap::new();
        for (id, c) in &self.contracts {
            index.insert(id.clone(), outputs.len() as u32);
            outputs.push(c.output.clone());
        }
        let mut tx = Transaction::new(vec![self.funding], outputs, now);
        for p in [&self.parties.0, &self.parties.1] {
            let sig = sign(p, &tx, SigMode::CommitAll, 0)?;
            tx.inputs[0].witness.signatures.insert(sig);
        }
        Ok((tx, index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::{hash_secret, Secret};

    fn alice() -> PartyId {
        PartyId::new("alice")
    }
    fn bob() -> PartyId {
        PartyId::new("bob")
    }
    fn ac() -> ChainId {
        ChainId::new("ACoin")
    }

    fn world() -> World {
        World::with_wallets(&[ac()], &[(ac(), alice(), Amount::coins(5)), (ac(), bob(), Amount::coins(5))])
    }

    #[test]
    fn open_both_and_single_funded() {
        let mut w = world();
        let ch = open_channel(&mut w, &ac(), &alice(), &bob(), Amount::coins(5), Amount::coins(5)).unwrap();
        assert_eq!(ch.balances, (Amount::coins(5), Amount::coins(5)));
        assert_eq!(w.chain(&ac()).unwrap().utxo(&ch.funding).unwrap().output.amount, Amount::coins(10));
        assert_eq!(w.wallet_balance(&alice(), &ac()), Amount::ZERO);

        let mut w = world();
        let ch = open_channel(&mut w, &ac(), &alice(), &bob(), Amount::ZERO, Amount::coins(5)).unwrap();
        assert_eq!(ch.balances, (Amount::ZERO, Amount::coins(5)));
        assert_eq!(w.wallet_balance(&alice(), &ac()), Amount::coins(5));
    }

    #[test]
    fn overdraw_rejected() {
        let mut w = world();
        let err = open_channel(&mut w, &ac(), &alice(), &bob(), Amount::coins(6), Amount::ZERO).unwrap_err();
        assert!(matches!(err, LightningError::InsufficientFunds { .. }));
    }

    #[test]
    fn updates_conserve_and_need_consent() {
        let mut w = world();
        let ch = open_channel(&mut w, &ac(), &alice(), &bob(), Amount::coins(5), Amount::coins(5)).unwrap();
        let h = hash_secret(&Secret::derive(1, "a"));
        let c = ChannelContract::htlc(&alice(), &bob(), Amount::coins(1), h, 20).unwrap();
        let add = ChannelUpdate {
            balances: (Amount::coins(4), Amount::coins(5)),
            remove: vec![],
            add: vec![("x".into(), c.clone())],
        };
        assert_eq!(update_channel(&ch, &add, (true, false)).unwrap_err(), LightningError::NoConsent(bob()));
        let ch2 = update_channel(&ch, &add, (true, true)).unwrap();
        assert_eq!(ch2.balance(&alice()), Amount::coins(4));
        assert_eq!(ch2.contracts.len(), 1);

        let settle = ChannelUpdate { balances: (Amount::coins(4), Amount::coins(6)), remove: vec!["x".into()], add: vec![] };
        let ch3 = update_channel(&ch2, &settle, (true, true)).unwrap();
        assert_eq!(ch3.held(), ch.capacity);
        assert!(ch3.contracts.is_empty());

        let bad = ChannelUpdate { balances: (Amount::coins(5), Amount::coins(6)), remove: vec![], add: vec![] };
        assert!(matches!(update_channel(&ch3, &bad, (true, true)), Err(LightningError::NotConserved { .. })));
    }

    #[test]
    fn close_materializes_state() {
        let mut w = world();
        let ch = open_channel(&mut w, &ac(), &alice(), &bob(), Amount::coins(5), Amount::coins(5)).unwrap();
        let mut plain = ch.clone();
        let tx = close_channel(&mut w.clone(), &mut plain).unwrap();
        assert_eq!(tx.outputs.len(), 2);

        let h = hash_secret(&Secret::derive(1, "a"));
        let c = ChannelContract::htlc(&alice(), &bob(), Amount::coins(1), h, 20).unwrap();
        let upd = ChannelUpdate {
            balances: (Amount::coins(4), Amount::coins(5)),
            remove: vec![],
            add: vec![("x".into(), c.clone())],
        };
        let mut ch = update_channel(&ch, &upd, (true, true)).unwrap();
        let tx = close_channel(&mut w, &mut ch).unwrap();
        assert_eq!(tx.outputs[2], c.output);
        assert_eq!(w.wallet_balance(&alice(), &ac()), Amount::coins(4));
        assert!(close_channel(&mut w, &mut ch).is_err());
    }
}
