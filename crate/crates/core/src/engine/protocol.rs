use std::collections::{BTreeMap, BTreeSet};

use super::{Action, EngineError};
use crate::chainsim::{
    hash_secret, sign, Amount, ChainId, Digest, Hash, OutPoint, Output, PartyId, Predicate, Secret, SigMode,
    SignatureRecord, TimePoint, Transaction, World,
};
use crate::contracts::{ContractSetup, PreSigned};
use crate::econ::Price;

/// A candidate transaction one party may publish.
#[derive(Clone, Debug)]
pub struct Move {
    pub label: String,
    pub party: PartyId,
    pub chain: ChainId,
    pub action: Action,
    /// Template with every signature attached and no preimages.
    pub tx: Transaction,
    pub txid: Digest,
    /// Preimages the publisher must know.
    pub secrets: Vec<Hash>,
    /// Honest play waits for these transactions to confirm first.
    pub after: Vec<(ChainId, Digest)>,
    /// Honest play publishes only strictly before this time.
    pub deadline: Option<TimePoint>,
    /// Swaption leg this move belongs to, for price-aware strategies.
    pub leg: Option<LegValuation>,
}

/// Economic shape of one swaption leg: the holder may swap `p_h` on its own
/// chain for the writer's `p_w`; the writer has `m_w` at stake.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LegValuation {
    pub holder: PartyId,
    pub writer: PartyId,
    /// Whether the holder's principal is on the numeraire chain.
    pub holder_on_numeraire: bool,
    pub p_h: Amount,
    pub p_w: Amount,
    pub m_w: Amount,
}

impl LegValuation {
    fn value(&self, amount: Amount, on_numeraire: bool, r: Price) -> Price {
        let a = Price::from_integer(amount.0 as i128);
        if on_numeraire {
            a
        } else {
            a * r
        }
    }

    /// Numeraire value of exercising now: receive `p_w`, give `p_h`.
    pub fn exercise_gain(&self, r: Price) -> Price {
        self.value(self.p_w, !self.holder_on_numeraire, r) - self.value(self.p_h, self.holder_on_numeraire, r)
    }

    /// Honor unless the exercise loss strictly exceeds the forfeited margin.
    pub fn writer_honors(&self, r: Price) -> bool {
        let loss = self.exercise_gain(r).max(Price::from_integer(0));
        loss <= self.value(self.m_w, !self.holder_on_numeraire, r)
    }
}

impl Move {
    pub fn label_action(&self) -> String {
        format!("{}:{}", self.action, self.label)
    }
}

/// A compiled protocol instance ready to run against its world.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub name: String,
    pub parties: Vec<PartyId>,
    pub moves: Vec<Move>,
    pub knowledge: BTreeMap<PartyId, BTreeMap<Hash, Secret>>,
    pub secret_names: BTreeMap<Hash, String>,
    /// Timelocks appearing in the protocol; adversaries act at `b-1, b, b+1`.
    pub boundaries: BTreeSet<TimePoint>,
    pub horizon: TimePoint,
    pub setup: ContractSetup,
}

impl Protocol {
    pub fn move_index(&self, label: &str) -> Option<usize> {
        self.moves.iter().position(|m| m.label == label)
    }

    pub fn get(&self, label: &str) -> Option<&Move> {
        self.moves.iter().find(|m| m.label == label)
    }

    pub fn secret(&self, name: &str) -> Option<Hash> {
        self.secret_names.iter().find(|(_, n)| n.as_str() == name).map(|(h, _)| *h)
    }

    /// Interesting times for adversarial timing variants.
    pub fn boundary_times(&self) -> BTreeSet<TimePoint> {
        let mut out = BTreeSet::new();
        for b in &self.boundaries {
            out.insert(b.saturating_sub(1));
            out.insert(*b);
            out.insert(b + 1);
        }
        out
    }
}

/// Incrementally assembles a [`Protocol`] with its pre-signed children.
pub(crate) struct Builder {
    pub seed: u64,
    pub proto: Protocol,
    /// Pre-signatures that some party declines to give during setup.
    pub withheld: BTreeSet<(String, PartyId)>,
}

pub(crate) struct MoveSpec<'a> {
    pub label: String,
    pub party: &'a PartyId,
    pub chain: &'a ChainId,
    pub action: Action,
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<Output>,
    pub locktime: TimePoint,
    pub cosigners: Vec<PartyId>,
    pub secrets: Vec<Hash>,
    pub after: Vec<(ChainId, Digest)>,
    pub deadline: Option<TimePoint>,
    /// Cosigners sign `AnyoneCanPay` over input 0 only, before the
    /// publisher appends the remaining inputs.
    pub anyone_can_pay: bool,
    pub leg: Option<LegValuation>,
}

impl<'a> MoveSpec<'a> {
    pub fn new(label: &str, party: &'a PartyId, chain: &'a ChainId, action: Action) -> MoveSpec<'a> {
        MoveSpec {
            label: label.to_string(),
            party,
            chain,
            action,
            inputs: Vec::new(),
            outputs: Vec::new(),
            locktime: 0,
            cosigners: Vec::new(),
            secrets: Vec::new(),
            after: Vec::new(),
            deadline: None,
            anyone_can_pay: false,
            leg: None,
        }
    }

    pub fn spend(mut self, op: OutPoint) -> Self {
        self.inputs.push(op);
        self
    }

    pub fn pay(mut self, amount: Amount, predicate: Predicate) -> Self {
        if amount > Amount::ZERO {
            self.outputs.push(Output::new(amount, predicate));
        }
        self
    }

    pub fn to(self, amount: Amount, party: &PartyId) -> Self {
        self.pay(amount, Predicate::wallet(party))
    }

    pub fn locktime(mut self, t: TimePoint) -> Self {
        self.locktime = t;
        self
    }

    pub fn cosigned(mut self, by: &PartyId) -> Self {
        self.cosigners.push(by.clone());
        self
    }

    pub fn secret(mut self, h: Hash) -> Self {
        self.secrets.push(h);
        self
    }

    pub fn after(mut self, chain: &ChainId, txid: Digest) -> Self {
        self.after.push((chain.clone(), txid));
        self
    }

    pub fn deadline(mut self, t: TimePoint) -> Self {
        self.deadline = Some(t);
        self
    }

    pub fn leg(mut self, leg: &Option<LegValuation>) -> Self {
        self.leg = leg.clone();
        self
    }

    pub fn cosigned_if(self, yes: bool, by: &PartyId) -> Self {
        if yes {
            self.cosigned(by)
        } else {
            self
        }
    }

    pub fn anyone_can_pay(mut self) -> Self {
        self.anyone_can_pay = true;
        self
    }
}

impl Builder {
    pub fn new(name: &str, seed: u64, parties: Vec<PartyId>) -> Builder {
        let mut parties = parties;
        parties.sort();
        parties.dedup();
        Builder {
            seed,
            proto: Protocol {
                name: name.to_string(),
                parties,
                moves: Vec::new(),
                knowledge: BTreeMap::new(),
                secret_names: BTreeMap::new(),
                boundaries: BTreeSet::new(),
                horizon: 0,
                setup: ContractSetup::default(),
            },
            withheld: BTreeSet::new(),
        }
    }

    /// Generates a named secret known only to `owner`.
    pub fn secret(&mut self, owner: &PartyId, name: &str) -> Hash {
        let s = Secret::derive(self.seed, &format!("{}/{name}", self.proto.name));
        let h = hash_secret(&s);
        self.proto.knowledge.entry(owner.clone()).or_default().insert(h, s);
        self.proto.secret_names.insert(h, name.to_string());
        h
    }

    pub fn boundary(&mut self, t: TimePoint) {
        self.proto.boundaries.insert(t);
    }

    /// Adds a move; returns its txid so children can reference its outputs.
    pub fn add(&mut self, spec: MoveSpec<'_>) -> Digest {
        let mut tx = Transaction::new(spec.inputs, spec.outputs, spec.locktime);
        let mut presigs: Vec<SignatureRecord> = Vec::new();
        for c in &spec.cosigners {
            if self.withheld.contains(&(spec.label.clone(), c.clone())) {
                continue;
            }
            let sig = if spec.anyone_can_pay {
                let base = Transaction::new(vec![tx.inputs[0].outpoint], tx.outputs.clone(), tx.locktime);
                sign(c, &base, SigMode::AnyoneCanPay, 0)
            } else {
                sign(c, &tx, SigMode::CommitAll, 0)
            }
            .expect("move has inputs");
            presigs.push(sig);
        }
        if !spec.cosigners.is_empty() {
            self.proto.setup.insert(
                spec.label.clone(),
                PreSigned { tx: tx.clone(), required: spec.cosigners.clone(), signatures: presigs.clone() },
            );
        }
        let own = sign(spec.party, &tx, SigMode::CommitAll, 0).expect("move has inputs");
        for i in &mut tx.inputs {
            i.witness.signatures.insert(own.clone());
            i.witness.signatures.extend(presigs.iter().cloned());
        }
        let txid = tx.txid();
        if spec.locktime > 0 {
            self.proto.boundaries.insert(spec.locktime);
        }
        self.proto.moves.push(Move {
            label: spec.label,
            party: spec.party.clone(),
            chain: spec.chain.clone(),
            action: spec.action,
            tx,
            txid,
            secrets: spec.secrets,
            after: spec.after,
            deadline: spec.deadline,
            leg: spec.leg,
        });
        txid
    }

    pub fn finish(mut self, horizon: TimePoint) -> Protocol {
        self.proto.horizon = horizon;
        self.proto
    }
}

/// Splits each party's wallet into exact-amount pieces before a protocol
/// starts, so that independent moves never compete for one wallet output.
///
/// Requests whose `required` flag is false are skipped (and yield `None`)
/// when the wallet cannot cover them.
pub(crate) fn reserve(
    world: &mut World,
    requests: &[(PartyId, ChainId, Amount, bool)],
) -> Result<Vec<Option<OutPoint>>, EngineError> {
    let mut result = vec![None; requests.len()];
    let mut groups: BTreeMap<(PartyId, ChainId), Vec<usize>> = BTreeMap::new();
    for (i, (p, c, a, _)) in requests.iter().enumerate() {
        if *a > Amount::ZERO {
            groups.entry((p.clone(), c.clone())).or_default().push(i);
        }
    }
    for ((party, chain), idxs) in groups {
        let has = world.wallet_balance(&party, &chain);
        let mut outputs = Vec::new();
        let mut slots = Vec::new();
        let mut total = Amount::ZERO;
        for &i in &idxs {
            let (_, _, amount, required) = &requests[i];
            if total + *amount <= has {
                total = total + *amount;
                slots.push(i);
                outputs.push(Output::to_party(*amount, &party));
            } else if *required {
                return Err(EngineError::Underfunded { party, chain, has, needs: total + *amount });
            }
        }
        if outputs.is_empty() {
            continue;
        }
        let tx = world.pay_from_wallet(&chain, &party, outputs)?;
        let txid = tx.txid();
        for (k, i) in slots.into_iter().enumerate() {
            result[i] = Some(OutPoint::new(txid, k as u32));
        }
    }
    Ok(result)
}
