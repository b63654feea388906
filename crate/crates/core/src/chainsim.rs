//! Deterministic UTXO chains sharing one discrete clock.
//!
//! Spending conditions are boolean [`Predicate`] trees over signature,
//! preimage and timelock leaves. Signatures are simulated attestations:
//! a [`SignatureRecord`] names its signer and the digest it commits to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Base units per coin.
pub const COIN: u64 = 1_000_000;

pub type TimePoint = u64;
pub type TimeDelta = u64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(pub u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub fn coins(c: u64) -> Amount {
        Amount(c * COIN)
    }

    pub fn base(self) -> u64 {
        self.0
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }

    /// Parses a decimal coin amount such as `1.1` or `0.000001`.
    pub fn parse_coins(s: &str) -> Option<Amount> {
        let s = s.trim();
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if frac.len() > 6 || !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let mut frac_units: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        for _ in frac.len()..6 {
            frac_units *= 10;
        }
        int.checked_mul(COIN)?.checked_add(frac_units).map(Amount)
    }
}

impl std::ops::Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0.checked_add(rhs.0).expect("amount overflow"))
    }
}

impl std::ops::Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0.checked_sub(rhs.0).expect("negative amount"))
    }
}

impl std::iter::Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_base_units(self.0 as i128))
    }
}

/// Formats a signed base-unit quantity as a decimal coin string with
/// trailing zeros trimmed.
pub fn format_base_units(v: i128) -> String {
    let sign = if v < 0 { "-" } else { "" };
    let a = v.unsigned_abs();
    let int = a / COIN as u128;
    let frac = a % COIN as u128;
    if frac == 0 {
        format!("{sign}{int}")
    } else {
        let s = format!("{frac:06}");
        format!("{sign}{int}.{}", s.trim_end_matches('0'))
    }
}

macro_rules! name_type {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            /// Panics on an empty name.
            pub fn new(name: impl Into<String>) -> Self {
                let name = name.into();
                assert!(!name.is_empty(), concat!(stringify!($name), " must be nonempty"));
                $name(name)
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name::new(s)
            }
        }
    };
}

name_type!(PartyId);
name_type!(ChainId);

macro_rules! bytes32 {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn short(&self) -> String {
                hex::encode(&self.0[..4])
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.short())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }
    };
}

bytes32!(Secret);
bytes32!(Hash);
bytes32!(Digest);

impl Secret {
    /// Deterministic secret derived from a seed and a label.
    pub fn derive(seed: u64, label: &str) -> Secret {
        let mut h = Sha256::new();
        h.update(b"secret");
        h.update(seed.to_be_bytes());
        h.update(label.as_bytes());
        Secret(h.finalize().into())
    }
}

pub fn hash_secret(s: &Secret) -> Hash {
    Hash(Sha256::digest(s.0).into())
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Predicate {
    Sig(PartyId),
    Preimage(Hash),
    AbsTime(TimePoint),
    RelTime(TimeDelta),
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
}

const TAG_SIG: u8 = 0x01;
const TAG_PREIMAGE: u8 = 0x02;
const TAG_ABS: u8 = 0x03;
const TAG_REL: u8 = 0x04;
const TAG_ALL: u8 = 0x05;
const TAG_ANY: u8 = 0x06;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("unknown node tag {tag:#04x} at byte {at}")]
    UnknownTag { tag: u8, at: usize },
    #[error("malformed field at byte {0}")]
    Malformed(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

impl Predicate {
    /// Wallet predicate: spendable by `party` alone.
    pub fn wallet(party: &PartyId) -> Predicate {
        Predicate::Sig(party.clone())
    }

    /// Pre-order encoding with one-byte node tags; variable-length fields
    /// carry a big-endian u32 length prefix.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Predicate::Sig(p) => {
                out.push(TAG_SIG);
                put_bytes(out, p.as_str().as_bytes());
            }
            Predicate::Preimage(h) => {
                out.push(TAG_PREIMAGE);
                put_bytes(out, &h.0);
            }
            Predicate::AbsTime(t) => {
                out.push(TAG_ABS);
                out.extend_from_slice(&t.to_be_bytes());
            }
            Predicate::RelTime(d) => {
                out.push(TAG_REL);
                out.extend_from_slice(&d.to_be_bytes());
            }
            Predicate::All(cs) | Predicate::Any(cs) => {
                out.push(if matches!(self, Predicate::All(_)) { TAG_ALL } else { TAG_ANY });
                out.extend_from_slice(&(cs.len() as u32).to_be_bytes());
                for c in cs {
                    c.encode(out);
                }
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Predicate, DecodeError> {
        let mut pos = 0;
        let p = Self::decode(bytes, &mut pos)?;
        if pos != bytes.len() {
            return Err(DecodeError::Trailing(bytes.len() - pos));
        }
        Ok(p)
    }

    fn decode(b: &[u8], pos: &mut usize) -> Result<Predicate, DecodeError> {
        let at = *pos;
        let tag = *b.get(at).ok_or(DecodeError::Truncated(at))?;
        *pos += 1;
        Ok(match tag {
            TAG_SIG => {
                let raw = take_bytes(b, pos)?;
                let name = String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::Malformed(at))?;
                if name.is_empty() {
                    return Err(DecodeError::Malformed(at));
                }
                Predicate::Sig(PartyId::new(name))
            }
            TAG_PREIMAGE => {
                let raw = take_bytes(b, pos)?;
                let arr: [u8; 32] = raw.try_into().map_err(|_| DecodeError::Malformed(at))?;
                Predicate::Preimage(Hash(arr))
            }
            TAG_ABS => Predicate::AbsTime(take_u64(b, pos)?),
            TAG_REL => Predicate::RelTime(take_u64(b, pos)?),
            TAG_ALL | TAG_ANY => {
                let n = take_u32(b, pos)? as usize;
                if n == 0 {
                    return Err(DecodeError::Malformed(at));
                }
                let mut cs = Vec::with_capacity(n.min(64));
                for _ in 0..n {
                    cs.push(Self::decode(b, pos)?);
                }
                if tag == TAG_ALL {
                    Predicate::All(cs)
                } else {
                    Predicate::Any(cs)
                }
            }
            tag => return Err(DecodeError::UnknownTag { tag, at }),
        })
    }

    /// Every signer leaf in the tree.
    pub fn signers(&self) -> BTreeSet<PartyId> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| {
            if let Predicate::Sig(s) = p {
                out.insert(s.clone());
            }
        });
        out
    }

    /// Every hash leaf in the tree.
    pub fn hashes(&self) -> BTreeSet<Hash> {
        let mut out = BTreeSet::new();
        self.visit(&mut |p| {
            if let Predicate::Preimage(h) = p {
                out.insert(*h);
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Predicate)) {
        f(self);
        if let Predicate::All(cs) | Predicate::Any(cs) = self {
            for c in cs {
                c.visit(f);
            }
        }
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

fn take<'a>(b: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], DecodeError> {
    let end = pos.checked_add(n).ok_or(DecodeError::Truncated(*pos))?;
    let s = b.get(*pos..end).ok_or(DecodeError::Truncated(*pos))?;
    *pos = end;
    Ok(s)
}

fn take_u32(b: &[u8], pos: &mut usize) -> Result<u32, DecodeError> {
    Ok(u32::from_be_bytes(take(b, pos, 4)?.try_into().unwrap()))
}

fn take_u64(b: &[u8], pos: &mut usize) -> Result<u64, DecodeError> {
    Ok(u64::from_be_bytes(take(b, pos, 8)?.try_into().unwrap()))
}

fn take_bytes<'a>(b: &'a [u8], pos: &mut usize) -> Result<&'a [u8], DecodeError> {
    let n = take_u32(b, pos)? as usize;
    take(b, pos, n)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Output {
    pub amount: Amount,
    pub predicate: Predicate,
}

impl Output {
    pub fn new(amount: Amount, predicate: Predicate) -> Output {
        Output { amount, predicate }
    }

    pub fn to_party(amount: Amount, party: &PartyId) -> Output {
        Output::new(amount, Predicate::wallet(party))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutPoint {
    pub txid: Digest,
    pub index: u32,
}

impl OutPoint {
    pub fn new(txid: Digest, index: u32) -> OutPoint {
        OutPoint { txid, index }
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid.short(), self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SigMode {
    CommitAll,
    AnyoneCanPay,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignatureRecord {
    pub signer: PartyId,
    pub digest: Digest,
    pub mode: SigMode,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Witness {
    pub preimages: BTreeSet<Secret>,
    pub signatures: BTreeSet<SignatureRecord>,
}

impl Witness {
    pub fn with_sig(mut self, sig: SignatureRecord) -> Witness {
        self.signatures.insert(sig);
        self
    }

    pub fn with_preimage(mut self, s: Secret) -> Witness {
        self.preimages.insert(s);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Input {
    pub outpoint: OutPoint,
    pub witness: Witness,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transaction {
    pub inputs: Vec<Input>,
    pub outputs: Vec<Output>,
    pub locktime: TimePoint,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("outpoint {0} is not unspent")]
    MissingUtxo(OutPoint),
    #[error("predicate of input {input} not satisfied")]
    PredicateUnsatisfied { input: usize },
    #[error("locktime {locktime} not reached at {now}")]
    LocktimeNotReached { locktime: TimePoint, now: TimePoint },
    #[error("outputs {outputs} exceed inputs {inputs}")]
    ValueCreated { inputs: Amount, outputs: Amount },
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("transaction has no outputs")]
    NoOutputs,
    #[error("output {0} has zero amount")]
    ZeroOutput(usize),
    #[error("invalid input ordinal {0}")]
    InvalidInput(usize),
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
}

impl Transaction {
    pub fn new(outpoints: Vec<OutPoint>, outputs: Vec<Output>, locktime: TimePoint) -> Transaction {
        Transaction {
            inputs: outpoints
                .into_iter()
                .map(|outpoint| Input { outpoint, witness: Witness::default() })
                .collect(),
            outputs,
            locktime,
        }
    }

    /// Identity digest over outpoints, outputs and locktime. Witnesses are
    /// excluded.
    pub fn txid(&self) -> Digest {
        let mut buf = b"txid".to_vec();
        put_outpoints(&mut buf, self.inputs.iter().map(|i| &i.outpoint));
        self.put_tail(&mut buf);
        Digest(Sha256::digest(&buf).into())
    }

    fn put_tail(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&(self.outputs.len() as u32).to_be_bytes());
        for o in &self.outputs {
            buf.extend_from_slice(&o.amount.0.to_be_bytes());
            put_bytes(buf, &o.predicate.to_bytes());
        }
        buf.extend_from_slice(&self.locktime.to_be_bytes());
    }

    pub fn outpoint(&self, index: u32) -> OutPoint {
        OutPoint::new(self.txid(), index)
    }

    pub fn output_total(&self) -> Amount {
        self.outputs.iter().map(|o| o.amount).sum()
    }

    /// Every preimage carried by any input witness.
    pub fn revealed(&self) -> impl Iterator<Item = &Secret> {
        self.inputs.iter().flat_map(|i| i.witness.preimages.iter())
    }
}

fn put_outpoints<'a>(buf: &mut Vec<u8>, ops: impl ExactSizeIterator<Item = &'a OutPoint>) {
    buf.extend_from_slice(&(ops.len() as u32).to_be_bytes());
    for op in ops {
        put_outpoint(buf, op);
    }
}

fn put_outpoint(buf: &mut Vec<u8>, op: &OutPoint) {
    buf.extend_from_slice(&op.txid.0);
    buf.extend_from_slice(&op.index.to_be_bytes());
}

/// Signing digest. `CommitAll` covers every input outpoint; `AnyoneCanPay`
/// covers only `own_input`'s outpoint. Both cover all outputs and the locktime.
pub fn tx_digest(tx: &Transaction, mode: SigMode, own_input: usize) -> Result<Digest, ChainError> {
    let own = tx.inputs.get(own_input).ok_or(ChainError::InvalidInput(own_input))?;
    let mut buf = Vec::new();
    match mode {
        SigMode::CommitAll => {
            buf.extend_from_slice(b"all");
            put_outpoints(&mut buf, tx.inputs.iter().map(|i| &i.outpoint));
        }
        SigMode::AnyoneCanPay => {
            buf.extend_from_slice(b"acp");
            put_outpoint(&mut buf, &own.outpoint);
        }
    }
    tx.put_tail(&mut buf);
    Ok(Digest(Sha256::digest(&buf).into()))
}

pub fn sign(party: &PartyId, tx: &Transaction, mode: SigMode, own_input: usize) -> Result<SignatureRecord, ChainError> {
    Ok(SignatureRecord { signer: party.clone(), digest: tx_digest(tx, mode, own_input)?, mode })
}

/// Whether `sig` attests to input `input` of `tx`.
pub fn verify(sig: &SignatureRecord, tx: &Transaction, input: usize) -> bool {
    tx_digest(tx, sig.mode, input).map(|d| d == sig.digest).unwrap_or(false)
}

pub fn eval_predicate(
    p: &Predicate,
    w: &Witness,
    now: TimePoint,
    spent_confirmed_at: TimePoint,
    tx: &Transaction,
    input: usize,
) -> bool {
    match p {
        Predicate::Sig(party) => w.signatures.iter().any(|s| &s.signer == party && verify(s, tx, input)),
        Predicate::Preimage(h) => w.preimages.iter().any(|s| hash_secret(s) == *h),
        Predicate::AbsTime(t) => now >= *t && tx.locktime >= *t,
        Predicate::RelTime(d) => now >= spent_confirmed_at.saturating_add(*d),
        Predicate::All(cs) => cs.iter().all(|c| eval_predicate(c, w, now, spent_confirmed_at, tx, input)),
        Predicate::Any(cs) => cs.iter().any(|c| eval_predicate(c, w, now, spent_confirmed_at, tx, input)),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utxo {
    pub output: Output,
    pub confirmed_at: TimePoint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confirmed {
    pub tx: Transaction,
    pub txid: Digest,
    pub at: TimePoint,
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub chain: ChainId,
    utxos: BTreeMap<OutPoint, Utxo>,
    log: Vec<Confirmed>,
    secrets: BTreeMap<Hash, Secret>,
    burned: Amount,
}

impl ChainState {
    pub fn new(chain: ChainId) -> ChainState {
        ChainState { chain, utxos: BTreeMap::new(), log: Vec::new(), secrets: BTreeMap::new(), burned: Amount::ZERO }
    }

    /// Publishes an input-less coinbase. Only used to seed initial wallets.
    pub fn genesis(&mut self, outputs: Vec<Output>, now: TimePoint) -> Digest {
        let tx = Transaction { inputs: Vec::new(), outputs, locktime: now };
        self.confirm(tx, now)
    }

    pub fn utxo(&self, op: &OutPoint) -> Option<&Utxo> {
        self.utxos.get(op)
    }

    pub fn utxos(&self) -> impl Iterator<Item = (&OutPoint, &Utxo)> {
        self.utxos.iter()
    }

    pub fn log(&self) -> &[Confirmed] {
        &self.log
    }

    pub fn burned(&self) -> Amount {
        self.burned
    }

    pub fn utxo_total(&self) -> Amount {
        self.utxos.values().map(|u| u.output.amount).sum()
    }

    pub fn is_confirmed(&self, txid: &Digest) -> bool {
        self.log.iter().any(|c| &c.txid == txid)
    }

    /// Sum of outputs spendable by `party`'s signature alone.
    pub fn wallet_balance(&self, party: &PartyId) -> Amount {
        self.utxos
            .values()
            .filter(|u| matches!(&u.output.predicate, Predicate::Sig(p) if p == party))
            .map(|u| u.output.amount)
            .sum()
    }

    pub fn wallet_utxos(&self, party: &PartyId) -> Vec<(OutPoint, Amount)> {
        self.utxos
            .iter()
            .filter(|(_, u)| matches!(&u.output.predicate, Predicate::Sig(p) if p == party))
            .map(|(op, u)| (*op, u.output.amount))
            .collect()
    }

    pub fn validate(&self, tx: &Transaction, now: TimePoint) -> Result<(), ChainError> {
        if tx.inputs.is_empty() {
            return Err(ChainError::NoInputs);
        }
        if tx.outputs.is_empty() {
            return Err(ChainError::NoOutputs);
        }
        if let Some(i) = tx.outputs.iter().position(|o| o.amount == Amount::ZERO) {
            return Err(ChainError::ZeroOutput(i));
        }
        if tx.locktime > now {
            return Err(ChainError::LocktimeNotReached { locktime: tx.locktime, now });
        }
        let mut seen = BTreeSet::new();
        let mut total_in = Amount::ZERO;
        for (i, input) in tx.inputs.iter().enumerate() {
            if !seen.insert(input.outpoint) {
                return Err(ChainError::MissingUtxo(input.outpoint));
            }
            let utxo = self.utxos.get(&input.outpoint).ok_or(ChainError::MissingUtxo(input.outpoint))?;
            if !eval_predicate(&utxo.output.predicate, &input.witness, now, utxo.confirmed_at, tx, i) {
                return Err(ChainError::PredicateUnsatisfied { input: i });
            }
            total_in = total_in + utxo.output.amount;
        }
        let total_out = tx.output_total();
        if total_out > total_in {
            return Err(ChainError::ValueCreated { inputs: total_in, outputs: total_out });
        }
        Ok(())
    }

    pub fn publish(&mut self, tx: Transaction, now: TimePoint) -> Result<Digest, ChainError> {
        self.validate(&tx, now)?;
        let total_in: Amount = tx.inputs.iter().map(|i| self.utxos[&i.outpoint].output.amount).sum();
        self.burned = self.burned + (total_in - tx.output_total());
        for input in &tx.inputs {
            self.utxos.remove(&input.outpoint);
        }
        Ok(self.confirm(tx, now))
    }

    fn confirm(&mut self, tx: Transaction, now: TimePoint) -> Digest {
        let txid = tx.txid();
        for (i, o) in tx.outputs.iter().enumerate() {
            self.utxos.insert(OutPoint::new(txid, i as u32), Utxo { output: o.clone(), confirmed_at: now });
        }
        for s in tx.revealed() {
            self.secrets.insert(hash_secret(s), *s);
        }
        self.log.push(Confirmed { tx, txid, at: now });
        txid
    }

    /// Every preimage published in any witness, keyed by its hash.
    pub fn scan_secrets(&self) -> &BTreeMap<Hash, Secret> {
        &self.secrets
    }
}

/// A set of chains under one global clock.
#[derive(Clone, Debug)]
pub struct World {
    now: TimePoint,
    chains: BTreeMap<ChainId, ChainState>,
}

impl World {
    pub fn new(chains: impl IntoIterator<Item = ChainId>) -> World {
        World { now: 0, chains: chains.into_iter().map(|c| (c.clone(), ChainState::new(c))).collect() }
    }

    /// Creates a world whose chains start with one wallet output per
    /// `(chain, party, amount)` allocation.
    pub fn with_wallets(chains: &[ChainId], wallets: &[(ChainId, PartyId, Amount)]) -> World {
        let mut world = World::new(chains.iter().cloned());
        for chain in chains {
            let outs: Vec<Output> = wallets
                .iter()
                .filter(|(c, _, a)| c == chain && *a > Amount::ZERO)
                .map(|(_, p, a)| Output::to_party(*a, p))
                .collect();
            if !outs.is_empty() {
                world.chains.get_mut(chain).unwrap().genesis(outs, 0);
            }
        }
        world
    }

    pub fn now(&self) -> TimePoint {
        self.now
    }

    pub fn advance_clock(&mut self, delta: TimeDelta) {
        self.now += delta;
    }

    pub fn advance_to(&mut self, t: TimePoint) {
        self.now = self.now.max(t);
    }

    pub fn chain(&self, id: &ChainId) -> Result<&ChainState, ChainError> {
        self.chains.get(id).ok_or_else(|| ChainError::UnknownChain(id.clone()))
    }

    pub fn chain_mut(&mut self, id: &ChainId) -> Result<&mut ChainState, ChainError> {
        self.chains.get_mut(id).ok_or_else(|| ChainError::UnknownChain(id.clone()))
    }

    pub fn chains(&self) -> impl Iterator<Item = &ChainState> {
        self.chains.values()
    }

    pub fn chain_ids(&self) -> Vec<ChainId> {
        self.chains.keys().cloned().collect()
    }

    pub fn publish(&mut self, chain: &ChainId, tx: Transaction) -> Result<Digest, ChainError> {
        let now = self.now;
        self.chain_mut(chain)?.publish(tx, now)
    }

    pub fn validate(&self, chain: &ChainId, tx: &Transaction) -> Result<(), ChainError> {
        self.chain(chain)?.validate(tx, self.now)
    }

    /// Secrets revealed on any chain.
    pub fn known_secrets(&self) -> BTreeMap<Hash, Secret> {
        let mut out = BTreeMap::new();
        for c in self.chains.values() {
            out.extend(c.scan_secrets().iter().map(|(h, s)| (*h, *s)));
        }
        out
    }

    pub fn wallet_balance(&self, party: &PartyId, chain: &ChainId) -> Amount {
        self.chains.get(chain).map(|c| c.wallet_balance(party)).unwrap_or_default()
    }

    /// Pays `amount` from `party`'s wallet to `outputs[..]`, returning change
    /// to the wallet. Inputs are chosen in outpoint order.
    pub fn pay_from_wallet(
        &mut self,
        chain: &ChainId,
        party: &PartyId,
        mut outputs: Vec<Output>,
    ) -> Result<Transaction, ChainError> {
        let needed: Amount = outputs.iter().map(|o| o.amount).sum();
        let mut picked = Vec::new();
        let mut got = Amount::ZERO;
        for (op, amt) in self.chain(chain)?.wallet_utxos(party) {
            if got >= needed {
                break;
            }
            picked.push(op);
            got = got + amt;
        }
        if got < needed || picked.is_empty() {
            return Err(ChainError::ValueCreated { inputs: got, outputs: needed });
        }
        if got > needed {
            outputs.push(Output::to_party(got - needed, party));
        }
        let mut tx = Transaction::new(picked, outputs, self.now);
        let sig = sign(party, &tx, SigMode::CommitAll, 0)?;
        for i in &mut tx.inputs {
            i.witness.signatures.insert(sig.clone());
        }
        self.publish(chain, tx.clone())?;
        Ok(tx)
    }
}
