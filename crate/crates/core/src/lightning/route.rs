use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::chainsim::{
    hash_secret, sign, Amount, ChainId, Hash, OutPoint, Output, PartyId, Secret, SigMode, TimeDelta, TimePoint,
    Transaction, World,
};

use super::channel::{close_channel, open_channel, update_channel, Channel, ChannelContract, ChannelUpdate};
use super::LightningError;

/// Terms of a routed swaption. `expiry` is the deadline of the contract the
/// holder claims to exercise; every other hop expires later.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RouteTerms {
    pub p_a: Amount,
    pub p_b: Amount,
    pub premium: Amount,
    pub expiry: TimePoint,
    /// Per-hop fee in basis points of the routed amount.
    pub fee_bps: u32,
}

impl RouteTerms {
    fn fee(&self, base: Amount) -> Amount {
        Amount(base.0 * self.fee_bps as u64 / 10_000)
    }

    /// Amount carried by hop `j` of an `n`-hop leg, counted from the sender.
    fn leg_amount(&self, base: Amount, n: usize, j: usize) -> Amount {
        Amount(base.0 + (n - 1 - j) as u64 * self.fee(base).0)
    }
}

/// Parties joined by channels on one chain, in payment direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub chain: ChainId,
    pub nodes: Vec<PartyId>,
    pub channels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutedHop {
    pub chain: ChainId,
    pub channel: usize,
    pub payer: PartyId,
    pub payee: PartyId,
    pub amount: Amount,
    pub expiry: TimePoint,
    pub contract: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionStatus {
    Open,
    /// Setup stopped after this many contracts.
    Broken { installed: usize },
    Replaced,
    Unwound,
}

/// One swaption spread over a chain of hashed timelock contracts.
///
/// `hops` is in claim order: first the BCoin leg from the holder outward,
/// then the ACoin leg from the writer back. Expiries step up by one along it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutedPosition {
    pub id: usize,
    pub holder: PartyId,
    pub writer: PartyId,
    pub hash: Hash,
    pub terms: RouteTerms,
    pub hops: Vec<RoutedHop>,
    /// Number of leading BCoin hops.
    pub b_hops: usize,
    /// Short position whose exercise triggers this one.
    pub linked: Option<usize>,
    pub status: PositionStatus,
}

impl RoutedPosition {
    pub fn span(&self) -> TimePoint {
        self.hops.last().map(|h| h.expiry).unwrap_or(self.terms.expiry)
    }
}

/// How a party plays. The default is honest: relay promptly, refund at
/// expiry, always consent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Behavior {
    pub exercise_at: Option<TimePoint>,
    /// Stops acting and consenting from this time on.
    pub silent_from: Option<TimePoint>,
    /// Extra wait before acting on a learned secret.
    pub relay_delay: TimeDelta,
    /// Consents to updates but never settles anything.
    pub passive: bool,
}

impl Behavior {
    pub fn exercise(t: TimePoint) -> Behavior {
        Behavior { exercise_at: Some(t), ..Behavior::default() }
    }

    fn online(&self, t: TimePoint) -> bool {
        self.silent_from.map_or(true, |s| t < s)
    }

    fn acts(&self, t: TimePoint) -> bool {
        self.online(t) && !self.passive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LnEventKind {
    Install,
    Premium,
    Break,
    Claim,
    Refund,
    Close,
    Reissue,
    Unwind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LnEvent {
    pub time: TimePoint,
    pub kind: LnEventKind,
    pub channel: usize,
    pub contract: String,
    pub party: PartyId,
    pub onchain: bool,
}

impl fmt::Display for LnEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} {:?} ch{} {} by {}", self.time, self.kind, self.channel, self.contract, self.party)?;
        if self.onchain {
            f.write_str(" on-chain")?;
        }
        Ok(())
    }
}

/// Channels, routed positions and who knows which secret.
#[derive(Clone, Debug)]
pub struct Network {
    pub world: World,
    pub channels: Vec<Channel>,
    pub positions: Vec<RoutedPosition>,
    pub log: Vec<LnEvent>,
    onchain: BTreeMap<(usize, String), OutPoint>,
    secrets: BTreeMap<Hash, Secret>,
    origin: BTreeMap<Hash, PartyId>,
    /// Earliest time each party knew each secret.
    known: BTreeMap<PartyId, BTreeMap<Hash, TimePoint>>,
    public: BTreeMap<Hash, TimePoint>,
    seed: u64,
}

type Behaviors = BTreeMap<PartyId, Behavior>;

fn behavior<'a>(bs: &'a Behaviors, p: &PartyId) -> &'a Behavior {
    static HONEST: Behavior =
        Behavior { exercise_at: None, silent_from: None, relay_delay: 0, passive: false };
    bs.get(p).unwrap_or(&HONEST)
}

impl Network {
    pub fn new(world: World, seed: u64) -> Network {
        Network {
            world,
            channels: Vec::new(),
            positions: Vec::new(),
            log: Vec::new(),
            onchain: BTreeMap::new(),
            secrets: BTreeMap::new(),
            origin: BTreeMap::new(),
            known: BTreeMap::new(),
            public: BTreeMap::new(),
            seed,
        }
    }

    pub fn open_channel(
        &mut self,
        chain: &ChainId,
        a: &PartyId,
        b: &PartyId,
        fund_a: Amount,
        fund_b: Amount,
    ) -> Result<usize, LightningError> {
        let ch = open_channel(&mut self.world, chain, a, b, fund_a, fund_b)?;
        self.channels.push(ch);
        Ok(self.channels.len() - 1)
    }

    /// Resolves the open channel between each adjacent pair of `nodes`.
    pub fn path(&self, chain: &ChainId, nodes: &[PartyId]) -> Result<Path, LightningError> {
        if nodes.len() < 2 {
            return Err(LightningError::BadPath("a path needs at least two nodes".into()));
        }
        let mut channels = Vec::new();
        for w in nodes.windows(2) {
            let found = self.channels.iter().position(|c| {
                c.is_open() && &c.chain == chain && c.side(&w[0]).is_some() && c.side(&w[1]).is_some() && w[0] != w[1]
            });
            let id = found.ok_or_else(|| LightningError::NoChannel { a: w[0].clone(), b: w[1].clone(), chain: chain.clone() })?;
            if channels.contains(&id) {
                return Err(LightningError::BadPath(format!("channel {id} used twice")));
            }
            channels.push(id);
        }
        Ok(Path { chain: chain.clone(), nodes: nodes.to_vec(), channels })
    }

    /// Wallet plus balances in open channels.
    pub fn holdings(&self, party: &PartyId, chain: &ChainId) -> Amount {
        let in_channels: Amount =
            self.channels.iter().filter(|c| c.is_open() && &c.chain == chain).map(|c| c.balance(party)).sum();
        self.world.wallet_balance(party, chain) + in_channels
    }

    pub fn parties(&self) -> BTreeSet<PartyId> {
        self.channels.iter().flat_map(|c| [c.parties.0.clone(), c.parties.1.clone()]).collect()
    }

    /// Party that generated the secret behind `hash`.
    pub fn secret_owner(&self, hash: &Hash) -> Option<&PartyId> {
        self.origin.get(hash)
    }

    /// Contracts not yet settled, in channel then id order.
    pub fn live_contracts(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (i, c) in self.channels.iter().enumerate() {
            out.extend(c.contracts.keys().map(|id| (i, id.clone())));
        }
        out
    }

    pub fn open_positions(&self) -> impl Iterator<Item = &RoutedPosition> {
        self.positions.iter().filter(|p| p.status == PositionStatus::Open)
    }

    /// Unilateral close of the latest state.
    pub fn close(&mut self, channel: usize, party: &PartyId) -> Result<(), LightningError> {
        let (_, index) = self.channels[channel].commitment(self.world.now())?;
        let tx = close_channel(&mut self.world, &mut self.channels[channel])?;
        let txid = tx.txid();
        for (id, i) in index {
            self.onchain.insert((channel, id), OutPoint::new(txid, i));
        }
        self.record(LnEventKind::Close, channel, "", party, true);
        Ok(())
    }

    fn new_secret(&mut self, owner: &PartyId) -> Hash {
        let s = Secret::derive(self.seed, &format!("{owner}/{}", self.secrets.len()));
        let h = hash_secret(&s);
        self.secrets.insert(h, s);
        self.origin.insert(h, owner.clone());
        self.learn(owner, h, self.world.now());
        h
    }

    fn learn(&mut self, party: &PartyId, h: Hash, t: TimePoint) {
        let e = self.known.entry(party.clone()).or_default().entry(h).or_insert(t);
        *e = (*e).min(t);
    }

    fn learned_at(&self, party: &PartyId, h: &Hash) -> Option<TimePoint> {
        let private = self.known.get(party).and_then(|k| k.get(h)).copied();
        match (private, self.public.get(h).copied()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// When the holder claimed the first hop of `pos`, if it has.
    fn exercised_at(&self, pos: &RoutedPosition) -> Option<TimePoint> {
        let first = pos.hops.first()?;
        self.log
            .iter()
            .find(|e| e.kind == LnEventKind::Claim && e.channel == first.channel && e.contract == first.contract)
            .map(|e| e.time)
    }

    fn record(&mut self, kind: LnEventKind, channel: usize, contract: &str, party: &PartyId, onchain: bool) {
        self.log.push(LnEvent {
            time: self.world.now(),
            kind,
            channel,
            contract: contract.to_string(),
            party: party.clone(),
            onchain,
        });
    }

    fn consents(&self, channel: usize, bs: &Behaviors) -> (bool, bool) {
        let t = self.world.now();
        let (a, b) = &self.channels[channel].parties;
        (behavior(bs, a).online(t), behavior(bs, b).online(t))
    }

    fn apply(&mut self, channel: usize, upd: &ChannelUpdate, bs: &Behaviors) -> Result<(), LightningError> {
        let next = update_channel(&self.channels[channel], upd, self.consents(channel, bs))?;
        self.channels[channel] = next;
        Ok(())
    }

    /// Adds a contract funded from the payer's balance.
    fn install(&mut self, channel: usize, id: &str, c: ChannelContract, bs: &Behaviors) -> Result<(), LightningError> {
        let ch = &self.channels[channel];
        let balances = credit(ch, &c.payer, c.amount(), false)
            .ok_or_else(|| LightningError::InsufficientCapacity {
                channel,
                party: c.payer.clone(),
                needs: c.amount(),
                has: ch.balance(&c.payer),
            })?;
        let upd = ChannelUpdate { balances, remove: vec![], add: vec![(id.to_string(), c)] };
        self.apply(channel, &upd, bs)
    }

    /// Settles a live contract to its payee (`claim`) or back to its payer,
    /// in-channel if the counterparty is online, otherwise by closing first.
    fn settle_contract(&mut self, channel: usize, id: &str, claim: bool, bs: &Behaviors) -> Result<(), LightningError> {
        let t = self.world.now();
        let c = self.channels[channel].contracts.get(id).cloned().ok_or_else(|| LightningError::UnknownContract(id.into()))?;
        let actor = if claim { c.payee.clone() } else { c.payer.clone() };
        let kind = if claim { LnEventKind::Claim } else { LnEventKind::Refund };
        if self.channels[channel].is_open() {
            let (a, b) = self.consents(channel, bs);
            if a && b {
                let ch = &self.channels[channel];
                let balances = credit(ch, &actor, c.amount(), true).expect("party is on the channel");
                let upd = ChannelUpdate { balances, remove: vec![id.to_string()], add: vec![] };
                self.apply(channel, &upd, bs)?;
                if claim {
                    self.learn(&c.payer, c.hash, t);
                }
                self.record(kind, channel, id, &actor, false);
                return Ok(());
            }
            self.close(channel, &actor)?;
        }
        let op = self.onchain[&(channel, id.to_string())];
        let mut tx = Transaction::new(vec![op], vec![Output::to_party(c.amount(), &actor)], t);
        let sig = sign(&actor, &tx, SigMode::CommitAll, 0)?;
        tx.inputs[0].witness.signatures.insert(sig);
        if claim {
            tx.inputs[0].witness.preimages.insert(self.secrets[&c.hash]);
        }
        self.world.publish(&self.channels[channel].chain, tx)?;
        self.channels[channel].contracts.remove(id);
        if claim {
            self.public.entry(c.hash).or_insert(t);
        }
        self.record(kind, channel, id, &actor, true);
        Ok(())
    }

    /// One timestep: refunds, then exercises, then relayed claims.
    fn step(&mut self, bs: &Behaviors) -> Result<(), LightningError> {
        let t = self.world.now();
        for (ch, id) in self.live_contracts() {
            let c = &self.channels[ch].contracts[&id];
            if c.expiry <= t && behavior(bs, &c.payer).acts(t) {
                self.settle_contract(ch, &id, false, bs)?;
            }
        }
        for i in 0..self.positions.len() {
            let pos = &self.positions[i];
            if pos.status != PositionStatus::Open || pos.hops.is_empty() {
                continue;
            }
            let b = behavior(bs, &pos.holder);
            let triggered = pos.linked.is_some_and(|l| {
                let short = &self.positions[l];
                short.status == PositionStatus::Open
                    && self.exercised_at(short).is_some_and(|at| at + 1 + b.relay_delay <= t)
            });
            let knows = self.learned_at(&pos.holder, &pos.hash).is_some_and(|at| at <= t);
            if b.acts(t) && knows && (b.exercise_at == Some(t) || triggered) {
                let first = pos.hops[0].clone();
                if self.channels[first.channel].contracts.contains_key(&first.contract) {
                    self.settle_contract(first.channel, &first.contract, true, bs)?;
                }
            }
        }
        for (ch, id) in self.live_contracts() {
            let Some(c) = self.channels[ch].contracts.get(&id) else { continue };
            let b = behavior(bs, &c.payee);
            let own = self.origin.get(&c.hash) == Some(&c.payee);
            let ready = self.learned_at(&c.payee, &c.hash).is_some_and(|at| at + 1 + b.relay_delay <= t);
            if b.acts(t) && ready && !own {
                self.settle_contract(ch, &id, true, bs)?;
            }
        }
        Ok(())
    }
}

/// Channel balances after `party` gains `amount` (`gain`) or pays it into a
/// contract.
fn credit(ch: &Channel, party: &PartyId, amount: Amount, gain: bool) -> Option<(Amount, Amount)> {
    let mut b = [ch.balances.0, ch.balances.1];
    let s = ch.side(party)?;
    b[s] = if gain { b[s] + amount } else { b[s].checked_sub(amount)? };
    Some((b[0], b[1]))
}

/// Runs every timestep from now through `until`.
pub fn settle(net: &mut Network, bs: &BTreeMap<PartyId, Behavior>, until: TimePoint) -> Result<(), LightningError> {
    let mut t = net.world.now();
    while t <= until {
        net.world.advance_to(t);
        net.step(bs)?;
        t += 1;
    }
    Ok(())
}

/// Installs a swaption between `path_a`'s first node (the holder) and its
/// last node (the writer). `path_b` must run the other way on the other
/// chain. Without `hash` the holder draws a fresh secret.
///
/// Setup goes ACoin leg, BCoin leg, then premium, each hop sender-first. A
/// hop whose parties are not both online stops setup; what was installed
/// refunds at its expiry.
pub fn route_swaption(
    net: &mut Network,
    path_a: &Path,
    path_b: &Path,
    terms: &RouteTerms,
    hash: Option<Hash>,
    bs: &BTreeMap<PartyId, Behavior>,
) -> Result<usize, LightningError> {
    let holder = path_a.nodes[0].clone();
    let writer = path_a.nodes[path_a.nodes.len() - 1].clone();
    if path_b.nodes.first() != Some(&writer) || path_b.nodes.last() != Some(&holder) {
        return Err(LightningError::BadPath("legs must join the same holder and writer".into()));
    }
    if path_a.chain == path_b.chain || holder == writer {
        return Err(LightningError::BadPath("legs must be on different chains between distinct parties".into()));
    }
    if terms.p_a == Amount::ZERO || terms.p_b == Amount::ZERO {
        return Err(LightningError::BadPath("principals must be positive".into()));
    }
    let now = net.world.now();
    if terms.expiry <= now {
        return Err(LightningError::BadPath(format!("expiry {} is not after {now}", terms.expiry)));
    }
    let (na, nb) = (path_a.channels.len(), path_b.channels.len());

    let mut needs: BTreeMap<(usize, PartyId), Amount> = BTreeMap::new();
    let legs = (0..na)
        .map(|j| (path_a.channels[j], &path_a.nodes[j], terms.leg_amount(terms.p_a, na, j) + terms.leg_amount(terms.premium, na, j)))
        .chain((0..nb).map(|j| (path_b.channels[j], &path_b.nodes[j], terms.leg_amount(terms.p_b, nb, j))));
    for (channel, payer, amount) in legs {
        let e = needs.entry((channel, payer.clone())).or_default();
        *e = *e + amount;
    }
    for ((channel, party), need) in &needs {
        let ch = &net.channels[*channel];
        if !ch.is_open() {
            return Err(LightningError::ChannelClosed(*channel));
        }
        if ch.balance(party) < *need {
            return Err(LightningError::InsufficientCapacity {
                channel: *channel,
                party: party.clone(),
                needs: *need,
                has: ch.balance(party),
            });
        }
    }

    let id = net.positions.len();
    let hash = match hash {
        Some(h) => h,
        None => net.new_secret(&holder),
    };
    let mut hops = Vec::new();
    for j in (0..nb).rev() {
        hops.push((path_b.chain.clone(), path_b.channels[j], path_b.nodes[j].clone(), path_b.nodes[j + 1].clone(), terms.leg_amount(terms.p_b, nb, j)));
    }
    for j in (0..na).rev() {
        hops.push((path_a.chain.clone(), path_a.channels[j], path_a.nodes[j].clone(), path_a.nodes[j + 1].clone(), terms.leg_amount(terms.p_a, na, j)));
    }
    let hops: Vec<RoutedHop> = hops
        .into_iter()
        .enumerate()
        .map(|(k, (chain, channel, payer, payee, amount))| RoutedHop {
            chain,
            channel,
            payer,
            payee,
            amount,
            expiry: terms.expiry + k as u64,
            contract: format!("p{id}.{k}"),
        })
        .collect();
    net.positions.push(RoutedPosition {
        id,
        holder,
        writer,
        hash,
        terms: terms.clone(),
        hops: hops.clone(),
        b_hops: nb,
        linked: None,
        status: PositionStatus::Open,
    });

    // ACoin hops sit at the tail in reverse, BCoin hops at the head in reverse.
    let order: Vec<usize> = (0..na).map(|j| nb + na - 1 - j).chain((0..nb).map(|j| nb - 1 - j)).collect();
    for (installed, k) in order.into_iter().enumerate() {
        let h = &hops[k];
        let mut c = ChannelContract::htlc(&h.payer, &h.payee, h.amount, hash, h.expiry)?;
        c.position = Some(id);
        match net.install(h.channel, &h.contract, c, bs) {
            Ok(()) => net.record(LnEventKind::Install, h.channel, &h.contract, &h.payer, false),
            Err(LightningError::NoConsent(p)) => {
                net.positions[id].status = PositionStatus::Broken { installed };
                net.record(LnEventKind::Break, h.channel, &h.contract, &p, false);
                return Ok(id);
            }
            Err(e) => return Err(e),
        }
    }
    for j in 0..na {
        let amount = terms.leg_amount(terms.premium, na, j);
        if amount == Amount::ZERO {
            continue;
        }
        let (channel, payer) = (path_a.channels[j], &path_a.nodes[j]);
        let ch = &net.channels[channel];
        let mut b = [ch.balances.0, ch.balances.1];
        let s = ch.side(payer).expect("path node on channel");
        b[s] = b[s] - amount;
        b[1 - s] = b[1 - s] + amount;
        let upd = ChannelUpdate { balances: (b[0], b[1]), remove: vec![], add: vec![] };
        match net.apply(channel, &upd, bs) {
            Ok(()) => net.record(LnEventKind::Premium, channel, "", payer, false),
            Err(LightningError::NoConsent(p)) => {
                net.record(LnEventKind::Break, channel, "premium", &p, false);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(id)
}

/// Splits a routed position at `node` into a short position against the
/// holder (same secret) and a long position against the writer under the
/// node's own secret. Every touched contract is reissued cooperatively.
pub fn decouple(
    net: &mut Network,
    position: usize,
    node: &PartyId,
    bs: &BTreeMap<PartyId, Behavior>,
) -> Result<(usize, usize), LightningError> {
    let pos = net.positions.get(position).cloned().ok_or(LightningError::PositionNotOpen(position))?;
    if pos.status != PositionStatus::Open {
        return Err(LightningError::PositionNotOpen(position));
    }
    let nb = pos.b_hops;
    let i = pos.hops[..nb].iter().position(|h| &h.payer == node);
    let j = pos.hops[nb..].iter().position(|h| &h.payer == node);
    let (Some(i), Some(j)) = (i, j) else {
        return Err(LightningError::NotIntermediary(node.clone()));
    };
    if node == &pos.holder || node == &pos.writer {
        return Err(LightningError::NotIntermediary(node.clone()));
    }
    for h in &pos.hops {
        let ch = &net.channels[h.channel];
        if !ch.is_open() || !ch.contracts.contains_key(&h.contract) {
            return Err(LightningError::PositionNotOpen(position));
        }
        let (a, b) = net.consents(h.channel, bs);
        if !(a && b) {
            let who = if a { &ch.parties.1 } else { &ch.parties.0 };
            return Err(LightningError::NoConsent(who.clone()));
        }
    }

    let short: Vec<RoutedHop> = pos.hops[..=i].iter().chain(&pos.hops[nb + j + 1..]).cloned().collect();
    let long: Vec<RoutedHop> = pos.hops[i + 1..nb].iter().chain(&pos.hops[nb..=nb + j]).cloned().collect();
    let e_short = pos.terms.expiry;
    let e_long = pos.terms.expiry + (i + 1) as u64;
    let own = net.new_secret(node);

    net.positions[position].status = PositionStatus::Replaced;
    let mut ids = Vec::new();
    for (hops, holder, writer, hash, expiry, b_hops) in [
        (short, pos.holder.clone(), node.clone(), pos.hash, e_short, i + 1),
        (long, node.clone(), pos.writer.clone(), own, e_long, nb - i - 1),
    ] {
        let id = net.positions.len();
        let mut reissued = Vec::new();
        for (k, o) in hops.into_iter().enumerate() {
            let n = RoutedHop { expiry: expiry + k as u64, contract: format!("p{id}.{k}"), ..o.clone() };
            let mut c = ChannelContract::htlc(&n.payer, &n.payee, n.amount, hash, n.expiry)?;
            c.position = Some(id);
            let ch = &net.channels[n.channel];
            let upd = ChannelUpdate { balances: ch.balances, remove: vec![o.contract], add: vec![(n.contract.clone(), c)] };
            net.apply(n.channel, &upd, bs)?;
            net.record(LnEventKind::Reissue, n.channel, &n.contract, node, false);
            reissued.push(n);
        }
        let hops = reissued;
        let terms = RouteTerms { expiry, ..pos.terms.clone() };
        let linked = if ids.is_empty() { None } else { Some(ids[0]) };
        net.positions.push(RoutedPosition { id, holder, writer, hash, terms, hops, b_hops, linked, status: PositionStatus::Open });
        ids.push(id);
    }
    Ok((ids[0], ids[1]))
}

/// Cancels two identical opposite single-hop positions between the same
/// parties under the same secret, the outer one expiring one step later.
/// Each side gets back what it locked, so net holdings do not move.
pub fn unwind(
    net: &mut Network,
    p: usize,
    q: usize,
    bs: &BTreeMap<PartyId, Behavior>,
) -> Result<Vec<LnEvent>, LightningError> {
    for id in [p, q] {
        if net.positions.get(id).map(|x| x.status) != Some(PositionStatus::Open) {
            return Err(LightningError::PositionNotOpen(id));
        }
    }
    let (a, b) = (net.positions[p].clone(), net.positions[q].clone());
    let (inner, outer) = if a.terms.expiry <= b.terms.expiry { (a, b) } else { (b, a) };
    let refuse = |why: &str| Err(LightningError::NotOffsetting(why.into()));
    if inner.hops.len() != 2 || outer.hops.len() != 2 || inner.b_hops != 1 || outer.b_hops != 1 {
        return refuse("positions must be direct");
    }
    if inner.holder != outer.writer || inner.writer != outer.holder {
        return refuse("roles are not opposite");
    }
    if inner.hash != outer.hash {
        return refuse("secrets differ");
    }
    if inner.terms.p_a != outer.terms.p_a || inner.terms.p_b != outer.terms.p_b || inner.terms.premium != outer.terms.premium {
        return refuse("terms differ");
    }
    for (x, y) in inner.hops.iter().zip(&outer.hops) {
        if x.channel != y.channel || x.amount != y.amount {
            return refuse("hops differ");
        }
        if y.expiry != x.expiry + 1 {
            return refuse("outer position must expire one step after the inner");
        }
    }
    let start = net.log.len();
    for k in 0..2 {
        let channel = inner.hops[k].channel;
        for h in [&inner.hops[k], &outer.hops[k]] {
            if !net.channels[channel].contracts.contains_key(&h.contract) {
                return Err(LightningError::PositionNotOpen(inner.id));
            }
        }
        let (x, y) = net.channels[channel].balances;
        let amount = inner.hops[k].amount;
        let upd = ChannelUpdate {
            balances: (x + amount, y + amount),
            remove: vec![inner.hops[k].contract.clone(), outer.hops[k].contract.clone()],
            add: vec![],
        };
        net.apply(channel, &upd, bs)?;
        net.record(LnEventKind::Unwind, channel, &inner.hops[k].contract, &inner.holder, false);
        net.record(LnEventKind::Unwind, channel, &outer.hops[k].contract, &outer.holder, false);
    }
    net.positions[inner.id].status = PositionStatus::Unwound;
    net.positions[outer.id].status = PositionStatus::Unwound;
    Ok(net.log[start..].to_vec())
}
