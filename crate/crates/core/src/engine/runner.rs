use std::collections::{BTreeMap, BTreeSet};

use super::{Action, EngineError, Event, Outcome, Policy, Protocol, Strategy, Trace};
use crate::chainsim::{Amount, ChainId, PartyId, Predicate, TimePoint, Transaction, World};
use crate::econ::Price;

/// Picks among `n` adversary options; option 0 is always `Wait`.
pub trait Chooser {
    fn choose(&mut self, n: usize) -> usize;
}

/// Always waits.
pub struct FirstChoice;

impl Chooser for FirstChoice {
    fn choose(&mut self, _n: usize) -> usize {
        0
    }
}

/// Replays a choice prefix, then takes option 0, recording the arity of
/// every decision so a depth-first driver can find the next sibling.
#[derive(Debug, Default)]
pub struct ScriptedChooser {
    pub prefix: Vec<usize>,
    pub taken: Vec<(usize, usize)>,
}

impl ScriptedChooser {
    pub fn new(prefix: Vec<usize>) -> ScriptedChooser {
        ScriptedChooser { prefix, taken: Vec::new() }
    }

    /// The next prefix in depth-first order, or `None` when exhausted.
    pub fn next_prefix(&self) -> Option<Vec<usize>> {
        let mut path: Vec<(usize, usize)> = self.taken.clone();
        while let Some((c, n)) = path.pop() {
            if c + 1 < n {
                let mut p: Vec<usize> = path.iter().map(|(c, _)| *c).collect();
                p.push(c + 1);
                return Some(p);
            }
        }
        None
    }
}

impl Chooser for ScriptedChooser {
    fn choose(&mut self, n: usize) -> usize {
        let i = self.taken.len();
        let c = self.prefix.get(i).copied().unwrap_or(0).min(n - 1);
        self.taken.push((c, n));
        c
    }
}

const MAX_ROUNDS: usize = 16;

struct Run<'a> {
    proto: &'a Protocol,
    chooser: &'a mut dyn Chooser,
    strategies: &'a BTreeMap<PartyId, Strategy>,
    published: Vec<bool>,
    first_seen: Vec<Option<TimePoint>>,
    /// Time at which an adversary last waited on each move.
    declined: Vec<Option<TimePoint>>,
    decisions: usize,
    depth: usize,
    trace: Trace,
}

/// Runs `proto` on `world` until its horizon.
///
/// Parties without an entry in `strategies` stay silent. Adversary decisions
/// beyond `depth` resolve to `Wait`.
pub fn run(
    world: &mut World,
    proto: &Protocol,
    strategies: &BTreeMap<PartyId, Strategy>,
    chooser: &mut dyn Chooser,
    depth: usize,
) -> Trace {
    let initial = Outcome::capture(world, &proto.parties, BTreeMap::new()).balances;
    let mut r = Run {
        proto,
        chooser,
        strategies,
        published: vec![false; proto.moves.len()],
        first_seen: vec![None; proto.moves.len()],
        declined: vec![None; proto.moves.len()],
        decisions: 0,
        depth,
        trace: Trace { protocol: proto.name.clone(), ..Trace::default() },
    };
    let boundary_times = proto.boundary_times();
    let chains = world.chain_ids();
    let start = world.now();
    let horizon = proto.horizon.max(start);
    let delays = relative_delays(proto);
    // feasibility only changes at these times or just after a publish
    let mut wake: BTreeSet<TimePoint> = boundary_times.iter().copied().filter(|t| *t > start).collect();
    for s in strategies.values() {
        match s {
            Strategy::Policy(p) => wake.extend(p.not_before.values().copied()),
            Strategy::Rational { policy, prices } => {
                wake.extend(policy.not_before.values().copied());
                wake.extend(prices.points().iter().map(|(t, _)| *t));
            }
            Strategy::Adversary => {}
        }
    }
    wake.insert(horizon);
    let mut t = start;
    loop {
        world.advance_to(t);
        let mut any = false;
        for _round in 0..MAX_ROUNDS {
            let mut progressed = false;
            for chain in &chains {
                for party in &proto.parties {
                    progressed |= r.decide(world, chain, party, &boundary_times);
                }
            }
            any |= progressed;
            if !progressed {
                break;
            }
        }
        if any {
            wake.insert(t + 1);
            wake.extend(delays.iter().map(|d| t + d));
        }
        if t >= horizon {
            break;
        }
        match wake.range(t + 1..=horizon).next() {
            Some(next) => t = *next,
            None => break,
        }
    }
    r.finish(world, initial)
}

impl Run<'_> {
    fn feasible(&self, world: &World, i: usize) -> Option<Transaction> {
        if self.published[i] {
            return None;
        }
        let m = &self.proto.moves[i];
        let mut tx = m.tx.clone();
        if !m.secrets.is_empty() {
            let public = world.known_secrets();
            let own = self.proto.knowledge.get(&m.party);
            for h in &m.secrets {
                let s = own.and_then(|k| k.get(h)).or_else(|| public.get(h))?;
                for input in &mut tx.inputs {
                    input.witness.preimages.insert(*s);
                }
            }
        }
        world.validate(&m.chain, &tx).ok().map(|_| tx)
    }

    fn candidates(&mut self, world: &World, chain: &ChainId, party: &PartyId) -> Vec<(usize, Transaction)> {
        let now = world.now();
        let mut out = Vec::new();
        for (i, m) in self.proto.moves.iter().enumerate() {
            if &m.chain != chain || &m.party != party {
                continue;
            }
            if let Some(tx) = self.feasible(world, i) {
                self.first_seen[i].get_or_insert(now);
                out.push((i, tx));
            }
        }
        out
    }

    fn honest_ok(&self, world: &World, policy: &Policy, i: usize) -> bool {
        let m = &self.proto.moves[i];
        let now = world.now();
        if !policy.enables(m.action) || now < policy.earliest(m.action) {
            return false;
        }
        if policy.reckless {
            return true;
        }
        if m.deadline.is_some_and(|d| now >= d) {
            return false;
        }
        m.after.iter().all(|(c, txid)| world.chain(c).map(|cs| cs.is_confirmed(txid)).unwrap_or(false))
    }

    /// One decision point; returns whether anything was published.
    fn decide(
        &mut self,
        world: &mut World,
        chain: &ChainId,
        party: &PartyId,
        boundary_times: &BTreeSet<TimePoint>,
    ) -> bool {
        let Some(strategy) = self.strategies.get(party) else {
            return false;
        };
        let mut progressed = false;
        loop {
            let cands = self.candidates(world, chain, party);
            if cands.is_empty() {
                break;
            }
            let pick = match strategy {
                Strategy::Policy(p) => cands.into_iter().find(|(i, _)| self.honest_ok(world, p, *i)),
                Strategy::Rational { policy, prices } => {
                    let r = prices.at(world.now());
                    cands
                        .into_iter()
                        .find(|(i, _)| self.honest_ok(world, policy, *i) && self.rational_ok(*i, r))
                }
                Strategy::Adversary => {
                    let now = world.now();
                    let options: Vec<(usize, Transaction)> = cands
                        .into_iter()
                        .filter(|(i, _)| self.first_seen[*i] == Some(now) || boundary_times.contains(&now))
                        .filter(|(i, _)| self.declined[*i] != Some(now))
                        .collect();
                    if options.is_empty() || self.decisions >= self.depth {
                        None
                    } else {
                        self.decisions += 1;
                        let c = self.trace_choice(options.len() + 1);
                        if c == 0 {
                            for (i, _) in &options {
                                self.declined[*i] = Some(now);
                            }
                            self.trace.events.push(Event {
                                time: now,
                                chain: chain.clone(),
                                party: party.clone(),
                                action: Action::Wait,
                                label: "wait".into(),
                                txid: None,
                                amounts: Vec::new(),
                            });
                            None
                        } else {
                            options.into_iter().nth(c - 1)
                        }
                    }
                }
            };
            let Some((i, tx)) = pick else { break };
            self.publish(world, i, tx);
            progressed = true;
        }
        progressed
    }

    fn trace_choice(&mut self, n: usize) -> usize {
        let c = self.chooser.choose(n);
        self.trace.choices.push(c);
        c
    }

    /// Price-aware filter: exercise only in the money, honor a principal
    /// deposit only when defaulting is not strictly cheaper.
    fn rational_ok(&self, i: usize, r: Price) -> bool {
        let m = &self.proto.moves[i];
        let Some(leg) = &m.leg else { return true };
        match m.action {
            Action::Exercise => leg.exercise_gain(r) > Price::from_integer(0),
            Action::DepositPrincipal if m.party == leg.writer => leg.writer_honors(r),
            _ => true,
        }
    }

    fn publish(&mut self, world: &mut World, i: usize, tx: Transaction) {
        let m = &self.proto.moves[i];
        let txid = world.publish(&m.chain, tx.clone()).expect("validated move publishes");
        self.published[i] = true;
        let now = world.now();
        self.trace.events.push(Event {
            time: now,
            chain: m.chain.clone(),
            party: m.party.clone(),
            action: m.action,
            label: m.label.clone(),
            txid: Some(txid),
            amounts: tx.outputs.iter().map(|o| o.amount).collect(),
        });
        self.trace.published.push((now, m.chain.clone(), tx));
    }

    fn finish(mut self, world: &World, initial: BTreeMap<(PartyId, ChainId), Amount>) -> Trace {
        let mut outcome = Outcome::capture(world, &self.proto.parties, initial);
        fill(&mut outcome, self.proto, &self.trace);
        self.trace.outcome = outcome;
        self.trace
    }
}

fn relative_delays(proto: &Protocol) -> BTreeSet<TimePoint> {
    fn walk(p: &Predicate, out: &mut BTreeSet<TimePoint>) {
        match p {
            Predicate::RelTime(d) => {
                out.insert(*d);
            }
            Predicate::All(v) | Predicate::Any(v) => v.iter().for_each(|c| walk(c, out)),
            _ => {}
        }
    }
    let mut out = BTreeSet::new();
    for m in &proto.moves {
        for o in &m.tx.outputs {
            walk(&o.predicate, &mut out);
        }
    }
    out
}

fn fill(outcome: &mut Outcome, proto: &Protocol, trace: &Trace) {
    outcome.dispositions = trace.published_labels().into_iter().map(String::from).collect();
    outcome.taken = trace.events.iter().filter(|e| e.txid.is_some()).map(|e| (e.label.clone(), e.time)).collect();
    outcome.revealed = revealed(proto, &trace.published);
}

fn revealed(proto: &Protocol, published: &[(TimePoint, ChainId, Transaction)]) -> BTreeMap<String, TimePoint> {
    let mut out = BTreeMap::new();
    for (t, _, tx) in published {
        for s in tx.revealed() {
            if let Some(name) = proto.secret_names.get(&crate::chainsim::hash_secret(s)) {
                out.entry(name.clone()).or_insert(*t);
            }
        }
    }
    out
}

/// Re-publishes a trace's transactions on a fresh copy of the starting world
/// and recomputes the outcome.
pub fn replay(world: &mut World, proto: &Protocol, trace: &Trace) -> Result<Outcome, EngineError> {
    let initial = Outcome::capture(world, &proto.parties, BTreeMap::new()).balances;
    for (t, chain, tx) in &trace.published {
        world.advance_to(*t);
        world.publish(chain, tx.clone())?;
    }
    world.advance_to(proto.horizon);
    let mut outcome = Outcome::capture(world, &proto.parties, initial);
    fill(&mut outcome, proto, trace);
    Ok(outcome)
}
