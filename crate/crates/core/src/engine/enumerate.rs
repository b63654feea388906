//! Exhaustive adversary enumeration and safety checking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::protocols::{build_future, build_htlc_payment, build_swap, build_swaption, BuildOptions, Mutation};
use super::runner::{run, ScriptedChooser};
use super::{Action, EngineError, FutureTerms, Outcome, Policy, Protocol, Strategy, SwapTerms, SwaptionTerms};
use crate::chainsim::{Amount, ChainId, PartyId, TimePoint, World};
use crate::econ::{Price, PricePath};

/// Upper bound on runs per enumeration.
pub const MAX_LEAVES: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProtocolKind {
    Htlc { chain: ChainId, payer: PartyId, payee: PartyId, amount: Amount, expiry: TimePoint },
    Swap(SwapTerms),
    Swaption(SwaptionTerms),
    Future(FutureTerms),
}

/// Everything needed to rebuild a protocol on a fresh world.
#[derive(Clone, Debug)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub wallets: Vec<(ChainId, PartyId, Amount)>,
    pub opts: BuildOptions,
    /// Price seen by `Rational` parties.
    pub prices: Option<PricePath>,
}

impl ProtocolSpec {
    /// Wallets holding exactly what the protocol consumes, plus external
    /// principal for margined variants.
    pub fn new(kind: ProtocolKind) -> ProtocolSpec {
        let wallets = match &kind {
            ProtocolKind::Htlc { chain, payer, amount, .. } => vec![(chain.clone(), payer.clone(), *amount)],
            ProtocolKind::Swap(t) => {
                vec![(t.a_chain.clone(), t.alice.clone(), t.a_amount), (t.b_chain.clone(), t.bob.clone(), t.b_amount)]
            }
            ProtocolKind::Swaption(t) => {
                vec![(t.a_chain.clone(), t.alice.clone(), t.premium + t.p_a), (t.b_chain.clone(), t.bob.clone(), t.p_b)]
            }
            ProtocolKind::Future(f) => {
                let t = &f.swaption;
                vec![
                    (t.a_chain.clone(), t.alice.clone(), t.premium + t.p_a + t.p_a),
                    (t.b_chain.clone(), t.bob.clone(), t.premium + t.p_b + t.p_b),
                ]
            }
        };
        ProtocolSpec { kind, wallets, opts: BuildOptions::default(), prices: None }
    }

    pub fn with_mutation(mut self, m: Mutation) -> ProtocolSpec {
        self.opts.mutation = m;
        self
    }

    pub fn chains(&self) -> Vec<ChainId> {
        match &self.kind {
            ProtocolKind::Htlc { chain, .. } => vec![chain.clone()],
            ProtocolKind::Swap(t) => vec![t.a_chain.clone(), t.b_chain.clone()],
            ProtocolKind::Swaption(t) => vec![t.a_chain.clone(), t.b_chain.clone()],
            ProtocolKind::Future(f) => vec![f.swaption.a_chain.clone(), f.swaption.b_chain.clone()],
        }
    }

    pub fn parties(&self) -> Vec<PartyId> {
        let mut v = match &self.kind {
            ProtocolKind::Htlc { payer, payee, .. } => vec![payer.clone(), payee.clone()],
            ProtocolKind::Swap(t) => vec![t.alice.clone(), t.bob.clone()],
            ProtocolKind::Swaption(t) => vec![t.alice.clone(), t.bob.clone()],
            ProtocolKind::Future(f) => vec![f.swaption.alice.clone(), f.swaption.bob.clone()],
        };
        v.sort();
        v
    }

    pub fn instantiate(&self) -> Result<(World, Protocol), EngineError> {
        let mut world = World::with_wallets(&self.chains(), &self.wallets);
        let proto = match &self.kind {
            ProtocolKind::Htlc { chain, payer, payee, amount, expiry } => {
                build_htlc_payment(&mut world, chain, payer, payee, *amount, *expiry, &self.opts)?
            }
            ProtocolKind::Swap(t) => build_swap(&mut world, t, &self.opts)?,
            ProtocolKind::Swaption(t) => build_swaption(&mut world, t, &self.opts)?,
            ProtocolKind::Future(f) => build_future(&mut world, f, &self.opts)?,
        };
        let missing = proto.setup.missing();
        if !missing.is_empty() {
            return Err(EngineError::MissingPreSignatures(missing));
        }
        Ok((world, proto))
    }

    /// Protocol-following behaviors of `party`, each a distinct decision
    /// (accept or renege, exercise or let expire, and so on).
    pub fn honest_variants(&self, party: &PartyId) -> Vec<Policy> {
        use Action::*;
        let intents: Vec<Policy> = match &self.kind {
            ProtocolKind::Htlc { payer, .. } => {
                if party == payer {
                    vec![Policy::honest(&[Fund]), Policy::honest(&[])]
                } else {
                    vec![Policy::honest(&[Accept]), Policy::honest(&[])]
                }
            }
            ProtocolKind::Swap(t) => {
                if *party == t.alice {
                    vec![Policy::honest(&[Fund, Accept]), Policy::honest(&[Fund]), Policy::honest(&[])]
                } else {
                    vec![Policy::honest(&[Fund]), Policy::honest(&[])]
                }
            }
            ProtocolKind::Swaption(t) => {
                if *party == t.alice {
                    let mut v = if t.margined {
                        vec![
                            Policy::honest(&[Fund, Accept, DepositPrincipal, Exercise]),
                            Policy::honest(&[Fund, Accept, DepositPrincipal]),
                        ]
                    } else {
                        vec![Policy::honest(&[Fund, Accept, Exercise]), Policy::honest(&[Fund, Accept])]
                    };
                    if t.cancellable {
                        v[1] = Policy::honest(&[Fund, Accept]).at(Cancel, t.e);
                        v.push(Policy::honest(&[Fund, Accept, Cancel]));
                    }
                    v.push(Policy::honest(&[Fund]));
                    v.push(Policy::honest(&[]));
                    v
                } else if t.margined {
                    vec![Policy::honest(&[Fund, DepositPrincipal]), Policy::honest(&[])]
                } else {
                    vec![Policy::honest(&[Fund]), Policy::honest(&[])]
                }
            }
            ProtocolKind::Future(_) => {
                vec![Policy::honest(&[Fund, Accept, DepositPrincipal, Exercise]), Policy::honest(&[])]
            }
        };
        intents
    }

    fn strategy(&self, policy: Policy) -> Strategy {
        match &self.prices {
            Some(p) => Strategy::Rational { policy, prices: p.clone() },
            None => Strategy::Policy(policy),
        }
    }

    /// Safety floors for each party, over `chains()` order.
    pub fn guarantees(&self) -> Vec<Guarantee> {
        let b = |a: Amount| a.0 as i128;
        let chains = self.chains();
        let g = |party: &PartyId, floors: Vec<Vec<i128>>| Guarantee {
            party: party.clone(),
            chains: chains.clone(),
            floors,
            when_revealed: Vec::new(),
            unless_taken: Vec::new(),
        };
        match &self.kind {
            ProtocolKind::Htlc { payer, payee, amount, .. } => {
                vec![g(payer, vec![vec![-b(*amount)]]), g(payee, vec![vec![0]])]
            }
            ProtocolKind::Swap(t) => vec![
                g(&t.alice, vec![vec![0, 0], vec![-b(t.a_amount), b(t.b_amount)]]),
                g(&t.bob, vec![vec![0, 0], vec![b(t.a_amount), -b(t.b_amount)]]),
            ],
            ProtocolKind::Swaption(t) => {
                let prem = b(t.premium);
                let alice = g(&t.alice, vec![vec![0, 0], vec![-prem, 0], vec![-prem - b(t.p_a), b(t.p_b)]]);
                let mut bob_floors = vec![vec![0, 0], vec![prem, 0], vec![prem + b(t.p_a), -b(t.p_b)]];
                if t.margined {
                    bob_floors.push(vec![prem + b(t.m_a), -b(t.m_b)]);
                }
                let mut v = vec![alice, g(&t.bob, bob_floors)];
                if t.cancellable {
                    v.push(Guarantee {
                        when_revealed: vec!["A2".into(), "A3".into()],
                        unless_taken: vec!["exercise.delivery".into(), "cancel.delivery".into()],
                        ..g(&t.bob, vec![vec![prem + b(t.p_a), 0]])
                    });
                }
                v
            }
            ProtocolKind::Future(_) => Vec::new(),
        }
    }
}

/// One enumerated run.
#[derive(Clone, Debug)]
pub struct Enumerated {
    pub outcome: Outcome,
    /// Adversary choice indices that generate this run.
    pub choices: Vec<usize>,
    /// Policy of each honest party.
    pub honest: BTreeMap<PartyId, Policy>,
}

/// Runs every adversary choice sequence against every combination of honest
/// variants. Parties outside `honest` are adversaries.
pub fn enumerate_strategies(
    spec: &ProtocolSpec,
    honest: &BTreeSet<PartyId>,
    depth: usize,
) -> Result<Vec<Enumerated>, EngineError> {
    let (world, proto) = spec.instantiate()?;
    let parties = spec.parties();
    for h in honest {
        if !parties.contains(h) {
            return Err(EngineError::InvalidTerms(format!("unknown party {h}")));
        }
    }
    let mut profiles: Vec<BTreeMap<PartyId, Policy>> = vec![BTreeMap::new()];
    for h in honest {
        let variants = spec.honest_variants(h);
        profiles = profiles
            .into_iter()
            .flat_map(|p| {
                variants.iter().map(move |v| {
                    let mut p = p.clone();
                    p.insert(h.clone(), v.clone());
                    p
                })
            })
            .collect();
    }
    let mut out = Vec::new();
    for profile in profiles {
        let strategies: BTreeMap<PartyId, Strategy> = parties
            .iter()
            .map(|p| {
                let s = match profile.get(p) {
                    Some(pol) => spec.strategy(pol.clone()),
                    None => Strategy::Adversary,
                };
                (p.clone(), s)
            })
            .collect();
        let mut prefix = Vec::new();
        loop {
            if out.len() >= MAX_LEAVES {
                return Err(EngineError::DepthExceeded(MAX_LEAVES));
            }
            let mut w = world.clone();
            let mut chooser = ScriptedChooser::new(prefix);
            let trace = run(&mut w, &proto, &strategies, &mut chooser, depth);
            out.push(Enumerated { outcome: trace.outcome, choices: trace.choices, honest: profile.clone() });
            match chooser.next_prefix() {
                Some(p) => prefix = p,
                None => break,
            }
        }
    }
    Ok(out)
}

/// Lower bounds on an honest party's per-chain deltas: the party is safe
/// if its delta vector dominates at least one floor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Guarantee {
    pub party: PartyId,
    pub chains: Vec<ChainId>,
    pub floors: Vec<Vec<i128>>,
    /// Applies only when all of these secrets were revealed...
    pub when_revealed: Vec<String>,
    /// ...and none of these moves was taken at or before the last reveal.
    pub unless_taken: Vec<String>,
}

impl Guarantee {
    fn applies(&self, o: &Outcome) -> bool {
        if self.when_revealed.is_empty() {
            return true;
        }
        let mut last = 0;
        for s in &self.when_revealed {
            match o.revealed.get(s) {
                Some(t) => last = last.max(*t),
                None => return false,
            }
        }
        !self.unless_taken.iter().any(|l| o.taken.get(l).is_some_and(|t| *t <= last))
    }

    fn holds(&self, deltas: &[i128]) -> bool {
        self.floors.iter().any(|f| f.iter().zip(deltas).all(|(lo, d)| d >= lo))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub party: PartyId,
    pub deltas: Vec<i128>,
    pub choices: Vec<usize>,
    pub dispositions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SafetyReport {
    pub total: usize,
    pub violations: Vec<Violation>,
}

impl SafetyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for SafetyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} violations over {} outcomes", self.violations.len(), self.total)?;
        for v in self.violations.iter().take(20) {
            let d: Vec<String> = v.deltas.iter().map(|x| crate::chainsim::format_base_units(*x)).collect();
            writeln!(f, "  {} deltas [{}] choices {:?} via {}", v.party, d.join(", "), v.choices, v.dispositions.join(","))?;
        }
        Ok(())
    }
}

/// Checks every guarantee whose party was honest in the run.
pub fn check_safety(outcomes: &[Enumerated], guarantees: &[Guarantee]) -> SafetyReport {
    let mut report = SafetyReport { total: outcomes.len(), violations: Vec::new() };
    for e in outcomes {
        for g in guarantees {
            if !e.honest.contains_key(&g.party) || !g.applies(&e.outcome) {
                continue;
            }
            let deltas: Vec<i128> = g.chains.iter().map(|c| e.outcome.delta(&g.party, c)).collect();
            if !g.holds(&deltas) {
                report.violations.push(Violation {
                    party: g.party.clone(),
                    deltas,
                    choices: e.choices.clone(),
                    dispositions: e.outcome.dispositions.clone(),
                });
            }
        }
    }
    report
}

/// Alice's value at the root of the margined-swaption game, by backward
/// induction over simulated runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameValue {
    /// Alice's equilibrium gain in ACoin base units, premium added back.
    pub alice: Price,
    /// Alice's gain, premium added back, if she deposits / defaults.
    pub alice_honor: Price,
    pub alice_default: Price,
    pub bob_defaults: bool,
    pub exercised: bool,
}

/// Solves the fixed-margin game at constant price `r`: Alice deposits or
/// defaults, then Bob deposits or defaults, then Alice exercises or not.
/// Every leaf is a full protocol run; values are `ΔACoin + r·ΔBCoin`.
/// Ties go to honoring and to not exercising.
pub fn game_value(terms: &SwaptionTerms, r: Price) -> Result<GameValue, EngineError> {
    use Action::*;
    if !terms.margined {
        return Err(EngineError::InvalidTerms("game value needs margined terms".into()));
    }
    let spec = ProtocolSpec::new(ProtocolKind::Swaption(terms.clone()));
    let (world, proto) = spec.instantiate()?;
    let leaf = |alice: &[Action], bob: &[Action]| -> (Price, Price) {
        let strategies: BTreeMap<PartyId, Strategy> = [
            (terms.alice.clone(), Strategy::Policy(Policy::honest(alice))),
            (terms.bob.clone(), Strategy::Policy(Policy::honest(bob))),
        ]
        .into();
        let mut w = world.clone();
        let trace = run(&mut w, &proto, &strategies, &mut super::FirstChoice, 0);
        let v = |p: &PartyId| {
            Price::from_integer(trace.outcome.delta(p, &terms.a_chain))
                + r * Price::from_integer(trace.outcome.delta(p, &terms.b_chain))
        };
        (v(&terms.alice), v(&terms.bob))
    };
    let exercise = leaf(&[Fund, Accept, DepositPrincipal, Exercise], &[Fund, DepositPrincipal]);
    let hold = leaf(&[Fund, Accept, DepositPrincipal], &[Fund, DepositPrincipal]);
    let (exercised, honored) = if exercise.0 > hold.0 { (true, exercise) } else { (false, hold) };
    let bob_default = leaf(&[Fund, Accept, DepositPrincipal], &[Fund]);
    let bob_defaults = bob_default.1 > honored.1;
    let after_deposit = if bob_defaults { bob_default } else { honored };
    let alice_default = leaf(&[Fund, Accept], &[Fund, DepositPrincipal]);
    let prem = Price::from_integer(terms.premium.0 as i128);
    let alice_honor = after_deposit.0 + prem;
    let alice_default = alice_default.0 + prem;
    let alice = if alice_default > alice_honor { alice_default } else { alice_honor };
    Ok(GameValue { alice, alice_honor, alice_default, bob_defaults, exercised: exercised && !bob_defaults })
}
