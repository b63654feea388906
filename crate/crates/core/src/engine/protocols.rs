//! Compilers from contract terms to [`Protocol`]s, and the `run_*` entry
//! points for each protocol.

use std::collections::BTreeMap;

use super::protocol::{reserve, Builder, LegValuation, MoveSpec};
use super::runner::{run, FirstChoice};
use super::{Action, EngineError, Protocol, Strategy, Trace};
use crate::chainsim::{Amount, ChainId, Digest, Hash, OutPoint, PartyId, TimePoint, World};
use crate::contracts::{
    anticheat_predicate, cancellable_holder_contract, cancellable_writer_contract, funding_contract_predicate,
    htlc_predicate, margin_contract_predicate, AntiCheatSpec, HtlcSpec, MarginContractSpec,
};
use crate::econ::PricePath;

/// Deliberate protocol defects used to check that the enumerator catches
/// them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mutation {
    #[default]
    None,
    /// The BCoin HTLC of a swap expires at `T+2`, after the ACoin one.
    SwapExpiryOrder,
    /// Holder's margin expires at `M+1` and the writer's at `M`.
    MarginExpiryOrder,
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    pub seed: u64,
    pub mutation: Mutation,
    /// `(move label, party)` pre-signatures not given during setup.
    pub withheld: Vec<(String, PartyId)>,
}

fn builder(name: &str, opts: &BuildOptions, parties: Vec<PartyId>) -> Builder {
    let mut b = Builder::new(name, opts.seed, parties);
    b.withheld = opts.withheld.iter().cloned().collect();
    b
}

fn required(party: &PartyId, chain: &ChainId, amount: Amount) -> (PartyId, ChainId, Amount, bool) {
    (party.clone(), chain.clone(), amount, true)
}

pub fn build_htlc_payment(
    world: &mut World,
    chain: &ChainId,
    payer: &PartyId,
    payee: &PartyId,
    amount: Amount,
    expiry: TimePoint,
    opts: &BuildOptions,
) -> Result<Protocol, EngineError> {
    let spec = HtlcSpec { payee: payee.clone(), payer: payer.clone(), hash: Hash([0; 32]), expiry };
    spec.validate(world.now())?;
    let res = reserve(world, &[required(payer, chain, amount)])?;
    let mut b = builder("htlc", opts, vec![payer.clone(), payee.clone()]);
    let hash = b.secret(payee, "A");
    let htlc = htlc_predicate(&HtlcSpec { hash, ..spec })?;
    let fund = b.add(MoveSpec::new("htlc.fund", payer, chain, Action::Fund).spend(res[0].unwrap()).pay(amount, htlc));
    let op = OutPoint::new(fund, 0);
    b.add(MoveSpec::new("htlc.claim", payee, chain, Action::Accept).spend(op).to(amount, payee).secret(hash).deadline(expiry));
    b.add(MoveSpec::new("htlc.refund", payer, chain, Action::PublishRefund).spend(op).to(amount, payer).locktime(expiry));
    Ok(b.finish(expiry + 2))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwapTerms {
    pub alice: PartyId,
    pub bob: PartyId,
    pub a_chain: ChainId,
    pub b_chain: ChainId,
    pub a_amount: Amount,
    pub b_amount: Amount,
    pub t: TimePoint,
}

impl SwapTerms {
    pub fn new(a_amount: Amount, b_amount: Amount, t: TimePoint) -> SwapTerms {
        SwapTerms {
            alice: PartyId::new("alice"),
            bob: PartyId::new("bob"),
            a_chain: ChainId::new("ACoin"),
            b_chain: ChainId::new("BCoin"),
            a_amount,
            b_amount,
            t,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.a_amount == Amount::ZERO || self.b_amount == Amount::ZERO {
            return Err(EngineError::InvalidTerms("swap amounts must be positive".into()));
        }
        if self.t < 2 {
            return Err(EngineError::InvalidTerms("T must leave at least 2 timesteps".into()));
        }
        if self.alice == self.bob || self.a_chain == self.b_chain {
            return Err(EngineError::InvalidTerms("swap needs two parties on two chains".into()));
        }
        Ok(())
    }
}

pub fn build_swap(world: &mut World, terms: &SwapTerms, opts: &BuildOptions) -> Result<Protocol, EngineError> {
    terms.validate()?;
    let (alice, bob, ac, bc) = (&terms.alice, &terms.bob, &terms.a_chain, &terms.b_chain);
    let res = reserve(world, &[required(alice, ac, terms.a_amount), required(bob, bc, terms.b_amount)])?;
    let mut b = builder("swap", opts, vec![alice.clone(), bob.clone()]);
    let hash = b.secret(alice, "A");
    let t = terms.t;
    let a_expiry = t + 1;
    let b_expiry = if opts.mutation == Mutation::SwapExpiryOrder { t + 2 } else { t };

    let a_htlc = htlc_predicate(&HtlcSpec { payee: bob.clone(), payer: alice.clone(), hash, expiry: a_expiry })?;
    let b_htlc = htlc_predicate(&HtlcSpec { payee: alice.clone(), payer: bob.clone(), hash, expiry: b_expiry })?;
    let a_fund = b.add(MoveSpec::new("a.fund", alice, ac, Action::Fund).spend(res[0].unwrap()).pay(terms.a_amount, a_htlc));
    let b_fund = b.add(
        MoveSpec::new("b.fund", bob, bc, Action::Fund)
            .spend(res[1].unwrap())
            .pay(terms.b_amount, b_htlc)
            .after(ac, a_fund)
            .deadline(b_expiry),
    );
    let a_op = OutPoint::new(a_fund, 0);
    let b_op = OutPoint::new(b_fund, 0);
    b.add(
        MoveSpec::new("b.claim", alice, bc, Action::Accept)
            .spend(b_op)
            .to(terms.b_amount, alice)
            .secret(hash)
            .deadline(b_expiry),
    );
    b.add(MoveSpec::new("a.claim", bob, ac, Action::Claim).spend(a_op).to(terms.a_amount, bob).secret(hash));
    b.add(MoveSpec::new("b.refund", bob, bc, Action::PublishRefund).spend(b_op).to(terms.b_amount, bob).locktime(b_expiry));
    b.add(MoveSpec::new("a.refund", alice, ac, Action::PublishRefund).spend(a_op).to(terms.a_amount, alice).locktime(a_expiry));
    Ok(b.finish(a_expiry.max(b_expiry) + 2))
}

/// Economic and temporal terms of one swaption. Alice buys the option to
/// swap `p_a` ACoin for Bob's `p_b` BCoin until `e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwaptionTerms {
    pub alice: PartyId,
    pub bob: PartyId,
    pub a_chain: ChainId,
    pub b_chain: ChainId,
    pub premium: Amount,
    pub p_a: Amount,
    pub p_b: Amount,
    pub m_a: Amount,
    pub m_b: Amount,
    /// Funding-swap expiry.
    pub t: TimePoint,
    /// Swaption expiry.
    pub e: TimePoint,
    /// Margin expiry.
    pub m: TimePoint,
    pub cancellable: bool,
    pub margined: bool,
}

impl SwaptionTerms {
    /// Premium 0.1, unit principals, `T = 10`, `E = 100`.
    pub fn example() -> SwaptionTerms {
        SwaptionTerms {
            alice: PartyId::new("alice"),
            bob: PartyId::new("bob"),
            a_chain: ChainId::new("ACoin"),
            b_chain: ChainId::new("BCoin"),
            premium: Amount(100_000),
            p_a: Amount::coins(1),
            p_b: Amount::coins(1),
            m_a: Amount::ZERO,
            m_b: Amount::ZERO,
            t: 10,
            e: 100,
            m: 0,
            cancellable: false,
            margined: false,
        }
    }

    /// The example plus 0.2/0.2 margins with `M = E - 2`.
    pub fn margined_example() -> SwaptionTerms {
        SwaptionTerms {
            m_a: Amount(200_000),
            m_b: Amount(200_000),
            m: 98,
            margined: true,
            ..SwaptionTerms::example()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |s: &str| Err(EngineError::InvalidTerms(s.to_string()));
        if self.p_a == Amount::ZERO || self.p_b == Amount::ZERO {
            return bad("principals must be positive");
        }
        if self.alice == self.bob || self.a_chain == self.b_chain {
            return bad("swaption needs two parties on two chains");
        }
        if self.t < 2 {
            return bad("T must leave at least 2 timesteps");
        }
        if self.e <= self.t + 1 {
            return bad("swaption expiry must follow the funding swap");
        }
        if self.margined {
            if self.cancellable {
                return bad("margined swaptions are not cancellable");
            }
            if self.m >= self.e {
                return bad("margin expiry must precede swaption expiry");
            }
            if self.m <= self.t + 1 {
                return bad("margin expiry must follow the funding swap");
            }
            if self.m_a == Amount::ZERO || self.m_a >= self.p_a || self.m_b == Amount::ZERO || self.m_b >= self.p_b {
                return bad("margins must be positive and below principal");
            }
        }
        Ok(())
    }

    /// `m_a / p_a == m_b / p_b`.
    pub fn equal_ratio(&self) -> bool {
        self.m_a.0 as u128 * self.p_b.0 as u128 == self.m_b.0 as u128 * self.p_a.0 as u128
    }
}

/// Who plays which side of one swaption leg.
#[derive(Clone, Debug)]
struct Roles {
    holder: PartyId,
    writer: PartyId,
    holder_chain: ChainId,
    writer_chain: ChainId,
    p_h: Amount,
    p_w: Amount,
    m_h: Amount,
    m_w: Amount,
    premium: Amount,
    /// Owner of the funding secret; publishes first on the other's chain.
    funding_owner: PartyId,
}

impl Roles {
    fn alice_holds(terms: &SwaptionTerms) -> Roles {
        Roles {
            holder: terms.alice.clone(),
            writer: terms.bob.clone(),
            holder_chain: terms.a_chain.clone(),
            writer_chain: terms.b_chain.clone(),
            p_h: terms.p_a,
            p_w: terms.p_b,
            m_h: terms.m_a,
            m_w: terms.m_b,
            premium: terms.premium,
            funding_owner: terms.alice.clone(),
        }
    }

    fn bob_holds(terms: &SwaptionTerms) -> Roles {
        Roles {
            holder: terms.bob.clone(),
            writer: terms.alice.clone(),
            holder_chain: terms.b_chain.clone(),
            writer_chain: terms.a_chain.clone(),
            p_h: terms.p_b,
            p_w: terms.p_a,
            m_h: terms.m_b,
            m_w: terms.m_a,
            premium: terms.premium,
            funding_owner: terms.alice.clone(),
        }
    }

    fn funding_amounts(&self, margined: bool) -> (Amount, Amount) {
        if margined {
            (self.premium + self.m_h, self.m_w)
        } else {
            (self.premium + self.p_h, self.p_w)
        }
    }
}

struct LegFunds {
    holder_fund: OutPoint,
    writer_fund: OutPoint,
    holder_topup: Option<OutPoint>,
    writer_topup: Option<OutPoint>,
}

fn leg_requests(terms: &SwaptionTerms, roles: &Roles) -> Vec<(PartyId, ChainId, Amount, bool)> {
    let (hf, wf) = roles.funding_amounts(terms.margined);
    let mut v = vec![required(&roles.holder, &roles.holder_chain, hf), required(&roles.writer, &roles.writer_chain, wf)];
    if terms.margined {
        v.push((roles.holder.clone(), roles.holder_chain.clone(), roles.p_h - roles.m_h, false));
        v.push((roles.writer.clone(), roles.writer_chain.clone(), roles.p_w - roles.m_w, false));
    }
    v
}

fn leg_funds(res: &[Option<OutPoint>]) -> LegFunds {
    LegFunds {
        holder_fund: res[0].unwrap(),
        writer_fund: res[1].unwrap(),
        holder_topup: res.get(2).copied().flatten(),
        writer_topup: res.get(3).copied().flatten(),
    }
}

/// Adds one swaption leg. Labels are prefixed with `prefix`.
fn add_leg(
    b: &mut Builder,
    terms: &SwaptionTerms,
    roles: &Roles,
    prefix: &str,
    funds: &LegFunds,
    funding_hash: Hash,
    exercise_hash: Hash,
    cancel_hash: Option<Hash>,
    mutation: Mutation,
) -> Result<(), EngineError> {
    let (h, w) = (&roles.holder, &roles.writer);
    let (hc, wc) = (&roles.holder_chain, &roles.writer_chain);
    let l = |s: &str| format!("{prefix}{s}");
    let leg = Some(LegValuation {
        holder: h.clone(),
        writer: w.clone(),
        holder_on_numeraire: *hc == terms.a_chain,
        p_h: roles.p_h,
        p_w: roles.p_w,
        m_w: roles.m_w,
    });
    let (t, e) = (terms.t, terms.e);
    let holder_owns = roles.funding_owner == *h;
    let (holder_refund, writer_refund) = if holder_owns { (t + 1, t) } else { (t, t + 1) };
    let (hf_amt, wf_amt) = roles.funding_amounts(terms.margined);

    // phase 1: funding swap on secret A
    let hf_pred = funding_contract_predicate(h, w, funding_hash, h, holder_refund)?;
    let wf_pred = funding_contract_predicate(h, w, funding_hash, w, writer_refund)?;
    let mut hf_spec = MoveSpec::new(&l("holder.fund"), h, hc, Action::Fund).spend(funds.holder_fund).pay(hf_amt, hf_pred);
    let mut wf_spec = MoveSpec::new(&l("writer.fund"), w, wc, Action::Fund).spend(funds.writer_fund).pay(wf_amt, wf_pred);
    // the counterparty of the funding owner funds second, and only with time to spare
    if holder_owns {
        wf_spec = wf_spec.after(hc, spec_txid(&hf_spec)).deadline(writer_refund);
    } else {
        hf_spec = hf_spec.after(wc, spec_txid(&wf_spec)).deadline(holder_refund);
    }
    let hf = b.add(hf_spec);
    let wf = b.add(wf_spec);

    let m_h_expiry = if mutation == Mutation::MarginExpiryOrder { terms.m + 1 } else { terms.m };
    let m_w_expiry = if mutation == Mutation::MarginExpiryOrder { terms.m } else { terms.m + 1 };

    // what the funding contracts deposit into
    let holder_next = if terms.margined {
        margin_contract_predicate(&MarginContractSpec {
            depositor: h.clone(),
            beneficiary: w.clone(),
            margin: roles.m_h,
            principal: roles.p_h,
            margin_expiry: m_h_expiry,
        })?
    } else {
        holder_contract(terms, h, w, exercise_hash, cancel_hash)?
    };
    let writer_next = if terms.margined {
        margin_contract_predicate(&MarginContractSpec {
            depositor: w.clone(),
            beneficiary: h.clone(),
            margin: roles.m_w,
            principal: roles.p_w,
            margin_expiry: m_w_expiry,
        })?
    } else {
        writer_contract(terms, h, w, exercise_hash, cancel_hash)?
    };
    let (h_next_amt, w_next_amt) = if terms.margined { (roles.m_h, roles.m_w) } else { (roles.p_h, roles.p_w) };

    // deposit of each funding contract is published by the other party
    let hd_action = if holder_owns { Action::Claim } else { Action::Accept };
    let wd_action = if holder_owns { Action::Accept } else { Action::Claim };
    let mut hd = MoveSpec::new(&l("holder.deposit"), w, hc, hd_action)
        .spend(OutPoint::new(hf, 0))
        .to(roles.premium, w)
        .pay(h_next_amt, holder_next)
        .cosigned(h)
        .secret(funding_hash);
    let mut wd = MoveSpec::new(&l("writer.deposit"), h, wc, wd_action)
        .spend(OutPoint::new(wf, 0))
        .pay(w_next_amt, writer_next)
        .cosigned(w)
        .secret(funding_hash);
    if holder_owns {
        wd = wd.after(hc, hf).deadline(writer_refund);
    } else {
        hd = hd.after(wc, wf).deadline(holder_refund);
    }
    let hd = b.add(hd);
    let wd = b.add(wd);
    let h_next = OutPoint::new(hd, if roles.premium > Amount::ZERO { 1 } else { 0 });
    let w_next = OutPoint::new(wd, 0);

    b.add(MoveSpec::new(&l("holder.refund"), h, hc, Action::PublishRefund).spend(OutPoint::new(hf, 0)).to(hf_amt, h).locktime(holder_refund));
    b.add(MoveSpec::new(&l("writer.refund"), w, wc, Action::PublishRefund).spend(OutPoint::new(wf, 0)).to(wf_amt, w).locktime(writer_refund));

    // phase 2: the option itself
    let (holder_contract_op, writer_contract_op) = if terms.margined {
        b.add(MoveSpec::new(&l("holder.default_claim"), w, hc, Action::Claim).spend(h_next).to(roles.m_h, w).locktime(m_h_expiry));
        b.add(MoveSpec::new(&l("writer.default_claim"), h, wc, Action::Claim).spend(w_next).to(roles.m_w, h).locktime(m_w_expiry));
        let hp = funds.holder_topup.map(|top| {
            let pred = htlc_predicate(&HtlcSpec { payee: w.clone(), payer: h.clone(), hash: exercise_hash, expiry: e + 1 })
                .expect("distinct parties");
            b.add(
                MoveSpec::new(&l("holder.principal"), h, hc, Action::DepositPrincipal)
                    .spend(h_next)
                    .spend(top)
                    .pay(roles.p_h, pred)
                    .cosigned(w)
                    .anyone_can_pay()
                    .deadline(m_h_expiry)
                    .leg(&leg),
            )
        });
        let wp = match (funds.writer_topup, hp) {
            (Some(top), Some(hp_id)) => {
                let pred = htlc_predicate(&HtlcSpec { payee: h.clone(), payer: w.clone(), hash: exercise_hash, expiry: e })?;
                Some(b.add(
                    MoveSpec::new(&l("writer.principal"), w, wc, Action::DepositPrincipal)
                        .spend(w_next)
                        .spend(top)
                        .pay(roles.p_w, pred)
                        .cosigned(h)
                        .anyone_can_pay()
                        .after(hc, hp_id)
                        .deadline(m_w_expiry + 1)
                        .leg(&leg),
                ))
            }
            _ => None,
        };
        (hp.map(|id| OutPoint::new(id, 0)), wp.map(|id| OutPoint::new(id, 0)))
    } else {
        (Some(h_next), Some(w_next))
    };

    let needs_cosign = !terms.margined;
    if let Some(wop) = writer_contract_op {
        if let Some(cancel) = cancel_hash {
            let ac_pred = anticheat_predicate(&AntiCheatSpec { owner: h.clone(), punisher: w.clone(), punish_hash: cancel, delay: 1 })?;
            let ex = b.add(
                MoveSpec::new(&l("writer.exercise"), h, wc, Action::Exercise)
                    .spend(wop)
                    .pay(roles.p_w, ac_pred)
                    .cosigned(w)
                    .secret(exercise_hash)
                    .deadline(e)
                    .leg(&leg),
            );
            let ac = OutPoint::new(ex, 0);
            b.add(MoveSpec::new(&l("exercise.delivery"), h, wc, Action::Claim).spend(ac).to(roles.p_w, h));
            b.add(MoveSpec::new(&l("exercise.breach"), w, wc, Action::PublishBreachRemedy).spend(ac).to(roles.p_w, w).secret(cancel));
            b.add(MoveSpec::new(&l("writer.cancel_claim"), w, wc, Action::Claim).spend(wop).to(roles.p_w, w).secret(cancel));
            b.add(MoveSpec::new(&l("writer.expire"), w, wc, Action::PublishRefund).spend(wop).to(roles.p_w, w).locktime(e));
        } else {
            b.add(
                MoveSpec::new(&l("writer.exercise"), h, wc, Action::Exercise)
                    .cosigned_if(needs_cosign, w)
                    .spend(wop)
                    .to(roles.p_w, h)
                    .secret(exercise_hash)
                    .deadline(e)
                    .leg(&leg),
            );
            b.add(MoveSpec::new(&l("writer.expire"), w, wc, Action::PublishRefund).spend(wop).to(roles.p_w, w).locktime(e));
        }
    }
    if let Some(hop) = holder_contract_op {
        b.add(
            MoveSpec::new(&l("holder.exercise_claim"), w, hc, Action::Claim)
                .cosigned_if(needs_cosign, h)
                .spend(hop)
                .to(roles.p_h, w)
                .secret(exercise_hash),
        );
        if let Some(cancel) = cancel_hash {
            let ac_pred =
                anticheat_predicate(&AntiCheatSpec { owner: h.clone(), punisher: w.clone(), punish_hash: exercise_hash, delay: 1 })?;
            let cx = b.add(
                MoveSpec::new(&l("holder.cancel"), h, hc, Action::Cancel)
                    .spend(hop)
                    .pay(roles.p_h, ac_pred)
                    .cosigned(w)
                    .secret(cancel),
            );
            let ac = OutPoint::new(cx, 0);
            b.add(MoveSpec::new(&l("cancel.delivery"), h, hc, Action::Claim).spend(ac).to(roles.p_h, h));
            b.add(MoveSpec::new(&l("cancel.breach"), w, hc, Action::PublishBreachRemedy).spend(ac).to(roles.p_h, w).secret(exercise_hash));
        } else {
            b.add(MoveSpec::new(&l("holder.expire"), h, hc, Action::PublishRefund).spend(hop).to(roles.p_h, h).locktime(e + 1));
        }
    }
    b.boundary(e);
    b.boundary(e + 1);
    Ok(())
}

fn spec_txid(spec: &MoveSpec<'_>) -> Digest {
    crate::chainsim::Transaction::new(spec.inputs.clone(), spec.outputs.clone(), spec.locktime).txid()
}

fn holder_contract(
    terms: &SwaptionTerms,
    h: &PartyId,
    w: &PartyId,
    exercise: Hash,
    cancel: Option<Hash>,
) -> Result<crate::chainsim::Predicate, EngineError> {
    Ok(match cancel {
        Some(c) => cancellable_holder_contract(h, w, exercise, c)?,
        None => funding_contract_predicate(h, w, exercise, h, terms.e + 1)?,
    })
}

fn writer_contract(
    terms: &SwaptionTerms,
    h: &PartyId,
    w: &PartyId,
    exercise: Hash,
    cancel: Option<Hash>,
) -> Result<crate::chainsim::Predicate, EngineError> {
    Ok(match cancel {
        Some(c) => cancellable_writer_contract(h, w, exercise, c, terms.e)?,
        None => funding_contract_predicate(h, w, exercise, w, terms.e)?,
    })
}

pub fn build_swaption(world: &mut World, terms: &SwaptionTerms, opts: &BuildOptions) -> Result<Protocol, EngineError> {
    terms.validate()?;
    let roles = Roles::alice_holds(terms);
    let res = reserve(world, &leg_requests(terms, &roles))?;
    let name = if terms.margined {
        "margin_swaption"
    } else if terms.cancellable {
        "cancellable_swaption"
    } else {
        "swaption"
    };
    let mut b = builder(name, opts, vec![terms.alice.clone(), terms.bob.clone()]);
    let a = b.secret(&terms.alice, "A");
    let a2 = b.secret(&terms.alice, "A2");
    let a3 = terms.cancellable.then(|| b.secret(&terms.alice, "A3"));
    add_leg(&mut b, terms, &roles, "", &leg_funds(&res), a, a2, a3, opts.mutation)?;
    Ok(b.finish(terms.e + 3))
}

/// Two margined swaptions on the same strike and expiry, opened on one
/// funding secret: Alice holds a call (ACoin for BCoin), Bob holds the
/// reverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FutureTerms {
    pub swaption: SwaptionTerms,
}

pub fn build_future(world: &mut World, terms: &FutureTerms, opts: &BuildOptions) -> Result<Protocol, EngineError> {
    let t = &terms.swaption;
    t.validate()?;
    if !t.margined {
        return Err(EngineError::InvalidTerms("futures legs must be margined".into()));
    }
    let call = Roles::alice_holds(t);
    let put = Roles::bob_holds(t);
    let mut raw = leg_requests(t, &call);
    raw.extend(leg_requests(t, &put));
    // required funding first so optional top-ups never crowd it out
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&i| !raw[i].3);
    let sorted: Vec<_> = order.iter().map(|&i| raw[i].clone()).collect();
    let res_sorted = reserve(world, &sorted)?;
    let mut res = vec![None; raw.len()];
    for (k, &i) in order.iter().enumerate() {
        res[i] = res_sorted[k];
    }
    let mut b = builder("future", opts, vec![t.alice.clone(), t.bob.clone()]);
    let a = b.secret(&t.alice, "A");
    let a2 = b.secret(&t.alice, "A2");
    let b2 = b.secret(&t.bob, "B2");
    add_leg(&mut b, t, &call, "call.", &leg_funds(&res[0..4]), a, a2, None, opts.mutation)?;
    add_leg(&mut b, t, &put, "put.", &leg_funds(&res[4..8]), a, b2, None, opts.mutation)?;
    Ok(b.finish(t.e + 3))
}

fn run_built(world: &mut World, proto: &Protocol, strategies: &BTreeMap<PartyId, Strategy>) -> Result<Trace, EngineError> {
    let missing = proto.setup.missing();
    if !missing.is_empty() {
        return Err(EngineError::MissingPreSignatures(missing));
    }
    Ok(run(world, proto, strategies, &mut FirstChoice, usize::MAX))
}

pub fn run_htlc_payment(
    world: &mut World,
    chain: &ChainId,
    payer: &PartyId,
    payee: &PartyId,
    amount: Amount,
    expiry: TimePoint,
    strategies: &BTreeMap<PartyId, Strategy>,
) -> Result<Trace, EngineError> {
    let proto = build_htlc_payment(world, chain, payer, payee, amount, expiry, &BuildOptions::default())?;
    run_built(world, &proto, strategies)
}

pub fn run_atomic_swap(
    world: &mut World,
    terms: &SwapTerms,
    strategies: &BTreeMap<PartyId, Strategy>,
) -> Result<Trace, EngineError> {
    let proto = build_swap(world, terms, &BuildOptions::default())?;
    run_built(world, &proto, strategies)
}

pub fn run_swaption(
    world: &mut World,
    terms: &SwaptionTerms,
    strategies: &BTreeMap<PartyId, Strategy>,
) -> Result<Trace, EngineError> {
    run_swaption_with(world, terms, strategies, &BuildOptions::default())
}

pub(crate) fn run_swaption_with(
    world: &mut World,
    terms: &SwaptionTerms,
    strategies: &BTreeMap<PartyId, Strategy>,
    opts: &BuildOptions,
) -> Result<Trace, EngineError> {
    let proto = build_swaption(world, terms, opts)?;
    run_built(world, &proto, strategies)
}

pub fn run_swaption_with_cancellation(
    world: &mut World,
    terms: &SwaptionTerms,
    strategies: &BTreeMap<PartyId, Strategy>,
) -> Result<Trace, EngineError> {
    if !terms.cancellable {
        return Err(EngineError::InvalidTerms("cancellable flag not set".into()));
    }
    run_swaption(world, terms, strategies)
}

/// Runs a margined swaption. `Strategy::Rational` entries read the price
/// from their own path; `prices` is applied to any `Policy` entry so that
/// every party sees the same market.
pub fn run_margin_swaption(
    world: &mut World,
    terms: &SwaptionTerms,
    strategies: &BTreeMap<PartyId, Strategy>,
    prices: &PricePath,
) -> Result<Trace, EngineError> {
    if !terms.margined {
        return Err(EngineError::InvalidTerms("margined flag not set".into()));
    }
    let strategies: BTreeMap<PartyId, Strategy> = strategies
        .iter()
        .map(|(p, s)| {
            let s = match s {
                Strategy::Rational { policy, .. } => Strategy::Rational { policy: policy.clone(), prices: prices.clone() },
                other => other.clone(),
            };
            (p.clone(), s)
        })
        .collect();
    run_swaption(world, terms, &strategies)
}
