//! Payoff arithmetic for margined swaptions and futures.
//!
//! Prices are exact rationals: `r` is the ACoin value of one BCoin. Values
//! are rationals in base units of the chosen numeraire, so comparisons with
//! simulated outcomes need no tolerance.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::chainsim::{
    format_base_units, sign, Amount, ChainError, ChainId, OutPoint, Output, PartyId, Predicate, SigMode, TimeDelta,
    TimePoint, Transaction, World,
};
use crate::contracts::{margin_contract_predicate, ContractError, MarginContractSpec};
use crate::engine::{build_future, EngineError, FutureTerms, Strategy, SwaptionTerms, Trace};

/// Exact rational; used both for price ratios and for base-unit values.
pub type Price = Ratio<i128>;

#[derive(Debug, Error)]
pub enum EconError {
    #[error("price ratio must be positive, got {0}")]
    NonPositivePrice(Price),
    #[error("bad price {0:?}")]
    BadPrice(String),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("bad price path: {0}")]
    BadPath(String),
    #[error("bad margin policy: {0}")]
    BadPolicy(String),
    #[error("impending default: {party} needs {needs} more on {chain}, wallet holds {has}")]
    ImpendingDefault { party: PartyId, chain: ChainId, needs: Amount, has: Amount },
    #[error("required margin {0} reaches the full principal")]
    Unmarginable(Amount),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Numeraire {
    #[default]
    ACoin,
    BCoin,
}

impl FromStr for Numeraire {
    type Err = EconError;
    fn from_str(s: &str) -> Result<Numeraire, EconError> {
        match s.to_ascii_lowercase().as_str() {
            "acoin" => Ok(Numeraire::ACoin),
            "bcoin" => Ok(Numeraire::BCoin),
            _ => Err(EconError::BadPrice(format!("unknown numeraire {s}"))),
        }
    }
}

impl fmt::Display for Numeraire {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Numeraire::ACoin => "acoin",
            Numeraire::BCoin => "bcoin",
        })
    }
}

/// A positive price ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PriceRatio(Price);

impl PriceRatio {
    pub fn new(r: Price) -> Result<PriceRatio, EconError> {
        if r.is_positive() {
            Ok(PriceRatio(r))
        } else {
            Err(EconError::NonPositivePrice(r))
        }
    }

    pub fn get(self) -> Price {
        self.0
    }
}

impl FromStr for PriceRatio {
    type Err = EconError;
    fn from_str(s: &str) -> Result<PriceRatio, EconError> {
        PriceRatio::new(parse_price(s)?)
    }
}

/// Parses `"1.25"`, `"5/4"` or `"2"`.
pub fn parse_price(s: &str) -> Result<Price, EconError> {
    let bad = || EconError::BadPrice(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Price::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if (int.is_empty() && frac.is_empty())
        || frac.len() > 18
        || !int.chars().all(|c| c.is_ascii_digit())
        || !frac.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let n: i128 = digits.parse().map_err(|_| bad())?;
    let p = Price::new(n, 10i128.pow(frac.len() as u32));
    Ok(if neg { -p } else { p })
}

/// Decimal rendering truncated toward zero after `places` digits, with
/// trailing zeros removed.
pub fn format_price(p: Price, places: u32) -> String {
    let scale = 10i128.pow(places);
    let scaled = (p * scale).trunc().to_integer();
    let sign = if scaled < 0 { "-" } else { "" };
    let a = scaled.unsigned_abs();
    let int = a / scale as u128;
    let frac = a % scale as u128;
    if frac == 0 {
        return format!("{sign}{int}");
    }
    let f = format!("{frac:0width$}", width = places as usize);
    format!("{sign}{int}.{}", f.trim_end_matches('0'))
}

/// Piecewise-constant price over time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PricePath {
    points: Vec<(TimePoint, Price)>,
}

impl PricePath {
    pub fn new(points: Vec<(TimePoint, Price)>) -> Result<PricePath, EconError> {
        if points.is_empty() {
            return Err(EconError::BadPath("empty".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(EconError::BadPath(format!("time {} does not follow {}", w[1].0, w[0].0)));
            }
        }
        if let Some((_, r)) = points.iter().find(|(_, r)| !r.is_positive()) {
            return Err(EconError::NonPositivePrice(*r));
        }
        Ok(PricePath { points })
    }

    pub fn constant(r: Price) -> PricePath {
        assert!(r.is_positive(), "price must be positive");
        PricePath { points: vec![(0, r)] }
    }

    /// Price in force at `t`; before the first point, the first price.
    pub fn at(&self, t: TimePoint) -> Price {
        let i = self.points.partition_point(|(pt, _)| *pt <= t);
        self.points[i.saturating_sub(1)].1
    }

    pub fn points(&self) -> &[(TimePoint, Price)] {
        &self.points
    }
}

/// Floating-margin settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarginPolicy {
    /// Largest tolerable default gain, ACoin base units.
    pub threshold: Amount,
    /// Extra margin on top of the minimum, BCoin base units.
    pub headroom: Amount,
    /// Distance from a re-mark to the next margin expiry.
    pub remark_interval: TimeDelta,
}

impl MarginPolicy {
    pub fn validate(&self) -> Result<(), EconError> {
        if self.remark_interval < 2 {
            return Err(EconError::BadPolicy("remark interval must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Honor,
    Default,
}

fn amt(a: Amount) -> Price {
    Price::from_integer(a.0 as i128)
}

fn positive(r: Price) -> Result<(), EconError> {
    if r.is_positive() {
        Ok(())
    } else {
        Err(EconError::NonPositivePrice(r))
    }
}

fn denominate(v: Price, r: Price, numeraire: Numeraire) -> Price {
    match numeraire {
        Numeraire::ACoin => v,
        Numeraire::BCoin => v / r,
    }
}

/// Exercise value of a fixed-margin swaption to Alice, capped by Bob's
/// margin, excluding the margin deposits themselves. Base units of
/// `numeraire`.
pub fn intrinsic_value(terms: &SwaptionTerms, r: Price, numeraire: Numeraire) -> Result<Price, EconError> {
    positive(r)?;
    let gain = amt(terms.p_b) * r - amt(terms.p_a);
    let cap = amt(terms.m_b) * r;
    let v = gain.min(cap).max(Price::zero());
    Ok(denominate(v, r, numeraire))
}

/// Whether `party` honors its principal deposit at price `r`. Ties honor.
///
/// Bob loses `p_B·r − p_A` by honoring and `m_B·r` by defaulting. Alice
/// defaulting trades her margin for Bob's; honoring keeps her option.
pub fn default_decision(terms: &SwaptionTerms, r: Price, party: &PartyId) -> Result<Decision, EconError> {
    positive(r)?;
    let default = if *party == terms.bob {
        amt(terms.p_b) * r - amt(terms.p_a) > amt(terms.m_b) * r
    } else if *party == terms.alice {
        let honor = intrinsic_value(terms, r, Numeraire::ACoin)?;
        amt(terms.m_b) * r - amt(terms.m_a) > honor
    } else {
        false
    };
    Ok(if default { Decision::Default } else { Decision::Honor })
}

pub fn payoff_curve(terms: &SwaptionTerms, grid: &[Price], numeraire: Numeraire) -> Result<Vec<(Price, Price)>, EconError> {
    grid.iter().map(|&r| Ok((r, intrinsic_value(terms, r, numeraire)?))).collect()
}

/// Ratios where the ACoin payoff changes slope: at the money and the
/// default boundary. The second is absent when `m_B >= p_B`.
pub fn kinks(terms: &SwaptionTerms) -> Vec<Price> {
    let mut v = vec![Price::new(terms.p_a.0 as i128, terms.p_b.0 as i128)];
    if terms.m_b < terms.p_b && terms.m_b > Amount::ZERO {
        v.push(Price::new(terms.p_a.0 as i128, (terms.p_b.0 - terms.m_b.0) as i128));
    }
    v
}

/// `quantity` BCoin against ACoin at `strike` ACoin per BCoin: a call in
/// ACoin terms, a put in BCoin terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OptionLeg {
    pub quantity: Amount,
    pub strike: Price,
}

impl OptionLeg {
    pub fn payoff(&self, r: Price, numeraire: Numeraire) -> Price {
        let v = (amt(self.quantity) * (r - self.strike)).max(Price::zero());
        denominate(v, r, numeraire)
    }
}

/// Long option at the money minus a short option at the default boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Spread {
    pub long: OptionLeg,
    /// `None` when Bob's margin covers his whole principal.
    pub short: Option<OptionLeg>,
}

impl Spread {
    pub fn payoff(&self, r: Price, numeraire: Numeraire) -> Price {
        let short = self.short.map(|s| s.payoff(r, numeraire)).unwrap_or_default();
        self.long.payoff(r, numeraire) - short
    }
}

pub fn decompose(terms: &SwaptionTerms) -> Spread {
    let long = OptionLeg { quantity: terms.p_b, strike: Price::new(terms.p_a.0 as i128, terms.p_b.0 as i128) };
    let short = (terms.m_b < terms.p_b).then(|| {
        let q = terms.p_b - terms.m_b;
        OptionLeg { quantity: q, strike: Price::new(terms.p_a.0 as i128, q.0 as i128) }
    });
    Spread { long, short }
}

/// Smallest Bob margin, in whole base units, keeping his default gain at
/// `r` within the threshold, plus headroom.
pub fn required_margin(terms: &SwaptionTerms, r: Price, policy: &MarginPolicy) -> Result<Amount, EconError> {
    positive(r)?;
    policy.validate()?;
    let excess = amt(terms.p_b) * r - amt(terms.p_a) - amt(policy.threshold);
    let m = if excess.is_positive() { (excess / r).ceil().to_integer() as u64 } else { 0 };
    Ok(Amount(m) + policy.headroom)
}

/// Parses `LO:HI:STEP` into an inclusive grid.
pub fn parse_grid(s: &str) -> Result<Vec<Price>, EconError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(EconError::BadGrid(format!("expected LO:HI:STEP, got {s:?}")));
    }
    let p = |x: &str| parse_price(x).map_err(|_| EconError::BadGrid(format!("bad number {x:?}")));
    let (lo, hi, step) = (p(parts[0])?, p(parts[1])?, p(parts[2])?);
    if !lo.is_positive() || hi < lo || !step.is_positive() {
        return Err(EconError::BadGrid(format!("need 0 < LO <= HI and STEP > 0 in {s:?}")));
    }
    let n = ((hi - lo) / step).floor().to_integer();
    if n > 1_000_000 {
        return Err(EconError::BadGrid("more than a million points".into()));
    }
    Ok((0..=n).map(|i| lo + step * i).collect())
}

/// Two-column text: ratio and value in coins, truncated to base units.
pub fn payoff_table(curve: &[(Price, Price)]) -> String {
    let mut s = String::new();
    for (r, v) in curve {
        s.push_str(&format!("{} {}\n", format_price(*r, 9), format_base_units(v.floor().to_integer())));
    }
    s
}

/// Bob's margin contract of a floating-margin swaption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FloatingSwaption {
    pub terms: SwaptionTerms,
    /// `None` while no margin is required.
    pub margin_output: Option<OutPoint>,
    pub margin: Amount,
    pub margin_expiry: TimePoint,
}

fn margin_predicate(terms: &SwaptionTerms, margin: Amount, expiry: TimePoint) -> Result<Predicate, EconError> {
    Ok(margin_contract_predicate(&MarginContractSpec {
        depositor: terms.bob.clone(),
        beneficiary: terms.alice.clone(),
        margin,
        principal: terms.p_b,
        margin_expiry: expiry,
    })?)
}

/// Bob locks the margin required at `r` from his wallet.
pub fn open_floating(
    world: &mut World,
    terms: &SwaptionTerms,
    r: Price,
    policy: &MarginPolicy,
) -> Result<FloatingSwaption, EconError> {
    let fs = FloatingSwaption { terms: terms.clone(), margin_output: None, margin: Amount::ZERO, margin_expiry: world.now() };
    remark(world, &fs, r, policy, true)
}

/// Atomically replaces Bob's margin contract with one sized for `r` and
/// expiring `remark_interval` from now. A released margin returns to Bob's
/// wallet in the same transaction. Without cooperation nothing changes.
pub fn remark(
    world: &mut World,
    fs: &FloatingSwaption,
    r: Price,
    policy: &MarginPolicy,
    cooperative: bool,
) -> Result<FloatingSwaption, EconError> {
    if !cooperative {
        return Ok(fs.clone());
    }
    let terms = &fs.terms;
    let (bob, alice, chain) = (&terms.bob, &terms.alice, &terms.b_chain);
    let new_margin = required_margin(terms, r, policy)?;
    if new_margin >= terms.p_b {
        return Err(EconError::Unmarginable(new_margin));
    }
    let expiry = world.now() + policy.remark_interval;

    let mut inputs: Vec<OutPoint> = fs.margin_output.into_iter().collect();
    let mut available = fs.margin;
    if new_margin > available {
        let needs = new_margin - available;
        let has = world.wallet_balance(bob, chain);
        if has < needs {
            return Err(EconError::ImpendingDefault { party: bob.clone(), chain: chain.clone(), needs, has });
        }
        for (op, a) in world.chain(chain)?.wallet_utxos(bob) {
            if available >= new_margin {
                break;
            }
            inputs.push(op);
            available = available + a;
        }
    }
    if inputs.is_empty() {
        return Ok(FloatingSwaption { margin_expiry: expiry, ..fs.clone() });
    }
    let mut outputs = Vec::new();
    if new_margin > Amount::ZERO {
        outputs.push(Output::new(new_margin, margin_predicate(terms, new_margin, expiry)?));
    }
    if available > new_margin {
        outputs.push(Output::to_party(available - new_margin, bob));
    }
    let mut tx = Transaction::new(inputs, outputs, world.now());
    let sigs = [sign(bob, &tx, SigMode::CommitAll, 0)?, sign(alice, &tx, SigMode::CommitAll, 0)?];
    for i in &mut tx.inputs {
        i.witness.signatures.extend(sigs.iter().cloned());
    }
    let txid = world.publish(chain, tx)?;
    Ok(FloatingSwaption {
        terms: terms.clone(),
        margin_output: (new_margin > Amount::ZERO).then(|| OutPoint::new(txid, 0)),
        margin: new_margin,
        margin_expiry: expiry,
    })
}

/// Opens a call and a put on one funding secret and runs both to expiry.
/// `Rational` strategies see `prices`.
pub fn open_future(
    world: &mut World,
    terms: &FutureTerms,
    strategies: &BTreeMap<PartyId, Strategy>,
    prices: &PricePath,
) -> Result<Trace, EconError> {
    let proto = build_future(world, terms, &Default::default())?;
    let missing = proto.setup.missing();
    if !missing.is_empty() {
        return Err(EngineError::MissingPreSignatures(missing).into());
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
    Ok(crate::engine::run(world, &proto, &strategies, &mut crate::engine::FirstChoice, usize::MAX))
}

/// Alice's linear forward payoff in ACoin base units.
pub fn forward_payoff(terms: &SwaptionTerms, r: Price) -> Price {
    amt(terms.p_b) * r - amt(terms.p_a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Price {
        parse_price(s).unwrap()
    }

    fn margined() -> SwaptionTerms {
        SwaptionTerms::margined_example()
    }

    #[test]
    fn parses_prices() {
        assert_eq!(q("1.25"), Price::new(5, 4));
        assert_eq!(q("5/4"), Price::new(5, 4));
        assert_eq!(q("2"), Price::from_integer(2));
        assert_eq!(q(".5"), Price::new(1, 2));
        assert!(parse_price("1.2.3").is_err());
        assert!(parse_price("x").is_err());
        assert!(parse_price("1/0").is_err());
        assert!("0".parse::<PriceRatio>().is_err());
    }

    #[test]
    fn intrinsic_examples() {
        let t = margined();
        assert_eq!(intrinsic_value(&t, q("0.8"), Numeraire::ACoin).unwrap(), Price::zero());
        assert_eq!(intrinsic_value(&t, q("1.1"), Numeraire::ACoin).unwrap(), Price::from_integer(100_000));
        assert_eq!(intrinsic_value(&t, q("1.5"), Numeraire::ACoin).unwrap(), Price::from_integer(300_000));
        assert_eq!(intrinsic_value(&t, q("1.5"), Numeraire::BCoin).unwrap(), Price::from_integer(200_000));
        assert!(intrinsic_value(&t, Price::zero(), Numeraire::ACoin).is_err());
    }

    #[test]
    fn default_examples() {
        let t = margined();
        let bob = t.bob.clone();
        assert_eq!(default_decision(&t, q("1.25"), &bob).unwrap(), Decision::Honor);
        assert_eq!(default_decision(&t, q("2"), &bob).unwrap(), Decision::Default);
        for r in parse_grid("0.5:2.0:0.01").unwrap() {
            assert_eq!(default_decision(&t, r, &t.alice).unwrap(), Decision::Honor);
        }
    }

    #[test]
    fn decomposition_matches_curve() {
        let t = margined();
        let s = decompose(&t);
        assert_eq!(s.long.strike, Price::from_integer(1));
        assert_eq!(s.short.unwrap().strike, Price::new(5, 4));
        let grid = parse_grid("0.5:2.0:0.0015").unwrap();
        assert!(grid.len() >= 1000);
        for n in [Numeraire::ACoin, Numeraire::BCoin] {
            for (r, v) in payoff_curve(&t, &grid, n).unwrap() {
                assert_eq!(s.payoff(r, n), v);
            }
        }
        let full = SwaptionTerms { m_b: t.p_b, ..t.clone() };
        assert!(decompose(&full).short.is_none());
        assert_eq!(kinks(&full), vec![Price::from_integer(1)]);
        let none = SwaptionTerms { m_b: Amount::ZERO, ..t };
        for r in &grid {
            assert_eq!(decompose(&none).payoff(*r, Numeraire::ACoin), Price::zero());
        }
    }

    #[test]
    fn margin_sizing() {
        let t = margined();
        let p = MarginPolicy { threshold: Amount::ZERO, headroom: Amount::ZERO, remark_interval: 5 };
        assert_eq!(required_margin(&t, q("1.0"), &p).unwrap(), Amount::ZERO);
        let m = required_margin(&t, q("1.5"), &p).unwrap();
        assert_eq!(m, Amount(333_334));
        let gain = |m: Amount| (amt(t.p_b) * q("1.5") - amt(t.p_a) - amt(m) * q("1.5")).max(Price::zero());
        assert!(gain(m) <= Price::zero());
        assert!(gain(Amount(m.0 - 1)) > Price::zero());
        let lax = MarginPolicy { threshold: Amount(500_000), ..p.clone() };
        assert_eq!(required_margin(&t, q("1.5"), &lax).unwrap(), Amount::ZERO);
        let bad = MarginPolicy { remark_interval: 1, ..p };
        assert!(required_margin(&t, q("1.5"), &bad).is_err());
    }

    #[test]
    fn grid_and_path() {
        let g = parse_grid("0.5:2.0:0.01").unwrap();
        assert_eq!(g.len(), 151);
        assert_eq!(*g.last().unwrap(), Price::from_integer(2));
        assert!(parse_grid("2:1:0.1").is_err());
        assert!(parse_grid("1:2").is_err());
        let path = PricePath::new(vec![(0, q("1")), (10, q("1.2"))]).unwrap();
        assert_eq!(path.at(9), q("1"));
        assert_eq!(path.at(10), q("1.2"));
        assert!(PricePath::new(vec![(3, q("1")), (3, q("2"))]).is_err());
    }

    #[test]
    fn table_format() {
        let t = margined();
        let curve = payoff_curve(&t, &[q("1.1"), q("1.5")], Numeraire::ACoin).unwrap();
        assert_eq!(payoff_table(&curve), "1.1 0.1\n1.5 0.3\n");
        assert_eq!(format_price(Price::new(1, 3), 4), "0.3333");
    }

    fn world() -> World {
        let chains = [ChainId::new("ACoin"), ChainId::new("BCoin")];
        World::with_wallets(&chains, &[(chains[1].clone(), PartyId::new("bob"), Amount::coins(2))])
    }

    #[test]
    fn remark_moves_margin() {
        let t = margined();
        let p = MarginPolicy { threshold: Amount::ZERO, headroom: Amount::ZERO, remark_interval: 5 };
        let mut w = world();
        let fs = open_floating(&mut w, &t, q("1.2"), &p).unwrap();
        let m12 = required_margin(&t, q("1.2"), &p).unwrap();
        assert_eq!(fs.margin, m12);
        assert_eq!(w.wallet_balance(&t.bob, &t.b_chain), Amount::coins(2) - m12);
        w.advance_clock(3);
        let silent = remark(&mut w, &fs, q("1.5"), &p, false).unwrap();
        assert_eq!(silent, fs);
        let up = remark(&mut w, &fs, q("1.5"), &p, true).unwrap();
        assert_eq!(up.margin, Amount(333_334));
        assert_eq!(up.margin_expiry, 8);
        let down = remark(&mut w, &up, q("1.1"), &p, true).unwrap();
        assert_eq!(w.wallet_balance(&t.bob, &t.b_chain), Amount::coins(2) - down.margin);
        let too_much = remark(&mut World::with_wallets(&[t.b_chain.clone()], &[]), &fs, q("1.5"), &p, true);
        assert!(matches!(too_much, Err(EconError::Chain(_)) | Err(EconError::ImpendingDefault { .. })));
    }
}
