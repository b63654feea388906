//! Scenario files: a TOML description of one protocol setup and the cases to
//! play on it. Parsing checks every reference and reports problems with the
//! line they come from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use swaption_core::chainsim::{Amount, ChainId, PartyId, TimePoint};
use swaption_core::econ::{parse_grid, parse_price, Numeraire, Price, PricePath};
use swaption_core::engine::{
    Action, FutureTerms, Mutation, Policy, ProtocolKind, ProtocolSpec, Strategy, SwapTerms, SwaptionTerms,
};
use swaption_core::lightning::Behavior;
use toml::Spanned;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub setup: Setup,
    pub cases: Vec<Case>,
    pub enumerate: Enumerate,
}

#[derive(Clone, Debug)]
pub enum Setup {
    Engine(ProtocolSpec),
    Routed(Routed),
    Payoff { terms: SwaptionTerms, grid: Vec<Price>, numeraire: Numeraire },
}

#[derive(Clone, Debug, Default)]
pub struct Enumerate {
    pub honest: Option<Vec<PartyId>>,
    pub depth: Option<usize>,
    /// Run the enumerator even without `--enumerate`.
    pub always: bool,
}

#[derive(Clone, Debug)]
pub struct Routed {
    pub seed: u64,
    pub wallets: Vec<(ChainId, PartyId, Amount)>,
    pub channels: Vec<ChannelSpec>,
    pub routes: Vec<RouteSpec>,
    pub p_a: Amount,
    pub p_b: Amount,
    pub premium: Amount,
    pub fee_bps: u32,
    pub unwind: Option<(String, String)>,
    /// Expected `writer->holder:secret owner` of every open position after setup.
    pub topology: Option<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct ChannelSpec {
    pub chains: Vec<ChainId>,
    pub a: PartyId,
    pub b: PartyId,
    pub fund_a: Amount,
    pub fund_b: Amount,
}

#[derive(Clone, Debug)]
pub struct RouteSpec {
    pub name: String,
    pub path: Vec<PartyId>,
    pub expiry: TimePoint,
    pub secret: Option<String>,
    pub decouple: Option<PartyId>,
}

#[derive(Clone, Debug)]
pub enum Play {
    Engine(BTreeMap<PartyId, Strategy>),
    Routed { behaviors: BTreeMap<PartyId, Behavior>, close: bool },
    Payoff,
}

#[derive(Clone, Debug)]
pub struct Case {
    pub name: String,
    pub play: Play,
    /// Expected change of each party's holdings, in base units.
    pub expect: BTreeMap<(PartyId, ChainId), i128>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Num {
    fn text(&self) -> String {
        match self {
            Num::Int(i) => i.to_string(),
            Num::Float(f) => f.to_string(),
            Num::Str(s) => s.trim().to_string(),
        }
    }
}

type Holdings = BTreeMap<String, BTreeMap<String, Spanned<Num>>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    name: Option<String>,
    description: Option<String>,
    protocol: Spanned<String>,
    #[serde(default)]
    seed: u64,
    unwind: Option<Spanned<Vec<String>>>,
    topology: Option<Vec<String>>,
    #[serde(default)]
    parties: Holdings,
    terms: Option<Spanned<RawTerms>>,
    #[serde(default)]
    strategy: BTreeMap<String, Spanned<String>>,
    prices: Option<Spanned<RawPrices>>,
    enumerate: Option<RawEnumerate>,
    #[serde(default)]
    expect: Holdings,
    #[serde(default)]
    case: Vec<Spanned<RawCase>>,
    #[serde(default)]
    channel: Vec<Spanned<RawChannel>>,
    #[serde(default)]
    route: Vec<Spanned<RawRoute>>,
    payoff: Option<Spanned<RawPayoff>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTerms {
    alice: Option<String>,
    bob: Option<String>,
    chain: Option<String>,
    payer: Option<String>,
    payee: Option<String>,
    amount: Option<Spanned<Num>>,
    expiry: Option<TimePoint>,
    a_amount: Option<Spanned<Num>>,
    b_amount: Option<Spanned<Num>>,
    premium: Option<Spanned<Num>>,
    p_a: Option<Spanned<Num>>,
    p_b: Option<Spanned<Num>>,
    m_a: Option<Spanned<Num>>,
    m_b: Option<Spanned<Num>>,
    t: Option<TimePoint>,
    e: Option<TimePoint>,
    m: Option<TimePoint>,
    cancellable: Option<bool>,
    margined: Option<bool>,
    fee_bps: Option<u32>,
    mutation: Option<Spanned<String>>,
    withheld: Option<Vec<(String, String)>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrices {
    constant: Option<Spanned<Num>>,
    points: Option<Vec<(TimePoint, Spanned<Num>)>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnumerate {
    honest: Option<Vec<String>>,
    depth: Option<usize>,
    #[serde(default)]
    always: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    name: String,
    #[serde(default)]
    strategy: BTreeMap<String, Spanned<String>>,
    #[serde(default)]
    expect: Holdings,
    #[serde(default)]
    close: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    chain: Option<String>,
    a: String,
    b: String,
    fund_a: Spanned<Num>,
    fund_b: Spanned<Num>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoute {
    name: String,
    path: Vec<String>,
    expiry: TimePoint,
    secret: Option<String>,
    decouple: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPayoff {
    grid: Option<String>,
    numeraire: Option<String>,
}

pub const DEFAULT_GRID: &str = "0.5:2.0:0.01";

/// Collects errors against the source text.
struct Ctx<'a> {
    text: &'a str,
    errors: Vec<ParseError>,
}

impl Ctx<'_> {
    fn line(&self, span: &Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].matches('\n').count() + 1
    }

    fn err(&mut self, span: &Range<usize>, message: impl Into<String>) {
        let line = self.line(span);
        self.errors.push(ParseError { line, message: message.into() });
    }

    fn amount(&mut self, n: &Spanned<Num>, what: &str) -> Option<Amount> {
        let s = n.get_ref().text();
        let a = Amount::parse_coins(&s);
        if a.is_none() {
            self.err(&n.span(), format!("{what}: bad amount {s:?}"));
        }
        a
    }

    fn opt_amount(&mut self, n: &Option<Spanned<Num>>, what: &str, default: Amount) -> Amount {
        match n {
            Some(n) => self.amount(n, what).unwrap_or(default),
            None => default,
        }
    }

    fn signed(&mut self, n: &Spanned<Num>, what: &str) -> Option<i128> {
        let s = n.get_ref().text();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(&s)),
        };
        match Amount::parse_coins(body) {
            Some(a) => Some(if neg { -(a.0 as i128) } else { a.0 as i128 }),
            None => {
                self.err(&n.span(), format!("{what}: bad amount {s:?}"));
                None
            }
        }
    }

    fn price(&mut self, n: &Spanned<Num>) -> Option<Price> {
        let s = n.get_ref().text();
        match parse_price(&s) {
            Ok(p) if p > Price::from_integer(0) => Some(p),
            _ => {
                self.err(&n.span(), format!("bad price {s:?}"));
                None
            }
        }
    }

    fn holdings(
        &mut self,
        raw: &Holdings,
        parties: &BTreeSet<PartyId>,
        chains: &BTreeSet<ChainId>,
    ) -> BTreeMap<(PartyId, ChainId), i128> {
        let mut out = BTreeMap::new();
        for (p, per_chain) in raw {
            for (c, v) in per_chain {
                let party = PartyId::new(p.as_str());
                let chain = ChainId::new(c.as_str());
                if !parties.contains(&party) {
                    self.err(&v.span(), format!("unknown party {p:?}"));
                    continue;
                }
                if !chains.contains(&chain) {
                    self.err(&v.span(), format!("unknown chain {c:?}"));
                    continue;
                }
                if let Some(d) = self.signed(v, &format!("expect.{p}.{c}")) {
                    out.insert((party, chain), d);
                }
            }
        }
        out
    }
}

/// Parses scenario text. `fallback_name` is used when the file has no
/// `name` key.
pub fn parse(text: &str, fallback_name: &str) -> Result<Scenario, Vec<ParseError>> {
    let mut cx = Ctx { text, errors: Vec::new() };
    if text.trim().is_empty() {
        return Err(vec![ParseError { line: 1, message: "syntax error: empty scenario".into() }]);
    }
    let raw: Raw = match toml::from_str(text) {
        Ok(r) => r,
        Err(e) => {
            let line = e.span().map(|s| cx.line(&s)).unwrap_or(1);
            let message = format!("syntax error: {}", e.message().trim());
            return Err(vec![ParseError { line, message }]);
        }
    };
    let name = raw.name.clone().unwrap_or_else(|| fallback_name.to_string());
    let description = raw.description.clone();
    let protocol = raw.protocol.get_ref().as_str();
    let setup = match protocol {
        "htlc" | "swap" | "swaption" | "future" => engine_setup(&mut cx, &raw, protocol).map(Setup::Engine),
        "routed" => routed_setup(&mut cx, &raw).map(Setup::Routed),
        "payoff" => payoff_setup(&mut cx, &raw),
        other => {
            cx.err(
                &raw.protocol.span(),
                format!("unknown protocol {other:?}; expected htlc, swap, swaption, future, routed or payoff"),
            );
            None
        }
    };
    let Some(setup) = setup else {
        return Err(cx.errors);
    };
    let cases = cases(&mut cx, &raw, &setup);
    let enumerate = enumerate(&mut cx, &raw, &setup);
    if cx.errors.is_empty() {
        Ok(Scenario { name, description, setup, cases, enumerate })
    } else {
        cx.errors.sort_by_key(|e| e.line);
        Err(cx.errors)
    }
}

fn terms_span(raw: &Raw) -> Range<usize> {
    raw.terms.as_ref().map(|t| t.span()).unwrap_or_else(|| raw.protocol.span())
}

fn swaption_terms(cx: &mut Ctx<'_>, t: &RawTerms, base: SwaptionTerms) -> SwaptionTerms {
    let mut s = base;
    if let Some(a) = &t.alice {
        s.alice = PartyId::new(a.as_str());
    }
    if let Some(b) = &t.bob {
        s.bob = PartyId::new(b.as_str());
    }
    s.premium = cx.opt_amount(&t.premium, "premium", s.premium);
    s.p_a = cx.opt_amount(&t.p_a, "p_a", s.p_a);
    s.p_b = cx.opt_amount(&t.p_b, "p_b", s.p_b);
    s.m_a = cx.opt_amount(&t.m_a, "m_a", s.m_a);
    s.m_b = cx.opt_amount(&t.m_b, "m_b", s.m_b);
    s.t = t.t.unwrap_or(s.t);
    s.e = t.e.unwrap_or(s.e);
    s.m = t.m.unwrap_or(s.m);
    s.cancellable = t.cancellable.unwrap_or(s.cancellable);
    s.margined = t.margined.unwrap_or(s.margined);
    s
}

fn engine_setup(cx: &mut Ctx<'_>, raw: &Raw, protocol: &str) -> Option<ProtocolSpec> {
    let empty = RawTerms::default();
    let t = raw.terms.as_ref().map(|t| t.get_ref()).unwrap_or(&empty);
    let span = terms_span(raw);
    let kind = match protocol {
        "htlc" => {
            let (Some(payer), Some(payee), Some(amount), Some(expiry)) = (&t.payer, &t.payee, &t.amount, t.expiry)
            else {
                cx.err(&span, "htlc terms need payer, payee, amount and expiry");
                return None;
            };
            let amount = cx.amount(amount, "amount")?;
            ProtocolKind::Htlc {
                chain: ChainId::new(t.chain.as_deref().unwrap_or("BCoin")),
                payer: PartyId::new(payer.as_str()),
                payee: PartyId::new(payee.as_str()),
                amount,
                expiry,
            }
        }
        "swap" => {
            let mut s = SwapTerms::new(Amount::coins(1), Amount::coins(1), t.t.unwrap_or(10));
            s.a_amount = cx.opt_amount(&t.a_amount, "a_amount", s.a_amount);
            s.b_amount = cx.opt_amount(&t.b_amount, "b_amount", s.b_amount);
            if let Some(a) = &t.alice {
                s.alice = PartyId::new(a.as_str());
            }
            if let Some(b) = &t.bob {
                s.bob = PartyId::new(b.as_str());
            }
            if let Err(e) = s.validate() {
                cx.err(&span, e.to_string());
            }
            ProtocolKind::Swap(s)
        }
        "swaption" => {
            let s = swaption_terms(cx, t, SwaptionTerms::example());
            if let Err(e) = s.validate() {
                cx.err(&span, e.to_string());
            }
            ProtocolKind::Swaption(s)
        }
        _ => {
            let base = SwaptionTerms { premium: Amount::ZERO, ..SwaptionTerms::margined_example() };
            let s = swaption_terms(cx, t, base);
            if let Err(e) = s.validate() {
                cx.err(&span, e.to_string());
            }
            ProtocolKind::Future(FutureTerms { swaption: s })
        }
    };
    let mut spec = ProtocolSpec::new(kind);
    spec.opts.seed = raw.seed;
    if let Some(m) = &t.mutation {
        spec.opts.mutation = match m.get_ref().as_str() {
            "none" => Mutation::None,
            "swap_expiry_order" => Mutation::SwapExpiryOrder,
            "margin_expiry_order" => Mutation::MarginExpiryOrder,
            other => {
                cx.err(&m.span(), format!("unknown mutation {other:?}"));
                Mutation::None
            }
        };
    }
    if let Some(w) = &t.withheld {
        spec.opts.withheld = w.iter().map(|(l, p)| (l.clone(), PartyId::new(p.as_str()))).collect();
    }
    let parties: BTreeSet<PartyId> = spec.parties().into_iter().collect();
    let chains: BTreeSet<ChainId> = spec.chains().into_iter().collect();
    if !raw.parties.is_empty() {
        spec.wallets = wallets(cx, &raw.parties, Some(&parties), &chains);
    }
    if let Some(p) = &raw.prices {
        spec.prices = prices(cx, p);
    }
    for (key, span) in [("channel", raw.channel.first().map(|c| c.span())), ("route", raw.route.first().map(|r| r.span()))] {
        if let Some(span) = span {
            cx.err(&span, format!("[[{key}]] is only valid for routed scenarios"));
        }
    }
    Some(spec)
}

fn wallets(
    cx: &mut Ctx<'_>,
    raw: &Holdings,
    parties: Option<&BTreeSet<PartyId>>,
    chains: &BTreeSet<ChainId>,
) -> Vec<(ChainId, PartyId, Amount)> {
    let mut out = Vec::new();
    for (p, per_chain) in raw {
        let party = PartyId::new(p.as_str());
        for (c, v) in per_chain {
            if parties.is_some_and(|ps| !ps.contains(&party)) {
                cx.err(&v.span(), format!("unknown party {p:?}"));
                continue;
            }
            let chain = ChainId::new(c.as_str());
            if !chains.contains(&chain) {
                cx.err(&v.span(), format!("unknown chain {c:?}"));
                continue;
            }
            if let Some(a) = cx.amount(v, &format!("parties.{p}.{c}")) {
                out.push((chain, party.clone(), a));
            }
        }
    }
    out
}

fn prices(cx: &mut Ctx<'_>, p: &Spanned<RawPrices>) -> Option<PricePath> {
    let r = p.get_ref();
    match (&r.constant, &r.points) {
        (Some(c), None) => cx.price(c).map(PricePath::constant),
        (None, Some(points)) => {
            let mut v = Vec::new();
            for (t, n) in points {
                v.push((*t, cx.price(n)?));
            }
            match PricePath::new(v) {
                Ok(path) => Some(path),
                Err(e) => {
                    cx.err(&p.span(), e.to_string());
                    None
                }
            }
        }
        _ => {
            cx.err(&p.span(), "prices need exactly one of constant or points");
            None
        }
    }
}

fn routed_setup(cx: &mut Ctx<'_>, raw: &Raw) -> Option<Routed> {
    let empty = RawTerms::default();
    let t = raw.terms.as_ref().map(|t| t.get_ref()).unwrap_or(&empty);
    let chains: BTreeSet<ChainId> = [ChainId::new("ACoin"), ChainId::new("BCoin")].into();
    let wallets = wallets(cx, &raw.parties, None, &chains);
    let known: BTreeSet<PartyId> = wallets.iter().map(|(_, p, _)| p.clone()).collect();
    let check_party = |cx: &mut Ctx<'_>, span: &Range<usize>, p: &str| {
        let id = PartyId::new(p);
        if !known.contains(&id) {
            cx.err(span, format!("unknown party {p:?}"));
        }
        id
    };

    let mut channels = Vec::new();
    for c in &raw.channel {
        let span = c.span();
        let r = c.get_ref();
        let chains = match &r.chain {
            Some(name) => {
                let id = ChainId::new(name.as_str());
                if !chains.contains(&id) {
                    cx.err(&span, format!("unknown chain {name:?}"));
                }
                vec![id]
            }
            None => chains.iter().cloned().collect(),
        };
        let a = check_party(cx, &span, &r.a);
        let b = check_party(cx, &span, &r.b);
        let fund_a = cx.amount(&r.fund_a, "fund_a").unwrap_or(Amount::ZERO);
        let fund_b = cx.amount(&r.fund_b, "fund_b").unwrap_or(Amount::ZERO);
        channels.push(ChannelSpec { chains, a, b, fund_a, fund_b });
    }

    let mut routes: Vec<RouteSpec> = Vec::new();
    let mut names = BTreeSet::new();
    for r in &raw.route {
        let span = r.span();
        let x = r.get_ref();
        if !names.insert(x.name.clone()) {
            cx.err(&span, format!("duplicate route {:?}", x.name));
        }
        if x.path.len() < 2 {
            cx.err(&span, "a route path needs at least two nodes");
        }
        let path: Vec<PartyId> = x.path.iter().map(|p| check_party(cx, &span, p)).collect();
        if let Some(s) = &x.secret {
            if !routes.iter().any(|r| &r.name == s) {
                cx.err(&span, format!("secret refers to unknown or later route {s:?}"));
            }
        }
        let decouple = x.decouple.as_ref().map(|d| {
            let id = check_party(cx, &span, d);
            let inner = path.len() > 2 && path[1..path.len() - 1].contains(&id);
            if !inner {
                cx.err(&span, format!("decouple node {d:?} is not an intermediary of the route"));
            }
            id
        });
        routes.push(RouteSpec { name: x.name.clone(), path, expiry: x.expiry, secret: x.secret.clone(), decouple });
    }
    if routes.is_empty() {
        cx.err(&raw.protocol.span(), "routed scenarios need at least one [[route]]");
    }

    let positions: BTreeSet<String> = routes
        .iter()
        .flat_map(|r| match r.decouple {
            Some(_) => vec![format!("{}.short", r.name), format!("{}.long", r.name)],
            None => vec![r.name.clone()],
        })
        .collect();
    let unwind = match &raw.unwind {
        Some(u) if u.get_ref().len() == 2 => {
            for p in u.get_ref() {
                if !positions.contains(p) {
                    cx.err(&u.span(), format!("unwind names unknown position {p:?}"));
                }
            }
            Some((u.get_ref()[0].clone(), u.get_ref()[1].clone()))
        }
        Some(u) => {
            cx.err(&u.span(), "unwind takes exactly two positions");
            None
        }
        None => None,
    };
    let p_a = cx.opt_amount(&t.p_a, "p_a", Amount::coins(1));
    let p_b = cx.opt_amount(&t.p_b, "p_b", Amount::coins(1));
    let premium = cx.opt_amount(&t.premium, "premium", Amount(100_000));
    Some(Routed {
        seed: raw.seed,
        wallets,
        channels,
        routes,
        p_a,
        p_b,
        premium,
        fee_bps: t.fee_bps.unwrap_or(0),
        unwind,
        topology: raw.topology.clone(),
    })
}

fn payoff_setup(cx: &mut Ctx<'_>, raw: &Raw) -> Option<Setup> {
    let empty = RawTerms::default();
    let t = raw.terms.as_ref().map(|t| t.get_ref()).unwrap_or(&empty);
    let terms = swaption_terms(cx, t, SwaptionTerms::margined_example());
    if let Err(e) = terms.validate() {
        cx.err(&terms_span(raw), e.to_string());
    }
    if !terms.margined {
        cx.err(&terms_span(raw), "payoff scenarios need margined terms");
    }
    let (grid_text, numeraire_text, span) = match &raw.payoff {
        Some(p) => (p.get_ref().grid.clone(), p.get_ref().numeraire.clone(), p.span()),
        None => (None, None, raw.protocol.span()),
    };
    let grid = match parse_grid(grid_text.as_deref().unwrap_or(DEFAULT_GRID)) {
        Ok(g) => g,
        Err(e) => {
            cx.err(&span, e.to_string());
            Vec::new()
        }
    };
    let numeraire = match numeraire_text.as_deref().unwrap_or("acoin").parse() {
        Ok(n) => n,
        Err(e) => {
            cx.err(&span, format!("{e}"));
            Numeraire::ACoin
        }
    };
    Some(Setup::Payoff { terms, grid, numeraire })
}

/// `fund accept cheat@5 rational` for protocol runs.
fn engine_script(cx: &mut Ctx<'_>, s: &Spanned<String>, prices: &Option<PricePath>) -> Option<Strategy> {
    let mut policy = Policy::honest(&[]);
    let mut rational = false;
    for word in s.get_ref().split_whitespace() {
        match word {
            "rational" => rational = true,
            "silent" => policy = Policy::silent(),
            "reckless" => policy.reckless = true,
            _ => {
                let (name, at) = match word.split_once('@') {
                    Some((n, t)) => (n, Some(t)),
                    None => (word, None),
                };
                let Some(action) = Action::parse(name) else {
                    cx.err(&s.span(), format!("unknown action {name:?}"));
                    return None;
                };
                match at.map(|t| t.parse::<TimePoint>()) {
                    None => {
                        policy.actions.insert(action);
                    }
                    Some(Ok(t)) => policy = policy.at(action, t),
                    Some(Err(_)) => {
                        cx.err(&s.span(), format!("bad time in {word:?}"));
                        return None;
                    }
                }
            }
        }
    }
    if !rational {
        return Some(Strategy::Policy(policy));
    }
    match prices {
        Some(p) => Some(Strategy::Rational { policy, prices: p.clone() }),
        None => {
            cx.err(&s.span(), "rational play needs a [prices] table");
            None
        }
    }
}

/// `exercise@5 silent@3 passive delay@2` for routed positions.
fn routed_script(cx: &mut Ctx<'_>, s: &Spanned<String>) -> Option<Behavior> {
    let mut b = Behavior::default();
    for word in s.get_ref().split_whitespace() {
        if word == "passive" {
            b.passive = true;
            continue;
        }
        let Some((name, n)) = word.split_once('@') else {
            cx.err(&s.span(), format!("unknown behavior {word:?}"));
            return None;
        };
        let Ok(n) = n.parse::<u64>() else {
            cx.err(&s.span(), format!("bad time in {word:?}"));
            return None;
        };
        match name {
            "exercise" => b.exercise_at = Some(n),
            "silent" => b.silent_from = Some(n),
            "delay" => b.relay_delay = n,
            _ => {
                cx.err(&s.span(), format!("unknown behavior {name:?}"));
                return None;
            }
        }
    }
    Some(b)
}

fn setup_parties(setup: &Setup) -> (BTreeSet<PartyId>, BTreeSet<ChainId>) {
    match setup {
        Setup::Engine(spec) => (spec.parties().into_iter().collect(), spec.chains().into_iter().collect()),
        Setup::Routed(r) => (
            r.wallets.iter().map(|(_, p, _)| p.clone()).collect(),
            [ChainId::new("ACoin"), ChainId::new("BCoin")].into(),
        ),
        Setup::Payoff { terms, .. } => {
            ([terms.alice.clone(), terms.bob.clone()].into(), [terms.a_chain.clone(), terms.b_chain.clone()].into())
        }
    }
}

fn play(cx: &mut Ctx<'_>, setup: &Setup, scripts: &BTreeMap<String, Spanned<String>>, close: bool) -> Play {
    let (parties, _) = setup_parties(setup);
    let known = |cx: &mut Ctx<'_>, p: &str, s: &Spanned<String>| {
        let id = PartyId::new(p);
        if !parties.contains(&id) {
            cx.err(&s.span(), format!("unknown party {p:?}"));
            return None;
        }
        Some(id)
    };
    match setup {
        Setup::Engine(spec) => {
            let mut out = BTreeMap::new();
            for (p, s) in scripts {
                if let (Some(id), Some(st)) = (known(cx, p, s), engine_script(cx, s, &spec.prices)) {
                    out.insert(id, st);
                }
            }
            Play::Engine(out)
        }
        Setup::Routed(_) => {
            let mut behaviors = BTreeMap::new();
            for (p, s) in scripts {
                if let (Some(id), Some(b)) = (known(cx, p, s), routed_script(cx, s)) {
                    behaviors.insert(id, b);
                }
            }
            Play::Routed { behaviors, close }
        }
        Setup::Payoff { .. } => {
            if let Some(s) = scripts.values().next() {
                cx.err(&s.span(), "payoff scenarios take no strategies");
            }
            Play::Payoff
        }
    }
}

fn cases(cx: &mut Ctx<'_>, raw: &Raw, setup: &Setup) -> Vec<Case> {
    let (parties, chains) = setup_parties(setup);
    let base_expect = cx.holdings(&raw.expect, &parties, &chains);
    if raw.case.is_empty() {
        let play = play(cx, setup, &raw.strategy, false);
        return vec![Case { name: "main".into(), play, expect: base_expect }];
    }
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    for c in &raw.case {
        let r = c.get_ref();
        if !names.insert(r.name.clone()) {
            cx.err(&c.span(), format!("duplicate case {:?}", r.name));
        }
        if r.close && !matches!(setup, Setup::Routed(_)) {
            cx.err(&c.span(), "close applies only to routed scenarios");
        }
        let mut scripts = raw.strategy.clone();
        scripts.extend(r.strategy.iter().map(|(k, v)| (k.clone(), v.clone())));
        let play = play(cx, setup, &scripts, r.close);
        let mut expect = base_expect.clone();
        expect.extend(cx.holdings(&r.expect, &parties, &chains));
        out.push(Case { name: r.name.clone(), play, expect });
    }
    out
}

fn enumerate(cx: &mut Ctx<'_>, raw: &Raw, setup: &Setup) -> Enumerate {
    let Some(e) = &raw.enumerate else {
        return Enumerate::default();
    };
    let (parties, _) = setup_parties(setup);
    if !matches!(setup, Setup::Engine(_)) {
        cx.err(&raw.protocol.span(), "[enumerate] applies only to protocol scenarios");
    }
    let honest = e.honest.as_ref().map(|hs| {
        hs.iter()
            .map(|h| {
                let id = PartyId::new(h.as_str());
                if !parties.contains(&id) {
                    cx.err(&raw.protocol.span(), format!("enumerate: unknown party {h:?}"));
                }
                id
            })
            .collect()
    });
    Enumerate { honest, depth: e.depth, always: e.always }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errs(text: &str) -> Vec<ParseError> {
        parse(text, "t").unwrap_err()
    }

    #[test]
    fn empty_file_is_a_syntax_error() {
        let e = errs("");
        assert_eq!(e[0].line, 1);
        assert!(e[0].message.starts_with("syntax error"));
        assert!(errs("  \n\n").len() == 1);
    }

    #[test]
    fn syntax_error_has_line() {
        let e = errs("protocol = \"swap\"\n\n[terms\nt = 3\n");
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].line, 3);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = errs("protocol = \"swap\"\n[terms]\nt = 10\nexpirey = 4\n");
        assert_eq!(e[0].line, 4);
        assert!(e[0].message.contains("expirey"), "{}", e[0].message);
    }

    #[test]
    fn unknown_party_and_action_point_at_their_lines() {
        let text = "protocol = \"swap\"\n[strategy]\nalice = \"fund\"\ncarol = \"fund\"\nbob = \"fund dance\"\n";
        let e = errs(text);
        let lines: Vec<usize> = e.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![4, 5]);
        assert!(e[0].message.contains("carol"));
        assert!(e[1].message.contains("dance"));
    }

    #[test]
    fn amounts_accept_strings_ints_and_floats() {
        let text = "protocol = \"swaption\"\n[terms]\npremium = 0.1\np_a = 1\np_b = \"1.000000\"\n[expect]\nalice = { ACoin = \"-1.1\", BCoin = 1 }\n";
        let s = parse(text, "t").unwrap();
        let Setup::Engine(spec) = &s.setup else { panic!() };
        let ProtocolKind::Swaption(t) = &spec.kind else { panic!() };
        assert_eq!(t.premium, Amount(100_000));
        assert_eq!(t.p_b, Amount::coins(1));
        assert_eq!(s.cases[0].expect[&(PartyId::new("alice"), ChainId::new("ACoin"))], -1_100_000);
    }

    #[test]
    fn margin_after_expiry_is_rejected() {
        let text = "protocol = \"swaption\"\n[terms]\nmargined = true\nm_a = 0.2\nm_b = 0.2\nm = 100\ne = 100\n";
        let e = errs(text);
        assert_eq!(e[0].line, 2);
        assert!(e[0].message.contains("margin expiry must precede swaption expiry"));
    }

    #[test]
    fn rational_needs_prices() {
        let e = errs("protocol = \"swaption\"\n[strategy]\nbob = \"fund rational\"\n");
        assert_eq!(e[0].line, 3);
    }

    #[test]
    fn case_overrides_strategy() {
        let text = "protocol = \"swap\"\n[strategy]\nalice = \"fund accept\"\nbob = \"fund\"\n\n[[case]]\nname = \"renege\"\nstrategy = { alice = \"fund\" }\n";
        let s = parse(text, "t").unwrap();
        let Play::Engine(st) = &s.cases[0].play else { panic!() };
        let Strategy::Policy(p) = &st[&PartyId::new("alice")] else { panic!() };
        assert!(!p.actions.contains(&Action::Accept));
    }

    #[test]
    fn routed_references_are_checked() {
        let text = "protocol = \"routed\"\nunwind = [\"a\", \"zz\"]\n[parties]\nalice = { ACoin = 5 }\nbob = { BCoin = 5 }\n\n[[route]]\nname = \"a\"\npath = [\"alice\", \"bob\"]\nexpiry = 20\ndecouple = \"bob\"\n";
        let e = errs(text);
        assert!(e.iter().any(|e| e.line == 2 && e.message.contains("zz")));
        assert!(e.iter().any(|e| e.line == 7 && e.message.contains("intermediary")));
    }

    #[test]
    fn routed_script_grammar() {
        let text = "protocol = \"routed\"\n[parties]\nalice = { ACoin = 5 }\nbob = { BCoin = 5 }\n[strategy]\nalice = \"exercise@5 delay@2\"\nbob = \"passive silent@3\"\n[[route]]\nname = \"a\"\npath = [\"alice\", \"bob\"]\nexpiry = 20\n";
        let s = parse(text, "t").unwrap();
        let Play::Routed { behaviors, .. } = &s.cases[0].play else { panic!() };
        let a = &behaviors[&PartyId::new("alice")];
        assert_eq!((a.exercise_at, a.relay_delay), (Some(5), 2));
        let b = &behaviors[&PartyId::new("bob")];
        assert!(b.passive && b.silent_from == Some(3));
    }
}
