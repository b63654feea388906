//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use swaption_cli::bundled::{lookup, BUNDLED};
use swaption_cli::{parse, run_scenario, Format, Options, Scenario};
use swaption_core::chainsim::{Amount, ChainId, PartyId, World};
use swaption_core::econ::{decompose, open_future, parse_grid, payoff_curve, Numeraire, Price, PricePath};
use swaption_core::engine::{
    check_safety, enumerate_strategies, game_value, run, Action, FirstChoice, FutureTerms, Mutation, Policy,
    ProtocolKind, ProtocolSpec, Strategy, SwapTerms, SwaptionTerms,
};
use swaption_core::lightning::{
    decouple, route_swaption, settle, unwind, Behavior, Network, PositionStatus, RouteTerms,
};

const C: i128 = 1_000_000;

type Deltas = BTreeMap<(String, String), i128>;

fn p(s: &str) -> PartyId {
    PartyId::new(s)
}
fn ac() -> ChainId {
    ChainId::new("ACoin")
}
fn bc() -> ChainId {
    ChainId::new("BCoin")
}

fn bundled(name: &str) -> Scenario {
    let (n, text) = lookup(name).unwrap();
    parse(text, n).unwrap()
}

/// `case -> (party, chain) -> delta` read back from the records output.
fn case_deltas(name: &str) -> BTreeMap<String, Deltas> {
    let rep = run_scenario(&bundled(name), &Options { format: Format::Records, ..Options::default() });
    let mut out: BTreeMap<String, Deltas> = BTreeMap::new();
    let mut case = String::new();
    for line in rep.text.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        match f[0] {
            "case" => case = f[1].to_string(),
            "delta" => {
                out.entry(case.clone()).or_default().insert((f[1].into(), f[2].into()), f[3].parse().unwrap());
            }
            _ => {}
        }
    }
    out
}

fn two(a: (i128, i128), b: (i128, i128)) -> Deltas {
    [
        (("alice".into(), "ACoin".into()), a.0),
        (("alice".into(), "BCoin".into()), a.1),
        (("bob".into(), "ACoin".into()), b.0),
        (("bob".into(), "BCoin".into()), b.1),
    ]
    .into()
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:?}, limit {limit:?}"));
    }
    Ok(())
}

fn scenario_replication() -> Result<String, String> {
    let start = Instant::now();
    let d = case_deltas("fig1_htlc");
    let htlc = |a: i128| -> Deltas { [(("alice".into(), "BCoin".into()), a), (("bob".into(), "BCoin".into()), -a)].into() };
    assert_eq!(d["accept"], htlc(C));
    assert_eq!(d["refund"], htlc(0));

    let d = case_deltas("fig2_swap");
    assert_eq!(d["accept"], two((-C, C), (C, -C)));
    assert_eq!(d["renege"], two((0, 0), (0, 0)));

    let prem = C / 10;
    let d = case_deltas("fig3_swaption");
    assert_eq!(d["exercise"], two((-C - prem, C), (C + prem, -C)));
    assert_eq!(d["expire"], two((-prem, 0), (prem, 0)));
    assert_eq!(d["renege"], two((0, 0), (0, 0)));

    let d = case_deltas("fig4_cancellable");
    assert_eq!(d["exercise"], two((-C - prem, C), (C + prem, -C)));
    assert_eq!(d["cancel"], two((-prem, 0), (prem, 0)));
    // Bob ends holding Alice's 1 ACoin principal plus his own 1 BCoin
    assert_eq!(d["cheat"], two((-C - prem, 0), (C + prem, 0)));

    let m = C / 5;
    let d = case_deltas("fig5_margin");
    assert_eq!(d["both-deposit"], two((-C - prem, C), (C + prem, -C)));
    assert_eq!(d["alice-default"][&("bob".into(), "ACoin".into())], prem + m);
    assert_eq!(d["bob-default"][&("alice".into(), "BCoin".into())], m);
    assert_eq!(d["bob-default"][&("alice".into(), "ACoin".into())], -prem, "principal recovered");

    for name in ["fig1_htlc", "fig2_swap", "fig3_swaption", "fig4_cancellable", "fig4_cheat", "fig5_margin"] {
        if !run_scenario(&bundled(name), &Options::default()).passed {
            return Err(format!("{name} expectations failed"));
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("6 protocols, 15 paths in {:?}", start.elapsed()))
}

fn violations(spec: &ProtocolSpec) -> Vec<(String, usize, usize)> {
    spec.parties()
        .into_iter()
        .map(|h| {
            let outcomes = enumerate_strategies(spec, &BTreeSet::from([h.clone()]), usize::MAX).unwrap();
            let report = check_safety(&outcomes, &spec.guarantees());
            (h.to_string(), report.total, report.violations.len())
        })
        .collect()
}

fn atomicity() -> Result<String, String> {
    let start = Instant::now();
    let spec = ProtocolSpec::new(ProtocolKind::Swap(SwapTerms::new(Amount::coins(1), Amount::coins(1), 10)));
    let good = violations(&spec);
    // independent check of the atomicity claim: the honest party ends with
    // one full asset or the other
    for h in spec.parties() {
        let outcomes = enumerate_strategies(&spec, &BTreeSet::from([h.clone()]), usize::MAX).unwrap();
        for o in &outcomes {
            let a = o.outcome.balance(&h, &ac()).0 as i128;
            let b = o.outcome.balance(&h, &bc()).0 as i128;
            assert!(a >= C || b >= C, "{h} holds neither asset: {a} {b}");
        }
    }
    let bad = violations(&spec.clone().with_mutation(Mutation::SwapExpiryOrder));
    if good.iter().any(|g| g.2 > 0) {
        return Err(format!("violations in the correct swap: {good:?}"));
    }
    let found: usize = bad.iter().map(|b| b.2).sum();
    if found == 0 {
        return Err("mutant swap passed".into());
    }
    within(start, Duration::from_secs(60))?;
    let total: usize = good.iter().map(|g| g.1).sum();
    Ok(format!("0 violations over {total} outcomes; mutant {found} violations"))
}

fn swaption_safety() -> Result<String, String> {
    let start = Instant::now();
    let mut total = 0;
    let variants = [
        ("plain", SwaptionTerms::example()),
        ("cancellable", SwaptionTerms { cancellable: true, ..SwaptionTerms::example() }),
        ("margined", SwaptionTerms::margined_example()),
    ];
    for (name, terms) in variants {
        let spec = ProtocolSpec::new(ProtocolKind::Swaption(terms));
        for (h, n, v) in violations(&spec) {
            total += n;
            if v > 0 {
                return Err(format!("{name}: {v} violations with {h} honest"));
            }
        }
    }
    let mutant = ProtocolSpec::new(ProtocolKind::Swaption(SwaptionTerms::margined_example())).with_mutation(Mutation::MarginExpiryOrder);
    let found: usize = violations(&mutant).iter().map(|x| x.2).sum();
    if found == 0 {
        return Err("margin-expiry mutant passed".into());
    }
    // cheating hands the whole of both contracts to the punisher
    let d = case_deltas("fig4_cheat");
    assert_eq!(d["cheat"], two((-C - C / 10, 0), (C + C / 10, 0)));
    within(start, Duration::from_secs(300))?;
    Ok(format!("0 violations over {total} outcomes; mutant {found} violations"))
}

/// max(0, min(m_B, p_B - p_A)) with every term in ACoin at price r.
fn oracle_value(t: &SwaptionTerms, r: Price) -> Price {
    let a = |x: Amount| Price::from_integer(x.0 as i128);
    let zero = Price::from_integer(0);
    (a(t.p_b) * r - a(t.p_a)).min(a(t.m_b) * r).max(zero)
}

fn slope_changes(points: &[(Price, Price)]) -> Vec<Price> {
    let slopes: Vec<Price> = points.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    slopes.windows(2).enumerate().filter(|(_, s)| s[0] != s[1]).map(|(i, _)| points[i + 1].0).collect()
}

fn payoff_agreement() -> Result<String, String> {
    let t = SwaptionTerms::margined_example();
    let grid = parse_grid("0.5:2.0:0.005").unwrap();
    assert!(grid.len() >= 200);
    for &r in &grid {
        let g = game_value(&t, r).unwrap();
        if g.alice != oracle_value(&t, r) {
            return Err(format!("r = {r}: game {} formula {}", g.alice, oracle_value(&t, r)));
        }
    }
    let expected_kinks = vec![Price::new(1, 1), Price::new(5, 4)];
    let a = payoff_curve(&t, &grid, Numeraire::ACoin).unwrap();
    assert_eq!(slope_changes(&a), expected_kinks);
    // BCoin values are linear in 1/r
    let mut b: Vec<(Price, Price)> =
        payoff_curve(&t, &grid, Numeraire::BCoin).unwrap().into_iter().map(|(r, v)| (r.recip(), v)).collect();
    b.reverse();
    let mut inv: Vec<Price> = expected_kinks.iter().map(|k| k.recip()).collect();
    inv.reverse();
    assert_eq!(slope_changes(&b), inv);
    Ok(format!("{} grid points exact; kinks at 1 and 1.25 in both numeraires", grid.len()))
}

fn decomposition_and_parity() -> Result<String, String> {
    let t = SwaptionTerms::margined_example();
    let s = decompose(&t);
    let grid = parse_grid("0.5:2.0:0.001").unwrap();
    for n in [Numeraire::ACoin, Numeraire::BCoin] {
        for (r, v) in payoff_curve(&t, &grid, n).unwrap() {
            if s.payoff(r, n) != v {
                return Err(format!("decomposition differs at r = {r}"));
            }
        }
    }
    let f = FutureTerms { swaption: SwaptionTerms { premium: Amount::ZERO, ..SwaptionTerms::margined_example() } };
    let st = &f.swaption;
    let a = |x: Amount| Price::from_integer(x.0 as i128);
    let lo = (a(st.p_a) - a(st.m_a)) / a(st.p_b);
    let hi = a(st.p_a) / (a(st.p_b) - a(st.m_b));
    let mut checked = 0;
    for r in parse_grid("0.5:2.0:0.01").unwrap().into_iter().filter(|r| *r >= lo && *r <= hi) {
        let mut world = World::with_wallets(
            &[ac(), bc()],
            &[(ac(), p("alice"), Amount::coins(2)), (bc(), p("bob"), Amount::coins(2))],
        );
        let rational = || Strategy::Rational {
            policy: Policy::honest(&[Action::Fund, Action::Accept, Action::DepositPrincipal, Action::Exercise]),
            prices: PricePath::constant(Price::from_integer(1)),
        };
        let strategies: BTreeMap<PartyId, Strategy> = [(p("alice"), rational()), (p("bob"), rational())].into();
        let trace = open_future(&mut world, &f, &strategies, &PricePath::constant(r)).unwrap();
        let o = &trace.outcome;
        let value = Price::from_integer(o.delta(&p("alice"), &ac())) + r * Price::from_integer(o.delta(&p("alice"), &bc()));
        let forward = a(st.p_b) * r - a(st.p_a);
        if value != forward {
            return Err(format!("future at r = {r}: {value} vs forward {forward}"));
        }
        checked += 1;
    }
    Ok(format!("decomposition exact on {} points; forward parity on {checked} points", grid.len()))
}

fn equal_ratio_no_default() -> Result<String, String> {
    let t = SwaptionTerms::margined_example();
    assert_eq!(t.m_a.0 * t.p_b.0, t.m_b.0 * t.p_a.0, "equal margin ratios");
    let grid = parse_grid("0.5:2.0:0.01").unwrap();
    let mut runs = 0;
    for &r in &grid {
        let spec = ProtocolSpec { prices: Some(PricePath::constant(r)), ..ProtocolSpec::new(ProtocolKind::Swaption(t.clone())) };
        let bob = Strategy::Rational { policy: Policy::honest(&[Action::Fund, Action::DepositPrincipal]), prices: PricePath::constant(r) };
        let mut best_honor: Option<Price> = None;
        let mut best_default: Option<Price> = None;
        use Action::*;
        let alice_moves = [
            Policy::honest(&[Fund, Accept, DepositPrincipal, Exercise]),
            Policy::honest(&[Fund, Accept, DepositPrincipal]),
            Policy::honest(&[Fund, Accept, Exercise]),
            Policy::honest(&[Fund, Accept]),
        ];
        for policy in alice_moves {
            let (mut world, proto) = spec.instantiate().unwrap();
            let strategies: BTreeMap<PartyId, Strategy> = [(p("alice"), Strategy::Policy(policy)), (p("bob"), bob.clone())].into();
            let trace = run(&mut world, &proto, &strategies, &mut FirstChoice, usize::MAX);
            runs += 1;
            let o = &trace.outcome;
            if !o.took("holder.deposit") {
                continue;
            }
            let v = Price::from_integer(o.delta(&p("alice"), &ac())) + r * Price::from_integer(o.delta(&p("alice"), &bc()));
            let slot = if o.took("holder.default_claim") { &mut best_default } else { &mut best_honor };
            *slot = Some(slot.map_or(v, |b: Price| b.max(v)));
        }
        match (best_default, best_honor) {
            (Some(d), Some(h)) if d > h => return Err(format!("r = {r}: default {d} beats honoring {h}")),
            (Some(_), Some(_)) => {}
            _ => return Err(format!("r = {r}: missing default or honor branch")),
        }
    }
    Ok(format!("{} prices, {runs} runs, defaulting never strictly better", grid.len()))
}

fn line_network(nodes: &[&str]) -> Network {
    let wallets: Vec<(ChainId, PartyId, Amount)> =
        nodes.iter().flat_map(|n| [(ac(), p(n), Amount::coins(10)), (bc(), p(n), Amount::coins(10))]).collect();
    let mut net = Network::new(World::with_wallets(&[ac(), bc()], &wallets), 11);
    for w in nodes.windows(2) {
        for chain in [ac(), bc()] {
            net.open_channel(&chain, &p(w[0]), &p(w[1]), Amount::coins(3), Amount::coins(3)).unwrap();
        }
    }
    net
}

fn totals(net: &Network, nodes: &[&str]) -> BTreeMap<String, (i128, i128)> {
    nodes
        .iter()
        .map(|n| {
            let locked = |c: &ChainId| -> i128 {
                net.channels
                    .iter()
                    .filter(|ch| ch.is_open() && &ch.chain == c)
                    .flat_map(|ch| ch.contracts.values())
                    .filter(|k| k.payer == p(n))
                    .map(|k| k.amount().0 as i128)
                    .sum()
            };
            let h = |c: &ChainId| net.holdings(&p(n), c).0 as i128 + locked(c);
            (n.to_string(), (h(&ac()) - 10 * C, h(&bc()) - 10 * C))
        })
        .collect()
}

fn lightning_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let nodes = ["alice", "carol", "dave", "bob"];
    let terms = RouteTerms { p_a: Amount::coins(1), p_b: Amount::coins(1), premium: Amount(100_000), expiry: 20, fee_bps: 0 };
    let bs: BTreeMap<PartyId, Behavior> = [(p("alice"), Behavior::exercise(5))].into();
    let mut results = Vec::new();
    for split in [None, Some("carol"), Some("dave")] {
        for close in [false, true] {
            let mut net = line_network(&nodes);
            let fwd: Vec<PartyId> = nodes.iter().map(|n| p(n)).collect();
            let back: Vec<PartyId> = fwd.iter().rev().cloned().collect();
            let (pa, pb) = (net.path(&ac(), &fwd).unwrap(), net.path(&bc(), &back).unwrap());
            let id = route_swaption(&mut net, &pa, &pb, &terms, None, &bs).unwrap();
            if let Some(node) = split {
                decouple(&mut net, id, &p(node), &bs).unwrap();
            }
            if close {
                for i in 0..net.channels.len() {
                    let who = net.channels[i].parties.0.clone();
                    net.close(i, &who).unwrap();
                }
            }
            settle(&mut net, &bs, 30).unwrap();
            assert!(net.live_contracts().is_empty());
            results.push((split, close, totals(&net, &nodes)));
        }
    }
    let expect: BTreeMap<String, (i128, i128)> = [
        ("alice".to_string(), (-C - C / 10, C)),
        ("bob".to_string(), (C + C / 10, -C)),
        ("carol".to_string(), (0, 0)),
        ("dave".to_string(), (0, 0)),
    ]
    .into();
    for (split, close, t) in &results {
        if t != &expect {
            return Err(format!("decouple {split:?} close {close}: {t:?}"));
        }
    }

    // the two decoupled positions around alice and carol unwind to the final pair
    let four = ["dave", "alice", "carol", "bob"];
    let mut net = line_network(&four);
    let none = BTreeMap::new();
    let path = |net: &Network, ns: &[&str]| {
        let f: Vec<PartyId> = ns.iter().map(|n| p(n)).collect();
        let b: Vec<PartyId> = f.iter().rev().cloned().collect();
        (net.path(&ac(), &f).unwrap(), net.path(&bc(), &b).unwrap())
    };
    let (pa, pb) = path(&net, &["alice", "carol", "bob"]);
    let first = route_swaption(&mut net, &pa, &pb, &terms, None, &none).unwrap();
    let (ac_pos, _) = decouple(&mut net, first, &p("carol"), &none).unwrap();
    let hash = net.positions[ac_pos].hash;
    let (pa, pb) = path(&net, &["carol", "alice", "dave"]);
    let second = route_swaption(&mut net, &pa, &pb, &RouteTerms { expiry: 21, ..terms }, Some(hash), &none).unwrap();
    let (ca_pos, _) = decouple(&mut net, second, &p("alice"), &none).unwrap();
    let before = totals(&net, &four);
    unwind(&mut net, ca_pos, ac_pos, &none).unwrap();
    let after = totals(&net, &four);
    if before != after {
        return Err(format!("unwind moved net balances: {before:?} -> {after:?}"));
    }
    let mut set: Vec<(String, String, String)> = net
        .positions
        .iter()
        .filter(|x| x.status == PositionStatus::Open)
        .map(|x| (x.writer.to_string(), x.holder.to_string(), net.secret_owner(&x.hash).unwrap().to_string()))
        .collect();
    set.sort();
    let want = vec![
        ("bob".to_string(), "carol".to_string(), "carol".to_string()),
        ("dave".to_string(), "alice".to_string(), "alice".to_string()),
    ];
    if set != want {
        return Err(format!("final positions {set:?}"));
    }
    if !run_scenario(&bundled("fig7_unwind"), &Options::default()).passed {
        return Err("fig7_unwind scenario failed".into());
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("{} routing variants agree; unwind ends at Bob->Carol and Dave->Alice", results.len()))
}

fn determinism() -> Result<String, String> {
    let mut n = 0;
    for format in [Format::Text, Format::Records] {
        let opts = Options { format, ..Options::default() };
        for (name, text) in BUNDLED {
            let a = run_scenario(&parse(text, name).unwrap(), &opts).text;
            let b = run_scenario(&parse(text, name).unwrap(), &opts).text;
            if a != b {
                return Err(format!("{name} differs between runs"));
            }
            n += 1;
        }
    }
    let bin = env!("CARGO_BIN_EXE_swaption");
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).filter(|n| !n.starts_with("mutant")).collect();
    let once = |jobs: &str| {
        std::process::Command::new(bin).arg("run").args(&names).args(["--jobs", jobs, "--format", "records"]).output().unwrap().stdout
    };
    if once("1") != once("4") {
        return Err("--jobs 4 output differs from --jobs 1".into());
    }
    Ok(format!("{n} reruns byte-identical; parallel output matches serial"))
}

fn main() {
    let criteria: [(&str, fn() -> Result<String, String>); 8] = [
        ("scenario replication", scenario_replication),
        ("swap atomicity model check", atomicity),
        ("swaption safety model check", swaption_safety),
        ("payoff formula agreement", payoff_agreement),
        ("decomposition and futures parity", decomposition_and_parity),
        ("equal-ratio no-default", equal_ratio_no_default),
        ("lightning equivalence", lightning_equivalence),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
