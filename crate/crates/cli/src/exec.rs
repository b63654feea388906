//! Plays parsed scenarios and renders their reports.

use std::collections::{BTreeMap, BTreeSet};

use swaption_core::chainsim::{format_base_units, ChainId, Hash, PartyId, World};
use swaption_core::econ::{format_price, kinks, parse_grid, payoff_curve, payoff_table, Numeraire, Price};
use swaption_core::engine::{check_safety, enumerate_strategies, run, FirstChoice, ProtocolSpec, Strategy};
use swaption_core::lightning::{decouple, route_swaption, settle, unwind, Behavior, Network, RouteTerms};

use crate::scenario::{Case, Play, Routed, Scenario, Setup};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Records,
}

/// Command-line overrides applied on top of each scenario.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub enumerate: bool,
    pub honest: Option<Vec<PartyId>>,
    pub depth: Option<usize>,
    pub grid: Option<String>,
    pub numeraire: Option<Numeraire>,
    pub format: Format,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub name: String,
    pub text: String,
    pub passed: bool,
}

struct Out {
    format: Format,
    s: String,
    passed: bool,
}

impl Out {
    fn line(&mut self, text: impl AsRef<str>) {
        self.s.push_str(text.as_ref());
        self.s.push('\n');
    }

    fn text(&mut self, text: impl AsRef<str>) {
        if self.format == Format::Text {
            self.line(text);
        }
    }

    fn record(&mut self, text: impl AsRef<str>) {
        if self.format == Format::Records {
            self.line(text);
        }
    }

    fn fail(&mut self, why: impl AsRef<str>) {
        self.passed = false;
        self.line(format!("error: {}", why.as_ref()));
    }

    fn deltas(&mut self, deltas: &BTreeMap<(PartyId, ChainId), i128>, expect: &BTreeMap<(PartyId, ChainId), i128>) {
        for ((p, c), d) in deltas {
            self.text(format!("  {p:<6} {c:<6} {:>+}", Signed(*d)));
            self.record(format!("delta {p} {c} {d}"));
        }
        for ((p, c), want) in expect {
            let got = deltas.get(&(p.clone(), c.clone())).copied().unwrap_or(0);
            let ok = got == *want;
            self.passed &= ok;
            let verdict = if ok { "ok" } else { "MISMATCH" };
            self.text(format!("expect {p} {c} {} got {} {verdict}", Signed(*want), Signed(got)));
            self.record(format!("expect {p} {c} {want} {got} {}", if ok { "ok" } else { "mismatch" }));
        }
    }
}

/// Signed base units rendered as coins with an explicit sign.
struct Signed(i128);

impl std::fmt::Display for Signed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let body = format_base_units(self.0.abs());
        let sign = if self.0 < 0 { "-" } else { "+" };
        f.pad(&format!("{sign}{body}"))
    }
}

pub fn run_scenario(sc: &Scenario, opts: &Options) -> Report {
    let mut out = Out { format: opts.format, s: String::new(), passed: true };
    out.line(format!("scenario {}", sc.name));
    if let Some(d) = &sc.description {
        out.text(format!("# {d}"));
    }
    match &sc.setup {
        Setup::Engine(spec) => {
            for case in &sc.cases {
                engine_case(&mut out, spec, case);
            }
            if opts.enumerate || sc.enumerate.always {
                let honest = opts.honest.clone().or_else(|| sc.enumerate.honest.clone());
                let depth = opts.depth.or(sc.enumerate.depth).unwrap_or(usize::MAX);
                enumerate(&mut out, spec, honest, depth);
            }
        }
        Setup::Routed(r) => {
            for case in &sc.cases {
                routed_case(&mut out, r, case);
            }
        }
        Setup::Payoff { terms, grid, numeraire } => {
            let grid = match &opts.grid {
                Some(g) => match parse_grid(g) {
                    Ok(g) => g,
                    Err(e) => {
                        out.fail(e.to_string());
                        Vec::new()
                    }
                },
                None => grid.clone(),
            };
            let n = opts.numeraire.unwrap_or(*numeraire);
            match payoff_curve(terms, &grid, n) {
                Ok(curve) => {
                    out.line(format!("# r value_{n}"));
                    out.s.push_str(&payoff_table(&curve));
                    let k: Vec<String> = kinks(terms).into_iter().map(|k: Price| format_price(k, 9)).collect();
                    out.line(format!("# kinks {}", k.join(" ")));
                }
                Err(e) => out.fail(e.to_string()),
            }
        }
    }
    out.line(format!("result {}", if out.passed { "PASS" } else { "FAIL" }));
    Report { name: sc.name.clone(), text: out.s, passed: out.passed }
}

fn engine_case(out: &mut Out, spec: &ProtocolSpec, case: &Case) {
    out.text(format!("== case {}", case.name));
    out.record(format!("case {}", case.name));
    let Play::Engine(scripts) = &case.play else { return };
    let (mut world, proto) = match spec.instantiate() {
        Ok(x) => x,
        Err(e) => return out.fail(e.to_string()),
    };
    let strategies: BTreeMap<PartyId, Strategy> = spec
        .parties()
        .into_iter()
        .map(|p| {
            let s = scripts.get(&p).cloned().unwrap_or_else(|| Strategy::honest(&[]));
            (p, s)
        })
        .collect();
    let trace = run(&mut world, &proto, &strategies, &mut FirstChoice, usize::MAX);
    if out.format == Format::Text {
        out.s.push_str(&trace.text());
    } else {
        for e in &trace.events {
            out.line(format!("event {}", e.record()));
        }
    }
    let deltas: BTreeMap<(PartyId, ChainId), i128> = trace
        .outcome
        .balances
        .keys()
        .map(|(p, c)| ((p.clone(), c.clone()), trace.outcome.delta(p, c)))
        .collect();
    out.text("deltas");
    out.deltas(&deltas, &case.expect);
}

fn enumerate(out: &mut Out, spec: &ProtocolSpec, honest: Option<Vec<PartyId>>, depth: usize) {
    let sets: Vec<BTreeSet<PartyId>> = match honest {
        Some(h) => vec![h.into_iter().collect()],
        None => spec.parties().into_iter().map(|p| [p].into()).collect(),
    };
    let guarantees = spec.guarantees();
    for set in sets {
        let names: Vec<String> = set.iter().map(|p| p.to_string()).collect();
        let label = names.join(",");
        match enumerate_strategies(spec, &set, depth) {
            Ok(outcomes) => {
                let report = check_safety(&outcomes, &guarantees);
                out.passed &= report.passed();
                out.text(format!("== enumerate honest={label}"));
                out.text(report.to_string().trim_end());
                out.record(format!(
                    "enumerate {label} {} {} {}",
                    report.total,
                    report.violations.len(),
                    if report.passed() { "ok" } else { "violation" }
                ));
            }
            Err(e) => out.fail(format!("enumerate honest={label}: {e}")),
        }
    }
}

/// Builds the network, installs every route and applies decoupling and
/// unwinding. Returns the named positions.
fn build_network(r: &Routed, bs: &BTreeMap<PartyId, Behavior>) -> Result<(Network, BTreeMap<String, usize>), String> {
    let (ac, bc) = (ChainId::new("ACoin"), ChainId::new("BCoin"));
    let world = World::with_wallets(&[ac.clone(), bc.clone()], &r.wallets);
    let mut net = Network::new(world, r.seed);
    let e = |x: swaption_core::lightning::LightningError| x.to_string();
    for c in &r.channels {
        for chain in &c.chains {
            net.open_channel(chain, &c.a, &c.b, c.fund_a, c.fund_b).map_err(e)?;
        }
    }
    let mut named = BTreeMap::new();
    let mut hashes: BTreeMap<String, Hash> = BTreeMap::new();
    for route in &r.routes {
        let back: Vec<PartyId> = route.path.iter().rev().cloned().collect();
        let pa = net.path(&ac, &route.path).map_err(e)?;
        let pb = net.path(&bc, &back).map_err(e)?;
        let terms = RouteTerms { p_a: r.p_a, p_b: r.p_b, premium: r.premium, expiry: route.expiry, fee_bps: r.fee_bps };
        let hash = route.secret.as_ref().map(|s| hashes[s]);
        let id = route_swaption(&mut net, &pa, &pb, &terms, hash, bs).map_err(e)?;
        hashes.insert(route.name.clone(), net.positions[id].hash);
        match &route.decouple {
            Some(node) => {
                let (short, long) = decouple(&mut net, id, node, bs).map_err(e)?;
                named.insert(format!("{}.short", route.name), short);
                named.insert(format!("{}.long", route.name), long);
            }
            None => {
                named.insert(route.name.clone(), id);
            }
        }
    }
    if let Some((p, q)) = &r.unwind {
        unwind(&mut net, named[p], named[q], bs).map_err(e)?;
    }
    Ok((net, named))
}

fn topology(net: &Network) -> Vec<String> {
    let mut v: Vec<String> = net
        .open_positions()
        .map(|x| {
            let owner = net.secret_owner(&x.hash).map(|p| p.to_string()).unwrap_or_else(|| "?".into());
            format!("{}->{}:{}", x.writer, x.holder, owner)
        })
        .collect();
    v.sort();
    v
}

fn routed_case(out: &mut Out, r: &Routed, case: &Case) {
    out.text(format!("== case {}", case.name));
    out.record(format!("case {}", case.name));
    let Play::Routed { behaviors, close } = &case.play else { return };
    let (mut net, named) = match build_network(r, behaviors) {
        Ok(x) => x,
        Err(e) => return out.fail(e),
    };
    for (name, id) in &named {
        let p = &net.positions[*id];
        out.text(format!("position {name}: writer {} holder {} status {:?}", p.writer, p.holder, p.status));
        out.record(format!("position {name} {} {} {:?}", p.writer, p.holder, p.status));
    }
    let topo = topology(&net);
    out.text(format!("topology {}", topo.join(" ")));
    out.record(format!("topology {}", topo.join(" ")));
    if let Some(want) = &r.topology {
        let mut want = want.clone();
        want.sort();
        if want != topo {
            out.fail(format!("topology {} expected {}", topo.join(" "), want.join(" ")));
        }
    }
    if *close {
        for i in 0..net.channels.len() {
            if net.channels[i].is_open() {
                let party = net.channels[i].parties.0.clone();
                if let Err(err) = net.close(i, &party) {
                    return out.fail(err.to_string());
                }
            }
        }
    }
    let delay = behaviors.values().map(|b| b.relay_delay).max().unwrap_or(0);
    let last = net.positions.iter().flat_map(|p| p.hops.iter().map(|h| h.expiry)).max().unwrap_or(0);
    if let Err(err) = settle(&mut net, behaviors, last + delay + 4) {
        return out.fail(err.to_string());
    }
    for ev in &net.log {
        out.text(ev.to_string());
        out.record(format!("event {ev}"));
    }
    let mut initial: BTreeMap<(PartyId, ChainId), i128> = BTreeMap::new();
    for (c, p, a) in &r.wallets {
        *initial.entry((p.clone(), c.clone())).or_default() += a.0 as i128;
    }
    let deltas: BTreeMap<(PartyId, ChainId), i128> = initial
        .iter()
        .map(|((p, c), start)| ((p.clone(), c.clone()), net.holdings(p, c).0 as i128 - start))
        .collect();
    let live = net.live_contracts();
    if !live.is_empty() {
        out.fail(format!("{} contracts still live at the horizon", live.len()));
    }
    out.text("deltas");
    out.deltas(&deltas, &case.expect);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse;

    #[test]
    fn signed_rendering() {
        assert_eq!(Signed(-1_100_000).to_string(), "-1.1");
        assert_eq!(Signed(0).to_string(), "+0");
        assert_eq!(format!("{:>5}", Signed(1_000_000)), "   +1");
    }

    #[test]
    fn mismatch_fails_the_report() {
        let text = "protocol = \"swap\"\n[strategy]\nalice = \"fund accept\"\nbob = \"fund\"\n[expect]\nalice = { ACoin = -1, BCoin = 2 }\n";
        let sc = parse(text, "t").unwrap();
        let rep = run_scenario(&sc, &Options::default());
        assert!(!rep.passed);
        assert!(rep.text.contains("expect alice BCoin +2 got +1 MISMATCH"), "{}", rep.text);
    }

    #[test]
    fn records_format_is_line_tagged() {
        let text = "protocol = \"swap\"\n[strategy]\nalice = \"fund accept\"\nbob = \"fund\"\n";
        let sc = parse(text, "t").unwrap();
        let rep = run_scenario(&sc, &Options { format: Format::Records, ..Options::default() });
        let tags: BTreeSet<&str> = rep.text.lines().map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(tags, ["case", "delta", "event", "result", "scenario"].into());
    }
}
