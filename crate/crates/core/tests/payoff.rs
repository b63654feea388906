use std::collections::BTreeMap;

use swaption_core::chainsim::{Amount, ChainId, PartyId, World};
use swaption_core::econ::{
    decompose, forward_payoff, intrinsic_value, kinks, open_future, parse_grid, payoff_curve, Numeraire, Price,
    PricePath,
};
use swaption_core::engine::{game_value, Action, FutureTerms, Policy, Strategy, SwaptionTerms};

fn slope_changes(points: &[(Price, Price)]) -> Vec<Price> {
    let slopes: Vec<Price> = points.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    slopes.windows(2).enumerate().filter(|(_, s)| s[0] != s[1]).map(|(i, _)| points[i + 1].0).collect()
}

#[test]
fn game_tree_matches_formula_on_grid() {
    let terms = SwaptionTerms::margined_example();
    let grid = parse_grid("0.5:2.0:0.005").unwrap();
    assert!(grid.len() >= 200);
    for r in &grid {
        let g = game_value(&terms, *r).unwrap();
        assert_eq!(g.alice, intrinsic_value(&terms, *r, Numeraire::ACoin).unwrap(), "r = {r}");
        assert!(g.alice_default <= g.alice_honor);
    }
}

#[test]
fn curve_kinks_in_both_numeraires() {
    let terms = SwaptionTerms::margined_example();
    let grid = parse_grid("0.5:2.0:0.005").unwrap();
    let a = payoff_curve(&terms, &grid, Numeraire::ACoin).unwrap();
    assert_eq!(slope_changes(&a), kinks(&terms));
    assert_eq!(kinks(&terms), vec![Price::from_integer(1), Price::new(5, 4)]);
    assert!(a.windows(2).all(|w| w[0].1 <= w[1].1));

    // BCoin values are linear in the BCoin price 1/r
    let b = payoff_curve(&terms, &grid, Numeraire::BCoin).unwrap();
    let mut inv: Vec<(Price, Price)> = b.iter().map(|(r, v)| (r.recip(), *v)).collect();
    inv.reverse();
    let mut expect: Vec<Price> = kinks(&terms).iter().map(|k| k.recip()).collect();
    expect.reverse();
    assert_eq!(slope_changes(&inv), expect);
    assert!(inv.windows(2).all(|w| w[0].1 >= w[1].1));
}

#[test]
fn spread_reproduces_curve() {
    let terms = SwaptionTerms::margined_example();
    let s = decompose(&terms);
    for n in [Numeraire::ACoin, Numeraire::BCoin] {
        for (r, v) in payoff_curve(&terms, &parse_grid("0.5:2.0:0.001").unwrap(), n).unwrap() {
            assert_eq!(s.payoff(r, n), v);
        }
    }
}

fn future_terms() -> FutureTerms {
    FutureTerms { swaption: SwaptionTerms { premium: Amount::ZERO, ..SwaptionTerms::margined_example() } }
}

fn alice_value(r: Price) -> Price {
    let t = &future_terms().swaption;
    let (ac, bc) = (ChainId::new("ACoin"), ChainId::new("BCoin"));
    let (alice, bob) = (PartyId::new("alice"), PartyId::new("bob"));
    let mut world = World::with_wallets(
        &[ac.clone(), bc.clone()],
        &[(ac.clone(), alice.clone(), Amount::coins(2)), (bc.clone(), bob.clone(), Amount::coins(2))],
    );
    let rational = || Strategy::Rational {
        policy: Policy::honest(&[Action::Fund, Action::Accept, Action::DepositPrincipal, Action::Exercise]),
        prices: PricePath::constant(Price::from_integer(1)),
    };
    let strategies: BTreeMap<PartyId, Strategy> = [(alice.clone(), rational()), (bob.clone(), rational())].into();
    let trace = open_future(&mut world, &future_terms(), &strategies, &PricePath::constant(r)).unwrap();
    let o = &trace.outcome;
    assert_eq!(
        Price::from_integer(o.delta(&alice, &ac) + o.delta(&bob, &ac)),
        Price::from_integer(0),
        "ACoin conserved between the parties"
    );
    assert_eq!(t.p_a, Amount::coins(1));
    Price::from_integer(o.delta(&alice, &ac)) + r * Price::from_integer(o.delta(&alice, &bc))
}

#[test]
fn future_is_linear_inside_band() {
    let terms = future_terms().swaption;
    for r in parse_grid("0.8:1.25:0.01").unwrap() {
        assert_eq!(alice_value(r), forward_payoff(&terms, r), "r = {r}");
    }
    assert_eq!(alice_value(Price::new(11, 10)), Price::from_integer(100_000));
    assert_eq!(alice_value(Price::new(9, 10)), Price::from_integer(-100_000));
    assert_eq!(alice_value(Price::from_integer(1)), Price::from_integer(0));
}
