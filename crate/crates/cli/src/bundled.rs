//! Scenarios compiled into the binary.

pub const BUNDLED: &[(&str, &str)] = &[
    ("fig1_htlc", include_str!("../scenarios/fig1_htlc.toml")),
    ("fig2_swap", include_str!("../scenarios/fig2_swap.toml")),
    ("fig3_swaption", include_str!("../scenarios/fig3_swaption.toml")),
    ("fig4_cancellable", include_str!("../scenarios/fig4_cancellable.toml")),
    ("fig4_cheat", include_str!("../scenarios/fig4_cheat.toml")),
    ("fig5_margin", include_str!("../scenarios/fig5_margin.toml")),
    ("fig6_payoff", include_str!("../scenarios/fig6_payoff.toml")),
    ("fig7_unwind", include_str!("../scenarios/fig7_unwind.toml")),
    ("future", include_str!("../scenarios/future.toml")),
    ("mutant_margin", include_str!("../scenarios/mutant_margin.toml")),
    ("mutant_swap", include_str!("../scenarios/mutant_swap.toml")),
    ("routed_3hop", include_str!("../scenarios/routed_3hop.toml")),
];

/// Resolves an exact name or a unique prefix.
pub fn lookup(name: &str) -> Result<(&'static str, &'static str), String> {
    if let Some(hit) = BUNDLED.iter().find(|(n, _)| *n == name) {
        return Ok(*hit);
    }
    let hits: Vec<_> = BUNDLED.iter().filter(|(n, _)| n.starts_with(name)).collect();
    match hits.as_slice() {
        [one] => Ok(**one),
        [] => Err(format!("no bundled scenario named {name:?}")),
        many => {
            let names: Vec<&str> = many.iter().map(|(n, _)| *n).collect();
            Err(format!("{name:?} is ambiguous: {}", names.join(", ")))
        }
    }
}
