use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn swaption(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swaption")).args(args).output().expect("binary runs")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn enumerate_swap_with_honest_bob() {
    let o = swaption(&["run", "fig2_swap", "--enumerate", "--honest", "bob"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("violations over")).unwrap();
    assert!(line.starts_with("0 violations over "), "{line}");
    assert!(!text.contains("honest=alice"));
}

#[test]
fn mutant_exits_one() {
    let o = swaption(&["run", "mutant_swap"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("result FAIL"));
}

#[test]
fn cheat_trace_shows_both_remedies() {
    let o = swaption(&["run", "fig4_cheat"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("exercise.breach") && text.contains("cancel.breach"));
    assert!(text.contains("bob ACoin 1.1 (+1.1)"));
    assert!(text.contains("bob BCoin 1 (+0)"));
}

#[test]
fn payoff_table_has_two_columns_and_kinks() {
    let o = swaption(&["run", "fig6_payoff", "--grid", "0.5:2.0:0.01", "--numeraire", "acoin"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).collect();
    assert_eq!(rows.len(), 151);
    assert!(rows.iter().all(|r| r.split(' ').count() == 2));
    assert!(text.contains("# kinks 1 1.25"));
}

#[test]
fn late_margin_expiry_is_a_parse_error() {
    let path = data("late_margin.toml");
    let o = swaption(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("margin expiry must precede swaption expiry"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn empty_file_is_a_syntax_error() {
    let path = data("empty.toml");
    let o = swaption(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("syntax error"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(swaption(&["run"]).status.code(), Some(2));
    assert_eq!(swaption(&["run", "no_such"]).status.code(), Some(2));
    assert_eq!(swaption(&["run", "fig2", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(swaption(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn list_names_every_bundled_scenario() {
    let o = swaption(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in ["fig1_htlc", "fig2_swap", "fig3_swaption", "fig4_cheat", "fig5_margin", "fig6_payoff", "fig7_unwind"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn out_dir_gets_one_file_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = swaption(&["run", "fig1", "fig3", "--format", "records", "--jobs", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["fig1_htlc", "fig3_swaption"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{name}.records"))).unwrap();
        assert!(text.starts_with(&format!("scenario {name}\n")));
        assert!(text.lines().any(|l| l.starts_with("event ")));
    }
}

#[test]
fn file_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mine.toml");
    std::fs::write(
        &path,
        "protocol = \"htlc\"\n[terms]\npayer = \"bob\"\npayee = \"alice\"\namount = \"0.5\"\nexpiry = 4\n\n[strategy]\nbob = \"fund\"\nalice = \"accept\"\n\n[expect]\nalice = { BCoin = 0.5 }\n",
    )
    .unwrap();
    let o = swaption(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).starts_with("scenario mine\n"));
}
