use perfhom::rates::{fit_rate, RateLaw};
use perfhom::studies::{read_records, run_study, StudyConfig, StudyFile, StudyKind, RECORD_SCHEMA};
use perfhom::Error;

fn small_cell_study() -> StudyConfig {
    let mut cfg = StudyConfig::new("cell_small", StudyKind::CellLimit);
    cfg.holes = vec!["circle:0.25".into()];
    cfg.etas = vec![1e-2, 1e-3, 1e-4];
    cfg.nodes = 64;
    cfg.quadrature_grid = Some(128);
    cfg
}

#[test]
fn cell_study_records_one_point_per_eta() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_study(&small_cell_study(), dir.path()).unwrap();
    assert_eq!(out.records.len(), 3);
    assert!(out.records.iter().all(|r| r.error.is_none()));
    let etas: Vec<f64> = out.records.iter().map(|r| r.id.eta.unwrap()).collect();
    assert_eq!(etas, vec![1e-2, 1e-3, 1e-4]);
    assert!(!out.fits.is_empty());
    assert!(out.fits[0].fit.r_squared.is_finite());

    let text = std::fs::read_to_string(&out.csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(RECORD_SCHEMA));
    assert_eq!(
        lines.next(),
        Some("study,point,label,hole,epsilon,eta,nodes,grid,quantity,value,tolerance,wall_time_s,error")
    );
    let rows = read_records(&out.csv).unwrap();
    let n_meas: usize = out.records.iter().map(|r| r.measurements.len()).sum();
    assert_eq!(rows.len(), n_meas);
    assert!(rows.iter().all(|r| r["study"] == "cell_small" && r["hole"] == "circle:0.25"));

    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out.sidecar).unwrap()).unwrap();
    assert_eq!(side["status"], "done");
    assert_eq!(side["passed"], serde_json::Value::Bool(out.passed));
}

#[test]
fn rerun_gives_identical_records() {
    let cfg = small_cell_study();
    let a = run_study(&cfg, tempfile::tempdir().unwrap().path()).unwrap();
    let b = run_study(&cfg, tempfile::tempdir().unwrap().path()).unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!(x.matches(y, 0.0), "{x:?} vs {y:?}");
    }
}

#[test]
fn empty_epsilon_list_is_a_config_error() {
    let mut cfg = StudyConfig::new("oracle_empty", StudyKind::OracleStructure);
    cfg.holes = vec!["circle:0.25".into()];
    cfg.etas = vec![0.25];
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_study(&cfg, dir.path()), Err(Error::Config(_))));
    // nothing is written for a rejected config
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn unknown_keys_rejected() {
    let text = "[[study]]\nname = \"a\"\nkind = \"a_tensor\"\nholes = [\"circle:0.25\"]\nnodez = 3\n";
    assert!(StudyFile::parse(text).is_err());
    let dup = "[[study]]\nname = \"a\"\nkind = \"a_tensor\"\n[[study]]\nname = \"a\"\nkind = \"a_tensor\"\n";
    assert!(StudyFile::parse(dup).is_err());
}

#[test]
fn shipped_file_round_trips() {
    let f = StudyFile::default_file();
    let again = StudyFile::parse(&f.to_toml().unwrap()).unwrap();
    assert_eq!(f.studies, again.studies);
    for s in &f.studies {
        s.validate().unwrap();
    }
}

#[test]
fn fit_rate_recovers_exact_laws() {
    let xs = [0.5, 0.25, 0.125, 0.0625];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 2.0 * x.powf(1.5)).collect();
    let f = fit_rate(&xs, &ys, RateLaw::Power).unwrap();
    assert!((f.coefficient - 2.0).abs() < 1e-12 && (f.exponent - 1.5).abs() < 1e-12);
    assert!((f.r_squared - 1.0).abs() < 1e-12);

    let etas = [1e-2, 1e-3, 1e-4];
    let ys: Vec<f64> = etas.iter().map(|e: &f64| 3.0 / e.ln().abs()).collect();
    let f = fit_rate(&etas, &ys, RateLaw::InverseLog).unwrap();
    assert!((f.coefficient - 3.0).abs() < 1e-12 && (f.exponent - 1.0).abs() < 1e-12);

    assert!(fit_rate(&xs[..2], &ys[..2], RateLaw::Power).is_err());
    assert!(fit_rate(&[0.1, 0.2, 0.3], &[1.0, 0.0, 1.0], RateLaw::Power).is_err());
}
