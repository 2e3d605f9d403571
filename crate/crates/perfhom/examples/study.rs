//! Runs one study of the shipped default file (default: `determinism`) into
//! `perfhom-out/` and prints its checks.

use perfhom::studies::{run_study, StudyFile};

fn main() -> perfhom::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "determinism".into());
    let file = StudyFile::default_file();
    let cfg = file
        .get(&name)
        .ok_or_else(|| perfhom::Error::Config(format!("no study named `{name}`")))?;
    let out = run_study(cfg, &file.output_dir)?;
    println!("{} records -> {}", out.records.len(), out.csv.display());
    for f in &out.fits {
        println!("fit {}: exponent {:.3}, R^2 {:.4}", f.name, f.fit.exponent, f.fit.r_squared);
    }
    for c in &out.checks {
        println!("{} {}: {:.4e} [{}]", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
    }
    Ok(())
}
