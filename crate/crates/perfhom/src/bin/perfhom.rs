use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use perfhom::bie::kernel_basis;
use perfhom::cell::{effective_matrix, sigma, solve_cell, EffectiveRegime, MConvention, QuadratureOptions};
use perfhom::geometry::{build_perforation, make_curve, panelize};
use perfhom::homogenize::{required_grid, solve_perforated, standard_forcing};
use perfhom::studies::{run_file, StudyFile, StudyOutcome};
use perfhom::{CurveKind, LameParams};

#[derive(Parser)]
#[command(name = "perfhom", version, about = "Lamé layer potentials and homogenization in perforated domains")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the shipped acceptance studies; exit code 0 iff all mandatory checks pass.
    Verify {
        /// Also run studies marked slow.
        #[arg(long)]
        slow: bool,
        #[arg(long, default_value = "perfhom-out")]
        output: PathBuf,
    },
    /// Kernel basis φ*_j and the tensor A_T of one hole.
    KernelBasis {
        #[arg(long, default_value = "circle:0.25")]
        hole: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 256)]
        nodes: usize,
    },
    /// Solve the cell problem at one η and print ⟨χ⟩, the classical M and diagnostics.
    Cell {
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value = "circle:0.25")]
        hole: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 256)]
        nodes: usize,
        #[arg(long, default_value_t = 128)]
        quadrature_grid: usize,
        #[arg(long, default_value = "proof")]
        convention: String,
    },
    /// Run the studies of a TOML study file.
    Study {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        slow: bool,
        /// Run only the named study (slow or not).
        #[arg(long)]
        only: Option<String>,
        /// Print the shipped default study file and exit.
        #[arg(long)]
        print_default: bool,
    },
    /// Finite-difference solve in the perforated unit square.
    Oracle {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, default_value = "circle:0.25")]
        hole: String,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Write the field as a binary grid file.
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

fn report(outcomes: &[StudyOutcome]) -> bool {
    let mut ok = true;
    for o in outcomes {
        println!("== {} ({}) -> {}", o.name, o.kind, o.csv.display());
        for f in &o.fits {
            println!(
                "   fit {}: C = {:.4e}, exponent = {:.4}, R^2 = {:.4}",
                f.name, f.fit.coefficient, f.fit.exponent, f.fit.r_squared
            );
        }
        for c in &o.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let opt = if c.mandatory { "" } else { " (optional)" };
            println!("   {tag} {}: {:.4e} [{}]{opt}", c.name, c.value, c.condition);
        }
        ok &= o.passed;
    }
    ok
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Verify { slow, output } => {
            let mut file = StudyFile::default_file();
            file.output_dir = output;
            Ok(report(&run_file(&file, slow, None)?))
        }
        Cmd::KernelBasis { hole, lambda, mu, nodes } => {
            let params = LameParams::planar(lambda, mu)?;
            let curve = make_curve(CurveKind::from_str(&hole)?)?;
            let kb = kernel_basis(&panelize(&curve, nodes)?, &params)?;
            println!("hole {hole}, nodes {nodes}, lambda {lambda}, mu {mu}");
            println!("A_T = [[{:.12e}, {:.12e}], [{:.12e}, {:.12e}]]", kb.a_t[(0, 0)], kb.a_t[(0, 1)], kb.a_t[(1, 0)], kb.a_t[(1, 1)]);
            println!("singular values of -I/2 + K*: {:?}", kb.singular_values);
            println!("null residual {:.3e}, constancy residual {:.3e}", kb.null_residual, kb.constancy_residual);
            Ok(kb.singular_values[1] <= perfhom::bie::KERNEL_TOL && kb.singular_values[2] >= perfhom::bie::GAP_TOL)
        }
        Cmd::Cell { eta, hole, lambda, mu, nodes, quadrature_grid, convention } => {
            let params = LameParams::planar(lambda, mu)?;
            let curve = make_curve(CurveKind::from_str(&hole)?)?;
            let conv = MConvention::from_str(&convention)?;
            let sol = solve_cell(&curve, eta, &params, nodes)?;
            let mom = sol.moments(&QuadratureOptions::from_grid(quadrature_grid));
            let em = effective_matrix(EffectiveRegime::Classical, &params, Some(&sol), conv)?;
            let a = sol.average;
            println!("eta {eta}, hole {hole}");
            println!("<chi> = [[{:.10e}, {:.10e}], [{:.10e}, {:.10e}]]", a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            println!("<chi>/|log eta| vs c1/2pi = {:.10e}", params.c1() / (2.0 * std::f64::consts::PI));
            println!("quadrature cross-check |<chi> - mean| = {:.3e}", (mom.mean - a).amax());
            println!("L2 deviation = {:.6e}", sol.l2_deviation(&mom));
            println!("M ({convention}) = {}", em.m);
            println!("balance residual {:.3e}, condition {:.3e}", sol.balance_residual, sol.condition);
            Ok(sol.balance_residual.is_finite())
        }
        Cmd::Study { config, slow, only, print_default } => {
            if print_default {
                print!("{}", perfhom::studies::DEFAULT_STUDIES);
                return Ok(true);
            }
            let file = match config {
                Some(p) => StudyFile::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => StudyFile::default_file(),
            };
            Ok(report(&run_file(&file, slow, only.as_deref())?))
        }
        Cmd::Oracle { epsilon, eta, grid, hole, lambda, mu, export } => {
            let params = LameParams::planar(lambda, mu)?;
            let curve = make_curve(CurveKind::from_str(&hole)?)?;
            let perf = build_perforation(epsilon, eta, &curve)?;
            let n = grid.unwrap_or_else(|| required_grid(&perf));
            let sol = solve_perforated(&perf, &standard_forcing, &params, n)?;
            let s = sigma(epsilon, eta, 2)?;
            println!("epsilon {epsilon}, eta {eta}, grid {n}, sigma {s:.6e}");
            println!("||u||_L2 = {:.6e}, |u|_H1 = {:.6e}", sol.field.l2_norm(), sol.field.h1_seminorm());
            println!("energy identity {:.3e}, CG iterations {}, residual {:.3e}", sol.energy_identity, sol.stats.iterations, sol.stats.relative_residual);
            if let Some(p) = export {
                sol.field.export_binary(&p)?;
                println!("wrote {}", p.display());
            }
            Ok(sol.energy_identity <= 1e-6)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
