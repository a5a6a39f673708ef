//! Quick closed-form checks, one line of output each.

use std::io::Write;

use lowrank::geometry::{compressive_width_bracket, kernel_basis, mwp_constant, width_upper_bound, WidthParams};
use lowrank::measurements::{delta_from_gamma, entry_mask_operator, full_vectorization, gaussian_operator, DEFAULT_MEMORY_GUARD_MB};
use lowrank::schatten::{best_rank_error, schatten_norm, weak_schatten_norm};
use lowrank::solvers::{recover_nuclear, svt, SolveOptions};
use lowrank::stability::{exact_recovery_threshold, stability_constants};
use lowrank::{Exec, Mat};

type Check = fn() -> Result<(), String>;

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol * want.abs().max(1.0) {
        Ok(())
    } else {
        Err(format!("{name}: got {got}, want {want}"))
    }
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn identity_norms() -> Result<(), String> {
    let i = Mat::identity(4);
    close("S_1(I_4)", schatten_norm(&i, 1.0).map_err(e)?, 4.0, 1e-12)?;
    close("S_2(I_4)", schatten_norm(&i, 2.0).map_err(e)?, 2.0, 1e-12)?;
    close("S_1/2(I_4)", schatten_norm(&i, 0.5).map_err(e)?, 16.0, 1e-12)?;
    close("S_inf(I_4)", schatten_norm(&i, f64::INFINITY).map_err(e)?, 1.0, 1e-12)
}

fn weak_norm_of_diag() -> Result<(), String> {
    // max_k k·σ_k over (3, 2, 1) is 2·2 = 4
    close("weak S_1", weak_schatten_norm(&Mat::diag(&[3.0, 2.0, 1.0]), 1.0).map_err(e)?, 4.0, 1e-12)
}

fn best_rank_error_diag() -> Result<(), String> {
    close("rho_1", best_rank_error(&Mat::diag(&[3.0, 2.0, 1.0]), 1, 1.0).map_err(e)?, 3.0, 1e-12)
}

fn svt_shrinks() -> Result<(), String> {
    let z = svt(&Mat::diag(&[3.0, 1.0, 0.5]), 1.0).map_err(e)?;
    close("svt", schatten_norm(&z, 1.0).map_err(e)?, 2.0, 1e-12)
}

fn threshold_t_equals_s() -> Result<(), String> {
    let want = 4.0 * 2f64.sqrt() - 3.0;
    for p in [1.0, 0.5, 0.25] {
        close("threshold", exact_recovery_threshold(p, 3, 3).map_err(e)?, want, 1e-12)?;
    }
    close("threshold t=4s", exact_recovery_threshold(1.0, 1, 4).map_err(e)?, 1.0 + 8.0 * (2f64.sqrt() - 1.0), 1e-12)
}

fn constants_at_gamma_one() -> Result<(), String> {
    // γ = 1: μ = 0, so C1 = 2^{2/p − 1}
    let k = stability_constants(1.0, 1.0, 1, 1).map_err(e)?;
    close("mu", k.mu, 0.0, 1e-15)?;
    close("C1", k.c1, 2.0, 1e-12)
}

fn delta_of_threshold() -> Result<(), String> {
    let d = delta_from_gamma(4.0 * 2f64.sqrt() - 3.0).map_err(e)?;
    close("delta", d, 2.0 * (3.0 - 2f64.sqrt()) / 7.0, 1e-12)
}

fn bracket() -> Result<(), String> {
    let (lo, hi) = compressive_width_bracket(0.5, 0.5).map_err(e)?;
    close("lower", lo, 0.5, 0.0)?;
    close("upper", hi, 2.0, 1e-15)
}

fn full_operator_kernel() -> Result<(), String> {
    let kb = kernel_basis(&full_vectorization(3), DEFAULT_MEMORY_GUARD_MB).map_err(e)?;
    close("dim ker", kb.dim() as f64, 0.0, 0.0)?;
    let zero = entry_mask_operator(2, &[(0, 0), (0, 1), (1, 0), (1, 1)], 0.0).map_err(e)?;
    close("dim ker of zero map", kernel_basis(&zero, DEFAULT_MEMORY_GUARD_MB).map_err(e)?.dim() as f64, 4.0, 0.0)?;
    close("mwp trivial", mwp_constant(&full_vectorization(3), 3, 0, 1).map_err(e)?.constant, 0.0, 0.0)
}

fn zero_measurements_recover_zero() -> Result<(), String> {
    let op = gaussian_operator(4, 6, 1).map_err(e)?;
    let r = recover_nuclear(&op, &[0.0; 6], 0.0, 0.0, &SolveOptions::default()).map_err(e)?;
    close("zero", r.minimizer.max_abs(), 0.0, 0.0)
}

fn full_measurements_recover_everything() -> Result<(), String> {
    let mut p = WidthParams::new(4, 16, 1.0, 2.0, 2, 3);
    p.probe_trials = 0;
    let w = width_upper_bound(&p, Exec::Sequential).map_err(e)?;
    if w.estimate <= 1e-7 {
        Ok(())
    } else {
        Err(format!("width at m = N^2: {}", w.estimate))
    }
}

const CHECKS: &[(&str, Check)] = &[
    ("identity-norms", identity_norms),
    ("weak-norm", weak_norm_of_diag),
    ("best-rank-error", best_rank_error_diag),
    ("svt", svt_shrinks),
    ("threshold", threshold_t_equals_s),
    ("constants-gamma-one", constants_at_gamma_one),
    ("delta-threshold", delta_of_threshold),
    ("width-bracket", bracket),
    ("kernel-dims", full_operator_kernel),
    ("zero-measurements", zero_measurements_recover_zero),
    ("full-measurements", full_measurements_recover_everything),
];

/// Run every check; returns the number of failures.
pub fn run(out: &mut impl Write) -> usize {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => {
                let _ = writeln!(out, "ok   {name}");
            }
            Err(msg) => {
                failed += 1;
                let _ = writeln!(out, "FAIL {name}: {msg}");
            }
        }
    }
    let _ = writeln!(out, "{} checks, {failed} failed", CHECKS.len());
    failed
}
