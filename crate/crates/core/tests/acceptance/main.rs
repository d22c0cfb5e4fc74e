//! Acceptance suite: one PASS/FAIL line per criterion.

/// Fails the enclosing check with a formatted message. A NaN comparison
/// counts as false, so it fails too.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

mod budget;
mod counting;
mod geometry;
mod grammar;
mod group;
mod qc;
mod qplan;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("1 coordinate algebra", geometry::run),
        ("2 reward numerics", reward::run),
        ("3 plan score oracle", qplan::run),
        ("4 synthetic counting", counting::run),
        ("5 budget and depth", budget::run),
        ("6 grammar round trip", grammar::run),
        ("7 corpus gates", qc::run),
        ("8 group scoring", group::run),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({secs:.2}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
