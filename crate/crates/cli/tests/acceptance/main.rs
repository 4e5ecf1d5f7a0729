//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//!
//! `CAMSEG_ACCEPTANCE=1,4` restricts the run to the listed criteria. Red
//! criteria are reported, not raised: defects are caught by the unit,
//! integration and property tests, while several criteria here compare
//! against expected findings that may honestly not hold. Set
//! `CAMSEG_ACCEPTANCE_STRICT=1` to make any red criterion fail the process.

mod benchmark;
mod determinism;
mod gradients;
mod sampler;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

struct Criterion {
    id: u32,
    name: &'static str,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "gradient correctness",
        run: gradients::run,
    },
    Criterion {
        id: 2,
        name: "sampler fidelity",
        run: sampler::run,
    },
    Criterion {
        id: 3,
        name: "normalisation invariants",
        run: invariants::run,
    },
    Criterion {
        id: 4,
        name: "metric oracles",
        run: oracles::run,
    },
    Criterion {
        id: 5,
        name: "sampling beats max pooling (λ=1 vs λ=0)",
        run: benchmark::lambda_gain,
    },
    Criterion {
        id: 6,
        name: "similarity loss improves contours",
        run: benchmark::fsl_gain,
    },
    Criterion {
        id: 7,
        name: "no n_samples trend",
        run: benchmark::n_samples_flat,
    },
    Criterion {
        id: 8,
        name: "CLI determinism",
        run: determinism::run,
    },
];

fn selected() -> Option<Vec<u32>> {
    let list = std::env::var("CAMSEG_ACCEPTANCE").ok()?;
    Some(
        list.split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect(),
    )
}

fn main() -> ExitCode {
    let only = selected();
    let strict = std::env::var("CAMSEG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut red = Vec::new();
    for c in CRITERIA {
        if only.as_ref().is_some_and(|ids| !ids.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        println!(
            "{} criterion {} ({}) [{:.1}s]: {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        if !outcome.passed {
            red.push(c.id);
        }
    }
    if red.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {red:?}");
        if strict {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    }
}
