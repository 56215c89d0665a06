//! The acceptance run: eight criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach stdout; the
//! process exits non-zero if any criterion fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use comit_core::channels::Party;
use comit_core::simnet::{random_scenario, run_scenario, PaymentStatus, Report, DEMOS};
use common::channel::{breach_case, random_op, updates_then_close};
use common::checks::{no_shortfall, random_quote_chain, routing_agrees};
use common::oracle::{onion_round_trip, tamper_detected};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const SCENARIOS: u64 = 500;

type Outcome = Result<String, String>;

/// Collects up to a few failure messages and the total count.
struct Failures {
    count: usize,
    first: Vec<String>,
}

impl Failures {
    fn new() -> Self {
        Failures { count: 0, first: Vec::new() }
    }

    fn push(&mut self, msg: String) {
        self.count += 1;
        if self.first.len() < 3 {
            self.first.push(msg);
        }
    }

    fn finish(self, ok: String) -> Outcome {
        if self.count == 0 {
            Ok(ok)
        } else {
            Err(format!("{} failures, e.g. {}", self.count, self.first.join(" | ")))
        }
    }
}

fn atomicity(reports: &[(u64, Report)]) -> Outcome {
    let mut fails = Failures::new();
    let mut counts = [0usize; 2];
    for (seed, report) in reports {
        for p in &report.payments {
            match p.status {
                PaymentStatus::Settled => counts[0] += 1,
                PaymentStatus::Refunded => counts[1] += 1,
                ref other => fails.push(format!("seed {seed}: payment {} ended {other:?}", p.index)),
            }
            if p.route.len() > 6 {
                fails.push(format!("seed {seed}: payment {} took {} hops", p.index, p.route.len() - 1));
            }
        }
        for v in &report.violations {
            if v.kind != "honest-loss" {
                fails.push(format!("seed {seed}: {} at tick {}: {}", v.kind, v.tick, v.detail));
            }
        }
    }
    fails.finish(format!("{SCENARIOS} scenarios, {} settled, {} refunded", counts[0], counts[1]))
}

fn no_honest_loss(reports: &[(u64, Report)]) -> Outcome {
    let mut fails = Failures::new();
    let mut checked = 0;
    for (seed, report) in reports {
        for v in report.violations.iter().filter(|v| v.kind == "honest-loss") {
            fails.push(format!("seed {seed}: {}", v.detail));
        }
        // Recompute from the balance table rather than trusting the
        // simulator's own verdict.
        for actor in report.balances.iter().filter(|a| a.honest) {
            for b in &actor.assets {
                checked += 1;
                if (b.total as i128) < b.entitled() {
                    fails.push(format!(
                        "seed {seed}: {} asset {} total {} < {}",
                        actor.actor,
                        b.asset,
                        b.total,
                        b.entitled()
                    ));
                }
            }
        }
    }
    fails.finish(format!("{checked} honest balances checked"))
}

fn breach_punishment() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut fails = Failures::new();
    let mut cases = 0;
    while cases < 100 {
        let ops: Vec<_> = (0..rng.gen_range(1..=20)).map(|_| random_op(&mut rng)).collect();
        let cheater = if rng.gen() { Party::A } else { Party::B };
        match breach_case(&ops, rng.gen(), cheater, rng.gen_range(1..10)) {
            Ok(true) => cases += 1,
            Ok(false) => {}
            Err(e) => {
                cases += 1;
                fails.push(e);
            }
        }
    }
    fails.finish("100 histories, justice confirmed within csv_delay".into())
}

fn routing_oracle() -> Outcome {
    let mut fails = Failures::new();
    for seed in 0..200 {
        if let Err(e) = routing_agrees(10_000 + seed) {
            fails.push(e);
        }
    }
    fails.finish("200 graphs agree with enumeration".into())
}

fn no_shortfall_math() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut fails = Failures::new();
    for _ in 0..10_000 {
        let quotes = random_quote_chain(&mut rng);
        if let Err(e) = no_shortfall(&quotes, rng.gen_range(1..5_000_000)) {
            fails.push(e);
        }
    }
    fails.finish("10000 quote chains deliver in full".into())
}

fn onion() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut fails = Failures::new();
    for n in 1..=20 {
        for _ in 0..5 {
            if let Err(e) = onion_round_trip(&mut rng, n) {
                fails.push(format!("{n} hops: {e}"));
            }
        }
    }
    let detected = (0..1000).filter(|_| tamper_detected(&mut rng)).count();
    if detected != 1000 {
        fails.push(format!("{} of 1000 tampered packets accepted", 1000 - detected));
    }
    fails.finish("lengths 1..=20 round trip, 1000/1000 tampers detected".into())
}

fn off_chain_efficiency() -> Outcome {
    match updates_then_close(1000)? {
        2 => Ok("1000 updates + cooperative close = 2 transactions".into()),
        n => Err(format!("{n} transactions on chain")),
    }
}

fn determinism() -> Outcome {
    let mut fails = Failures::new();
    for (name, _) in DEMOS {
        let path = format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let run = || Command::new(env!("CARGO_BIN_EXE_comit-sim")).args(["run", &path]).output();
        match (run(), run()) {
            (Ok(a), Ok(b)) if a.status.success() && a.stdout == b.stdout && !a.stdout.is_empty() => {}
            (Ok(a), Ok(b)) => fails.push(format!(
                "{name}: exit {:?}/{:?}, reports differ: {}",
                a.status,
                b.status,
                a.stdout != b.stdout
            )),
            (Err(e), _) | (_, Err(e)) => fails.push(format!("{name}: {e}")),
        }
    }
    fails.finish(format!("{} demos byte-identical across runs", DEMOS.len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let reports: Vec<(u64, Report)> = (0..SCENARIOS).map(|seed| (seed, run_scenario(&random_scenario(seed)))).collect();
    let criteria: [(&str, &dyn Fn() -> Outcome); 8] = [
        ("atomicity and conservation", &|| atomicity(&reports)),
        ("no honest loss", &|| no_honest_loss(&reports)),
        ("breach punishment", &breach_punishment),
        ("routing oracle", &routing_oracle),
        ("no-shortfall rate math", &no_shortfall_math),
        ("onion round trip", &onion),
        ("off-chain efficiency", &off_chain_efficiency),
        ("determinism", &determinism),
    ];
    let mut all_passed = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                all_passed = false;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
