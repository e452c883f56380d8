//! Acceptance criteria 1-12; one line per criterion. Criteria listed in
//! `KNOWN_DEVIATIONS` are reported but do not fail the target.

use std::time::Instant;

use gkdv_core::verify::{Suite, CRITERIA, KNOWN_DEVIATIONS};

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for id in CRITERIA {
            println!("criterion_{id:02}: test");
        }
        return;
    }
    let suite = Suite::new(std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("gkdv-cache"));
    let ids: Vec<u32> = CRITERIA.filter(|id| only.is_empty() || only.contains(id)).collect();
    println!("acceptance: {} criteria, known deviations {KNOWN_DEVIATIONS:?}", ids.len());
    let mut blocking = Vec::new();
    let mut unexpected = Vec::new();
    for id in ids {
        let t = Instant::now();
        let o = suite.check(id);
        println!("{} [{:.1}s]", o.line(), t.elapsed().as_secs_f64());
        if o.blocking() {
            blocking.push(id);
        }
        if o.pass && o.known_deviation() {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("note: known deviations {unexpected:?} passed");
    }
    if blocking.is_empty() {
        println!("acceptance: ok");
    } else {
        println!("acceptance: failed criteria {blocking:?}");
        std::process::exit(1);
    }
}
