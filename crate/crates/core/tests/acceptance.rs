//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::time::{Duration, Instant};

use cyl_levy::experiments::{execute, run, ExperimentConfig, ExperimentId, ExperimentOutput};

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdicts(o: &ExperimentOutput, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        match o.verdict_named(n) {
            Some(v) => {
                ok &= v.pass;
                parts.push(format!("{n}={} ({:.4} vs {:.4})", if v.pass { "ok" } else { "FAIL" }, v.value, v.reference));
            }
            None => {
                ok = false;
                parts.push(format!("{n}=missing"));
            }
        }
    }
    (ok, parts.join("; "))
}

fn config(id: ExperimentId, seed: u64) -> ExperimentConfig {
    ExperimentConfig::new(id, seed)
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    if elapsed > limit {
        o.pass = false;
    }
    o.detail = format!("{} [{:.1}s, limit {}s]", o.detail, elapsed.as_secs_f64(), limit.as_secs());
    o
}

fn gaussian_rate() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for p in [1.0, 1.5] {
        let mut c = config(ExperimentId::GaussianCounterexample, 11);
        c.p = Some(p);
        c.n_paths = Some(100_000);
        let o = execute(&c).expect("gaussian experiment runs");
        let (ok, d) = verdicts(&o, &["slope", "moment-closed-form"]);
        pass &= ok && o.table("ratio").len() == 11;
        detail.push(format!("p={p}: {d}"));
    }
    Outcome { pass, detail: detail.join(" | ") }
}

fn stable_rate() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (alpha, p) in [(1.5, 1.0), (1.9, 1.0)] {
        let mut c = config(ExperimentId::StableCounterexample, 12);
        c.p = Some(p);
        c.n_paths = Some(100_000);
        c.params = serde_json::json!({ "alpha": alpha });
        let o = execute(&c).expect("stable experiment runs");
        let (ok, d) = verdicts(&o, &["slope", "moment-closed-form"]);
        pass &= ok;
        detail.push(format!("α={alpha}, p={p}: {d}"));
    }
    Outcome { pass, detail: detail.join(" | ") }
}

fn increment_bounds() -> Outcome {
    let s = execute(&config(ExperimentId::SchwartzBound, 13)).expect("schwartz suite runs");
    let r = execute(&config(ExperimentId::RadonifyBound, 14)).expect("radonification suite runs");
    let (ok_s, ds) = verdicts(&s, &["schwartz-bounds", "p2-closed-form"]);
    let (ok_r, dr) = verdicts(&r, &["radonify-bounds"]);
    let sizes = s.table("schwartz").len() >= 50 && r.table("radonify").len() >= 50;
    Outcome {
        pass: ok_s && ok_r && sizes,
        detail: format!(
            "{} schwartz + {} radonification configs; {ds}; {dr}",
            s.table("schwartz").len(),
            r.table("radonify").len()
        ),
    }
}

fn integral_continuity() -> Outcome {
    let o = execute(&config(ExperimentId::IntegralContinuity, 15)).expect("continuity suite runs");
    let (ok, d) = verdicts(
        &o,
        &[
            "continuity-bounds",
            "drift-only-p1",
            "drift-only-p1.5",
            "drift-only-p2",
            "martingale-only-p2",
            "martingale-only-mc",
        ],
    );
    Outcome {
        pass: ok && o.table("continuity").len() >= 30,
        detail: format!("{} configs; {d}", o.table("continuity").len()),
    }
}

fn decay_and_counterexample() -> Outcome {
    let d = execute(&config(ExperimentId::DecayThm32, 16)).expect("decay runs");
    let mut g = config(ExperimentId::Grothendieck, 16);
    g.k = Some(64);
    let g = execute(&g).expect("grothendieck runs");
    let (ok_d, dd) = verdicts(&d, &["series-oracle", "decays"]);
    let (ok_g, dg) = verdicts(&g, &["constant-one", "non-convergence-detected"]);
    Outcome {
        pass: ok_d && ok_g && g.table("pi1").len() == 64,
        detail: format!("{dd}; {dg}"),
    }
}

fn condition_grid() -> Outcome {
    let o = execute(&config(ExperimentId::ConditionCheck, 17)).expect("condition check runs");
    let n = o.table("condition").len();
    let (ok, d) = verdicts(&o, &["all-match"]);
    Outcome {
        pass: ok && n == 20,
        detail: format!("{n} grid points; {d}"),
    }
}

fn picard() -> Outcome {
    let o = execute(&config(ExperimentId::PicardDemo, 18)).expect("picard demo runs");
    let (ok, d) = verdicts(
        &o,
        &["coefficient-bounds", "contraction-ratio", "euler-oracle", "ou-closed-form", "uniqueness"],
    );
    Outcome { pass: ok, detail: d }
}

fn reproducibility() -> Outcome {
    let small = |id: ExperimentId| {
        let mut c = config(id, 19);
        match id {
            ExperimentId::SchwartzBound | ExperimentId::RadonifyBound | ExperimentId::IntegralContinuity => {
                c.n_paths = Some(300);
                c.params = serde_json::json!({ "n_configs": 4, "closed_form_configs": 2 });
            }
            ExperimentId::GaussianCounterexample | ExperimentId::StableCounterexample => {
                c.n_paths = Some(2000);
                c.params = serde_json::json!({ "n_max": 64 });
            }
            ExperimentId::PicardDemo => {
                c.n_paths = Some(50);
                c.k = Some(8);
                c.params = serde_json::json!({ "grid_steps": 16, "ou_paths": 500 });
            }
            ExperimentId::ConvolutionIsometry => c.n_paths = Some(500),
            ExperimentId::Grothendieck => c.k = Some(8),
            _ => {}
        }
        c
    };
    let ids = cyl_levy::experiments::list_experiments();
    let mut pass = true;
    let mut differing = Vec::new();
    for e in &ids {
        let c = small(e.id);
        let a = tempfile::tempdir().expect("temp dir");
        let b = tempfile::tempdir().expect("temp dir");
        let ra = run(&c, a.path());
        let rb = run(&c, b.path());
        let same = match (ra, rb) {
            (Ok(_), Ok(_)) => {
                std::fs::read(a.path().join("results.csv")).ok() == std::fs::read(b.path().join("results.csv")).ok()
            }
            _ => false,
        };
        if !same {
            pass = false;
            differing.push(e.id.to_string());
        }
    }
    Outcome {
        pass,
        detail: if differing.is_empty() {
            format!("{} experiments rerun with byte-identical results.csv", ids.len())
        } else {
            format!("differing or failed: {}", differing.join(", "))
        },
    }
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("1 gaussian counterexample rate", Duration::from_secs(120), gaussian_rate),
        ("2 stable counterexample rate", Duration::from_secs(120), stable_rate),
        ("3 increment bounds suite", Duration::from_secs(300), increment_bounds),
        ("4 integral continuity suite", Duration::from_secs(300), integral_continuity),
        ("5 decay and l1-l2 counterexample", Duration::from_secs(300), decay_and_counterexample),
        ("6 condition checker grid", Duration::from_secs(300), condition_grid),
        ("7 picard solver", Duration::from_secs(300), picard),
        ("8 reproducibility", Duration::from_secs(600), reproducibility),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let o = timed(limit, f);
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
