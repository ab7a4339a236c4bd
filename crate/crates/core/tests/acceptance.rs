use mixlyap::acceptance::{run_criterion, AcceptanceOptions, CRITERIA};

fn main() {
    let only: Vec<u8> = std::env::var("MIXLYAP_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut options = AcceptanceOptions::default();
    if let Some(seed) = std::env::var("MIXLYAP_SEED").ok().and_then(|s| s.parse().ok()) {
        options.seed = seed;
    }
    let mut failed = 0;
    for (id, _) in CRITERIA {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let r = run_criterion(id, &options);
        println!("{}", r.line());
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
