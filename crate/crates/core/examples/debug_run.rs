//! Development aid: run one scenario and dump per-round text frames.
//!
//! Usage: debug_run <n> <faults-csv|-> <seed> <policy> [max_rounds] [--frames]

use linerecovery_core::harness::{gen_initial, run_scenario, Scenario};
use linerecovery_core::render::text_frame;
use linerecovery_core::scheduler::{step, Configuration, SchedulerPolicy, SchedulerState};
use linerecovery_core::trace::RoundEvent;

use rand::SeedableRng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(6);
    let faults: Vec<usize> = match args.get(2).map(|s| s.as_str()) {
        None | Some("-") => vec![],
        Some(csv) => csv.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect(),
    };
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
    let policy = match args.get(4).map(|s| s.as_str()).unwrap_or("sequential") {
        "full-sync" => SchedulerPolicy::FullSync,
        "random" => SchedulerPolicy::RandomSubset { p_activate: 0.5 },
        _ => SchedulerPolicy::Sequential,
    };
    let max_rounds: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0);
    let frames = args.iter().any(|a| a == "--frames");
    let verbose = args.iter().any(|a| a == "--verbose");

    let mut scenario = Scenario::new(n, &faults, seed, policy).unwrap();
    if max_rounds > 0 {
        scenario.max_rounds = max_rounds;
    }

    if frames {
        let mut config: Configuration = gen_initial(&scenario).unwrap();
        let mut sched = SchedulerState::new(
            scenario.policy.clone(),
            scenario.fairness_window,
            scenario.seed,
            &config,
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(scenario.seed ^ 0xc0f11c7);
        println!("{}", text_frame(&config));
        for _ in 0..scenario.max_rounds {
            let act = sched.choose(&config);
            match step(&mut config, &act, &mut rng) {
                Ok(o) => {
                    let interesting = !o.record.events.is_empty();
                    if verbose {
                        for p in &config.particles {
                            let slots: Vec<String> = p
                                .memory
                                .iter()
                                .flat_map(|((n, d), s)| {
                                    s.keys().map(move |k| format!("{:?}@({},{}){:?}", k, n.q, n.r, d))
                                })
                                .collect();
                            println!(
                                "  r{} p{} {:?} lt={} par={} parent={:?} dir={:?} mem=[{}]",
                                o.record.round,
                                p.id.0,
                                p.state,
                                p.flags.linetail,
                                p.lineparity,
                                p.parent,
                                p.dir,
                                slots.join(" ")
                            );
                        }
                    }
                    if interesting {
                        for e in &o.record.events {
                            match e {
                                RoundEvent::State { id, from, to, cause } => {
                                    println!("  r{} p{} {:?} -> {:?} ({:?})", o.record.round, id, from, to, cause)
                                }
                                RoundEvent::DroppedSend { from, kind, why } => {
                                    println!("  r{} p{} dropped {:?} ({})", o.record.round, from, kind, why)
                                }
                                RoundEvent::Warning { id, what } => {
                                    println!("  r{} p{} WARN {}", o.record.round, id, what)
                                }
                                _ => {}
                            }
                        }
                        println!("{}", text_frame(&config));
                    }
                }
                Err(e) => {
                    println!("FAULT: {e}");
                    break;
                }
            }
            if let Some(k) = linerecovery_core::harness::is_solved(&config) {
                println!("solved: {:?} at round {}", k, config.round);
                println!("{}", text_frame(&config));
                break;
            }
        }
        return;
    }

    match run_scenario(&scenario) {
        Ok(trace) => {
            println!("verdict: {:?}", trace.verdict);
            let states: Vec<RoundEvent> = trace
                .rounds
                .iter()
                .flat_map(|r| r.events.iter().cloned())
                .filter(|e| matches!(e, RoundEvent::State { .. } | RoundEvent::Warning { .. }))
                .collect();
            for e in states {
                if let RoundEvent::State { id, from, to, cause } = e {
                    println!("  p{} {:?} -> {:?} ({:?})", id, from, to, cause);
                } else if let RoundEvent::Warning { id, what } = e {
                    println!("  p{} WARN {}", id, what);
                }
            }
        }
        Err(e) => println!("error: {e}"),
    }
}
