use calmapf::cachestore::Policy;
use calmapf::gridmap::{GridMap, GroupMode};
use calmapf::maps;
use calmapf::sim::{run, DistSpec, SimConfig};
use std::time::Instant;

fn main() {
    // Toy map soak: 4 agents (half the aisle count), many seeds, all policies.
    let toy = GridMap::parse(maps::TOY).unwrap();
    let t0 = Instant::now();
    for policy in [Policy::Lru, Policy::Fifo, Policy::Random, Policy::None] {
        for seed in 0..50 {
            let mut cfg = SimConfig::new(
                toy.clone(), 4, GroupMode::SinglePort, policy,
                DistSpec::Mk { window: 10, kinds: 2 },
            );
            cfg.queue_len = 20;
            cfg.seed = seed;
            cfg.validate = true;
            match run(&cfg) {
                Ok(m) => assert_eq!(m.deliveries, 20),
                Err(e) => panic!("toy {policy} seed {seed}: {e}"),
            }
        }
    }
    println!("toy soak ok in {:?}", t0.elapsed());

    // Paper-scale multi-port: 32 agents, short queues.
    let multi = GridMap::parse(&maps::warehouse_multi()).unwrap();
    let t0 = Instant::now();
    for (policy, seed) in [(Policy::Lru, 1), (Policy::None, 2), (Policy::Random, 3), (Policy::Fifo, 4)] {
        let mut cfg = SimConfig::new(
            multi.clone(), 32, GroupMode::MultiPort, policy,
            DistSpec::Mk { window: 200, kinds: 20 },
        );
        cfg.queue_len = 80;
        cfg.seed = seed;
        cfg.validate = true;
        let m = run(&cfg).unwrap();
        println!("multi {policy} seed {seed}: makespan {} hit_rate {:.3} in {:?}", m.makespan, m.hit_rate, t0.elapsed());
    }

    // Paper-scale single-port: the acceptance-critical shape.
    let single = GridMap::parse(&maps::warehouse_single()).unwrap();
    let t0 = Instant::now();
    for (policy, kinds) in [(Policy::Lru, 1), (Policy::Lru, 20), (Policy::None, 20)] {
        let mut cfg = SimConfig::new(
            single.clone(), 32, GroupMode::SinglePort, policy,
            DistSpec::Mk { window: 200, kinds },
        );
        cfg.queue_len = 1000;
        cfg.seed = 7;
        cfg.validate = true;
        let m = run(&cfg).unwrap();
        println!("single {policy} K={kinds}: makespan {} hit_rate {:.3} status1 {} elapsed {:?}", m.makespan, m.hit_rate, m.status1_entries, t0.elapsed());
    }
}
