use offload_core::executor::{execute_plan, sequential_oracle, AdamHyper, ExecMode};
use offload_core::scheduler::{assigned_fast, build_plan, Device, Placement, Stride};
use offload_core::sharding::{shard, ShardedOptimizer};
use offload_core::sim::{
    simulate_update_phase, simulate_update_phase_sized, sweep_stride, ApproachConfig,
};
use offload_core::{estimate_update_time, optimal_stride, SystemProfile, UpdateRatio};
use proptest::prelude::*;

fn placement() -> impl Strategy<Value = Placement> {
    prop_oneof![Just(Placement::StaticFirst), Just(Placement::StaticLast)]
}

fn stride() -> impl Strategy<Value = Stride> {
    prop_oneof![Just(Stride::AllCpu), (1u32..9).prop_map(Stride::Every)]
}

/// Random node in realistic proportions: the fast device updates at least
/// five times faster than the channel moves parameters.
fn profile() -> impl Strategy<Value = SystemProfile> {
    (0.5e9..20e9f64, 2e9..50e9f64, 1e9..30e9f64, 5.0..40.0f64).prop_map(|(uc, dc, b, g)| {
        let mut p = SystemProfile::v100_node();
        p.cpu_update_params_per_s = uc;
        p.host_downscale_params_per_s = dc;
        p.channel_params_per_s = b;
        p.fast_update_params_per_s = b * g;
        p
    })
}

proptest! {
    #[test]
    fn sharding_conserves_parameters(total in 1u64..1_000_000, sg in 1u64..50_000, ranks in 1u64..17) {
        let out = shard(total, sg, ranks).unwrap();
        prop_assert_eq!(out.len() as u64, ranks);
        let sum: u64 = out.iter().flatten().sum();
        prop_assert_eq!(sum, total);
        let per = total.div_ceil(ranks);
        for r in &out {
            prop_assert!(r.iter().sum::<u64>() <= per);
            prop_assert!(r.iter().all(|&c| c > 0 && c <= sg));
            // only the final chunk of a rank may be short
            if r.len() > 1 {
                prop_assert!(r[..r.len() - 1].iter().all(|&c| c == sg));
            }
        }
    }

    #[test]
    fn assignments_follow_the_predicate(n in 0usize..80, s in stride(), ratio in 0.0..=1.0f64, pl in placement()) {
        let plan = build_plan(n, s, ratio, pl).unwrap();
        let n_static = ((ratio * n as f64) + 1e-9).floor() as usize;
        prop_assert_eq!(plan.static_set.len(), n_static);
        for i in 0..n {
            let fast = assigned_fast(i, s, plan.static_set.contains(&i));
            prop_assert_eq!(plan.assignments[i] == Device::Fast, fast);
        }
        for (i, a) in plan.actions.iter().enumerate() {
            prop_assert_eq!(a.id, i);
            prop_assert!(a.depends_on.iter().all(|&d| d < i));
        }
    }

    #[test]
    fn every_simulated_timeline_validates(
        p in profile(),
        n in 0usize..40,
        s in stride(),
        ratio in prop_oneof![Just(0.0), Just(0.25), Just(0.5), 0.0..1.0f64],
        pl in placement(),
        size in 1u64..5_000_000,
        contention in prop_oneof![Just(1.0), 1.0..2.0f64],
    ) {
        let mut p = p;
        p.host_contention = contention;
        let plan = build_plan(n, s, ratio, pl).unwrap();
        let tl = simulate_update_phase(&plan, &p, size).unwrap();
        tl.validate().unwrap();
        let rows = offload_core::sim::validate_csv(&tl.to_csv()).unwrap();
        prop_assert_eq!(rows.len(), tl.events.len());
    }

    #[test]
    fn uneven_subgroups_validate(
        sizes in prop::collection::vec(1u64..100_000, 1..30),
        k in 1u32..7,
        pl in placement(),
    ) {
        let plan = build_plan(sizes.len(), Stride::Every(k), 0.25, pl).unwrap();
        let tl = simulate_update_phase_sized(&plan, &SystemProfile::h100_node(), &sizes).unwrap();
        tl.validate().unwrap();
    }

    #[test]
    fn faster_hardware_never_slows_the_phase(
        p in profile(),
        n in 1usize..40,
        k in 1u32..8,
        ratio in prop_oneof![Just(0.0), Just(0.25), Just(0.5)],
        pl in placement(),
        which in 0usize..4,
        factor in 1.0..3.0f64,
    ) {
        let plan = build_plan(n, Stride::Every(k), ratio, pl).unwrap();
        let base = simulate_update_phase(&plan, &p, 1_000_000).unwrap().makespan_ns;
        let mut q = p.clone();
        match which {
            0 => q.cpu_update_params_per_s *= factor,
            1 => q.fast_update_params_per_s *= factor,
            2 => q.host_downscale_params_per_s *= factor,
            _ => q.channel_params_per_s *= factor,
        }
        let faster = simulate_update_phase(&plan, &q, 1_000_000).unwrap().makespan_ns;
        prop_assert!(faster <= base, "{} > {}", faster, base);
    }

    #[test]
    fn interleaving_never_loses_to_blocking(
        p in profile(),
        n in 1usize..40,
        ratio in prop_oneof![Just(0.0), Just(0.25), Just(0.5)],
        pl in placement(),
    ) {
        let il = ApproachConfig::Interleaved { k: None, static_ratio: ratio, placement: pl };
        let fast = simulate_update_phase(&il.plan(n, &p).unwrap(), &p, 1_000_000).unwrap();
        let blocking = build_plan(n, Stride::AllCpu, ratio, pl).unwrap();
        let slow = simulate_update_phase(&blocking, &p, 1_000_000).unwrap();
        prop_assert!(fast.makespan_ns <= slow.makespan_ns);
    }

    #[test]
    fn model_agrees_with_simulation(p in profile(), n in 10usize..80, k in 1u32..7) {
        let plan = build_plan(n, UpdateRatio::PerGpu(k).stride(), 0.0, Placement::StaticLast).unwrap();
        let sim = simulate_update_phase(&plan, &p, 1_000_000).unwrap().makespan_ns as f64 * 1e-9;
        let est = estimate_update_time(&p, n as u64, 1_000_000, UpdateRatio::PerGpu(k), 0);
        prop_assert!((est - sim).abs() <= 0.15 * sim, "est {} sim {}", est, sim);
    }

    #[test]
    fn executor_matches_oracle(
        sizes in prop::collection::vec(1usize..300, 1..20),
        seed in any::<u64>(),
        k in 1u32..7,
        ratio in prop_oneof![Just(0.0), Just(0.25), Just(0.5)],
        pl in placement(),
    ) {
        let opt = ShardedOptimizer::seeded(&sizes, seed).unwrap();
        let h = AdamHyper { step: 1 + (seed % 50) as u32, ..Default::default() };
        let oracle = sequential_oracle(&opt, &h).unwrap();
        let plan = build_plan(sizes.len(), Stride::Every(k), ratio, pl).unwrap();
        let r = execute_plan(&plan, opt, &SystemProfile::v100_node(), &h, ExecMode::VirtualTime).unwrap();
        prop_assert!(r.optimizer.bit_identical(&oracle));
        prop_assert!(r.optimizer.model16_coherent());
        r.timeline.validate().unwrap();
        let s: Vec<u64> = sizes.iter().map(|&x| x as u64).collect();
        let sim = simulate_update_phase_sized(&plan, &SystemProfile::v100_node(), &s).unwrap();
        prop_assert_eq!(r.timeline, sim);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimate_argmin_lands_next_to_the_balance(p in profile()) {
        let r = optimal_stride(&p);
        prop_assume!(r.k_real.is_some_and(|k| (1.0..=8.0).contains(&k)));
        let kr = r.k_real.unwrap();
        let est = |k: u32| estimate_update_time(&p, 1000, 1, UpdateRatio::PerGpu(k), 0);
        let best = (1..=10).min_by(|&a, &b| est(a).total_cmp(&est(b))).unwrap();
        prop_assert!(best == kr.floor() as u32 || best == kr.ceil() as u32, "argmin {} for k_real {}", best, kr);
    }

    #[test]
    fn brute_force_sweep_lands_next_to_the_balance(p in profile()) {
        let r = optimal_stride(&p);
        prop_assume!(r.k_real.is_some_and(|k| k < 7.0));
        let kr = r.k_real.unwrap();
        let s = sweep_stride(&p, 120, 1_000_000, &(0..=8).collect::<Vec<_>>()).unwrap();
        prop_assert!(
            s.best_k == kr.floor() as u32 || s.best_k == kr.ceil() as u32,
            "argmin {} for k_real {}", s.best_k, kr
        );
    }
}

#[test]
fn oracle_is_idempotent_on_zero_gradients() {
    let mut opt = ShardedOptimizer::seeded(&[17, 40, 3], 9).unwrap();
    opt.zero_grads();
    for sg in &mut opt.subgroups {
        sg.momentum.fill(0.0);
        sg.variance.fill(0.0);
    }
    let h = AdamHyper::default();
    let once = sequential_oracle(&opt, &h).unwrap();
    let twice = sequential_oracle(&once, &h).unwrap();
    assert!(once.bit_identical(&twice));
    assert!(once.bit_identical(&opt));
}
