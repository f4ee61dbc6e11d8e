use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use proptest::prelude::*;

use flowlens::apps::autoscale::{autoscale_step, AutoscaleConfig, AutoscaleState, Decision};
use flowlens::apps::lb::{lb_pick, LbPolicy, LbState};
use flowlens::flow_table::{EmissionKind, FlowTable, FlowTableConfig};
use flowlens::ml::adjusted_rand_index;
use flowlens::store::{Counter, RegionConfig, VipRegion};
use flowlens::traffic::{gen_trace_with_truth, read_events, write_events, FiveTuple, WorkloadSpec};

fn fid(a: u32, port: u16) -> FiveTuple {
    FiveTuple::tcp(Ipv4Addr::from(a), port, Ipv4Addr::new(10, 255, 0, 1), 80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // every legitimate flow is either established or missed, every
    // established flow closes, and flow_on never goes negative per egress
    #[test]
    fn flows_are_conserved(
        seed in any::<u64>(),
        rate in 5.0f64..400.0,
        servers in 1usize..6,
        table_bits in 4u32..17,
    ) {
        let spec = WorkloadSpec::new(rate, 3.0, vec![1.0; servers], seed);
        let (events, truth) = gen_trace_with_truth(&spec).unwrap();
        let cfg = FlowTableConfig { size: 1 << table_bits, ..FlowTableConfig::default() };
        let mut table = FlowTable::new(cfg).unwrap();
        let (mut total, mut miss) = (0i64, 0i64);
        let mut on = vec![0i64; servers];
        for ev in &events {
            for em in table.on_packet(ev).unwrap() {
                if let EmissionKind::CounterDelta { counter, delta } = em.kind {
                    match counter {
                        Counter::FlowTotal => total += delta,
                        Counter::Miss => miss += delta,
                        Counter::FlowOn => {
                            let e = &mut on[usize::from(em.egress_id)];
                            *e += delta;
                            prop_assert!(*e >= 0);
                        }
                        _ => {}
                    }
                }
            }
        }
        prop_assert_eq!(total + miss, truth.n_flows as i64);
        prop_assert!(on.iter().all(|&v| v == 0));
        prop_assert_eq!(table.live(), 0);
    }

    #[test]
    fn rlb_pick_ignores_weight_scale(
        loads in prop::collection::vec(0u32..50, 1..12),
        raw in prop::collection::vec(0.01f64..10.0, 12),
        c in 1e-3f64..1e3,
        port in any::<u16>(),
    ) {
        let n = loads.len();
        let mut a = LbState::new(LbPolicy::Rlb { refresh: 0.25 }, n);
        a.loads = loads.iter().map(|&l| f64::from(l)).collect();
        a.weights = raw[..n].to_vec();
        let mut b = a.clone();
        b.weights.iter_mut().for_each(|w| *w *= c);
        let f = fid(7, port);
        prop_assert_eq!(lb_pick(&a, &f, 0.0).unwrap(), lb_pick(&b, &f, 0.0).unwrap());
    }

    #[test]
    fn ecmp_is_stable_per_flow(n in 1usize..16, addr in any::<u32>(), port in any::<u16>(), loads in prop::collection::vec(0.0f64..100.0, 16)) {
        let mut s = LbState::new(LbPolicy::Ecmp, n);
        let f = fid(addr, port);
        let first = lb_pick(&s, &f, 0.0).unwrap();
        s.loads = loads[..n].to_vec();
        prop_assert_eq!(lb_pick(&s, &f, 5.0).unwrap(), first);
        prop_assert!(first < n);
    }

    #[test]
    fn scaling_stays_in_bounds_and_spaced(
        initial in 8usize..=14,
        ys in prop::collection::vec(prop::collection::vec(0.0f64..1.2, 14), 1..300),
    ) {
        let cfg = AutoscaleConfig::default();
        let mut st = AutoscaleState::new(initial, 14, &cfg).unwrap();
        let mut last: Option<usize> = None;
        for (k, y) in ys.iter().enumerate() {
            let d = autoscale_step(&mut st, y, &cfg).unwrap();
            prop_assert!((8..=14).contains(&st.active.len()));
            prop_assert!(st.active.windows(2).all(|w| w[0] < w[1]));
            if d != Decision::Hold {
                if let Some(p) = last {
                    prop_assert!(k - p > cfg.cooldown as usize);
                }
                last = Some(k);
            }
        }
    }

    #[test]
    fn bit_index_matches_set(ops in prop::collection::vec((any::<bool>(), 0usize..100), 0..80)) {
        let region = VipRegion::anonymous(RegionConfig { n_egress: 100, k: 4, ..RegionConfig::default() }).unwrap();
        let mut model = BTreeSet::new();
        for (add, i) in ops {
            let r = if add { region.add_egress(i) } else { region.remove_egress(i) };
            let changed = if add { model.insert(i) } else { model.remove(&i) };
            prop_assert_eq!(r.is_ok(), changed);
        }
        prop_assert_eq!(region.active_egresses(), model.iter().copied().collect::<Vec<_>>());
        let words = region.bit_index();
        for i in 0..100 {
            prop_assert_eq!(words[i / 64] >> (i % 64) & 1 == 1, model.contains(&i));
        }
    }

    #[test]
    fn ari_ignores_label_names(labels in prop::collection::vec(0i64..4, 2..60), shift in 1i64..50) {
        let renamed: Vec<i64> = labels.iter().map(|l| (l + shift) * 7).collect();
        prop_assert!((adjusted_rand_index(&labels, &renamed) - 1.0).abs() < 1e-12 || labels.iter().all(|&l| l == labels[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn trace_csv_round_trip(seed in any::<u64>(), flood in any::<bool>()) {
        let mut spec = WorkloadSpec::new(30.0, 2.0, vec![1.0, 2.0], seed);
        if flood {
            spec.flood_rate = Some(50.0);
        }
        let (events, _) = gen_trace_with_truth(&spec).unwrap();
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        prop_assert_eq!(read_events(buf.as_slice()).unwrap(), events);
    }
}
