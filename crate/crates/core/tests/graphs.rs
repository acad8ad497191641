mod common;

use proptest::prelude::*;
use stormgan::sttg::io::{load_graph, save_graph};
use stormgan::sttg::{build_sttg_s1, build_sttg_s2, detect_stage, FlightRule, S1Config, S2Config};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn s2_matches_exhaustive_scan(seed in any::<u64>(), hub in 50u32..150, hubs_only in any::<bool>(), km in 100.0..900.0f64) {
        let f = common::s2_fixture(seed, 50);
        let rule = if hubs_only { FlightRule::BothHubs } else { FlightRule::HubToTiered };
        let cfg = S2Config { hub_airlines: hub, proximity_km: km, flight_rule: rule, ..Default::default() };
        let g = build_sttg_s2(&f.cities, &f.flights, &f.distances, &cfg).unwrap();
        prop_assert_eq!(g.edge_set(), common::s2_brute_force(&f, &cfg));
        g.validate().unwrap();
    }

    #[test]
    fn s1_matches_exhaustive_scan(seed in any::<u64>(), max_kl in 0.01..3.0f64) {
        let cities = common::s1_fixture(seed, 50);
        let cfg = S1Config { max_kl, ..Default::default() };
        let g = build_sttg_s1(&cities, &cfg).unwrap();
        prop_assert_eq!(g.edge_set(), common::s1_brute_force(&cities, &cfg));
    }

    #[test]
    fn planted_growth_month_is_recovered(seed in any::<u64>(), month in 0usize..8) {
        let s = detect_stage(&common::planted_curve(seed, month, 245)).unwrap();
        prop_assert_eq!(s.month, Some(month));
    }

    #[test]
    fn one_hop_subgraph_holds_the_centre_and_its_neighbours(seed in any::<u64>()) {
        let f = common::s2_fixture(seed, 30);
        let g = build_sttg_s2(&f.cities, &f.flights, &f.distances, &S2Config::default()).unwrap();
        for (i, c) in f.cities.iter().enumerate() {
            let sub = g.subgraph_1hop(&c.city_id).unwrap();
            prop_assert_eq!(&sub.node_ids[0], &c.city_id);
            prop_assert_eq!(sub.len(), 1 + g.neighbors(i).len());
        }
    }
}

#[test]
fn graph_files_round_trip() {
    let f = common::s2_fixture(4, 20);
    let g = build_sttg_s2(&f.cities, &f.flights, &f.distances, &S2Config::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("graph.json");
    save_graph(&g, &p).unwrap();
    assert_eq!(load_graph(&p).unwrap(), g);
}

#[test]
fn flat_curves_fall_in_the_last_stage() {
    let s = detect_stage(&vec![10.0; 245]).unwrap();
    assert_eq!((s.stage, s.month), (3, None));
    assert!(detect_stage(&[1.0; 60]).is_err());
}

#[test]
fn unknown_city_has_no_subgraph() {
    let f = common::s2_fixture(1, 5);
    let g = build_sttg_s2(&f.cities, &f.flights, &f.distances, &S2Config::default()).unwrap();
    assert!(g.subgraph_1hop("nowhere").is_err());
}
