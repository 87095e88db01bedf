mod common;

use common::{arb_graph, floyd_warshall, path_graph, INF};
use ghr::data::{self, build_splits, RggConfig, SourcePolicy, SsspInstance};
use ghr::graph::Graph;
use ghr::seeding;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bfs_matches_floyd_warshall(g in arb_graph(14)) {
        let fw = floyd_warshall(&g);
        for s in 0..g.num_nodes() {
            let d = g.bfs_distances(s).unwrap();
            for v in 0..g.num_nodes() {
                let want = (fw[s][v] != INF).then_some(fw[s][v]);
                prop_assert_eq!(d.get(v), want);
            }
        }
    }

    #[test]
    fn adjacent_distances_differ_by_at_most_one(g in arb_graph(14), s in 0usize..14) {
        let s = s % g.num_nodes();
        let d = g.bfs_distances(s).unwrap();
        for &(i, j) in g.edges() {
            if let (Some(a), Some(b)) = (d.get(i), d.get(j)) {
                prop_assert!(a.abs_diff(b) <= 1);
            }
        }
    }

    #[test]
    fn diameter_is_max_finite_distance(g in arb_graph(12)) {
        let fw = floyd_warshall(&g);
        let want = fw.iter().flatten().filter(|&&d| d != INF).max().copied();
        prop_assert_eq!(g.diameter(), want);
    }

    #[test]
    fn json_round_trip(g in arb_graph(10)) {
        let back = Graph::from_json_line(&g.to_json_line().unwrap()).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
        prop_assert_eq!(back.node_features(), g.node_features());
    }
}

#[test]
fn structural_errors() {
    assert!(matches!(Graph::structural(3, &[(0, 3)]), Err(ghr::Error::IndexOutOfRange(_))));
    assert!(matches!(Graph::structural(3, &[(1, 1)]), Err(ghr::Error::SelfLoop(_))));
    assert!(matches!(Graph::structural(3, &[(0, 1), (1, 0)]), Err(ghr::Error::DuplicateEdge(_, _))));
}

#[test]
fn generated_labels_match_floyd_warshall() {
    let cfg = RggConfig { n_min: 20, n_max: 100, test_n_min: 20, test_n_max: 100, train: 30, val: 10, test: 10, seed: 3, ..RggConfig::default() };
    let ds = build_splits(&cfg).unwrap();
    for inst in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        let fw = floyd_warshall(&inst.graph);
        for v in 0..inst.graph.num_nodes() {
            let d = fw[inst.source][v];
            assert_eq!(inst.labels[v], (d != INF).then_some(d));
        }
    }
}

#[test]
fn split_invariants() {
    let cfg = RggConfig { train: 10, val: 5, test: 5, seed: 11, ..RggConfig::default() };
    let ds = build_splits(&cfg).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (10, 5, 5));
    for inst in ds.train.iter().chain(&ds.val) {
        assert!(inst.max_label().unwrap() <= 5);
        for (l, m) in inst.labels.iter().zip(&inst.mask) {
            assert_eq!(*m, l.is_some_and(|d| d <= 5));
        }
    }
    assert!(ds.test.iter().all(|i| i.max_label().unwrap() <= 8));
    assert!(ds.test.iter().any(|i| i.max_label().unwrap() > 5));
    assert!(ds.manifest.description.contains("capped at 5"));
    assert!(ds.manifest.description.contains("up to 8 hops"));
    let again = build_splits(&cfg).unwrap();
    let rec = |v: &[SsspInstance]| v.iter().map(|i| serde_json::to_string(&i.to_record()).unwrap()).collect::<Vec<_>>();
    assert_eq!(rec(&ds.test), rec(&again.test));
}

#[test]
fn dataset_round_trips_through_disk() {
    let cfg = RggConfig { train: 4, val: 2, test: 2, seed: 1, ..RggConfig::default() };
    let ds = build_splits(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data::write_dataset(dir.path(), &ds).unwrap();
    let back = data::read_split(dir.path(), data::Split::Train).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in back.iter().zip(&ds.train) {
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.graph.positions(), b.graph.positions());
    }
    assert_eq!(data::read_manifest(dir.path()).unwrap(), ds.manifest);
}

#[test]
fn empirical_mean_degree_band() {
    let mut total = 0.0;
    for k in 0..200 {
        let g = data::sample_rgg(300, 300, 12.0, &mut seeding::stream(5, "degree", k)).unwrap();
        total += 2.0 * g.num_edges() as f64 / g.num_nodes() as f64;
    }
    let mean = total / 200.0;
    assert!((9.0..=15.0).contains(&mean), "mean degree {mean}");
}

#[test]
fn cap_two_on_five_path_picks_the_middle() {
    let mut found = 0;
    for k in 0..20 {
        let mut rng = seeding::stream(0, "mid", k);
        if let Some(inst) = data::make_instance(path_graph(5), &mut rng, SourcePolicy::ResampleWithinCap, Some(2), 20).unwrap() {
            assert_eq!(inst.source, 2);
            found += 1;
        }
    }
    assert!(found > 0);
}

#[test]
fn path_source_at_end_labels_everything() {
    let mut rng = seeding::stream(0, "end", 0);
    let inst = data::make_instance(path_graph(6), &mut rng, SourcePolicy::MaxEccentricity, Some(5), 1).unwrap().unwrap();
    assert_eq!(inst.source, 0);
    assert_eq!(inst.labels, (0..6).map(Some).collect::<Vec<_>>());
    assert!(inst.mask.iter().all(|&m| m));
}
