mod common;

use ghr::data::SsspInstance;
use ghr::eval::{id_oor_report, stratified_mae, Strata};
use ghr::graph::Graph;
use ghr::model::Iterations;
use proptest::prelude::*;

const IT: Iterations = Iterations { r: 1, t_high: 1, t_low: 1 };

fn star_with_tail(tail: usize) -> SsspInstance {
    let mut edges = vec![];
    for i in 1..=tail {
        edges.push((i - 1, i));
    }
    SsspInstance::new(Graph::structural(tail + 1, &edges).unwrap(), 0, None).unwrap()
}

#[test]
fn hand_case_in_and_out_of_range() {
    // labels (2, 25), cap 20, predictions (2, 20).
    let inst = star_with_tail(25);
    let mut pred = vec![0.0; 26];
    for (i, l) in inst.labels.iter().enumerate() {
        pred[i] = l.unwrap() as f64;
    }
    let mut mask = vec![false; 26];
    mask[2] = true;
    mask[25] = true;
    pred[25] = 20.0;
    let inst = SsspInstance { mask, ..inst };
    let r = id_oor_report(&[pred], &[inst], 20, "x", IT).unwrap();
    assert_eq!(r.id_mae, Some(0.0));
    assert_eq!(r.oor_mae, Some(5.0));
    assert_eq!(r.max_pred, Some(20.0));
    assert_eq!(r.nodes, 2);
}

proptest! {
    #[test]
    fn report_reconstructs_from_strata(
        tails in proptest::collection::vec(1usize..12, 1..5),
        noise in proptest::collection::vec(-3.0f64..3.0, 64),
        cap in 1usize..8,
    ) {
        let instances: Vec<SsspInstance> = tails.iter().map(|&t| star_with_tail(t)).collect();
        let mut k = 0;
        let preds: Vec<Vec<f64>> = instances
            .iter()
            .map(|i| i.labels.iter().map(|l| { k += 1; l.unwrap() as f64 + noise[k % 64] }).collect())
            .collect();
        let r = id_oor_report(&preds, &instances, cap, "x", IT).unwrap();
        let total: usize = r.per_distance.iter().map(|d| d.count).sum();
        prop_assert_eq!(total, r.nodes);
        let weighted: f64 = r.per_distance.iter().map(|d| d.mae * d.count as f64).sum::<f64>() / total as f64;
        prop_assert!((weighted - r.test_mae.unwrap()).abs() <= 1e-12);
        let id: usize = r.per_distance.iter().filter(|d| d.distance <= cap).map(|d| d.count).sum();
        let oor: usize = r.per_distance.iter().filter(|d| d.distance > cap).map(|d| d.count).sum();
        prop_assert_eq!(id + oor, r.nodes);
        prop_assert_eq!(r.oor_mae.is_some(), oor > 0);

        // Independent group-by.
        let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for (p, inst) in preds.iter().zip(&instances) {
            for (y, l) in p.iter().zip(&inst.labels) {
                let l = l.unwrap();
                groups.entry(l).or_default().push((y - l as f64).abs());
            }
        }
        for d in &r.per_distance {
            let g = &groups[&d.distance];
            prop_assert_eq!(g.len(), d.count);
            prop_assert!((g.iter().sum::<f64>() / g.len() as f64 - d.mae).abs() <= 1e-12);
        }
    }
}

#[test]
fn perfect_predictions_zero_map() {
    let inst = star_with_tail(6);
    let pred: Vec<f64> = inst.labels.iter().map(|l| l.unwrap() as f64).collect();
    let map = stratified_mae(&pred, &inst.labels, &inst.mask).unwrap();
    assert!(map.values().all(|&(m, _)| m == 0.0));
    let mut s = Strata::default();
    s.add(&pred, &inst.labels, &inst.mask).unwrap();
    assert_eq!(s.count(), 7);
}
