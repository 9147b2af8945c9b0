use proptest::prelude::*;
use std::collections::BTreeSet;
use surveil_core::discontinuity::DiscontinuityClass;
use surveil_core::pipeline::*;
use surveil_core::synth::*;

fn small(injections: Vec<Injection>) -> ScenarioConfig {
    ScenarioConfig {
        n_traders: 600,
        n_days: 120,
        injections,
        ..Default::default()
    }
}

#[test]
fn planted_individuals_are_hard_discontinuous() {
    let s = generate(&small(vec![Injection::individuals(10, 4)])).unwrap();
    let (_, out) = run_kmeans(&s.panel, &s.pse, &KmeansConfig::default()).unwrap();
    let planted: BTreeSet<String> = s.truth.ids(InjectionKind::Individual).into_iter().collect();
    let hard = out
        .report
        .labels
        .iter()
        .filter(|l| l.class == DiscontinuityClass::HardDiscontinuous && planted.contains(&s.panel.investor(l.investor).id))
        .count();
    assert!(hard >= 9, "{hard}/10");
    let flagged: Vec<String> = out.report.suspects.iter().map(|e| e.investor_id.clone()).collect();
    let eval = evaluate("kmeans", &flagged, &s.truth);
    assert!(eval.overall.recall.unwrap() >= 0.9);
}

#[test]
fn planted_ring_cluster_statistics_match_raw_volumes() {
    let s = generate(&small(vec![Injection::ring(5, 14)])).unwrap();
    let cfg = SvnConfig::default();
    let input = network_input(&s.panel, &s.pse, &cfg).unwrap();
    let out = run_svn(&input, &s.pse, &cfg).unwrap();
    let ring: BTreeSet<String> = s.truth.rings()[0].iter().cloned().collect();
    let dossier = out
        .primary()
        .dossiers
        .iter()
        .find(|d| d.flagged && ring.iter().all(|m| d.members.contains(m)))
        .expect("ring inside a flagged cluster");

    let stock = input.stock;
    let (a, b) = input.reference;
    let mut rs = Vec::new();
    for id in &dossier.members {
        let i = input.panel.investor_index(id).unwrap();
        let (mut vb, mut vs) = (0.0, 0.0);
        for c in input.panel.cells_on(i, stock) {
            if (a..=b).contains(&(c.day as usize)) {
                vb += c.buy_volume;
                vs += c.sell_volume;
            }
        }
        if vb + vs > 0.0 {
            rs.push((vb - vs) / (vb + vs));
        }
    }
    let r = rs.iter().sum::<f64>() / rs.len() as f64;
    assert!((dossier.mean_directionality.unwrap() - r).abs() < 1e-12);
}

#[test]
fn ring_members_cooccur_on_every_shared_day() {
    let s = generate(&small(vec![Injection::ring(5, 15)])).unwrap();
    let stock = s.panel.stock_index(&s.truth.stock).unwrap();
    let ids = &s.truth.rings()[0];
    for x in ids {
        for y in ids {
            let dx: BTreeSet<u32> = s.panel.cells_on(s.panel.investor_index(x).unwrap(), stock).iter().map(|c| c.day).collect();
            let dy: BTreeSet<u32> = s.panel.cells_on(s.panel.investor_index(y).unwrap(), stock).iter().map(|c| c.day).collect();
            assert!(dx.intersection(&dy).count() >= 15);
        }
    }
}

proptest! {
    #[test]
    fn metrics_match_confusion_counts(truth in prop::collection::btree_set(0u32..40, 0..15), det in prop::collection::btree_set(0u32..40, 0..15)) {
        let gt = GroundTruth {
            stock: "X".into(),
            pse_day: 0,
            ref_start_day: 0,
            entries: truth.iter().map(|i| TruthEntry {
                investor_id: format!("I{i:02}"),
                kind: InjectionKind::Individual,
                ring: None,
                days: vec![],
                expected_class: DiscontinuityClass::HardDiscontinuous,
                expected_suspect_cluster: false,
            }).collect(),
        };
        let ids: Vec<String> = det.iter().map(|i| format!("I{i:02}")).collect();
        let e = evaluate("p", &ids, &gt);
        let tp = truth.intersection(&det).count();
        prop_assert_eq!(e.overall.true_positives, tp);
        prop_assert_eq!(e.overall.false_positives, det.len() - tp);
        prop_assert_eq!(e.overall.false_negatives, truth.len() - tp);
        prop_assert_eq!(e.overall.precision, (!det.is_empty()).then(|| tp as f64 / det.len() as f64));
        prop_assert_eq!(e.overall.recall, (!truth.is_empty()).then(|| tp as f64 / truth.len() as f64));
    }
}
