use eventmem_core::metrics::{category_rank, evidence_metrics, fixed_k_truncate, macro_average, token_f1, TieRule};
use eventmem_core::snapshot;
use eventmem_core::store::{EventUpdate, FactSheetEntry, Metadata, TurnRecord};
use eventmem_core::{EmbeddingIndex, EmbeddingVector, Encoder, HashingEncoder, Layer, MemoryStore, TurnId};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["the", "A", "cat", "cat,", "sat", "Mat.", "on", "red", "7"]), 0..8)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn f1_is_symmetric_and_bounded(p in words(), g in words()) {
        let a = token_f1(&p, &g);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - token_f1(&g, &p)).abs() < 1e-12);
        prop_assert_eq!(token_f1(&p, &p), 1.0);
    }

    #[test]
    fn truncation_recall_never_drops(ranked in prop::collection::vec(0u64..40, 0..40), gold in prop::collection::vec(0u64..40, 1..5)) {
        let mut ranked = ranked;
        ranked.dedup();
        let mut last = 0.0;
        for k in 1..=ranked.len().max(1) {
            let s = evidence_metrics(&fixed_k_truncate(&ranked, k), &gold);
            let r = s.recall.unwrap();
            prop_assert!(r >= last);
            last = r;
        }
        let full = evidence_metrics(&fixed_k_truncate(&ranked, usize::MAX), &gold);
        prop_assert_eq!(full, evidence_metrics(&ranked, &gold));
    }

    #[test]
    fn macro_average_ignores_undefined(v in prop::collection::vec(prop::option::of(0.0f64..1.0), 0..10)) {
        let defined: Vec<f64> = v.iter().flatten().copied().collect();
        match macro_average(v.iter().copied()) {
            None => prop_assert!(defined.is_empty()),
            Some(m) => prop_assert!((m - defined.iter().sum::<f64>() / defined.len() as f64).abs() < 1e-12),
        }
    }

    #[test]
    fn average_ranks_sum_to_a_constant(table in prop::collection::vec(prop::collection::vec(0u8..4, 3), 2..6)) {
        let scores: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
        let n = scores.len() as f64;
        let ranks = category_rank(&scores, TieRule::Average).unwrap();
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        let dense = category_rank(&scores, TieRule::Dense).unwrap();
        let comp = category_rank(&scores, TieRule::Competition).unwrap();
        for i in 0..scores.len() {
            prop_assert!(dense[i] <= comp[i] + 1e-12 && comp[i] <= ranks[i] + 1e-12);
        }
    }

    #[test]
    fn top_k_is_a_prefix_of_rank_all(vs in prop::collection::vec(prop::collection::vec(-3i8..3, 4), 1..30), q in prop::collection::vec(-3i8..3, 4), k in 1usize..35) {
        let mut index = EmbeddingIndex::new(4);
        for (i, v) in vs.iter().enumerate() {
            index.register(Layer::Event, i as u64, EmbeddingVector::new(v.iter().map(|x| *x as f32).collect()).unwrap()).unwrap();
        }
        let q = EmbeddingVector::new(q.iter().map(|x| *x as f32).collect()).unwrap();
        let all = index.rank_all(&q, Layer::Event).unwrap();
        let top = index.top_k(&q, Layer::Event, k).unwrap();
        prop_assert_eq!(&all[..top.len()], &top[..]);
        for w in all.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
    }
}

#[test]
fn snapshot_round_trips_a_populated_store() {
    let enc = HashingEncoder::new(32);
    let mut store = MemoryStore::new(32);
    for i in 1..=12u64 {
        let text = format!("entry {i} about the lake");
        let rec = TurnRecord {
            turn_id: TurnId(i),
            speaker: "Ana".into(),
            text: text.clone(),
            timestamp: "1 May 2023".into(),
            metadata: Metadata { keywords: vec!["lake".into()], ..Metadata::default() },
        };
        store.insert_turn(rec, enc.encode(&text).unwrap()).unwrap();
    }
    let fact = |t: u64| FactSheetEntry { turn_id: TurnId(t), fact: format!("fact {t}"), timestamp: "1 May 2023".into() };
    let e = store.create_event("lake".into(), vec![fact(1)], &[TurnId(1)]).unwrap();
    for t in 2..=12 {
        store.attach_link(e, TurnId(t)).unwrap();
        store.apply_event_update(e, EventUpdate::Append { entry: fact(t) }).unwrap();
    }
    store.refresh_stale_embeddings(&enc).unwrap();
    store.check_invariants().unwrap();
    let bytes = snapshot::encode(&store);
    assert_eq!(bytes.len(), snapshot::encoded_len(&store));
    let back = snapshot::decode(&bytes).unwrap();
    assert_eq!(back, store);
    assert_eq!(snapshot::encode(&back), bytes);
    for cut in [0, 7, bytes.len() / 2, bytes.len() - 1] {
        assert!(snapshot::decode(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
}
