mod common;

use icl_gr::decoder::{DecodeEntry, DecodeResult, Route};
use icl_gr::dpo::{decode_and_mine, dpo_loss, mine_instance, pair_margin, PairKind};
use icl_gr::prompt::{InstanceFactory, NegativeMiner, Prompt};
use icl_gr::scorer::{sequence_nll, MockModelConfig};
use icl_gr::tokenizer::{TokenSeq, COPY_ID};
use icl_gr::trie::build_trie;

fn entry(fx: &common::Fixture, id: &str, route: Route, score: f64) -> DecodeEntry {
    let mut path = if route == Route::Copy {
        vec![COPY_ID]
    } else {
        vec![]
    };
    path.extend(fx.vocab.encode_docid(id).0);
    DecodeEntry {
        route,
        doc_id: id.to_string(),
        logscore: score,
        token_path: TokenSeq(path),
    }
}

#[test]
fn ranking_failure_rules() {
    let fx = common::fixture(200, 1, 1);
    let factory = InstanceFactory::new(&fx.corpus, &fx.vocab);
    let q = &fx.adaptation[0];
    let ids = icl_gr::eval::build_query_candidate_set(q, fx.split.new_ids(), 10, 0).unwrap();
    let inst = factory.with_candidates(q, &ids, 0).unwrap();
    let others: Vec<&String> = ids.iter().filter(|id| **id != q.gold_doc_id).collect();
    let mut entries: Vec<DecodeEntry> = others
        .iter()
        .take(9)
        .enumerate()
        .map(|(i, id)| entry(&fx, id, Route::Copy, -(i as f64) - 1.0))
        .collect();
    entries.insert(2, entry(&fx, &q.gold_doc_id, Route::Copy, -2.5));
    let result = DecodeResult {
        entries,
        copy_confidence: 0.9,
    };
    assert_eq!(result.rank_of(&q.gold_doc_id), Some(3));
    let pairs = mine_instance(&inst, &result, 10, &fx.vocab);
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].kind, PairKind::RankingFailure);
    assert_eq!(pairs[0].rejected, result.entries[0].token_path);
    assert_eq!(pairs[0].chosen, result.entries[2].token_path);

    let mut first = result.clone();
    first.entries.swap(0, 2);
    assert!(mine_instance(&inst, &first, 10, &fx.vocab).is_empty());
}

#[test]
fn engineered_routing_failures_are_counted_exactly() {
    let fx = common::fixture(400, 1, 2);
    let factory = InstanceFactory::new(&fx.corpus, &fx.vocab);
    let miner = NegativeMiner::new(&fx.tfidf, &fx.corpus, fx.split.train_ids()).unwrap();
    let global = build_trie(&fx.vocab, fx.split.train_ids()).unwrap();
    let model = fx.mock(MockModelConfig {
        route_bias: -8.0,
        ..Default::default()
    });
    assert!(fx.adaptation.len() >= 20);
    // gold is new, so a forced parametric decode cannot reach it
    let mut instances: Vec<_> = fx.adaptation[..20]
        .iter()
        .map(|q| {
            let ids = icl_gr::eval::build_query_candidate_set(q, fx.split.new_ids(), 5, 0).unwrap();
            factory.with_candidates(q, &ids, 0).unwrap()
        })
        .collect();
    for q in fx.retention.iter().take(30) {
        let negs = miner.mine(&q.gold_doc_id, 5).unwrap();
        instances.push(factory.query_irrelevant(q, &negs, 5, 0).unwrap());
    }
    let pairs = decode_and_mine(&model, &fx.vocab, &global, &instances, 10).unwrap();
    let routing: Vec<_> = pairs
        .iter()
        .filter(|p| p.kind == PairKind::RoutingFailure)
        .collect();
    assert_eq!(routing.len(), 20);
    assert!(routing.iter().all(|p| p.chosen.first() == Some(&COPY_ID)));
    assert!(routing.iter().all(|p| p.rejected.first() != Some(&COPY_ID)));
}

#[test]
fn pair_loss_composition() {
    let fx = common::fixture(200, 1, 3);
    let factory = InstanceFactory::new(&fx.corpus, &fx.vocab);
    let q = &fx.adaptation[1];
    let ids = icl_gr::eval::build_query_candidate_set(q, fx.split.new_ids(), 5, 0).unwrap();
    let prompt = Prompt::new(&fx.vocab, factory.with_candidates(q, &ids, 0).unwrap());
    let global = build_trie(&fx.vocab, fx.split.train_ids()).unwrap();
    let reference = fx.mock(MockModelConfig {
        route_bias: -8.0,
        ..Default::default()
    });
    let pairs = decode_and_mine(
        &reference,
        &fx.vocab,
        &global,
        std::slice::from_ref(&prompt.instance),
        10,
    )
    .unwrap();
    let pair = pairs
        .iter()
        .find(|p| p.kind == PairKind::RoutingFailure)
        .unwrap();

    let same = pair_margin(&reference, &reference, pair, &prompt, 0.1).unwrap();
    assert!((same - std::f64::consts::LN_2).abs() < 1e-12);

    let boosted = fx.mock(MockModelConfig {
        route_bias: 0.0,
        ..Default::default()
    });
    let loss = pair_margin(&boosted, &reference, pair, &prompt, 0.1).unwrap();
    assert!(loss < std::f64::consts::LN_2, "{loss}");

    let lp = |m: &icl_gr::scorer::MockModel, s: &TokenSeq| -sequence_nll(m, &prompt, s).unwrap();
    let manual = dpo_loss(
        lp(&boosted, &pair.chosen),
        lp(&reference, &pair.chosen),
        lp(&boosted, &pair.rejected),
        lp(&reference, &pair.rejected),
        0.1,
    );
    assert!((loss - manual).abs() < 1e-12);
}
