mod common;

use icl_gr::decoder::{constrained_beam_search, Route};
use icl_gr::prompt::{InstanceFactory, NegativeMiner, Prompt};
use icl_gr::scorer::{
    continuation_nll, sequence_nll, MockModelConfig, ScoringSession, TokenScorer, UniformScorer,
};
use icl_gr::tokenizer::{TokenId, COPY_ID};
use icl_gr::trie::{build_context_trie, build_trie};

/// Puts all mass on one fixed sequence.
struct OneHot(Vec<TokenId>, usize);

struct OneHotSession<'a>(&'a OneHot);

impl ScoringSession for OneHotSession<'_> {
    fn next_logprobs(&self, generated: &[TokenId]) -> Vec<f64> {
        let mut lp = vec![f64::NEG_INFINITY; self.0 .1];
        let next = self.0 .0.get(generated.len()).copied().unwrap_or(0);
        lp[next as usize] = 0.0;
        lp
    }
}

impl TokenScorer for OneHot {
    fn vocab_size(&self) -> usize {
        self.1
    }

    fn session<'a>(&'a self, _prompt: &'a Prompt) -> Box<dyn ScoringSession + 'a> {
        Box::new(OneHotSession(self))
    }
}

fn three_candidate_prompt(fx: &common::Fixture) -> Prompt {
    let q = &fx.adaptation[0];
    let ids = icl_gr::eval::build_query_candidate_set(q, fx.split.new_ids(), 3, 0).unwrap();
    let inst = InstanceFactory::new(&fx.corpus, &fx.vocab)
        .with_candidates(q, &ids, 0)
        .unwrap();
    Prompt::new(&fx.vocab, inst)
}

#[test]
fn nll_equals_hand_accumulation_of_emitted_logprobs() {
    let fx = common::fixture(200, 1, 3);
    let model = fx.mock(MockModelConfig::default());
    let prompt = three_candidate_prompt(&fx);
    let mut target = vec![COPY_ID];
    target.extend(fx.vocab.encode_docid(&prompt.instance.query.gold_doc_id).0);
    let session = model.session(&prompt);
    let mut hand = 0.0;
    for t in 0..target.len() {
        let lp = session.next_logprobs(&target[..t]);
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        hand -= lp[target[t] as usize];
    }
    let nll = sequence_nll(&model, &prompt, &target).unwrap();
    assert!((nll - hand).abs() < 1e-12, "{nll} vs {hand}");
    let split = continuation_nll(&model, &prompt, &target[..1], &target[1..]).unwrap()
        + continuation_nll(&model, &prompt, &[], &target[..1]).unwrap();
    assert!((nll - split).abs() < 1e-9);
}

#[test]
fn one_hot_and_uniform_scorers() {
    let fx = common::fixture(100, 1, 3);
    let prompt = three_candidate_prompt(&fx);
    let v = fx.vocab.len();
    let oh = OneHot(vec![7], v);
    assert_eq!(sequence_nll(&oh, &prompt, &[7]).unwrap(), 0.0);
    let uni = UniformScorer { vocab_size: v };
    let nll = sequence_nll(&uni, &prompt, &[3, 4, 5, 6]).unwrap();
    assert!((nll - 4.0 * (v as f64).ln()).abs() < 1e-9);
}

#[test]
fn lone_gold_in_context_with_confident_copy() {
    let fx = common::fixture(200, 1, 4);
    let model = fx.mock(MockModelConfig {
        route_bias: 8.0,
        ..Default::default()
    });
    let global = build_trie(&fx.vocab, fx.split.train_ids()).unwrap();
    let factory = InstanceFactory::new(&fx.corpus, &fx.vocab);
    for q in &fx.adaptation {
        let inst = factory
            .with_candidates(q, std::slice::from_ref(&q.gold_doc_id), 0)
            .unwrap();
        let ctx = build_context_trie(&fx.vocab, &inst.candidate_ids()).unwrap();
        let r = constrained_beam_search(&model, &Prompt::new(&fx.vocab, inst), &global, &ctx, 10)
            .unwrap();
        let top = r.top().unwrap();
        assert_eq!(
            (top.route, top.doc_id.as_str()),
            (Route::Copy, q.gold_doc_id.as_str())
        );
        assert!(r.copy_confidence > 0.99);
    }
}

#[test]
fn noise_context_with_negative_bias_decodes_from_memory() {
    let fx = common::fixture(300, 1, 5);
    let model = fx.mock(MockModelConfig {
        route_bias: -6.0,
        ..Default::default()
    });
    let global = build_trie(&fx.vocab, fx.split.train_ids()).unwrap();
    let miner = NegativeMiner::new(&fx.tfidf, &fx.corpus, fx.split.train_ids()).unwrap();
    let factory = InstanceFactory::new(&fx.corpus, &fx.vocab);
    for q in fx.retention.iter().take(40) {
        let negs = miner.mine(&q.gold_doc_id, 10).unwrap();
        let inst = factory.query_irrelevant(q, &negs, 10, 0).unwrap();
        let ctx = build_context_trie(&fx.vocab, &inst.candidate_ids()).unwrap();
        let r = constrained_beam_search(&model, &Prompt::new(&fx.vocab, inst), &global, &ctx, 10)
            .unwrap();
        let top = r.top().unwrap();
        assert_eq!(top.route, Route::Parametric);
        assert!(fx.split.train_ids().contains(&top.doc_id));
    }
}

#[test]
fn wide_beam_matches_exhaustive_search_on_small_sets() {
    let fx = common::fixture(120, 1, 6);
    let global = build_trie(&fx.vocab, fx.split.train_ids()).unwrap();
    let factory = InstanceFactory::new(&fx.corpus, &fx.vocab);
    let model = fx.mock(MockModelConfig {
        noise_seed: Some(2),
        noise_scale: 0.2,
        ..Default::default()
    });
    for (i, q) in fx.adaptation.iter().enumerate() {
        let n = 1 + i % fx.split.new_ids().len();
        let ids =
            icl_gr::eval::build_query_candidate_set(q, fx.split.new_ids(), n, i as u64).unwrap();
        let inst = factory.with_candidates(q, &ids, 0).unwrap();
        let ctx = build_context_trie(&fx.vocab, &inst.candidate_ids()).unwrap();
        let prompt = Prompt::new(&fx.vocab, inst);
        let beam = global.len() + n + 1;
        let wide = constrained_beam_search(&model, &prompt, &global, &ctx, beam).unwrap();
        // every docid is complete under an exhaustive beam; scores must be
        // the exact per-path sums
        let session = model.session(&prompt);
        for e in &wide.entries {
            let mut score = 0.0;
            for t in 0..e.token_path.len() {
                let lp = session.next_logprobs(&e.token_path[..t]);
                let allowed: Vec<TokenId> = if t == 0 {
                    std::iter::once(COPY_ID)
                        .chain(global.allowed_tokens(&[]))
                        .collect()
                } else if e.route == Route::Copy {
                    ctx.allowed_tokens(&e.token_path[1..t])
                } else {
                    global.allowed_tokens(&e.token_path[..t])
                };
                let norm = allowed
                    .iter()
                    .map(|&a| lp[a as usize].exp())
                    .sum::<f64>()
                    .ln();
                score += lp[e.token_path[t] as usize] - norm;
            }
            assert!(
                (score - e.logscore).abs() < 1e-9,
                "{score} vs {}",
                e.logscore
            );
        }
        let narrow = constrained_beam_search(&model, &prompt, &global, &ctx, 10).unwrap();
        assert_eq!(narrow.top().unwrap().doc_id, wide.top().unwrap().doc_id);
    }
}
