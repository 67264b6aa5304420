mod common;

use std::collections::{HashMap, HashSet};

use icl_gr::prompt::NegativeMiner;
use icl_gr::similarity::{SimilarityBackend, TfIdfModel};

/// Straightforward dense tf-idf cosine from the formula.
fn reference_cosine(docs: &[&str], a: &str, b: &str) -> f64 {
    let tokenize = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| w.to_lowercase())
            .collect()
    };
    let n = docs.len() as f64;
    let mut df: HashMap<String, f64> = HashMap::new();
    for d in docs {
        let uniq: HashSet<String> = tokenize(d).into_iter().collect();
        for w in uniq {
            *df.entry(w).or_default() += 1.0;
        }
    }
    let idf = |w: &str| ((1.0 + n) / (1.0 + df.get(w).copied().unwrap_or(0.0))).ln() + 1.0;
    let vec = |s: &str| {
        let mut v: HashMap<String, f64> = HashMap::new();
        for w in tokenize(s) {
            *v.entry(w).or_default() += 1.0;
        }
        for (w, x) in v.iter_mut() {
            *x *= idf(w);
        }
        v
    };
    let (va, vb) = (vec(a), vec(b));
    let dot: f64 = va
        .iter()
        .map(|(w, x)| x * vb.get(w).copied().unwrap_or(0.0))
        .sum();
    let na = va.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[test]
fn ranking_matches_reference_tfidf() {
    let fx = common::fixture(100, 1, 8);
    let texts: Vec<&str> = fx
        .corpus
        .documents()
        .iter()
        .map(|d| d.text.as_str())
        .collect();
    let model = TfIdfModel::fit(texts.iter().copied());
    for q in fx.queries.iter().take(10) {
        let qv = model.embed(&q.text);
        let ours: Vec<f64> = texts
            .iter()
            .map(|t| model.similarity(&qv, &model.embed(t)))
            .collect();
        let reference: Vec<f64> = texts
            .iter()
            .map(|t| reference_cosine(&texts, &q.text, t))
            .collect();
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let rank = |s: &[f64]| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
            idx
        };
        assert_eq!(rank(&ours)[..10], rank(&reference)[..10]);
    }
}

#[test]
fn top_five_equals_full_sort() {
    let fx = common::fixture(50, 1, 9);
    let ids: Vec<&str> = fx
        .corpus
        .documents()
        .iter()
        .map(|d| d.doc_id.as_str())
        .collect();
    let miner = NegativeMiner::new(&fx.tfidf, &fx.corpus, &ids).unwrap();
    for (pos, anchor) in ids.iter().enumerate() {
        let a = fx.tfidf.embed(&fx.corpus.doc(pos).text);
        let mut all: Vec<(f64, usize)> = (0..ids.len())
            .filter(|&j| j != pos)
            .map(|j| {
                (
                    fx.tfidf
                        .similarity(&a, &fx.tfidf.embed(&fx.corpus.doc(j).text)),
                    j,
                )
            })
            .collect();
        all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let expected: Vec<String> = all[..5].iter().map(|&(_, j)| ids[j].to_string()).collect();
        assert_eq!(miner.mine(anchor, 5).unwrap(), expected);
    }
}

#[test]
fn hundred_negatives_are_distinct_and_exclude_anchor() {
    let fx = common::fixture(1000, 1, 0);
    let ids: Vec<&str> = fx
        .corpus
        .documents()
        .iter()
        .map(|d| d.doc_id.as_str())
        .collect();
    let miner = NegativeMiner::new(&fx.tfidf, &fx.corpus, &ids).unwrap();
    for anchor in ids.iter().step_by(97) {
        let negs = miner.mine(anchor, 100).unwrap();
        assert_eq!(negs.len(), 100);
        assert_eq!(negs.iter().collect::<HashSet<_>>().len(), 100);
        assert!(!negs.iter().any(|n| n == anchor));
    }
    assert!(miner.mine(ids[0], 1000).is_err());
}
