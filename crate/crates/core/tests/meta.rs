mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use atelier_core::clients::mock::MockChat;
use atelier_core::judge::{Retrieval, TaskContext};
use atelier_core::meta::{
    ablation_run, calibration_metrics, evaluate_gold, fixed_few_shot_recipe, human_loo_baseline, meta_evaluate,
    objective_micro_metrics, spearman_rho, AblationStrategy, GoldItem, GoldSet, MetaError,
};
use atelier_core::Modality;
use common::*;

/// Rank = 1 + (#smaller) + (#equal - 1) / 2, computed by counting.
fn oracle_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let smaller = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson via the raw-sums formula.
fn oracle_rho(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (oracle_ranks(a), oracle_ranks(b));
    let n = a.len() as f64;
    let sx: f64 = ra.iter().sum();
    let sy: f64 = rb.iter().sum();
    let sxy: f64 = ra.iter().zip(&rb).map(|(x, y)| x * y).sum();
    let sxx: f64 = ra.iter().map(|x| x * x).sum();
    let syy: f64 = rb.iter().map(|y| y * y).sum();
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    (den > 0.0).then(|| (n * sxy - sx * sy) / den)
}

fn permutations(values: &[u8]) -> BTreeSet<Vec<u8>> {
    fn go(rest: &mut Vec<u8>, prefix: &mut Vec<u8>, out: &mut BTreeSet<Vec<u8>>) {
        if rest.is_empty() {
            out.insert(prefix.clone());
            return;
        }
        let mut seen = BTreeSet::new();
        for i in 0..rest.len() {
            if !seen.insert(rest[i]) {
                continue;
            }
            let v = rest.remove(i);
            prefix.push(v);
            go(rest, prefix, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = BTreeSet::new();
    go(&mut values.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Every permutation of 1..=n plus every permutation of each single-tie
/// variant (value t raised to t + 1).
fn lists(n: u8) -> Vec<Vec<f64>> {
    let base: Vec<u8> = (1..=n).collect();
    let mut all = permutations(&base);
    for t in 0..(n as usize - 1) {
        let mut v = base.clone();
        v[t] += 1;
        all.extend(permutations(&v));
    }
    all.into_iter().map(|l| l.into_iter().map(f64::from).collect()).collect()
}

#[test]
fn spearman_matches_brute_force_exhaustively() {
    let mut checked = 0usize;
    for n in 2..=6u8 {
        let ls = lists(n);
        for p in &ls {
            for g in &ls {
                match (spearman_rho(p, g), oracle_rho(p, g)) {
                    (Ok(a), Some(b)) => assert!((a - b).abs() <= 1e-12, "{p:?} {g:?}: {a} vs {b}"),
                    (Err(MetaError::Undefined(_)), None) => {}
                    (a, b) => panic!("{p:?} {g:?}: {a:?} vs {b:?}"),
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 6_000_000);
}

#[test]
fn hand_derived_metric_oracles() {
    let rho = spearman_rho(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((rho - 0.9f64.sqrt()).abs() < 1e-12);

    let c = calibration_metrics(&[1.0, 2.0, 4.0], &[2.0, 2.0, 2.0]).unwrap();
    let diffs = [1.0f64, 0.0, 2.0];
    assert!((c.mae - diffs.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert!((c.w1a - 2.0 / 3.0).abs() < 1e-15);

    let mut v = vec![(true, true); 3];
    v.push((true, false));
    v.push((false, true));
    v.extend(vec![(false, false); 5]);
    let m = objective_micro_metrics(&v).unwrap();
    assert_eq!((m.tp, m.fp, m.fn_, m.tn), (3, 1, 1, 5));
    assert!((m.acc - 0.8).abs() < 1e-12);
    assert!((m.f1.unwrap() - 0.75).abs() < 1e-12);
}

fn rated(id: &str, prompt: [[u8; 4]; 3]) -> GoldItem {
    GoldItem {
        item_id: id.into(),
        task_id: "oe_12".into(),
        category: None,
        prompter_id: id.into(),
        prompt: "p".into(),
        image: None,
        ratings: [(Modality::Prompt, prompt.iter().map(|r| r.to_vec()).collect())].into_iter().collect(),
        checkpoints: BTreeMap::new(),
    }
}

#[test]
fn loo_baseline_folds() {
    let same = GoldSet {
        items: vec![rated("a", [[2; 4]; 3]), rated("b", [[4; 4]; 3]), rated("c", [[3; 4]; 3])],
    };
    let perfect = human_loo_baseline(&same).unwrap();
    assert_eq!(perfect.macro_avg.mae, Some(0.0));
    assert_eq!(perfect.macro_avg.w1a, Some(1.0));
    assert_eq!(perfect.macro_avg.rho, Some(1.0));

    // Raters (a, a, b): item 1 = (2, 2, 4), item 2 = (4, 4, 1).
    let aab = GoldSet {
        items: vec![rated("x", [[2; 4], [2; 4], [4; 4]]), rated("y", [[4; 4], [4; 4], [1; 4]])],
    };
    // Fold 1 and 2: pred (2, 4) vs (3, 2.5). Fold 3: pred (4, 1) vs (2, 4).
    let folds = [(1.25, 0.5, -1.0), (1.25, 0.5, -1.0), (2.5, 0.0, -1.0)];
    let mean = |f: fn(&(f64, f64, f64)) -> f64| folds.iter().map(f).sum::<f64>() / 3.0;
    let r = human_loo_baseline(&aab).unwrap();
    assert!((r.macro_avg.mae.unwrap() - mean(|f| f.0)).abs() < 1e-12);
    assert!((r.macro_avg.w1a.unwrap() - mean(|f| f.1)).abs() < 1e-12);
    assert!((r.macro_avg.rho.unwrap() - mean(|f| f.2)).abs() < 1e-12);
    assert_eq!(r.cells.len(), 4);

    let mut two = aab.clone();
    two.items[0].ratings.get_mut(&Modality::Prompt).unwrap().pop();
    assert!(matches!(human_loo_baseline(&two), Err(MetaError::Input(_))));
}

fn gold() -> GoldSet {
    let mut g = GoldSet::load(&sample_dir().join("gold.json")).unwrap();
    g.attach_categories(&tasks());
    g
}

fn contexts() -> Vec<TaskContext> {
    tasks()
        .into_iter()
        .map(|t| TaskContext::load(t, &sample_dir()).unwrap())
        .collect()
}

#[tokio::test]
async fn sample_gold_set_round_trip() {
    let gold = gold();
    assert_eq!(gold.items.len(), 12);
    let judge = judge_with(mock_judge_chat(), Retrieval::default()).await;
    let (records, failures) = evaluate_gold(&judge, &gold, &contexts(), &sample_dir(), 4).await;
    assert!(failures.is_empty(), "{failures:?}");
    let report = meta_evaluate(&gold, &records).unwrap();
    assert_eq!(report.coverage.scored_items, 12);
    assert!(report.coverage.missing.is_empty(), "{:?}", report.coverage.missing);
    assert_eq!(report.cells.len(), 8);
    assert_eq!(report.cells.iter().filter(|c| c.modality == Modality::Image).map(|c| c.n).max(), Some(8));
    assert_eq!(report.per_category.len(), 3);
    let total: usize = gold
        .items
        .iter()
        .flat_map(|i| i.checkpoints.values())
        .map(|c| c.len())
        .sum();
    assert_eq!(report.objective.overall.unwrap().n, total);
    let mae = report.macro_avg.mae.unwrap();
    let mean_cell = report.cells.iter().map(|c| c.mae).sum::<f64>() / 8.0;
    assert!((mae - mean_cell).abs() < 1e-12);

    let missing = meta_evaluate(&gold, &records[1..]).unwrap();
    assert_eq!(missing.coverage.scored_items, 11);
    assert!(missing.coverage.missing[0].starts_with(&gold.items[0].item_id));
}

async fn ablation_requests(strategy: AblationStrategy, k: usize, seed: u64) -> (Vec<usize>, Vec<Vec<String>>) {
    let chat = Arc::new(MockChat::new("judge", 7));
    let judge = judge_with(chat.clone(), Retrieval::default()).await;
    let run = ablation_run(strategy, k, seed, &gold(), &judge, &contexts(), &sample_dir(), 1)
        .await
        .unwrap();
    let blocks = chat.requests().iter().filter(|r| is_subjective(r)).map(exemplar_blocks).collect();
    let picks = run
        .records
        .iter()
        .flat_map(|r| r.retrieved_exemplar_ids.values().cloned())
        .collect();
    (blocks, picks)
}

#[tokio::test]
async fn ablation_modes_shape_the_requests() {
    let (zero, _) = ablation_requests(AblationStrategy::ZeroShot, 3, 0).await;
    assert!(!zero.is_empty() && zero.iter().all(|b| *b == 0));
    let (fixed, picks) = ablation_requests(AblationStrategy::FixedFewShot, 3, 0).await;
    assert!(fixed.iter().all(|b| *b == 3));
    assert_eq!(picks.iter().collect::<BTreeSet<_>>().len(), 2);
    let (random, a) = ablation_requests(AblationStrategy::Random, 3, 11).await;
    assert!(random.iter().all(|b| *b == 3));
    let (_, b) = ablation_requests(AblationStrategy::Random, 3, 11).await;
    assert_eq!(a, b);
    let (_, c) = ablation_requests(AblationStrategy::Random, 3, 12).await;
    assert_ne!(a, c);
    for k in [1, 5] {
        let (sim, _) = ablation_requests(AblationStrategy::Similarity, k, 0).await;
        assert!(sim.iter().all(|b| *b == k));
    }
}

#[tokio::test]
async fn similarity_k3_matches_the_default_pipeline() {
    let gold = gold();
    let chat = Arc::new(MockChat::new("judge", 7));
    let judge = judge_with(chat.clone(), Retrieval::default()).await;
    evaluate_gold(&judge, &gold, &contexts(), &sample_dir(), 1).await;
    let default_requests = chat.requests();
    chat.clear_requests();
    ablation_run(AblationStrategy::Similarity, 3, 0, &gold, &judge, &contexts(), &sample_dir(), 1)
        .await
        .unwrap();
    assert_eq!(chat.requests(), default_requests);
}

#[tokio::test]
async fn fixed_recipe_spans_categories_and_range() {
    let judge = judge_with(mock_judge_chat(), Retrieval::default()).await;
    let Retrieval::FixedFewShot { prompt, image } = fixed_few_shot_recipe(&judge.memories).unwrap() else {
        panic!("expected fixed retrieval");
    };
    assert_eq!(prompt.len(), 3);
    assert_eq!(image.len(), 3);
    assert!(prompt[0].starts_with("prompt-OE") && prompt[1].starts_with("prompt-CO") && prompt[2].starts_with("prompt-IM"));
    let mean = |id: &str| {
        let e = judge.memories.values().find_map(|m| m.get(id)).unwrap();
        e.scores.values().map(|s| f64::from(*s)).sum::<f64>() / 4.0
    };
    assert!(mean(&prompt[0]) < mean(&prompt[1]) && mean(&prompt[1]) < mean(&prompt[2]));
    assert!(mean(&image[0]) < mean(&image[1]) && mean(&image[1]) < mean(&image[2]));
    assert_eq!(image.iter().collect::<BTreeSet<_>>().len(), 3);
    let _: &Path = &sample_dir();
}
