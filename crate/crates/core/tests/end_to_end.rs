mod common;

use rand::Rng;
use textgcn::corpus::synthetic::{generate, SyntheticConfig};
use textgcn::corpus::{DatasetSplit, EvalPart, InteractionMatrix};
use textgcn::embed::{mock_embed, EmbeddingMatrix};
use textgcn::rank::{baseline_pop, baseline_random, evaluate};
use textgcn::tower::TowerMode;
use textgcn::trainer::{apply_zero_shot, run_ablation, TrainConfig};

fn synthetic(spec: &str) -> (DatasetSplit, EmbeddingMatrix) {
    let cfg: SyntheticConfig = spec.parse().unwrap();
    let split = generate(&cfg).unwrap();
    let emb = mock_embed(&split.catalog, 64, 0).unwrap();
    (split, emb)
}

const A: &str = "clusters:2,users:200,items:100,seed:7";
const B: &str = "clusters:2,users:200,items:100,seed:8,prefix:b";

#[test]
fn full_report_matches_brute_force() {
    let mut rng = common::rng(19);
    let (nu, ni, dim) = (20, 30, 5);
    let mut train_pairs = Vec::new();
    let mut test_pairs = Vec::new();
    for u in 0..nu as u32 {
        for i in 0..ni as u32 {
            match rng.gen_range(0..10) {
                0 | 1 => train_pairs.push((u, i)),
                2 => test_pairs.push((u, i)),
                _ => {}
            }
        }
    }
    let (train, _) = InteractionMatrix::from_pairs(nu, ni, train_pairs).unwrap();
    let (test, _) = InteractionMatrix::from_pairs(nu, ni, test_pairs).unwrap();
    let rows = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        EmbeddingMatrix::from_vec(n, dim, (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let users = rows(nu, &mut rng);
    let items = rows(ni, &mut rng);
    let k = 20;
    let report = evaluate(&train, &test, &users, &items, k).unwrap();

    let (u64s, i64s) = (common::to_f64(&users), common::to_f64(&items));
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let mut sums = (0.0, 0.0, 0.0);
    let mut counted = 0;
    for u in 0..nu {
        if train.row(u).is_empty() || test.row(u).is_empty() {
            continue;
        }
        let mut cands: Vec<(f64, u32)> = (0..ni as u32)
            .filter(|i| !train.row(u).contains(i))
            .map(|i| (cos(&u64s[u], &i64s[i as usize]), i))
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let ranked: Vec<u32> = cands.iter().map(|c| c.1).collect();
        let (r, n, h) = common::metrics_oracle(&ranked, test.row(u), k);
        sums = (sums.0 + r, sums.1 + n, sums.2 + h);
        counted += 1;
    }
    let c = counted as f64;
    assert_eq!(report.users, counted);
    assert!((report.recall - sums.0 / c).abs() <= 1e-9);
    assert!((report.ndcg - sums.1 / c).abs() <= 1e-9);
    assert!((report.hr - sums.2 / c).abs() <= 1e-9);
}

#[test]
fn textgcn_beats_pop_beats_random() {
    let (split, emb) = synthetic(A);
    let gcn = apply_zero_shot(None, &split, &emb, 2, EvalPart::Test, 20).unwrap();
    let pop = baseline_pop(&split.train, &split.test, 20).unwrap();
    let random = baseline_random(&split.train, &split.test, 20, 0).unwrap();
    assert!(gcn.recall > pop.recall && pop.recall > random.recall, "{} {} {}", gcn.recall, pop.recall, random.recall);
}

/// Diffusion alone transfers to an unseen corpus with the same title geometry.
#[test]
fn zero_shot_textgcn_beats_pop() {
    let (b, emb) = synthetic(B);
    let gcn = apply_zero_shot(None, &b, &emb, 2, EvalPart::Test, 20).unwrap();
    let pop = baseline_pop(&b.train, &b.test, 20).unwrap();
    assert!(gcn.recall >= pop.recall, "{} vs {}", gcn.recall, pop.recall);
}

#[test]
fn median_positives_not_worse_than_single() {
    let (split, emb) = synthetic(A);
    let base = TrainConfig {
        batch_users: 32,
        negatives: 64,
        ..TrainConfig::default()
    };
    let rows = run_ablation(&split, &emb, &base, &[1, 2, 3, 4, 5]).unwrap();
    let two: Vec<_> = rows.iter().filter(|r| r.tower_mode == TowerMode::Two).collect();
    let (single, median) = (two.iter().find(|r| r.k == 1).unwrap(), two.iter().find(|r| r.k > 1).unwrap());
    assert!(median.recall >= single.recall - 0.005, "{} vs {}", median.recall, single.recall);
}
