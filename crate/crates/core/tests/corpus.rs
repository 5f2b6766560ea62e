use proptest::collection::vec;
use proptest::prelude::*;

use textgcn::corpus::synthetic::{generate, SyntheticConfig};
use textgcn::corpus::{interaction_quantile, merge_corpora, read_interactions, write_interactions, IdMaps, InteractionMatrix};
use textgcn::diffusion::textgcn;
use textgcn::embed::{mock_embed, EmbeddingMatrix};

fn with_degrees(degrees: &[usize]) -> InteractionMatrix {
    let pairs = degrees
        .iter()
        .enumerate()
        .flat_map(|(u, &d)| (0..d).map(move |i| (u as u32, i as u32)));
    InteractionMatrix::from_pairs(degrees.len(), 64, pairs).unwrap().0
}

/// Adjacency-list text for random interactions over string IDs.
fn corpus_lines() -> impl Strategy<Value = Vec<String>> {
    vec((0u8..15, vec(0u8..25, 1..6)), 1..30).prop_map(|rows| {
        rows.into_iter()
            .map(|(u, items)| {
                let items: Vec<String> = items.iter().map(|i| format!("item{i}")).collect();
                format!("user{u} {}", items.join(" "))
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn quantile_matches_sort_and_index(degrees in vec(1usize..40, 1..60)) {
        let m = with_degrees(&degrees);
        let mut sorted = degrees.clone();
        sorted.sort_unstable();
        for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
            prop_assert_eq!(interaction_quantile(&m, q).unwrap(), sorted[rank - 1]);
        }
    }

    #[test]
    fn shuffled_lines_give_identical_matrix(lines in corpus_lines(), seed in any::<u64>()) {
        let text = lines.join("\n");
        let mut maps = IdMaps::new();
        let first = read_interactions(text.as_bytes(), "mem", &mut maps).unwrap();

        let mut shuffled = lines.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let mut fixed = maps.clone();
        let second = read_interactions(shuffled.join("\n").as_bytes(), "mem", &mut fixed).unwrap();
        prop_assert_eq!(&fixed, &maps);
        prop_assert_eq!(&second.matrix, &first.matrix);

        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_interactions(&mut a, &first.matrix, &maps).unwrap();
        write_interactions(&mut b, &second.matrix, &fixed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn round_trip_is_identity(lines in corpus_lines()) {
        let mut maps = IdMaps::new();
        let p = read_interactions(lines.join("\n").as_bytes(), "mem", &mut maps).unwrap();
        let mut buf = Vec::new();
        write_interactions(&mut buf, &p.matrix, &maps).unwrap();
        let mut again = maps.clone();
        let q = read_interactions(&buf[..], "mem", &mut again).unwrap();
        prop_assert_eq!(q.matrix, p.matrix);
    }
}

fn small(seed: u64, prefix: &str) -> textgcn::corpus::DatasetSplit {
    let cfg: SyntheticConfig = format!("clusters:2,users:30,items:20,max_degree:8,seed:{seed},prefix:{prefix}").parse().unwrap();
    generate(&cfg).unwrap()
}

#[test]
fn merge_keeps_counts_and_degrees() {
    let (a, b) = (small(1, "a"), small(2, "b"));
    let mut user_degs: Vec<u32> = a.train.user_degrees().into_iter().chain(b.train.user_degrees()).collect();
    let mut item_degs: Vec<u32> = a.train.item_degrees().iter().chain(b.train.item_degrees()).copied().collect();
    let nnz = a.train.nnz() + b.train.nnz();
    let merged = merge_corpora(vec![a, b]).unwrap();
    assert_eq!(merged.train.nnz(), nnz);
    let mut got_users = merged.train.user_degrees();
    let mut got_items = merged.train.item_degrees().to_vec();
    for v in [&mut user_degs, &mut item_degs, &mut got_users, &mut got_items] {
        v.sort_unstable();
    }
    assert_eq!(got_users, user_degs);
    assert_eq!(got_items, item_degs);
}

#[test]
fn merged_diffusion_restricts_to_each_part() {
    let parts = [small(3, "a"), small(4, "b")];
    let embs: Vec<EmbeddingMatrix> = parts.iter().map(|p| mock_embed(&p.catalog, 16, 0).unwrap()).collect();
    let merged = merge_corpora(parts.to_vec()).unwrap();
    let stacked = EmbeddingMatrix::vstack(&embs.iter().collect::<Vec<_>>()).unwrap();
    for layers in 0..=3 {
        let joint = textgcn(&merged.train, &stacked, layers).unwrap();
        for (p, part) in parts.iter().enumerate() {
            let alone = textgcn(&part.train, &embs[p], layers).unwrap();
            assert_eq!(joint.user_final.slice_rows(merged.user_range(p)), alone.user_final, "users, part {p}, L={layers}");
            assert_eq!(joint.item_final.slice_rows(merged.item_range(p)), alone.item_final, "items, part {p}, L={layers}");
        }
    }
}
