use proptest::prelude::*;

use pdalign::embed::{cosine_distance, cosine_similarity, normalize, Embedding, EmbeddingTable};
use pdalign::eval::localization_report;
use pdalign::inference::{
    apply_comparative_prompting, comparative_prompt, diff_classify, select_confused_pairs, zeroshot_classify,
    ClassDifference, Order, PromptBank, PromptEntry, PromptKind,
};
use pdalign::pipeline::{filter_generation, truncate_tokens, FilterOutcome};
use pdalign::train::{checkpoint, contrastive_loss, mse_loss, EncoderParams, EncoderSpec};

const DIM: usize = 6;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("away from zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

fn unit(dim: usize) -> impl Strategy<Value = Embedding> {
    vector(dim).prop_map(|v| normalize(&Embedding::new(v).unwrap()).unwrap())
}

fn batch() -> impl Strategy<Value = (Vec<Embedding>, Vec<Embedding>)> {
    (2usize..7).prop_flat_map(|n| (prop::collection::vec(unit(DIM), n), prop::collection::vec(unit(DIM), n)))
}

fn bank(n: usize) -> impl Strategy<Value = PromptBank> {
    prop::collection::vec(unit(DIM), n).prop_map(|es| {
        let entries = es
            .into_iter()
            .enumerate()
            .map(|(i, embedding)| PromptEntry { class: format!("c{i}"), prompt: format!("p{i}"), embedding })
            .collect();
        PromptBank::new(PromptKind::Standard, entries).unwrap()
    })
}

fn all_diffs(n: usize) -> impl Strategy<Value = Vec<ClassDifference>> {
    prop::collection::vec(unit(DIM), n * (n - 1)).prop_map(move |es| {
        let mut it = es.into_iter();
        let mut out = Vec::new();
        for b in 0..n {
            for a in 0..n {
                if a != b {
                    out.push(ClassDifference {
                        class_b: format!("c{b}"),
                        class_a: format!("c{a}"),
                        difference_text: String::new(),
                        embedding: it.next().unwrap(),
                    });
                }
            }
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn contrastive_loss_is_permutation_equivariant((xs, ys) in batch(), seed in any::<u64>(), tau in 0.05f64..2.0) {
        let n = xs.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let px: Vec<Embedding> = perm.iter().map(|&i| xs[i].clone()).collect();
        let py: Vec<Embedding> = perm.iter().map(|&i| ys[i].clone()).collect();
        let a = contrastive_loss(&xs, &ys, tau).unwrap();
        let b = contrastive_loss(&px, &py, tau).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-10);
        for (k, &i) in perm.iter().enumerate() {
            for (u, v) in a.grad_y[i].iter().zip(&b.grad_y[k]) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn contrastive_loss_is_bounded_below((xs, ys) in batch(), tau in 0.05f64..2.0) {
        let out = contrastive_loss(&xs, &ys, tau).unwrap();
        prop_assert!(out.loss >= 0.0);
        prop_assert!(out.grad_y.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn mse_loss_is_summed_squared_error((xs, ys) in batch()) {
        prop_assert!(mse_loss(&xs, &xs).unwrap().loss.abs() < 1e-15);
        let out = mse_loss(&xs, &ys).unwrap();
        let manual = xs.iter().zip(&ys).map(|(x, y)| {
            x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }).sum::<f64>();
        prop_assert!((out.loss - manual).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent(v in vector(9)) {
        let once = normalize(&Embedding::new(v).unwrap()).unwrap();
        let twice = normalize(&once).unwrap();
        prop_assert!((once.norm() - 1.0).abs() < 1e-12);
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_is_scale_invariant(u in vector(DIM), v in vector(DIM), s in 1e-3f64..1e3, t in 1e-3f64..1e3) {
        let (u, v) = (Embedding::new(u).unwrap(), Embedding::new(v).unwrap());
        let base = cosine_similarity(&u, &v).unwrap();
        let scaled = cosine_similarity(&u.scale(s), &v.scale(t)).unwrap();
        prop_assert!((base - scaled).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
        let flipped = cosine_distance(&u.scale(-1.0), &v).unwrap();
        prop_assert!((cosine_distance(&u, &v).unwrap() + flipped - 2.0).abs() < 1e-12);
    }

    #[test]
    fn diff_classify_is_antisymmetric(gi in unit(DIM), gj in unit(DIM), f in vector(DIM), s in 1e-3f64..1e3) {
        let f = Embedding::new(f).unwrap();
        let fwd = gi.try_sub(&gj).unwrap().dot(&f).unwrap();
        let one = diff_classify(&gi, &gj, &f).unwrap();
        let other = diff_classify(&gj, &gi, &f).unwrap();
        if fwd != 0.0 {
            prop_assert_eq!(one, other.flip());
        } else {
            prop_assert_eq!((one, other), (Order::First, Order::First));
        }
        prop_assert_eq!(diff_classify(&gi, &gj, &f.scale(s)).unwrap(), one);
    }

    #[test]
    fn confused_pair_ranking_ignores_direction(
        rows in (2usize..8).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u64..20, n), n)),
        k in 1usize..6,
    ) {
        let n = rows.len();
        let transposed: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| rows[j][i]).collect()).collect();
        let a = select_confused_pairs(&rows, k).unwrap();
        prop_assert_eq!(&a, &select_confused_pairs(&transposed, k).unwrap());
        prop_assert_eq!(a.len(), k.min(n * (n - 1) / 2));
        let score = |&(x, y): &(usize, usize)| rows[x][y] + rows[y][x];
        for w in a.windows(2) {
            prop_assert!(w[0].0 < w[0].1);
            prop_assert!(score(&w[0]) > score(&w[1]) || (score(&w[0]) == score(&w[1]) && w[0] < w[1]));
        }
    }

    #[test]
    fn full_alpha_leaves_predictions_unchanged(
        b in bank(4), diffs in all_diffs(4), images in prop::collection::vec(unit(DIM), 1..20),
    ) {
        let pairs = select_confused_pairs(&vec![vec![1; 4]; 4], 6).unwrap();
        let updated = apply_comparative_prompting(&b, &diffs, &pairs, 1.0).unwrap();
        for img in &images {
            prop_assert_eq!(zeroshot_classify(img, &b).unwrap().index, zeroshot_classify(img, &updated).unwrap().index);
        }
        for (x, y) in b.entries.iter().zip(&updated.entries) {
            for (p, q) in x.embedding.as_slice().iter().zip(y.embedding.as_slice()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn comparative_prompt_is_unit_and_blends(fa in unit(DIM), fb in unit(DIM), fd in unit(DIM), alpha in 0.0f64..1.0) {
        if let Ok(p) = comparative_prompt(&fa, &fb, &fd, alpha) {
            prop_assert!((p.norm() - 1.0).abs() < 1e-12);
            let raw = fa.lincomb(alpha, &fb.try_sub(&fd).unwrap(), 1.0 - alpha).unwrap();
            prop_assert!((cosine_similarity(&p, &raw).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn localization_distances_are_complementary(b in bank(4), diffs in all_diffs(4)) {
        for row in localization_report(&b, &diffs).unwrap() {
            prop_assert!((row.d_fwd + row.d_rev - 2.0).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&row.d_fwd));
        }
    }

    #[test]
    fn table_bytes_round_trip(rows in prop::collection::vec(prop::collection::vec(-10.0f32..10.0, 5), 0..12)) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("id-{i}")).collect();
        let t = EmbeddingTable::new(ids, 5, rows.concat(), false).unwrap();
        let back = EmbeddingTable::from_bytes(&t.to_bytes()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), hidden in prop::collection::vec(1usize..6, 0..3)) {
        let spec = EncoderSpec { vocab: 16, token_dim: 3, hidden, dim: 4, bucket_width: 2, n_buckets: 3 };
        let p = EncoderParams::init(spec, seed).unwrap();
        let bytes = checkpoint::to_bytes(&p);
        prop_assert_eq!(checkpoint::to_bytes(&checkpoint::from_bytes(&bytes).unwrap()), bytes);
    }

    #[test]
    fn truncation_keeps_a_bounded_prefix(words in prop::collection::vec("[a-z]{1,5}", 0..30), sep in "[ \n\t]{1,3}", k in 0usize..40) {
        let text = words.join(&sep);
        let cut = truncate_tokens(&text, k);
        prop_assert!(text.starts_with(cut));
        prop_assert_eq!(cut.split_whitespace().count(), words.len().min(k));
    }

    #[test]
    fn accepted_generations_are_clean(
        parts in prop::collection::vec(
            prop::sample::select(vec!["The cat", " is ", "larger", ".", "\n", "Q:", "Note:", "#include", "#define", "  ", "x"]),
            0..16,
        ),
    ) {
        let raw = parts.concat();
        match filter_generation(&raw) {
            FilterOutcome::Accept { text, .. } => {
                prop_assert!(!text.is_empty());
                prop_assert_eq!(text.trim(), text.as_str());
                prop_assert!(!text.contains("#include") && !text.contains("#define"));
                prop_assert!(!text.contains("Q:") && !text.contains("Note:"));
                prop_assert_eq!(filter_generation(&text), FilterOutcome::Accept { text: text.clone(), truncated: None });
            }
            FilterOutcome::Reject(_) => {}
        }
    }
}
