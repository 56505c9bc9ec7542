use super::*;
use crate::corpus::compute_tfidf;
use crate::numerics::{flatten, grad_check, unflatten};
use proptest::prelude::*;
use rand::Rng;

/// a b c d; rows {a:5,b:1,c:1}, {a:1,d:1}, {b:1,d:1}
fn toy() -> (BowMatrix, TfIdfStats) {
    let bow = BowMatrix::from_rows(
        4,
        vec![
            vec![(0, 5), (1, 1), (2, 1)],
            vec![(0, 1), (3, 1)],
            vec![(1, 1), (3, 1)],
        ],
    )
    .unwrap();
    let tfidf = compute_tfidf(&bow).unwrap();
    (bow, tfidf)
}

fn recon(rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|i| 100.0 + i as f64).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

#[test]
fn hand_trace_positive_and_negative() {
    let (bow, tfidf) = toy();
    // scores: a = 5 ln 1.5, b = ln 1.5, c = ln 3
    let x = bow.dense_rows(&[0]);
    let xr = recon(1, 4);
    let p1 = tfidf_positive(&x, &[0], &xr, &tfidf, 1).unwrap();
    assert_eq!(p1.xprime.row(0), &[5.0, 101.0, 1.0, 0.0]);
    assert_eq!(p1.source, SampleSource::Tfidf);
    let p2 = tfidf_positive(&x, &[0], &xr, &tfidf, 2).unwrap();
    assert_eq!(p2.xprime.row(0), &[5.0, 101.0, 102.0, 0.0]);
    let n1 = tfidf_negative(&x, &[0], &xr, &tfidf, 1).unwrap();
    assert_eq!(n1.row(0), &[100.0, 1.0, 1.0, 0.0]);
    let n2 = tfidf_negative(&x, &[0], &xr, &tfidf, 2).unwrap();
    assert_eq!(n2.row(0), &[100.0, 1.0, 102.0, 0.0]);
    let n3 = tfidf_negative(&x, &[0], &xr, &tfidf, 3).unwrap();
    assert_eq!(n3.row(0), &[100.0, 101.0, 102.0, 0.0]);
}

#[test]
fn lowest_ranked_word_takes_recon_value() {
    // df: a = 1, b = 2, c = 4 of 4 docs, so scores rank c < b < a
    let bow = BowMatrix::from_rows(
        3,
        vec![
            vec![(0, 5), (1, 1), (2, 1)],
            vec![(2, 1)],
            vec![(2, 1)],
            vec![(1, 1), (2, 1)],
        ],
    )
    .unwrap();
    let tfidf = compute_tfidf(&bow).unwrap();
    let x = bow.dense_rows(&[0]);
    let xr = Matrix::from_rows(&[[9.0, 9.0, 0.4]]);
    assert_eq!(
        tfidf_positive(&x, &[0], &xr, &tfidf, 1)
            .unwrap()
            .xprime
            .row(0),
        &[5.0, 1.0, 0.4]
    );
    assert_eq!(
        tfidf_negative(&x, &[0], &xr, &tfidf, 1).unwrap().row(0),
        &[9.0, 1.0, 1.0]
    );
}

#[test]
fn zero_replacements_copy_the_anchor() {
    let (bow, tfidf) = toy();
    let x = bow.to_dense();
    let docs = [0, 1, 2];
    assert_eq!(
        tfidf_positive(&x, &docs, &recon(3, 4), &tfidf, 0)
            .unwrap()
            .xprime,
        x
    );
    assert_eq!(
        tfidf_negative(&x, &docs, &recon(3, 4), &tfidf, 0).unwrap(),
        x
    );
}

#[test]
fn ties_split_by_word_index() {
    let (bow, tfidf) = toy();
    let x = bow.dense_rows(&[2]);
    let xr = recon(1, 4);
    assert_eq!(
        tfidf_positive(&x, &[2], &xr, &tfidf, 1)
            .unwrap()
            .xprime
            .row(0),
        &[0.0, 101.0, 0.0, 1.0]
    );
    assert_eq!(
        tfidf_negative(&x, &[2], &xr, &tfidf, 1).unwrap().row(0),
        &[0.0, 1.0, 0.0, 103.0]
    );
}

#[test]
fn too_few_words_is_an_error() {
    let (bow, tfidf) = toy();
    let x = bow.dense_rows(&[1]);
    let err = tfidf_positive(&x, &[1], &recon(1, 4), &tfidf, 3).unwrap_err();
    assert!(matches!(
        err,
        Error::TooFewWords {
            row: 1,
            present: 2,
            t: 3
        }
    ));
}

#[test]
fn scale_to_counts_uses_row_totals() {
    let x = Matrix::from_rows(&[[2.0, 2.0], [0.0, 5.0]]);
    let xp = Matrix::from_rows(&[[0.25, 0.75], [0.5, 0.5]]);
    assert_eq!(
        scale_to_counts(&x, &xp).unwrap(),
        Matrix::from_rows(&[[1.0, 3.0], [2.5, 2.5]])
    );
}

/// Word `w` is selected iff fewer than `t` words precede it in the
/// selection direction.
fn rank_oracle(words: &[u32], scores: &[f64], t: usize, which: Extreme) -> Vec<usize> {
    let before = |i: usize, j: usize| match which {
        Extreme::Lowest => scores[j] < scores[i] || (scores[j] == scores[i] && words[j] < words[i]),
        Extreme::Highest => {
            scores[j] > scores[i] || (scores[j] == scores[i] && words[j] > words[i])
        }
    };
    let mut chosen: Vec<usize> = (0..words.len())
        .filter(|&i| (0..words.len()).filter(|&j| j != i && before(i, j)).count() < t)
        .map(|i| words[i] as usize)
        .collect();
    chosen.sort_unstable();
    chosen
}

#[test]
fn selection_matches_rank_oracle_on_random_corpus() {
    let mut r = rng::stream(3, 0);
    let mut rows = Vec::new();
    for _ in 0..1000 {
        let len = r.random_range(5..40);
        // small count range so that equal scores are common
        rows.push(
            (0..len)
                .map(|_| (r.random_range(0..200usize), r.random_range(1..4u32)))
                .collect(),
        );
    }
    let bow = BowMatrix::from_rows(200, rows).unwrap();
    let tfidf = compute_tfidf(&bow).unwrap();
    for doc in 0..bow.rows() {
        let (words, scores) = tfidf.row(doc);
        for t in [1, 3, 5] {
            for which in [Extreme::Lowest, Extreme::Highest] {
                let mut got = replacement_words(words, scores, t, which);
                got.sort_unstable();
                assert_eq!(
                    got,
                    rank_oracle(words, scores, t, which),
                    "doc {doc} t {t} {which:?}"
                );
            }
        }
    }
}

#[test]
fn ema_update_hand_value() {
    let mut teacher = Linear {
        weight: Matrix::filled(1, 1, 1.0),
        bias: Matrix::zeros(1, 1),
    };
    let target = Linear {
        weight: Matrix::filled(1, 1, 10.0),
        bias: Matrix::filled(1, 1, 2.0),
    };
    ema_update(&mut teacher, &target, 0.9).unwrap();
    assert!((teacher.weight.get(0, 0) - 1.9).abs() < 1e-12);
    assert!((teacher.bias.get(0, 0) - 0.2).abs() < 1e-12);
}

#[test]
fn ema_limits() {
    let mut r = rng::stream(0, 0);
    let a = Linear::glorot(3, 2, &mut r);
    let b = Linear::glorot(3, 2, &mut r);
    let mut t = a.clone();
    ema_update(&mut t, &b, 1.0).unwrap();
    assert_eq!(t, a);
    ema_update(&mut t, &b, 0.0).unwrap();
    assert_eq!(t, b);
}

fn random_bow(docs: usize, vocab: usize, seed: u64) -> BowMatrix {
    let mut r = rng::stream(seed, 0);
    let rows = (0..docs)
        .map(|_| {
            (0..8)
                .map(|_| (r.random_range(0..vocab), r.random_range(1..4u32)))
                .collect()
        })
        .collect();
    BowMatrix::from_rows(vocab, rows).unwrap()
}

#[test]
fn augmenter_gradient_matches_finite_differences() {
    let bow = random_bow(5, 6, 1);
    let cfg = AdvSamplerConfig {
        hidden: 7,
        init_scale: 1.0,
        ..AdvSamplerConfig::default()
    };
    let mut r = rng::stream(2, 0);
    let mut m = AugmenterParams::new(6, 5, &cfg, &mut r).unwrap();
    // distinct teacher so both classifier terms contribute
    m.teacher = MlpParams::new(
        &[6, 7, 5],
        &[Activation::Relu, Activation::Identity],
        &mut r,
    )
    .unwrap();
    let x = bow.dense_rows(&[0, 1, 2, 3, 4]);
    let labels = [0, 1, 2, 3, 4];
    let base = flatten(&m.g);
    let rep = grad_check(
        |p| {
            let mut mm = m.clone();
            unflatten(&mut mm.g, p);
            let (l, g, _, _) = augmenter_objective(&mm, &x, &labels).unwrap();
            (l, flatten(&g))
        },
        &base,
        1e-6,
    );
    assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    assert!(rep.checked > base.len() / 2);
}

#[test]
fn zero_augment_steps_returns_initial_augmentation() {
    let bow = random_bow(12, 10, 4);
    let cfg = AdvSamplerConfig {
        epochs: 3,
        average_window: 2,
        augment_steps: 0,
        hidden: 8,
        batch_size: 5,
        ..AdvSamplerConfig::default()
    };
    let out = adversarial_fit(&bow, &cfg, 9).unwrap();
    let init = AugmenterParams::new(10, 12, &cfg, &mut rng::stream(9, 10)).unwrap();
    let expected = augment(&bow.to_dense(), &init.g).unwrap();
    assert!(out.positives.max_abs_diff(&expected) < 1e-12);
    assert_eq!(out.log.len(), 3);
}

#[test]
fn adversarial_fit_is_deterministic() {
    let bow = random_bow(12, 10, 5);
    let cfg = AdvSamplerConfig {
        epochs: 3,
        average_window: 2,
        hidden: 8,
        batch_size: 5,
        ..AdvSamplerConfig::default()
    };
    let a = adversarial_fit(&bow, &cfg, 1).unwrap();
    let b = adversarial_fit(&bow, &cfg, 1).unwrap();
    assert_eq!(a, b);
    let c = adversarial_fit(&bow, &cfg, 2).unwrap();
    assert_ne!(a.positives, c.positives);
}

#[test]
fn teacher_outperforms_target_on_augmented_samples() {
    let cfg = AdvSamplerConfig {
        epochs: 40,
        average_window: 5,
        hidden: 32,
        batch_size: 10,
        ema_decay: 0.99,
        target_lr: 1e-2,
        augment_lr: 1e-2,
        augment_steps: 5,
        ..AdvSamplerConfig::default()
    };
    let (mut target, mut teacher) = (0.0, 0.0);
    for seed in 0..10u64 {
        let bow = random_bow(20, 30, 100 + seed);
        let out = adversarial_fit(&bow, &cfg, seed).unwrap();
        target += out.log.iter().map(|l| l.target_acc).sum::<f64>() / out.log.len() as f64;
        teacher += out.log.iter().map(|l| l.teacher_acc).sum::<f64>() / out.log.len() as f64;
        for (x, p) in bow.to_dense().data().iter().zip(out.positives.data()) {
            assert!(p >= x);
        }
    }
    assert!(
        teacher > target,
        "teacher {} target {}",
        teacher / 10.0,
        target / 10.0
    );
}

#[test]
fn positive_table_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pos.bin");
    let ids = vec!["a".to_string(), "doc 2".to_string()];
    let m = Matrix::from_rows(&[[1.0, 2.5], [0.0, 1e-9]]);
    save_positive_table(&path, &ids, &m).unwrap();
    assert_eq!(load_positive_table(&path).unwrap(), (ids, m));
}

#[test]
fn config_validation() {
    assert!(AdvSamplerConfig::default().validate().is_ok());
    assert!(AdvSamplerConfig {
        ema_decay: 1.0,
        ..AdvSamplerConfig::default()
    }
    .validate()
    .is_err());
    assert!(AdvSamplerConfig {
        epochs: 2,
        average_window: 3,
        ..AdvSamplerConfig::default()
    }
    .validate()
    .is_err());
}

proptest! {
    #[test]
    fn augmentation_never_decreases_counts(seed in 0u64..500, scale in 0.01f64..5.0) {
        let mut r = rng::stream(seed, 0);
        let mut g = Linear::glorot(6, 6, &mut r);
        g.weight.scale(scale);
        g.bias = rng::standard_normal(1, 6, &mut r);
        let x = random_bow(4, 6, seed).to_dense();
        let xa = augment(&x, &g).unwrap();
        for (a, b) in xa.data().iter().zip(x.data()) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn replacement_only_touches_selected_words(seed in 0u64..200, t in 1usize..4) {
        let bow = random_bow(6, 12, seed);
        let tfidf = compute_tfidf(&bow).unwrap();
        let rows: Vec<usize> = (0..6).filter(|&r| bow.row_types(r) >= t).collect();
        let x = bow.dense_rows(&rows);
        let xr = recon(rows.len(), 12);
        let p = tfidf_positive(&x, &rows, &xr, &tfidf, t).unwrap().xprime;
        for (i, _) in rows.iter().enumerate() {
            let changed = (0..12).filter(|&w| p.get(i, w) != x.get(i, w)).count();
            prop_assert_eq!(changed, t);
        }
    }

    #[test]
    fn positive_and_negative_sets_are_disjoint(seed in 0u64..300, t in 1usize..5) {
        let bow = random_bow(8, 15, seed);
        let tfidf = compute_tfidf(&bow).unwrap();
        for doc in 0..bow.rows() {
            let (words, scores) = tfidf.row(doc);
            if 2 * t > words.len() {
                continue;
            }
            let lo = replacement_words(words, scores, t, Extreme::Lowest);
            let hi = replacement_words(words, scores, t, Extreme::Highest);
            prop_assert!(lo.iter().all(|w| !hi.contains(w)));
        }
    }
}
