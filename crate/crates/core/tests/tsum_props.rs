use guide_core::embedding::{
    alignment_loss, contrastive_loss, cosine, load_table, mock_encode, mock_table, write_table, EmbeddingVector,
};
use guide_core::tsum::{
    aggregate, attention_pool, attention_weights, build_tsum, constraint_field, env_field, fit_component_weights,
    fit_env_model, raw_map, relevance_field, EnvFeatureMap, EnvLinearModel, Field,
};
use guide_core::{parse_task, ComponentWeights, PatchGrid, TsumError, Vocabulary};
use proptest::prelude::*;

fn grid(nx: usize, ny: usize) -> PatchGrid {
    PatchGrid::new((0.0, 0.0), 1.0, nx, ny).unwrap()
}

fn field(g: PatchGrid, v: &[f64]) -> Field {
    Field { grid: g, values: v.to_vec() }
}

#[test]
fn pooled_examples() {
    let a = attention_weights(&[0.8, 0.2]);
    assert!((a[0] - 0.6457).abs() < 1e-4 && (a[1] - 0.3543).abs() < 1e-4);
    assert!((attention_pool(&[0.8, 0.2]) - 0.5874).abs() < 1e-4);
    assert!((attention_pool(&[0.9, -0.9]) - 0.6446).abs() < 1e-4);
    assert_eq!(attention_pool(&[0.37]), 0.37);
    assert_eq!(attention_pool(&[]), 0.0);
}

#[test]
fn fields_from_mock_table() {
    let vocab = Vocabulary::default_lake();
    let g = PatchGrid::covering(100.0, 100.0, 5.0).unwrap();
    let spec = parse_task("go to the dock while avoiding the exclusion zone", &vocab).unwrap();
    let table = mock_table(&vocab, g, &spec, 64, 3).unwrap();
    let phi = relevance_field(&spec, &table).unwrap();
    let c = constraint_field(&spec, &table).unwrap();
    let dock = g.index(18, 3);
    let far = g.index(2, 18);
    assert!(phi.values[dock] > phi.values[far]);
    let zone = g.index(13, 15);
    assert!(c.values[zone] > c.values[far]);

    let bare = parse_task("go to the dock", &vocab).unwrap();
    let t2 = mock_table(&vocab, g, &bare, 64, 3).unwrap();
    assert!(constraint_field(&bare, &t2).unwrap().values.iter().all(|&v| v == 0.0));

    let other = parse_task("explore the top half", &vocab).unwrap();
    assert!(matches!(relevance_field(&other, &table), Err(TsumError::MissingKey(_))));

    let fmap = EnvFeatureMap::synthetic(&vocab, g);
    let tsum = build_tsum(&spec, &table, &fmap, &EnvLinearModel::lake_default(), ComponentWeights::default(), 0.1, 2.0)
        .unwrap();
    assert!(tsum.sample((94.0, 16.0)) < tsum.sample((5.0, 95.0)));
}

#[test]
fn aggregate_example_values() {
    let g = grid(2, 1);
    let ones = field(g, &[1.0, 1.0]);
    let raw = raw_map(&ones, &ones, &ones, &ComponentWeights::default()).unwrap();
    assert!((raw[0] - 1.0).abs() < 1e-12);
    let t = aggregate(&ones, &ones, &ones, ComponentWeights::default(), 0.1, 2.0).unwrap();
    assert_eq!(t.acceptable, vec![1.05, 1.05]);
    let phi = field(g, &[0.2, -0.4]);
    let w = ComponentWeights { w_phi: 1.0, w_c: 0.0, w_e: 0.0 };
    assert_eq!(raw_map(&phi, &ones, &ones, &w).unwrap(), phi.values);
}

#[test]
fn env_examples() {
    let g = grid(1, 1);
    let fmap = EnvFeatureMap::new(g, 1, vec![3.0]).unwrap();
    let e = env_field(&fmap, &EnvLinearModel { w_env: vec![2.0], b_env: 1.0 }).unwrap();
    assert_eq!(e.values, vec![7.0]);
    assert!(matches!(
        env_field(&fmap, &EnvLinearModel { w_env: vec![1.0, 2.0], b_env: 0.0 }),
        Err(TsumError::DimensionMismatch { .. })
    ));
    let two = EnvFeatureMap::new(grid(2, 1), 1, vec![0.0, 1.0]).unwrap();
    let m = fit_env_model(&two, &[1.0, 3.0]).unwrap();
    assert!((m.w_env[0] - 2.0).abs() < 1e-12 && (m.b_env - 1.0).abs() < 1e-12);
    let flat = EnvFeatureMap::new(grid(3, 1), 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
    let m = fit_env_model(&flat, &[4.0, 4.0, 4.0]).unwrap();
    assert_eq!(m.w_env, vec![0.0, 0.0]);
    assert!((m.b_env - 4.0).abs() < 1e-12);
    assert!(matches!(fit_env_model(&flat, &[4.0, 5.0, 4.0]), Err(TsumError::DegenerateSystem { .. })));
}

#[test]
fn weight_fit_projection_and_rank() {
    let g = grid(4, 4);
    let phi = Field::from_fn(g, |(x, y)| (0.3 * x + 0.1 * y).sin());
    let c = Field::from_fn(g, |(x, y)| (0.2 * x * y).cos());
    let e = Field::from_fn(g, |(x, _)| x * 0.1 - 0.3);
    let w = fit_component_weights(&phi, &c, &e, &phi.values).unwrap();
    assert!((w.w_phi - 1.0).abs() < 1e-6 && w.w_c.abs() < 1e-6 && w.w_e.abs() < 1e-6);
    let scaled = Field { grid: g, values: phi.values.iter().map(|v| 2.0 * v).collect() };
    assert!(matches!(
        fit_component_weights(&phi, &scaled, &Field::constant(g, 0.0), &phi.values),
        Err(TsumError::DegenerateSystem { rank: 1, .. })
    ));
}

#[test]
fn embedding_file_examples() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocabulary::default_lake();
    let g = PatchGrid::new((0.0, 0.0), 50.0, 2, 2).unwrap();
    let spec = parse_task("go to the dock and then explore the top half while avoiding the exclusion zone", &vocab).unwrap();
    let table = mock_table(&vocab, g, &spec, 512, 1).unwrap();
    assert_eq!(table.text_keys().len(), 3);
    let manifest = write_table(&table, dir.path()).unwrap();
    let blob = std::fs::metadata(dir.path().join("embeddings.f32")).unwrap().len();
    assert_eq!(blob, (3 + 4) * 512 * 4);
    assert_eq!(load_table(&manifest).unwrap(), table);

    let bytes = std::fs::read(dir.path().join("embeddings.f32")).unwrap();
    std::fs::write(dir.path().join("embeddings.f32"), &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_table(&manifest), Err(guide_core::EmbeddingError::Format { .. })));
}

#[test]
fn loss_examples() {
    let expected = (-1.0f64 / 0.07).exp().ln_1p();
    assert!((contrastive_loss(&[1.0, 0.0], 0, 0.07) - expected).abs() < 1e-10);
    assert!((contrastive_loss(&[0.3, 0.3], 0, 0.07) - 2f64.ln()).abs() < 1e-12);
    assert_eq!(contrastive_loss(&[0.5], 0, 0.07), 0.0);
    assert!((alignment_loss(&[1], &[0.0], 1.0) - 0.25).abs() < 1e-12);
    assert!(alignment_loss(&[0], &[-1000.0], 0.07) < 1e-12);
    assert!((alignment_loss(&[1, 0], &[0.0, 0.0], 1.0) - 0.5).abs() < 1e-12);
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-1.0f32..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn attention_rows_are_distributions(sims in proptest::collection::vec(-1.0f64..1.0, 1..12), shift in -5.0f64..5.0) {
        let a = attention_weights(&sims);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(a.iter().all(|&w| w > 0.0 && w <= 1.0));
        let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
        for (x, y) in a.iter().zip(attention_weights(&shifted)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!(attention_pool(&sims).abs() <= 1.0);
    }

    #[test]
    fn aggregate_is_linear_in_weights(
        vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -2.0f64..2.0), 6),
        a in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        b in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
    ) {
        let g = grid(3, 2);
        let phi = field(g, &vals.iter().map(|v| v.0).collect::<Vec<_>>());
        let c = field(g, &vals.iter().map(|v| v.1).collect::<Vec<_>>());
        let e = field(g, &vals.iter().map(|v| v.2).collect::<Vec<_>>());
        let wa = ComponentWeights { w_phi: a.0, w_c: a.1, w_e: a.2 };
        let wb = ComponentWeights { w_phi: b.0, w_c: b.1, w_e: b.2 };
        let ws = ComponentWeights { w_phi: a.0 + b.0, w_c: a.1 + b.1, w_e: a.2 + b.2 };
        let (ra, rb, rs) = (raw_map(&phi, &c, &e, &wa).unwrap(), raw_map(&phi, &c, &e, &wb).unwrap(), raw_map(&phi, &c, &e, &ws).unwrap());
        for j in 0..6 {
            prop_assert!((ra[j] + rb[j] - rs[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn acceptable_is_antitone_and_bounded(raw in proptest::collection::vec(-3.0f64..3.0, 9), lo in 0.01f64..1.0, span in 0.1f64..5.0) {
        let g = grid(3, 3);
        let zero = Field::constant(g, 0.0);
        let w = ComponentWeights { w_phi: 1.0, w_c: 0.0, w_e: 0.0 };
        let t = aggregate(&field(g, &raw), &zero, &zero, w, lo, lo + span).unwrap();
        for i in 0..9 {
            prop_assert!(t.acceptable[i] >= lo && t.acceptable[i] <= lo + span);
            for j in 0..9 {
                if t.raw[i] > t.raw[j] {
                    prop_assert!(t.acceptable[i] <= t.acceptable[j]);
                }
            }
        }
    }

    #[test]
    fn env_field_matches_naive_dot(w in proptest::collection::vec(-3.0f64..3.0, 3), b in -2.0f64..2.0, f in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let fmap = EnvFeatureMap::new(grid(2, 2), 3, f.clone()).unwrap();
        let e = env_field(&fmap, &EnvLinearModel { w_env: w.clone(), b_env: b }).unwrap();
        for j in 0..4 {
            let mut acc = b;
            for k in 0..3 {
                acc += w[k] * f[j * 3 + k];
            }
            prop_assert!((e.values[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn env_fit_recovers_planted_model(w in proptest::collection::vec(-3.0f64..3.0, 3), b in -2.0f64..2.0, seed in 0u64..1000) {
        let g = grid(5, 4);
        let f: Vec<f64> = (0..g.len() * 3).map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64 / 100.0).collect();
        let fmap = EnvFeatureMap::new(g, 3, f).unwrap();
        let targets = env_field(&fmap, &EnvLinearModel { w_env: w.clone(), b_env: b }).unwrap().values;
        let m = fit_env_model(&fmap, &targets).unwrap();
        for k in 0..3 {
            prop_assert!((m.w_env[k] - w[k]).abs() < 1e-6);
        }
        prop_assert!((m.b_env - b).abs() < 1e-6);
    }

    #[test]
    fn weight_fit_inverts_aggregate(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -2.0f64..2.0), 10)) {
        let g = grid(5, 2);
        let phi = field(g, &vals.iter().map(|v| v.0).collect::<Vec<_>>());
        let c = field(g, &vals.iter().map(|v| v.1).collect::<Vec<_>>());
        let e = field(g, &vals.iter().map(|v| v.2).collect::<Vec<_>>());
        let reference = raw_map(&phi, &c, &e, &ComponentWeights::default()).unwrap();
        match fit_component_weights(&phi, &c, &e, &reference) {
            Ok(w) => {
                prop_assert!((w.w_phi - 0.5).abs() < 1e-6 && (w.w_c - 0.3).abs() < 1e-6 && (w.w_e - 0.2).abs() < 1e-6);
            }
            Err(TsumError::DegenerateSystem { rank, .. }) => prop_assert!(rank < 3),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(a in unit_vec(8), b in unit_vec(8), la in 0.1f32..10.0, mb in 0.1f32..10.0) {
        let (va, vb) = (EmbeddingVector(a.clone()), EmbeddingVector(b.clone()));
        let ab = cosine(&va, &vb).unwrap();
        prop_assert!((ab - cosine(&vb, &va).unwrap()).abs() < 1e-12);
        let sa = EmbeddingVector(a.iter().map(|x| x * la).collect());
        let sb = EmbeddingVector(b.iter().map(|x| x * mb).collect());
        prop_assert!((ab - cosine(&sa, &sb).unwrap()).abs() < 1e-6);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn contrastive_loss_is_monotone_in_negatives(sims in proptest::collection::vec(-1.0f64..1.0, 2..8), k in 1usize..8, drop in 0.0f64..1.0) {
        let k = k % (sims.len() - 1) + 1;
        let base = contrastive_loss(&sims, 0, 0.07);
        prop_assert!(base >= 0.0);
        let mut lower = sims.clone();
        lower[k] -= drop;
        prop_assert!(contrastive_loss(&lower, 0, 0.07) <= base + 1e-12);
    }

    #[test]
    fn mock_encoding_is_pure(key in "[a-z ]{1,20}", seed in 0u64..100) {
        let a = mock_encode(&key, 32, seed);
        prop_assert_eq!(&a, &mock_encode(&key, 32, seed));
        prop_assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn table_round_trips_bitwise(vals in proptest::collection::vec(-1e3f32..1e3, 4 * 6), seed in 0u64..50) {
        let dir = tempfile::tempdir().unwrap();
        let g = PatchGrid::new((1.0, -2.0), 2.5, 2, 2).unwrap();
        let texts = vec![
            (format!("k{seed}"), EmbeddingVector(vals[0..4].to_vec())),
            ("second".to_string(), EmbeddingVector(vals[4..8].to_vec())),
        ];
        let patches: Vec<EmbeddingVector> = (0..4).map(|i| EmbeddingVector(vals[8 + 4 * i..12 + 4 * i].to_vec())).collect();
        let t = guide_core::EmbeddingTable::new(4, texts, patches, g).unwrap();
        let m = write_table(&t, dir.path()).unwrap();
        prop_assert_eq!(load_table(m).unwrap(), t);
    }
}
