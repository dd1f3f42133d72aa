use super::*;
use crate::geometry::kernel_calls;
use crate::testutil::{close, random_point, rng};

fn config(spaces: ComponentSpaceConfig) -> ModelConfig {
    ModelConfig {
        d_m: 4,
        d_c: 3,
        d_s: 2,
        word_dim: 5,
        num_classes: 6,
        vocab_size: 7,
        char_vocab_size: 9,
        mention_positions: 4,
        max_relative: 3,
        dropout_input: 0.2,
        dropout_concat: 0.1,
        spaces,
        stability: StabilityConfig::default(),
    }
}

fn words(space: SpaceTag) -> Matrix {
    let mut r = rng(11);
    let rows: Vec<Vec<f64>> = (0..7).map(|_| random_point(&mut r, 5, 0.8)).collect();
    let m = Matrix::from_rows(&rows);
    match space {
        SpaceTag::Hyperbolic => m,
        SpaceTag::Euclidean => {
            let o = Eval::default();
            Matrix::from_rows(&rows.iter().map(|x| kernel::log0(&o, x)).collect::<Vec<_>>())
        }
    }
}

fn model(spaces: ComponentSpaceConfig, seed: u64) -> Model {
    Model::new(config(spaces), words(spaces.encoder), seed).unwrap()
}

fn example() -> EncodedExample {
    EncodedExample {
        mention: vec![2, OOV],
        chars: vec![1, 4, 4, 8],
        context: vec![0, 1, 2, OOV, 5, 6],
        span: (2, 4),
        labels: vec![0, 3],
    }
}

/// Perturbs biases away from the origin so that oracle comparisons exercise
/// every term.
fn jitter(m: &mut Model, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<ParamId> = m.params.ids().collect();
    for id in ids {
        let p = m.params.get_mut(id);
        if p.name.ends_with("bias") || p.name.ends_with(".b") || p.name.ends_with(".bq") || p.name.ends_with(".bk") {
            let n = p.cols;
            p.data = random_point(&mut r, n, 0.3);
            if p.manifold == crate::params::Manifold::Euclidean {
                p.data.iter_mut().for_each(|v| *v *= 2.0);
            }
        }
    }
}

#[test]
fn logits_have_one_entry_per_class() {
    for spaces in ComponentSpaceConfig::all() {
        let m = model(spaces, 1);
        assert_eq!(m.classify(&example()).unwrap().len(), 6, "{spaces}");
    }
}

#[test]
fn same_seed_gives_identical_logits() {
    let a = model(ComponentSpaceConfig::default(), 5).classify(&example()).unwrap();
    let b = model(ComponentSpaceConfig::default(), 5).classify(&example()).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = model(ComponentSpaceConfig::default(), 6).classify(&example()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn crossings_follow_the_config() {
    let o = Eval::default();
    for spaces in ComponentSpaceConfig::all() {
        let m = model(spaces, 2);
        let p = m.bind(&o);
        let f = m.forward::<_, ChaCha8Rng>(&o, &p, &example(), None).unwrap();
        assert_eq!(f.crossings, spaces.expected_crossings(), "{spaces}");
    }
    let mixed = ComponentSpaceConfig {
        mlr: SpaceTag::Hyperbolic,
        ..ComponentSpaceConfig::uniform(SpaceTag::Euclidean)
    };
    assert_eq!(mixed.expected_crossings(), 1);
}

#[test]
fn euclidean_model_never_touches_the_kernel() {
    let m = model(ComponentSpaceConfig::uniform(SpaceTag::Euclidean), 3);
    let before = kernel_calls();
    let mut r = rng(0);
    let o = Eval::default();
    let p = m.bind(&o);
    m.forward(&o, &p, &example(), Some(Dropout { rng: &mut r })).unwrap();
    m.classify(&example()).unwrap();
    assert_eq!(kernel_calls(), before);
    let h = model(ComponentSpaceConfig::default(), 3);
    h.classify(&example()).unwrap();
    assert!(kernel_calls() > before);
}

#[test]
fn hyperbolic_text_vector_is_a_ball_point() {
    let m = model(ComponentSpaceConfig::default(), 4);
    let o = Eval::default();
    let p = m.bind(&o);
    let mut r = rng(9);
    for _ in 0..20 {
        let f = m.forward(&o, &p, &example(), Some(Dropout { rng: &mut r })).unwrap();
        assert!(crate::backend::norm(&f.text) <= 1.0 - 1e-5 + 1e-12);
        assert!(f.logits.iter().all(|z| z.is_finite()));
    }
}

#[test]
fn logit_is_zero_at_the_class_point() {
    let mut m = model(ComponentSpaceConfig::default(), 5);
    jitter(&mut m, 1);
    let o = Eval::default();
    let text = m.forward::<_, ChaCha8Rng>(&o, &m.bind(&o), &example(), None).unwrap().text;
    let mlr = m.components.mlr.clone();
    let dim = m.config.classifier_dim();
    m.params.get_mut(mlr.p).data[2 * dim..3 * dim].copy_from_slice(&text);
    let z = m.classify(&example()).unwrap();
    assert!(z[2].abs() < 1e-12, "{}", z[2]);
}

#[test]
fn single_token_mention_and_single_char() {
    let mut m = model(ComponentSpaceConfig::default(), 6);
    jitter(&mut m, 2);
    let o = Eval::default();
    let p = m.bind(&o);
    let c = &m.components;
    let w = m.words.row(3).to_vec();
    let token = c.mention_ffnn.forward(&o, &p, &w).unwrap();
    let att = c.mention_attention.forward(&o, &p, &[token.clone()]).unwrap();
    assert_eq!(att.weights, vec![1.0]);
    let pos = m.params.get(c.mention_attention.positions).row(0).to_vec();
    assert!(close(&att.output, &kernel::mobius_add(&o, &token, &pos), 1e-15));

    let ch = m.params.get(c.chars).row(5).to_vec();
    let h = c.char_rnn.run(&o, &p, &[ch]).unwrap();
    let pooled = uniform_pool(&o, SpaceTag::Hyperbolic, &h).unwrap();
    assert!(close(&pooled, &h[0], 1e-12));
}

#[test]
fn forward_matches_hand_composition() {
    for spaces in [
        ComponentSpaceConfig::default(),
        ComponentSpaceConfig {
            attention: SpaceTag::Euclidean,
            mlr: SpaceTag::Euclidean,
            ..ComponentSpaceConfig::default()
        },
    ] {
        let mut m = model(spaces, 7);
        jitter(&mut m, 3);
        let o = Eval::default();
        let p = m.bind(&o);
        let c = &m.components;
        let ex = example();
        let conv = |x: &Vec<f64>, a: SpaceTag, b: SpaceTag| layers::convert(&o, x, a, b);
        let oov = m.params.get(c.oov).data.clone();
        let word = |id: usize| if id == OOV { oov.clone() } else { m.words.row(id).to_vec() };

        let t0 = c.mention_ffnn.forward(&o, &p, &word(2)).unwrap();
        let t1 = c.mention_ffnn.forward(&o, &p, &word(OOV)).unwrap();
        let tokens = vec![conv(&t0, spaces.encoder, spaces.attention), conv(&t1, spaces.encoder, spaces.attention)];
        let mention = c.mention_attention.forward(&o, &p, &tokens).unwrap().output;

        let chars: Vec<Vec<f64>> = ex.chars.iter().map(|&i| m.params.get(c.chars).row(i).to_vec()).collect();
        let hs: Vec<Vec<f64>> = c
            .char_rnn
            .run(&o, &p, &chars)
            .unwrap()
            .iter()
            .map(|h| conv(h, spaces.encoder, spaces.attention))
            .collect();
        let char_repr = uniform_pool(&o, spaces.attention, &hs).unwrap();

        let ws: Vec<Vec<f64>> = ex.context.iter().map(|&i| word(i)).collect();
        let ss: Vec<Vec<f64>> = c
            .context_gru
            .forward(&o, &p, &ws)
            .unwrap()
            .iter()
            .map(|s| conv(s, spaces.encoder, spaces.attention))
            .collect();
        // span (2, 4), max_rel 3: offsets -2 -1 0 0 1 2
        let ctx = c
            .context_attention
            .forward_at(&o, &p, &ss, &[1, 2, 3, 3, 4, 5], None)
            .unwrap()
            .output;
        let parts: Vec<Vec<f64>> = [mention, char_repr, ctx]
            .iter()
            .map(|x| conv(x, spaces.attention, spaces.concat))
            .collect();
        let text = c.concat.forward(&o, &p, &parts).unwrap();
        let want = c.mlr.logits(&o, &p, &conv(&text, spaces.concat, spaces.mlr)).unwrap();
        let got = m.classify(&ex).unwrap();
        assert!(close(&got, &want, 1e-12), "{spaces}");
    }
}

#[test]
fn relative_positions_clip() {
    let span = (5, 7);
    let rows: Vec<usize> = (0..12).map(|i| relative_position(i, span, 3)).collect();
    assert_eq!(rows, vec![0, 0, 0, 1, 2, 3, 3, 4, 5, 6, 6, 6]);
}

#[test]
fn text_norm_cases() {
    let o = Eval::default();
    assert_eq!(text_norm(&o, SpaceTag::Hyperbolic, &vec![0.0; 3]), 0.0);
    let d = text_norm(&o, SpaceTag::Hyperbolic, &vec![0.5, 0.0, 0.0]);
    assert!((d - 1.0986122886681098).abs() < 1e-12);
    assert_eq!(text_norm(&o, SpaceTag::Euclidean, &vec![3.0, 4.0, 0.0]), 5.0);
}

#[test]
fn space_config_parsing() {
    let c: ComponentSpaceConfig = "euclidean".parse().unwrap();
    assert_eq!(c, ComponentSpaceConfig::uniform(SpaceTag::Euclidean));
    let c: ComponentSpaceConfig = "mlr=euclidean,attention=eu".parse().unwrap();
    assert_eq!(c.mlr, SpaceTag::Euclidean);
    assert_eq!(c.attention, SpaceTag::Euclidean);
    assert_eq!(c.encoder, SpaceTag::Hyperbolic);
    assert!("decoder=euclidean".parse::<ComponentSpaceConfig>().is_err());
    assert_eq!(ComponentSpaceConfig::all().len(), 16);
}

#[test]
fn invalid_config_lists_every_problem() {
    let mut cfg = config(ComponentSpaceConfig::default());
    cfg.d_m = 0;
    cfg.dropout_input = 1.5;
    match cfg.validate() {
        Err(Error::Config(p)) => assert_eq!(p.len(), 2),
        other => panic!("{other:?}"),
    }
}
