use dissim::evaluation::{source_pairs, Synthesizer};
use dissim::models::{DetectorConfig, DetectorModel, HeadKind};
use dissim::patches::{build_triplets, Triplet, TripletConfig};
use dissim::toyworld::{generate_dataset, ClassSet, DatasetSpec, SceneSpec};
use dissim::training::{train_detector, TrainConfig};

fn toy_triplets(seed: u64, n: usize) -> Vec<Triplet> {
    let classes = ClassSet::default();
    let spec = DatasetSpec {
        scene: SceneSpec::square(64, 16),
        count: 16,
        seed,
        ..DatasetSpec::default()
    };
    let images = generate_dataset(&spec, &classes).unwrap();
    let (real, syn) = source_pairs(&images, &Synthesizer::Oracle, &classes, seed).unwrap();
    let cfg = TripletConfig {
        patch_size: 16,
        seed,
        ..TripletConfig::default()
    };
    let mut t = build_triplets(&real, &syn, &cfg).unwrap().triplets;
    assert!(t.len() >= n);
    t.truncate(n);
    t
}

#[test]
fn loss_falls_over_training_for_most_seeds() {
    let classes = ClassSet::default();
    let mut falls = 0;
    let mut curves = Vec::new();
    for seed in 0..3 {
        let triplets = toy_triplets(seed, 200);
        let cfg = DetectorConfig {
            head: HeadKind::FullyConnected,
            patch_size: 16,
            base_filters: 8,
            conv_layers: 4,
            lambda_d: 1.0,
        };
        let mut model = DetectorModel::new(cfg, seed, None).unwrap();
        let train = TrainConfig {
            epochs: 4,
            seed,
            ..TrainConfig::default()
        };
        let curve = train_detector(&triplets, &mut model, &train, &classes, None).unwrap();
        let (first, last) = (curve[0].mean_loss, curve.last().unwrap().mean_loss);
        if last < first {
            falls += 1;
        }
        curves.push((first, last));
    }
    assert!(falls >= 2, "{curves:?}");
}

#[test]
fn epoch_order_and_result_depend_only_on_seed() {
    let classes = ClassSet::default();
    let triplets = toy_triplets(7, 64);
    let cfg = DetectorConfig {
        head: HeadKind::Deconv,
        patch_size: 16,
        base_filters: 4,
        conv_layers: 4,
        lambda_d: 1.0,
    };
    let train = TrainConfig {
        epochs: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = DetectorModel::new(cfg.clone(), 7, None).unwrap();
        let curve = train_detector(&triplets, &mut m, &train, &classes, None).unwrap();
        (curve, m.to_checkpoint().to_bytes())
    };
    assert_eq!(run(), run());
}
