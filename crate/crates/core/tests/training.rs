use ngcl_core::gat::predict_batch;
use ngcl_core::synth::{synth_graph_dataset, SynthSpec};
use ngcl_core::{
    finetune, init_encoder, init_gat, pretrain, AugmentationPolicy, BrainGraph, Error, FinetuneConfig, PretrainConfig,
};

fn dataset(noise: f64, seed: u64) -> Vec<BrainGraph> {
    synth_graph_dataset(&SynthSpec {
        n_per_class: 20,
        nodes: 10,
        soz_size: 3,
        noise,
        seed,
    })
    .unwrap()
}

fn small_pretrain() -> PretrainConfig {
    PretrainConfig {
        hidden: 32,
        epochs: 5,
        batch_size: 16,
        ..PretrainConfig::default()
    }
}

#[test]
fn pretraining_is_deterministic_and_lowers_the_loss() {
    let graphs = dataset(0.3, 1);
    let cfg = PretrainConfig {
        epochs: 30,
        ..small_pretrain()
    };
    let a = pretrain(&graphs, &cfg, &AugmentationPolicy::default(), 7).unwrap();
    let b = pretrain(&graphs, &cfg, &AugmentationPolicy::default(), 7).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_losses, b.epoch_losses);
    assert_eq!(a.trace.len(), 30 * 3);
    let first = a.epoch_losses[0];
    let last = *a.epoch_losses.last().unwrap();
    assert!(last < first, "{first} -> {last}");

    let c = pretrain(&graphs, &cfg, &AugmentationPolicy::default(), 8).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn zero_epochs_leave_initial_parameters() {
    let graphs = dataset(0.3, 2);
    let out = pretrain(
        &graphs,
        &PretrainConfig {
            epochs: 0,
            ..small_pretrain()
        },
        &AugmentationPolicy::default(),
        3,
    )
    .unwrap();
    let mut init = init_encoder(5, 32, 3).unwrap();
    init.dropout = 0.2;
    assert_eq!(out.params, init);

    let cfg = FinetuneConfig {
        epochs: 0,
        ..FinetuneConfig::default()
    };
    let tuned = finetune(&graphs, &init, &cfg, 4).unwrap();
    assert_eq!(tuned.gat, init_gat(32, &cfg, 4).unwrap());
    assert!(tuned.epoch_losses.is_empty());
}

#[test]
fn frozen_encoder_contract() {
    let graphs = dataset(0.3, 3);
    let enc = pretrain(&graphs, &small_pretrain(), &AugmentationPolicy::default(), 0)
        .unwrap()
        .params;
    let cfg = FinetuneConfig {
        epochs: 5,
        batch_size: 16,
        ..FinetuneConfig::default()
    };
    let frozen = finetune(&graphs, &enc, &cfg, 1).unwrap();
    assert_eq!(frozen.encoder, enc);
    assert_eq!(finetune(&graphs, &enc, &cfg, 1).unwrap().gat, frozen.gat);

    let joint = finetune(
        &graphs,
        &enc,
        &FinetuneConfig {
            finetune_encoder: true,
            ..cfg
        },
        1,
    )
    .unwrap();
    assert_ne!(joint.encoder, enc);
}

#[test]
fn separable_data_is_fit() {
    let graphs = dataset(0.0, 4);
    let enc = init_encoder(5, 32, 0).unwrap();
    let cfg = FinetuneConfig {
        epochs: 150,
        batch_size: 16,
        lr: 1e-2,
        ..FinetuneConfig::default()
    };
    let out = finetune(&graphs, &enc, &cfg, 0).unwrap();
    let last = *out.epoch_losses.last().unwrap();
    assert!(last < 0.1, "final BCE {last}");
    let refs: Vec<&BrainGraph> = graphs.iter().collect();
    let probs = predict_batch(&refs, &enc, &out.gat).unwrap();
    for (p, g) in probs.iter().zip(&graphs) {
        assert_eq!(*p >= 0.5, g.label.as_f64() == 1.0);
    }
}

#[test]
fn single_class_sets_are_rejected() {
    let ictal: Vec<BrainGraph> = dataset(0.3, 5)
        .into_iter()
        .filter(|g| g.label.as_f64() == 1.0)
        .collect();
    let enc = init_encoder(5, 8, 0).unwrap();
    assert!(matches!(
        finetune(&ictal, &enc, &FinetuneConfig::default(), 0),
        Err(Error::Training(_))
    ));
    assert!(matches!(
        pretrain(
            &ictal,
            &PretrainConfig {
                epochs: 1,
                ..small_pretrain()
            },
            &AugmentationPolicy::default(),
            0
        ),
        Err(Error::Training(_))
    ));
    assert!(matches!(
        pretrain(&[], &small_pretrain(), &AugmentationPolicy::default(), 0),
        Err(Error::Training(_))
    ));
}
