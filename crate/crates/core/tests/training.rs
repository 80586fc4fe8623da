use ski_core::encoders::EncoderConfig;
use ski_core::losses::{DistillKind, KdMode};
use ski_core::synthdata::{generate_dataset, Dataset, DatasetConfig};
use ski_core::training::{
    baseline_pipeline, independent_pipeline, pretraining_matrix, scd_pipeline, videoclip_pipeline, BaselineKind, Models,
    TrainConfig,
};
use ski_core::zseval::{evaluate_fusion_split, evaluate_split, Side};

fn tiny_data(seed: u64) -> Dataset {
    generate_dataset(&DatasetConfig {
        num_classes: 4,
        samples_per_class: 4,
        t_s: 4,
        t_v: 2,
        height: 16,
        width: 16,
        seen_ratio: 0.5,
        seed,
        ..DatasetConfig::default()
    })
    .unwrap()
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        epochs_pretrain: 2,
        epochs_align: 2,
        epochs_finetune: 2,
        epochs_scd: 2,
        batch_size: 2,
        model: EncoderConfig {
            hidden: vec![8],
            d_out: 8,
            text_embed: 4,
            text_hidden: 8,
            text_len: 12,
        },
        ..TrainConfig::default()
    }
}

fn checksums(m: &Models) -> [String; 4] {
    [
        m.videoclip.video.params.checksum(),
        m.videoclip.text.params.checksum(),
        m.skeletonclip.skeleton.params.checksum(),
        m.skeletonclip.text.params.checksum(),
    ]
}

#[test]
fn alpha_zero_matches_independent_training_for_every_distillation_loss() {
    let data = tiny_data(3);
    let mut cfg = tiny_cfg();
    cfg.loss.alpha = 0.0;
    let reference = checksums(&independent_pipeline(&data, &cfg).unwrap().models);
    for (distill, kd_mode) in [
        (DistillKind::Mse, KdMode::Online),
        (DistillKind::Kl, KdMode::Online),
        (DistillKind::Contrastive, KdMode::Online),
        (DistillKind::Mse, KdMode::FeatureNoProj),
        (DistillKind::Mse, KdMode::FeatureProj),
    ] {
        cfg.loss.distill = distill;
        cfg.loss.kd_mode = kd_mode;
        let scd = checksums(&scd_pipeline(&data, &cfg).unwrap().models);
        assert_eq!(scd, reference, "{distill:?} {kd_mode:?}");
    }
}

#[test]
fn positive_alpha_changes_the_video_encoder() {
    let data = tiny_data(4);
    let mut cfg = tiny_cfg();
    cfg.loss.alpha = 1.0;
    let scd = scd_pipeline(&data, &cfg).unwrap().models;
    let plain = videoclip_pipeline(&data, &cfg).unwrap().models;
    assert_ne!(scd.videoclip.video.params.checksum(), plain.videoclip.video.params.checksum());
    assert_eq!(scd.videoclip.video.params.checksum(), scd_pipeline(&data, &cfg).unwrap().models.videoclip.video.params.checksum());
}

#[test]
fn baselines_score_through_the_video_side_text_encoder() {
    let data = tiny_data(5);
    for kind in [BaselineKind::Trimodal, BaselineKind::CrossProj] {
        let out = baseline_pipeline(kind, &data, &tiny_cfg()).unwrap();
        let m = &out.models;
        assert_eq!(m.skeletonclip.text.params.checksum(), m.videoclip.text.params.checksum(), "{kind:?}");
        let report = evaluate_split(&m.skeletonclip, &data, &data.split, Side::Unseen).unwrap();
        assert!((0.0..=1.0).contains(&report.top1));
    }
}

#[test]
fn fusion_evaluates_both_sides() {
    let data = tiny_data(6);
    let m = independent_pipeline(&data, &tiny_cfg()).unwrap().models;
    for side in [Side::Seen, Side::Unseen] {
        let r = evaluate_fusion_split(&m.videoclip, &m.skeletonclip, &data, &data.split, side).unwrap();
        assert_eq!(r.per_class_count.iter().sum::<usize>(), r.samples);
    }
}

#[test]
fn pretraining_matrix_toggles_the_preparation_phases() {
    let data = tiny_data(7);
    let cells = pretraining_matrix(&data, &tiny_cfg()).unwrap();
    let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["none", "skeletonclip", "videoclip", "both"]);
    let phases = |i: usize, p: &str| !cells[i].1.record.phase(p).is_empty();
    assert!(!phases(0, "pretrain") && !phases(0, "finetune") && phases(0, "scd"));
    assert!(phases(1, "pretrain") && phases(1, "align") && !phases(1, "finetune"));
    assert!(!phases(2, "pretrain") && phases(2, "finetune"));
    assert!(phases(3, "pretrain") && phases(3, "finetune"));
}
