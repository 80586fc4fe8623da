use ski_core::encoders::EncoderConfig;
use ski_core::lvlm::{
    assemble_prompt, generate_caption, lvlm_checkpoint, lvlm_from_checkpoint, lvlm_single, LvlmConfig, Modality,
    Projector, TokenBlock, ToyCausalLM,
};
use ski_core::synthdata::{generate_dataset, DatasetConfig};
use ski_core::tensor::Matrix;
use ski_core::training::TrainConfig;

fn small() -> (DatasetConfig, TrainConfig, LvlmConfig) {
    let data = DatasetConfig {
        num_classes: 4,
        samples_per_class: 4,
        t_s: 4,
        t_v: 2,
        height: 16,
        width: 16,
        seen_ratio: 0.5,
        ..DatasetConfig::default()
    };
    let train = TrainConfig {
        epochs_pretrain: 1,
        epochs_align: 1,
        epochs_finetune: 1,
        epochs_scd: 1,
        batch_size: 2,
        model: EncoderConfig {
            hidden: vec![8],
            d_out: 8,
            text_embed: 4,
            text_hidden: 8,
            text_len: 12,
        },
        ..TrainConfig::default()
    };
    let lvlm = LvlmConfig {
        width: 16,
        epochs: 2,
        ..LvlmConfig::default()
    };
    (data, train, lvlm)
}

#[test]
fn omitting_the_skeleton_block_shortens_the_prompt_by_its_length() {
    let (_, _, cfg) = small();
    let lm = ToyCausalLM::new(&cfg).unwrap();
    let q_t = lm.text_block("describe the action").unwrap();
    let q_v = TokenBlock::new(Matrix::zeros(3, cfg.width), Modality::Visual).unwrap();
    let q_s = TokenBlock::new(Matrix::zeros(5, cfg.width), Modality::Skeleton).unwrap();
    let (with, _) = assemble_prompt(&lm, &q_t, &q_v, Some(&q_s)).unwrap();
    let (without, _) = assemble_prompt(&lm, &q_t, &q_v, None).unwrap();
    assert_eq!(with.rows() - without.rows(), 5);
    assert!(assemble_prompt(&lm, &q_t, &q_s, None).is_err());
}

#[test]
fn skeleton_trained_model_captions_without_skeleton_input() {
    let (dcfg, tcfg, lcfg) = small();
    let data = generate_dataset(&dcfg).unwrap();
    let run = lvlm_single(&data, &tcfg, &lcfg, true).unwrap();
    assert!(run.model.uses_skeleton());
    assert!(run.held_full.is_some());
    let clip = &data.triplets.iter().find(|t| t.holdout).unwrap().video;
    let caption = generate_caption(&run.model.lm, &run.model.proj_v, &run.video, clip, "describe the action", 6).unwrap();
    assert!(caption.split_whitespace().count() <= 6);
    let again = generate_caption(&run.model.lm, &run.model.proj_v, &run.video, clip, "describe the action", 6).unwrap();
    assert_eq!(caption, again);

    let wrong = Projector::new(Modality::Skeleton, run.video.d_out(), lcfg.width, 1).unwrap();
    assert!(generate_caption(&run.model.lm, &wrong, &run.video, clip, "describe the action", 6).is_err());
}

#[test]
fn checkpoint_restores_the_trained_projectors() {
    let (dcfg, tcfg, lcfg) = small();
    let data = generate_dataset(&dcfg).unwrap();
    let run = lvlm_single(&data, &tcfg, &lcfg, false).unwrap();
    assert!(run.held_full.is_none());
    let ckpt = lvlm_checkpoint(&run.model, &lcfg, "fp");
    let (model, cfg) = lvlm_from_checkpoint(&ckpt).unwrap();
    assert_eq!(cfg, lcfg);
    assert_eq!(model, run.model);
}
