use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
data.num_classes = 4
data.samples_per_class = 4
data.t_s = 4
data.t_v = 2
data.height = 16
data.width = 16
data.seen_ratio = 0.5
train.epochs_pretrain = 1
train.epochs_align = 1
train.epochs_finetune = 1
train.epochs_scd = 1
train.batch_size = 2
train.model.hidden = 8
train.model.d_out = 8
lvlm.epochs = 1
lvlm.width = 16
";

fn ski(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ski"))
        .args(args)
        .current_dir(dir)
        .env_remove("SKI_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn gen_data_writes_container_and_split() {
    let dir = setup();
    let p = dir.path();
    ok(&ski(p, &["gen-data", "--config", "tiny.cfg", "--out", "d/data.ski"]));
    assert!(p.join("d/data.ski").exists());
    let split = std::fs::read_to_string(p.join("d/data.split")).unwrap();
    assert!(split.contains("seen") && split.contains("unseen"));
    // same seed, same bytes
    ok(&ski(p, &["gen-data", "--config", "tiny.cfg", "--out", "d/again.ski"]));
    assert_eq!(std::fs::read(p.join("d/data.ski")).unwrap(), std::fs::read(p.join("d/again.ski")).unwrap());
}

#[test]
fn train_eval_and_inspect_round_trip() {
    let dir = setup();
    let p = dir.path();
    ok(&ski(p, &["gen-data", "--config", "tiny.cfg", "--out", "data.ski"]));
    let first = ok(&ski(p, &["train-scd", "--config", "tiny.cfg", "--kd-mode", "online", "--alpha", "0.5", "--out", "scd"]));
    assert!(first.starts_with("trained"));
    for f in ["config.kv", "fingerprint", "model.ckpt", "record.jsonl", "timing.json"] {
        assert!(p.join("scd").join(f).exists(), "{f}");
    }
    let again = ok(&ski(p, &["train-scd", "--config", "tiny.cfg", "--kd-mode", "online", "--alpha", "0.5", "--out", "scd"]));
    assert!(again.starts_with("up to date"));

    let eval = ok(&ski(
        p,
        &["eval", "--ckpt", "scd/model.ckpt", "--data", "data.ski", "--split", "unseen", "--out", "report.json", "--saliency", "1"],
    ));
    assert!(eval.contains("unseen top-1"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
    for field in ["side", "split", "model_fingerprint", "class_ids", "per_class_accuracy", "confusion", "top1"] {
        assert!(report.get(field).is_some(), "{field}");
    }
    let record = std::fs::read_to_string(p.join("scd/record.jsonl")).unwrap();
    let eval_line: serde_json::Value = serde_json::from_str(record.lines().last().unwrap()).unwrap();
    assert_eq!(eval_line["phase"], "eval");
    assert_eq!(eval_line["values"]["unseen_top1"], report["top1"]);
    let saliency: Vec<_> = std::fs::read_dir(p.join("report.saliency")).unwrap().collect();
    assert_eq!(saliency.len(), 2);

    let inspect = ok(&ski(p, &["inspect-ckpt", "scd/model.ckpt"]));
    assert!(inspect.contains("fingerprint") && inspect.contains("video.") && inspect.contains("norm"));
    assert!(!inspect.contains("skeleton."));
}

#[test]
fn baseline_and_stage_commands_run() {
    let dir = setup();
    let p = dir.path();
    for args in [
        vec!["train-baseline", "--kind", "trimodal", "--out", "tri"],
        vec!["pretrain-skeleton", "--out", "pre"],
        vec!["align-skeletonclip", "--out", "align"],
        vec!["finetune-videoclip", "--out", "ft"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", "tiny.cfg"]);
        ok(&ski(p, &full));
        assert!(p.join(args[args.len() - 1]).join("model.ckpt").exists(), "{args:?}");
    }
    let inspect = ok(&ski(p, &["inspect-ckpt", "pre/model.ckpt"]));
    assert!(inspect.contains("head.w"));
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(ski(p, &["train-scd", "--config", "tiny.cfg", "--kd-mode", "bogus"]).status.code(), Some(2));
    assert_eq!(ski(p, &["train-scd", "--set", "nonsense=1"]).status.code(), Some(2));
    assert_eq!(ski(p, &["train-scd", "--set", "train.learning_rate=-1"]).status.code(), Some(2));
    assert_eq!(ski(p, &["train-baseline", "--kind", "nope"]).status.code(), Some(2));
    assert_eq!(ski(p, &["no-such-verb"]).status.code(), Some(2));
    assert_eq!(ski(p, &["inspect-ckpt", "missing.ckpt"]).status.code(), Some(3));
    std::fs::write(p.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = ski(p, &["inspect-ckpt", "junk.ckpt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.ckpt"));
}

#[test]
fn run_plan_is_resumable_and_honors_the_output_override() {
    let dir = setup();
    let p = dir.path();
    let mut plan = String::from("plan.name = demo\nplan.seeds = 1,2\nplan.cells = only\nplan.out = ignored\ncell.only.method = scd\n");
    for line in TINY.lines().filter(|l| !l.starts_with("lvlm.")) {
        plan.push_str(&format!("base.{line}\n"));
    }
    std::fs::write(p.join("plan.cfg"), plan).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_ski"))
            .args(args)
            .current_dir(p)
            .env("SKI_OUT", "out")
            .output()
            .unwrap()
    };
    let first = ok(&run(&["run-plan", "plan.cfg"]));
    let dirs: Vec<_> = std::fs::read_dir(p.join("out/demo/only")).unwrap().collect();
    assert_eq!(dirs.len(), 2);
    assert_eq!(first.matches("trained").count(), 2);
    let summary = std::fs::read(p.join("out/demo/summary.tsv")).unwrap();
    let second = ok(&run(&["run-plan", "plan.cfg"]));
    assert_eq!(second.matches("skipped").count(), 2);
    assert!(!second.contains("trained"));
    assert_eq!(std::fs::read(p.join("out/demo/summary.tsv")).unwrap(), summary);
    assert!(!p.join("ignored").exists());

    let summarized = ok(&ski(p, &["summary", "out/demo/only/seed-1", "out/demo/only/seed-2", "--out", "sum"]));
    assert!(summarized.contains("harmonic") && summarized.contains("only"));
}

#[test]
fn lvlm_training_and_skeleton_free_captioning() {
    let dir = setup();
    let p = dir.path();
    let out = ok(&ski(p, &["train-lvlm", "--config", "tiny.cfg", "--use-skeleton", "true", "--out", "lvlm"]));
    assert!(out.contains("heldout_visual_only") && out.contains("heldout_with_skeleton"));
    for f in ["config.kv", "record.jsonl", "encoder.jsonl", "model.ckpt", "nll.tsv", "captions.txt"] {
        assert!(p.join("lvlm").join(f).exists(), "{f}");
    }
    let inspect = ok(&ski(p, &["inspect-ckpt", "lvlm/model.ckpt"]));
    assert!(inspect.contains("proj_v.w") && inspect.contains("proj_s.w") && inspect.contains("video."));
    assert!(!inspect.contains("lm.tok"));
    let caption = ok(&ski(p, &["caption", "--ckpt", "lvlm/model.ckpt", "--video", "3", "--query", "describe the action"]));
    assert!(!caption.contains("assistant:") && !caption.contains("<pad>"));
    assert_eq!(ski(p, &["caption", "--ckpt", "lvlm/model.ckpt", "--video", "999"]).status.code(), Some(2));
}
