use ski_core::encoders::EncoderConfig;
use ski_core::experiment::{
    builtin_plan, emit_summary, models_from_checkpoint, read_summary, run_dir, run_plan, sweep_alpha, Cell, ExperimentPlan,
    Method, RunStatus,
};
use ski_core::params::Checkpoint;
use ski_core::synthdata::{generate_dataset, DatasetConfig};
use ski_core::training::{RunRecord, TrainConfig};
use ski_core::zseval::{evaluate_split, Side};

fn tiny_cell(name: &str, method: Method) -> Cell {
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
    Cell::new(name, method, train, data).unwrap()
}

fn tiny_plan(out: &std::path::Path) -> ExperimentPlan {
    let cells = vec![
        tiny_cell("scd", Method::Scd).with_label("SCD"),
        tiny_cell("cross", Method::CrossProj),
    ];
    ExperimentPlan::new("tiny", cells, vec![1, 2], out).unwrap()
}

#[test]
fn plan_runs_resumes_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let first = run_plan(&plan).unwrap();
    assert_eq!(first.runs.len(), 4);
    assert!(first.runs.iter().all(|r| r.status == RunStatus::Trained));
    for d in plan.run_dirs() {
        for f in ["config.kv", "fingerprint", "model.ckpt", "record.jsonl", "timing.json"] {
            assert!(d.join(f).exists(), "{} missing {f}", d.display());
        }
    }
    let record_before = std::fs::read(run_dir(dir.path(), "scd", 1).join("record.jsonl")).unwrap();

    let second = run_plan(&plan).unwrap();
    assert!(second.runs.iter().all(|r| r.status == RunStatus::Skipped));
    assert_eq!(std::fs::read(run_dir(dir.path(), "scd", 1).join("record.jsonl")).unwrap(), record_before);
    assert_eq!(first.summary, second.summary);

    let (header, rows) = read_summary(&dir.path().join("summary.tsv")).unwrap();
    assert!(header.contains(&"harmonic".to_string()) && header.contains(&"provenance".to_string()));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "scd");
    assert_eq!(rows[0][1], "SCD");
    let prov = &rows[0][header.iter().position(|h| h == "provenance").unwrap()];
    assert!(prov.contains("scd/seed-1/record.jsonl") && prov.contains("scd/seed-2/record.jsonl"));
    let svg = std::fs::read_to_string(dir.path().join("summary.svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 2);

    let row = first.summary.row("scd").unwrap();
    let h = row.harmonic().unwrap();
    let (s, u) = (row.mean("seen_top1").unwrap(), row.mean("unseen_top1").unwrap());
    assert!((h - 2.0 * s * u / (s + u)).abs() < 1e-12);
}

#[test]
fn changed_config_in_existing_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::new("one", vec![tiny_cell("scd", Method::Scd)], vec![3], dir.path()).unwrap();
    run_plan(&plan).unwrap();
    let mut changed = plan.clone();
    changed.cells[0].train.loss.alpha = 7.0;
    let err = run_plan(&changed).unwrap_err().to_string();
    assert!(err.contains("fingerprint"), "{err}");
}

#[test]
fn corrupt_record_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::new("one", vec![tiny_cell("scd", Method::Scd)], vec![3], dir.path()).unwrap();
    run_plan(&plan).unwrap();
    let rec = run_dir(dir.path(), "scd", 3).join("record.jsonl");
    std::fs::write(&rec, "{ not json\n").unwrap();
    let err = emit_summary(&plan.run_dirs(), dir.path()).unwrap_err().to_string();
    assert!(err.contains("record.jsonl"), "{err}");
}

#[test]
fn parallel_workers_match_a_single_worker() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = tiny_plan(a.path());
    let mut pb = tiny_plan(b.path());
    pb.workers = 3;
    run_plan(&pa).unwrap();
    run_plan(&pb).unwrap();
    for (da, db) in pa.run_dirs().iter().zip(pb.run_dirs()) {
        for f in ["record.jsonl", "model.ckpt", "config.kv"] {
            assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn checkpoint_reloads_to_the_same_scores() {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan::new("one", vec![tiny_cell("cross", Method::CrossProj)], vec![5], dir.path()).unwrap();
    run_plan(&plan).unwrap();
    let d = run_dir(dir.path(), "cross", 5);
    let ckpt = Checkpoint::load(&d.join("model.ckpt")).unwrap();
    let (method, models, dcfg) = models_from_checkpoint(&ckpt).unwrap();
    assert_eq!(method, Method::CrossProj);
    let data = generate_dataset(&dcfg).unwrap();
    let top1 = evaluate_split(&models.skeletonclip, &data, &data.split, Side::Unseen).unwrap().top1;
    let record = RunRecord::load(&d.join("record.jsonl")).unwrap();
    assert_eq!(record.last("eval").unwrap().value("unseen_top1"), Some(top1));
}

#[test]
fn alpha_sweep_writes_a_log_axis_chart() {
    let dir = tempfile::tempdir().unwrap();
    let out = sweep_alpha(&tiny_cell("base", Method::Scd), &[0.0, 0.1, 10.0], vec![1], dir.path(), 1).unwrap();
    assert_eq!(out.rows.len(), 3);
    let svg = std::fs::read_to_string(&out.chart).unwrap();
    assert!(svg.contains("data-scale=\"log10\""));
    let xs: Vec<f64> = svg
        .lines()
        .filter(|l| l.contains("class=\"point\""))
        .map(|l| {
            let s = l.find(" cx=\"").unwrap() + 5;
            l[s..].split('"').next().unwrap().parse().unwrap()
        })
        .collect();
    // 0 -> -2, 0.1 -> -1, 10 -> 1: gaps of one and two decades
    assert!(((xs[2] - xs[1]) - 2.0 * (xs[1] - xs[0])).abs() < 0.05, "{xs:?}");
    let tsv = std::fs::read_to_string(&out.table).unwrap();
    assert_eq!(tsv.lines().count(), 4);
    assert!(sweep_alpha(&tiny_cell("base", Method::Scd), &[], vec![1], dir.path(), 1).is_err());
}

#[test]
fn builtin_plans_are_well_formed() {
    let p = builtin_plan("table1", vec![1, 2, 3], "out").unwrap();
    let methods: Vec<Method> = p.cells.iter().map(|c| c.method).collect();
    assert_eq!(
        methods,
        [Method::Trimodal, Method::CrossProj, Method::Fusion, Method::VideoClip, Method::Scd]
    );
    let again = ExperimentPlan::from_kv(&p.to_kv()).unwrap();
    assert_eq!(again, p);
}
