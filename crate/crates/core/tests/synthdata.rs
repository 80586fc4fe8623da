use ski_core::synthdata::container::{read_dataset, to_bytes, write_dataset};
use ski_core::synthdata::grammar::{encode_words, tokenize, vocabulary};
use ski_core::synthdata::{adl_self_test, generate_dataset, Dataset, DatasetConfig, Subset};

fn config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        num_classes: 10,
        samples_per_class: 20,
        seed,
        ..DatasetConfig::default()
    }
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let a = to_bytes(&generate_dataset(&config(7)).unwrap());
    let b = to_bytes(&generate_dataset(&config(7)).unwrap());
    assert_eq!(a, b);
    let c = to_bytes(&generate_dataset(&config(8)).unwrap());
    assert_ne!(a, c);
}

#[test]
fn file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        samples_per_class: 3,
        ..config(1)
    };
    let data = generate_dataset(&cfg).unwrap();
    let p1 = dir.path().join("a.ski");
    let p2 = dir.path().join("b.ski");
    write_dataset(&data, &p1).unwrap();
    let back = read_dataset(&p1).unwrap();
    write_dataset(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

fn mean_background(data: &Dataset, class_id: usize) -> [f64; 3] {
    let members: Vec<_> = data.triplets.iter().filter(|t| t.class_id() == class_id).collect();
    let mut acc = [0.0; 3];
    for t in &members {
        for c in 0..3 {
            acc[c] += t.appearance.background[c] / members.len() as f64;
        }
    }
    acc
}

#[test]
fn web_like_classes_have_separable_backgrounds() {
    let cfg = DatasetConfig {
        adl_fraction: 0.0,
        ..config(3)
    };
    let data = generate_dataset(&cfg).unwrap();
    let means: Vec<[f64; 3]> = (0..cfg.num_classes).map(|c| mean_background(&data, c)).collect();
    // every sample is nearer its own class mean than any other class mean
    for t in &data.triplets {
        let d = |m: &[f64; 3]| (0..3).map(|k| (t.appearance.background[k] - m[k]).powi(2)).sum::<f64>();
        let nearest = (0..means.len()).min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b]))).unwrap();
        assert_eq!(nearest, t.class_id());
    }
}

#[test]
fn adl_classes_share_appearance_but_not_motion() {
    let data = generate_dataset(&config(7)).unwrap();
    let report = adl_self_test(&data).unwrap();
    assert_eq!(report.adl_classes, 10);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn skeleton_nearest_centroid_beats_chance() {
    let data = generate_dataset(&config(11)).unwrap();
    let n = data.config.num_classes;
    let dim = data.triplets[0].skeleton.data().len();
    let mut centroids = vec![vec![0.0; dim]; n];
    let mut counts = vec![0usize; n];
    for t in data.triplets.iter().filter(|t| !t.holdout) {
        for (c, v) in centroids[t.class_id()].iter_mut().zip(t.skeleton.data()) {
            *c += v;
        }
        counts[t.class_id()] += 1;
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k as f64);
    }
    let test: Vec<_> = data.triplets.iter().filter(|t| t.holdout).collect();
    let correct = test
        .iter()
        .filter(|t| {
            let d = |c: &Vec<f64>| c.iter().zip(t.skeleton.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..n).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap() == t.class_id()
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 1.0 / n as f64, "nearest-centroid accuracy {acc}");
}

#[test]
fn captions_stay_inside_the_vocabulary() {
    let data = generate_dataset(&config(2)).unwrap();
    let vocab = vocabulary();
    for t in &data.triplets {
        encode_words(&vocab, &t.caption).unwrap();
        encode_words(&vocab, &t.prompt.text).unwrap();
        let words = tokenize(&t.caption);
        let spec = data.class(t.class_id()).unwrap();
        assert!(words.iter().any(|w| w == spec.motion.word()));
        assert!(words.iter().any(|w| w == spec.limb.limb_word()));
    }
}

#[test]
fn subsets_partition_the_data() {
    let data = generate_dataset(&config(4)).unwrap();
    let total = data.subset(Subset::SeenTrain).len() + data.subset(Subset::SeenHoldout).len() + data.subset(Subset::Unseen).len();
    assert_eq!(total, data.triplets.len());
    assert_eq!(data.subset(Subset::Unseen).len(), 2 * 20);
    assert_eq!(data.subset(Subset::SeenHoldout).len(), 8 * 5);
}
