use attrhash::backbone::BackboneKind;
use attrhash::checkpoint::Checkpoint;
use attrhash::config::Ablation;
use attrhash::data::{make_split, make_synthetic};
use attrhash::trainer::{fit, Trainer};
use attrhash::TrainConfig;

fn dataset(noise: f64) -> attrhash::AttributedDataset {
    let ds = make_synthetic(8, 8, 20, noise, 0).unwrap();
    let split = make_split(&ds, 0.25, 0).unwrap();
    ds.with_split(split).unwrap()
}

#[test]
fn joint_loss_mostly_decreases_without_noise() {
    let config = TrainConfig {
        bits: 16,
        ..TrainConfig::default()
    };
    let trace = fit(&dataset(0.0), &config).unwrap().trace;
    assert_eq!(trace.rows.len(), 10);
    let drops = trace.rows.windows(2).filter(|w| w[1].1.total <= w[0].1.total).count();
    assert!(drops >= 8, "only {drops} of 9 epoch pairs non-increasing");
}

#[test]
fn ablated_columns_stay_zero() {
    let ds = dataset(0.05);
    for ablation in ["pointwise", "pairwise", "classwise"] {
        let config = TrainConfig {
            epochs: 3,
            bits: 16,
            epsilon: 0.2,
            backbone: BackboneKind::Conv,
            ablation: Ablation::parse(ablation).unwrap(),
            ..TrainConfig::default()
        };
        let csv = fit(&ds, &config).unwrap().trace.to_csv();
        let col = match ablation {
            "pointwise" => 1,
            "pairwise" => 2,
            _ => 3,
        };
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').nth(col).unwrap(), "0", "{ablation}: {line}");
        }
    }
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let ds = dataset(0.05);
    let config = TrainConfig {
        epochs: 3,
        bits: 16,
        backbone: BackboneKind::Conv,
        seed: 11,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        fit(&ds, &config).unwrap().trace.write_csv(dir.path().join(name)).unwrap();
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());
    let other = fit(&ds, &TrainConfig { seed: 12, ..config }).unwrap().trace.to_csv();
    assert_ne!(a, other.into_bytes());
}

#[test]
fn resume_from_file_continues_identically() {
    let ds = dataset(0.05);
    let config = TrainConfig {
        epochs: 4,
        bits: 8,
        backbone: BackboneKind::Conv,
        ..TrainConfig::default()
    };
    let full = fit(&ds, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut t = Trainer::new(&ds, &config).unwrap();
    t.run_epoch(&mut ()).unwrap();
    t.run_epoch(&mut ()).unwrap();
    t.checkpoint().save(&path).unwrap();
    drop(t);
    let mut t = Trainer::resume(&ds, Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(t.epoch(), 2);
    t.run(&mut ()).unwrap();
    let resumed = t.into_report().unwrap();
    assert_eq!(resumed.trace.to_csv(), full.trace.to_csv());
    assert_eq!(resumed.final_losses, full.final_losses);
}
