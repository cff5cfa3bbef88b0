use vesseldistill::distill::{LossWeights, ProjectorSet};
use vesseldistill::eval::batch_tensors;
use vesseldistill::nets::{SegmentationNetwork, STUDENT_ENET, STUDENT_MOBILE, TEACHER_SK_UNET};
use vesseldistill::synthdata::{build_split, DatasetSplit, SynthConfig};
use vesseldistill::train::*;
use vesseldistill::Error;

fn corpus(n_images: usize) -> DatasetSplit {
    let cfg = SynthConfig {
        seed: 1,
        canvas_size: 64,
        n_images,
        vessel_width_range: (1.5, 3.0),
        patch_size: 32,
        grid: (2, 2),
        ..SynthConfig::default()
    };
    build_split(&cfg, 0.5).unwrap()
}

fn cfg(mode: &str, epochs: usize) -> TrainConfig {
    TrainConfig {
        projector_hidden: 16,
        ..TrainConfig::desk(mode, STUDENT_MOBILE, 3, epochs)
    }
}

/// Untrained teacher with its zero-initialized head perturbed, so its
/// prediction is not the same constant prior as a fresh student's.
fn teacher() -> SegmentationNetwork<f64> {
    let c = cfg("teacher", 1);
    let mut t = SegmentationNetwork::build(&c.network_spec().unwrap(), 99).unwrap();
    for (k, ten) in t.params_mut().tensors_mut().iter_mut().enumerate() {
        for (i, v) in ten.data_mut().iter_mut().enumerate() {
            *v += 0.05 * (((k * 31 + i * 17) % 13) as f64 / 6.0 - 1.0);
        }
    }
    t
}

#[test]
fn config_text_round_trip() {
    let mut c = cfg("fsd_only", 7);
    c.tap_levels = Some(vec![1, 3]);
    c.schedule = Schedule::Cosine;
    c.weights = LossWeights { w_ce: 1.0, w_fsd: 0.25, w_asd: 2.0, w_rec: 0.5 };
    let text = c.to_kv();
    assert_eq!(TrainConfig::from_kv(&text).unwrap(), c);
    for key in TrainConfig::KEYS {
        assert!(text.contains(&format!("{key} = ")), "{key} missing from\n{text}");
    }
    assert_eq!(TrainConfig::from_kv(&TrainConfig::default().to_kv()).unwrap(), TrainConfig::default());

    let mut d = TrainConfig::default();
    d.apply_kv("# comment\nseed = 12\n\nlr = 0.01 # trailing\n").unwrap();
    assert_eq!((d.seed, d.lr), (12, 0.01));
    assert_ne!(d.hash(), TrainConfig::default().hash());
    assert_eq!(d.hash(), d.clone().hash());
    assert_eq!(d.hash().len(), 16);
}

#[test]
fn config_errors_name_the_field() {
    let mut c = TrainConfig::default();
    match c.set("lr", "fast") {
        Err(Error::Config(m)) => assert!(m.contains("field `lr`") && m.contains("`fast`"), "{m}"),
        r => panic!("unexpected {r:?}"),
    }
    assert!(matches!(c.set("learning_rate", "1"), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_kv("epochs 3"), Err(Error::Config(_))));
    c.mode = "pretrain".into();
    assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("field `mode`")));
    let c = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(c.validate().is_err());
}

#[test]
fn cosine_schedule() {
    let c = TrainConfig { schedule: Schedule::Cosine, epochs: 10, lr: 0.002, ..TrainConfig::default() };
    assert_eq!(lr_at(&c, 0), 0.002);
    assert!((lr_at(&c, 5) - 0.001).abs() < 1e-15);
    assert!(lr_at(&c, 9) < lr_at(&c, 8));
    let k = TrainConfig { epochs: 10, ..TrainConfig::default() };
    assert_eq!(lr_at(&k, 9), k.lr);
}

#[test]
fn order_depends_on_seed_and_epoch_only() {
    assert_eq!(epoch_order(20, 4, 1), epoch_order(20, 4, 1));
    assert_ne!(epoch_order(20, 4, 1), epoch_order(20, 4, 2));
    assert_ne!(epoch_order(20, 4, 1), epoch_order(20, 5, 1));
    let mut sorted = epoch_order(20, 4, 1);
    sorted.sort();
    assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
}

#[test]
fn scratch_and_distill_see_the_same_batches() {
    let data = corpus(4);
    let s = Session::<f64>::new(&cfg("scratch", 1), None).unwrap();
    let d = Session::<f64>::new(&cfg("distill", 1), Some(teacher())).unwrap();
    assert_eq!(s.student().params(), d.student().params());
    for epoch in 0..3 {
        assert_eq!(s.epoch_batches(&data.train, epoch), d.epoch_batches(&data.train, epoch));
    }
}

#[test]
fn training_lowers_the_loss() {
    let data = corpus(13);
    assert!(data.train.len() >= 24);
    for (mode, variant) in [("teacher", TEACHER_SK_UNET), ("scratch", STUDENT_ENET)] {
        let mut c = cfg(mode, 5);
        c.student_variant = variant.into();
        let run = if mode == "teacher" {
            train_teacher::<f32>(&c, &data, None).unwrap()
        } else {
            train_scratch::<f32>(&c, &data, None).unwrap()
        };
        let first = run.log[0].losses.ce;
        let last = run.log[4].losses.ce;
        assert!(last < first, "{mode}: ce {first} -> {last}");
        assert_eq!(run.network.spec().variant, variant);
    }
}

#[test]
fn runs_are_reproducible() {
    let data = corpus(4);
    let c = cfg("distill", 2);
    let a = distill::<f64>(&c, teacher(), &data, None).unwrap();
    let b = distill::<f64>(&c, teacher(), &data, None).unwrap();
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!(x.losses, y.losses);
        assert_eq!(x.val, y.val);
    }
    assert_eq!(a.network.params(), b.network.params());

    let c = cfg("scratch", 1);
    let a = train_scratch::<f32>(&c, &data, None).unwrap();
    let b = train_scratch::<f32>(&c, &data, None).unwrap();
    assert!((a.log[0].losses.ce - b.log[0].losses.ce).abs() <= 1e-6);
}

#[test]
fn copied_student_has_zero_similarity_losses() {
    let data = corpus(4);
    let t = teacher();
    let mut c = cfg("distill", 1);
    c.student_variant = TEACHER_SK_UNET.into();
    let proj = ProjectorSet::<f64>::new(&t.spec().tap_levels, &t.tap_channels(), 16, 5).unwrap();
    let s = Session::from_parts(&c, t.clone(), Some(t), Some(proj.clone()), Some(proj)).unwrap();
    let (x, y) = batch_tensors::<f64>(&data.train[..4]).unwrap();
    let l = s.losses(&x, &y).unwrap();
    assert_eq!(l.fsd, 0.0);
    assert_eq!(l.asd, 0.0);
    assert!(l.ce > 0.0 && l.rec > 0.0);
}

#[test]
fn zero_distillation_weights_match_scratch() {
    let data = corpus(4);
    let scratch = cfg("scratch", 1);
    let mut zero = cfg("distill", 1);
    zero.weights = LossWeights { w_ce: 1.0, w_fsd: 0.0, w_asd: 0.0, w_rec: 1.0 };
    let mut a = Session::<f64>::new(&scratch, None).unwrap();
    let mut b = Session::<f64>::new(&zero, Some(teacher())).unwrap();
    for epoch in 0..2 {
        for batch in a.epoch_batches(&data.train, epoch) {
            let (x, y) = batch_tensors::<f64>(&batch).unwrap();
            let la = a.train_step(&x, &y).unwrap();
            let lb = b.train_step(&x, &y).unwrap();
            assert!((la.ce - lb.ce).abs() <= 1e-6, "{} vs {}", la.ce, lb.ce);
            assert!(lb.fsd > 0.0 && lb.asd > 0.0);
        }
    }
    assert_eq!(a.steps(), b.steps());
}

#[test]
fn teacher_is_untouched_by_distillation() {
    let data = corpus(4);
    let t = teacher();
    let before = t.params().checksum();
    for mode in ["distill", "fsd_only", "softkd"] {
        let run = distill::<f64>(&cfg(mode, 1), t.clone(), &data, None).unwrap();
        assert_eq!(run.teacher_checksum.as_deref(), Some(before.as_str()));
    }
    assert_eq!(t.params().checksum(), before);
}

#[test]
fn modes_are_checked_by_the_entry_points() {
    let data = corpus(4);
    assert!(matches!(train_scratch::<f32>(&cfg("distill", 1), &data, None), Err(Error::Config(_))));
    let t = SegmentationNetwork::<f32>::build(&cfg("teacher", 1).network_spec().unwrap(), 0).unwrap();
    assert!(matches!(distill(&cfg("scratch", 1), t, &data, None), Err(Error::Config(_))));
    assert!(matches!(Session::<f32>::new(&cfg("distill", 1), None), Err(Error::Config(_))));
    let empty = DatasetSplit { train: vec![], test: data.test.clone() };
    assert!(matches!(train_scratch::<f32>(&cfg("scratch", 1), &empty, None), Err(Error::Data(_))));
}

#[test]
fn mismatched_taps_are_incompatible() {
    let mut tc = cfg("teacher", 1);
    tc.tap_levels = Some(vec![1, 2]);
    let t = SegmentationNetwork::<f32>::build(&tc.network_spec().unwrap(), 0).unwrap();
    let r = Session::new(&cfg("distill", 1), Some(t));
    assert!(matches!(r, Err(Error::Incompatible(_))), "{:?}", r.err());
}

#[test]
fn run_directory_log_and_checkpoints() {
    let data = corpus(4);
    let dir = tempfile::tempdir().unwrap();
    let c = cfg("distill", 2);
    let run = distill::<f64>(&c, teacher(), &data, Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2);
    for (row, rec) in rows.iter().zip(&run.log) {
        let f: Vec<f64> = row[1..6].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(weighted_total(f[0], f[1], f[2], f[3], &c.weights).unwrap(), f[4]);
        assert_eq!(f[4], rec.losses.total);
        assert_eq!(row[0], rec.epoch.to_string());
    }

    let last = Checkpoint::<f64>::load(&dir.path().join(CKPT_DIR).join(LAST_CKPT)).unwrap();
    assert_eq!(last.info.epoch, 2);
    assert_eq!(last.network, *run.network.params());
    assert_eq!(last.info.config, c.to_kv());
    assert_eq!(last.info.teacher_checksum, run.teacher_checksum);
    assert_eq!(last.projectors(false).unwrap().as_ref(), run.student_projectors.as_ref());
    assert_eq!(last.projectors(true).unwrap().as_ref(), run.teacher_projectors.as_ref());
    let best = Checkpoint::<f64>::load(&dir.path().join(CKPT_DIR).join(BEST_CKPT)).unwrap();
    let (epoch, miou, net) = run.best.as_ref().unwrap();
    assert_eq!(best.info.epoch, *epoch);
    assert_eq!(best.info.val_miou, Some(*miou));
    assert_eq!(best.network().unwrap().params(), net.params());
}

#[test]
fn divergence_keeps_the_previous_checkpoint() {
    let data = corpus(4);
    let dir = tempfile::tempdir().unwrap();
    train_scratch::<f64>(&cfg("scratch", 1), &data, Some(dir.path())).unwrap();
    let path = dir.path().join(CKPT_DIR).join(LAST_CKPT);
    let before = std::fs::read(&path).unwrap();
    let mut bad = data.clone();
    bad.train[2].image[5] = f32::NAN;
    let err = train_scratch::<f64>(&cfg("scratch", 3), &bad, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err:?}");
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let t = teacher();
    let proj = ProjectorSet::<f64>::new(&t.spec().tap_levels, &t.tap_channels(), 8, 1).unwrap();
    let info = CheckpointInfo {
        spec: t.spec().clone(),
        mode: "distill".into(),
        config: cfg("distill", 1).to_kv(),
        epoch: 3,
        step: 17,
        val_miou: Some(0.625),
        teacher_checksum: Some("ab".into()),
        student_projectors: None,
        teacher_projectors: None,
    };
    let ck = Checkpoint::new(info, &t, Some(&proj), None);
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    for (a, b) in back.network.tensors().iter().zip(t.params().tensors()) {
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.data()), bits(b.data()));
    }
    assert_eq!(back.projectors(false).unwrap(), Some(proj));
    assert_eq!(back.projectors(true).unwrap(), None);
    // loading at the other precision rounds each value once
    let narrow = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(narrow.network, t.params().cast::<f32>());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ck);
}

#[test]
fn damaged_checkpoints_are_corrupt() {
    let t = teacher();
    let info = CheckpointInfo {
        spec: t.spec().clone(),
        mode: "teacher".into(),
        config: String::new(),
        epoch: 1,
        step: 1,
        val_miou: None,
        teacher_checksum: None,
        student_projectors: None,
        teacher_projectors: None,
    };
    let bytes = Checkpoint::new(info, &t, None, None).to_bytes().unwrap();
    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        let r = Checkpoint::<f64>::from_bytes(&bytes[..cut]);
        assert!(matches!(r, Err(Error::Corrupt(_))), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = bytes.len() - 100;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::<f64>::from_bytes(&flipped), Err(Error::Corrupt(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::<f64>::from_bytes(&magic), Err(Error::Corrupt(_))));

    let mut ck = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    ck.info.spec.base_channels += 1;
    assert!(matches!(ck.network(), Err(Error::Incompatible(_))));
}
