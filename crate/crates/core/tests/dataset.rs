use std::fs;
use std::path::Path;

use drsnet::dataset::*;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)]))
}

fn rgb(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 3) as u8, (y * 5) as u8, 90]))
}

fn paired(root: &Path, names: &[&str], w: u32, h: u32) {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    for n in names {
        rgb(w, h).save(root.join("images").join(format!("{n}.png"))).unwrap();
        gray(w, h, |x, _| if x < w / 2 { 200 } else { 10 })
            .save(root.join("masks").join(format!("{n}.png")))
            .unwrap();
    }
}

#[test]
fn paired_folders_load_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    paired(dir.path(), &["b", "a", "c"], 20, 10);
    let corpus = load_corpus(dir.path(), LoadOptions::default()).unwrap();
    let ids: Vec<&str> = corpus.samples.iter().map(|s| s.source_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    let s = &corpus.samples[0];
    assert_eq!(s.size(), (20, 10));
    assert_eq!((s.mask.width, s.mask.height), (20, 10));
    assert!((s.mask.foreground_fraction() - 0.5).abs() < 1e-12);
}

#[test]
fn suffix_layout_loads() {
    let dir = tempfile::tempdir().unwrap();
    for n in ["x1", "x2"] {
        rgb(8, 8).save(dir.path().join(format!("{n}.jpg"))).unwrap();
        gray(8, 8, |x, y| ((x + y) * 20) as u8).save(dir.path().join(format!("{n}_mask.png"))).unwrap();
    }
    let opts = LoadOptions {
        layout: Layout::SuffixMatched,
        ..LoadOptions::default()
    };
    let corpus = load_corpus(dir.path(), opts).unwrap();
    assert_eq!(corpus.samples.len(), 2);
    // Threshold at 128: (x + y) * 20 >= 128 from x + y = 7.
    let m = &corpus.samples[0].mask;
    assert_eq!(m.data[0], 0);
    assert_eq!(m.data[7], 1);
    assert_eq!(m.data[6], 0);
}

#[test]
fn missing_masks_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    paired(dir.path(), &["ok"], 8, 8);
    rgb(8, 8).save(dir.path().join("images/orphan1.png")).unwrap();
    rgb(8, 8).save(dir.path().join("images/orphan2.png")).unwrap();
    let err = load_corpus(dir.path(), LoadOptions::default()).unwrap_err().to_string();
    assert!(err.contains("orphan1.png") && err.contains("orphan2.png"), "{err}");
    assert!(!err.contains("ok.png"));
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_corpus(dir.path(), LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("empty corpus"), "{err}");
}

#[test]
fn unreadable_files_skip_or_fail() {
    let dir = tempfile::tempdir().unwrap();
    paired(dir.path(), &["good"], 8, 8);
    fs::write(dir.path().join("images/bad.png"), b"not a png").unwrap();
    fs::copy(dir.path().join("masks/good.png"), dir.path().join("masks/bad.png")).unwrap();
    assert!(load_corpus(dir.path(), LoadOptions::default()).is_err());
    let corpus = load_corpus(
        dir.path(),
        LoadOptions {
            skip_unreadable: true,
            ..LoadOptions::default()
        },
    )
    .unwrap();
    assert_eq!(corpus.samples.len(), 1);
    assert_eq!(corpus.skipped.len(), 1);
}

#[test]
fn size_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    paired(dir.path(), &["a"], 8, 8);
    gray(9, 8, |_, _| 0).save(dir.path().join("masks/a.png")).unwrap();
    assert!(load_corpus(dir.path(), LoadOptions::default()).is_err());
}

#[test]
fn resize_to_network_size() {
    let sample = Sample {
        image: rgb(640, 360),
        mask: Mask::from_gray(&gray(640, 360, |x, y| if x > y { 255 } else { 0 })),
        source_id: "road".into(),
    };
    let r = resize_sample(&sample, 192, 128).unwrap();
    assert_eq!(r.size(), (192, 128));
    assert_eq!((r.mask.width, r.mask.height), (192, 128));
    assert!(r.mask.data.iter().all(|&v| v <= 1));
    assert_eq!(resize_sample(&r, 192, 128).unwrap(), r);
    assert!(resize_sample(&sample, 190, 128).is_err());
}

#[test]
fn benchmark_rains_images_and_keeps_masks() {
    let corpus = synthetic_corpus(4, 80, 60, 1);
    let dir = tempfile::tempdir().unwrap();
    let records = build_add_rain_benchmark(&corpus, dir.path(), 9, 96, 64, 255.0).unwrap();
    assert_eq!(records.len(), 4);
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    for (line, rec) in manifest.lines().zip(&records) {
        let parsed: ManifestRecord = serde_json::from_str(line).unwrap();
        assert_eq!(&parsed, rec);
        rec.params.validate().unwrap();
    }
    let reloaded = load_corpus(dir.path(), LoadOptions::default()).unwrap();
    for (orig, bench) in corpus.iter().zip(&reloaded.samples) {
        let resized = resize_sample(orig, 96, 64).unwrap();
        assert_eq!(bench.mask, resized.mask);
        assert_ne!(bench.image, resized.image);
    }
}

#[test]
fn benchmark_depends_on_seed() {
    let corpus = synthetic_corpus(2, 64, 64, 1);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = build_add_rain_benchmark(&corpus, a.path(), 1, 64, 64, 255.0).unwrap();
    let rb = build_add_rain_benchmark(&corpus, b.path(), 2, 64, 64, 255.0).unwrap();
    assert_ne!(ra, rb);
}

#[test]
fn write_then_load_round_trips() {
    let corpus = synthetic_corpus(3, 48, 32, 4);
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&corpus, dir.path()).unwrap();
    let loaded = load_corpus(dir.path(), LoadOptions::default()).unwrap();
    assert_eq!(loaded.samples, corpus);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn resized_masks_stay_binary_and_aligned(
        w in 1usize..40, h in 1usize..40, tw in 1usize..4, th in 1usize..4, seed in any::<u64>()
    ) {
        let mut state = seed;
        let data = (0..w * h).map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 63) as u8
        }).collect();
        let sample = Sample {
            image: rgb(w as u32, h as u32),
            mask: Mask { width: w, height: h, data },
            source_id: "p".into(),
        };
        let r = resize_sample(&sample, 16 * tw, 16 * th).unwrap();
        prop_assert_eq!(r.size(), (16 * tw, 16 * th));
        prop_assert_eq!((r.mask.width, r.mask.height), r.size());
        prop_assert!(r.mask.data.iter().all(|&v| v <= 1));
    }
}
