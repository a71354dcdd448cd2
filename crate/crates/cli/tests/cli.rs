//! The `isobench` binary driven as a subprocess.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use isobench_core::blocks::IsotropicNetwork;
use isobench_core::checkpoint::Checkpoint;
use isobench_core::data::{synthetic, Split};
use isobench_core::imageio::RasterImage;
use isobench_core::rng::{RngStreams, Stream};
use isobench_core::training::sample_mask;

const TINY: &[&str] = &[
    "--synthetic",
    "--synthetic-count",
    "30",
    "--synthetic-test-count",
    "6",
    "--decay-epochs",
    "1",
    "--batch-size",
    "10",
];

fn isobench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isobench"))
        .args(args)
        .env_remove("ISOBENCH_DATA")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn isobench")
}

fn ok(args: &[&str]) -> Output {
    let out = isobench(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn pretrain(dir: &Path, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["pretrain", "--out", out, "--deterministic", "--seed", "3"];
    args.extend_from_slice(TINY);
    if !extra.contains(&"--latent-dim") {
        args.extend_from_slice(&["--latent-dim", "8"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn usage_errors_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["pretrain", "--out", out], // no dataset
        vec!["pretrain", "--out", out, "--data", "/nonexistent/cifar"], // missing files
        vec!["pretrain", "--out", out, "--synthetic", "--kernel", "4"], // even kernel
        vec![
            "pretrain",
            "--out",
            out,
            "--synthetic",
            "--mask-rate",
            "1.5",
        ],
        vec![
            "encode-sim",
            "--out",
            out,
            "--reference",
            "fourier",
            "--channel",
            "1",
            "--rff-k",
            "0",
        ],
        vec!["encode-sim", "--out", out], // neither source
        vec!["bogus"],
    ];
    for args in cases {
        let res = isobench(&args);
        assert_eq!(
            res.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let missing = isobench(&["pretrain", "--out", out, "--data", "/nonexistent/cifar"]);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/cifar"));

    // a run that cannot find its data leaves nothing behind
    let fresh = dir.path().join("fresh");
    let res = isobench(&["pretrain", "--out", fresh.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!fresh.exists());
}

#[test]
fn config_file_entries_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nlatent_dim = 8\nsynthetic = true\nsynthetic_count = 20\nsynthetic_test_count = 4\ndecay_epochs = 0\nbatch_size = 10\nblock_type = mixer\n").unwrap();
    let out = dir.path().join("out");
    ok(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--block-type",
        "conv",
    ]);
    let ck = Checkpoint::load(&out.join("checkpoint.isob")).unwrap();
    let model = ck.model_config().unwrap();
    assert_eq!(model.latent_dim, 8);
    assert_eq!(model.block_type.to_string(), "conv");

    fs::write(&cfg, "latent_dim = 8\nnot_a_key = 1\n").unwrap();
    let res = isobench(&["pretrain", "--config", cfg.to_str().unwrap(), "--synthetic"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn reconstructions_are_well_formed_and_match_direct_argmax() {
    let dir = tempfile::tempdir().unwrap();
    pretrain(dir.path(), &[]);
    let out = dir.path().to_str().unwrap();
    ok(&[
        "reconstruct",
        "--out",
        out,
        "--count",
        "3",
        "--seed",
        "3",
        "--synthetic",
        "--synthetic-count",
        "30",
        "--synthetic-test-count",
        "6",
    ]);

    let net = IsotropicNetwork::<f32>::from_checkpoint(
        &Checkpoint::load(&dir.path().join("checkpoint.isob")).unwrap(),
    )
    .unwrap();
    let test = synthetic(
        6,
        &mut RngStreams::new(3).indexed(Stream::Synthetic, 1),
        Split::Test,
    );
    let streams = RngStreams::new(3);
    for i in 0..3 {
        let path = dir.path().join(format!("reconstructions/recon_{i:03}.ppm"));
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n96 32\n255\n"));
        let strip = RasterImage::decode(&bytes).unwrap();
        let mask = sample_mask(&mut streams.indexed(Stream::Reconstruct, i), 1024, 0.15).unwrap();
        assert!(!mask.is_empty());
        let image = test.image(i as usize);
        let logits = net.network_forward(image, &mask.indices).unwrap().logits;
        let px = |panel: usize, p: usize, c: usize| {
            strip.pixels[((p / 32) * 96 + panel * 32 + p % 32) * 3 + c]
        };
        for p in 0..1024 {
            for c in 0..3 {
                assert_eq!(px(0, p, c), image[c * 1024 + p]);
                if mask.indices.contains(&p) {
                    let row = &logits.data()[(p * 3 + c) * 256..(p * 3 + c + 1) * 256];
                    let best = (0..256).fold(0, |b, v| if row[v] > row[b] { v } else { b });
                    assert_eq!(px(1, p, c), 128);
                    assert_eq!(px(2, p, c) as usize, best);
                } else {
                    assert_eq!(px(1, p, c), image[c * 1024 + p]);
                    assert_eq!(px(2, p, c), image[c * 1024 + p]);
                }
            }
        }
    }
}

#[test]
fn zero_mask_rate_reconstructs_the_original() {
    let dir = tempfile::tempdir().unwrap();
    pretrain(dir.path(), &[]);
    let out = dir.path().to_str().unwrap();
    ok(&[
        "reconstruct",
        "--out",
        out,
        "--count",
        "2",
        "--mask-rate",
        "0",
        "--synthetic",
        "--synthetic-count",
        "30",
        "--synthetic-test-count",
        "6",
    ]);
    for i in 0..2 {
        let strip =
            RasterImage::load(&dir.path().join(format!("reconstructions/recon_{i:03}.ppm")))
                .unwrap();
        for row in strip.pixels.chunks(96 * 3) {
            assert_eq!(&row[..96], &row[192..]);
            assert_eq!(&row[..96], &row[96..192]);
        }
    }
}

#[test]
fn one_hot_reference_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = ok(&[
        "encode-sim",
        "--out",
        out,
        "--reference",
        "onehot",
        "--channel",
        "2",
    ]);
    assert!(String::from_utf8_lossy(&res.stderr).contains("ignored"));
    let text = fs::read_to_string(dir.path().join("similarity_onehot.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 256);
    for (a, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 256);
        for (b, &v) in row.iter().enumerate() {
            assert_eq!(v, if a == b { 1.0 } else { 0.0 });
        }
    }
    let pgm = RasterImage::load(&dir.path().join("similarity_onehot.pgm")).unwrap();
    assert_eq!((pgm.width, pgm.height, pgm.channels), (256, 256, 1));
    assert_eq!(pgm.pixels[0], 255);
    assert_eq!(pgm.pixels[1], 128);
}

#[test]
fn trained_pix2vec_similarity_has_rank_at_most_width() {
    let dir = tempfile::tempdir().unwrap();
    pretrain(dir.path(), &["--latent-dim", "16"]);
    let out = dir.path().to_str().unwrap();
    let ck = dir.path().join("checkpoint.isob");
    ok(&[
        "encode-sim",
        "--out",
        out,
        "--checkpoint",
        ck.to_str().unwrap(),
        "--channel",
        "1",
    ]);
    let text = fs::read_to_string(dir.path().join("similarity_checkpoint_ch1.csv")).unwrap();
    let values: Vec<f64> = text
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()))
        .collect();
    let m = nalgebra::DMatrix::from_row_slice(256, 256, &values);
    let sv = m.svd(false, false).singular_values;
    let tol = sv.max() * 256.0 * f64::EPSILON;
    assert!(sv.iter().filter(|&&s| s > tol).count() <= 16);
}

#[test]
fn probe_report_has_a_row_per_layer_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    pretrain(dir.path(), &[]);
    let out = dir.path().to_str().unwrap();
    let probe = [
        "probe",
        "--out",
        out,
        "--seed",
        "3",
        "--synthetic",
        "--synthetic-count",
        "30",
        "--synthetic-test-count",
        "6",
        "--probe-epochs",
        "5",
    ];
    ok(&probe);
    let first = fs::read(dir.path().join("probe.csv")).unwrap();
    ok(&probe);
    assert_eq!(fs::read(dir.path().join("probe.csv")).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,val_accuracy,test_accuracy"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let best = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
    assert_eq!(manifest["probe"]["best_accuracy"].as_f64(), Some(best));
}

#[test]
fn aggregate_collects_one_row_per_run() {
    let root = tempfile::tempdir().unwrap();
    let agg = root.path().join("agg");
    let agg_s = agg.to_str().unwrap();
    ok(&["aggregate", "--out", agg_s]);
    let header =
        "run_id,block_type,encoding,depth,heads,val_loss,best_probe_layer,best_probe_accuracy";
    assert_eq!(
        fs::read_to_string(agg.join("scatter.csv"))
            .unwrap()
            .trim_end(),
        header
    );

    let mut dirs = Vec::new();
    for (i, block) in ["conv", "mixer", "transformer"].iter().enumerate() {
        let d = root.path().join(format!("run{i}"));
        let s = d.to_str().unwrap().to_string();
        let mut args = vec![
            "pretrain",
            "--out",
            &s,
            "--block-type",
            block,
            "--latent-dim",
            "8",
        ];
        args.extend_from_slice(TINY);
        ok(&args);
        ok(&[
            "probe",
            "--out",
            &s,
            "--synthetic",
            "--synthetic-count",
            "30",
            "--synthetic-test-count",
            "6",
            "--probe-epochs",
            "3",
        ]);
        dirs.push(s);
    }
    dirs.push(
        root.path()
            .join("no-such-run")
            .to_string_lossy()
            .into_owned(),
    );
    let mut args = vec!["aggregate", "--out", agg_s];
    args.extend(dirs.iter().map(String::as_str));
    ok(&args);

    let mut reader = csv::Reader::from_path(agg.join("scatter.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, dir) in rows.iter().zip(&dirs) {
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(Path::new(dir).join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(&row[1], m["model"]["block_type"].as_str().unwrap());
        assert_eq!(
            row[5].parse::<f64>().unwrap(),
            m["final_metrics"]["val_loss"].as_f64().unwrap()
        );
        assert_eq!(
            row[7].parse::<f64>().unwrap(),
            m["probe"]["best_accuracy"].as_f64().unwrap()
        );
        assert_eq!(
            row[6].parse::<u64>().unwrap(),
            m["probe"]["best_layer"].as_u64().unwrap()
        );
    }
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pretrain(a.path(), &["--threads", "1"]);
    pretrain(b.path(), &["--threads", "1"]);
    for f in ["metrics.csv", "checkpoint.isob"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let text = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert!(text.starts_with("epoch,phase,loss,lr,seconds\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}
