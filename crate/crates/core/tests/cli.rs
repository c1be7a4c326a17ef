//! Subcommand behavior: artifacts, error paths, determinism.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use xraypipe::cli::{cmd_bench, cmd_phantom, cmd_pipeline, run, ModelPaths, PhantomSet, RestoreSettings, RunConfig};
use xraypipe::compress::{compress, CompressConfig};
use xraypipe::error::Error;
use xraypipe::imaging::read_image;
use xraypipe::inference::{rrdb_generator, GeneratorConfig, WeightStore};
use xraypipe::phantom::{phantom, PhantomSpec};
use xraypipe::report::{BENCH_COLUMNS, QUALITY_COLUMNS};
use xraypipe::restore::Backend;

fn small_cfg(out: &Path, count: usize) -> RunConfig {
    RunConfig {
        phantoms: PhantomSet {
            count,
            size: 128,
            noise: 0.0,
        },
        compress: CompressConfig {
            target: (32, 32),
            ..Default::default()
        },
        output_dir: out.to_path_buf(),
        ..Default::default()
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pipeline_on_phantoms_writes_rows_and_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = cmd_pipeline(&small_cfg(dir.path(), 3), 5).unwrap();
    assert_eq!(outcome.rows.len(), 3 * Backend::CLASSICAL.len());

    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), QUALITY_COLUMNS.join(","));
    assert_eq!(lines.count(), 12);

    let means: Vec<f64> = outcome.summary.iter().map(|s| s.1).collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]), "{means:?}");
    let table = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(table.contains(&outcome.summary[0].0));

    for r in &outcome.rows {
        let img = read_image(&dir.path().join("restored").join(format!("{}_{}.png", r.id, r.backend))).unwrap();
        assert_eq!(img.dims(), (128, 128));
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 3);
}

#[test]
fn empty_input_dir_gives_empty_csv() {
    let input = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        input_dir: Some(input.path().to_path_buf()),
        ..small_cfg(dir.path(), 0)
    };
    let outcome = cmd_pipeline(&cfg, 0).unwrap();
    assert!(outcome.rows.is_empty());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn input_dir_images_are_used_in_name_order() {
    let input = tempfile::tempdir().unwrap();
    cmd_phantom(2, 96, 3, 0.0, input.path(), true).unwrap();
    fs::write(input.path().join("notes.txt"), "ignored").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        input_dir: Some(input.path().to_path_buf()),
        restore: RestoreSettings {
            backends: vec![Backend::Bicubic],
            ..Default::default()
        },
        ..small_cfg(dir.path(), 0)
    };
    let ids: Vec<String> = cmd_pipeline(&cfg, 0).unwrap().rows.into_iter().map(|r| r.id).collect();
    assert_eq!(ids, ["phantom_000", "phantom_001"]);
}

#[test]
fn corrupt_weights_fail_naming_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let (graph, shapes) = rrdb_generator(&GeneratorConfig {
        blocks: 1,
        ..Default::default()
    });
    let manifest = dir.path().join("g.json");
    let weights = dir.path().join("g.nnw");
    fs::write(&manifest, graph.to_json()).unwrap();
    let mut bytes = WeightStore::random(&shapes, 1, 0.5).to_bytes();
    bytes.truncate(bytes.len() - 2);
    fs::write(&weights, bytes).unwrap();

    let out = dir.path().join("out");
    let cfg = RunConfig {
        restore: RestoreSettings {
            backends: vec![Backend::Bicubic, Backend::Rrdb { manifest, weights }],
            ..Default::default()
        },
        ..small_cfg(&out, 1)
    };
    match cmd_pipeline(&cfg, 0) {
        Err(Error::Load { tensor, .. }) => assert_eq!(tensor, "conv_last.bias"),
        other => panic!("expected a load error, got {other:?}"),
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);
    assert!(manifest["error"].as_str().unwrap().contains("conv_last.bias"));
}

#[test]
fn bench_rows_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_bench(&small_cfg(dir.path(), 10), 2).unwrap();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[10].id, "mean");
    assert!(rows.iter().all(|r| r.ratio > 1.0 && r.compressed_seconds < r.raw_seconds));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), BENCH_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn bench_ratio_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        phantoms: PhantomSet {
            count: 1,
            ..Default::default()
        },
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let rows = cmd_bench(&cfg, 0).unwrap();
    let img = phantom(&PhantomSpec::new(512, 0)).unwrap();
    let payload = compress(&img, &CompressConfig::default()).unwrap();
    assert_eq!(rows[0].raw_bytes, 512.0 * 512.0);
    assert_eq!(rows[0].payload_bytes, payload.to_bytes().len() as f64);
    assert_eq!(rows[0].ratio, 262144.0 / payload.to_bytes().len() as f64);
}

#[test]
fn zero_bandwidth_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut cfg = small_cfg(&out, 3);
    cfg.link.bandwidth = 0.0;
    assert!(matches!(cmd_bench(&cfg, 0), Err(Error::Argument(_))));
    assert!(!out.exists());
}

#[test]
fn bench_svg_is_valid_xml() {
    let dir = tempfile::tempdir().unwrap();
    cmd_bench(&small_cfg(dir.path(), 2), 0).unwrap();
    let svg = fs::read_to_string(dir.path().join("bench.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let rects = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
    assert_eq!(rects, 2);
}

#[test]
fn phantoms_are_deterministic_with_contrast() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(["xraypipe", "--seed", "17", "phantom", "--count", "3", "--out", a.path().to_str().unwrap()]).unwrap();
    run(["xraypipe", "phantom", "--count", "3", "--out", b.path().to_str().unwrap(), "--seed", "17"]).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
    let img = read_image(&a.path().join("phantom_000.png")).unwrap();
    assert_eq!(img.dims(), (256, 256));
    let (lo, hi) = img.min_max();
    assert!(hi - lo >= 0.5);
    assert!(matches!(
        run(["xraypipe", "phantom", "--count", "0", "--out", a.path().to_str().unwrap()]),
        Err(Error::Argument(_))
    ));
}

#[test]
fn pipeline_is_reproducible_under_a_seed() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let config = dirs[0].path().join("run.json");
    fs::write(
        &config,
        r#"{"phantoms": {"count": 2, "size": 96}, "compress": {"target": [24, 24]},
            "restore": {"backends": ["nearest", "bicubic"], "denoiser": "median"}}"#,
    )
    .unwrap();
    let go = |seed: &str, out: &Path| {
        run([
            "xraypipe",
            "--seed",
            seed,
            "pipeline",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        tree(out)
    };
    let a = go("9", &dirs[1].path().join("a"));
    let b = go("9", &dirs[1].path().join("b"));
    let c = go("10", &dirs[2].path().join("c"));
    assert_eq!(a, b);
    assert_eq!(a.len(), 7);
    assert_ne!(a, c);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"phantoms": {"count": 1, "sise": 64}}"#).unwrap();
    let err = run(["xraypipe", "bench", "--config", config.to_str().unwrap()]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn model_paths_round_trip_in_config() {
    let cfg = RunConfig {
        perceptual: Some(ModelPaths {
            manifest: "f.json".into(),
            weights: "f.nnw".into(),
        }),
        ..Default::default()
    };
    let json = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xraypipe"))
}

#[test]
fn binary_seed_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let status = |cmd: &mut Command| cmd.status().unwrap().success();
    assert!(status(bin().env("XRAYPIPE_SEED", "4").args(["phantom", "--size", "64", "--out"]).arg(p("env"))));
    assert!(status(bin().env_remove("XRAYPIPE_SEED").args(["--seed", "4", "phantom", "--size", "64", "--out"]).arg(p("flag"))));
    assert!(status(bin().env_remove("XRAYPIPE_SEED").args(["phantom", "--size", "64", "--out"]).arg(p("none"))));
    assert_eq!(tree(&p("env")), tree(&p("flag")));
    assert_ne!(tree(&p("env")), tree(&p("none")));
    assert!(!status(bin().env("XRAYPIPE_SEED", "x").args(["phantom", "--out"]).arg(p("bad"))));
}

#[test]
fn binary_compress_restore_metrics_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let ok = |args: &[&str]| {
        let o = bin().args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(&["--seed", "2", "phantom", "--size", "128", "--out", &p("ph")]);
    let src = format!("{}/phantom_000.png", p("ph"));
    ok(&["degrade", "--in", &src, "--out", &p("deg.png"), "--order", "1", "--factor", "1", "--tau", "0.01"]);
    ok(&["compress", "--in", &p("deg.png"), "--out", &p("a.xrcp"), "--target", "32x32"]);
    ok(&["restore", "--in", &p("a.xrcp"), "--out", &p("r.png"), "--backend", "lanczos3", "--denoiser", "none"]);
    let csv = ok(&["metrics", "--reference", &src, "--restored", &p("r.png"), "--payload", &p("a.xrcp")]);
    assert_eq!(csv.lines().next().unwrap(), QUALITY_COLUMNS.join(","));
    assert_eq!(read_image(Path::new(&p("r.png"))).unwrap().dims(), (128, 128));

    let o = bin().args(["restore", "--in", &src, "--out", &p("x.png")]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn binary_send_and_recv() {
    let dir = tempfile::tempdir().unwrap();
    let img = phantom(&PhantomSpec::new(64, 1)).unwrap();
    let payload = compress(
        &img,
        &CompressConfig {
            target: (16, 16),
            ..Default::default()
        },
    )
    .unwrap();
    let src = dir.path().join("scan-1.xrcp");
    fs::write(&src, payload.to_bytes()).unwrap();

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let inbox = dir.path().join("inbox");
    let mut recv = bin()
        .args(["recv", "--listen", &format!("127.0.0.1:{port}"), "--count", "1", "--out"])
        .arg(&inbox)
        .spawn()
        .unwrap();
    let mut sent = false;
    for _ in 0..50 {
        let o = bin().args(["send", "--to", &format!("127.0.0.1:{port}"), "--attempts", "1", "--in"]).arg(&src).output().unwrap();
        if o.status.success() {
            assert!(String::from_utf8_lossy(&o.stdout).contains("acked"));
            sent = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    assert!(sent, "receiver never came up");
    assert!(recv.wait().unwrap().success());
    assert_eq!(fs::read(inbox.join("scan-1.xrcp")).unwrap(), fs::read(&src).unwrap());
}
