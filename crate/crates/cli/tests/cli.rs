use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stereoconf::costvol::save_cost_volume;
use stereoconf::dataio::{save_gray_image, save_map, MapEncoding};
use stereoconf::features::read_stack;
use stereoconf::pipeline::{match_pair, PipelineParams, StereoAlgorithm};
use stereoconf::synth::{layered_pair, shifted_pair, SyntheticPair};

fn stconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stconf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_pair(dir: &Path, name: &str, pair: &SyntheticPair) {
    save_gray_image(&pair.left, &dir.join(format!("{name}_l.pgm"))).unwrap();
    save_gray_image(&pair.right, &dir.join(format!("{name}_r.pgm"))).unwrap();
    save_map(pair.ground_truth.disparity(), &dir.join(format!("{name}_gt.pfm")), MapEncoding::Pfm).unwrap();
}

fn entry_json(name: &str, d_max: usize, extra: &str) -> String {
    format!(
        r#"{{"name":"{name}","left":"{name}_l.pgm","right":"{name}_r.pgm","gt":"{name}_gt.pfm","gt_encoding":"pfm","d_max":{d_max},"tau":1{extra}}}"#
    )
}

/// Two synthetic entries and their manifest.
fn dataset() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "shift", &shifted_pair(40, 28, 3, 11));
    write_pair(dir.path(), "layers", &layered_pair(40, 28, 2, 5, 12));
    let manifest = dir.path().join("manifest.json");
    let text = format!("[{},{}]", entry_json("shift", 8, ""), entry_json("layers", 8, ""));
    std::fs::write(&manifest, text).unwrap();
    (dir, manifest)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn eval_emits_one_row_per_measure_and_image_plus_means() {
    let (dir, manifest) = dataset();
    let out = dir.path().join("out");
    let o = stconf(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--measures",
        "PKRN,DA_7,LRD",
        "--algo",
        "census-cbca",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("report.csv"));
    assert_eq!(rows.iter().filter(|r| r[1] != "mean").count(), 6);
    assert_eq!(rows.iter().filter(|r| r[1] == "mean").count(), 3);
    assert!(out.join("report.md").exists());
    assert!(out.join("shift/conf/DA_7.pfm").exists());
    assert!(out.join("layers/conf/PKRN.raw.pfm").exists());
}

#[test]
fn all_measures_depend_on_algorithm() {
    let (dir, manifest) = dataset();
    let count = |algo: &str| {
        let out = dir.path().join(algo);
        let o = stconf(&[
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--measures",
            "all",
            "--algo",
            algo,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let rows = csv_rows(&out.join("report.csv"));
        let measures: Vec<String> = rows.iter().filter(|r| r[1] == "shift").map(|r| r[0].clone()).collect();
        assert_eq!(rows.iter().filter(|r| r[1] == "mean").count(), measures.len());
        measures
    };
    let cbca = count("census-cbca");
    let sgm = count("census-sgm");
    assert_eq!(cbca.len(), 47);
    assert_eq!(sgm.len(), 49);
    for m in ["SCS", "PS", "SGE"] {
        assert!(sgm.iter().any(|s| s == m), "{m}");
    }
    assert!(!cbca.iter().any(|s| s == "SCS" || s == "PS"));
}

#[test]
fn csv_is_identical_across_worker_counts_and_cache_states() {
    let (dir, manifest) = dataset();
    let run = |name: &str, workers: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--measures",
            "all",
            "--algo",
            "census-sgm",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = stconf(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("report.csv")).unwrap()
    };
    let single = run("w1", "1", &["--no-cache"]);
    let cache = dir.path().join("shared-cache");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"cache_dir": {:?}}}"#, cache.to_str().unwrap())).unwrap();
    let cfg = cfg.to_str().unwrap();
    let cold = run("w3", "3", &["--config", cfg]);
    assert!(std::fs::read_dir(&cache).unwrap().count() > 0);
    let warm = run("w2", "2", &["--config", cfg]);
    assert_eq!(single, cold);
    assert_eq!(single, warm);
}

#[test]
fn config_file_drives_the_run() {
    let (dir, _) = dataset();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"algorithm":"census-cbca","manifest":"manifest.json","out":"cfg-out",
            "measures":["APKRN","VAR"],"windows":[5,9],"samples":10,
            "pipeline":{"cbca":{"max_arm":9}},"measure_params":{"wpkr_threshold":5}}"#,
    )
    .unwrap();
    let o = stconf(&["eval", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("cfg-out/report.csv"));
    let mut ids: Vec<&str> = rows.iter().filter(|r| r[1] == "mean").map(|r| r[0].as_str()).collect();
    ids.sort();
    assert_eq!(ids, ["APKRN_5", "APKRN_9", "VAR_5", "VAR_9"]);
}

#[test]
fn exit_codes() {
    let (dir, manifest) = dataset();
    let m = manifest.to_str().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    let code = |args: &[&str]| stconf(args).status.code().unwrap();

    assert_eq!(code(&["eval", "--manifest", m, "--measures", "NOPE", "--out", out]), 2);
    assert_eq!(code(&["eval", "--manifest", m, "--measures", "SCS", "--algo", "census-cbca", "--out", out]), 2);
    assert_eq!(code(&["eval", "--manifest", m, "--algo", "magic", "--out", out]), 2);
    assert_eq!(code(&["eval", "--measures", "PKR", "--out", out]), 2);
    assert_eq!(code(&["eval", "--manifest", m, "--window", "4", "--out", out]), 2);
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, "{not json").unwrap();
    assert_eq!(code(&["eval", "--config", bad_cfg.to_str().unwrap()]), 2);

    // One broken entry: the other is still reported, exit status 1.
    let broken = dir.path().join("broken.json");
    let text = format!(
        "[{},{}]",
        entry_json("shift", 8, ""),
        entry_json("missing", 8, "").replace("missing_l.pgm", "nowhere.pgm")
    );
    std::fs::write(&broken, text).unwrap();
    let partial = dir.path().join("partial");
    let o = stconf(&[
        "eval",
        "--manifest",
        broken.to_str().unwrap(),
        "--measures",
        "PKRN",
        "--out",
        partial.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let rows = csv_rows(&partial.join("report.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "shift");

    // d_max not below the width fails the entry.
    let wide = dir.path().join("wide.json");
    std::fs::write(&wide, format!("[{}]", entry_json("shift", 40, ""))).unwrap();
    assert_eq!(code(&["match", "--manifest", wide.to_str().unwrap(), "--out", out]), 1);
}

#[test]
fn list_measures_prints_catalog() {
    let o = stconf(&["list-measures"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let entries = v.as_array().unwrap();
    assert_eq!(entries.len(), 50);
    assert!(entries.iter().any(|e| e["id"] == "PKRN"));
}

#[test]
fn match_persists_artifacts_and_recovers_shift() {
    let (dir, manifest) = dataset();
    let out = dir.path().join("m");
    let o = stconf(&["match", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "disparity.pfm",
        "right_disparity.pfm",
        "raw.stcvol",
        "volume.stcvol",
        "right_volume.stcvol",
        "self_left.stcvol",
        "self_right.stcvol",
        "path0.stcvol",
        "path3_disparity.pfm",
    ] {
        assert!(out.join("shift").join(f).exists(), "{f}");
    }
    let disp = stereoconf::dataio::load_pfm(&out.join("shift/disparity.pfm")).unwrap();
    let interior: Vec<f32> = (6..22)
        .flat_map(|y| (12..34).map(move |x| (x, y)))
        .map(|(x, y)| disp.get(x, y))
        .collect();
    let hits = interior.iter().filter(|&&d| d == 3.0).count();
    assert!(hits as f64 >= 0.95 * interior.len() as f64, "{hits}/{}", interior.len());
    let rows = csv_rows(&out.join("match.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn external_volume_is_ingested() {
    let dir = tempfile::tempdir().unwrap();
    let pair = shifted_pair(40, 28, 3, 5);
    write_pair(dir.path(), "ext", &pair);
    let run = match_pair(&pair.left, &pair.right, 8, &PipelineParams::default(), StereoAlgorithm::CensusSgm).unwrap();
    save_cost_volume(&run.volume, &dir.path().join("ext.stcvol")).unwrap();
    let manifest = dir.path().join("m.json");
    std::fs::write(&manifest, format!("[{}]", entry_json("ext", 8, r#","volume":"ext.stcvol""#))).unwrap();
    let out = dir.path().join("o");
    let o = stconf(&[
        "match",
        "--manifest",
        manifest.to_str().unwrap(),
        "--algo",
        "external-volume",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let disp = stereoconf::dataio::load_pfm(&out.join("ext/disparity.pfm")).unwrap();
    assert_eq!(disp, run.disparity);

    let missing = dir.path().join("nov.json");
    std::fs::write(&missing, format!("[{}]", entry_json("ext", 8, ""))).unwrap();
    let o = stconf(&["match", "--manifest", missing.to_str().unwrap(), "--algo", "external-volume", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn features_export_stacks() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "f", &shifted_pair(48, 32, 2, 3));
    let manifest = dir.path().join("m.json");
    std::fs::write(&manifest, format!("[{}]", entry_json("f", 8, ""))).unwrap();
    let file = dir.path().join("stack.stfeat");
    let o = stconf(&[
        "features",
        "--kind",
        "O1",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        file.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stack = read_stack(&file).unwrap();
    assert_eq!((stack.width, stack.height, stack.len()), (48, 32, 20));

    let o = stconf(&[
        "features",
        "--kind",
        "SGMF",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("dirout").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_stack(&dir.path().join("dirout/f/SGMF.stfeat")).unwrap().len(), 20);

    let bad = dir.path().join("bad");
    let (m, bad) = (manifest.to_str().unwrap(), bad.to_str().unwrap());
    let o = stconf(&["features", "--kind", "SGMF", "--algo", "census-cbca", "--manifest", m, "--out", bad]);
    assert_eq!(o.status.code(), Some(2));
    let o = stconf(&["features", "--kind", "XYZ", "--manifest", m, "--out", bad]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sparsify_dumps_curves() {
    let (dir, manifest) = dataset();
    let out = dir.path().join("s");
    let o = stconf(&[
        "sparsify",
        "--manifest",
        manifest.to_str().unwrap(),
        "--measures",
        "PKRN,WMN",
        "--samples",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("layers/curves/WMN.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "density,error_rate");
    assert_eq!(lines.len(), 11);
    assert!(lines[10].starts_with("1.000000,"));
}

#[test]
fn confidence_writes_maps() {
    let (dir, manifest) = dataset();
    let out = dir.path().join("c");
    let o = stconf(&[
        "confidence",
        "--manifest",
        manifest.to_str().unwrap(),
        "--measures",
        "UCC,DTE",
        "--window",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let scores = stereoconf::dataio::load_pfm(&out.join("shift/conf/UCC.pfm")).unwrap();
    assert_eq!((scores.width(), scores.height()), (40, 28));
    assert!(out.join("layers/conf/DTE.raw.pfm").exists());
}
