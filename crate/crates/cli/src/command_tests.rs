//! Commands driven in-process through the argument parser.

use std::path::{Path, PathBuf};

use clap::CommandFactory;

use super::*;

fn scene_file(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name).display().to_string()
}

fn at(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn polarbg(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("polarbg").chain(args.iter().copied()))
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_flag() {
    let mut cli = Cli::command();
    cli.build();
    let detect = cli.find_subcommand_mut("detect").unwrap().render_long_help().to_string();
    for flag in ["--frames", "--model", "--roi", "--fusion", "--out-dir", "--timing", "--config"] {
        assert!(detect.contains(flag), "missing {flag} in:\n{detect}");
    }
    let eval = cli.find_subcommand_mut("eval").unwrap().render_long_help().to_string();
    for flag in ["--mode", "--predicted", "--truth", "--frames", "--zones", "--out"] {
        assert!(eval.contains(flag), "missing {flag}");
    }
    assert_eq!(polarbg(&["--help"]), 0);
}

#[test]
fn unknown_flag_is_an_error() {
    let err = Cli::try_parse_from(["polarbg", "train", "--frmes", "x.csv"]).unwrap_err();
    assert_eq!(err.kind(), clap::error::ErrorKind::UnknownArgument);
    assert_eq!(polarbg(&["train", "--frmes", "x.csv"]), 2);
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = at(dir.path(), "m.json");
    assert_eq!(polarbg(&["train", "--frames", &at(dir.path(), "absent.csv"), "--out", &out]), 2);
    assert!(!Path::new(&out).exists());
    // no frames flag and no configured path
    assert_eq!(polarbg(&["train", "--out", &out]), 2);
}

#[test]
fn thread_counts() {
    assert_eq!(thread_count("0").unwrap(), 0);
    assert_eq!(thread_count(" 4 ").unwrap(), 4);
    assert!(thread_count("many").is_err());
    assert!(thread_count("-1").is_err());
}

#[test]
fn train_on_two_frames_then_mismatched_sensor() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (frames, model) = (at(p, "frames.csv"), at(p, "model.json"));
    assert_eq!(polarbg(&["simulate", "--scene", &scene_file("corridor.json"), "--frames", "2", "--out-dir", &at(p, "")]), 0);
    assert_eq!(polarbg(&["train", "--frames", &frames, "--out", &model]), 0);
    assert_eq!(json(p.join("model.json"))["training"]["frames"], 2);

    let other = at(p, "other.json");
    std::fs::write(&other, r#"{"sensor": {"beam_count": 2, "elevations": [-10.0, -5.0]}}"#).unwrap();
    let cfg = RunConfig::load(Some(Path::new(&other))).unwrap();
    let err = cmd_detect(
        &cfg,
        DetectArgs {
            frames: Some(frames.clone().into()),
            model: Some(model.clone().into()),
            roi: Some(scene_file("corridor_roi.json").into()),
            fusion: None,
            out_dir: Some(p.join("det")),
            timing: None,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::ModelMismatch(_)), "{err}");
    assert_eq!(exit_code(&err), 2);
    let code = polarbg(&[
        "--config", &other, "detect", "--frames", &frames, "--model", &model,
        "--roi", &scene_file("corridor_roi.json"), "--out-dir", &at(p, "det"),
    ]);
    assert_eq!(code, 2);
    assert!(!p.join("det").join("detections.csv").exists());
}

#[test]
fn demo_scene_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let d = at(p, "");
    let zones = scene_file("intersection_zones.json");
    let f = |name: &str| at(p, name);
    assert_eq!(polarbg(&["simulate", "--scene", &scene_file("intersection.json"), "--out-dir", &d]), 0);
    assert_eq!(polarbg(&["train", "--frames", &f("frames.csv"), "--out", &f("model.json")]), 0);
    assert_eq!(
        polarbg(&[
            "detect", "--frames", &f("frames.csv"), "--model", &f("model.json"),
            "--roi", &scene_file("intersection_roi.json"), "--out-dir", &d, "--timing", &f("timing.json"),
        ]),
        0
    );
    assert_eq!(polarbg(&["track", "--detections", &f("detections.csv"), "--zones", &zones, "--out-dir", &d]), 0);
    assert_eq!(
        polarbg(&[
            "eval", "--mode", "counts", "--predicted", &f("counts.json"), "--truth", &f("gt_tracks.csv"),
            "--zones", &zones, "--out", &f("count_metrics.json"),
        ]),
        0
    );

    let metrics = json(p.join("count_metrics.json"));
    assert_eq!(metrics["total"]["predicted"], 8);
    assert_eq!(metrics["total"]["truth"], 8);
    for (key, row) in metrics["movements"].as_object().unwrap() {
        assert_eq!(row["predicted"], row["truth"], "{key}");
    }
    // counts.json as written by the track command
    let counts: MovementCounts = serde_json::from_value(json(p.join("counts.json"))).unwrap();
    assert_eq!(counts.total(), 8);
    assert_eq!(json(p.join("timing.json"))["frames"], 200);

    assert_eq!(
        polarbg(&[
            "eval", "--mode", "points", "--predicted", &f("foreground.csv"), "--truth", &f("gt_labels.csv"),
            "--frames", &f("frames.csv"), "--out", &f("points.json"),
        ]),
        0
    );
    for band in json(p.join("points.json"))["bands"].as_array().unwrap() {
        assert!(band["f1"].as_f64().unwrap() >= 0.95, "{band}");
    }

    assert_eq!(
        polarbg(&["plot", "--kind", "trajectories", "--tracks", &f("tracks.csv"), "--zones", &zones, "--out", &f("tracks.svg")]),
        0
    );
    let svg = std::fs::read_to_string(p.join("tracks.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 8);
    assert_eq!(
        polarbg(&["plot", "--kind", "stmap", "--frames", &f("frames.csv"), "--model", &f("model.json"), "--beam", "12", "--out", &f("maps")]),
        0
    );
    let pgm = std::fs::read_to_string(p.join("maps/stmap_beam12_foreground.pgm")).unwrap();
    assert!(pgm.starts_with("P2\n1800 200\n255\n"));
    assert_eq!(
        polarbg(&["plot", "--kind", "histogram", "--frames", &f("frames.csv"), "--beam", "12", "--bin", "300", "--out", &f("hist.svg")]),
        0
    );
    // beam out of range
    assert_eq!(polarbg(&["plot", "--kind", "histogram", "--frames", &f("frames.csv"), "--beam", "99", "--out", &f("x.svg")]), 2);
}

#[test]
fn config_paths_fill_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(polarbg(&["simulate", "--scene", &scene_file("corridor.json"), "--frames", "3", "--out-dir", &at(p, "")]), 0);
    let cfg = serde_json::json!({"paths": {"frames": p.join("frames.csv"), "model": p.join("from_config.json")}});
    std::fs::write(p.join("run.json"), cfg.to_string()).unwrap();
    assert_eq!(polarbg(&["--config", &at(p, "run.json"), "train"]), 0);
    assert!(p.join("from_config.json").exists());
}
