use std::path::Path;
use std::process::{Command, Output};

const RUN_CONFIG: &str = "\
scale = custom
input_size = 64
fn_size = 8
batch_size = 2
omcnn_max_steps = 4
clstm_max_steps = 2
val_every = 2
val_frames = 2
clip_length = 4
overlap = 2
mc_samples = 2
split_train = 0.5
split_validation = 0.25
split_test = 0.25
";

const SYNTH_CONFIG: &str = "\
videos = 4
width = 64
height = 48
frames = 48
fps = 20
min_radius = 5
max_radius = 9
";

fn vidsal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidsal")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_with_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "batch_sise = 3\n").unwrap();
    let o = vidsal(&["train-omcnn", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("batch_sise"), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_with_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "p_h = 1.5\n").unwrap();
    let o = vidsal(&["train-omcnn", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p_h"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_with_2() {
    assert_eq!(vidsal(&["predict"]).status.code(), Some(2));
    assert_eq!(vidsal(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_video_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = vidsal(&["analyze", "--video", p(&dir.path().join("nothing")), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn malformed_frame_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = dir.path().join("synth.txt");
    std::fs::write(&synth, SYNTH_CONFIG).unwrap();
    assert!(vidsal(&["synth", "--config", p(&synth), "--seed", "2", "--out", p(&data)]).status.success());
    let video = data.join("video_000");
    let frame = std::fs::read_dir(video.join("frames")).unwrap().next().unwrap().unwrap().path();
    std::fs::write(&frame, b"P6\n64 48\n255\nshort").unwrap();
    let o = vidsal(&["analyze", "--video", p(&video), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn end_to_end_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (run, synth) = (root.join("run.txt"), root.join("synth.txt"));
    std::fs::write(&run, RUN_CONFIG).unwrap();
    std::fs::write(&synth, SYNTH_CONFIG).unwrap();
    let data = root.join("data");
    let ok = |o: Output| assert!(o.status.success(), "{}", stderr(&o));

    ok(vidsal(&["synth", "--config", p(&synth), "--seed", "5", "--out", p(&data)]));
    assert!(data.join("videos.txt").exists());
    ok(vidsal(&["train-omcnn", "--config", p(&run), "--data", p(&data), "--out", p(&root.join("om"))]));
    assert!(root.join("om/best.ckpt").exists() && root.join("om/train.log").exists());
    ok(vidsal(&[
        "train-clstm",
        "--config",
        p(&run),
        "--data",
        p(&data),
        "--omcnn",
        p(&root.join("om/best.ckpt")),
        "--out",
        p(&root.join("cl")),
    ]));
    let video = data.join("video_001");
    for mode in ["deterministic", "mc"] {
        let pred = root.join(format!("pred_{mode}"));
        ok(vidsal(&[
            "predict",
            "--config",
            p(&run),
            "--video",
            p(&video),
            "--omcnn",
            p(&root.join("om/best.ckpt")),
            "--clstm",
            p(&root.join("cl/best.ckpt")),
            "--mode",
            mode,
            "--overlay",
            "--out",
            p(&pred),
        ]));
        assert_eq!(std::fs::read_dir(&pred).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count(), 48);
        assert!(pred.join("overlay/000000.ppm").exists());
        let o = vidsal(&["eval", "--pred", p(&pred), "--video", p(&video), "--out", p(&root.join(format!("eval_{mode}")))]);
        assert!(String::from_utf8_lossy(&o.stdout).contains("AUC"));
        ok(o);
    }
    let o = vidsal(&["analyze", "--video", p(&video), "--counts", "1,3", "--seed", "1", "--out", p(&root.join("an"))]);
    assert!(root.join("an/temporal_cc.csv").exists() && root.join("an/motion_groups.csv").exists());
    assert!(root.join("an/object_hit.csv").exists());
    ok(o);

    // A checkpoint of another network is refused as a configuration error.
    let other = root.join("other.txt");
    std::fs::write(&other, RUN_CONFIG.replace("fn_size = 8", "fn_size = 16")).unwrap();
    let o = vidsal(&[
        "train-clstm",
        "--config",
        p(&other),
        "--data",
        p(&data),
        "--omcnn",
        p(&root.join("om/best.ckpt")),
        "--out",
        p(&root.join("cl2")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
