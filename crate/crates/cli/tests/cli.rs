use std::path::Path;
use std::process::{Command, Output};

use aifpipe_core::dataset::{GT, MAIN_BG, MAIN_FG, M_FUSE, ULTRAWIDE};
use aifpipe_core::imaging::io::{load_png, save_png, BitDepth};
use aifpipe_core::{synth, Image};

fn aifpipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aifpipe"))
        .args(args)
        .env("AIFPIPE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn make_scene(root: &Path, id: &str, fg: &Image, bg: &Image, gt: Option<&Image>) {
    let dir = root.join("scenes").join(id);
    std::fs::create_dir_all(&dir).unwrap();
    save_png(fg, dir.join(MAIN_FG), BitDepth::Eight).unwrap();
    save_png(bg, dir.join(MAIN_BG), BitDepth::Eight).unwrap();
    save_png(fg, dir.join(ULTRAWIDE), BitDepth::Eight).unwrap();
    if let Some(gt) = gt {
        save_png(gt, dir.join(GT), BitDepth::Eight).unwrap();
    }
}

#[test]
fn fuse_same_file_returns_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.png");
    save_png(&synth::texture(160, 128, 3, 2), &input, BitDepth::Eight).unwrap();
    let out = tmp.path().join("out");
    let o = aifpipe(&["fuse", s(&input), s(&input), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (a, _) = load_png(&input).unwrap();
    let (b, depth) = load_png(out.join("aif.png")).unwrap();
    assert_eq!(depth, BitDepth::Eight);
    assert!(a.mean_abs_diff(&b) <= 1e-3);
    let text = stdout(&o);
    for stage in ["registration", "flow", "color", "fusion", "total"] {
        assert!(text.contains(&format!("timing stage={stage} seconds=")), "{text}");
    }
    assert!(!out.join("warped_h.png").exists());
}

#[test]
fn sixteen_bit_main_gives_sixteen_bit_output() {
    let tmp = tempfile::tempdir().unwrap();
    let img = synth::texture(160, 128, 3, 3);
    let main = tmp.path().join("main.png");
    let wide = tmp.path().join("wide.png");
    save_png(&img, &main, BitDepth::Sixteen).unwrap();
    save_png(&img, &wide, BitDepth::Eight).unwrap();
    let out = tmp.path().join("out");
    let o = aifpipe(&["fuse", s(&main), s(&wide), "--out", s(&out), "--save-intermediates"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_png(out.join("aif.png")).unwrap().1, BitDepth::Sixteen);
    for f in aifpipe_core::pipeline::INTERMEDIATE_FILES {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn missing_wide_exits_1_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.png");
    save_png(&synth::texture(64, 64, 3, 1), &input, BitDepth::Eight).unwrap();
    let out = tmp.path().join("out");
    let o = aifpipe(&["fuse", s(&input), s(&tmp.path().join("nope.png")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn featureless_pair_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("flat.png");
    save_png(&Image::filled(96, 96, 3, 0.5), &input, BitDepth::Eight).unwrap();
    let out = tmp.path().join("out");
    let o = aifpipe(&["fuse", s(&input), s(&input), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("estimation failed"));
    assert!(!out.join("aif.png").exists());
}

#[test]
fn bad_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "flow.levels = 99\n").unwrap();
    let input = tmp.path().join("in.png");
    save_png(&synth::texture(64, 64, 3, 1), &input, BitDepth::Eight).unwrap();
    let o = aifpipe(&["--config", s(&cfg), "fuse", s(&input), s(&input)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_fuse_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = synth::aif_scene(&synth::AifSceneParams { width: 256, height: 192, ..Default::default() });
    let (main, wide) = (tmp.path().join("m.png"), tmp.path().join("w.png"));
    save_png(&scene.main, &main, BitDepth::Eight).unwrap();
    save_png(&scene.wide, &wide, BitDepth::Eight).unwrap();
    let cfg = tmp.path().join("c.cfg");
    std::fs::write(&cfg, "reg.seed = 5\n").unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = aifpipe(&["--config", s(&cfg), "--seed", "5", "fuse", s(&main), s(&wide), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(out.join("aif.png")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn synth_gt_equal_pair_on_odd_size() {
    let tmp = tempfile::tempdir().unwrap();
    let img = synth::texture(67, 45, 3, 4);
    make_scene(tmp.path(), "s1", &img, &img, None);
    let dir = tmp.path().join("scenes/s1");
    let o = aifpipe(&["synth-gt", s(&dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (gt, _) = load_png(dir.join(GT)).unwrap();
    let (fg, _) = load_png(dir.join(MAIN_FG)).unwrap();
    assert_eq!(gt, fg);
    let (m, _) = load_png(dir.join(M_FUSE)).unwrap();
    assert_eq!(m.dims(), (67, 45));
}

#[test]
fn synth_gt_batch_writes_per_scene_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, id) in ["x", "y"].iter().enumerate() {
        let img = synth::texture(48, 40, 3, 10 + i as u64);
        make_scene(tmp.path(), id, &img, &img, None);
    }
    let out = tmp.path().join("gt_out");
    let (x, y) = (tmp.path().join("scenes/x"), tmp.path().join("scenes/y"));
    let o = aifpipe(&["--jobs", "1", "synth-gt", s(&x), s(&y), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("x").join(GT).is_file());
    assert!(out.join("y").join(M_FUSE).is_file());
}

#[test]
fn synth_gt_missing_bg_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let img = synth::texture(32, 32, 3, 1);
    make_scene(tmp.path(), "s", &img, &img, None);
    let dir = tmp.path().join("scenes/s");
    std::fs::remove_file(dir.join(MAIN_BG)).unwrap();
    assert_eq!(aifpipe(&["synth-gt", s(&dir)]).status.code(), Some(1));
    assert!(!dir.join(GT).exists());
}

fn eval_root(root: &Path, order: &[&str]) -> std::path::PathBuf {
    let pred = root.join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    for id in order {
        let seed = if *id == "a" { 1 } else { 2 };
        let gt = synth::texture(32, 24, 3, seed);
        make_scene(root, id, &gt, &gt, Some(&gt));
        save_png(&gt, pred.join(format!("{id}_fg.png")), BitDepth::Eight).unwrap();
    }
    pred
}

#[test]
fn eval_perfect_predictions_and_sorted_csv() {
    let t1 = tempfile::tempdir().unwrap();
    let t2 = tempfile::tempdir().unwrap();
    let p1 = eval_root(t1.path(), &["a", "b"]);
    let p2 = eval_root(t2.path(), &["b", "a"]);
    let o1 = aifpipe(&["eval", s(t1.path()), s(&p1)]);
    let o2 = aifpipe(&["eval", s(t2.path()), s(&p2), "--out", s(&t2.path().join("r.csv"))]);
    assert!(o1.status.success() && o2.status.success());
    assert!(stdout(&o1).contains("total count=2 psnr_db=inf ssim_rgb=1.000000"));
    let c1 = std::fs::read_to_string(p1.join("metrics.csv")).unwrap();
    let c2 = std::fs::read_to_string(t2.path().join("r.csv")).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(c1.lines().count(), 3);
}

#[test]
fn eval_empty_dataset_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(tmp.path().join("scenes")).unwrap();
    std::fs::create_dir_all(tmp.path().join("pred")).unwrap();
    let o = aifpipe(&["eval", s(tmp.path()), s(&tmp.path().join("pred"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!tmp.path().join("pred/metrics.csv").exists());
}

#[test]
fn validate_dataset_reports_issues() {
    let tmp = tempfile::tempdir().unwrap();
    let img = synth::texture(32, 32, 3, 1);
    make_scene(tmp.path(), "a", &img, &img, None);
    std::fs::write(tmp.path().join("eval.txt"), "a\n").unwrap();
    let o = aifpipe(&["validate-dataset", s(tmp.path())]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("scenes=1 train=absent eval=1"));

    std::fs::write(tmp.path().join("train.txt"), "ghost\n").unwrap();
    let o = aifpipe(&["validate-dataset", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("ghost"));

    let o = aifpipe(&["validate-dataset", s(tmp.path()), "--check-resolution"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("expected 3648x2736"));
}
