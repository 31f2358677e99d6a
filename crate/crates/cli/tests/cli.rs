use std::path::Path;
use std::process::{Command, Output};

use crosssrn::imaging::{self, checkerboard, load_png, save_png, FloatImage, Ratio};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosssrn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Deterministic textured RGB image.
fn texture(w: usize, h: usize, salt: usize) -> FloatImage {
    FloatImage::from_fn(w, h, 3, |x, y, c| {
        let v = (x * 37 + y * 91 + c * 53 + salt * 17) ^ (x * y + salt);
        (v % 256) as f64
    })
}

fn write_png(img: &FloatImage, path: &Path) {
    save_png(&img.to_u8(), path).unwrap();
}

#[test]
fn count_reports_the_default_model() {
    let o = run(&["count"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("1295K") && out.contains("73.68G"), "{out}");
}

#[test]
fn count_with_ablations_lists_every_variant() {
    let o = run(&["count", "--ablations", "--set", "channels=32", "--set", "groups=2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for name in ["Seq", "Conv", "w/o MFF", "w/o CCB", "Cross m=7", "w/o CA", "w/o F-Norm"] {
        assert!(out.contains(name), "{name} missing from\n{out}");
    }
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "channels = 16\nchanels = 8\n").unwrap();
    let o = run(&["count", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("chanels"), "{}", stderr(&o));
}

#[test]
fn train_with_missing_data_dir_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_dir");
    let o = run(&["train", "--data-dir", p(&missing), "--out-dir", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_dir"), "{}", stderr(&o));
}

const TINY: [&str; 14] = [
    "--set", "scale=2", "--set", "channels=8", "--set", "groups=1", "--set", "patch_size=8",
    "--set", "batch_size=2", "--set", "iterations_per_epoch=2", "--set", "lr=1e-3",
];

fn train(data: &Path, out: &Path, epochs: usize, resume: Option<&Path>) -> Output {
    let epochs = format!("epochs={epochs}");
    let mut args = vec!["train", "--data-dir", p(data), "--out-dir", p(out), "--seed", "11", "--set", &epochs];
    args.extend(TINY);
    if let Some(r) = resume {
        args.extend(["--resume", p(r)]);
    }
    run(&args)
}

#[test]
fn train_resume_matches_an_uninterrupted_run_and_feeds_sr_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_png(&texture(32, 32, 1), &data.join("a.png"));
    write_png(&texture(40, 36, 2), &data.join("b.png"));

    let straight = dir.path().join("straight");
    let o = train(&data, &straight, 2, None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch_0002.xsrn"));
    assert!(straight.join("config.txt").is_file());
    assert_eq!(std::fs::read_to_string(straight.join("loss.log")).unwrap().lines().count(), 2);

    let split = dir.path().join("split");
    assert!(train(&data, &split, 1, None).status.success());
    let o = train(&data, &split, 2, Some(&split.join("epoch_0001.xsrn")));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(straight.join("epoch_0002.xsrn")).unwrap(),
        std::fs::read(split.join("epoch_0002.xsrn")).unwrap()
    );

    // A checkpoint of one width cannot resume a run configured with another.
    let first = split.join("epoch_0001.xsrn");
    let mut args = vec!["train", "--data-dir", p(&data), "--out-dir", p(&split)];
    args.extend(TINY);
    args.extend(["--set", "channels=16", "--resume", p(&first)]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(2));

    let ckpt = straight.join("epoch_0002.xsrn");
    let input = dir.path().join("lr.png");
    write_png(&texture(20, 14, 3), &input);
    let (out1, out2) = (dir.path().join("sr1.png"), dir.path().join("sr2.png"));
    for out in [&out1, &out2] {
        let o = run(&["sr", "--model", p(&ckpt), "--input", p(&input), "--output", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let img = load_png(&out1).unwrap();
    assert_eq!((img.width(), img.height()), (40, 28));
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());

    let o = run(&["eval", "--model", p(&ckpt), "--hr-dir", p(&data), "--tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<_> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("a\t") && rows[1].starts_with("b\t"));

    let o = run(&["eval", "--model", p(&ckpt), "--hr-dir", p(&data), "--scale", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sr_bicubic_upscales_by_four_and_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    let output = dir.path().join("out.png");
    let img = texture(100, 80, 4);
    write_png(&img, &input);
    let o = run(&["sr", "--model", "bicubic", "--scale", "4", "--input", p(&input), "--output", p(&output)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = load_png(&output).unwrap();
    assert_eq!((out.width(), out.height()), (400, 320));
    let want = imaging::bicubic_resize(&img, Ratio::up(4), true).unwrap().to_u8();
    assert_eq!(out.data(), want.data());

    let o = run(&["sr", "--model", "bicubic", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sr_with_unreadable_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.xsrn");
    std::fs::write(&bogus, b"nope").unwrap();
    let input = dir.path().join("in.png");
    write_png(&texture(8, 8, 0), &input);
    let o = run(&["sr", "--model", p(&bogus), "--input", p(&input), "--output", p(&dir.path().join("o.png"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn eval_identity_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&texture(30, 30, 5), &dir.path().join("x.png"));
    let o = run(&["eval", "--model", "identity", "--hr-dir", p(dir.path()), "--tsv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "x\tinf\t1.000000");
}

#[test]
fn eval_bicubic_prints_a_table_with_a_mean() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&texture(48, 48, 6), &dir.path().join("x.png"));
    write_png(&texture(36, 40, 7), &dir.path().join("y.png"));
    let o = run(&["eval", "--model", "bicubic", "--scale", "2", "--hr-dir", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("x2 (y, crop 2)") && out.contains("mean"), "{out}");
}

#[test]
fn select_bench_keeps_edges_and_drops_flat_images() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat");
    let boards = dir.path().join("boards");
    std::fs::create_dir_all(&flat).unwrap();
    std::fs::create_dir_all(&boards).unwrap();
    for i in 0..3 {
        write_png(&FloatImage::filled(32, 32, 3, 50.0 * i as f64), &flat.join(format!("f{i}.png")));
        write_png(&checkerboard(32, 32, 8 + 4 * i, 3), &boards.join(format!("c{i}.png")));
    }
    let list = dir.path().join("selected.txt");

    let o = run(&["select-bench", "--dir", p(&flat), "--out", p(&list)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().last(), Some("0"));
    assert_eq!(std::fs::read_to_string(&list).unwrap(), "");

    let o = run(&["select-bench", "--dir", p(&flat), "--dir", p(&boards), "--out", p(&list)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().last(), Some("3"));
    assert_eq!(std::fs::read_to_string(&list).unwrap().lines().count(), 3);

    let o = run(&["select-bench", "--dir", p(&boards), "--te", "300", "--out", p(&list)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn degrade_at_scale_one_is_identity_and_crops_otherwise() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("hr.png");
    let img = texture(27, 18, 8);
    write_png(&img, &input);
    let out = dir.path().join("lr.png");

    let o = run(&["degrade", "--input", p(&input), "--scale", "1", "--output", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(load_png(&out).unwrap().data(), img.to_u8().data());

    let o = run(&["degrade", "--input", p(&input), "--scale", "4", "--output", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("center-cropping"));
    let lr = load_png(&out).unwrap();
    assert_eq!((lr.width(), lr.height()), (6, 4));
    assert_eq!(lr.data(), imaging::degrade(&img, 4).unwrap().to_u8().data());
}

#[test]
fn gradcheck_passes_and_an_injected_fault_fails() {
    let o = run(&["gradcheck", "--ops", "conv2d_1x,cross_conv", "--trials", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS") && !stdout(&o).contains("FAIL"));

    let o = run(&["gradcheck", "--ops", "relu", "--trials", "10", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("corrupted_leaky_relu"), "{}", stderr(&o));

    let o = run(&["gradcheck", "--ops", "no_such_op"]);
    assert_eq!(o.status.code(), Some(2));
}
