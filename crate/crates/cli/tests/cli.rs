use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pfoe::io::write_image;
use pfoe::model_file;
use poisson_foe::foe::{DomainTag, FoEModel};
use poisson_foe::Image;

fn pfoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfoe"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn scene(w: usize, h: usize, shift: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let base = if ((x + shift) / 8 + y / 8) % 2 == 0 { 200.0 } else { 60.0 };
        base + ((x * 7 + y * 3 + shift) % 11) as f64
    })
}

fn corpus(dir: &Path, n: usize) -> PathBuf {
    let c = dir.join("corpus");
    fs::create_dir_all(&c).unwrap();
    for i in 0..n {
        write_image(&c.join(format!("img{i}.png")), &scene(40, 36, 5 * i)).unwrap();
    }
    c
}

fn small_model(dir: &Path, domain: DomainTag) -> PathBuf {
    let path = dir.join(format!("{domain}.foe"));
    model_file::save(&path, &FoEModel::dct_init(3, 4, 0.2, 0.5, domain).unwrap()).unwrap();
    path
}

#[test]
fn help_and_version_succeed_and_bad_flags_are_usage_errors() {
    assert_eq!(code(&pfoe(&["--help"])), 0);
    assert_eq!(code(&pfoe(&["--version"])), 0);
    assert_eq!(code(&pfoe(&["noise", "--bogus"])), 1);
    assert_eq!(code(&pfoe(&[])), 1);
}

#[test]
fn noise_is_deterministic_and_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.png");
    write_image(&clean, &scene(30, 20, 0)).unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    for out in [&a, &b] {
        let r = pfoe(&["noise", p(&clean), p(out), "--peak", "40", "--seed", "0"]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let meta = fs::read_to_string(dir.path().join("a.png.meta")).unwrap();
    assert!(meta.contains("peak = 40") && meta.contains("seed = 0"), "{meta}");

    let c = dir.path().join("c.png");
    pfoe(&["noise", p(&clean), p(&c), "--peak", "40", "--seed", "1"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    let binned = dir.path().join("binned.f32");
    assert_eq!(code(&pfoe(&["noise", p(&clean), p(&binned), "--peak", "1", "--bin"])), 0);
    let img = pfoe::io::read_image(&binned).unwrap();
    assert_eq!((img.width(), img.height()), (10, 7));
}

#[test]
fn noise_rejects_bad_peak_and_unreadable_input() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.png");
    write_image(&clean, &scene(8, 8, 0)).unwrap();
    let out = dir.path().join("o.png");
    for peak in ["0", "-3", "nan"] {
        let r = pfoe(&["noise", p(&clean), p(&out), "--peak", peak]);
        assert_eq!(code(&r), 1, "peak {peak}");
    }
    let r = pfoe(&["noise", p(&dir.path().join("missing.png")), p(&out), "--peak", "4"]);
    assert_eq!(code(&r), 2);
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());
}

#[test]
fn denoise_reports_branch_and_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), DomainTag::Anscombe);
    let clean = dir.path().join("clean.png");
    write_image(&clean, &scene(24, 24, 0)).unwrap();
    let noisy = dir.path().join("noisy.png");
    pfoe(&["noise", p(&clean), p(&noisy), "--peak", "40", "--seed", "3"]);
    let out = dir.path().join("out.f32");
    let trace = dir.path().join("trace.csv");

    let r = pfoe(&["denoise", p(&noisy), p(&out), "--model", p(&model), "--trace", p(&trace)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let s = stdout(&r);
    assert!(s.contains("branch=quadratic") && s.contains("peak=40"), "{s}");
    assert!(fs::read_to_string(&trace).unwrap().starts_with("iteration,F,G,L,step_norm"));

    let r = pfoe(&["denoise", p(&noisy), p(&out), "--model", p(&model), "--peak", "2"]);
    assert!(stdout(&r).contains("branch=idiv"), "{}", stdout(&r));

    let r = pfoe(&["denoise", p(&noisy), p(&out), "--model", p(&model), "--lambda", "0.37"]);
    assert!(stdout(&r).contains("lambda=0.37"), "{}", stdout(&r));

    let r = pfoe(&["denoise", p(&noisy), p(&out), "--model", p(&model), "--peak", "40", "--branch", "idiv"]);
    assert!(stdout(&r).contains("branch=idiv"), "{}", stdout(&r));
    let x = pfoe::io::read_image(&out).unwrap();
    assert_eq!((x.width(), x.height()), (24, 24));
    assert!(x.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn denoise_refuses_domain_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_model(dir.path(), DomainTag::Original);
    let noisy = dir.path().join("noisy.png");
    write_image(&noisy, &Image::from_fn(16, 16, |x, y| ((x + y) % 5) as f64)).unwrap();
    let out = dir.path().join("out.f32");
    let r = pfoe(&["denoise", p(&noisy), p(&out), "--model", p(&model), "--peak", "4", "--variant", "transform"]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("domain"));
    let r = pfoe(&["denoise", p(&noisy), p(&out), "--model", p(&model), "--peak", "4", "--variant", "direct"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(stdout(&r).contains("branch=none"));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let r = Command::new(env!("CARGO_BIN_EXE_pfoe"))
        .args(["noise", "a.png", "b.png", "--peak", "1"])
        .env("PFOE_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
}

fn tiny_config(dir: &Path, iters: usize) -> PathBuf {
    let path = dir.join(format!("tiny{iters}.cfg"));
    fs::write(
        &path,
        format!(
            "n_samples = 3\ncrop = 16\nn_filters = 4\nfilter_size = 3\npeak = 20\nseed = 5\n\
             max_outer_iters = {iters}\nrel_loss_tol = 1e-12\n"
        ),
    )
    .unwrap();
    path
}

fn loss_column(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn train_lowers_the_loss_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 2);

    let full = dir.path().join("full.foe");
    let r = pfoe(&["train", p(&c), p(&full), "--config", p(&tiny_config(dir.path(), 3)), "--checkpoint-dir", p(&dir.path().join("ck_full"))]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let losses = loss_column(&dir.path().join("full.foe.loss.csv"));
    assert_eq!(losses.len(), 4);
    assert!(losses[3] < losses[0], "{losses:?}");
    assert_eq!(model_file::load(&full).unwrap().domain(), DomainTag::Anscombe);

    let part = dir.path().join("part.foe");
    let ck = dir.path().join("ck_part");
    pfoe(&["train", p(&c), p(&part), "--config", p(&tiny_config(dir.path(), 2)), "--checkpoint-dir", p(&ck)]);
    let resumed = dir.path().join("resumed.foe");
    let r = pfoe(&[
        "train",
        p(&c),
        p(&resumed),
        "--config",
        p(&tiny_config(dir.path(), 3)),
        "--resume",
        p(&ck.join("iter_00002.json")),
        "--checkpoint-dir",
        p(&dir.path().join("ck_resumed")),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(fs::read(&resumed).unwrap(), fs::read(&full).unwrap());

    // a checkpoint from another training set is refused
    let other = corpus(&dir.path().join("other"), 3);
    let r = pfoe(&["train", p(&other), p(&resumed), "--config", p(&tiny_config(dir.path(), 3)), "--resume", p(&ck.join("latest.json"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn train_rejects_empty_corpus_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = dir.path().join("m.foe");
    assert_eq!(code(&pfoe(&["train", p(&empty), p(&out)])), 2);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let c = corpus(dir.path(), 1);
    assert_eq!(code(&pfoe(&["train", p(&c), p(&out), "--config", p(&cfg)])), 2);
}

#[test]
fn eval_needs_a_model_and_reports_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    fs::create_dir_all(&imgs).unwrap();
    write_image(&imgs.join("cameraman.png"), &scene(24, 24, 1)).unwrap();
    write_image(&imgs.join("tiles.png"), &scene(24, 24, 4)).unwrap();
    let r = pfoe(&["eval", "--images", p(&imgs), "--peaks", "40"]);
    assert_ne!(code(&r), 0);

    let model = small_model(dir.path(), DomainTag::Anscombe);
    let csv = dir.path().join("r.csv");
    let md = dir.path().join("r.md");
    let r = pfoe(&[
        "eval", "--model", p(&model), "--images", p(&imgs), "--peaks", "40,1", "--variants", "transform",
        "--csv", p(&csv), "--markdown", p(&md),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 2 images x 2 peaks, plus one average row per peak
    assert_eq!(lines.len(), 1 + 4 + 2);
    let cam40 = lines.iter().find(|l| l.starts_with("cameraman,40,")).unwrap();
    assert!(cam40.contains(",28.93,"), "{cam40}");
    let tiles = lines.iter().find(|l| l.starts_with("tiles,40,")).unwrap();
    assert!(tiles.ends_with(",,,,"), "{tiles}");
    let md = fs::read_to_string(&md).unwrap();
    assert!(md.contains("FoEPNR") && md.contains("/ 28.93 ("), "{md}");
}
