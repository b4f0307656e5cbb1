use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ierd_cli::{RunConfig, RESOLVED_CONFIG_FILE, REPORT_FILE};
use ierd_core::checkpoint::Checkpoint;
use ierd_core::data::{load_image, save_image, ImagePlane};
use ierd_core::network::{NetworkConfig, ParamStore};

fn ierd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ierd"))
        .args(args)
        .env("IERD_LOG", "warn")
        .env_remove("IERD_STEPS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn scene(i: usize, h: usize, w: usize) -> ImagePlane {
    let data = (0..h * w)
        .map(|p| {
            let (y, x) = (p / w, p % w);
            let v = if (y / 6 + x / 5 + i) % 2 == 0 { 60 + i * 7 } else { 190 - i * 5 };
            v as f32 / 255.0
        })
        .collect();
    ImagePlane::new(1, h, w, data).unwrap()
}

fn image_dir(root: &Path, name: &str, count: usize) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..count {
        save_image(&scene(i, 24 + i, 30), dir.join(format!("img{i}.png"))).unwrap();
    }
    dir
}

fn identity_checkpoint(root: &Path) -> PathBuf {
    let path = root.join("identity.ierd");
    let store = ParamStore::<f32>::identity(&NetworkConfig::new(1, 2, 4, 1)).unwrap();
    Checkpoint::new(store, None, 0).save(&path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 12] = [
    "--modules", "1", "--layers", "2", "--channels", "4", "--patch", "16", "--batch", "2", "--steps", "3",
];

#[test]
fn train_writes_checkpoint_metrics_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 3);
    let out = tmp.path().join("run");
    let mut args = vec!["train", "--sigma", "25", "--dataset", s(&data), "--out", s(&out)];
    args.extend(TINY);
    let res = ierd(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(stdout(&res).contains("trained to step 3"));
    assert!(out.join("checkpoint.ierd").is_file());
    let metrics = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let cfg = RunConfig::load(&out.join(RESOLVED_CONFIG_FILE)).unwrap();
    assert_eq!(cfg.train.steps, 3);
    assert_eq!(cfg.noise.sigma, 25.0);
    assert_eq!(cfg.paths.dataset.as_deref(), Some(data.as_path()));
    assert_eq!(Checkpoint::load(out.join("checkpoint.ierd")).unwrap().step, 3);
}

#[test]
fn missing_dataset_names_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let res = ierd(&["train", "--dataset", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert!(!res.status.success());
    let err = stderr(&res);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[usage]: --dataset"), "{err}");
}

#[test]
fn invalid_values_name_their_field() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 1);
    let res = ierd(&["train", "--dataset", s(&data), "--out", s(&tmp.path().join("o")), "--layers", "1"]);
    assert_eq!(res.status.code(), Some(1));
    let err = stderr(&res);
    assert!(err.starts_with("error[config]: invalid layers"), "{err}");
    let res = ierd(&["train", "--dataset", s(&data), "--out", s(&tmp.path().join("o")), "--threads", "0"]);
    assert!(stderr(&res).contains("--threads"));
}

#[test]
fn noise_agnostic_flag_selects_the_range() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 2);
    let out = tmp.path().join("run");
    let mut args = vec!["train", "--noise-agnostic", "0:55", "--dataset", s(&data), "--out", s(&out)];
    args.extend(TINY);
    let res = ierd(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = std::fs::read_to_string(out.join(RESOLVED_CONFIG_FILE)).unwrap();
    assert!(text.contains("regime = \"agnostic\""), "{text}");
    let cfg = RunConfig::from_toml(&text, Path::new("x")).unwrap();
    assert_eq!((cfg.noise.sigma_min, cfg.noise.sigma_max), (0.0, 55.0));
}

#[test]
fn flags_override_environment_which_overrides_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 2);
    let file = tmp.path().join("run.toml");
    std::fs::write(
        &file,
        format!(
            "seed = 9\n[network]\nmodules = 1\nlayers = 2\nchannels = 2\n[train]\nsteps = 2\nbatch = 1\npatch = 8\n[paths]\ndataset = \"{}\"\n",
            s(&data)
        ),
    )
    .unwrap();
    let run = |extra_env: Option<&str>, extra_args: &[&str], out: &Path| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ierd"));
        cmd.args(["train", "--config", s(&file), "--out", s(out)]).args(extra_args).env("IERD_LOG", "warn");
        match extra_env {
            Some(v) => cmd.env("IERD_STEPS", v),
            None => cmd.env_remove("IERD_STEPS"),
        };
        let res = cmd.output().unwrap();
        assert!(res.status.success(), "{}", stderr(&res));
        RunConfig::load(&out.join(RESOLVED_CONFIG_FILE)).unwrap()
    };
    let from_file = run(None, &[], &tmp.path().join("a"));
    assert_eq!((from_file.train.steps, from_file.seed, from_file.network.channels), (2, 9, 2));
    assert_eq!(run(Some("3"), &[], &tmp.path().join("b")).train.steps, 3);
    assert_eq!(run(Some("3"), &["--steps", "1"], &tmp.path().join("c")).train.steps, 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.toml");
    std::fs::write(&file, "[train]\nstepz = 3\n").unwrap();
    let res = ierd(&["train", "--config", s(&file)]);
    assert_eq!(res.status.code(), Some(2));
    let err = stderr(&res);
    assert!(err.starts_with("error[config]:") && err.contains("stepz"), "{err}");
}

#[test]
fn denoise_single_file_keeps_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 1);
    let ck = identity_checkpoint(tmp.path());
    let out = tmp.path().join("out");
    let input = data.join("img0.png");
    let res = ierd(&["denoise", "--checkpoint", s(&ck), "--input", s(&input), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let (a, b) = (load_image(&input).unwrap(), load_image(out.join("img0.png")).unwrap());
    assert_eq!((b.channels(), b.height(), b.width()), (a.channels(), a.height(), a.width()));
    assert!(out.join(RESOLVED_CONFIG_FILE).is_file());
}

#[test]
fn ensemble_on_identity_checkpoint_returns_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 1);
    let ck = identity_checkpoint(tmp.path());
    let out = tmp.path().join("out");
    let input = data.join("img0.png");
    let res = ierd(&["denoise", "--ensemble", "--checkpoint", s(&ck), "--input", s(&input), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(load_image(out.join("img0.png")).unwrap(), load_image(&input).unwrap().clamped());
}

#[test]
fn denoise_directory_reports_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 5);
    let ck = identity_checkpoint(tmp.path());
    let out = tmp.path().join("out");
    let res = ierd(&["denoise", "--checkpoint", s(&ck), "--input", s(&data), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(stdout(&res).contains("denoised 5 of 5 images"), "{}", stdout(&res));
    for i in 0..5 {
        assert!(out.join(format!("img{i}.png")).is_file());
    }
}

#[test]
fn denoise_continues_past_a_broken_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "data", 3);
    std::fs::write(data.join("broken.png"), b"not a png").unwrap();
    let ck = identity_checkpoint(tmp.path());
    let out = tmp.path().join("out");
    let res = ierd(&["denoise", "--checkpoint", s(&ck), "--input", s(&data), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stdout(&res).contains("denoised 3 of 4 images"), "{}", stdout(&res));
    assert!(stderr(&res).lines().last().unwrap().starts_with("error[image]: 1 of 4"), "{}", stderr(&res));
    assert_eq!(std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count(), 3);
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let res = ierd(&["eval", "--clean", s(tmp.path())]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).starts_with("error[usage]: --checkpoint"));
    let junk = tmp.path().join("junk.ierd");
    std::fs::write(&junk, b"garbage").unwrap();
    let res = ierd(&["eval", "--checkpoint", s(&junk), "--clean", s(tmp.path())]);
    assert!(stderr(&res).starts_with("error[checkpoint]:"), "{}", stderr(&res));
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn eval_is_deterministic_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = image_dir(tmp.path(), "clean", 4);
    let ck = identity_checkpoint(tmp.path());
    let run = |out: &Path| {
        let res = ierd(&["eval", "--checkpoint", s(&ck), "--clean", s(&data), "--sigma", "25", "--seed", "3", "--out", s(out)]);
        assert!(res.status.success(), "{}", stderr(&res));
        (stdout(&res), std::fs::read_to_string(out.join(REPORT_FILE)).unwrap())
    };
    let (table, csv) = run(&tmp.path().join("a"));
    let (_, again) = run(&tmp.path().join("b"));
    assert_eq!(csv, again);
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        // identity network: only clamping separates denoised from noisy
        assert!(r[1] >= r[0] && r[1] - r[0] < 1.5, "{r:?}");
    }
    let mean_denoised = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len() as f64;
    let mean_line = table.lines().find(|l| l.starts_with("mean")).unwrap();
    let shown: f64 = mean_line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((shown - mean_denoised).abs() < 1e-4, "{shown} vs {mean_denoised}");
}
