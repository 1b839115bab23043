use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bimangen::dataset::Manifest;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bimangen")).current_dir(dir).args(args).output().expect("spawn bimangen")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

/// Small fixture project with a 64 px control size.
fn project() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("proj");
    let o = bin(tmp.path(), &["fixtures", "proj", "--len", "10", "--width", "80", "--height", "60", "--demos", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let cfg = dir.join("bimangen.toml");
    let s = std::fs::read_to_string(&cfg).unwrap().replace("out_size = 512", "out_size = 64");
    std::fs::write(&cfg, s).unwrap();
    (tmp, dir)
}

#[test]
fn build_verify_preview_merge() {
    let (_tmp, dir) = project();
    let o = bin(&dir, &["build", "--mock", "--count", "1", "--recipes", "object_pose,background,camera_view"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let m = Manifest::load(&dir.join("out")).unwrap();
    assert_eq!(m.len(), 3);
    assert!(dir.join("out/build_report.json").is_file());

    // a second build into the same root is refused
    let o = bin(&dir, &["build", "--mock", "--count", "1"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("manifest"));

    let o = bin(&dir, &["verify"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains(&m.digest().to_string()));

    let o = bin(&dir, &["preview", "background-00000", "--every", "3"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("T = 10"));
    assert!(dir.join("out/previews/background-00000.png").is_file());
    let o = bin(&dir, &["preview", "no-such-episode"]);
    assert_eq!(code(&o), 2);

    let real = dir.join("real");
    std::fs::create_dir_all(&real).unwrap();
    for e in std::fs::read_dir(dir.join("demos")).unwrap() {
        let src = e.unwrap().path();
        let dst = real.join(src.file_name().unwrap());
        std::fs::create_dir_all(&dst).unwrap();
        copy_tree(&src, &dst);
    }
    let o = bin(&dir, &["merge", "--real", "real"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(Manifest::load(&real).unwrap().len(), 5);
    let o = bin(&dir, &["merge", "--real", "real"]);
    assert_eq!(code(&o), 2);
}

fn copy_tree(src: &Path, dst: &Path) {
    for e in std::fs::read_dir(src).unwrap() {
        let p = e.unwrap().path();
        let q = dst.join(p.file_name().unwrap());
        if p.is_dir() {
            std::fs::create_dir_all(&q).unwrap();
            copy_tree(&p, &q);
        } else {
            std::fs::copy(&p, &q).unwrap();
        }
    }
}

#[test]
fn stage_commands_write_their_outputs() {
    let (_tmp, dir) = project();
    let o = bin(&dir, &["expand", "--count", "3"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("out/expand_report.json")).unwrap()).unwrap();
    assert_eq!(report["accepted"], 3);
    assert_eq!(std::fs::read_dir(dir.join("out/candidates")).unwrap().count(), 3);

    let o = bin(&dir, &["retarget", "--target", "bimanual_B"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.join("out/retargeted/lift_pot_000-bimanual_B/episode.json").is_file());

    let o = bin(&dir, &["edges", "--demo", "lift_pot_001"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.join("out/edges/lift_pot_001/third_person").is_dir());
    assert!(!dir.join("out/edges/lift_pot_000").exists());

    let o = bin(&dir, &["tile", "--views", "third_person,left_wrist"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.join("out/tiles/lift_pot_000/tiling.json").is_file());

    let o = bin(&dir, &["generate", "--mock", "--count", "1", "--recipes", "lighting,object_color"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.join("out/generated/lighting-00000").is_dir());
    assert!(dir.join("out/generated/object_color-00000").is_dir());
}

#[test]
fn config_errors_exit_with_two() {
    let (_tmp, dir) = project();
    assert_eq!(code(&bin(&dir, &["verify", "--config", "missing.toml"])), 2);
    assert_eq!(code(&bin(&dir, &["build", "--recipes", "teleport"])), 2);
    assert_eq!(code(&bin(&dir, &["edges", "--demo", "nope"])), 2);
    assert_eq!(code(&bin(&dir, &["tile", "--views", "a,b,c,d,e"])), 2);
    std::fs::write(dir.join("bad.toml"), "seed = \"x\"").unwrap();
    assert_eq!(code(&bin(&dir, &["build", "--config", "bad.toml"])), 2);
    assert_eq!(code(&bin(&dir, &["build", "--mock", "--endpoint", "http://127.0.0.1:1"])), 2);
}

#[test]
fn unreachable_service_is_a_runtime_failure() {
    let (_tmp, dir) = project();
    let cfg = dir.join("bimangen.toml");
    let s = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(
        &cfg,
        s.replace("backoff_ms = 1000", "backoff_ms = 10").replace("timeout_ms = 120000", "timeout_ms = 2000"),
    )
    .unwrap();
    let o = bin(&dir, &["generate", "--endpoint", "http://127.0.0.1:9", "--count", "1", "--recipes", "background"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("background-00000"));
}
