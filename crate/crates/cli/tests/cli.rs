use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use microvoc::image::encode_ppm;
use microvoc::Tensor4;

fn microvoc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microvoc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Bar image: horizontal (label 0) or vertical (label 1) bright stripe at `pos`.
fn bar(vertical: bool, pos: usize, size: usize) -> Tensor4 {
    let mut img = Tensor4::new((1, 3, size, size), 0.1).unwrap();
    for c in 0..3 {
        for k in 0..size {
            for t in pos..pos + 2 {
                let (y, x) = if vertical { (k, t) } else { (t, k) };
                img.set(0, c, y, x, 0.9).unwrap();
            }
        }
    }
    img
}

/// Writes `n` bar images and a manifest; returns the manifest path.
fn corpus(dir: &Path, n: usize) -> PathBuf {
    let mut manifest = String::from("#microvoc-manifest v1\n");
    for i in 0..n {
        let vertical = i % 2 == 1;
        let name = format!("img{i:03}.ppm");
        let pos = 2 + (i / 2) % 11;
        std::fs::write(dir.join(&name), encode_ppm(&bar(vertical, pos, 16)).unwrap()).unwrap();
        let label = if vertical { "vertical" } else { "horizontal" };
        manifest.push_str(&format!("{name}\t{label}\n"));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn write_config(dir: &Path, name: &str, out: &str, extra: &str) -> PathBuf {
    let text = format!(
        "arch = IMG-(Conv4-ReLU-MaxPool)-(FC8-ReLU-FC2)-Softmax\nmanifest = manifest.txt\noutput_dir = {out}\n\
         classes = horizontal,vertical\nimage_size = 16\nbatch_size = 8\neval_every = 20\nseed = 4\n{extra}"
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn inspect_m1() {
    let o = microvoc(&["inspect", "--arch", "IMG-(Conv64-ReLU)-(FC1024-ReLU-FC20)-Softmax"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("(64x128x128)"), "{s}");
    assert!(s.contains("output (20)"), "{s}");
    assert!(s.contains("total parameters: 1073765140"), "{s}");
}

#[test]
fn inspect_with_input_and_errors() {
    let o = microvoc(&["inspect", "--arch", "IMG-(Conv2-ReLU-MaxPool)-(FC3)-Softmax", "--input", "3x8x8"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("total parameters: 155"));
    assert_eq!(microvoc(&["inspect", "--arch", "IMG-Conv64-Foo"]).status.code(), Some(1));
    assert_eq!(microvoc(&["inspect", "--arch", "IMG-(MaxPool)", "--input", "3x5x5"]).status.code(), Some(1));
    assert_eq!(microvoc(&["inspect", "--arch", "IMG-(FC2)", "--input", "3x5"]).status.code(), Some(1));
}

#[test]
fn usage_exit_codes() {
    assert_eq!(microvoc(&[]).status.code(), Some(1));
    assert_eq!(microvoc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(microvoc(&["--help"]).status.code(), Some(0));
    assert_eq!(microvoc(&["gradcheck", "--layer", "bogus"]).status.code(), Some(1));
    assert_eq!(microvoc(&["train", "--config", "/nonexistent/run.cfg"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = microvoc(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let s = stdout(&o);
    assert!(s.contains("failed=0"));
    assert!(!s.contains("FAIL "));
    let o = microvoc(&["gradcheck", "--layer", "lrn"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS lrn") || l.starts_with("checks=")));
}

#[test]
fn train_eval_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 40);
    let cfg = write_config(dir.path(), "run.cfg", "out", "max_iterations = 200\nlambda = 0\nalpha = 1e-3\n");
    let o = microvoc(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 10);
    for l in &lines {
        let keys: Vec<&str> = l.split(' ').map(|kv| kv.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["iter", "loss", "train_acc", "val_acc", "alpha"], "{l}");
    }
    let out = dir.path().join("out");
    let csv = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert!(csv.starts_with("iteration,loss,train_acc,val_acc,alpha\n20,"));
    assert_eq!(csv.lines().count(), 11);
    let stats = std::fs::read_to_string(out.join("dataset-stats.txt")).unwrap();
    assert_eq!(stats.lines().filter(|l| l.starts_with("train\t")).count(), 24);

    let ckpt = out.join("latest.ckpt");
    let o = microvoc(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", dir.path().join("manifest.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let acc: f64 = stdout(&o).trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!(acc >= 0.9, "accuracy {acc}");

    for (img, label) in [("img004.ppm", "horizontal"), ("img007.ppm", "vertical")] {
        let o = microvoc(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--image", dir.path().join(img).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let s = stdout(&o);
        let first: Vec<&str> = s.lines().next().unwrap().split(' ').collect();
        assert_eq!(first[0], "1");
        assert_eq!(first[1], label, "{s}");
        // Only two classes exist, so only two ranks are printed.
        assert_eq!(s.lines().count(), 2);
    }
}

#[test]
fn resume_matches_uninterrupted_and_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 30);
    let full = write_config(dir.path(), "full.cfg", "full", "max_iterations = 80\n");
    let again = write_config(dir.path(), "again.cfg", "again", "max_iterations = 80\n");
    let part = write_config(dir.path(), "part.cfg", "part", "max_iterations = 40\n");
    let resume = write_config(dir.path(), "resume.cfg", "part", "max_iterations = 80\nresume = part/latest.ckpt\n");
    for cfg in [&full, &again, &part, &resume] {
        let o = microvoc(&["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("full", "history.csv"), read("again", "history.csv"));
    assert_eq!(read("full", "history.csv"), read("part", "history.csv"));
    assert_eq!(read("full", "latest.ckpt"), read("part", "latest.ckpt"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 10);
    std::fs::write(dir.path().join("noheader.txt"), "img000.ppm\thorizontal\n").unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "out", "max_iterations = 5\n")
        .to_str()
        .unwrap()
        .to_string();
    let text = std::fs::read_to_string(&cfg).unwrap().replace("manifest.txt", "noheader.txt");
    std::fs::write(&cfg, text).unwrap();
    let o = microvoc(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"MVOCCKPT\x01\x00").unwrap();
    let o = microvoc(&["predict", "--checkpoint", junk.to_str().unwrap(), "--image", dir.path().join("img000.ppm").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 10);
    let cfg = write_config(dir.path(), "bad.cfg", "out", "learning_rate = 3\n");
    let o = microvoc(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key 'learning_rate'"));
}
