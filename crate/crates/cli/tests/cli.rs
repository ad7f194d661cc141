use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn octsynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octsynth"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn octsynth")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = octsynth(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = octsynth(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Relative path -> contents of every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn phantoms(dir: &Path, out: &str) {
    ok(dir, &["phantom", "--seed", "7", "--n-train", "10", "--n-test", "4", "--out", out]);
}

#[test]
fn phantom_twice_gives_identical_directories() {
    let t = tempfile::tempdir().unwrap();
    phantoms(t.path(), "a");
    phantoms(t.path(), "b");
    let (a, b) = (snapshot(&t.path().join("a")), snapshot(&t.path().join("b")));
    assert_eq!(a, b);
    for f in ["manifest.tsv", "config.toml", "seeds.log"] {
        assert!(a.contains_key(Path::new(f)), "{f} missing");
    }
    assert!(!a.contains_key(Path::new(".lock")));
    assert_eq!(a.keys().filter(|k| k.extension().is_some_and(|e| e == "pgm")).count(), 28);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    phantoms(t.path(), "ph");
    ok(t.path(), &["eval", "--manifest", "ph/manifest.tsv", "--pred", "ph/manifest.tsv", "--out", "ev"]);
    let tsv = std::fs::read_to_string(t.path().join("ev/dice.tsv")).unwrap();
    let lines: Vec<_> = tsv.lines().collect();
    assert_eq!(lines[0], "image\tdice_rnfl\tdice_gcipl\tdice_cl\tdice_total");
    assert_eq!(lines.len(), 1 + 4 + 1);
    assert_eq!(*lines.last().unwrap(), "mean\t1.000000\t1.000000\t1.000000\t1.000000");
}

#[test]
fn full_pipeline_smoke_and_rerun() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let steps: &[&[&str]] = &[
        &["phantom", "--n-train", "12", "--n-test", "4", "--out", "ph"],
        &["fit-stats", "--manifest", "ph/manifest.tsv", "--n-labeled", "8", "--out", "st"],
        &["sketch", "--stats", "st/stats.tsv", "--n", "3", "--out", "sk"],
        &["hist", "--manifest", "ph/manifest.tsv", "--stats", "st/stats.tsv", "--out", "hi"],
        &["train-ddpm", "--manifest", "ph/manifest.tsv", "--steps", "6", "--out", "dd"],
        &["synth", "--stats", "st/stats.tsv", "--ddpm", "dd/ddpm.ck", "--n", "4", "--t-start", "8", "--out", "sy"],
        &["train-seg", "--manifest", "ph/manifest.tsv", "--preset", "teacher", "--epochs", "1", "--out", "te"],
        &[
            "distill", "--teacher", "te/seg.ck", "--synth", "sy/manifest.tsv", "--manifest", "ph/manifest.tsv",
            "--n-real", "4", "--n-synth", "4", "--out", "di",
        ],
        &["train-seg", "--manifest", "di/train.tsv", "--epochs", "1", "--out", "stu"],
        &["eval", "--manifest", "ph/manifest.tsv", "--model", "stu/seg.ck", "--out", "ev"],
        &["strip", "--manifest", "sy/manifest.tsv", "--n", "3", "--out", "strip"],
    ];
    for s in steps {
        let mut args = vec!["--jobs", "1", "--seed", "3"];
        args.extend_from_slice(s);
        ok(d, &args);
    }
    let tsv = std::fs::read_to_string(d.join("ev/dice.tsv")).unwrap();
    assert!(tsv.lines().last().unwrap().starts_with("mean\t"));
    assert_eq!(std::fs::read_to_string(d.join("hi/hist.tsv")).unwrap().lines().count(), 10);

    // Inputs are left untouched by downstream commands.
    let before = snapshot(&d.join("ph"));
    ok(d, &["--jobs", "1", "prepare", "--manifest", "ph/manifest.tsv", "--rows", "16", "--out", "pr"]);
    assert_eq!(snapshot(&d.join("ph")), before);

    // Each run directory regenerates bit-identically from its recorded config.
    for dir in ["ph", "dd", "sy", "te", "di", "stu", "ev"] {
        let again = format!("{dir}-again");
        ok(d, &["--jobs", "1", "rerun", dir, "--out", &again]);
        let (a, b) = (snapshot(&d.join(dir)), snapshot(&d.join(&again)));
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>(), "{dir}");
        for (k, v) in &a {
            assert!(v == &b[k], "{dir}/{} differs on rerun", k.display());
        }
    }
}

#[test]
fn experiment_writes_results_with_medians_and_resumes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["phantom", "--n-train", "8", "--n-test", "3", "--out", "ph"]);
    ok(d, &["fit-stats", "--manifest", "ph/manifest.tsv", "--n-labeled", "6", "--out", "st"]);
    ok(d, &["train-ddpm", "--manifest", "ph/manifest.tsv", "--steps", "4", "--out", "dd"]);
    ok(d, &["train-seg", "--manifest", "ph/manifest.tsv", "--epochs", "1", "--out", "te"]);
    std::fs::write(
        d.join("exp.toml"),
        "[inputs]\nmanifest = \"ph/manifest.tsv\"\nstats = \"st/stats.tsv\"\nddpm = \"dd/ddpm.ck\"\n\
         teacher = \"te/seg.ck\"\n[synth]\nt_start = 4\n[seg]\nepochs = 1\n\
         [experiment]\nratios = [[4, 0], [4, 2]]\nseeds = [0, 1, 2]\n",
    )
    .unwrap();
    ok(d, &["--config", "exp.toml", "--jobs", "1", "experiment", "--out", "ex"]);
    let first = std::fs::read(d.join("ex/results.tsv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert!(lines[0].starts_with("n_real\tn_synth\tt_start"));
    assert_eq!(lines.len(), 1 + 6 + 2);
    assert_eq!(lines.iter().filter(|l| l.contains("\tmedian\t")).count(), 2);

    let (code, err) = fails(d, &["--config", "exp.toml", "experiment", "--out", "ex"]);
    assert_eq!((code, err.starts_with("error: usage:")), (2, true), "{err}");

    let ledger = d.join("ex/work/ledger");
    let victim = std::fs::read_dir(&ledger).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(victim).unwrap();
    ok(d, &["--config", "exp.toml", "--jobs", "1", "experiment", "--out", "ex", "--resume"]);
    assert_eq!(std::fs::read(d.join("ex/results.tsv")).unwrap(), first);
}

#[test]
fn exit_codes_and_error_lines() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    phantoms(d, "ph");

    let (code, _) = fails(d, &["eval", "--bogus"]);
    assert_eq!(code, 2);
    let (code, _) = fails(d, &["no-such-command"]);
    assert_eq!(code, 2);

    let (code, err) = fails(d, &["eval", "--manifest", "nope.tsv", "--pred", "nope.tsv", "--out", "e"]);
    assert_eq!(code, 3);
    assert!(err.starts_with("error: missing-artifact:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let (code, err) = fails(d, &["train-seg", "--manifest", "ph/manifest.tsv"]);
    assert_eq!(code, 2);
    assert!(err.contains("--out"), "{err}");

    std::fs::write(d.join("bad.toml"), "[ddpm]\nstepz = 3\n").unwrap();
    let (code, err) = fails(d, &["--config", "bad.toml", "phantom", "--out", "p"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error: usage:") && err.contains("stepz"), "{err}");

    std::fs::write(d.join("div.toml"), "[seg]\nlr = 1e30\n").unwrap();
    let (code, err) = fails(d, &["--config", "div.toml", "train-seg", "--manifest", "ph/manifest.tsv", "--out", "dv"]);
    assert_eq!(code, 4);
    assert!(err.starts_with("error: numerical:"), "{err}");

    let (code, _) = fails(d, &["phantom", "--n-train", "2"]);
    assert_eq!(code, 2);
}

#[test]
fn lock_file_excludes_concurrent_runs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    std::fs::create_dir(d.join("busy")).unwrap();
    std::fs::write(d.join("busy/.lock"), "").unwrap();
    let (code, err) = fails(d, &["phantom", "--n-train", "2", "--n-test", "0", "--out", "busy", "--resume"]);
    assert_ne!(code, 0);
    assert!(err.starts_with("error: locked:"), "{err}");
    assert!(d.join("busy/.lock").exists(), "foreign lock must survive");
    std::fs::remove_file(d.join("busy/.lock")).unwrap();
    ok(d, &["phantom", "--n-train", "2", "--n-test", "0", "--out", "busy", "--resume"]);
    assert!(!d.join("busy/.lock").exists());
}
