use std::process::Command;

fn lab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contraction-lab"));
    c.env_remove("CONTRACTION_LAB_OUT");
    c
}

#[test]
fn passing_run_exits_zero_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.cfg");
    std::fs::write(&cfg, "n_grid = 500\nreplicates = 4\ngram.j = 10\n").unwrap();
    let out = dir.path().join("out");
    let o = lab()
        .args(["gram-conc", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.trim_end().ends_with("gram_conc: PASS"));
    for ext in ["csv", "json", "tsv"] {
        assert!(out.join(format!("gram_conc.{ext}")).is_file());
    }
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("g.cfg");
    // at n = 30 the smallest Gram eigenvalue almost never reaches 0.999
    std::fs::write(&cfg, "n_grid = 30\nreplicates = 4\ngram.j = 10\ngram.kappa = 0.999\n").unwrap();
    let o = lab()
        .args(["gram-conc", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gram_conc: FAIL"));
}

#[test]
fn config_errors_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = x\nbogus = 1\ngraph.tau = 0.5\n").unwrap();
    let o = lab().args(["gp-rate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seed"), "{err}");
    assert!(err.contains("bogus"), "{err}");
    assert!(err.contains("graph.tau"), "{err}");
    assert!(!dir.path().join("results").exists());
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v.cfg");
    std::fs::write(&cfg, "n_grid = 50\nreplicates = 1\nvariance.quadrature = 256\n").unwrap();
    let target = dir.path().join("from-env");
    let o = lab()
        .current_dir(dir.path())
        .env("CONTRACTION_LAB_OUT", &target)
        .args(["variance-identity", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.code().is_some_and(|c| c <= 1));
    assert!(target.join("variance_identity.json").is_file());
    assert!(!dir.path().join("results").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("n.cfg");
    std::fs::write(&cfg, "seed = 1\nn_grid = 100\nreplicates = 5\ngram.population = 300\n").unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        lab()
            .args(["gram-noreplace", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        std::fs::read(out.join("gram_noreplace.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "c"), run("2", "d"));
}
