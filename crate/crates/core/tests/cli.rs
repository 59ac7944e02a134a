use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coupled_waveguides::config::RunConfig;
use coupled_waveguides::output::split_metadata;

fn cwg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cwg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("test.conf");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn shipped_configs_parse_and_default_matches_builtin() {
    for name in ["default.conf", "harmonic.conf", "evanescent.conf"] {
        let cfg = RunConfig::load(&configs_dir().join(name)).unwrap();
        cfg.validate().unwrap();
    }
    let shipped = RunConfig::load(&configs_dir().join("default.conf")).unwrap();
    assert_eq!(shipped.to_text(), RunConfig::default().to_text());
}

#[test]
fn harmonic_levels_are_half_integers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("harmonic.conf");
    let out = dir.path().join("run");
    let o = cwg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "eigs",
        "--levels",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (meta, body) = split_metadata(&fs::read_to_string(out.join("levels.csv")).unwrap());
    assert_eq!(meta[0].0, "hbar_omega0_J");
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let ratios: Vec<f64> = r
        .records()
        .map(|rec| rec.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 4);
    for (n, x) in ratios.iter().enumerate() {
        let exact = n as f64 + 0.5;
        assert!((x - exact).abs() / exact < 1e-4, "level {n}: {x}");
    }
    assert!(!out.join(".lock").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let even = write_config(dir.path(), "grid.n_points = 2000\n");
    let o = cwg(&["--config", &even, "--out", out.to_str().unwrap(), "eigs"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_points"));

    let unknown = write_config(dir.path(), "grid.points = 11\n");
    assert_eq!(
        code(&cwg(&[
            "--config",
            &unknown,
            "--out",
            out.to_str().unwrap(),
            "eigs"
        ])),
        2
    );

    let no_unit = write_config(dir.path(), "potential.mass = 1e-39\n");
    let o = cwg(&["--config", &no_unit, "--out", out.to_str().unwrap(), "eigs"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mass_kg"));

    let missing = dir.path().join("absent.conf");
    assert_eq!(
        code(&cwg(&[
            "--config",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "eigs"
        ])),
        2
    );
}

#[test]
fn busy_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".lock"), "1\n").unwrap();
    let o = cwg(&["--out", dir.path().to_str().unwrap(), "eigs"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("in use"));
}

#[test]
fn regime_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let at_threshold = write_config(
        dir.path(),
        "longitudinal.step_height_J = 1e-23\nlongitudinal.beam_energy_J = 1e-23\n",
    );
    for regime in ["evanescent", "oscillating"] {
        let o = cwg(&[
            "--config",
            &at_threshold,
            "--out",
            out.to_str().unwrap(),
            "xprofile",
            "--regime",
            regime,
        ]);
        assert_eq!(code(&o), 2, "{regime}");
        assert!(!out.join("xprofile.csv").exists());
    }
    let ev = configs_dir().join("evanescent.conf");
    let o = cwg(&[
        "--config",
        ev.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "xprofile",
        "--regime",
        "oscillating",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evanescent_profile_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let ev = configs_dir().join("evanescent.conf");
    let o = cwg(&[
        "--config",
        ev.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "xprofile",
        "--regime",
        "evanescent",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (meta, body) = split_metadata(&fs::read_to_string(out.join("xprofile.csv")).unwrap());
    let get = |k: &str| {
        meta.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .unwrap()
    };
    assert_eq!(get("configured_detuning_J").parse::<f64>().unwrap(), -5e-24);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (x, m, a) = (col("x"), col("psi_m_sq"), col("psi_a_sq"));
    let k2: f64 = get("k2_im_per_um").parse().unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        let env = (-2.0 * k2 * f(x)).exp();
        assert!((f(m) + f(a) - env).abs() <= 1e-13 * env);
    }
}

#[test]
fn failing_invariant_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let strict = write_config(dir.path(), "numerics.tol_identity = 1e-15\n");
    let o = cwg(&["--config", &strict, "--out", out.to_str().unwrap(), "check"]);
    assert_eq!(code(&o), 4);
    let mut r = csv::Reader::from_path(out.join("check.csv")).unwrap();
    let fails: Vec<String> = r
        .records()
        .map(|rec| rec.unwrap())
        .filter(|rec| &rec[2] == "fail")
        .map(|rec| rec[1].to_string())
        .collect();
    assert_eq!(fails, vec!["phase_gradient_identity".to_string()]);
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "numerics.n_traj = 200\nnumerics.record_every = 200\n",
    );
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        for cmd in [
            &["eigs"][..],
            &["populations"],
            &["phasemap", "--t-samples", "9"],
            &["trajectories"],
        ] {
            let mut args = vec![
                "--config",
                &cfg,
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap(),
            ];
            args.extend_from_slice(cmd);
            let o = cwg(&args);
            assert_eq!(
                code(&o),
                0,
                "{cmd:?}: {}",
                String::from_utf8_lossy(&o.stderr)
            );
        }
        out
    };
    let a = run("a", "7");
    let b = run("b", "7");
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for f in [
        "eigs.csv",
        "populations.csv",
        "phasemap.csv",
        "trajectories.csv",
        "run_metadata",
        "config.conf",
    ] {
        assert!(names.iter().any(|n| n == f), "{f} missing");
    }
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n} differs"
        );
    }
    let c = run("c", "8");
    assert_ne!(
        fs::read(a.join("trajectories.csv")).unwrap(),
        fs::read(c.join("trajectories.csv")).unwrap()
    );
    assert!(fs::read_to_string(c.join("run_metadata"))
        .unwrap()
        .contains("seed = 8"));
}
