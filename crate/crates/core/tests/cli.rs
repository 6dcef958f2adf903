use std::path::Path;
use std::process::{Command, Output, Stdio};

fn eendrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eendrc"))
        .args(args)
        .env_remove("EENDRC_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = eendrc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn single_line_error(args: &[&str]) -> String {
    let out = eendrc(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn write_config(path: &Path, data: &Path, out: &Path, extra: &str) {
    let text = format!(
        "num_layers = 1\nhidden_dim = 8\nnum_heads = 2\nff_dim = 16\nchunk_size = 10\n\
         epochs = 1\nbatch_size = 2\nwarmup_steps = 10\nwindow_frames = 40\n\
         data_dir = {:?}\nout_dir = {:?}\n{extra}",
        data, out
    );
    std::fs::write(path, text).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_train_infer_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let stdout = ok(&[
        "simulate",
        "--corpus",
        "synthetic:6:1",
        "--n-speakers",
        "2",
        "--count",
        "3",
        "--seed",
        "4",
        "--out",
        p(&data),
    ]);
    assert!(stdout.contains("wrote 3 mixtures"));
    let list = std::fs::read_to_string(data.join("mixtures.list")).unwrap();
    let first = list.lines().next().unwrap().to_string();

    let predictor = dir.path().join("predictor");
    let cfg = dir.path().join("predictor.toml");
    write_config(&cfg, &data, &predictor, "");
    let stdout = ok(&["train-predictor", "--config", p(&cfg)]);
    assert!(stdout.contains("epoch   1"));
    let init = predictor.join("averaged.safetensors");
    assert!(init.exists());
    assert!(predictor.join("manifest.json").exists());

    let clustering = dir.path().join("clustering");
    let cfg = dir.path().join("clustering.toml");
    write_config(&cfg, &data, &clustering, "schedule = \"fixed\"\nlearning_rate = 1e-3\n");
    ok(&["train-clustering", "--config", p(&cfg), "--init", p(&init)]);
    let ckpt = clustering.join("averaged.safetensors");

    let wav = data.join(format!("{first}.wav"));
    let reference = data.join(format!("{first}.rttm"));
    let mut outputs = Vec::new();
    for (mode, name) in [
        ("eda-rc", "a"),
        ("eda-rc", "b"),
        ("cop-kmeans", "c"),
        ("oracle", "d"),
        ("switch", "e"),
    ] {
        let hyp = dir.path().join(format!("{name}.rttm"));
        ok(&[
            "infer",
            "--mode",
            mode,
            "--beam",
            "2",
            "--ckpt",
            p(&ckpt),
            "--wav",
            p(&wav),
            "--out",
            p(&hyp),
            "--ref",
            p(&reference),
        ]);
        let score = ok(&["score", "--ref", p(&reference), "--hyp", p(&hyp), "--collar", "0.25"]);
        assert!(score.starts_with("DER "), "{score}");
        outputs.push(std::fs::read(&hyp).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let table = ok(&[
        "ablate",
        "--shuffle",
        "0,50",
        "--beam",
        "1,2",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&data),
    ]);
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.starts_with("model\tshuffled_ratio(%)\tbeam\tDER(%)"));

    let averaged = dir.path().join("avg.safetensors");
    ok(&["average", "--ckpt", p(&init), "--ckpt", p(&init), "--out", p(&averaged)]);
    assert!(averaged.exists());
}

#[test]
fn simulation_is_seeded_by_flag_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_eendrc"));
        cmd.args([
            "simulate",
            "--corpus",
            "synthetic:5",
            "--n-speakers",
            "2",
            "--count",
            "1",
            "--seed",
            seed,
        ])
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .env_remove("EENDRC_SEED");
        if let Some(v) = env {
            cmd.env("EENDRC_SEED", v);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read(out.join("mix2spk_00000.rttm")).unwrap()
    };
    assert_eq!(run("a", "7", None), run("b", "7", None));
    assert_ne!(run("c", "7", None), run("d", "8", None));
    assert_eq!(run("e", "1", Some("7")), run("f", "7", None));
}

#[test]
fn errors_are_single_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.rttm");
    let err = single_line_error(&["score", "--ref", p(&missing), "--hyp", p(&missing)]);
    assert!(
        err.starts_with("error: io:") || err.starts_with("error: data:"),
        "{err}"
    );

    let err = single_line_error(&["infer", "--mode", "nonsense", "--ckpt", "x", "--wav", "y", "--out", "z"]);
    assert!(err.contains("unknown mode"), "{err}");

    let err = single_line_error(&[
        "simulate",
        "--corpus",
        "synthetic:x",
        "--n-speakers",
        "2",
        "--count",
        "1",
        "--out",
        "o",
    ]);
    assert!(err.contains("corpus"), "{err}");

    single_line_error(&["train-predictor"]);
    single_line_error(&["bogus"]);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "epochs = 1\nunknown_key = 3\n").unwrap();
    let err = single_line_error(&["train-predictor", "--config", p(&cfg)]);
    assert!(err.starts_with("error: config:"), "{err}");
}
