use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamflow"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("streamflow-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn with_config(body: &str, name: &str) -> PathBuf {
    let path = scratch(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_with_defaults_passes() {
    let o = bin().arg("verify").output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("PASS").count(), 3, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_in_single_precision() {
    let cfg = with_config("[schedule]\nprecision = \"f32\"\n", "f32.toml");
    let o = bin().arg("verify").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn too_many_steps_for_the_grid_is_a_parameter_error() {
    let cfg = with_config("[schedule]\ninference_steps = 4\n[pipeline]\nn = 8\n", "long_n.toml");
    let o = bin().arg("verify").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pipeline.n"), "{}", stderr(&o));
}

#[test]
fn negative_eps_names_the_key() {
    let cfg = with_config("[schedule]\neps = -1e-6\n", "neg_eps.toml");
    let o = bin().arg("verify").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule.eps"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let cfg = with_config("[pipeline]\nbogus = 1\n", "unknown.toml");
    let o = bin().arg("verify").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_two() {
    let o = bin().args(["verify", "--config", "/nonexistent/streamflow.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_single_image_writes_one_row() {
    let out = scratch("one.csv");
    let o = bin()
        .args(["generate", "--num-images", "1", "--steps", "4", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "id,dim,values...");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[0], "0");
    assert_eq!(fields[1], "16");
    assert_eq!(fields.len(), 18);
    for v in &fields[2..] {
        assert!(v.parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn generate_binary_layout() {
    let out = scratch("three.bin");
    let o = bin()
        .args(["generate", "--num-images", "3", "--steps", "2", "--engine", "compiled", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(&bytes[..4], b"SFLT");
    let u = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    assert_eq!(u(4), 3);
    assert_eq!(u(12), 16);
    assert_eq!(bytes.len(), 20 + 3 * (8 + 16 * 8));
    assert_eq!(u(20), 0);
}

#[test]
fn generate_is_reproducible() {
    let run = |name: &str| {
        let out = scratch(name);
        let o = bin()
            .args(["generate", "--num-images", "5", "--steps", "4", "--seed", "7", "--guidance", "3", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("rep_a.csv"), run("rep_b.csv"));
}

#[test]
fn generate_rejects_zero_images() {
    let o = bin()
        .args(["generate", "--num-images", "0", "--out"])
        .arg(scratch("zero.csv"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cost_matches_closed_form() {
    let o = bin()
        .args(["cost", "--m", "100", "--n", "4", "--c-unet-us", "10000", "--c-sched-us", "100", "--c-vae-us", "100"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    let (m, n, u, s, v) = (100.0, 4.0, 10000.0, 100.0, 100.0);
    assert!((value("vanilla_us") - m * (n * u + n * s + v)).abs() < 1e-6);
    assert!((value("stream_us") - ((m + n - 1.0) * (u + s) + m * v)).abs() < 1e-6);
    assert!(value("speedup") > 3.2);
}

#[test]
fn cost_uses_config_defaults() {
    let o = bin().args(["cost", "--m", "100", "--n", "4"]).output().unwrap();
    let text = stdout(&o);
    assert!(text.contains("vanilla_us = 890000"), "{text}");
    assert!(text.contains("stream_us = 266300"), "{text}");
}

#[test]
fn bench_writes_csv() {
    let cfg = with_config(
        "[bench]\nc_unet_us = 200\nc_sched_us = 10\nc_vae_us = 20\n\
         [[bench.cases]]\nlabel = \"small\"\nm = 4\nn = 2\n",
        "bench.toml",
    );
    let csv = scratch("bench.csv");
    let o = bin()
        .args(["bench", "--reps", "1", "--config"])
        .arg(&cfg)
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("label,m,n,pred_vanilla_us,pred_ours_us,meas_vanilla_us,meas_ours_us,speedup")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], &["small", "4", "2"]);
    assert_eq!(row[3].parse::<f64>().unwrap(), 4.0 * (2.0 * 210.0 + 20.0));
    assert_eq!(row[4].parse::<f64>().unwrap(), 5.0 * 210.0 + 4.0 * 20.0);
    assert!(lines.next().is_none());
}

#[test]
fn bench_rejects_unknown_model() {
    let cfg = with_config(
        "[[bench.cases]]\nlabel = \"x\"\nm = 1\nn = 1\nmodel = \"resnet\"\n",
        "bad_model.toml",
    );
    let o = bin().args(["bench", "--reps", "1", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_exits_two() {
    let o = bin().args(["cost", "--m", "ten", "--n", "4"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
