//! End-to-end behaviour of the `lutq` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lutq_cli::model;
use lutq_core::footprint::{zoo, ArchitectureSpec};
use lutq_core::nn::Layer;
use lutq_core::quant::{is_pow2, Constraint};

fn lutq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lutq"))
        .args(args)
        .env_remove("LUTQ_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CONFIG: &str = r#"
seed = 5
blobs_samples = 600
hidden_units = [16, 16]
batch_norm = "traditional"
epochs = 5
batch_size = 32
learning_rate = 0.05
"#;

fn train_float(dir: &Path) -> PathBuf {
    let cfg = dir.join("fp.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let model = dir.join("fp.lutq");
    let out = lutq(&["train", "--config", p(&cfg), "--model", p(&model), "--trace", p(&dir.join("fp.csv"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

fn samples(dir: &Path) -> PathBuf {
    let path = dir.join("in.csv");
    let mut s = String::from("x,y,label\n");
    for i in 0..20 {
        let c = i % 4;
        let (sx, sy) = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)][c];
        s.push_str(&format!("{},{},{c}\n", 2.5 * sx + 0.1 * i as f64 / 20.0, 2.5 * sy - 0.05));
    }
    std::fs::write(&path, s).unwrap();
    path
}

#[test]
fn train_writes_trace_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_float(dir.path());
    let trace = std::fs::read_to_string(dir.path().join("fp.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,loss,accuracy");
    assert_eq!(lines.len(), 6);

    let again = dir.path().join("again.lutq");
    let cfg = dir.path().join("fp.toml");
    let out = lutq(&["train", "--config", p(&cfg), "--model", p(&again), "--trace", p(&dir.path().join("b.csv"))]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(trace, std::fs::read_to_string(dir.path().join("b.csv")).unwrap());
}

#[test]
fn seed_environment_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_float(dir.path());
    let cfg = dir.path().join("fp.toml");
    let other = dir.path().join("other.lutq");
    let out = Command::new(env!("CARGO_BIN_EXE_lutq"))
        .args(["train", "--config", p(&cfg), "--model", p(&other), "--trace", p(&dir.path().join("o.csv"))])
        .env("LUTQ_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(std::fs::read(&model).unwrap(), std::fs::read(&other).unwrap());
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (text, field) in [
        ("dataset = \"csv\"\n", "dataset_path"),
        ("dataset = \"csv\"\ndataset_path = \"missing.csv\"\n", "dataset_path"),
        ("epochz = 3\n", "epochz"),
        ("weight_quant = \"free:0\"\n", "weight_quant"),
        ("learning_rate = -1.0\n", "learning_rate"),
    ] {
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, text).unwrap();
        let out = lutq(&["train", "--config", p(&cfg), "--model", "x", "--trace", "y"]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(field), "{text}");
    }
}

#[test]
fn quantize_k2_and_pow2() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_float(dir.path());
    let q = dir.path().join("q.lutq");
    let out = lutq(&["quantize", "--model", p(&model), "--out", p(&q), "--scheme", "free:2"]);
    assert!(out.status.success());
    let net = model::load(&q).unwrap();
    let mut layers = 0;
    for l in &net.layers {
        if let Some(lq) = l.quant() {
            assert_eq!(lq.state.as_ref().unwrap().dict().len(), 2);
            layers += 1;
        }
    }
    assert_eq!(layers, 3);

    let out = lutq(&["quantize", "--model", p(&model), "--out", p(&q), "--scheme", "pow2:4"]);
    assert!(out.status.success());
    for l in &model::load(&q).unwrap().layers {
        if let Some(lq) = l.quant() {
            let d = lq.state.as_ref().unwrap().dict();
            assert_eq!(d.constraint(), Constraint::PowerOfTwo);
            assert!(d.values().iter().all(|&v| is_pow2(v)));
        }
    }
}

#[test]
fn quantize_k1_error_is_half_variance_times_n() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_float(dir.path());
    let net = model::load(&model).unwrap();
    let q = dir.path().join("q1.lutq");
    let out = lutq(&["quantize", "--model", p(&model), "--out", p(&q), "--scheme", "free:1"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let reported: Vec<f64> = stdout
        .lines()
        .filter_map(|l| l.split("error").nth(1))
        .map(|s| s.trim().parse().unwrap())
        .collect();
    let expected: Vec<f64> = net
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Affine(a) => Some(&a.w_full),
            _ => None,
        })
        .map(|w| {
            let n = w.len() as f64;
            let mean = w.data().iter().sum::<f64>() / n;
            let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            var * n / 2.0
        })
        .collect();
    assert_eq!(reported.len(), expected.len());
    for (r, e) in reported.iter().zip(&expected) {
        assert!((r - e).abs() <= 1e-8 * e, "{r} vs {e}");
    }
}

#[test]
fn corrupt_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_float(dir.path());
    let bytes = std::fs::read(&model).unwrap();
    let bad = dir.path().join("bad.lutq");
    std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
    let out = lutq(&["quantize", "--model", p(&bad), "--out", p(&dir.path().join("z")), "--scheme", "free:2"]);
    assert_eq!(out.status.code(), Some(3));
    let input = samples(dir.path());
    let out = lutq(&["infer", "--model", p(&bad), "--input", p(&input)]);
    assert_eq!(out.status.code(), Some(3));
}

fn infer_json(model: &Path, input: &Path, kernel: &str) -> serde_json::Value {
    let out = lutq(&["infer", "--model", p(model), "--input", p(input), "--kernel", kernel]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn kernels_agree_and_shift_has_no_multiplications() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ml.toml");
    std::fs::write(&cfg, CONFIG.replace("traditional", "multiplierless")).unwrap();
    let fp = dir.path().join("ml.lutq");
    let out = lutq(&["train", "--config", p(&cfg), "--model", p(&fp), "--trace", p(&dir.path().join("t.csv"))]);
    assert!(out.status.success());
    let q = dir.path().join("q.lutq");
    assert!(lutq(&["quantize", "--model", p(&fp), "--out", p(&q), "--scheme", "pow2:4"]).status.success());
    let input = samples(dir.path());

    let naive = infer_json(&q, &input, "naive");
    let grouped = infer_json(&q, &input, "grouped");
    let shift = infer_json(&q, &input, "shift");
    assert_eq!(naive["predictions"], grouped["predictions"]);
    let logits = |v: &serde_json::Value| -> Vec<f64> {
        v["logits"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().clone()).map(|x| x.as_f64().unwrap()).collect()
    };
    for (n, g) in logits(&naive).iter().zip(logits(&grouped)) {
        assert!((n - g).abs() <= 1e-9 * n.abs().max(1e-3));
    }
    for (n, s) in logits(&naive).iter().zip(logits(&shift)) {
        assert!((n - s).abs() < 1e-2, "{n} vs {s}");
    }
    assert_eq!(shift["counters"]["mults"], 0);
    assert!(grouped["counters"]["mults"].as_u64().unwrap() < naive["counters"]["mults"].as_u64().unwrap());
}

#[test]
fn shift_on_non_pow2_model_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_float(dir.path());
    let q = dir.path().join("q.lutq");
    assert!(lutq(&["quantize", "--model", p(&model), "--out", p(&q), "--scheme", "free:4"]).status.success());
    let input = samples(dir.path());
    for m in [&model, &q] {
        let out = lutq(&["infer", "--model", p(m), "--input", p(&input), "--kernel", "shift"]);
        assert_eq!(out.status.code(), Some(4));
    }
}

#[test]
fn report_table_and_json() {
    let out = lutq(&["report", "--arch", "resnet20", "--plan", "lutq:16", "--table"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("lutq:16"));

    let out = lutq(&["report", "--arch", "resnet50", "--plan", "lutq:4"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let mults = v[0]["mults"].as_f64().unwrap() / 1e6;
    assert!(((mults - 44.46) / 44.46).abs() <= 0.05, "{mults}");
}

#[test]
fn report_rejects_bad_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "name = \"empty\"\ninput = [3, 8, 8]\n").unwrap();
    for arch in [p(&empty), "no-such-network"] {
        let out = lutq(&["report", "--arch", arch]);
        assert_eq!(out.status.code(), Some(2));
    }
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "name = \"b\"\ninput = [3, 8, 8]\nbogus = 1\n").unwrap();
    assert_eq!(lutq(&["report", "--arch", p(&broken)]).status.code(), Some(2));
    assert_eq!(lutq(&["report", "--arch", "resnet20", "--plan", "lutq:x"]).status.code(), Some(2));
}

#[test]
fn shipped_architecture_files_match_builders() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("archs");
    for name in zoo::NAMES {
        let text = std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
        assert_eq!(ArchitectureSpec::from_toml(&text).unwrap(), zoo::by_name(name).unwrap());
    }
}
