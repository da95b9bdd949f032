//! The `dash` binary end to end.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn dash() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dash"));
    c.env("DASH_SEED", "cli-tests");
    c
}

fn run(args: &[&str]) -> Output {
    dash().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn line<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no '{key}' line in {out}"))
        .trim()
}

const IDENTITY: &str = r#"{"input_shape": [4], "layers": [{"type": "flatten"}]}"#;

fn mnist_input(dir: &Path) -> PathBuf {
    let values: Vec<String> = (0..784).map(|i| ((i * 7) % 5).to_string()).collect();
    write(dir, "in.csv", &values.join(","))
}

#[test]
fn identity_model_returns_the_quantized_input() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "id.json", IDENTITY);
    let x = write(dir.path(), "x.csv", "0.25, -1.3\n2, 0.6\n");
    let out = ok(&[
        "infer",
        "-m",
        m.to_str().unwrap(),
        "-i",
        x.to_str().unwrap(),
        "--alpha",
        "4",
    ]);
    assert_eq!(line(&out, "integer:"), "1 -5 8 2");
    assert_eq!(line(&out, "logits:"), "0.25 -1.25 2 0.5");
    assert_eq!(line(&out, "argmax:"), "2");
    // integer inputs pass through unchanged
    let xi = write(dir.path(), "xi.csv", "3,-7,0,12");
    let out = ok(&[
        "infer",
        "-m",
        m.to_str().unwrap(),
        "-i",
        xi.to_str().unwrap(),
        "--integer",
        "--alpha",
        "1",
    ]);
    assert_eq!(line(&out, "integer:"), "3 -7 0 12");
    // without a constant, the input itself picks one
    let out = ok(&["infer", "-m", m.to_str().unwrap(), "-i", x.to_str().unwrap(), "--json"]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    let logits: Vec<f64> = serde_json::from_value(v["logits"].clone()).unwrap();
    for (got, want) in logits.iter().zip([0.25, -1.3, 2.0, 0.6]) {
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
    }
}

#[test]
fn count_reports_free_linear_layers_on_model_a() {
    let out = ok(&["count", "--arch", "A", "--json"]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["match"], true);
    for l in v["layers"].as_array().unwrap() {
        if l["kind"] == "dense" {
            assert_eq!(l["measured"], 0);
            assert_eq!(l["closed_form"], 0);
        } else {
            assert!(l["measured"].as_u64().unwrap() > 0);
        }
    }
    let text = ok(&["count", "--arch", "A"]);
    assert!(text.contains("closed-form") && text.contains("total"));
}

#[test]
fn bench_reports_every_layer() {
    let out = ok(&["bench", "--arch", "A", "--runs", "2"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let layers = v["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 5);
    for l in layers {
        for key in ["garble_ms", "evaluate_ms"] {
            assert!(l[key].as_f64().unwrap() >= 0.0, "{key}");
        }
        assert_eq!(l["blocks"], l["closed_form_blocks"]);
        assert!(l["kind"].is_string());
    }
    assert_eq!(v["matches_plain"], true);
    assert_eq!(v["comm_volume"]["total_bytes"], 103_280);
    assert!(v["online"]["total_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(v["k"], 8);
}

#[test]
fn artifact_pipeline_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let x = mnist_input(dir.path());
    ok(&["garble", "--arch", "A", "-o", &d("a.gc")]);
    assert!(Path::new(&d("a.enc")).exists() && Path::new(&d("a.dec")).exists());
    ok(&[
        "encode",
        "-e",
        &d("a.enc"),
        "-i",
        x.to_str().unwrap(),
        "--integer",
        "-o",
        &d("gin"),
    ]);
    ok(&["evaluate", "-g", &d("a.gc"), "-i", &d("gin"), "-o", &d("gout")]);
    let decoded = ok(&["decode", "-d", &d("a.dec"), "-i", &d("gout")]);
    let direct = ok(&["infer", "--arch", "A", "-i", x.to_str().unwrap(), "--integer"]);
    assert_eq!(line(&decoded, "integer:"), line(&direct, "integer:"));

    let mut bytes = std::fs::read(d("gout")).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x04;
    std::fs::write(d("bad"), bytes).unwrap();
    assert_eq!(code(&["decode", "-d", &d("a.dec"), "-i", &d("bad")]), 4);
    // artifacts of the wrong kind are data errors
    assert_eq!(code(&["decode", "-d", &d("a.dec"), "-i", &d("gin")]), 3);
}

#[test]
fn seeded_garbling_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    ok(&["garble", "--arch", "F", "-o", &d("one.gc")]);
    ok(&["--threads", "1", "garble", "--arch", "F", "-o", &d("two.gc")]);
    for ext in ["gc", "enc", "dec"] {
        let a = std::fs::read(d(&format!("one.{ext}"))).unwrap();
        let b = std::fs::read(d(&format!("two.{ext}"))).unwrap();
        assert!(a == b, "{ext} differs");
    }
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "id.json", IDENTITY);
    let m = m.to_str().unwrap();
    let short = write(dir.path(), "short.csv", "1,2");
    let junk = write(dir.path(), "junk.csv", "1,x,3,4");
    let broken = write(dir.path(), "broken.json", "{\"input_shape\": [4], \"layers\": [");
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["infer", "-i", "x.csv"]), 2);
    assert_eq!(code(&["infer", "--arch", "Z", "-i", short.to_str().unwrap()]), 2);
    assert_eq!(code(&["count", "--arch", "A", "--sign-accuracy", "1.5"]), 2);
    assert_eq!(code(&["--threads", "0", "count", "--arch", "A"]), 2);
    assert_eq!(code(&["infer", "-m", m, "-i", "/nonexistent.csv", "--alpha", "1"]), 3);
    assert_eq!(
        code(&["infer", "-m", m, "-i", short.to_str().unwrap(), "--alpha", "1"]),
        3
    );
    assert_eq!(
        code(&["infer", "-m", m, "-i", junk.to_str().unwrap(), "--alpha", "1"]),
        3
    );
    assert_eq!(
        code(&["infer", "-m", broken.to_str().unwrap(), "-i", short.to_str().unwrap()]),
        3
    );
    // a quantized input beyond the ring
    let huge = write(dir.path(), "huge.csv", "1e12,0,0,0");
    assert_eq!(
        code(&[
            "infer",
            "-m",
            m,
            "-i",
            huge.to_str().unwrap(),
            "--alpha",
            "1",
            "-k",
            "2"
        ]),
        3
    );
}

/// A service child process and the address it announced.
struct Service(Child, String);

impl Service {
    fn start(args: &[&str]) -> Self {
        let mut child = dash().args(args).stdout(Stdio::piped()).spawn().unwrap();
        let mut first = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut first)
            .unwrap();
        let addr = first
            .trim()
            .strip_prefix("listening on ")
            .expect("announcement")
            .to_string();
        Service(child, addr)
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn service_inference_matches_local_inference() {
    let dir = tempfile::tempdir().unwrap();
    let x = mnist_input(dir.path());
    let x = x.to_str().unwrap();
    let ev = Service::start(&["serve-evaluator", "--listen", "127.0.0.1:0"]);
    let config = write(
        dir.path(),
        "dash.toml",
        &format!(
            "[roles]\ngarbler = \"127.0.0.1:0\"\nevaluator = \"{}\"\n\n[circuit]\nk = 8\n",
            ev.1
        ),
    );
    let g = Service::start(&["serve-garbler", "--config", config.to_str().unwrap()]);
    let local = ok(&["infer", "--arch", "A", "-i", x, "--integer"]);
    let remote = ok(&["infer", "--arch", "A", "-i", x, "--integer", "--garbler", &g.1]);
    let split = ok(&[
        "infer",
        "--arch",
        "A",
        "-i",
        x,
        "--integer",
        "--garbler",
        &g.1,
        "--owners",
        "100,200,484",
    ]);
    assert_eq!(line(&local, "integer:"), line(&remote, "integer:"));
    assert_eq!(line(&local, "logits:"), line(&split, "logits:"));
    assert_eq!(line(&local, "argmax:"), line(&split, "argmax:"));
    assert_eq!(
        code(&[
            "infer",
            "--arch",
            "A",
            "-i",
            x,
            "--integer",
            "--garbler",
            &g.1,
            "--owners",
            "1,2"
        ]),
        2
    );
}

#[test]
fn services_reject_bad_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[roles]\ngarbler = \"x\"\n");
    assert_eq!(code(&["serve-garbler", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(code(&["serve-evaluator"]), 2);
    assert_eq!(code(&["serve-garbler", "--listen", "127.0.0.1:0"]), 2);
}
