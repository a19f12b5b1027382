use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicU16, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_conjoint"));
    c.env_remove("OPENAI_API_KEY");
    c
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

/// Minimal chat-completions endpoint: answers "42" after `delay_ms`, or
/// with `status` when it is not 200.
struct FakeOpenAi {
    url: String,
    status: Arc<AtomicU16>,
    delay_ms: Arc<AtomicU64>,
}

impl FakeOpenAi {
    fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let status = Arc::new(AtomicU16::new(200));
        let delay_ms = Arc::new(AtomicU64::new(0));
        let (s, d) = (status.clone(), delay_ms.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (s, d) = (s.clone(), d.clone());
                std::thread::spawn(move || serve(stream, &s, &d));
            }
        });
        FakeOpenAi { url, status, delay_ms }
    }
}

fn serve(stream: TcpStream, status: &AtomicU16, delay: &AtomicU64) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    std::thread::sleep(Duration::from_millis(delay.load(Ordering::SeqCst)));
    let code = status.load(Ordering::SeqCst);
    let payload = if code == 200 {
        r#"{"id":"fake-1","choices":[{"index":0,"message":{"role":"assistant","content":"42"},"finish_reason":"stop"}]}"#
    } else {
        r#"{"error":{"message":"nope"}}"#
    };
    let reply = format!(
        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(reply.as_bytes());
}

fn live_config(dir: &Path, base_url: &str) -> PathBuf {
    let design = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_design.toml");
    let text = format!(
        r#"
design = "{}"
out_dir = "out"
scenarios = ["fiscal"]
[model]
provider = "openai"
name = "gpt-4o-mini"
base_url = "{base_url}"
[run]
repetitions = 2
seed = 5
concurrency = 4
max_retries = 0
fsync = false
"#,
        design.display()
    );
    let path = dir.join("live.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn log_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

#[test]
fn generate_builtin_design() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = run(bin().args(["--out-dir"]).arg(dir.path()).arg("generate"));
    assert_eq!(code, 0);
    assert!(out.starts_with("640 vignettes"), "{out}");
    let v = std::fs::read_to_string(dir.path().join("vignettes.jsonl")).unwrap();
    assert_eq!(v.lines().count(), 640);
}

#[test]
fn missing_design_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "design = \"does/not/exist.toml\"\n").unwrap();
    let (code, _, err) = run(bin().arg("--config").arg(&cfg).arg("generate"));
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("does/not/exist.toml"), "{err}");
}

#[test]
fn missing_key_exits_3_before_scheduling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = live_config(dir.path(), "http://127.0.0.1:9");
    let (code, _, err) = run(bin().arg("--config").arg(&cfg).arg("run"));
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("OPENAI_API_KEY"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn rejected_key_exits_3() {
    let server = FakeOpenAi::start();
    server.status.store(401, Ordering::SeqCst);
    let dir = tempfile::tempdir().unwrap();
    let cfg = live_config(dir.path(), &server.url);
    let (code, _, err) = run(bin().arg("--config").arg(&cfg).arg("run").env("OPENAI_API_KEY", "k"));
    assert_eq!(code, 3, "{err}");
}

#[test]
fn server_errors_leave_run_incomplete_exit_5() {
    let server = FakeOpenAi::start();
    server.status.store(500, Ordering::SeqCst);
    let dir = tempfile::tempdir().unwrap();
    let cfg = live_config(dir.path(), &server.url);
    let (code, _, err) = run(bin().arg("--config").arg(&cfg).arg("run").env("OPENAI_API_KEY", "k"));
    assert_eq!(code, 5, "{err}");
    server.status.store(200, Ordering::SeqCst);
    let (code, out, err) = run(bin().arg("--config").arg(&cfg).arg("run").env("OPENAI_API_KEY", "k"));
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.starts_with("256 remaining"), "{out}");
}

#[test]
fn kill_and_resume_against_fake_provider() {
    let server = FakeOpenAi::start();
    server.delay_ms.store(10, Ordering::SeqCst);
    let dir = tempfile::tempdir().unwrap();
    let cfg = live_config(dir.path(), &server.url);
    let log = dir.path().join("out/runs/gpt-4o-mini.jsonl");

    let mut child = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("run")
        .env("OPENAI_API_KEY", "k")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    while log_lines(&log).len() < 40 && start.elapsed() < Duration::from_secs(30) {
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let partial = log_lines(&log).len();
    assert!(partial >= 40 && partial < 256, "{partial}");

    server.delay_ms.store(0, Ordering::SeqCst);
    let (code, out, err) = run(bin().arg("--config").arg(&cfg).arg("run").env("OPENAI_API_KEY", "k"));
    assert_eq!(code, 0, "{out}{err}");

    let mut valid: HashMap<(String, u64), usize> = HashMap::new();
    for r in log_lines(&log) {
        if r["status"] == "valid" {
            *valid
                .entry((r["vignette_id"].as_str().unwrap().to_string(), r["run_index"].as_u64().unwrap()))
                .or_default() += 1;
        }
    }
    assert_eq!(valid.len(), 256);
    assert!(valid.values().all(|&n| n == 1));

    let (code, out, _) = run(bin().arg("--config").arg(&cfg).arg("run").env("OPENAI_API_KEY", "k"));
    assert_eq!(code, 0);
    assert!(out.starts_with("0 remaining"), "{out}");
}

#[test]
fn analyze_empty_log_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let (code, _, err) = run(bin().arg("--out-dir").arg(dir.path()).arg("analyze").arg(&log));
    assert_eq!(code, 4, "{err}");
}

#[test]
fn simulate_requires_oracle_section() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[model]\nname = \"m\"\n").unwrap();
    let (code, _, err) = run(bin().arg("--config").arg(&cfg).arg("simulate"));
    assert_eq!(code, 2, "{err}");
}
