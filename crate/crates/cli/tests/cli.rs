//! CLI integration: spawn `calibrant serve`, drive it with the client
//! subcommands, check outputs and exit codes.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_calibrant")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn write_config(root: &Path) -> PathBuf {
    let config = format!(
        r#"
seed = 42

[paths]
cache_dir = "{root}/cache"
runs_dir = "{root}/runs"

[backends.mock]
kind = "mock"
fixture = "{fixture}"
seed = 42
model = "mock-subject"

[tasks.qampari]
correctness = "f1-5"
exemplars_file = "{exemplars}"
"#,
        root = root.display(),
        fixture = fixture("mock_fixture.json").display(),
        exemplars = fixture("exemplars_qa.jsonl").display(),
    );
    let path = root.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn start_server(root: &Path) -> Server {
    let config = write_config(root);
    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let child = Command::new(bin())
        .args(["serve", "--addr", &addr, "--config"])
        .arg(&config)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn server");
    let url = format!("http://{addr}");
    // wait for the port to accept connections
    let deadline = Instant::now() + Duration::from_secs(15);
    loop {
        match std::net::TcpStream::connect(&addr) {
            Ok(mut stream) => {
                let _ = stream.write_all(b"GET /health HTTP/1.0\r\n\r\n");
                let mut line = String::new();
                let _ = BufReader::new(&mut stream).read_line(&mut line);
                if line.contains("200") {
                    break;
                }
            }
            Err(_) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => panic!("server never came up: {e}"),
        }
    }
    Server { child, url }
}

fn run_cli(server: &Server, args: &[&str]) -> (i32, String, String) {
    let output = Command::new(bin())
        .args(["--server", &server.url])
        .args(args)
        .output()
        .expect("run cli");
    (
        output.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

#[test]
fn the_cli_drives_a_full_run_against_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let server = start_server(dir.path());
    let dataset = fixture("qampari_small.jsonl");
    let dataset_arg = dataset.to_str().unwrap();

    let (code, stdout, stderr) = run_cli(&server, &["ingest", "--dataset", dataset_arg]);
    assert_eq!(code, 0, "ingest failed: {stderr}");
    let ingest: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(ingest["count"], 20);

    let (code, _, stderr) = run_cli(
        &server,
        &[
            "generate",
            "--run",
            "r1",
            "--task",
            "qampari",
            "--dataset",
            dataset_arg,
            "--backend",
            "mock",
        ],
    );
    assert_eq!(code, 0, "generate failed: {stderr}");

    let (code, _, stderr) = run_cli(
        &server,
        &["correctness", "--run", "r1", "--task", "qampari"],
    );
    assert_eq!(code, 0, "correctness failed: {stderr}");

    let (code, _, stderr) = run_cli(
        &server,
        &[
            "elicit",
            "--run",
            "r1",
            "--task",
            "qampari",
            "--methods",
            "cse,psc",
        ],
    );
    assert_eq!(code, 0, "elicit failed: {stderr}");

    let (code, stdout, stderr) = run_cli(&server, &["metrics", "--run", "r1", "--task", "qampari"]);
    assert_eq!(code, 0, "metrics failed: {stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(report["methods"]["cse"]["ece_m"].is_number());
    assert!(report["methods"]["psc"]["selective"]["f1"].is_number());

    let (code, stdout, _) = run_cli(&server, &["report", "--run", "r1", "--task", "qampari"]);
    assert_eq!(code, 0);
    let report2: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report2["report"]["methods"], report["methods"]);
}

#[test]
fn exit_codes_follow_the_error_contract() {
    let dir = tempfile::tempdir().unwrap();
    let server = start_server(dir.path());

    // schema error in the dataset: exit 1
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"a\"}\n").unwrap();
    let (code, _, stderr) = run_cli(&server, &["ingest", "--dataset", bad.to_str().unwrap()]);
    assert_eq!(code, 1, "stderr: {stderr}");
    assert!(stderr.contains("line 1"), "stderr: {stderr}");

    // unreachable server: exit 2
    let output = Command::new(bin())
        .args([
            "--server",
            "http://127.0.0.1:1",
            "ingest",
            "--dataset",
            bad.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    // metrics on a generated-but-unelicited run: exit 3
    let dataset = fixture("qampari_small.jsonl");
    run_cli(
        &server,
        &[
            "generate",
            "--run",
            "empty",
            "--task",
            "qampari",
            "--dataset",
            dataset.to_str().unwrap(),
            "--backend",
            "mock",
        ],
    );
    let (code, _, _) = run_cli(&server, &["metrics", "--run", "empty", "--task", "qampari"]);
    assert_eq!(code, 3);
}
