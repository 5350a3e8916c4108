use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Output, Stdio};

fn dsvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsvp"))
        .args(args)
        .env_remove("DSVP_LISTEN")
        .output()
        .unwrap()
}

fn config(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn fib_prints_the_sequence() {
    let out = dsvp(&["fib", "8"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "0 1 1 2 3 5 8 13\n");
    let out = dsvp(&["fib", "2", "local"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "0 1\n");
    let out = dsvp(&["fib", "12", "--place", "local", "--sequential"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "0 1 1 2 3 5 8 13 21 34 55 89\n");
}

#[test]
fn unreachable_place_exits_with_failure() {
    let cfg = config("node_id = \"a\"\n[[place]]\nname = \"gone\"\nendpoint = \"127.0.0.1:9\"\n[retry]\nmax_attempts = 1\n");
    let out = dsvp(&["--config", cfg.path().to_str().unwrap(), "fib", "8", "gone"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("connect_refused"));
}

#[test]
fn setup_errors_exit_with_two() {
    assert_eq!(dsvp(&["fib", "1"]).status.code(), Some(2));
    assert_eq!(dsvp(&["fib", "8", "nowhere"]).status.code(), Some(2));
    assert_eq!(dsvp(&["serve", "--listen", "not-an-endpoint"]).status.code(), Some(2));
    let cfg = config("node_id = \"a\"\nbogus_key = 1\n");
    assert_eq!(dsvp(&["--config", cfg.path().to_str().unwrap(), "fib", "8"]).status.code(), Some(2));
}

#[test]
fn serve_announces_its_endpoint_and_rejects_a_taken_port() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dsvp"))
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let endpoint = line.trim().strip_prefix("listening on ").unwrap().to_owned();

    assert_eq!(dsvp(&["serve", "--listen", &endpoint]).status.code(), Some(2));

    let cfg = config(&format!("node_id = \"a\"\n[[place]]\nname = \"b\"\nendpoint = \"{endpoint}\"\n"));
    let cfg = cfg.path().to_str().unwrap();
    let out = dsvp(&["--config", cfg, "fib", "8", "b"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "0 1 1 2 3 5 8 13\n");
    let out = dsvp(&["--config", cfg, "bench", "b", "--iters", "1", "--warmup", "0"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("n=1 "));
    let out = dsvp(&["--config", cfg, "kill-demo", "--place", "b", "--n", "8"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("killed (watchdog)"), "{stdout}");
    assert!(stdout.ends_with("0 1 1 2 3 5 8 13\n"), "{stdout}");

    child.kill().unwrap();
    child.wait().unwrap();
}
