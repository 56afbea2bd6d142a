use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

const BIN: &str = env!("CARGO_BIN_EXE_rovsim");

fn rovsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .parse()
        .unwrap()
}

#[test]
fn default_trial_finishes_in_the_reference_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = rovsim(dir.path(), &["run-trial", "--out", "still.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let t = value(&out, "time_taken_s");
    assert!((30.0..=33.0).contains(&t), "{out}");
    let v = value(&out, "avg_velocity_dist_over_time_cm_s");
    assert!((12.1..=13.3).contains(&v), "{out}");
    value(&out, "avg_velocity_instantaneous_mean_cm_s");
    let metrics = std::fs::read_to_string(dir.path().join("still.metrics")).unwrap();
    assert_eq!(metrics, out);
    let log = std::fs::read_to_string(dir.path().join("still.csv")).unwrap();
    assert!(log.starts_with("t,x,y,z,psi,v1,v2,v6,w,f1,f2,f6,fz,dist_f1,cmd,temp,hum,batt\n"));
}

#[test]
fn wave_trial_is_slower() {
    let dir = tempfile::tempdir().unwrap();
    let o = rovsim(dir.path(), &["run-trial", "--wave", "--out", "wave.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(value(&out, "wave_amplitude_n") > 0.0);
    assert!((value(&out, "time_taken_s") - 39.0).abs() <= 0.5, "{out}");
    let first = std::fs::read_to_string(dir.path().join("wave.jsonl")).unwrap();
    assert!(first.lines().next().unwrap().starts_with("{\"t\":"));
}

#[test]
fn flags_override_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = rovsim(
        dir.path(),
        &["run-trial", "--integrator", "sie", "--dt", "0.005", "--seed", "3", "--format", "jsonl", "--out", "x.log"],
    );
    assert_eq!(o.status.code(), Some(0));
    let log = std::fs::read_to_string(dir.path().join("x.log")).unwrap();
    assert!(log.starts_with("{\"t\":0.005,"), "{}", &log[..80]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(rovsim(p, &["run-trial", "--scenario", "missing.toml"]).status.code(), Some(1));

    std::fs::write(p.join("bad.toml"), "schema = 1\ngoal = 4.0\n\ndt = \"fast\"\n").unwrap();
    let o = rovsim(p, &["run-trial", "--scenario", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{o:?}");

    std::fs::write(p.join("slow.toml"), "schema = 1\nmax_time = 5.0\n").unwrap();
    let o = rovsim(p, &["run-trial", "--scenario", "slow.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("status=TIMEOUT"));

    std::fs::write(p.join("blowup.toml"), "schema = 1\n[dynamics.limits]\nlinear = 0.05\n").unwrap();
    let o = rovsim(p, &["run-trial", "--scenario", "blowup.toml", "--out", "blowup.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("status=DIVERGED"));
    let partial = std::fs::read_to_string(p.join("blowup.csv")).unwrap();
    assert!(partial.lines().count() > 1, "partial log kept");
}

#[test]
fn calibrate_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = rovsim(p, &["calibrate", "--out", "cal.toml"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!((value(&stdout(&o), "drag_surge") - 109.74).abs() < 0.01);
    let text = std::fs::read_to_string(p.join("cal.toml")).unwrap();
    assert!(text.starts_with("schema = 1\n"));
    assert!(text.contains("parameter = \"drag.surge\""));
    assert!(text.contains("parameter = \"wave.amplitude\""));

    let o = rovsim(p, &["run-trial", "--calibration", "cal.toml", "--wave", "--out", "w.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(!out.contains("wave_amplitude_n"), "fitted amplitude reused: {out}");
    assert!((value(&out, "time_taken_s") - 39.0).abs() <= 0.5);

    let o = rovsim(p, &["calibrate", "--wave-time", "20", "--out", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let o = rovsim(p, &["calibrate", "--v-terminal=-1", "--out", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(rovsim(p, &["calibrate", "--bogus"]).status.code(), Some(1));
}

#[test]
fn export_series_and_corrupt_logs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(rovsim(p, &["run-trial", "--out", "t.csv"]).status.code(), Some(0));
    let o = rovsim(p, &["export", "--log", "t.csv", "--out", "series.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let series = std::fs::read_to_string(p.join("series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("t,velocity,displacement"));
    let x: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(x.windows(2).all(|w| w[1] >= w[0]));

    let o = rovsim(p, &["export", "--log", "t.csv", "--out", "series.jsonl"]);
    assert_eq!(o.status.code(), Some(0));
    let jl = std::fs::read_to_string(p.join("series.jsonl")).unwrap();
    assert!(jl.lines().all(|l| l.starts_with("{\"t\":") && l.ends_with('}')));

    let log = std::fs::read_to_string(p.join("t.csv")).unwrap();
    let mut rows: Vec<&str> = log.lines().collect();
    rows[4] = "0.04,oops";
    std::fs::write(p.join("broken.csv"), rows.join("\n")).unwrap();
    let o = rovsim(p, &["export", "--log", "broken.csv", "--out", "s.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("record 3"), "{err}");
}

#[test]
fn fixtures_match_checked_in_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = rovsim(dir.path(), &["fixtures"]);
    assert_eq!(o.status.code(), Some(0));
    let checked_in = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/frames.json")).unwrap();
    assert_eq!(stdout(&o), checked_in);
}

fn spawn_serve(dir: &Path, extra: &[&str]) -> (Child, String) {
    let mut child = Command::new(BIN)
        .current_dir(dir)
        .args(["serve", "--port", "0", "--time-scale", "20", "--out", "live.csv"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening=").expect(&line).to_string();
    (child, addr)
}

#[test]
fn serve_streams_telemetry_and_rejects_a_second_server() {
    let dir = tempfile::tempdir().unwrap();
    let (mut child, addr) = spawn_serve(dir.path(), &["--max-time", "60"]);

    let mut s = TcpStream::connect(&addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    s.write_all(b"TRZ1").unwrap();
    let mut hello = [0u8; 4];
    s.read_exact(&mut hello).unwrap();
    assert_eq!(&hello, b"TRZ1");
    // FWD, seq 0, CRC-8 (poly 0x07) computed independently below.
    let fwd: [u8; 6] = [0xA7, 0x01, 0x00, 0x00, 0x01, rovsim_crc(&[0xA7, 0x01, 0x00, 0x00, 0x01])];
    for _ in 0..5 {
        s.write_all(&[6]).unwrap();
        s.write_all(&fwd).unwrap();
    }
    let mut surge = Vec::new();
    for _ in 0..15 {
        let mut len = [0u8; 1];
        s.read_exact(&mut len).unwrap();
        assert_eq!(len[0], 36);
        let mut frame = [0u8; 36];
        s.read_exact(&mut frame).unwrap();
        assert_eq!(frame[..2], [0xA7, 0x02]);
        surge.push(i16::from_le_bytes([frame[22], frame[23]]));
    }
    assert!(surge.last() > surge.first(), "{surge:?}");

    let second = Command::new(BIN)
        .current_dir(dir.path())
        .args(["serve", "--port", addr.rsplit(':').next().unwrap(), "--out", "other.csv"])
        .output()
        .unwrap();
    assert_eq!(second.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&second.stderr).contains("cannot listen"));

    drop(s);
    interrupt(&child);
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let mut rest = String::new();
    child.stdout.take().unwrap().read_to_string(&mut rest).unwrap();
    assert!(rest.contains("sessions=1"), "{rest}");
    let log = std::fs::read_to_string(dir.path().join("live.csv")).unwrap();
    assert!(log.lines().count() > 10);
    assert!(log.lines().any(|l| l.split(',').nth(14) == Some("1")), "FWD reached the vehicle");
}

fn interrupt(child: &Child) {
    let ok = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(ok.success());
}

fn rovsim_crc(bytes: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in bytes {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
        }
    }
    crc
}
