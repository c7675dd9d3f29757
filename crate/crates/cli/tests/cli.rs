use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use aisport::synth::{generate, Scenario, TruthLog, VisitSpec};
use tempfile::TempDir;

fn aisport(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aisport")).args(args).stdin(Stdio::null()).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = aisport(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Writes a scenario, its NMEA, truth and port polygons.
    fn new(scenario: serde_json::Value) -> Self {
        let dir = TempDir::new().unwrap();
        let f = Fixture { dir };
        fs::write(f.path("scenario.json"), scenario.to_string()).unwrap();
        ok(&[
            "synth",
            "--scenario",
            &f.s("scenario.json"),
            "-o",
            &f.s("feed.nmea"),
            "--truth",
            &f.s("truth.jsonl"),
            "--port-out",
            &f.s("port.geojson"),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn truth(&self) -> TruthLog {
        TruthLog::read_jsonl(BufReader::new(fs::File::open(self.path("truth.jsonl")).unwrap())).unwrap()
    }

    fn decode(&self) {
        ok(&["decode", &self.s("feed.nmea"), "-o", &self.s("decoded.jsonl"), "--errors", &self.s("errors.jsonl")]);
    }
}

fn agreement(out: &Output) -> f64 {
    let text = stderr(out);
    let at = text.find("agreement with reported status ").expect("agreement line") + "agreement with reported status ".len();
    text[at..].split(|c: char| c == ',' || c.is_whitespace()).next().unwrap().parse().unwrap()
}

fn small(error_rate: f64) -> serde_json::Value {
    serde_json::json!({ "seed": 3, "duration_h": 30.0, "arrivals_per_day": 30.0, "error_rate": error_rate })
}

#[test]
fn decode_valid_feed() {
    let f = Fixture::new(small(0.0));
    f.decode();
    let n = lines(&f.path("feed.nmea")).len();
    let decoded = lines(&f.path("decoded.jsonl"));
    assert!(decoded.len() > 1000 && decoded.len() <= n);
    assert!(lines(&f.path("errors.jsonl")).is_empty());
    assert!(f.path("decoded.jsonl.manifest.json").is_file());
}

#[test]
fn decode_missing_file_is_usage_error() {
    let out = aisport(&["decode", "/nonexistent/feed.nmea"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn decode_routes_bad_checksum_to_error_channel() {
    let dir = TempDir::new().unwrap();
    let feed = dir.path().join("feed.nmea");
    fs::write(&feed, "!AIVDM,1,1,,A,13u?etPv2;0n:dDPwUM1U1Cb069D,0*24\n!AIVDM,1,1,,B,13u?etPv2;0n:dDPwUM1U1Cb069D,0*00\n").unwrap();
    let errors = dir.path().join("errors.jsonl");
    let out = ok(&["decode", feed.to_str().unwrap(), "--errors", errors.to_str().unwrap()]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);
    let errs = lines(&errors);
    assert_eq!(errs.len(), 1);
    assert!(errs[0].contains("checksum"), "{}", errs[0]);
}

#[test]
fn decode_error_rate_threshold_exits_one() {
    let dir = TempDir::new().unwrap();
    let feed = dir.path().join("feed.nmea");
    fs::write(&feed, "!AIVDM,1,1,,A,13u?etPv2;0n:dDPwUM1U1Cb069D,0*24\ngarbage\n").unwrap();
    let out = aisport(&["decode", feed.to_str().unwrap(), "-o", dir.path().join("d.jsonl").to_str().unwrap(), "--max-error-rate", "0.1"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = aisport(&["decode", feed.to_str().unwrap(), "-o", dir.path().join("d.jsonl").to_str().unwrap(), "--max-error-rate", "0.6"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn validate_agreement_matches_injected_error_rate() {
    for (rate, lo, hi) in [(0.3, 0.68, 0.72), (0.0, 1.0, 1.0)] {
        let f = Fixture::new(small(rate));
        f.decode();
        let out = ok(&["validate", &f.s("decoded.jsonl"), "--port", &f.s("port.geojson"), "-o", &f.s("validated.jsonl")]);
        let a = agreement(&out);
        assert!((lo..=hi).contains(&a), "rate {rate}: agreement {a}");
    }
}

#[test]
fn validate_rejects_missing_or_broken_polygons() {
    let f = Fixture::new(small(0.0));
    f.decode();
    let out = aisport(&["validate", &f.s("decoded.jsonl"), "--method", "geofence"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    fs::write(f.path("bad.geojson"), "{\"type\": \"FeatureCollection\", \"features\": [").unwrap();
    let out = aisport(&["validate", &f.s("decoded.jsonl"), "--port", &f.s("bad.geojson")]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = aisport(&["validate", &f.s("decoded.jsonl"), "--method", "sonar"]);
    assert_eq!(code(&out), 2);
}

fn three_visits() -> serde_json::Value {
    let visits: Vec<VisitSpec> = (0..3)
        .map(|i| VisitSpec {
            mmsi: Some(244_000_000 + i),
            ship_type: 71 + 10 * (i as u8 % 2),
            arrival_h: 1.0 + 3.0 * i as f64,
            anchor_h: vec![2.0],
            berth_h: 8.0,
            terminal: None,
        })
        .collect();
    serde_json::json!({ "seed": 4, "duration_h": 30.0, "arrivals_per_day": 0.0, "visits": visits })
}

#[test]
fn voyages_from_known_visits() {
    let f = Fixture::new(three_visits());
    f.decode();
    ok(&["validate", &f.s("decoded.jsonl"), "--port", &f.s("port.geojson"), "-o", &f.s("validated.jsonl")]);
    ok(&["voyages", &f.s("validated.jsonl"), "--port", &f.s("port.geojson"), "-o", &f.s("voyages.jsonl")]);
    let voyages = lines(&f.path("voyages.jsonl"));
    assert_eq!(voyages.len(), 3);
    let truth = f.truth();
    for (v, t) in voyages.iter().zip(&truth.visits) {
        let v: serde_json::Value = serde_json::from_str(v).unwrap();
        assert_eq!(v["mmsi"], t.mmsi);
    }

    // Line order of the input must not matter.
    let mut shuffled = lines(&f.path("validated.jsonl"));
    shuffled.reverse();
    fs::write(f.path("reversed.jsonl"), shuffled.join("\n") + "\n").unwrap();
    ok(&["voyages", &f.s("reversed.jsonl"), "--port", &f.s("port.geojson"), "-o", &f.s("voyages2.jsonl")]);
    assert_eq!(fs::read(f.path("voyages.jsonl")).unwrap(), fs::read(f.path("voyages2.jsonl")).unwrap());
}

#[test]
fn voyages_of_empty_input() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let out = ok(&["voyages", input.to_str().unwrap()]);
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("0 voyages"));
}

#[test]
fn voyages_reject_unvalidated_input() {
    let f = Fixture::new(small(0.0));
    f.decode();
    let out = aisport(&["voyages", &f.s("decoded.jsonl")]);
    assert_eq!(code(&out), 2);
}

fn pipeline(f: &Fixture) {
    f.decode();
    ok(&["validate", &f.s("decoded.jsonl"), "--port", &f.s("port.geojson"), "-o", &f.s("validated.jsonl")]);
    ok(&["voyages", &f.s("validated.jsonl"), "--port", &f.s("port.geojson"), "-o", &f.s("voyages.jsonl")]);
}

fn ground_truth_csv(f: &Fixture) -> PathBuf {
    let mut csv = String::from("date,category,arrivals\n");
    for (date, row) in &f.truth().daily_arrivals.rows {
        for (name, n) in ["cargo", "tanker", "passenger"].iter().zip(row) {
            csv.push_str(&format!("{date},{name},{n}\n"));
        }
    }
    let p = f.path("calls.csv");
    fs::write(&p, csv).unwrap();
    p
}

#[test]
fn metrics_with_and_without_ground_truth() {
    let f = Fixture::new(serde_json::json!({ "seed": 9, "duration_h": 72.0, "arrivals_per_day": 30.0, "anchorage_probability": 0.0 }));
    pipeline(&f);
    let gt = ground_truth_csv(&f);

    let out = ok(&["metrics", &f.s("voyages.jsonl")]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.get("mae").is_none());
    assert!(report["voyages"].as_u64().unwrap() > 0);

    let out = ok(&["metrics", &f.s("voyages.jsonl"), "--ground-truth", gt.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["mae"]["macro_average"].is_number());
    assert!(stderr(&out).contains("arrivals MAE"));

    ok(&["metrics", &f.s("voyages.jsonl"), "--out-dir", &f.s("report")]);
    for name in
        ["report.json", "daily_arrivals.csv", "weekly_turnaround.csv", "weekly_anchorage_wait.csv", "voyage_metrics.csv", "manifest.json"]
    {
        assert!(f.path("report").join(name).is_file(), "{name}");
    }
}

#[test]
fn metrics_vessel_schedule() {
    let f = Fixture::new(serde_json::json!({
        "seed": 2, "duration_h": 96.0, "arrivals_per_day": 5.0,
        "ferries": [{ "mmsi": 237_000_001 }],
    }));
    pipeline(&f);
    let out = ok(&["metrics", &f.s("voyages.jsonl"), "--vessel", "237000001"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].contains("arrival"), "{}", rows[0]);
    assert!(rows.len() >= 4, "{text}");
}

#[test]
fn piped_stages_equal_run() {
    let f = Fixture::new(small(0.3));
    pipeline(&f);
    ok(&["metrics", &f.s("voyages.jsonl"), "--out-dir", &f.s("staged")]);
    ok(&["run", &f.s("feed.nmea"), "--port", &f.s("port.geojson"), "--out-dir", &f.s("run")]);
    for name in ["decoded.jsonl", "validated.jsonl", "voyages.jsonl"] {
        assert_eq!(fs::read(f.path(name)).unwrap(), fs::read(f.path("run").join(name)).unwrap(), "{name}");
    }
    for name in ["report.json", "daily_arrivals.csv", "voyage_metrics.csv"] {
        assert_eq!(fs::read(f.path("staged").join(name)).unwrap(), fs::read(f.path("run").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn reruns_are_identical() {
    let f = Fixture::new(small(0.3));
    for out in ["a", "b"] {
        ok(&["run", &f.s("feed.nmea"), "--port", &f.s("port.geojson"), "--out-dir", &f.s(out)]);
    }
    let names: Vec<_> = fs::read_dir(f.path("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(names.len() >= 9);
    for name in names {
        let a = fs::read_to_string(f.path("a").join(&name)).unwrap();
        let b = fs::read_to_string(f.path("b").join(&name)).unwrap();
        // Only the output directory name may differ.
        assert_eq!(a.replace(&f.s("a"), &f.s("b")), b, "{name:?}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_is_seed_deterministic() {
    let a = ok(&["synth", "--seed", "11"]).stdout;
    let b = ok(&["synth", "--seed", "11"]).stdout;
    let c = ok(&["synth", "--seed", "12"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
    let direct = generate(&Scenario { seed: 11, ..Default::default() }).unwrap();
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), direct.lines.len());
}

#[test]
fn ingest_replay_into_store_then_run() {
    let f = Fixture::new(small(0.0));
    let source = format!("file:{}", f.s("feed.nmea"));
    ok(&["ingest", "--source", &source, "--store", &f.s("store")]);
    assert!(fs::read_dir(f.path("store")).unwrap().count() >= 1);
    ok(&["decode", &f.s("store"), "-o", &f.s("from_store.jsonl")]);
    f.decode();
    assert_eq!(lines(&f.path("from_store.jsonl")).len(), lines(&f.path("decoded.jsonl")).len());

    let out = aisport(&["ingest", "--source", "ftp://nowhere"]);
    assert_eq!(code(&out), 2);
}
