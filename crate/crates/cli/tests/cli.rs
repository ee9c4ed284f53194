use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use persona_synth::respond::Method;
use persona_synth_cli::{
    cmd_evaluate, cmd_fixture, cmd_generate, plot_file, profiles_file, RunManifest, CALIBRATION_FILE,
    INDIVIDUALS_FILE, MANIFEST_FILE, METRICS_CSV, METRICS_JSON, PERSONAS_FILE,
};

const BIN: &str = env!("CARGO_BIN_EXE_persona-synth");

fn fixture(dir: &Path) -> PathBuf {
    cmd_fixture(&dir.join("fx")).unwrap();
    dir.join("fx").join("benchmark.csv")
}

fn manifest(method: &str, out: &Path, benchmark: Option<&Path>) -> RunManifest {
    let mut m = RunManifest::new(method.parse::<Method>().unwrap(), 7, out);
    m.benchmark = benchmark.map(Path::to_path_buf);
    m
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn guided_persona_run_and_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = fixture(tmp.path());
    let out = tmp.path().join("gp");
    let written = cmd_generate(&manifest("guided-persona", &out, Some(&bench))).unwrap();
    assert_eq!(written.input_hashes.len(), 3);
    assert!(written.input_hashes.values().all(|h| h.len() == 64));

    let personas = fs::read_to_string(out.join(PERSONAS_FILE)).unwrap();
    assert_eq!(personas.lines().count(), 15840 + 1);
    assert!(out.join(profiles_file("walking")).is_file());
    let calibration = fs::read_to_string(out.join(CALIBRATION_FILE)).unwrap();
    assert!(calibration.contains("[densities]") && calibration.contains("[responses:walking]"));
    assert!(!calibration.contains("converged: false"));

    let report = cmd_evaluate(&out, None, None).unwrap();
    assert!(report.pooled.mae <= 0.1);
    assert!(report.pooled.cramers_v >= 0.99);
    for f in [METRICS_JSON, METRICS_CSV, &plot_file("walking")] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let svg = fs::read_to_string(out.join(plot_file("walking"))).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("Guided Persona-based AI Survey"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = fixture(tmp.path());
    let out = tmp.path().join("run");
    let m = manifest("structured", &out, Some(&bench));
    cmd_generate(&m).unwrap();
    cmd_evaluate(&out, None, None).unwrap();
    let first = snapshot(&out);
    cmd_generate(&m).unwrap();
    cmd_evaluate(&out, None, None).unwrap();
    assert_eq!(first, snapshot(&out));
}

#[test]
fn naive_run_has_ten_thousand_individuals() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("naive");
    cmd_generate(&manifest("naive", &out, None)).unwrap();
    let text = fs::read_to_string(out.join(INDIVIDUALS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 10_000 + 1);
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.method.name(), "naive");
    assert!(m.benchmark.is_none());
    // no benchmark recorded, none given
    assert!(cmd_evaluate(&out, None, None).is_err());
}

#[test]
fn guided_without_benchmark_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = cmd_generate(&manifest("guided", &tmp.path().join("g"), None)).unwrap_err();
    assert!(matches!(err.downcast_ref::<persona_synth::Error>(), Some(persona_synth::Error::Config(_))));
    assert!(!tmp.path().join("g").exists());
}

#[test]
fn evaluate_lists_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = fixture(tmp.path());
    let out = tmp.path().join("sp");
    cmd_generate(&manifest("naive-persona", &out, Some(&bench))).unwrap();
    fs::remove_file(out.join(profiles_file("walking"))).unwrap();
    let msg = format!("{:#}", cmd_evaluate(&out, None, None).unwrap_err());
    assert!(msg.contains("profiles_walking.csv"), "{msg}");
    fs::remove_file(out.join(PERSONAS_FILE)).unwrap();
    let msg = format!("{:#}", cmd_evaluate(&out, None, None).unwrap_err());
    assert!(msg.contains("personas.csv") && msg.contains("profiles_walking.csv"), "{msg}");
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = fixture(tmp.path());
    let fail = Command::new(BIN)
        .args(["generate", "--method", "guided", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert!(!fail.status.success());
    assert!(String::from_utf8_lossy(&fail.stderr).contains("benchmark"));

    let bad_method = Command::new(BIN).args(["generate", "--method", "psychic"]).output().unwrap();
    assert!(!bad_method.status.success());

    let run = tmp.path().join("np");
    let ok = Command::new(BIN)
        .args(["generate", "--method", "naive-persona", "--seed", "3", "--benchmark"])
        .arg(&bench)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let eval = Command::new(BIN).arg("evaluate").arg("--run").arg(&run).output().unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("naive-persona"));

    let llm = Command::new(BIN)
        .args(["generate", "--method", "naive", "--backend", "llm", "--out"])
        .arg(tmp.path().join("llm"))
        .env_remove("PERSONA_SYNTH_API_KEY")
        .output()
        .unwrap();
    assert!(!llm.status.success());
    assert!(String::from_utf8_lossy(&llm.stderr).contains("PERSONA_SYNTH_API_KEY"));
}
