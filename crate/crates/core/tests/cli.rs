mod common;

use std::fs;
use std::process::Command;

use common::*;

fn namebias() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_namebias"));
    cmd.env_remove("NAMEBIAS_ENDPOINT")
        .env_remove("NAMEBIAS_OUTPUT_DIR")
        .env_remove("NAMEBIAS_CONFIG");
    cmd
}

#[test]
fn curate_prints_top_names() {
    let dir = tempfile::tempdir().unwrap();
    let census = dir.path().join("census.csv");
    write_synthetic_census(&census, 4);
    let out = namebias()
        .args(["curate", "--census"])
        .arg(&census)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ASIAAA, ASIAAB, ASIAAC"), "{stdout}");
    assert!(dir.path().join("out/curated/native_american.csv").exists());
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fx.json");
    write_fixture(&fixture, &constant_fixture());

    // Missing pair file: configuration error.
    let config = write_config(dir.path(), &fixture, Some(&dir.path().join("nope.csv")), None, "");
    let out = namebias().arg("-c").arg(&config).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists(), "invalid config wrote output");

    // Unreachable HTTP backend: backend error.
    let census = dir.path().join("census.csv");
    write_synthetic_census(&census, 3);
    let config = write_config(dir.path(), &fixture, None, Some(&census), "");
    let out = namebias()
        .arg("-c")
        .arg(&config)
        .arg("probe")
        .env("NAMEBIAS_ENDPOINT", "http://127.0.0.1:9/score")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Too few pairs for the design: shortfall.
    let out = namebias().arg("-c").arg(&config).arg("probe").output().unwrap();
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));

    // Analysis of an incomplete run: refused.
    let pairs = reference_pairs("phi-2");
    let config = write_config(dir.path(), &fixture, Some(&pairs), None, "[experiment]\npairs_per_group = 2\ngate_on_verification = true\ninvestors = [\"Black,F\"]\n");
    let out = namebias().arg("-c").arg(&config).arg("run").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = namebias().arg("-c").arg(&config).arg("analyze").output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-incomplete"));
}

#[test]
fn env_var_sets_output_dir_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let census = dir.path().join("census.csv");
    write_synthetic_census(&census, 3);
    let status = namebias()
        .args(["curate", "--census"])
        .arg(&census)
        .env("NAMEBIAS_OUTPUT_DIR", dir.path().join("from_env"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("from_env/curated/white.csv").exists());
    let status = namebias()
        .args(["curate", "--census"])
        .arg(&census)
        .arg("--out")
        .arg(dir.path().join("from_flag"))
        .env("NAMEBIAS_OUTPUT_DIR", dir.path().join("ignored"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("from_flag/curated/white.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn full_cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fx.json");
    write_fixture(&fixture, &namebias::backend::FixtureFile::default());
    let config = write_config(
        dir.path(),
        &fixture,
        Some(&reference_pairs("mistral-7b")),
        None,
        "[experiment]\npairs_per_group = 3\n",
    );
    for cmd in ["run", "analyze", "report"] {
        let out = namebias().arg("-c").arg(&config).arg(cmd).output().unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = dir.path().join("out");
    assert!(run.join("manifest.json").exists());
    assert!(!run.join(".lock").exists(), "lock released");
    assert!(run.join("analysis/white_M_interaction.svg").exists());
    assert!(run.join("analysis/asian_F_anova.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("analysis/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiments"].as_array().unwrap().len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["pair_file_sha256"].as_str().unwrap().len(), 64);
}
