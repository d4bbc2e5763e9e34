//! Drives the built binary through full workflows in temp directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dni_core::dnib::{ColumnId, DnibReader};

fn dni() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dni"));
    c.env_remove("DNI_CACHE_DIR");
    c
}

fn run_ok(c: &mut Command) -> Output {
    let out = c.output().expect("spawn dni");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(c: &mut Command) -> Output {
    let out = c.output().expect("spawn dni");
    assert!(!out.status.success(), "expected failure, got success");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.lines().any(|l| l.starts_with("error: ")),
        "stderr missing error prefix: {stderr}"
    );
    out
}

const GRAMMAR: &str = "\
S -> a S [0.4]
S -> b S [0.3]
S -> ( S ) [0.2]
S -> [0.1]
";

const HYPS: &str = "\
[[hypothesis]]
id = \"h_a\"
kind = \"keyword\"
keyword = \"a\"

[[hypothesis]]
id = \"h_ab\"
kind = \"keyword\"
keyword = \"ab\"
";

const MODELS: &str = "\
[[model]]
id = \"m1\"
kind = \"specialized\"
n_units = 6
seed = 4
s_units = [0, 1]
w = 0.9
sigma = 0.05
target_hyp = \"h_a\"

[[group]]
id = \"g1\"
model = \"m1\"
units = [0, 1, 2, 3, 4, 5]
";

/// Writes grammar/data/hypotheses/models/config into `dir` and returns the
/// config path. `extra` is appended to the config verbatim.
fn fixture(dir: &Path, extra: &str) -> PathBuf {
    std::fs::write(dir.join("grammar.g"), GRAMMAR).unwrap();
    run_ok(dni().args([
        "gen-data",
        "--grammar",
        dir.join("grammar.g").to_str().unwrap(),
        "--n",
        "40",
        "--n-s",
        "12",
        "--seed",
        "5",
        "--out",
        dir.join("data.txt").to_str().unwrap(),
    ]));
    std::fs::write(dir.join("hyps.toml"), HYPS).unwrap();
    std::fs::write(dir.join("models.toml"), MODELS).unwrap();
    let config = format!(
        "[paths]\n\
         dataset = \"data.txt\"\n\
         hypotheses = \"hyps.toml\"\n\
         models = \"models.toml\"\n\
         output = \"results.csv\"\n\
         \n\
         [dataset]\n\
         n_s = 12\n\
         \n\
         [engine]\n\
         n_b = 32\n\
         seed = 7\n\
         \n\
         [[score]]\n\
         id = \"corr\"\n\
         measure = \"pearson\"\n\
         \n\
         [[score]]\n\
         id = \"clf\"\n\
         measure = \"logreg\"\n\
         {extra}"
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn print_config_is_valid_toml() {
    let out = run_ok(dni().arg("--print-config"));
    let text = String::from_utf8(out.stdout).unwrap();
    let value: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(value["engine"]["n_b"].as_integer(), Some(512));
    assert_eq!(value["engine"]["strategy"].as_str(), Some("streaming"));
}

#[test]
fn gen_data_is_seed_deterministic_and_rejects_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.g"), GRAMMAR).unwrap();
    let g = dir.path().join("g.g");
    let gen = |out: &Path, seed: &str| {
        run_ok(dni().args([
            "gen-data",
            "--grammar",
            g.to_str().unwrap(),
            "--n",
            "25",
            "--n-s",
            "10",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]));
        std::fs::read(out).unwrap()
    };
    let a = gen(&dir.path().join("a.txt"), "5");
    let b = gen(&dir.path().join("b.txt"), "5");
    let c = gen(&dir.path().join("c.txt"), "6");
    assert_eq!(a, b, "same seed, same bytes");
    assert_ne!(a, c, "different seed should change the sample");
    let lines = String::from_utf8(a).unwrap();
    assert_eq!(lines.lines().count(), 25);
    assert!(lines.lines().all(|l| l.chars().count() == 10), "padded to n_s");

    run_err(dni().args([
        "gen-data",
        "--grammar",
        g.to_str().unwrap(),
        "--n",
        "0",
        "--n-s",
        "10",
        "--out",
        dir.path().join("z.txt").to_str().unwrap(),
    ]));
}

#[test]
fn inspect_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    let results = dir.path().join("results.csv");
    run_ok(dni().args(["inspect", "--config", config.to_str().unwrap()]));
    let first = std::fs::read(&results).unwrap();
    run_ok(dni().args(["inspect", "--config", config.to_str().unwrap()]));
    let second = std::fs::read(&results).unwrap();
    assert_eq!(first, second);

    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model_id,score_id,hyp_id,unit_id,unit_score,group_score,n_symbols_used,converged,status"
    );
    // 6 pearson rows and 1 group + 6 unit logreg rows, per hypothesis.
    assert_eq!(lines.count(), (6 + 7) * 2);
}

#[test]
fn inspect_task_errors_exit_nonzero_but_still_write_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    // Point one hypothesis at a file that does not exist.
    std::fs::write(
        dir.path().join("hyps.toml"),
        format!(
            "{HYPS}\n[[hypothesis]]\nid = \"h_bad\"\nkind = \"external-file\"\npath = \"missing.dnib\"\n"
        ),
    )
    .unwrap();
    let out = run_err(dni().args(["inspect", "--config", config.to_str().unwrap()]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("task errors"), "{stderr}");
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(text.lines().any(|l| l.contains("h_bad") && l.contains("error")));
    assert!(text.lines().any(|l| l.contains("h_a") && l.ends_with("ok")));
}

#[test]
fn query_subcommand_runs_a_catalog_query() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    let cat = dir.path().join("catalog");
    std::fs::create_dir(&cat).unwrap();
    std::fs::write(cat.join("models.csv"), "mid,epoch\nm1,1\nm1,2\nm1,3\n").unwrap();
    let mut units = String::from("uid,mid,layer\n");
    for u in 0..6 {
        units.push_str(&format!("{u},m1,0\n"));
    }
    std::fs::write(cat.join("units.csv"), units).unwrap();
    std::fs::write(cat.join("hypotheses.csv"), "h,name\nh_a,akey\nh_ab,abkey\n").unwrap();
    std::fs::write(cat.join("inputs.csv"), "seq\nx\n").unwrap();

    let out_csv = dir.path().join("query.csv");
    let out = run_ok(dni().args([
        "query",
        "--config",
        config.to_str().unwrap(),
        "--catalog",
        cat.to_str().unwrap(),
        "--print-ast",
        "--out",
        out_csv.to_str().unwrap(),
        "--query",
        "SELECT M.epoch, S.uid INSPECT U.uid AND H.h OVER D.seq AS S \
         FROM models M, units U, hypotheses H, inputs D \
         WHERE M.mid = U.mid AND H.name = 'akey' \
         GROUP BY M.epoch HAVING S.unit_score > 0.8",
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("INSPECT U.uid AND H.h"), "--print-ast output: {stdout}");

    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "M.epoch,S.uid");
    // Same checkpoint in every epoch group, so the per-epoch survivor sets
    // must agree; the specialized units always pass the cut.
    let mut per_epoch: Vec<Vec<&str>> = vec![Vec::new(); 3];
    for row in lines {
        let (epoch, uid) = row.split_once(',').unwrap();
        per_epoch[epoch.parse::<usize>().unwrap() - 1].push(uid);
    }
    assert!(!per_epoch[0].is_empty());
    assert_eq!(per_epoch[0], per_epoch[1], "{per_epoch:?}");
    assert_eq!(per_epoch[1], per_epoch[2], "{per_epoch:?}");
    assert!(per_epoch[0].contains(&"0") && per_epoch[0].contains(&"1"), "{per_epoch:?}");
}

#[test]
fn bench_emits_three_phases_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    let out_csv = dir.path().join("bench.csv");
    run_ok(dni().args([
        "bench",
        "--config",
        config.to_str().unwrap(),
        "--strategies",
        "naive,streaming",
        "--out",
        out_csv.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,phase,seconds,blocks_read");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 3);
    for strategy in ["naive", "streaming"] {
        for phase in ["unit-extract", "hyp-extract", "inspect"] {
            assert!(
                rows.iter().any(|r| r[0] == strategy && r[1] == phase),
                "missing {strategy}/{phase}"
            );
        }
    }
}

#[test]
fn extract_writes_a_readable_behavior_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    let dnib = dir.path().join("m1.dnib");
    run_ok(dni().args([
        "extract",
        "--config",
        config.to_str().unwrap(),
        "--model",
        "m1",
        "--units",
        "0,2",
        "--out",
        dnib.to_str().unwrap(),
    ]));
    let mut reader = DnibReader::open(&dnib).unwrap();
    assert_eq!(reader.header().n_records, 40);
    assert_eq!(reader.header().n_s, 12);
    assert_eq!(reader.header().columns, vec![ColumnId::Unit(0), ColumnId::Unit(2)]);
    let block = reader.read_records::<f64>(0, 5, &[ColumnId::Unit(2)]).unwrap();
    assert_eq!(block.column(0).len(), 5 * 12);
    assert!(block.column(0).iter().all(|v| v.is_finite()));
}

#[test]
fn verify_emits_a_json_report_with_control() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    let out = run_ok(dni().args([
        "verify",
        "--config",
        config.to_str().unwrap(),
        "--model",
        "m1",
        "--hyp",
        "h_a",
        "--units",
        "0,1",
        "--samples",
        "32",
        "--control",
    ]));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["hyp_id"], "h_a");
    assert!(report["silhouette"].as_f64().unwrap().is_finite());
    assert!(report["control_silhouette"].as_f64().is_some());
    assert_eq!(report["unit_ids"], serde_json::json!([0, 1]));
}

#[test]
fn cache_spills_under_env_override_and_clears() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path(), "");
    // Add a spill directory to the generated config.
    let config_text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("[paths]\n", "[paths]\ncache_dir = \"cache_a\"\n");
    std::fs::write(&config, config_text).unwrap();

    let env_cache = dir.path().join("cache_env");
    run_ok(
        dni()
            .args(["inspect", "--config", config.to_str().unwrap()])
            .env("DNI_CACHE_DIR", &env_cache),
    );
    let count = |d: &Path| -> usize {
        match std::fs::read_dir(d) {
            Ok(rd) => rd
                .filter(|e| {
                    e.as_ref().unwrap().path().extension().is_some_and(|x| x == "dnib")
                })
                .count(),
            Err(_) => 0,
        }
    };
    assert!(count(&env_cache) > 0, "env cache dir should hold spilled entries");
    assert_eq!(count(&dir.path().join("cache_a")), 0, "env override wins over config");

    // Without the env var the config's cache_dir is used.
    run_ok(dni().args(["inspect", "--config", config.to_str().unwrap()]));
    assert!(count(&dir.path().join("cache_a")) > 0);

    let out = run_ok(dni().args([
        "cache-clear",
        "--cache-dir",
        env_cache.to_str().unwrap(),
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("removed "), "{stdout}");
    assert_eq!(count(&env_cache), 0);

    // Clearing via the config path removes the other copy.
    run_ok(dni().args(["cache-clear", "--config", config.to_str().unwrap()]));
    assert_eq!(count(&dir.path().join("cache_a")), 0);
}
