use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use s2s_core::nn::{build_part_network, init_params_with, load_model, InitConfig, ScaleConfig};

fn s2s(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2s"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run s2s")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--set",
    "synth.identities=6",
    "--set",
    "ids_per_batch=3",
    "--set",
    "init.conv_std=0.1",
    "--set",
    "init.fc_std=0.1",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter()
        .chain(SMALL)
        .chain(extra)
        .map(|s| s.to_string())
        .collect()
}

fn run(dir: &Path, base: &[&str], extra: &[&str]) -> Output {
    let args = with(base, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    s2s(dir, &refs)
}

fn fixture(dir: &Path, extra: &[&str]) {
    let o = run(dir, &["synth", "--out", "d", "--split", "0.5"], extra);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn missing_data_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let o = s2s(t.path(), &["train"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--data"));
}

#[test]
fn trained_model_is_loadable_by_eval() {
    let t = tempfile::tempdir().unwrap();
    fixture(t.path(), &[]);
    let o = run(
        t.path(),
        &[
            "train",
            "--data",
            "d/train/manifest.csv",
            "--out",
            "run",
            "--iters",
            "30",
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let history = fs::read_to_string(t.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);
    let o = s2s(
        t.path(),
        &[
            "eval",
            "--model",
            "run/model.s2sm",
            "--data",
            "d/test/manifest.csv",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cmc = fs::read_to_string(t.path().join("ev/cmc.csv")).unwrap();
    assert_eq!(cmc.lines().next(), Some("rank,match_rate"));
    assert_eq!(cmc.lines().nth(1), Some("1,1.0000"));
    let summary = fs::read_to_string(t.path().join("ev/summary.csv")).unwrap();
    assert!(summary.starts_with("protocol,metric,value\nsingle,top1,1.000000\n"));
}

#[test]
fn zero_step_keeps_the_initial_parameters() {
    let t = tempfile::tempdir().unwrap();
    fixture(t.path(), &[]);
    let o = run(
        t.path(),
        &[
            "train",
            "--data",
            "d/train/manifest.csv",
            "--out",
            "run",
            "--iters",
            "1",
            "--lr",
            "0",
            "--seed",
            "7",
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let saved = load_model(t.path().join("run/model.s2sm")).unwrap();
    let init = init_params_with(
        build_part_network(&ScaleConfig::desk()).unwrap(),
        7,
        &InitConfig {
            conv_std: 0.1,
            fc_std: 0.1,
        },
    );
    assert_eq!(saved.params(), init.params());
}

#[test]
fn multi_query_on_single_probes_matches_single_query() {
    let t = tempfile::tempdir().unwrap();
    fixture(t.path(), &["--set", "synth.per_view=1"]);
    let o = run(
        t.path(),
        &[
            "train",
            "--data",
            "d/train/manifest.csv",
            "--out",
            "run",
            "--iters",
            "5",
        ],
        &["--set", "samples_per_view=1", "--set", "k_marginal=1"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval = |protocol: &str, out: &str| {
        let o = s2s(
            t.path(),
            &[
                "eval",
                "--model",
                "run/model.s2sm",
                "--data",
                "d/test/manifest.csv",
                "--protocol",
                protocol,
                "--out",
                out,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let cmc = fs::read_to_string(t.path().join(out).join("cmc.csv")).unwrap();
        let summary = fs::read_to_string(t.path().join(out).join("summary.csv")).unwrap();
        let values: Vec<String> = summary
            .lines()
            .skip(1)
            .map(|l| l.split_once(',').unwrap().1.to_string())
            .collect();
        (cmc, values)
    };
    assert_eq!(eval("single", "s"), eval("multi", "m"));
}

#[test]
fn corrupt_model_fails_to_load() {
    let t = tempfile::tempdir().unwrap();
    fixture(t.path(), &[]);
    fs::write(t.path().join("bad.s2sm"), b"XXXXnot a model").unwrap();
    let o = s2s(
        t.path(),
        &[
            "eval",
            "--model",
            "bad.s2sm",
            "--data",
            "d/test/manifest.csv",
        ],
    );
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("magic"));
}

#[test]
fn gradcheck_passes_and_filters() {
    let t = tempfile::tempdir().unwrap();
    let o = s2s(t.path(), &["gradcheck", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    for term in [
        "class-identity",
        "triplet",
        "pairwise",
        "regularization",
        "network",
    ] {
        assert!(stdout(&o).contains(term));
    }
    assert_eq!(
        fs::read_to_string(t.path().join("g/gradcheck.csv"))
            .unwrap()
            .lines()
            .count(),
        6
    );
    let o = s2s(t.path(), &["gradcheck", "--term", "pairwise"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("pairwise"));
}

#[test]
fn gradcheck_errors() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&s2s(t.path(), &["gradcheck", "--eps", "0"])), 2);
    assert_eq!(code(&s2s(t.path(), &["gradcheck", "--term", "bogus"])), 2);
    let o = s2s(
        t.path(),
        &["gradcheck", "--term", "triplet", "--threshold", "1e-300"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("triplet"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let t = tempfile::tempdir().unwrap();
    fs::write(
        t.path().join("run.cfg"),
        "# test\nlearning_rate = 0.02\nlerning_rate = 0.1\n",
    )
    .unwrap();
    let o = s2s(t.path(), &["synth", "--config", "run.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("run.cfg:3"));
    fs::write(t.path().join("bad.cfg"), "momentum = 2\n").unwrap();
    let o = s2s(t.path(), &["train", "--config", "bad.cfg", "--data", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn help_lists_every_key_with_its_default() {
    let t = tempfile::tempdir().unwrap();
    let o = s2s(t.path(), &["train", "--help"]);
    assert_eq!(code(&o), 0);
    let help = stdout(&o);
    for (key, value) in [
        ("learning_rate", "0.01"),
        ("alpha", "0.1"),
        ("beta", "0.01"),
        ("lambda", "0.15"),
        ("mu", "0.6"),
        ("nu", "0.4"),
        ("eta", "0.001"),
        ("c_p", "0.175"),
        ("m_p", "0.325"),
        ("m_t", "1"),
    ] {
        let line = help
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("{key} ")))
            .unwrap_or_else(|| panic!("{key} missing from help"));
        assert!(line.contains(&format!("= {value} ")), "{line}");
    }
}

#[test]
fn runs_are_deterministic_given_the_seed() {
    let t = tempfile::tempdir().unwrap();
    fixture(t.path(), &[]);
    for out in ["a", "b"] {
        let o = run(
            t.path(),
            &[
                "train",
                "--data",
                "d/train/manifest.csv",
                "--out",
                out,
                "--iters",
                "15",
            ],
            &[],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |p: &str| fs::read(t.path().join(p)).unwrap();
    assert_eq!(read("a/history.csv"), read("b/history.csv"));
    assert_eq!(read("a/model.s2sm"), read("b/model.s2sm"));
}

#[test]
fn plot_extracts_a_column() {
    let t = tempfile::tempdir().unwrap();
    fs::write(
        t.path().join("cmc.csv"),
        "rank,match_rate\n1,0.5000\n2,1.0000\n",
    )
    .unwrap();
    let o = s2s(t.path(), &["plot", "--input", "cmc.csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "rank,match_rate\n1,0.5\n2,1\n");
    assert!(stderr(&o).contains("match_rate"));
    let o = s2s(
        t.path(),
        &["plot", "--input", "cmc.csv", "--column", "nope"],
    );
    assert_eq!(code(&o), 3);
}
