use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prefopt_cli::output::load_policy;
use prefopt_core::exact::{expected_reward, kl_to_ref};
use prefopt_core::table::uniform_weights;
use prefopt_core::taskgen::load_instance;

fn prefopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefopt"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "gen",
        "--prompts",
        "4",
        "--completions",
        "5",
        "--pairs",
        "2000",
        "--seed",
        "3",
        "--out",
        "d",
    ];
    args.extend_from_slice(extra);
    assert_eq!(code(&prefopt(dir, &args)), 0);
}

/// Data rows of a CSV file, header checked and dropped.
fn rows(path: &Path, header: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(header));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn saved_policy_reproduces_final_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    let out = prefopt(
        tmp.path(),
        &[
            "train",
            "--instance",
            "d/instance.json",
            "--method",
            "dpo",
            "--steps",
            "300",
            "--out",
            "t",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = rows(
        &tmp.path().join("t/metrics.csv"),
        "step,loss,kl,expected_reward,aux_margin,aux_weight_mean",
    );
    let last = metrics.last().unwrap();
    assert_eq!(last[0], "300");
    let inst = load_instance(tmp.path().join("d/instance.json")).unwrap();
    let pi = load_policy(&tmp.path().join("t/policy.json")).unwrap();
    let w = uniform_weights(inst.n_prompts());
    assert!((kl_to_ref(&pi, inst.pi_ref(), &w).unwrap() - num(&last[2])).abs() <= 1e-9);
    assert!((expected_reward(&pi, inst.reward_true(), &w).unwrap() - num(&last[3])).abs() <= 1e-9);
}

#[test]
fn identical_flags_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    let run = |out: &str| {
        let args = [
            "train",
            "--instance",
            "d/instance.json",
            "--dataset",
            "d/dataset.jsonl",
            "--mode",
            "sampled",
            "--steps",
            "200",
            "--out",
            out,
        ];
        assert_eq!(code(&prefopt(tmp.path(), &args)), 0);
        fs::read(tmp.path().join(out).join("metrics.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&prefopt(tmp.path(), &["gen", "--prompts", "0", "--out", "x"])), 2);
    assert_eq!(code(&prefopt(tmp.path(), &["gen", "--no-such-flag", "1"])), 2);
    assert_eq!(code(&prefopt(tmp.path(), &["train", "--method", "dpo"])), 2);
    assert_eq!(code(&prefopt(tmp.path(), &["frontier", "--beta-sweep", ""])), 2);
    assert_eq!(code(&prefopt(tmp.path(), &["train", "--config", "missing.cfg"])), 2);
    assert_eq!(code(&prefopt(tmp.path(), &["--help"])), 0);
}

#[test]
fn sft_on_rankings_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &["--dataset-kind", "rankings", "--rank-k", "3"]);
    let out = prefopt(
        tmp.path(),
        &[
            "train",
            "--instance",
            "d/instance.json",
            "--dataset",
            "d/dataset.jsonl",
            "--method",
            "sft",
            "--out",
            "t",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rankings"));
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    let args = [
        "train",
        "--instance",
        "d/instance.json",
        "--optimizer",
        "rmsprop",
        "--lr",
        "1e308",
        "--warmup-steps",
        "0",
        "--steps",
        "20",
        "--out",
        "t",
    ];
    assert_eq!(code(&prefopt(tmp.path(), &args)), 3);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    fs::write(
        tmp.path().join("run.cfg"),
        "# soft DPO\ninstance = d/instance.json\nsteps = 10\neval_every = 5\nout = t\n",
    )
    .unwrap();
    assert_eq!(
        code(&prefopt(tmp.path(), &["train", "--config", "run.cfg", "--steps", "20"])),
        0
    );
    let metrics = rows(
        &tmp.path().join("t/metrics.csv"),
        "step,loss,kl,expected_reward,aux_margin,aux_weight_mean",
    );
    let steps: Vec<&str> = metrics.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(steps, ["0", "5", "10", "15", "20"]);
}

#[test]
fn frontier_rows_track_the_exact_frontier() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    let args = [
        "frontier",
        "--instance",
        "d/instance.json",
        "--methods",
        "dpo",
        "--steps",
        "3000",
        "--lr",
        "0.5",
        "--out",
        "f",
    ];
    assert_eq!(code(&prefopt(tmp.path(), &args)), 0);
    let rows = rows(&tmp.path().join("f/frontier.csv"), "method,beta,kl,expected_reward");
    let (exact, dpo): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r[0] == "exact");
    assert_eq!(exact.len(), 4);
    assert!(exact.windows(2).all(|w| num(&w[1][2]) <= num(&w[0][2])));
    for (e, d) in exact.iter().zip(&dpo) {
        assert_eq!(e[1], d[1]);
        assert!((num(&e[2]) - num(&d[2])).abs() <= 1e-2 && (num(&e[3]) - num(&d[3])).abs() <= 1e-2);
    }
}

#[test]
fn sweep_keeps_every_run() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "sweep",
        "--prompts",
        "3",
        "--completions",
        "4",
        "--methods",
        "dpo,unlikelihood",
        "--beta-sweep",
        "0.1,1",
        "--alpha-sweep",
        "0.5,1",
        "--steps",
        "100",
        "--out",
        "s",
    ];
    assert_eq!(code(&prefopt(tmp.path(), &args)), 0);
    let rows = rows(
        &tmp.path().join("s/sweep.csv"),
        "method,beta,alpha,final_loss,kl,expected_reward,run_dir",
    );
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(tmp.path().join("s").join(&r[6]).join("metrics.csv").is_file());
        assert!(tmp.path().join("s").join(&r[6]).join("policy.json").is_file());
    }
}

#[test]
fn eval_reports_win_rates_with_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    let header = "temperature,wins_a,trials,win_rate,ci_lo,ci_hi";
    let args = [
        "eval",
        "--instance",
        "d/instance.json",
        "--policy-a",
        "ref",
        "--policy-b",
        "ref",
        "--out",
        "self",
    ];
    assert_eq!(code(&prefopt(tmp.path(), &args)), 0);
    for r in rows(&tmp.path().join("self/winrate.csv"), header) {
        assert!(num(&r[4]) <= 0.5 && 0.5 <= num(&r[5]), "{r:?}");
    }
    let args = [
        "eval",
        "--instance",
        "d/instance.json",
        "--policy-a",
        "optimal:0.05",
        "--policy-b",
        "ref",
        "--out",
        "opt",
    ];
    assert_eq!(code(&prefopt(tmp.path(), &args)), 0);
    let rows = rows(&tmp.path().join("opt/winrate.csv"), header);
    let t0 = rows.iter().find(|r| r[0] == "0").unwrap();
    assert_eq!(t0[4], t0[5]);
    let t1 = rows.iter().find(|r| r[0] == "1").unwrap();
    assert!(num(&t1[3]) > 0.5 && num(&t1[4]) > 0.5, "{t1:?}");
}

#[test]
fn eval_rejects_mismatched_policy_shape() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), &[]);
    assert_eq!(
        code(&prefopt(
            tmp.path(),
            &["train", "--instance", "d/instance.json", "--steps", "10", "--out", "t"]
        )),
        0
    );
    assert_eq!(
        code(&prefopt(
            tmp.path(),
            &["gen", "--prompts", "2", "--completions", "3", "--out", "other"]
        )),
        0
    );
    let args = [
        "eval",
        "--instance",
        "other/instance.json",
        "--policy-a",
        "t/policy.json",
        "--policy-b",
        "ref",
        "--out",
        "e",
    ];
    assert_eq!(code(&prefopt(tmp.path(), &args)), 2);
}

#[test]
fn verify_reports_are_reproducible_and_catch_injected_bugs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = prefopt(tmp.path(), &["verify", "--seed", "7", "--instances", "4"]);
    let b = prefopt(tmp.path(), &["verify", "--seed", "7", "--instances", "4"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let broken = prefopt(tmp.path(), &["verify", "--instances", "4", "--break", "shift"]);
    assert_eq!(code(&broken), 1);
    let text = String::from_utf8_lossy(&broken.stdout);
    assert!(text.contains("FAIL preference_shift_invariance seed="), "{text}");
}
