use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
seed = 3
output = "tiny"

[world]
width = 8
height = 8

[trainer]
envs = 2
train_length = [40, 60]
epsilon_decay_ticks = 100

[cmaes]
episodes_per_candidate = 1
episode_length = 20

[run]
checkpoint_every = 20
"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Sandbox {
        let s = Sandbox { dir: TempDir::new().unwrap() };
        s.write("tiny.cfg", TINY);
        s
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn write(&self, rel: &str, text: &str) -> PathBuf {
        let p = self.path(rel);
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_evolab"))
            .args(args)
            .current_dir(self.dir.path())
            .env("EVOLAB_OUT", self.path("out"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_with_line() {
    let s = Sandbox::new();
    s.write("bad.cfg", "[world]\nwidth = 8\nwidht = 3\n");
    let out = s.run(&["train-evdn", "bad.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.cfg:3"), "{}", stderr(&out));

    let out = s.run(&["train-evdn", "missing.cfg"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn same_seed_same_first_metrics() {
    let s = Sandbox::new();
    let text = TINY.replace("output = \"tiny\"", "output = \"b\"");
    s.write("b.cfg", &text);
    s.ok(&["train-evdn", "tiny.cfg", "--ticks", "100"]);
    s.ok(&["train-evdn", "b.cfg", "--ticks", "100"]);
    let a = s.read("out/tiny/metrics.csv");
    let b = s.read("out/b/metrics.csv");
    assert_eq!(a.lines().count(), 101);
    assert_eq!(a, b);
    let ja: serde_json::Value = serde_json::from_str(&s.read("out/tiny/run.json")).unwrap();
    let jb: serde_json::Value = serde_json::from_str(&s.read("out/b/run.json")).unwrap();
    assert_ne!(ja["config_hash"], jb["config_hash"]);
    assert_eq!(ja["seed"], 3);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let s = Sandbox::new();
    s.ok(&["train-evdn", "tiny.cfg", "--ticks", "60"]);
    let full = s.read("out/tiny/metrics.csv");
    fs::remove_dir_all(s.path("out")).unwrap();
    s.ok(&["train-evdn", "tiny.cfg", "--ticks", "40"]);
    s.ok(&["train-evdn", "tiny.cfg", "--ticks", "60", "--resume"]);
    assert_eq!(s.read("out/tiny/metrics.csv"), full);
    assert!(s.path("out/tiny/checkpoints/policy-4.evqn").exists());
    assert!(s.path("out/tiny/config.toml").exists());
}

#[test]
fn non_finite_training_exits_3_with_dump() {
    let s = Sandbox::new();
    let text = TINY.replace("[cmaes]", "[trainer.optimizer]\nkind = \"sgd\"\nlearning_rate = 1e200\n\n[cmaes]");
    s.write("nan.cfg", &text);
    let out = s.run(&["train-evdn", "nan.cfg", "--ticks", "50"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(s.path("out/tiny/numeric-failure.json").exists());
}

#[test]
fn cmaes_guard_rejects_large_mlp() {
    let s = Sandbox::new();
    s.write("big.cfg", "[cmaes.architecture]\nkind = \"large_mlp\"\nhidden = [256, 256, 256]\n");
    let out = s.run(&["train-cmaes", "big.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("parameter count exceeds CMA-ES guard"), "{}", stderr(&out));
}

#[test]
fn cmaes_resume_keeps_generation_counter() {
    let s = Sandbox::new();
    s.ok(&["train-cmaes", "tiny.cfg", "--generations", "2"]);
    s.ok(&["train-cmaes", "tiny.cfg", "--generations", "3", "--resume"]);
    let log = s.read("out/tiny/generations.csv");
    let gens: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(gens, ["0", "1", "2"]);
    assert!(s.path("out/tiny/checkpoints/family-0.evqn").exists());
}

#[test]
fn cmaes_selftest_exit_status() {
    let s = Sandbox::new();
    s.ok(&["cmaes-selftest", "--dim", "5"]);
    assert_eq!(code(&s.run(&["cmaes-selftest", "--generations", "5"])), 1);
}

#[test]
fn eval_is_reproducible_and_renders() {
    let s = Sandbox::new();
    let common = ["eval", "--config", "tiny.cfg", "--random", "--episodes", "1", "--seed", "7", "--length", "30"];
    s.ok(&[&common[..], &["--out", "e1", "--record", "1"]].concat());
    s.ok(&[&common[..], &["--out", "e2"]].concat());
    assert_eq!(s.read("e1/eval.csv"), s.read("e2/eval.csv"));
    let summary: serde_json::Value = serde_json::from_str(&s.read("e1/eval.json")).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);

    s.ok(&["render", "e1", "--out", "text"]);
    let text = s.read("text/frames.txt");
    assert!(text.starts_with("legend\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("tick ")).count(), 31);

    s.ok(&["render", "e1", "--format", "ppm", "--cell", "4", "--out", "ppm"]);
    let frames: Vec<_> = fs::read_dir(s.path("ppm"))
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    assert_eq!(frames.len(), 31);
    let bytes = fs::read(&frames[0]).unwrap();
    assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(bytes.len(), b"P6\n32 32\n255\n".len() + 32 * 32 * 3);
    assert!(s.path("ppm/legend.txt").exists());

    let out = s.run(&["render", "e1", "--episode", "3"]);
    assert_eq!(code(&out), 2);
}

fn trained(s: &Sandbox) -> PathBuf {
    s.ok(&["train-evdn", "tiny.cfg", "--ticks", "20"]);
    s.path("out/tiny/checkpoints")
}

fn arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn head_to_head_takes_four_pairs() {
    let s = Sandbox::new();
    let ck = trained(&s);
    let p0 = format!("{}=0", arg(&ck.join("policy-0.evqn")));
    let p1 = format!("{}=1", arg(&ck.join("policy-1.evqn")));
    let base = ["headtohead", "--config", "tiny.cfg", "--episodes", "3", "--length", "20", "--out", "h"];
    let three = [&base[..], &["--pair", &p0, "--pair", &p1, "--pair", "random=2"]].concat();
    assert_eq!(code(&s.run(&three)), 2);
    let dup = [&base[..], &["--pair", &p0, "--pair", &p1, "--pair", "random=2", "--pair", "random=2"]].concat();
    assert_eq!(code(&s.run(&dup)), 2);
    let four = [&base[..], &["--pair", &p0, "--pair", &p1, "--pair", "random=2", "--pair", "random=3"]].concat();
    s.ok(&four);
    let csv = s.read("h/headtohead.csv");
    assert_eq!(csv.lines().next().unwrap(), "episode,tick,family,size");
    let rows = csv.lines().count() - 1;
    // episodes end early once every family is extinct
    assert!(rows.is_multiple_of(4) && (3 * 4..=3 * 21 * 4).contains(&rows), "{rows}");
}

#[test]
fn ablate_and_drift_write_artifacts() {
    let s = Sandbox::new();
    let ck = arg(&trained(&s).join("policy-0.evqn"));
    s.ok(&["ablate", "--config", "tiny.cfg", "--checkpoint", &ck, "--episodes", "2", "--length", "20", "--out", "a"]);
    assert!(s.read("a/ablate.csv").starts_with("arm,episode,tick,family,size\n"));
    let summary: serde_json::Value = serde_json::from_str(&s.read("a/ablate.json")).unwrap();
    assert_eq!(summary["intra_attacks_masked"], 0);

    s.ok(&["drift", "--config", "tiny.cfg", "--random", "--episodes", "2", "--length", "20", "--out", "d"]);
    let csv = s.read("d/drift.csv");
    assert!(csv.starts_with("arm,episode,tick,entropy\n"));
    assert!(csv.contains("kin_masked,"));
}

#[test]
fn architecture_mismatch_exits_2() {
    let s = Sandbox::new();
    let ck = arg(&trained(&s).join("policy-0.evqn"));
    let text = TINY.replace("[cmaes]", "[trainer.architecture]\nkind = \"small_conv\"\nchannels = 4\nhidden = 16\n\n[cmaes]");
    s.write("other.cfg", &text);
    let out = s.run(&["eval", "--config", "other.cfg", "--checkpoint", &ck, "--episodes", "1", "--out", "m"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("architecture"), "{}", stderr(&out));
}
