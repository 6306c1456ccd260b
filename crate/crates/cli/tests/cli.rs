use std::path::Path;
use std::process::Command;

const MAPPINGS: &str = "V1(a,b) := wisc_0(a,b,c,d,e,f) & c < 10
V2(a,b) := wisc_1(a,b,c,d,e,f) & c < 30
V3(a,c) := wisc_0(a,b,c,d,e,f)
V4(a) := wisc_1(a,b,c,d,e,f) & d < 50
P(f(a),g(b)) <- V1(a,b)
P(f(a),h(b)) <- V2(a,b)
R(f(a),k(c)) <- V3(a,c)
A(f(a)) <- V4(a)
";

fn obda(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_obda")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn plan_and_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("m.txt"), MAPPINGS).unwrap();
    std::fs::write(d.join("t.txt"), "P subPropertyOf S\n").unwrap();
    std::fs::write(d.join("q.txt"), "q(x,y,z) :- A(x), S(x,y), R(x,z)\n").unwrap();
    obda(d, &["bench", "gen", "--rows", "200", "--tables", "2", "--out", "data"]);
    let m = ["--mappings", "m.txt", "--tbox", "t.txt"];
    obda(d, &[&["collect-stats"][..], &m, &["--data", "data", "--out", "stats.json"]].concat());

    let est: serde_json::Value =
        serde_json::from_str(&obda(d, &[&["estimate", "--query", "q.txt", "--stats", "stats.json"][..], &m].concat())).unwrap();
    let total = est["estimate"]["total"].as_u64().unwrap();

    let listing = obda(
        d,
        &[&["plan", "--query", "q.txt", "--stats", "stats.json", "--report", "plan.json", "--emit-sql", "sql"][..], &m].concat(),
    );
    assert!(listing.starts_with('*'));
    let n_plans = listing.lines().count();
    assert_eq!(std::fs::read_dir(d.join("sql")).unwrap().count(), n_plans);

    let evals = obda(d, &["eval", "--plan", "plan.json", "--data", "data", "--all"]);
    assert_eq!(evals.lines().count(), n_plans);
    for line in evals.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["answers"].as_u64().unwrap(), total);
    }
}

#[test]
fn unknown_dialect_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("m.txt"), MAPPINGS).unwrap();
    std::fs::write(d.join("q.txt"), "q(x) :- A(x)\n").unwrap();
    obda(d, &["bench", "gen", "--rows", "100", "--tables", "2", "--out", "data"]);
    obda(d, &["collect-stats", "--mappings", "m.txt", "--data", "data", "--out", "stats.json"]);
    let out = Command::new(env!("CARGO_BIN_EXE_obda"))
        .current_dir(d)
        .args(["plan", "--query", "q.txt", "--mappings", "m.txt", "--stats", "stats.json", "--dialect", "oracle"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
