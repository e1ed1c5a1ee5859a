use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dyadic-cmc"))
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn simulate_fit_assess_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traj = p(dir.path(), "t.jsonl");
    let model = p(dir.path(), "m.json");
    let losses = p(dir.path(), "l.csv");
    assert_eq!(
        run(&[
            "simulate",
            "--family",
            "comparison",
            "--param",
            "i0=1",
            "--n",
            "3000",
            "--seed",
            "5",
            "--out",
            &traj
        ])
        .0,
        0
    );
    assert_eq!(
        std::fs::read_to_string(&traj).unwrap().lines().count(),
        3001
    );
    assert_eq!(
        run(&[
            "fit",
            "--input",
            &traj,
            "--bounds",
            "0:1,0:1",
            "--depth",
            "3",
            "--penalty",
            "1",
            "--out",
            &model
        ])
        .0,
        0
    );
    let text = std::fs::read_to_string(&model).unwrap();
    let kernel = dyadic_cmc::histogram::PiecewiseKernel::from_json(&text).unwrap();
    assert!(
        kernel.partition().len() > 1,
        "a strongly structured kernel should be split"
    );
    assert_eq!(
        run(&[
            "assess",
            "--model",
            &model,
            "--input",
            &traj,
            "--against",
            &model,
            "--family",
            "comparison",
            "--param",
            "i0=1",
            "--out",
            &losses
        ])
        .0,
        0
    );
    let csv = std::fs::read_to_string(&losses).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "loss_name,value,n,l,L,seed");
    let self_loss: f64 = lines
        .next()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(self_loss, 0.0);
    assert!(lines
        .next()
        .unwrap()
        .starts_with("empirical_hellinger_sq_truth"));
}

#[test]
fn csv_trajectories_with_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let traj = p(dir.path(), "t.csv");
    let model = p(dir.path(), "m.json");
    let mut body = String::from("x0,a0\n");
    for i in 0..200 {
        body.push_str(&format!(
            "{},{}\n",
            (i * 7 % 13) as f64 + 0.5,
            (i % 3) as f64
        ));
    }
    std::fs::write(&traj, body).unwrap();
    assert_eq!(
        run(&["fit", "--input", &traj, "--bounds", "0:13,0:3", "--out", &model]).0,
        0
    );
    let full = dyadic_cmc::histogram::PiecewiseKernel::load(Path::new(&model)).unwrap();
    assert_eq!(full.metadata.retained, 199);
    let (code, err) = run(&[
        "fit", "--input", &traj, "--bounds", "0:5,0:3", "--out", &model,
    ]);
    assert_eq!(code, 0, "{err}");
    let part = dyadic_cmc::histogram::PiecewiseKernel::load(Path::new(&model)).unwrap();
    assert!(
        part.metadata.retained < 100,
        "records outside the bounds are dropped"
    );
}

#[test]
fn diagnostics_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    for what in ["kac", "rho-star", "mixing", "occupation"] {
        let out = p(dir.path(), &format!("{what}.csv"));
        let (code, err) = run(&[
            "diagnose",
            "--what",
            what,
            "--family",
            "fully-connected",
            "--param",
            "eps0=0.4",
            "--n",
            "50",
            "--out",
            &out,
        ]);
        assert_eq!(code, 0, "{what}: {err}");
        assert!(std::fs::read_to_string(&out).unwrap().lines().count() >= 2);
    }
    let kac = std::fs::read_to_string(p(dir.path(), "kac.csv")).unwrap();
    assert!(kac
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(3) == Some("true")));
}

#[test]
fn mixing_rejects_history_dependent_controls() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = run(&[
        "diagnose",
        "--what",
        "mixing",
        "--family",
        "minorized",
        "--out",
        &p(dir.path(), "x.csv"),
    ]);
    assert_eq!(code, 6, "{err}");
    assert!(err.contains("Markov"));
}

#[test]
fn remainder_reports_missing_fields() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = p(dir.path(), "i.json");
    std::fs::write(
        &inputs,
        r#"{"flavor":"stationary","l":2,"n":1000,"d1":1,"d2":1,"c_p":1.0}"#,
    )
    .unwrap();
    let (code, err) = run(&[
        "diagnose",
        "--what",
        "remainder",
        "--inputs",
        &inputs,
        "--out",
        &p(dir.path(), "r.csv"),
    ]);
    assert_eq!(code, 6);
    assert!(err.contains("c_delta"), "{err}");
}

#[test]
fn experiment_risk_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "c.json");
    let out = p(dir.path(), "r.csv");
    std::fs::write(
        &cfg,
        r#"{"family":"step","experiment":{"kind":"risk"},"n_grid":[128,256],"depth":2,"replications":3,"seed":9}"#,
    )
    .unwrap();
    assert_eq!(run(&["experiment", "--config", &cfg, "--out", &out]).0, 0);
    let first = std::fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().count(), 7);
    assert_eq!(run(&["experiment", "--config", &cfg, "--out", &out]).0, 0);
    let second = std::fs::read_to_string(&out).unwrap();
    let strip = |s: &str| {
        s.lines()
            .map(|l| l.rsplitn(3, ',').nth(2).unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        strip(&first),
        strip(&second),
        "same seed gives the same table up to timings"
    );
}

#[test]
fn error_classes_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(
        run(&[
            "fit",
            "--input",
            &p(dir.path(), "missing.jsonl"),
            "--out",
            &p(dir.path(), "m.json")
        ])
        .0,
        7
    );
    assert_eq!(
        run(&[
            "simulate",
            "--family",
            "nope",
            "--n",
            "10",
            "--out",
            &p(dir.path(), "t.jsonl")
        ])
        .0,
        6
    );
    let bad = p(dir.path(), "bad.jsonl");
    std::fs::write(
        &bad,
        "{\"x\":[0.1],\"a\":[0.2]}\n{\"x\":[0.1,0.3],\"a\":[0.2]}\n",
    )
    .unwrap();
    assert_eq!(
        run(&["fit", "--input", &bad, "--out", &p(dir.path(), "m.json")]).0,
        3
    );
    let model = p(dir.path(), "m.json");
    std::fs::write(&model, r#"{"partition":[{"path":[],"depth":0}],"values":[-1.0],"metadata":{"d1":1,"d2":1,"n":1,"retained":1,"depth_bound":0}}"#).unwrap();
    let traj = p(dir.path(), "t.jsonl");
    run(&["simulate", "--family", "flip", "--n", "20", "--out", &traj]);
    assert_eq!(
        run(&[
            "assess",
            "--model",
            &model,
            "--input",
            &traj,
            "--family",
            "flip",
            "--out",
            &p(dir.path(), "l.csv")
        ])
        .0,
        5
    );
}
