use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deep_dpp::eval::EvalReport;
use deep_dpp::model_file::{read_embeddings_csv, ModelFile};
use deep_dpp::{Catalog, EmbeddingMatrix};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deep-dpp"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn deep-dpp")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth_planted(dir: &Path, name: &str, seed: &str) -> PathBuf {
    ok(&["synth", "planted", "--n", "8", "--k", "3", "--count", "1500", "--seed", seed, "--out", name], dir);
    dir.join(name)
}

fn train_small(dir: &Path, baskets: &str, out: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "train", "--baskets", baskets, "--k", "4", "--max-iter", "20", "--test-count", "300", "--validation-count",
        "100", "--out", out,
    ];
    args.extend_from_slice(extra);
    ok(&args, dir)
}

fn load(path: &Path) -> ModelFile {
    ModelFile::read(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn missing_baskets_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--k", "4"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--baskets"));
}

#[test]
fn synth_is_reproducible_and_writes_truth() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_planted(dir.path(), "a.txt", "5");
    let b = synth_planted(dir.path(), "b.txt", "5");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(dir.path().join("a.truth.csv")).unwrap(), fs::read(dir.path().join("b.truth.csv")).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 1500);
    let (catalog, truth) = read_embeddings_csv(fs::File::open(dir.path().join("a.truth.csv")).unwrap()).unwrap();
    assert_eq!((catalog.len(), truth.rank_k()), (8, 3));

    ok(&["synth", "xor", "--n", "12", "--count", "50", "--out", "x.csv"], dir.path());
    let text = fs::read_to_string(dir.path().join("x.csv")).unwrap();
    assert!(text.starts_with("basket_id,item_id"));
    let attrs = fs::read_to_string(dir.path().join("x.truth.csv")).unwrap();
    assert_eq!(attrs.lines().count(), 13);
}

#[test]
fn train_eval_export_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    synth_planted(dir.path(), "data.txt", "1");
    let stdout = train_small(dir.path(), "data.txt", "model.json", &[]);
    assert!(stdout.contains("final validation log-likelihood"), "{stdout}");
    let log = fs::read_to_string(dir.path().join("model.log.csv")).unwrap();
    assert!(log.starts_with("iteration,train_loss,val_loglik"));
    assert_eq!(log.lines().count(), 21);

    let model = load(&dir.path().join("model.json"));
    assert!(model.forward_discrepancy().unwrap() <= 1e-12);

    let printed = ok(&["eval", "--model", "model.json", "--baskets", "data.txt", "--metric", "both"], dir.path());
    assert!(printed.contains("mpr:") && printed.contains("auc:"), "{printed}");
    for f in ["eval_mpr.json", "eval_mpr.csv", "eval_auc.json", "eval_auc.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let mpr = report(&dir.path().join("eval_mpr.json"));
    assert_eq!(mpr.count + mpr.skipped, 300);
    assert_eq!(report(&dir.path().join("eval_auc.json")).count, 300);

    ok(&["export", "--model", "model.json", "--out", "emb.csv"], dir.path());
    let (catalog, v) = read_embeddings_csv(fs::File::open(dir.path().join("emb.csv")).unwrap()).unwrap();
    assert_eq!(catalog, model.catalog);
    assert_eq!(v.matrix(), model.embeddings().unwrap().matrix());
}

fn report(path: &Path) -> EvalReport {
    serde_json::from_reader(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth_planted(dir.path(), "data.txt", "2");
    train_small(dir.path(), "data.txt", "m1.json", &["--seed", "4"]);
    train_small(dir.path(), "data.txt", "m2.json", &["--seed", "4"]);
    assert_eq!(fs::read(dir.path().join("m1.json")).unwrap(), fs::read(dir.path().join("m2.json")).unwrap());
    assert_eq!(fs::read(dir.path().join("m1.log.csv")).unwrap(), fs::read(dir.path().join("m2.log.csv")).unwrap());
}

#[test]
fn untrained_model_ranks_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "xor", "--n", "40", "--count", "3000", "--seed", "3", "--out", "x.txt"], dir.path());
    ok(
        &["train", "--baskets", "x.txt", "--k", "8", "--max-iter", "0", "--test-count", "1500", "--out", "random.json"],
        dir.path(),
    );
    ok(&["eval", "--model", "random.json", "--baskets", "x.txt", "--metric", "mpr", "--resamples", "50"], dir.path());
    let estimate = report(&dir.path().join("eval_mpr.json")).estimate;
    assert!((estimate - 50.0).abs() < 5.0, "mpr {estimate}");
}

#[test]
fn deep_model_with_features() {
    let dir = tempfile::tempdir().unwrap();
    synth_planted(dir.path(), "data.txt", "6");
    let mut features = String::from("item_id,price,text:title\n");
    for i in 0..8 {
        features.push_str(&format!("item{i},{},red shirt {}\n", i * 3, i % 3));
    }
    fs::write(dir.path().join("items.csv"), features).unwrap();
    train_small(
        dir.path(),
        "data.txt",
        "deep.json",
        &["--hidden", "6,5", "--features", "items.csv", "--hash-width", "8", "--max-iter", "3"],
    );
    let model = load(&dir.path().join("deep.json"));
    assert_eq!(model.architecture.hidden, vec![6, 5]);
    assert_eq!(model.architecture.meta_width, 9);
    assert!(model.features.is_some());
    assert!(model.forward_discrepancy().unwrap() <= 1e-12);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    synth_planted(dir.path(), "data.txt", "1");
    fs::write(dir.path().join("run.conf"), "# shallow run\nk = 2\nmax-iter = 3\nseed = 8\ntest-count = 300\n").unwrap();
    ok(&["train", "--config", "run.conf", "--baskets", "data.txt", "--k", "3", "--out", "c.json"], dir.path());
    let model = load(&dir.path().join("c.json"));
    assert_eq!(model.architecture.k, 3);
    let cfg = model.training.unwrap();
    assert_eq!((cfg.max_iterations, cfg.seed), (3, 8));
}

fn write_model(dir: &Path, name: &str, ids: &[&str], v: EmbeddingMatrix) {
    let catalog = Catalog::from_ids(ids.iter().copied()).unwrap();
    let file = ModelFile::from_embeddings(catalog, &v).unwrap();
    file.write(fs::File::create(dir.join(name)).unwrap()).unwrap();
}

#[test]
fn predict_ranks_diagonal_model_by_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let s = [0.5, 2.0, 1.0, 3.0];
    let mut data = vec![0.0; 16];
    for (i, si) in s.iter().enumerate() {
        data[i * 4 + i] = *si;
    }
    write_model(dir.path(), "diag.json", &["a", "b", "c", "d"], EmbeddingMatrix::from_row_slice(4, 4, &data).unwrap());

    let out = ok(&["predict", "--model", "diag.json", "--basket", "c", "--top-k", "10"], dir.path());
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    let ids: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(ids, ["d", "b", "a"]);
    for r in &rows {
        let si = s[["a", "b", "c", "d"].iter().position(|x| *x == r[1]).unwrap()];
        let expected = si * si / (1.0 + si * si);
        assert!((r[2].parse::<f64>().unwrap() - expected).abs() < 1e-6);
    }

    let top1 = ok(&["predict", "--model", "diag.json", "--basket", "c", "--top-k", "1"], dir.path());
    assert_eq!(top1.lines().count(), 1);
    let full = ok(&["predict", "--model", "diag.json", "--basket", "a,b,c,d"], dir.path());
    assert!(full.trim().is_empty());
}

#[test]
fn predict_reports_unknown_and_degenerate_baskets() {
    let dir = tempfile::tempdir().unwrap();
    let v = EmbeddingMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0]).unwrap();
    write_model(dir.path(), "m.json", &["x", "y", "z"], v);
    let out = run(&["predict", "--model", "m.json", "--basket", "x,ghost,phantom"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ghost, phantom"), "{err}");

    let out = run(&["predict", "--model", "m.json", "--basket", "x,y"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("linearly dependent"));
}

#[test]
fn eval_skips_baskets_with_unknown_items() {
    let dir = tempfile::tempdir().unwrap();
    let v = EmbeddingMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, -1.0]).unwrap();
    write_model(dir.path(), "m.json", &["a", "b", "c", "d"], v);
    fs::write(dir.path().join("test.txt"), "a b\nb c\na zz\nc d\n").unwrap();
    let out = run(&["eval", "--model", "m.json", "--test", "test.txt", "--metric", "auc", "--resamples", "20"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1 baskets"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("over 3 baskets"));
}

#[test]
fn version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let v = EmbeddingMatrix::from_row_slice(2, 1, &[1.0, 2.0]).unwrap();
    write_model(dir.path(), "m.json", &["a", "b"], v);
    let text = fs::read_to_string(dir.path().join("m.json")).unwrap().replace("\"format_version\":1", "\"format_version\":7");
    fs::write(dir.path().join("m.json"), text).unwrap();
    let out = run(&["export", "--model", "m.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}
