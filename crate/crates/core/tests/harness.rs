use std::collections::BTreeMap;

use glean_core::governance::SEED_CATALOG;
use glean_core::harness::{
    ingest, run_with_workers, synth_generate, verify, DatasetBundle, RunManifest, Stages, PLANTED_MODEL,
};

fn fixture(n: usize, seed: u64) -> DatasetBundle {
    let mut b = synth_generate(n, seed).bundle;
    // A second model that is wrong on every third example and answers every
    // verdict with "entailed".
    let mut noisy = BTreeMap::new();
    for (i, (id, ex)) in b.examples.iter().enumerate() {
        let p = match ex.label {
            Some(_) => "entailed".to_owned(),
            None if i % 3 == 0 => "Harbor City".to_owned(),
            None => ex.gold_answers[0].clone(),
        };
        noisy.insert(id.clone(), p);
    }
    b.predictions.insert("noisy".into(), noisy);
    b
}

fn manifest(seed: u64) -> RunManifest {
    let mut m = RunManifest::new("fixture", seed);
    m.retrievers.push("sql_gold".into());
    m.bootstrap_resamples = 200;
    m
}

#[test]
fn planted_model_scores_one_and_verifies() {
    let b = fixture(40, 7);
    let out = run_with_workers(&manifest(7), &b, SEED_CATALOG, Some(2)).unwrap();
    let metrics = out.report.metrics.as_ref().unwrap();
    assert_eq!(metrics[PLANTED_MODEL].em, 1.0);
    assert_eq!(metrics[PLANTED_MODEL].f1, 1.0);
    assert!(metrics["noisy"].em < 1.0);
    assert!(!out.exceeded(), "{:?}", out.failures);

    let sql_gold = &out.report.retrieval.as_ref().unwrap().recall.as_ref().unwrap()["sql_gold"];
    assert_eq!(sql_gold.recall[&1], Some(1.0));

    let attr = out.report.attribution.as_ref().unwrap();
    let ok = attr[PLANTED_MODEL].distribution.iter().find(|(l, _)| l.name() == "OK").unwrap().1;
    assert_eq!(*ok, 1.0);

    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    for f in ["report.json", "report.md", "manifest.json", "errors.jsonl", "plots/qa_bars.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let v = verify(dir.path()).unwrap();
    assert!(v.ok(), "{:?}", v.checks);
    assert!(v.checks.len() >= 6);
}

#[test]
fn worker_count_does_not_change_bytes() {
    let b = fixture(30, 11);
    let m = manifest(11);
    let one = run_with_workers(&m, &b, SEED_CATALOG, Some(1)).unwrap();
    let eight = run_with_workers(&m, &b, SEED_CATALOG, Some(8)).unwrap();
    assert_eq!(one.files, eight.files);
}

#[test]
fn disabled_sql_stage_falls_back_to_gold_answers() {
    let b = fixture(20, 3);
    let mut m = manifest(3);
    m.stages = Stages {
        sql: false,
        ..Stages::ALL
    };
    let out = run_with_workers(&m, &b, SEED_CATALOG, Some(2)).unwrap();
    assert!(out.report.accounting.is_none());
    assert!(!out.files.contains_key("stages/sql.jsonl"));
    let attr = &out.report.attribution.as_ref().unwrap()[PLANTED_MODEL];
    assert_eq!(attr.oracle_sources.get("gold_answer"), Some(&20));
    assert_eq!(attr.oracle_sources.get("sql"), None);

    // Stage files of enabled stages are unaffected by the toggle.
    let full = run_with_workers(&manifest(3), &b, SEED_CATALOG, Some(2)).unwrap();
    for f in ["stages/requests.jsonl", "stages/evidence.jsonl", "stages/lf_votes.jsonl"] {
        assert_eq!(out.files[f], full.files[f], "{f}");
    }
}

#[test]
fn catalog_hash_mismatch_is_rejected() {
    let b = fixture(5, 1);
    assert!(run_with_workers(&manifest(1), &b, "{}", Some(1)).is_err());
}

#[test]
fn bundle_round_trip_preserves_run() {
    let b = fixture(10, 5);
    let dir = tempfile::tempdir().unwrap();
    let paths = b.write(dir.path()).unwrap();
    let back = ingest(&paths).unwrap();
    assert_eq!(back.examples, b.examples);
    assert_eq!(back.predictions, b.predictions);
    let m = manifest(5);
    let a = run_with_workers(&m, &b, SEED_CATALOG, Some(1)).unwrap();
    let c = run_with_workers(&m, &back, SEED_CATALOG, Some(1)).unwrap();
    assert_eq!(a.report.metrics, c.report.metrics);
    assert_eq!(a.files["stages/requests.jsonl"], c.files["stages/requests.jsonl"]);
}

#[test]
fn audit_judgments_reach_the_report() {
    use glean_core::evidence::{AuditJudgment, Judgment};
    let mut b = fixture(6, 2);
    let ids: Vec<String> = b.examples.keys().take(4).cloned().collect();
    for (i, id) in ids.iter().enumerate() {
        for (judge, j) in [("ann", Judgment::Supported), ("bo", if i % 2 == 0 { Judgment::Supported } else { Judgment::NotSupported })] {
            let j = if judge == "ann" && i == 3 { Judgment::NotSupported } else { j };
            b.judgments.push(AuditJudgment { id: id.clone(), row: 0, judgment: j, judge: judge.into() });
        }
    }
    let out = run_with_workers(&manifest(2), &b, SEED_CATALOG, Some(1)).unwrap();
    let audit = &out.report.evidence.as_ref().unwrap().audit;
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].n_shared, 4);
    // ann S S S N, bo S N S N: p_o = 3/4, p_e = 3/4 * 2/4 + 1/4 * 2/4 = 1/2.
    assert_eq!(audit[0].kappa, Some(0.5));
    assert!(out.files["report.md"].contains("audit ann vs bo: kappa 0.500"));

    let dir = tempfile::tempdir().unwrap();
    let paths = b.write(dir.path()).unwrap();
    assert_eq!(ingest(&paths).unwrap().judgments, b.judgments);

    b.judgments.push(b.judgments[0].clone());
    assert!(run_with_workers(&manifest(2), &b, SEED_CATALOG, Some(1)).is_err());
}

#[test]
fn external_row_scores_rank_like_their_source() {
    use glean_core::evidence::derive_sql_rows;
    use glean_core::sql::parse_sql;
    let mut b = fixture(20, 8);
    for ex in b.examples.values() {
        let Some(sql) = &ex.gold_sql else { continue };
        let t = b.table_of(ex);
        let rows = derive_sql_rows(t, &parse_sql(sql).unwrap()).unwrap().evidence.rows;
        let scores = (0..t.n_rows()).map(|r| if rows.contains(&r) { 1.0 } else { 0.0 }).collect();
        b.row_scores.insert(ex.id.clone(), scores);
    }
    assert!(!b.row_scores.is_empty());
    let mut m = manifest(8);
    m.retrievers = vec!["bm25".into(), "sql_gold".into(), "external".into()];
    let out = run_with_workers(&m, &b, SEED_CATALOG, Some(1)).unwrap();
    let recall = out.report.retrieval.as_ref().unwrap().recall.as_ref().unwrap();
    assert_eq!(recall["external"].recall, recall["sql_gold"].recall);
    assert!(out.files.contains_key("stages/rankings.external.jsonl"));

    let dir = tempfile::tempdir().unwrap();
    let back = ingest(&b.write(dir.path()).unwrap()).unwrap();
    assert_eq!(back.row_scores, b.row_scores);

    let id = b.row_scores.keys().next().unwrap().clone();
    b.row_scores.get_mut(&id).unwrap().push(0.5);
    let out = run_with_workers(&m, &b, SEED_CATALOG, Some(1)).unwrap();
    assert!(out.failures.iter().any(|f| f.id == id && f.message.contains("row scores")));
}
