//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use glean_core::attribution::{attribute, replay, AttributionCase, ErrorLabel, OracleSource, RetrievalInfo, RULES};
use glean_core::evidence::{derive_sql_rows, detect_answer_rows, validate_detector, EvidenceSet};
use glean_core::example::{Example, VerdictLabel};
use glean_core::governance::{apply_lfs, flip_rate, governance_report, load_catalog, Labeler, SEED_CATALOG};
use glean_core::harness::{ingest, run_with_workers, synth_generate, BundlePaths, RunManifest, Stages, PLANTED_MODEL};
use glean_core::metrics::em;
use glean_core::retrieval::{
    budget_prune, first_hit_rank, rank, rank_sql_gold, recall_at_k, sparse::bm25_scores, Bm25Params, SparseKind,
};
use glean_core::serialization::{emit, markdown_line, parse, SerializationFormat};
use glean_core::sql::engine::engine_row_ids;
use glean_core::sql::verdict::{tolerance_ablation, ToleranceSetting};
use glean_core::sql::{build_database, compare_denotation, parse_sql, ExecStatus};
use glean_core::table::{count_tokens, GroundingConfig, Table, TokenBudget};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn table(id: &str, headers: Vec<String>, rows: Vec<Vec<String>>) -> Table {
    Table::new(id, headers, rows).expect("rectangular")
}

// ---------------------------------------------------------------------------

fn synthetic_wiring() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let start = Instant::now();
        let s = synth_generate(500, seed);
        let m = RunManifest::new("synthetic", seed);
        let out = match run_with_workers(&m, &s.bundle, SEED_CATALOG, None) {
            Ok(o) => o,
            Err(e) => return Fail(format!("seed {seed}: {e}")),
        };
        slowest = slowest.max(start.elapsed());
        let block = out.report.metrics.as_ref().and_then(|m| m.get(PLANTED_MODEL).copied());
        let Some(block) = block else {
            return Fail(format!("seed {seed}: no planted metrics"));
        };
        let acc = out.report.artifact.as_ref().map(|a| a.full.accuracy);
        let acc_ok = acc.is_some_and(|a| (0.45..=0.55).contains(&a));
        ok &= block.em == 1.0 && block.f1 == 1.0 && block.n == 500 && acc_ok;
        notes.push(format!("s{seed}: em={} f1={} acc={:.3}", block.em, block.f1, acc.unwrap_or(f64::NAN)));
    }
    ok &= slowest < Duration::from_secs(30);
    check(ok, format!("{}; slowest run {:.1}s", notes.join(", "), slowest.as_secs_f64()))
}

// ---------------------------------------------------------------------------

const WORDS: [&str; 10] = ["Oslo", "Lima", "red", "Blue Team", "the Hawks", "north", "U.S.", "x-ray", "Kyoto", "Nile"];

fn random_value(r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..3) {
        0 => WORDS.choose(r).unwrap().to_string(),
        1 => r.gen_range(0..50).to_string(),
        _ => format!("{}.{}", r.gen_range(0..20), r.gen_range(0..10)),
    }
}

fn vary(r: &mut ChaCha8Rng, s: &str) -> String {
    match r.gen_range(0..4) {
        0 => s.to_uppercase(),
        1 => format!("{s}."),
        2 => format!("the {s}"),
        _ => s.to_owned(),
    }
}

fn attribution_taxonomy() -> Outcome {
    let mut r = rng(2024);
    let exact = GroundingConfig::exact();
    let (mut n, mut multi, mut replay_bad, mut ok_count, mut em_count, mut scored) = (0, 0, 0, 0usize, 0usize, 0usize);
    for i in 0..10_000 {
        let n_rows = r.gen_range(1..6);
        let n_cols = r.gen_range(1..4);
        let rows: Vec<Vec<String>> = (0..n_rows)
            .map(|_| (0..n_cols).map(|_| random_value(&mut r)).collect())
            .collect();
        let t = table("t", (0..n_cols).map(|c| format!("h{c}")).collect(), rows);
        let cell = |r: &mut ChaCha8Rng| t.rows()[r.gen_range(0..n_rows)][r.gen_range(0..n_cols)].clone();
        let oracle: Vec<String> = (0..r.gen_range(1..3))
            .map(|_| if r.gen_bool(0.6) { cell(&mut r) } else { random_value(&mut r) })
            .collect();
        let pred = match r.gen_range(0..6) {
            0 => oracle[0].clone(),
            1 => vary(&mut r, &oracle[0]),
            2 => cell(&mut r),
            3 => random_value(&mut r),
            4 => ["", "  "].choose(&mut r).unwrap().to_string(),
            _ => format!("{} and more", oracle[0]),
        };
        let evidence: BTreeSet<usize> = (0..n_rows).filter(|_| r.gen_bool(0.4)).collect();
        let survived: BTreeSet<usize> = (0..n_rows).filter(|_| r.gen_bool(0.6)).collect();
        let status = match r.gen_range(0..10) {
            0 => Some(ExecStatus::ExecError),
            1..=3 => None,
            _ => Some(ExecStatus::Ok),
        };
        let id = format!("a{i}");
        let case = AttributionCase {
            id: &id,
            pred: &pred,
            oracle: &oracle,
            table: &t,
            retrieval: r.gen_bool(0.5).then_some(RetrievalInfo {
                evidence: &evidence,
                survived: &survived,
            }),
            sql_status: status,
            oracle_source: OracleSource::GoldAnswer,
        };
        let rec = match attribute(&case, &exact) {
            Ok(rec) => rec,
            Err(e) => return Fail(format!("{id}: {e}")),
        };
        n += 1;
        let fired = rec.rule_trace.iter().filter(|s| s.ends_with("=fired")).count();
        let names_ok = rec
            .rule_trace
            .iter()
            .zip(RULES.iter())
            .all(|(s, (name, _))| s.starts_with(&format!("{name}=")));
        if fired != 1 || !rec.rule_trace.last().unwrap().ends_with("=fired") || !names_ok {
            multi += 1;
        }
        let replayed = replay(&rec.rule_trace).ok();
        let bytes = serde_json::to_string(&rec.label).unwrap();
        if replayed.map(|l| serde_json::to_string(&l).unwrap()) != Some(bytes) {
            replay_bad += 1;
        }
        if status != Some(ExecStatus::ExecError) {
            scored += 1;
            ok_count += usize::from(rec.label == ErrorLabel::Ok);
            em_count += usize::from(em(&pred, &oracle) == 1.0);
        }
    }
    check(
        multi == 0 && replay_bad == 0 && ok_count == em_count,
        format!(
            "{n} cases, {multi} without a unique label, {replay_bad} replay mismatches, OK {ok_count}/{scored} vs EM {em_count}/{scored}"
        ),
    )
}

// ---------------------------------------------------------------------------

const SQL_CELLS: [&str; 16] = [
    "0", "7", "-3", "12", "007", "2.5", "3.0", "1e2", "10", "alpha", "Beta", "gamma ray", "", "1,000", "x1", "2024",
];

fn sql_literal(r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..4) {
        0 => r.gen_range(-5..15).to_string(),
        1 => format!("{}.5", r.gen_range(0..10)),
        2 => format!("'{}'", SQL_CELLS.choose(r).unwrap()),
        _ => format!("'{}'", ["alpha", "beta", "10", "2.5", "a", "007"].choose(r).unwrap()),
    }
}

fn sql_predicate(r: &mut ChaCha8Rng, n_cols: usize, depth: u32) -> String {
    let col = |r: &mut ChaCha8Rng| format!("c{}", r.gen_range(1..=n_cols));
    if depth > 0 && r.gen_bool(0.35) {
        let a = sql_predicate(r, n_cols, depth - 1);
        let b = sql_predicate(r, n_cols, depth - 1);
        return match r.gen_range(0..3) {
            0 => format!("({a} AND {b})"),
            1 => format!("({a} OR {b})"),
            _ => format!("NOT ({a})"),
        };
    }
    let ops = ["=", "!=", "<", "<=", ">", ">="];
    match r.gen_range(0..6) {
        0 | 1 => format!("{} {} {}", col(r), ops.choose(r).unwrap(), sql_literal(r)),
        2 => format!("{} {} {}", col(r), ops.choose(r).unwrap(), col(r)),
        3 => format!(
            "{} {}LIKE '{}'",
            col(r),
            if r.gen_bool(0.2) { "NOT " } else { "" },
            ["a%", "%a", "_", "1%", "%0%", "G%"].choose(r).unwrap()
        ),
        4 => format!("{} IN ({}, {})", col(r), sql_literal(r), sql_literal(r)),
        _ => format!("{} BETWEEN {} AND {}", col(r), sql_literal(r), sql_literal(r)),
    }
}

fn sql_oracle_equivalence() -> Outcome {
    let mut r = rng(77);
    let mut mismatches = Vec::new();
    let mut selected = 0;
    for i in 0..200 {
        let n_cols = r.gen_range(1..5);
        let n_rows = r.gen_range(1..10);
        let rows: Vec<Vec<String>> = (0..n_rows)
            .map(|_| (0..n_cols).map(|_| SQL_CELLS.choose(&mut r).unwrap().to_string()).collect())
            .collect();
        let t = table(&format!("s{i}"), (0..n_cols).map(|c| format!("col {c}")).collect(), rows);
        let sql = format!("SELECT * FROM w WHERE {}", sql_predicate(&mut r, n_cols, 2));
        let q = match parse_sql(&sql) {
            Ok(q) => q,
            Err(e) => return Fail(format!("{sql}: {e}")),
        };
        let ours = match derive_sql_rows(&t, &q) {
            Ok(rows) => rows.evidence.rows,
            Err(e) => return Fail(format!("{sql}: {e}")),
        };
        let conn = build_database(&t, "w").expect("database");
        let engine = engine_row_ids(&conn, q.select().expect("parsed")).expect("engine");
        selected += engine.len();
        if ours != engine {
            mismatches.push(format!("{sql}: ours {ours:?} engine {engine:?}"));
        }
    }
    check(
        mismatches.is_empty(),
        format!("200 tables, {selected} rows selected, {} mismatches {}", mismatches.len(), mismatches.join("; ")),
    )
}

// ---------------------------------------------------------------------------

fn soft_match_calibration() -> Outcome {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let format_pairs = vec![
        (v(&["1,000"]), v(&["1000"])),
        (v(&["12_500"]), v(&["12500"])),
        (v(&["PARIS"]), v(&["Paris"])),
        (v(&["new york"]), v(&["New York"])),
        (v(&["U.S."]), v(&["US"])),
        (v(&["Smith, J."]), v(&["smith j"])),
        (v(&["$1,200"]), v(&["1200"])),
        (v(&["3-2"]), v(&["3 - 2"])),
    ];
    let numeric_pairs = vec![
        (v(&["3.1416"]), v(&["3.1415"])),
        (v(&["0.5005"]), v(&["0.5"])),
        (v(&["2.0009"]), v(&["2"])),
        (v(&["100.9"]), v(&["100"])),
        (v(&["250"]), v(&["252"])),
        (v(&["1010"]), v(&["1000"])),
    ];
    let mut all = format_pairs.clone();
    all.extend(numeric_pairs.iter().cloned());
    let base = GroundingConfig::default();
    let mut errors = Vec::new();
    for (o, g) in &all {
        if compare_denotation(o, g, &base).exact {
            errors.push(format!("{o:?} vs {g:?} is already exact"));
        }
    }
    let settings = ToleranceSetting::standard();
    let rates = tolerance_ablation(&all, &settings, &base);
    let numeric = tolerance_ablation(&numeric_pairs, &settings, &base);
    let rate = |rs: &[glean_core::sql::verdict::ToleranceRate], name: &str| {
        rs.iter().find(|r| r.name == name).and_then(|r| r.rate).unwrap_or(f64::NAN)
    };
    let (strict, default, loose) = (rate(&rates, "strict"), rate(&rates, "default"), rate(&rates, "loose"));
    let numeric_strict = rate(&numeric, "strict");
    let ok = errors.is_empty() && default == 1.0 && numeric_strict == 0.0 && strict <= default && default <= loose;
    check(
        ok,
        format!(
            "{} mismatches: strict {strict:.3} <= default {default:.3} <= loose {loose:.3}; numeric subset strict {numeric_strict:.3} {}",
            all.len(),
            errors.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------

const VOCAB: [&str; 14] = [
    "river", "lake", "mount", "city", "port", "1990", "2001", "42", "gold", "silver", "east", "west", "club", "cup",
];

fn retrieval_laws() -> Outcome {
    let mut r = rng(1000);
    let (mut monotone_bad, mut oracle_bad, mut covered, mut budget_bad, mut cap_bad, mut oversize) = (0, 0, 0, 0, 0, 0);
    for i in 0..1000 {
        let n_rows = r.gen_range(1..25);
        let n_cols = r.gen_range(1..24);
        let rows: Vec<Vec<String>> = (0..n_rows)
            .map(|_| {
                (0..n_cols)
                    .map(|_| {
                        let n = r.gen_range(0..4);
                        (0..n).map(|_| *VOCAB.choose(&mut r).unwrap()).collect::<Vec<_>>().join(" ")
                    })
                    .collect()
            })
            .collect();
        let t = table(&format!("r{i}"), (0..n_cols).map(|c| format!("{} {c}", VOCAB[c % VOCAB.len()])).collect(), rows);
        let question: String = (0..r.gen_range(1..6)).map(|_| *VOCAB.choose(&mut r).unwrap()).collect::<Vec<_>>().join(" ");
        let evidence: BTreeSet<usize> = (0..n_rows).filter(|_| r.gen_bool(0.2)).collect();
        let ks: Vec<usize> = (1..=n_rows.max(10)).collect();
        let kind = SparseKind::ALL[i % SparseKind::ALL.len()];
        let ranking = rank(&question, &t, kind);
        if !evidence.is_empty() {
            let ev = EvidenceSet::new(glean_core::evidence::EvidenceMode::Sql, evidence.clone());
            let hits = recall_at_k(&ranking, &ev, &ks).expect("nonempty evidence");
            let seq: Vec<u8> = ks.iter().map(|k| hits[k]).collect();
            if seq.windows(2).any(|w| w[0] > w[1]) {
                monotone_bad += 1;
            }
            covered += 1;
            let oracle = rank_sql_gold(&ev, n_rows);
            if first_hit_rank(&oracle, &ev) != Some(1) {
                oracle_bad += 1;
            }
        }
        let budget = TokenBudget {
            max_table_tokens: *[8, 16, 64, 256, 1024].choose(&mut r).unwrap(),
            max_cols: 16,
        };
        let p = budget_prune(&t, &ranking, &question, &budget, None);
        let tokens: usize = p.rows.iter().map(|&row| count_tokens(&markdown_line(&t.rows()[row]))).sum();
        if tokens != p.row_tokens || (tokens > budget.max_table_tokens && !(p.oversize && p.rows.len() == 1)) {
            budget_bad += 1;
        }
        oversize += usize::from(p.oversize);
        if p.cols.len() != n_cols.min(16) || p.cols.windows(2).any(|w| w[0] >= w[1]) {
            cap_bad += 1;
        }
    }
    check(
        monotone_bad + oracle_bad + budget_bad + cap_bad == 0,
        format!(
            "1000 cases: {monotone_bad} recall violations, sql_gold hit@1 misses {oracle_bad}/{covered}, {budget_bad} budget violations ({oversize} flagged oversize), {cap_bad} column-cap violations"
        ),
    )
}

// ---------------------------------------------------------------------------

fn bm25_hand_oracle() -> Outcome {
    let toks = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
    let corpus = |docs: &[&str]| docs.iter().map(|d| toks(d)).collect::<Vec<_>>();
    let a = corpus(&["the cat sat", "the dog sat down"]);
    let b = corpus(&["red apple red", "green apple", "red car fast car"]);
    let c = corpus(&["a b c", "a a b", "c d", "d d d e"]);
    // idf = ln(1 + (N - df + 0.5) / (df + 0.5)); term weight
    // idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dl / avgdl)).
    let cases: [(&Vec<Vec<String>>, &str, usize, f64); 10] = [
        (&a, "cat", 0, 0.7361701090084937),
        (&a, "sat", 1, 0.17225472236974856),
        (&a, "the dog", 1, 0.8271299727147277),
        (&b, "red car", 0, 0.6462549902128865),
        (&b, "red car", 2, 1.6466456832367034),
        (&b, "apple", 1, 0.5442147286003255),
        (&b, "red red", 0, 0.6462549902128865),
        (&c, "a d", 1, 0.9530773732699247),
        (&c, "a d", 3, 1.016615864821253),
        (&c, "c e", 2, 0.8025914722273051),
    ];
    let mut worst = 0.0f64;
    for (docs, q, i, want) in cases {
        let got = bm25_scores(&toks(q), docs, Bm25Params::default())[i];
        worst = worst.max((got - want).abs());
    }
    check(worst <= 1e-9, format!("10 scores, max abs error {worst:.2e}"))
}

// ---------------------------------------------------------------------------

const CELL_CHARS: &[char] = &[
    'a', 'b', 'Z', '0', '9', ' ', '-', '.', ',', '|', ';', '=', '"', '\'', '<', '>', '&', '\\', '\t', '\n', ':', 'é',
];

fn random_cell(r: &mut ChaCha8Rng) -> String {
    (0..r.gen_range(0..8)).map(|_| *CELL_CHARS.choose(r).unwrap()).collect()
}

fn serialization_round_trip() -> Outcome {
    let mut r = rng(6);
    let mut failures = Vec::new();
    for i in 0..1000 {
        let n_cols = r.gen_range(1..6);
        let n_rows = r.gen_range(0..8);
        let headers = (0..n_cols).map(|_| random_cell(&mut r)).collect();
        let rows = (0..n_rows).map(|_| (0..n_cols).map(|_| random_cell(&mut r)).collect()).collect();
        let t = table("rt", headers, rows);
        for f in SerializationFormat::ALL {
            let text = emit(&t, f);
            match parse(&text, f, "rt") {
                Ok(p) if p.table == t => {}
                Ok(_) => failures.push(format!("table {i} {f}: differs")),
                Err(e) => failures.push(format!("table {i} {f}: {e}")),
            }
        }
    }
    check(
        failures.is_empty(),
        format!("1000 tables x 6 formats, {} failures {}", failures.len(), failures.iter().take(5).cloned().collect::<Vec<_>>().join("; ")),
    )
}

// ---------------------------------------------------------------------------

fn governance_identities() -> Outcome {
    let lfs = load_catalog(SEED_CATALOG).expect("seed catalog");
    let labelers: Vec<&dyn Labeler> = lfs.iter().map(|l| l as &dyn Labeler).collect();
    let mut problems = Vec::new();
    let mut covs = Vec::new();
    for seed in 0..20 {
        let s = synth_generate(10 + seed as usize * 3, seed);
        let verdicts: Vec<&Example> = s.verdict_ids.iter().map(|id| &s.bundle.examples[id]).collect();
        let pairs: Vec<(&Example, &Table)> = verdicts.iter().map(|e| (*e, s.bundle.table_of(e))).collect();
        let m = apply_lfs(&labelers, &pairs).expect("label matrix");
        let gold: Vec<Option<VerdictLabel>> = verdicts.iter().map(|e| e.label).collect();
        let rep = governance_report(&m, &gold);
        if rep.coverage + rep.abstention_rate != 1.0 {
            problems.push(format!("seed {seed}: coverage + abstention = {}", rep.coverage + rep.abstention_rate));
        }
        covs.push(rep.coverage);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["coverage", "conflict_rate", "abstention_rate", "lf_accuracy", "per_lf"] {
            if json.get(key).is_none() {
                problems.push(format!("missing field {key}"));
            }
        }
        if rep.per_lf.len() != lfs.len() {
            problems.push(format!("per_lf has {} of {} LFs", rep.per_lf.len(), lfs.len()));
        }
        let preds: BTreeMap<String, String> = verdicts
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), if i % 2 == 0 { "entailed" } else { "refuted" }.to_owned()))
            .collect();
        let triggered: BTreeSet<String> = preds.keys().cloned().collect();
        if flip_rate(&preds, &preds, &triggered) != Ok(Some(0.0)) {
            problems.push(format!("seed {seed}: flip_rate(x, x) != 0"));
        }
    }
    // The identity also has to hold for every representable share.
    let mut r = rng(9);
    for _ in 0..100_000 {
        let (n, d) = (r.gen_range(0..=10_000u32), r.gen_range(1..=10_000u32));
        let c = n.min(d) as f64 / d as f64;
        if c + (1.0 - c) != 1.0 {
            problems.push(format!("share {c} breaks the identity"));
            break;
        }
    }
    check(
        problems.is_empty(),
        format!(
            "20 label matrices, coverage {:.3}..{:.3}; {}",
            covs.iter().cloned().fold(f64::INFINITY, f64::min),
            covs.iter().cloned().fold(0.0, f64::max),
            if problems.is_empty() { "identities hold".to_owned() } else { problems.join("; ") }
        ),
    )
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut b = synth_generate(60, 21).bundle;
    let mut noisy = BTreeMap::new();
    for (i, (id, ex)) in b.examples.iter().enumerate() {
        let p = match (ex.label, i % 4) {
            (Some(_), 0) => "refuted".to_owned(),
            (Some(_), _) => "entailed".to_owned(),
            (None, 0) => String::new(),
            (None, 1) => "Sun Coast".to_owned(),
            (None, _) => ex.gold_answers[0].clone(),
        };
        noisy.insert(id.clone(), p);
    }
    b.predictions.insert("noisy".into(), noisy);
    let mut m = RunManifest::new("determinism", 21);
    m.retrievers.push("sql_gold".into());
    let one = run_with_workers(&m, &b, SEED_CATALOG, Some(1));
    let eight = run_with_workers(&m, &b, SEED_CATALOG, Some(8));
    match (one, eight) {
        (Ok(a), Ok(c)) => {
            let differing: Vec<&String> = a.files.keys().filter(|k| a.files.get(*k) != c.files.get(*k)).collect();
            check(
                a.report_json() == c.report_json() && differing.is_empty() && a.files.len() == c.files.len(),
                format!("{} files, report digest {} vs {}, differing {differing:?}", a.files.len(), a.report_digest(), c.report_digest()),
            )
        }
        (Err(e), _) | (_, Err(e)) => Fail(e.to_string()),
    }
}

// ---------------------------------------------------------------------------

fn within(got: Option<f64>, want: f64, tol: f64) -> bool {
    got.is_some_and(|g| (g - want).abs() <= tol + 1e-12)
}

fn squall() -> Outcome {
    let Some(dir) = std::env::var_os("GLEAN_SQUALL_DIR").map(PathBuf::from) else {
        return Skip("set GLEAN_SQUALL_DIR to a directory with bundle.json".into());
    };
    let paths: BundlePaths = match std::fs::read_to_string(dir.join("bundle.json"))
        .map_err(|e| e.to_string())
        .and_then(|s| serde_json::from_str(&s).map_err(|e| e.to_string()))
    {
        Ok(p) => p,
        Err(e) => return Fail(format!("bundle.json: {e}")),
    };
    let start = Instant::now();
    let bundle = match ingest(&paths) {
        Ok(b) => b,
        Err(e) => return Fail(e.to_string()),
    };
    let mut m = RunManifest::new("squall", 0);
    m.stages = Stages {
        probes: false,
        metrics: false,
        attribution: false,
        governance: false,
        ..Stages::ALL
    };
    m.retrievers = vec!["bm25".into()];
    m.primary_retriever = "bm25".into();
    m.evidence_mode = glean_core::evidence::EvidenceMode::Sql;
    let out = match run_with_workers(&m, &bundle, SEED_CATALOG, None) {
        Ok(o) => o,
        Err(e) => return Fail(e.to_string()),
    };
    let Some(acc) = out.report.accounting.as_ref().map(|s| &s.accounting) else {
        return Fail("no SQL accounting".into());
    };
    let sql_records: Vec<serde_json::Value> = out.files["stages/sql.jsonl"]
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mut token_em = Vec::new();
    for rec in &sql_records {
        if rec["status"] != "ok" {
            continue;
        }
        let id = rec["id"].as_str().unwrap();
        let den: Vec<String> = serde_json::from_value(rec["denotation"].clone()).unwrap();
        token_em.push(em(&den.join(", "), &bundle.examples[id].gold_answers));
    }
    let sql_em = (!token_em.is_empty()).then(|| token_em.iter().sum::<f64>() / token_em.len() as f64);
    let simple = out.report.accounting.as_ref().and_then(|s| s.simple_coverage);
    let recall = out.report.retrieval.as_ref().and_then(|r| r.recall.as_ref()).map(|r| r["bm25"].recall.clone());
    let r_at = |k: usize| recall.as_ref().and_then(|r| r.get(&k).copied().flatten());

    let sql_rows: BTreeMap<String, EvidenceSet> = out.files["stages/sql_rows.jsonl"]
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let rows: BTreeSet<usize> = serde_json::from_value(v["rows"].clone()).unwrap();
            (v["id"].as_str().unwrap().to_owned(), EvidenceSet::new(glean_core::evidence::EvidenceMode::Sql, rows))
        })
        .collect();
    let answer: BTreeMap<String, EvidenceSet> = sql_rows
        .keys()
        .map(|id| {
            let ex = &bundle.examples[id];
            (id.clone(), detect_answer_rows(bundle.table_of(ex), &ex.gold_answers, &GroundingConfig::default()))
        })
        .collect();
    let det = validate_detector(&answer, &sql_rows).ok();
    let elapsed = start.elapsed();

    let checks = [
        ("execution", within(acc.execution_rate, 0.952, 0.005)),
        ("sql_em", within(sql_em, 0.720, 0.01)),
        ("exact", within(acc.exact_rate, 0.379, 0.01)),
        ("soft", within(acc.soft_match_rate, 0.898, 0.01)),
        ("soft_resolved", within(acc.soft_resolved_rate, 0.836, 0.01)),
        ("simple_coverage", within(simple, 0.449, 0.01)),
        ("bm25_r1", within(r_at(1), 0.458, 0.01)),
        ("bm25_r10", within(r_at(10), 0.800, 0.01)),
        ("detector_p", within(det.as_ref().and_then(|d| d.precision), 0.62, 0.02)),
        ("detector_r", within(det.as_ref().and_then(|d| d.recall), 0.71, 0.02)),
        ("runtime", elapsed < Duration::from_secs(1800)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    check(
        failed.is_empty(),
        format!(
            "exec {:?} sql_em {sql_em:?} exact {:?} soft {:?} resolved {:?} simple {simple:?} R@1 {:?} R@10 {:?} detector {:?}/{:?} in {:.0}s; failed {failed:?}",
            acc.execution_rate,
            acc.exact_rate,
            acc.soft_match_rate,
            acc.soft_resolved_rate,
            r_at(1),
            r_at(10),
            det.as_ref().and_then(|d| d.precision),
            det.as_ref().and_then(|d| d.recall),
            elapsed.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("synthetic_wiring", synthetic_wiring),
        ("attribution_taxonomy", attribution_taxonomy),
        ("sql_evidence_oracle_equivalence", sql_oracle_equivalence),
        ("soft_match_calibration", soft_match_calibration),
        ("retrieval_laws", retrieval_laws),
        ("bm25_hand_oracle", bm25_hand_oracle),
        ("serialization_round_trip", serialization_round_trip),
        ("governance_identities", governance_identities),
        ("determinism_workers_1_vs_8", determinism),
        ("squall_dataset_conditional", squall),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|p| !name.contains(p)) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match f() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name} ({:.1}s): {detail}", start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
