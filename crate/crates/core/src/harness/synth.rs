use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DatasetBundle;
use crate::example::{Example, VerdictLabel};
use crate::rng::example_rng;
use crate::table::Table;

/// Tag of the prediction file that copies the gold answers.
pub const PLANTED_MODEL: &str = "planted";

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "ve", "tu", "sen", "dor", "pa", "qui", "zel", "bo", "nar", "fi", "gu", "wen",
];
const TEAMS: [&str; 8] = [
    "Harbor City", "Iron Vale", "North Ridge", "Sun Coast", "Red Plains", "Lake Shore", "Stone Bay", "West Glen",
];
const HEADERS: [&str; 4] = ["player", "team", "points", "year"];

pub struct SynthOutput {
    /// Tables, qa examples with gold SQL, verdict examples and the planted
    /// prediction file.
    pub bundle: DatasetBundle,
    /// Ids of the qa examples, each answerable from one planted row.
    pub qa_ids: Vec<String>,
    /// Ids of the verdict examples, whose labels are coin flips.
    pub verdict_ids: Vec<String>,
    /// Planted row per qa id.
    pub planted_rows: BTreeMap<String, usize>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn person(rng: &mut ChaCha8Rng) -> String {
    let word = |rng: &mut ChaCha8Rng, n: usize| -> String {
        (0..n).map(|_| *SYLLABLES.choose(rng).expect("nonempty")).collect()
    };
    let first = rng.gen_range(2..=3);
    let last = rng.gen_range(2..=3);
    format!("{} {}", capitalize(&word(rng, first)), capitalize(&word(rng, last)))
}

fn synth_table(id: &str, rng: &mut ChaCha8Rng) -> Table {
    let n = rng.gen_range(6..=12);
    let mut names = BTreeSet::new();
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let name = person(rng);
        if !names.insert(name.clone()) {
            continue;
        }
        rows.push(vec![
            name,
            TEAMS.choose(rng).expect("nonempty").to_string(),
            rng.gen_range(0..120).to_string(),
            rng.gen_range(1990..2024).to_string(),
        ]);
    }
    Table::new(id, HEADERS.iter().map(|h| h.to_string()).collect(), rows).expect("rectangular")
}

fn qa_for(id: &str, t: &Table, rng: &mut ChaCha8Rng) -> (Example, usize) {
    let row = rng.gen_range(0..t.n_rows());
    let name = t.rows()[row][0].clone();
    let (col, question) = match rng.gen_range(0..3) {
        0 => (2, format!("how many points did {name} score?")),
        1 => (1, format!("which team did {name} play for?")),
        _ => (3, format!("in what year did {name} play?")),
    };
    let gold = t.rows()[row][col].clone();
    let mut ex = Example::qa(id, &question, &[gold.as_str()], t.table_id());
    ex.gold_sql = Some(format!("SELECT c{} FROM w WHERE c1 = '{}'", col + 1, name));
    (ex, row)
}

fn statement_for(t: &Table, rng: &mut ChaCha8Rng) -> String {
    let row = &t.rows()[rng.gen_range(0..t.n_rows())];
    let other_team = TEAMS.choose(rng).expect("nonempty");
    let x = rng.gen_range(0..120);
    match rng.gen_range(0..8) {
        0 => format!("{} scored more than {x} points", row[0]),
        1 => format!("{} scored less than {x} points", row[0]),
        2 => format!("{} did not play for {other_team}", row[0]),
        3 => format!("all players scored at least {x} points"),
        4 => format!("most players played for {other_team}"),
        5 => format!("none of the players joined in {}", row[3]),
        6 => format!("{} had the highest points total", row[0]),
        _ => format!("{} played for {} in {}", row[0], row[1], row[3]),
    }
}

/// Synthetic tables with planted answers, a prediction file that copies
/// gold, and `4n` verdict statements with labels drawn independently of
/// their content.
pub fn synth_generate(n: usize, seed: u64) -> SynthOutput {
    let mut bundle = DatasetBundle::default();
    let mut qa_ids = Vec::with_capacity(n);
    let mut planted_rows = BTreeMap::new();
    let mut planted = BTreeMap::new();
    for i in 0..n {
        let tid = format!("t{i:05}");
        let qid = format!("q{i:05}");
        let mut rng = example_rng(seed, &format!("synth:{qid}"));
        let t = synth_table(&tid, &mut rng);
        let (ex, row) = qa_for(&qid, &t, &mut rng);
        planted.insert(qid.clone(), ex.gold_answers[0].clone());
        planted_rows.insert(qid.clone(), row);
        bundle.tables.insert(tid, t);
        bundle.examples.insert(qid.clone(), ex);
        qa_ids.push(qid);
    }
    let table_ids: Vec<String> = bundle.tables.keys().cloned().collect();
    let mut verdict_ids = Vec::with_capacity(4 * n);
    for i in 0..4 * n {
        let vid = format!("v{i:05}");
        let mut rng = example_rng(seed, &format!("synth:{vid}"));
        let tid = table_ids[rng.gen_range(0..table_ids.len())].clone();
        let statement = statement_for(&bundle.tables[&tid], &mut rng);
        let label = if rng.gen_bool(0.5) {
            VerdictLabel::Entailed
        } else {
            VerdictLabel::Refuted
        };
        bundle
            .examples
            .insert(vid.clone(), Example::verdict(&vid, &statement, label, &tid));
        verdict_ids.push(vid);
    }
    bundle.predictions.insert(PLANTED_MODEL.to_owned(), planted);
    SynthOutput {
        bundle,
        qa_ids,
        verdict_ids,
        planted_rows,
    }
}
