#![allow(dead_code)]

pub mod stub;

use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use tablight::table::{Evidence, Sample, Table};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn toy_dataset() -> PathBuf {
    manifest_dir().join("data/toy.jsonl")
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

/// Compares `actual` with a checked-in golden file. With `TABLIGHT_BLESS`
/// set, the file is rewritten instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("TABLIGHT_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from golden"))
    }
}

pub fn sample(id: &str, title: &str, header: &[&str], rows: &[&[&str]], query: &str, reference: &str) -> Sample {
    Sample {
        id: id.into(),
        table: Table::new(
            title,
            header.iter().map(|h| h.to_string()).collect(),
            rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        )
        .unwrap(),
        query: query.into(),
        reference: reference.into(),
        manual_evidence: None,
        metadata: Default::default(),
    }
}

/// Table used for the prompt goldens: a title, a cell with a pipe, and a
/// cell with a hash run.
pub fn golden_sample() -> Sample {
    sample(
        "golden-1",
        "Club honours",
        &["Season", "Club", "Note"],
        &[
            &["1997-98", "Ajax", "double"],
            &["1998-99", "Feyenoord", "won 2 | 3 finals"],
            &["1999-00", "PSV", "record ##1"],
        ],
        "Which clubs won the title in 1997-98 and 1999-00?",
        "Ajax won in 1997-98 and PSV in 1999-00.",
    )
}

fn word<R: Rng>(rng: &mut R, used: &mut HashSet<String>) -> String {
    loop {
        let len = rng.gen_range(3..=8);
        let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// A table of unique words whose reference is the concatenated cells of a
/// hidden row subset.
pub fn planted_fixture<R: Rng>(rng: &mut R, id: usize) -> (Sample, Evidence) {
    let n = rng.gen_range(1..=8);
    let cols = rng.gen_range(2..=3);
    let mut used = HashSet::new();
    let rows: Vec<Vec<String>> = (0..n)
        .map(|_| (0..cols).map(|_| word(rng, &mut used)).collect())
        .collect();
    let k = rng.gen_range(1..=n.min(3));
    let mut idx: Vec<usize> = (1..=n).collect();
    idx.shuffle(rng);
    let planted = Evidence::from_unsorted(idx.into_iter().take(k));
    let reference = planted
        .indices()
        .iter()
        .flat_map(|&i| rows[i - 1].iter().cloned())
        .collect::<Vec<_>>()
        .join(" ");
    let header = (0..cols).map(|c| format!("h{c}")).collect();
    let s = Sample {
        id: format!("planted-{id}"),
        table: Table::new("", header, rows).unwrap(),
        query: "q".into(),
        reference,
        manual_evidence: None,
        metadata: Default::default(),
    };
    (s, planted)
}

/// Random non-empty subset of `1..=n`.
pub fn random_evidence<R: Rng>(rng: &mut R, n: usize) -> Evidence {
    loop {
        let e = Evidence::from_unsorted((1..=n).filter(|_| rng.gen_bool(0.4)));
        if !e.is_empty() {
            return e;
        }
    }
}

const CELL_ALPHABET: &[&str] = &["a", "b", "Z", "1", " ", "|", "\\", "#", "*", ":", "é", "row", "-"];

/// Random cell text drawn from an alphabet rich in separator characters.
pub fn random_cell<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(1..=6);
    let s: String = (0..len).map(|_| *CELL_ALPHABET.choose(rng).unwrap()).collect();
    s
}

pub fn random_table<R: Rng>(rng: &mut R) -> Table {
    let n = rng.gen_range(1..=6);
    let cols = rng.gen_range(1..=4);
    let title = if rng.gen_bool(0.5) {
        random_cell(rng)
    } else {
        String::new()
    };
    let header = (0..cols).map(|_| random_cell(rng)).collect();
    let rows = (0..n).map(|_| (0..cols).map(|_| random_cell(rng)).collect()).collect();
    Table::new(title, header, rows).unwrap()
}
