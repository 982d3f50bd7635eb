//! Planted multi-hop corpus shared by the integration tests.
//!
//! Sample `i` has a bridge article `a{i}` that carries the only occurrences
//! of the question's two marker terms, and an answer article `b{i}` that
//! shares no term with the question and is reachable only through the
//! hyperlink `a{i} -> b{i}`.

#![allow(dead_code)]

use std::path::Path;

use haykit::corpus::{Corpus, QaSample};
use haykit::tokenize::ReferenceTokenizer;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Record = (String, String, String, Vec<String>, bool);

pub struct Planted {
    pub records: Vec<Record>,
    pub samples: Vec<QaSample>,
}

fn words(rng: &mut ChaCha8Rng, pool: &[String], n: usize) -> Vec<String> {
    (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
}

pub fn planted(seed: u64, distractors: usize, samples: usize) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let common: Vec<String> = (0..40).map(|i| format!("common{i}")).collect();
    let rare: Vec<String> = (0..300).map(|i| format!("rare{i}")).collect();
    let distractor_ids: Vec<String> = (0..distractors).map(|i| format!("d{i:04}")).collect();
    let mut records = Vec::new();

    for id in &distractor_ids {
        let len = rng.random_range(40..=120);
        let mut body = words(&mut rng, &common, len / 4);
        body.extend(words(&mut rng, &rare, len - len / 4));
        let links = (0..4).map(|_| distractor_ids.choose(&mut rng).unwrap().clone()).collect();
        records.push((id.clone(), format!("Article {id}"), body.join(" "), links, false));
    }

    let mut qa = Vec::new();
    for i in 0..samples {
        let (a, b) = (format!("a{i:03}"), format!("b{i:03}"));
        let len = rng.random_range(40..=120);
        let mut body = vec![format!("alpha{i}"), format!("bravo{i}")];
        body.extend(words(&mut rng, &common, len / 3));
        body.extend(words(&mut rng, &rare, len - len / 3));
        records.push((a.clone(), format!("Bridge {i}"), body.join(" "), vec![b.clone()], false));

        let len = rng.random_range(40..=120);
        let mut body = vec![format!("zulu{i}")];
        body.extend(words(&mut rng, &rare, len));
        let links = (0..2).map(|_| distractor_ids.choose(&mut rng).unwrap().clone()).collect();
        records.push((b.clone(), format!("Answer {i}"), body.join(" "), links, false));

        let mut question = format!("Which zulu follows alpha{i} bravo{i}");
        for w in words(&mut rng, &common, 3) {
            question.push(' ');
            question.push_str(&w);
        }
        question.push('?');
        qa.push(QaSample {
            id: format!("s{i:03}"),
            question,
            answer: format!("Zulu {i}"),
            aliases: Vec::new(),
            needles: vec![a, b],
            hops: 2,
        });
    }
    Planted { records, samples: qa }
}

impl Planted {
    pub fn corpus(&self) -> Corpus {
        Corpus::from_records(self.records.clone(), &ReferenceTokenizer).unwrap().0
    }

    pub fn write(&self, dir: &Path) {
        let corpus: Vec<String> = self
            .records
            .iter()
            .map(|(id, title, text, links, _)| {
                serde_json::json!({ "id": id, "title": title, "text": text, "links": links }).to_string()
            })
            .collect();
        std::fs::write(dir.join("corpus.jsonl"), corpus.join("\n") + "\n").unwrap();
        let qa: Vec<String> = self.samples.iter().map(|s| serde_json::to_string(s).unwrap()).collect();
        std::fs::write(dir.join("qa.jsonl"), qa.join("\n") + "\n").unwrap();
    }
}
