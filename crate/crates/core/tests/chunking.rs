//! Chunk invariants over generated documents, all four strategies.

use coached_core::ingest::{
    chunk_document, normalize_document, Chunk, ChunkStrategy, ChunkingPolicy, DocumentFormat, Metadata, SourceDocument,
};
use proptest::prelude::*;

const STRATEGIES: [ChunkStrategy; 4] = [
    ChunkStrategy::FixedSize,
    ChunkStrategy::Recursive,
    ChunkStrategy::DocumentSpecific,
    ChunkStrategy::Semantic,
];

const WORDS: &[&str] = &[
    "sleep",
    "bed",
    "wake",
    "diary",
    "night",
    "restriction",
    "stimulus",
    "control",
    "anxiety",
    "caffeine",
    "nap",
    "routine",
    "therapist",
    "patient",
    "week",
    "window",
    "rest",
    "café",
    "übung",
];

fn slice(body: &str, start: usize, end: usize) -> String {
    body.chars().skip(start).take(end - start).collect()
}

fn check(doc: &SourceDocument, policy: &ChunkingPolicy, chunks: &[Chunk]) -> Result<(), String> {
    let n = doc.char_len();
    if chunks.is_empty() {
        return Err("no chunks".into());
    }
    for (i, c) in chunks.iter().enumerate() {
        if c.ordinal != i {
            return Err(format!("ordinal {} at position {i}", c.ordinal));
        }
        if c.span.end <= c.span.start || c.span.end > n {
            return Err(format!("bad span {:?} for body of {n}", c.span));
        }
        if c.text != slice(&doc.body, c.span.start, c.span.end) {
            return Err(format!("text of chunk {i} differs from body[span]"));
        }
        if c.doc_id != doc.doc_id {
            return Err("wrong doc_id".into());
        }
        if i > 0 && c.span.start <= chunks[i - 1].span.start {
            return Err(format!("start not increasing at {i}"));
        }
    }
    let mut ids: Vec<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != chunks.len() {
        return Err("duplicate chunk ids".into());
    }
    if matches!(policy.strategy, ChunkStrategy::FixedSize | ChunkStrategy::Recursive) {
        let mut covered = vec![false; n];
        for c in chunks {
            covered[c.span.start..c.span.end].iter_mut().for_each(|b| *b = true);
        }
        if let Some(gap) = covered.iter().position(|b| !b) {
            return Err(format!("character {gap} not covered"));
        }
        for w in chunks.windows(2) {
            let overlap = w[0].span.end.saturating_sub(w[1].span.start);
            if overlap > policy.overlap_chars {
                return Err(format!("overlap {overlap} exceeds {}", policy.overlap_chars));
            }
        }
    }
    if policy.strategy == ChunkStrategy::FixedSize {
        let stride = policy.stride();
        let mut rebuilt = String::new();
        for (i, c) in chunks.iter().enumerate() {
            if i + 1 == chunks.len() {
                rebuilt.push_str(&c.text);
            } else {
                rebuilt.extend(c.text.chars().take(stride));
            }
        }
        if rebuilt != doc.body {
            return Err("fixed-size prefixes do not rebuild the body".into());
        }
    }
    Ok(())
}

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(WORDS), 3..14), 1..6).prop_map(|sentences| {
        sentences
            .into_iter()
            .map(|ws| {
                let mut s = ws.join(" ");
                s.push('.');
                s
            })
            .collect::<Vec<_>>()
            .join(" ")
    })
}

fn markdown() -> impl Strategy<Value = String> {
    prop::collection::vec((prop::option::of(1usize..4), paragraph()), 1..12).prop_map(|blocks| {
        blocks
            .into_iter()
            .enumerate()
            .map(|(i, (level, para))| match level {
                Some(l) => format!("{} Heading {i}\n\n{para}", "#".repeat(l)),
                None => para,
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    })
}

fn doc(raw: &str) -> Option<SourceDocument> {
    let mut prov = Metadata::new();
    prov.insert("doc_id".into(), "d".into());
    normalize_document(raw, DocumentFormat::Markdown, prov).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn invariants_hold_for_every_strategy(raw in markdown(), target in 120usize..1200, overlap_frac in 0.0f64..0.5) {
        let Some(doc) = doc(&raw) else { return Ok(()) };
        let overlap = ((target as f64) * overlap_frac) as usize;
        for strategy in STRATEGIES {
            let policy = ChunkingPolicy::new(strategy)
                .with_sizes(target, overlap)
                .with_min_chunk_chars(target.min(100));
            let chunks = chunk_document(&doc, &policy).unwrap();
            prop_assert!(check(&doc, &policy, &chunks).is_ok(), "{strategy:?}: {:?}", check(&doc, &policy, &chunks));
            prop_assert_eq!(&chunks, &chunk_document(&doc, &policy).unwrap());
        }
    }

    #[test]
    fn tiny_bodies_give_one_chunk(words in prop::collection::vec(prop::sample::select(WORDS), 1..8)) {
        let Some(doc) = doc(&words.join(" ")) else { return Ok(()) };
        prop_assume!(doc.char_len() < 100);
        for strategy in STRATEGIES {
            let chunks = chunk_document(&doc, &ChunkingPolicy::new(strategy)).unwrap();
            prop_assert_eq!(chunks.len(), 1, "{:?}", strategy);
        }
    }
}

#[test]
fn default_windows_on_a_2600_char_body() {
    let raw: String = (0..2600)
        .map(|i| if i % 7 == 6 { ' ' } else { 'a' })
        .collect::<String>();
    let raw = format!("b{}b", &raw[1..2599]);
    let doc = doc(&raw).unwrap();
    assert_eq!(doc.char_len(), 2600);
    let chunks = chunk_document(&doc, &ChunkingPolicy::new(ChunkStrategy::FixedSize)).unwrap();
    let spans: Vec<(usize, usize)> = chunks.iter().map(|c| (c.span.start, c.span.end)).collect();
    assert_eq!(spans, [(0, 1000), (800, 1800), (1600, 2600)]);
}

#[test]
fn manual_fixture_chunks_cleanly() {
    let raw = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/cbti_manual.md")).unwrap();
    let doc = doc(&raw).unwrap();
    for strategy in STRATEGIES {
        let policy = ChunkingPolicy::new(strategy);
        let chunks = chunk_document(&doc, &policy).unwrap();
        check(&doc, &policy, &chunks).unwrap();
    }
}
