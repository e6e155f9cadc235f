//! Deterministic synthetic benchmark generator.
//!
//! Produces a small self-contained world — a concept dictionary, a manually
//! annotated target corpus (train/validation/test), a retrieval library, and
//! a pseudo-annotator output stream — whose statistics mirror the situations
//! the pipeline is built for: a block of rare concepts with almost no manual
//! training data, evaluation mentions that use unseen surface forms, and a
//! noisy annotator that sometimes labels the wrong concept. Everything is a
//! pure function of the seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Annotation, AnnotationSource, Document, Span};
use crate::kb::{Concept, ConceptId, Kb, Vocab};
use crate::seeds::stream_rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    /// Total target concepts (excluding the abbreviation trap entry).
    pub n_concepts: usize,
    /// How many of them are rare (1–3 manual training documents).
    pub n_rare: usize,
    /// Library documents generated per rare concept.
    pub library_per_rare: usize,
    /// Probability that a pseudo-annotator line carries the wrong concept.
    pub noise_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_concepts: 200,
            n_rare: 30,
            library_per_rare: 14,
            noise_rate: 0.15,
        }
    }
}

/// Everything one benchmark instance contains.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    /// Target dictionary: the label space for training, indexing, evaluation.
    pub kb_target: Kb,
    /// Target dictionary plus the annotator's source vocabulary entries with
    /// cross-references, for the mapping stage.
    pub kb_bridge: Kb,
    pub train_docs: Vec<Document>,
    pub train_anns: Vec<Annotation>,
    pub val_docs: Vec<Document>,
    pub val_anns: Vec<Annotation>,
    pub test_docs: Vec<Document>,
    pub test_anns: Vec<Annotation>,
    pub library_docs: Vec<Document>,
    /// Pseudo-annotator output over the library, pipe-delimited.
    pub mmi: String,
    pub rare_concepts: Vec<ConceptId>,
}

const FILLERS: &[&str] = &[
    "the", "a", "study", "of", "patients", "with", "and", "clinical", "report", "analysis",
    "observed", "cohort", "findings", "results", "baseline", "followup",
];

const TRAP_CODE: &str = "S900";
const TRAP_CUI: &str = "C9001";

fn synthetic_id(i: usize) -> ConceptId {
    ConceptId::new(Vocab::Synthetic, format!("S{i:03}"))
}

fn cui(i: usize) -> String {
    format!("C{:04}", i + 1)
}

fn canonical_tokens(i: usize) -> [String; 2] {
    [format!("term{i:03}"), format!("cond{i:03}")]
}

fn alias_tokens(i: usize) -> [String; 2] {
    [format!("alt{i:03}"), format!("form{i:03}")]
}

fn canonical_name(i: usize) -> String {
    format!("Term{i:03} Cond{i:03}")
}

fn semantic_type(i: usize) -> &'static str {
    if i % 2 == 0 {
        "Disease"
    } else {
        "Chemical"
    }
}

fn build_kbs(cfg: &SynthConfig) -> (Kb, Kb) {
    let mut target = Vec::new();
    let mut bridge = Vec::new();
    for i in 0..cfg.n_concepts {
        let concept = Concept {
            id: synthetic_id(i),
            names: vec![canonical_name(i)],
            description: format!("reference entry for term{i:03} cond{i:03}"),
            semantic_type: semantic_type(i).to_string(),
            cross_refs: vec![],
        };
        target.push(concept.clone());
        bridge.push(concept);
        bridge.push(Concept {
            id: ConceptId::new(Vocab::Umls, cui(i)),
            names: vec![canonical_name(i)],
            description: String::new(),
            semantic_type: semantic_type(i).to_string(),
            cross_refs: vec![synthetic_id(i)],
        });
    }
    // Abbreviation trap: a short all-uppercase dictionary name that collides
    // with an ordinary lowercase word.
    let trap = Concept {
        id: ConceptId::new(Vocab::Synthetic, TRAP_CODE),
        names: vec!["WAS".to_string()],
        description: "short form dictionary entry".to_string(),
        semantic_type: "Disease".to_string(),
        cross_refs: vec![],
    };
    target.push(trap.clone());
    bridge.push(trap);
    bridge.push(Concept {
        id: ConceptId::new(Vocab::Umls, TRAP_CUI),
        names: vec!["WAS".to_string()],
        description: String::new(),
        semantic_type: "Disease".to_string(),
        cross_refs: vec![ConceptId::new(Vocab::Synthetic, TRAP_CODE)],
    });
    (
        Kb::new(target).expect("valid synthetic dictionary"),
        Kb::new(bridge).expect("valid bridge dictionary"),
    )
}

fn fillers(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..hi);
    (0..n)
        .map(|_| FILLERS[rng.gen_range(0..FILLERS.len())].to_string())
        .collect()
}

/// Payload item: a concept index plus whether its mention uses the canonical
/// surface form or the alias.
#[derive(Clone, Copy)]
struct Mention {
    concept: usize,
    canonical: bool,
}

const TITLE: &str = "clinical note";

/// Builds one document whose body interleaves filler words with concept
/// mentions, and the matching gold annotations with token spans.
fn make_doc(
    doc_id: &str,
    payload: &[Mention],
    rng: &mut ChaCha8Rng,
) -> (Document, Vec<Annotation>) {
    let mut tokens: Vec<String> = TITLE.split_whitespace().map(str::to_string).collect();
    let title_len = tokens.len();
    tokens.extend(fillers(rng, 2, 5));
    let mut anns = Vec::new();
    for m in payload {
        let surface = if m.canonical {
            canonical_tokens(m.concept)
        } else {
            alias_tokens(m.concept)
        };
        let start = tokens.len();
        tokens.extend(surface.iter().cloned());
        anns.push(Annotation {
            doc_id: doc_id.to_string(),
            span: Span::new(start, start + surface.len()),
            mention: surface.join(" "),
            concept: synthetic_id(m.concept),
            score: 1.0,
            source: AnnotationSource::Manual,
            entity_type: semantic_type(m.concept).to_string(),
        });
        tokens.extend(fillers(rng, 2, 5));
    }
    let body = tokens[title_len..].join(" ");
    (Document::new(doc_id, TITLE, &body), anns)
}

/// Assigns each frequent concept to `need_i` distinct documents, packing
/// about three concepts per document: least-filled slot first, skipping
/// slots that already hold the concept.
fn pack_frequent(needs: &[(usize, usize)], n_docs: usize) -> Vec<Vec<usize>> {
    let mut slots: Vec<Vec<usize>> = vec![Vec::new(); n_docs];
    for &(concept, need) in needs {
        let mut order: Vec<usize> = (0..n_docs).collect();
        order.sort_by_key(|&s| (slots[s].len(), s));
        let mut placed = 0;
        for s in order {
            if placed == need {
                break;
            }
            if !slots[s].contains(&concept) {
                slots[s].push(concept);
                placed += 1;
            }
        }
        assert_eq!(placed, need, "not enough document slots");
    }
    slots.retain(|s| !s.is_empty());
    slots
}

pub fn generate(cfg: &SynthConfig) -> SynthBenchmark {
    assert!(cfg.n_rare <= cfg.n_concepts);
    let (kb_target, kb_bridge) = build_kbs(cfg);

    let mut rng = stream_rng(cfg.seed, "synth/train");
    let mut train_docs = Vec::new();
    let mut train_anns = Vec::new();
    let mut doc_counter = 0usize;
    let mut next_train_id = || {
        doc_counter += 1;
        format!("T{:04}", doc_counter)
    };

    // Rare concepts: 1–3 manual documents each, canonical surface forms.
    for i in 0..cfg.n_rare {
        for _ in 0..(1 + i % 3) {
            let id = next_train_id();
            let (doc, anns) =
                make_doc(&id, &[Mention { concept: i, canonical: true }], &mut rng);
            train_docs.push(doc);
            train_anns.extend(anns);
        }
    }

    // Frequent concepts: 10–12 documents each, about three concepts per
    // document.
    let needs: Vec<(usize, usize)> = (cfg.n_rare..cfg.n_concepts)
        .map(|i| (i, 10 + i % 3))
        .collect();
    let total: usize = needs.iter().map(|(_, n)| n).sum();
    let n_docs = total.div_ceil(3);
    let mut shuffled = needs.clone();
    shuffled.shuffle(&mut rng);
    for group in pack_frequent(&shuffled, n_docs) {
        let id = next_train_id();
        let payload: Vec<Mention> = group
            .iter()
            .map(|&c| Mention { concept: c, canonical: true })
            .collect();
        let (doc, anns) = make_doc(&id, &payload, &mut rng);
        train_docs.push(doc);
        train_anns.extend(anns);
    }

    // Evaluation sets. Every rare concept gets one alias-only document in
    // validation and one in test, each padded with a frequent concept; a
    // handful of frequent-only documents round the sets out.
    let mut eval_rng = stream_rng(cfg.seed, "synth/eval");
    let mk_eval = |prefix: &str,
                       n_freq_docs: usize,
                       rng: &mut ChaCha8Rng|
     -> (Vec<Document>, Vec<Annotation>) {
        let mut docs = Vec::new();
        let mut anns = Vec::new();
        for i in 0..cfg.n_rare {
            let freq = cfg.n_rare + rng.gen_range(0..cfg.n_concepts - cfg.n_rare);
            let id = format!("{prefix}{:03}", docs.len());
            let payload = [
                Mention { concept: i, canonical: false },
                Mention { concept: freq, canonical: true },
            ];
            let (doc, a) = make_doc(&id, &payload, rng);
            docs.push(doc);
            anns.extend(a);
        }
        for _ in 0..n_freq_docs {
            let mut pair = BTreeSet::new();
            while pair.len() < 2 {
                pair.insert(cfg.n_rare + rng.gen_range(0..cfg.n_concepts - cfg.n_rare));
            }
            let id = format!("{prefix}{:03}", docs.len());
            let payload: Vec<Mention> = pair
                .into_iter()
                .map(|c| Mention { concept: c, canonical: true })
                .collect();
            let (doc, a) = make_doc(&id, &payload, rng);
            docs.push(doc);
            anns.extend(a);
        }
        (docs, anns)
    };
    let (val_docs, val_anns) = mk_eval("V", 10, &mut eval_rng);
    let (test_docs, test_anns) = mk_eval("E", 15, &mut eval_rng);

    // Library and its pseudo-annotator output. Each library document pairs
    // the canonical surface of one rare concept with its alias, so training
    // on these segments teaches the alias vocabulary.
    let mut lib_rng = stream_rng(cfg.seed, "synth/library");
    let mut library_docs = Vec::new();
    let mut mmi = String::new();
    let mut lib_counter = 0usize;
    for i in 0..cfg.n_rare {
        for _ in 0..cfg.library_per_rare {
            lib_counter += 1;
            let doc_id = format!("L{lib_counter:04}");
            let mut tokens: Vec<String> =
                "journal article".split_whitespace().map(str::to_string).collect();
            tokens.extend(fillers(&mut lib_rng, 2, 4));
            let canon_start = tokens.len();
            tokens.extend(canonical_tokens(i));
            tokens.extend(fillers(&mut lib_rng, 1, 4));
            tokens.extend(alias_tokens(i));
            tokens.extend(fillers(&mut lib_rng, 2, 5));

            // Abbreviation trap: a lowercase "was" labeled with the
            // short-form dictionary entry.
            let trap_pos = if lib_rng.gen_bool(0.08) {
                tokens.push("was".to_string());
                tokens.extend(fillers(&mut lib_rng, 1, 2));
                Some(tokens.len() - 2)
            } else {
                None
            };

            let body = tokens[2..].join(" ");
            library_docs.push(Document::new(&doc_id, "journal article", &body));

            // Main annotator line; occasionally the wrong concept.
            let labeled = if lib_rng.gen_bool(cfg.noise_rate) {
                lib_rng.gen_range(0..cfg.n_concepts)
            } else {
                i
            };
            let score = 0.75 + 0.2 * lib_rng.gen::<f64>();
            let _ = writeln!(
                mmi,
                "{doc_id}|MMI|{score:.4}|{}|{}|[dsyn]|{}|{}",
                canonical_name(labeled),
                cui(labeled),
                canon_start,
                canon_start + 2,
            );
            // Secondary candidate for the same span, ranked below.
            if lib_rng.gen_bool(0.10) {
                let other = lib_rng.gen_range(0..cfg.n_concepts);
                let _ = writeln!(
                    mmi,
                    "{doc_id}|MMI|{:.4}|{}|{}|[dsyn]|{}|{}",
                    (score - 0.2).max(0.0),
                    canonical_name(other),
                    cui(other),
                    canon_start,
                    canon_start + 2,
                );
            }
            // Overlap trap: a shorter span inside the canonical mention.
            if lib_rng.gen_bool(0.10) {
                let other = lib_rng.gen_range(0..cfg.n_concepts);
                let _ = writeln!(
                    mmi,
                    "{doc_id}|MMI|0.5000|{}|{}|[dsyn]|{}|{}",
                    canonical_name(other),
                    cui(other),
                    canon_start,
                    canon_start + 1,
                );
            }
            if let Some(pos) = trap_pos {
                let _ = writeln!(
                    mmi,
                    "{doc_id}|MMI|0.6000|WAS|{TRAP_CUI}|[dsyn]|{}|{}",
                    pos,
                    pos + 1,
                );
            }
        }
    }

    SynthBenchmark {
        kb_target,
        kb_bridge,
        train_docs,
        train_anns,
        val_docs,
        val_anns,
        test_docs,
        test_anns,
        library_docs,
        mmi,
        rare_concepts: (0..cfg.n_rare).map(synthetic_id).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::concept_occurrence_counts;
    use crate::pseudo::parse_mmi;

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 7,
            n_concepts: 40,
            n_rare: 8,
            library_per_rare: 6,
            noise_rate: 0.2,
        }
    }

    #[test]
    fn rare_and_frequent_counts_hold() {
        let bench = generate(&small());
        let counts = concept_occurrence_counts(&bench.train_anns);
        for (i, id) in bench.rare_concepts.iter().enumerate() {
            assert_eq!(counts[id], 1 + i % 3, "rare concept {id}");
        }
        for i in 8..40 {
            let id = synthetic_id(i);
            assert!(counts[&id] >= 10, "frequent concept {id} has {}", counts[&id]);
            assert!(counts[&id] <= 12);
        }
        // The trap entry never appears in manual data.
        assert!(!counts.contains_key(&ConceptId::new(Vocab::Synthetic, TRAP_CODE)));
    }

    #[test]
    fn eval_sets_cover_every_rare_concept_with_aliases() {
        let bench = generate(&small());
        for anns in [&bench.val_anns, &bench.test_anns] {
            for id in &bench.rare_concepts {
                let mentions: Vec<&Annotation> =
                    anns.iter().filter(|a| &a.concept == id).collect();
                assert!(!mentions.is_empty(), "{id} missing from eval");
                for m in mentions {
                    assert!(m.mention.starts_with("alt"), "expected alias, got {}", m.mention);
                }
            }
        }
    }

    #[test]
    fn annotation_spans_match_document_tokens() {
        let bench = generate(&small());
        let all = [
            (&bench.train_docs, &bench.train_anns),
            (&bench.val_docs, &bench.val_anns),
            (&bench.test_docs, &bench.test_anns),
        ];
        for (docs, anns) in all {
            for ann in anns.iter() {
                let doc = docs.iter().find(|d| d.doc_id == ann.doc_id).unwrap();
                let surface = doc.tokens[ann.span.start..ann.span.end].join(" ");
                assert_eq!(surface, ann.mention);
            }
        }
    }

    #[test]
    fn mmi_stream_parses_and_points_at_library_tokens() {
        let bench = generate(&small());
        let sets = parse_mmi(bench.mmi.as_bytes()).unwrap();
        assert!(sets.len() >= 8 * 6);
        for set in &sets {
            let doc = bench
                .library_docs
                .iter()
                .find(|d| d.doc_id == set.doc_id)
                .expect("annotated doc exists in library");
            assert!(set.span.end <= doc.tokens.len());
            for c in &set.candidates {
                assert_eq!(c.concept.vocabulary, Vocab::Umls);
                assert!(bench.kb_bridge.contains(&c.concept));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.mmi, b.mmi);
        assert_eq!(a.train_docs, b.train_docs);
        assert_eq!(a.test_anns, b.test_anns);
        let c = generate(&SynthConfig { seed: 8, ..small() });
        assert_ne!(a.mmi, c.mmi);
    }
}
