use std::path::Path;

use slu_augment::checkpoint::{checkpoint_id, load_generator, load_slu, save_generator, save_slu};
use slu_augment::io::{
    dataset_sha256, load_acts, load_dataset, load_ontology, load_templates, read_jsonl, save_dataset, write_json, write_jsonl,
    ActRecord, CorpusRecord, OntologyFile, TemplateFile,
};
use slu_augment::synthetic::{toy_data, ToySizes, SOURCE, TARGET};
use slu_augment_core::augment::{build_generator_corpus, LabeledUtterance};
use slu_augment_core::generator::SourcePhrase;
use slu_augment_core::ontology::parse_dialogue_act;
use slu_augment_core::slu::SluExample;
use slu_augment_core::tokenize::tokenize;
use slu_augment_core::{GeneratorConfig, GeneratorModel, ParseConfig, SluModel, Vocabulary};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn dstc_style_ontologies_have_their_declared_universe() {
    let o2 = load_ontology(&fixture("dstc2_style_ontology.json")).unwrap();
    let o3 = load_ontology(&fixture("dstc3_style_ontology.json")).unwrap();
    assert_eq!(o2.delex_universe().len(), 41);
    assert_eq!(o3.delex_universe().len(), 35);
}

#[test]
fn ontology_and_templates_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = TARGET.ontology();
    let reg = TARGET.templates();
    write_json(&dir.path().join("o.json"), &OntologyFile::from_ontology(&o)).unwrap();
    write_json(&dir.path().join("t.json"), &TemplateFile::from_registry(&reg)).unwrap();
    let o2 = load_ontology(&dir.path().join("o.json")).unwrap();
    assert_eq!(o2, o);
    let reg2 = load_templates(&dir.path().join("t.json"), &o2).unwrap();
    assert_eq!(TemplateFile::from_registry(&reg2), TemplateFile::from_registry(&reg));
}

#[test]
fn template_file_uses_the_documented_shape() {
    let t: TemplateFile = serde_json::from_str(r#"{"templates": {"bye()": ["goodbye", "bye"], "inform(food=[food])": ["[food]", "[food] food"]}}"#).unwrap();
    let reg = t.to_registry().unwrap();
    assert_eq!(reg.len(), 2);
    let bad: TemplateFile = serde_json::from_str(r#"{"templates": {"inform(food=[food])": ["food please"]}}"#).unwrap();
    assert!(bad.to_registry().is_err());
}

#[test]
fn invalid_ontology_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("o.json");
    std::fs::write(&p, r#"{"acts": ["inform"], "slots": [], "delex_triples": ["inform(food=[food])"]}"#).unwrap();
    assert!(load_ontology(&p).is_err());
    std::fs::write(&p, r#"{"acts": ["inform"], "slots": [{"name": "food", "kind": "weird", "values": ["thai"]}], "delex_triples": []}"#).unwrap();
    assert!(load_ontology(&p).is_err());
}

#[test]
fn datasets_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = toy_data(4, ToySizes { source_train: 20, source_dev: 5, target_pool: 30, target_seed: 10, target_eval: 10 });
    let p = dir.path().join("seed.jsonl");
    save_dataset(&p, &d.target_seed).unwrap();
    let back = load_dataset(&p, &d.target_ontology).unwrap();
    assert_eq!(back, d.target_seed);
    assert_eq!(dataset_sha256(&back), dataset_sha256(&d.target_seed));
    // Target data does not validate against the source ontology.
    assert!(load_dataset(&p, &SOURCE.ontology()).is_err());

    std::fs::write(&p, "{\"utterance\": \"hi\", \"dialogue_act\": \"\"}\n").unwrap();
    let err = load_dataset(&p, &d.target_ontology).unwrap_err();
    assert!(format!("{err:#}").contains(":1"), "{err:#}");
}

#[test]
fn acts_files_accept_objects_strings_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("acts.jsonl");
    std::fs::write(&j, "{\"dialogue_act\": \"bye(), thankyou()\"}\n\"request(addr)\"\n\n").unwrap();
    let acts = load_acts(&j).unwrap();
    assert_eq!(acts.len(), 2);
    let t = dir.path().join("acts.txt");
    std::fs::write(&t, "bye(), thankyou()\nrequest(addr)\n").unwrap();
    assert_eq!(load_acts(&t).unwrap(), acts);
}

#[test]
fn corpus_records_keep_value_positions() {
    let d = toy_data(1, ToySizes { source_train: 30, source_dev: 5, target_pool: 10, target_seed: 5, target_eval: 5 });
    let (corpus, _) = build_generator_corpus(&d.source_train, &d.source_templates, &d.source_ontology, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.jsonl");
    let recs: Vec<CorpusRecord> = corpus.iter().map(CorpusRecord::from).collect();
    write_jsonl(&p, &recs).unwrap();
    let back: Vec<CorpusRecord> = read_jsonl(&p).unwrap();
    assert_eq!(back, recs);
    for (rec, entry) in back.iter().zip(&corpus) {
        let spans = rec.value_spans.as_ref().unwrap();
        for ((text, span), ex) in rec.exemplars.iter().zip(spans).zip(&entry.exemplars) {
            let phrase = SourcePhrase::from(ex);
            let mask: Vec<usize> = phrase.value_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
            assert_eq!(&mask, span);
            assert_eq!(tokenize(text), phrase.tokens);
        }
    }
    let plain: CorpusRecord =
        serde_json::from_str(r#"{"exemplars": ["thank you","good bye"], "utterance": "thank you good bye", "dialogue_act": "bye(), thankyou()"}"#).unwrap();
    assert!(plain.value_spans.is_none());
}

fn tiny_generator() -> GeneratorModel {
    let cfg = GeneratorConfig { embedding_dim: 6, hidden_units: 5, ..GeneratorConfig::default() };
    GeneratorModel::new(cfg, Vocabulary::build(["thank", "you", "good", "bye"]), 3).unwrap()
}

#[test]
fn generator_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_generator();
    let id = save_generator(dir.path(), &m).unwrap();
    assert_eq!(id, checkpoint_id(m.params()));
    let back = load_generator(dir.path()).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.config(), m.config());
    assert_eq!(back.vocab(), m.vocab());
    let src = vec![SourcePhrase::plain(tokenize("thank you")), SourcePhrase::plain(tokenize("good bye"))];
    assert_eq!(back.generate(&src).unwrap(), m.generate(&src).unwrap());
    // The parser loader refuses a generator bundle.
    assert!(load_slu(dir.path()).is_err());
}

#[test]
fn corrupted_or_foreign_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_generator(dir.path(), &tiny_generator()).unwrap();
    let bin = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&bin, &bytes).unwrap();
    assert!(load_generator(dir.path()).is_err());

    save_generator(dir.path(), &tiny_generator()).unwrap();
    let meta = dir.path().join("meta.json");
    let text = std::fs::read_to_string(&meta).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
    std::fs::write(&meta, text).unwrap();
    let err = load_generator(dir.path()).unwrap_err();
    assert!(err.to_string().contains("format 99"), "{err}");
}

#[test]
fn parser_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let ex = SluExample::new("i want thai food", parse_dialogue_act("inform(food=thai)").unwrap());
    let vocab = Vocabulary::build(ex.vocabulary_tokens());
    let cfg = ParseConfig { embedding_dim: 6, hidden_units: 5, label_dim: 3, ..ParseConfig::default() };
    let m = SluModel::new(cfg, vocab, vec!["inform".into()], vec!["food".into()], 2).unwrap();
    save_slu(dir.path(), &m).unwrap();
    let back = load_slu(dir.path()).unwrap();
    assert_eq!(back.acts(), m.acts());
    assert_eq!(back.slots(), m.slots());
    assert_eq!(back.params(), m.params());
    assert_eq!(back.parse(&ex.tokens, None), m.parse(&ex.tokens, None));
}

#[test]
fn act_records_serialize_as_objects() {
    let r = ActRecord::Object { dialogue_act: parse_dialogue_act("thankyou(), bye()").unwrap() };
    assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"dialogue_act":"bye(), thankyou()"}"#);
    let lu = LabeledUtterance::new("bye", parse_dialogue_act("bye()").unwrap());
    assert_eq!(dataset_sha256(std::slice::from_ref(&lu)), dataset_sha256(&[lu]));
}
