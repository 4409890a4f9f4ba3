use std::collections::BTreeSet;
use std::path::Path;

use molmm_chem::{canonical_smiles, compute_properties, parse_smiles, render};
use molmm_data::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn workspace_file(rel: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel);
    std::fs::read_to_string(p).unwrap()
}

fn corpus(n: usize) -> Vec<String> {
    molmm_chem::smiles::read_smiles_lines(&workspace_file("data/corpus_5k.smi")).into_iter().take(n).collect()
}

fn small_inputs() -> CurateInputs {
    CurateInputs {
        corpus: corpus(120),
        captions: read_caption_file(&workspace_file("data/captions.tsv")),
        pairs: None,
    }
}

fn recompute(s: &str) -> PropertyValues {
    PropertyValues::from(&compute_properties(&parse_smiles(s).unwrap()).unwrap())
}

#[test]
fn answer_string_matches_table_form() {
    let p = PropertyValues {
        mw: 305.418,
        logp: 5.4213,
        tpsa: 25.5,
        hbd: 0,
        hba: 2,
        rb: 3,
        qed: 0.6281,
    };
    let text = property_answer(&p);
    assert_eq!(text, "The MW is 305.42, LogP is 5.42, TPSA is 25.5, HBD is 0, HBA is 2, RB is 3 and QED is 0.63");
    let back = parse_property_answer(&text).unwrap();
    assert_eq!(back, p.rounded());
    assert!(back.max_abs_diff(&p) <= 0.005 + 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]
    #[test]
    fn template_inverse(mw in 0.0f64..2000.0, logp in -20.0f64..20.0, tpsa in 0.0f64..500.0,
                        hbd in 0usize..40, hba in 0usize..40, rb in 0usize..60, qed in 0.0f64..1.0) {
        let p = PropertyValues { mw, logp, tpsa, hbd, hba, rb, qed };
        for text in [property_answer(&p), format!("Generate an image:\n Image of a molecule whose {}", property_clause(&p))] {
            let back = parse_property_answer(&text).unwrap();
            prop_assert_eq!(back, p.rounded());
            prop_assert!(back.max_abs_diff(&p) <= 0.005 + 1e-9);
        }
    }
}

#[test]
fn forty_to_one_split() {
    assert_eq!(test_count(4100, 40), 100);
    let (train, test) = split((0..4100).collect::<Vec<_>>(), 40, 7);
    assert_eq!((train.len(), test.len()), (4000, 100));
    let all: BTreeSet<_> = train.iter().chain(&test).collect();
    assert_eq!(all.len(), 4100);
    assert_eq!(split((0..4100).collect::<Vec<_>>(), 40, 7).1, test);
}

#[test]
fn identity_pair_rejected() {
    let e = entry("CCO", 32).unwrap();
    assert!(matches!(Pair::new(e.clone(), e), Err(DataError::PairOrder { .. })));
    let lo = entry("CCO", 32).unwrap();
    let hi = entry("CCCCO", 32).unwrap();
    assert!(Pair::new(hi.clone(), lo.clone()).is_err());
    assert!(Pair::new(lo, hi).is_ok());
}

#[test]
fn appended_chain_raises_logp() {
    let ethanol = parse_smiles("CCO").unwrap();
    // the terminal methyl carbon is atom 0
    let longer = attach(&ethanol, 0, &[6, 6, 6, 6]).unwrap();
    assert_eq!(canonical_smiles(&longer), canonical_smiles(&parse_smiles("CCCCCCO").unwrap()));
    let d = recompute("CCCCCCO").logp - recompute("CCO").logp;
    assert!(d > 0.0, "{d}");

    let cfg = DataConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pair = synthesize_pair(&entry("CCO", 32).unwrap(), &cfg, &mut rng).unwrap();
    assert!(pair.delta_logp() > cfg.pair_min_delta);
    let check = recompute(&pair.target.smiles).logp - recompute(&pair.source.smiles).logp;
    assert!((check - pair.delta_logp()).abs() < 1e-12);
}

#[test]
fn attach_on_aromatic_carbon() {
    let benzene = parse_smiles("c1ccccc1").unwrap();
    let chloro = attach(&benzene, 2, &[17]).unwrap();
    assert_eq!(canonical_smiles(&chloro), canonical_smiles(&parse_smiles("Clc1ccccc1").unwrap()));
    assert!(attach(&parse_smiles("C(C)(C)(C)C").unwrap(), 0, &[6]).is_err());
}

#[test]
fn pair_file_line_becomes_record() {
    let lines = read_pair_file("# header\nCCO CCCCO\n\nCCCCO CCO\nbroken\n");
    assert_eq!(lines.len(), 2);
    let pairs = ingest_pairs(&lines, 32);
    // the reversed line violates the ordering and is skipped
    assert_eq!(pairs.len(), 1);
    let mut images = Default::default();
    let recs = build_img2img_pairs(&pairs, &DataConfig::default(), "train", &mut images);
    assert_eq!(recs[0].provenance.smiles, canonical_smiles(&parse_smiles("CCO").unwrap()));
    assert_eq!(recs[0].provenance.target_smiles.as_deref(), Some("CCCCO"));
    assert_eq!(recs[0].task, Task::Img2Img);
    verify_record(&recs[0]).unwrap();
    assert_eq!(images.len(), 2);
}

#[test]
fn caption_records() {
    let cfg = DataConfig::default();
    let fixture = read_caption_file(&workspace_file("data/captions.tsv"));
    assert!(fixture.len() >= 30);
    let mut raw = fixture.clone();
    raw.push(("CCN".into(), "   ".into()));
    raw.push(("not-a-smiles".into(), "A caption.".into()));
    raw.push(("CCC".into(), "word ".repeat(cfg.caption_max_words + 1)));
    let items = prepare_captions(&raw, &cfg);
    assert_eq!(items.len(), fixture.len());

    let build = |seed| {
        let mut images = Default::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (build_img2caption(&items, "train", &mut rng, &mut images), images)
    };
    let (recs, images) = build(5);
    assert_eq!(recs, build(5).0);
    let prompts = |r: &[TaskRecord]| r.iter().map(|x| x.input[0].clone()).collect::<Vec<_>>();
    assert_ne!(prompts(&recs), prompts(&build(6).0));
    for (r, (smiles, caption)) in recs.iter().zip(&fixture) {
        let Part::Image { image_path } = &r.input[1] else { panic!() };
        let expect = render(&parse_smiles(smiles).unwrap(), cfg.resolution).unwrap();
        assert_eq!(images[image_path], expect);
        assert_eq!(r.answer_text(), *caption);
        let Part::Text { text } = &r.input[0] else { panic!() };
        assert!(templates::CAPTION_PROMPTS.contains(&text.as_str()));
    }
}

#[test]
fn unparameterized_molecules_are_skipped() {
    let entries = prepare_corpus(&["CCO".into(), "[Xe]".into(), "C1CC".into(), "OCC".into()], 32);
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].smiles, canonical_smiles(&parse_smiles("CCO").unwrap()));
}

#[test]
fn curated_dataset_integrity() {
    let cfg = DataConfig::default();
    let d = curate(&small_inputs(), &cfg).unwrap();
    assert!(!d.train.is_empty() && !d.test.is_empty());
    for t in Task::ALL {
        assert!(d.train.iter().any(|r| r.task == t), "no {t} train records");
    }
    for r in d.records() {
        verify_record(r).unwrap();
        for p in r.image_paths() {
            d.image(p).unwrap();
        }
    }
    assert!(shared_molecules(&d).is_empty());

    // property2img is img2property with question and answer swapped
    for split in [&d.train, &d.test] {
        let prop: Vec<_> = split.iter().filter(|r| r.task == Task::Img2Property).collect();
        let inv: Vec<_> = split.iter().filter(|r| r.task == Task::Property2Img).collect();
        assert_eq!(prop.len(), inv.len());
        for (a, b) in prop.iter().zip(&inv) {
            assert_eq!(a.provenance, b.provenance);
            let (Part::Text { text: answer }, Part::Text { text: request }) = (&a.output[0], &b.input[0]) else { panic!() };
            let clause = answer.strip_prefix("The ").unwrap();
            assert!(request.ends_with(&format!("whose {clause}")));
            assert_eq!(a.input[1], b.output[1]);
        }
    }
    let ids: Vec<_> = d.train.iter().map(|r| r.id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn files_round_trip_and_rerun_is_byte_identical() {
    let cfg = DataConfig {
        max_molecules: 60,
        ..DataConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let d = curate(&small_inputs(), &cfg).unwrap();
    d.write(a.path()).unwrap();
    curate(&small_inputs(), &cfg).unwrap().write(b.path()).unwrap();
    assert!(Dataset::read(a.path()).unwrap() == d, "read-back differs");
    let files = |dir: &Path| {
        let mut v: Vec<_> = walk(dir).into_iter().map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap())).collect();
        v.sort();
        v
    };
    assert_eq!(files(a.path()), files(b.path()));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn rotation_quadruples_records() {
    let cfg = DataConfig {
        max_molecules: 30,
        ..DataConfig::default()
    };
    let mut d = curate(&small_inputs(), &cfg).unwrap();
    let n = d.train.len();
    let rotated = augment_rotations(&d.train, &mut d.images).unwrap();
    assert_eq!(rotated.len(), 4 * n);
    let ids: BTreeSet<_> = rotated.iter().map(|r| r.id.clone()).collect();
    assert_eq!(ids.len(), 4 * n);
    for r in &rotated {
        for p in r.image_paths() {
            assert!(d.images.contains_key(p));
        }
    }
    for img in d.images.values().take(20) {
        let mut x = img.clone();
        for _ in 0..4 {
            x = x.rot90().unwrap();
        }
        assert_eq!(x.to_ppm(), img.to_ppm());
    }
    let with_rot = curate(&small_inputs(), &DataConfig { rotate_train: true, ..cfg }).unwrap();
    assert_eq!(with_rot.train.len(), 4 * n);
}

#[test]
fn task_selection_and_config_checks() {
    let cfg = DataConfig {
        tasks: vec![Task::Img2Smiles],
        max_molecules: 20,
        ..DataConfig::default()
    };
    let d = curate(&small_inputs(), &cfg).unwrap();
    assert!(d.records().all(|r| r.task == Task::Img2Smiles));
    assert!(curate(&small_inputs(), &DataConfig { tasks: vec![], ..cfg.clone() }).is_err());
    assert!(matches!(
        curate(&CurateInputs::default(), &DataConfig::default()),
        Err(DataError::EmptyCorpus)
    ));
    assert_eq!("img2img".parse::<Task>().unwrap(), Task::Img2Img);
    assert!("img2x".parse::<Task>().is_err());
}

#[test]
fn jsonl_shape() {
    let cfg = DataConfig {
        max_molecules: 5,
        tasks: vec![Task::Img2Property],
        ..DataConfig::default()
    };
    let d = curate(&small_inputs(), &cfg).unwrap();
    let line = serde_json::to_value(&d.train[0]).unwrap();
    assert_eq!(line["task"], "img2property");
    assert_eq!(line["input"][0]["type"], "text");
    assert_eq!(line["input"][1]["type"], "image");
    assert!(line["input"][1]["image_path"].as_str().unwrap().starts_with("images/"));
    assert!(line["provenance"]["properties"]["mw"].is_number());
}
