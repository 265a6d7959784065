use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use novelkg_core::clustering::Algorithm;
use novelkg_core::embeddings::Metric;
use novelkg_core::pipeline::{artifacts, run, stats, LabeledCluster, PipelineConfig, RunReport, Stage};
use novelkg_core::relations::RelationalInstance;
use novelkg_core::synthetic::{generate, SynthConfig, SyntheticCorpus, TEMPLATES};

fn synthetic_run(dir: &Path, synth: &SynthConfig, tweak: impl FnOnce(&mut PipelineConfig)) -> (SyntheticCorpus, PipelineConfig, RunReport) {
    let corpus = generate(synth);
    let inputs = corpus.write_to(&dir.join("corpus")).unwrap();
    let mut config = PipelineConfig::new(inputs);
    config.output = Some(dir.join("out"));
    config.clustering.k = 4;
    config.clustering.seed = 11;
    tweak(&mut config);
    let report = run(&config, Stage::Corpus).unwrap();
    (corpus, config, report)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn purity(corpus: &SyntheticCorpus, out: &Path) -> (f64, BTreeMap<usize, usize>) {
    let truth: HashMap<_, _> = corpus.sentences.iter().map(|s| (s.sent_id.clone(), s.template)).collect();
    let instances: Vec<RelationalInstance> = read_jsonl(&out.join(artifacts::INSTANCES));
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(artifacts::ASSIGNMENT)).unwrap()).unwrap();
    let mut counts: BTreeMap<i64, BTreeMap<usize, usize>> = BTreeMap::new();
    for i in &instances {
        let c = record["labels"][&i.instance_id].as_i64().unwrap();
        *counts.entry(c).or_default().entry(truth[&i.sent_id]).or_default() += 1;
    }
    let majority: BTreeMap<usize, usize> =
        counts.iter().map(|(c, m)| (*c as usize, *m.iter().max_by_key(|(_, n)| **n).unwrap().0)).collect();
    let hits: usize = counts.values().map(|m| m.values().max().unwrap()).sum();
    (hits as f64 / instances.len() as f64, majority)
}

#[test]
fn synthetic_corpus_recovers_templates() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, config, report) = synthetic_run(tmp.path(), &SynthConfig::default(), |_| {});
    let out = config.output.clone().unwrap();
    assert_eq!(report.sentences, 60);
    assert_eq!(report.relational_sentences, 60);
    assert_eq!(report.characters, 8);
    assert_eq!(report.clusters, 4);
    assert_eq!(report.summary, "60 suitable sentences out of 60");

    let (purity, majority) = purity(&corpus, &out);
    assert!(purity >= 0.9, "purity {purity}");
    let labels: Vec<LabeledCluster> = serde_json::from_str(&fs::read_to_string(out.join(artifacts::LABELS)).unwrap()).unwrap();
    assert_eq!(labels.len(), 4);
    for l in &labels {
        let lemma = TEMPLATES[majority[&l.label.cluster_id]].lemma;
        assert!(l.label.lemmas.iter().any(|x| x == lemma), "{:?} lacks {lemma}", l.label);
    }
    assert_eq!(stats(&out).unwrap(), report);
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config, _) = synthetic_run(tmp.path(), &SynthConfig::default(), |_| {});
    let first = dir_contents(config.output.as_ref().unwrap());
    assert_eq!(first.len(), 18);

    let mut again = config.clone();
    again.output = Some(tmp.path().join("again"));
    run(&again, Stage::Corpus).unwrap();
    assert_eq!(dir_contents(&tmp.path().join("again")), first);

    // the config written next to the outputs reproduces them
    let mut reloaded = PipelineConfig::load(&config.output.as_ref().unwrap().join(artifacts::CONFIG)).unwrap();
    reloaded.output = Some(tmp.path().join("reloaded"));
    run(&reloaded, Stage::Corpus).unwrap();
    assert_eq!(dir_contents(&tmp.path().join("reloaded")), first);
}

#[test]
fn resuming_from_any_stage_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config, report) = synthetic_run(tmp.path(), &SynthConfig::default(), |_| {});
    let out = config.output.clone().unwrap();
    let first = dir_contents(&out);
    for stage in Stage::ALL {
        assert_eq!(run(&config, stage).unwrap(), report, "from {stage}");
        let again = dir_contents(&out);
        for (name, bytes) in &first {
            assert!(again[name] == *bytes, "{name} differs after resuming from {stage}");
        }
    }
}

#[test]
fn resuming_uses_new_settings_downstream() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut config, _) = synthetic_run(tmp.path(), &SynthConfig::default(), |_| {});
    config.clustering.k = 2;
    let report = run(&config, Stage::Clustering).unwrap();
    assert_eq!(report.clusters, 2);
    assert_eq!(report.sentences, 60);
}

#[test]
fn disjoint_casts_give_two_components() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = SynthConfig { two_casts: true, ..Default::default() };
    let (_, _, report) = synthetic_run(tmp.path(), &synth, |_| {});
    assert_eq!(report.documents, 2);
    assert_eq!(report.characters, 8);
    assert_eq!(report.components, 2);
}

#[test]
fn no_relational_sentences_is_a_clean_empty_run() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("quiet.txt");
    fs::write(&input, "The rain fell all night. Nobody came to the door. In the morning Mr. Hale left alone.\n").unwrap();
    let mut config = PipelineConfig::new(vec![input]);
    config.output = Some(tmp.path().join("out"));
    let report = run(&config, Stage::Corpus).unwrap();
    assert_eq!(report.sentences, 3);
    assert_eq!((report.relational_sentences, report.instances, report.clusters, report.edges), (0, 0, 0, 0));
    assert_eq!(report.summary, "0 suitable sentences out of 3");
    assert!(report.warnings.iter().any(|w| w.contains("no relational sentences")));
    let graph = fs::read_to_string(tmp.path().join("out").join(artifacts::GRAPH_TSV)).unwrap();
    assert_eq!(graph, "subject\trelation\tobject\tweight\n");
    assert_eq!(stats(&tmp.path().join("out")).unwrap(), report);
}

#[test]
fn hand_tallied_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("tally.txt");
    fs::write(
        &input,
        "Harry Potter looked at Ron Weasley. Harry and Ron laughed. Hermione Granger smiled.\n\n\
         Ron gave Hermione the book while Harry watched. Then Harry thanked Hermione.\n",
    )
    .unwrap();
    let mut config = PipelineConfig::new(vec![input]);
    config.output = Some(tmp.path().join("out"));
    config.clustering.k = 2;
    let report = run(&config, Stage::Corpus).unwrap();
    // 1: Harry>Ron; 2: Harry&Ron, both directions; 3: one character;
    // 4: three characters; 5: Harry>Hermione
    assert_eq!(report.sentences, 5);
    let aliases = fs::read_to_string(tmp.path().join("out").join(artifacts::ALIASES)).unwrap();
    assert_eq!(report.characters, 3, "{aliases}");
    assert_eq!(report.relational_sentences, 3);
    assert_eq!(report.symmetric_sentences, 1);
    assert_eq!(report.asymmetric_sentences, 2);
    assert_eq!(report.instances, 4);
    assert_eq!(report.clusters, 2);
    assert_eq!(report.summary, "3 suitable sentences out of 5");
}

#[test]
fn dbscan_sweep_shows_the_singleton_transition() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, _, report) = synthetic_run(tmp.path(), &SynthConfig::default(), |c| {
        c.clustering.algorithm = Algorithm::Dbscan;
        c.clustering.eps = 0.05;
        c.clustering.min_pts = 2;
        c.clustering.eps_sweep = vec![0.05, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5];
    });
    let first = report.eps_sweep.first().unwrap();
    let last = report.eps_sweep.last().unwrap();
    assert!(first.singleton_fraction > 0.5, "{first:?}");
    assert_eq!((last.clusters, last.noise, last.largest_cluster), (1, 0, 60));
    assert!(report.singleton_fraction > 0.5);
    assert!(report.warnings.iter().any(|w| w.contains("single-sentence clusters")));
}

#[test]
fn monotone_silhouette_keeps_configured_k() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, _, report) = synthetic_run(tmp.path(), &SynthConfig::default(), |c| {
        c.clustering.k_grid = vec![2, 3, 4, 5, 6];
        c.clustering.metric = Metric::Euclidean;
    });
    let selection = report.select_k.expect("grid was given");
    assert_eq!(selection.scores.len(), 5);
    if selection.monotone {
        assert_eq!(report.clusters, 4);
        assert!(report.warnings.iter().any(|w| w.contains("monotone")));
    } else {
        assert_eq!(report.clusters, selection.k);
    }
}

#[test]
fn stats_needs_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config, _) = synthetic_run(tmp.path(), &SynthConfig::default(), |_| {});
    let out = config.output.unwrap();
    fs::remove_file(out.join(artifacts::CLUSTERS)).unwrap();
    let err = stats(&out).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains(artifacts::CLUSTERS));
    assert!(stats(&tmp.path().join("nowhere")).is_err());
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::new(vec![tmp.path().join("missing.txt")]);
    config.output = Some(tmp.path().join("out"));
    assert_eq!(run(&config, Stage::Corpus).unwrap_err().exit_code(), 2);

    let mut bad = config.clone();
    bad.clustering.k = 0;
    assert_eq!(run(&bad, Stage::Corpus).unwrap_err().exit_code(), 1);
    bad = config.clone();
    bad.output = None;
    assert_eq!(run(&bad, Stage::Corpus).unwrap_err().exit_code(), 1);

    let (_, mut config, _) = synthetic_run(&tmp.path().join("synth"), &SynthConfig::default(), |_| {});
    config.embedding.provider = "exec:exit 1".parse().unwrap();
    let err = run(&config, Stage::Embeddings).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    // earlier artifacts survive the failure
    assert!(config.output.unwrap().join(artifacts::INSTANCES).exists());
}
