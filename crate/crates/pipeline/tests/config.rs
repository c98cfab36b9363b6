use std::path::Path;

use coevo::config::{CascadeMode, PipelineConfig, Preset};

const TOY: &str = include_str!("../../../configs/toy.toml");

#[test]
fn shipped_config_parses() {
    let cfg = PipelineConfig::from_toml_str(TOY, None, Path::new(".")).unwrap();
    assert_eq!(cfg.preset, Preset::Toy);
    assert_eq!(cfg.cascade, CascadeMode::Cascade);
    assert_eq!(cfg.subject.corpus_subject.as_deref(), Some("subject-03"));
    assert_eq!(cfg.personalizer.iterations, 30);
    assert_eq!(cfg.multiview.iterations, 100);
    assert_eq!(cfg.sampler.steps, 50);
}

#[test]
fn unknown_keys_are_rejected() {
    for doc in [
        format!("{TOY}\nbogus = 1\n"),
        TOY.replace("seed = 7", "seed = 7\ncolour = \"red\""),
        TOY.replace("steps = 50", "steps = 50\neta = 0.5"),
    ] {
        let err = PipelineConfig::from_toml_str(&doc, None, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }
}

#[test]
fn serialized_config_round_trips_with_same_hash() {
    let cfg = PipelineConfig::from_toml_str(TOY, None, Path::new(".")).unwrap();
    let again = PipelineConfig::from_toml_str(&cfg.to_toml().unwrap(), None, Path::new(".")).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.hash(), cfg.hash());
    let mut other = cfg.clone();
    other.subject.seed += 1;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn invalid_subjects_are_rejected() {
    let both = TOY.replace("corpus_subject = \"subject-03\"", "corpus_subject = \"subject-03\"\nimage = \"x.png\"");
    assert!(PipelineConfig::from_toml_str(&both, None, Path::new(".")).is_err());
    let neither = TOY.replace("corpus_subject = \"subject-03\"", "");
    assert!(PipelineConfig::from_toml_str(&neither, None, Path::new(".")).is_err());
    let no_class = TOY.replace("corpus_subject = \"subject-03\"", "image = \"x.png\"");
    assert!(PipelineConfig::from_toml_str(&no_class, None, Path::new(".")).is_err());
    let spaced = TOY.replace("identifier = \"sks\"", "identifier = \"s ks\"");
    assert!(PipelineConfig::from_toml_str(&spaced, None, Path::new(".")).is_err());
}

#[test]
fn full_preset_needs_checkpoints() {
    let err = PipelineConfig::from_toml_str(TOY, Some(Preset::Full), Path::new(".")).unwrap_err();
    assert!(err.to_string().contains("checkpoint"), "{err}");
}

#[test]
fn relative_paths_resolve_against_the_config_directory() {
    let doc = TOY.replace(
        "corpus_subject = \"subject-03\"",
        "image = \"subject.png\"\nclass_noun = \"cup\"",
    );
    let cfg = PipelineConfig::from_toml_str(&doc, None, Path::new("/data/run")).unwrap();
    assert_eq!(cfg.subject.image.as_deref(), Some(Path::new("/data/run/subject.png")));
}
