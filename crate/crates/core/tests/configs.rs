use std::path::Path;

use filtergraft::archzoo::ArchSpec;
use filtergraft::datahub::SplitTable;
use filtergraft::protocols::ExperimentSpec;
use filtergraft::trainer::TrainConfig;

const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");

fn files(sub: &str, ext: &str) -> Vec<std::path::PathBuf> {
    let mut out: Vec<_> = std::fs::read_dir(Path::new(CONFIGS).join(sub))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    out
}

#[test]
fn arch_files_match_builtins() {
    let arch = files("arch", "toml");
    assert!(arch.len() >= 4);
    for p in arch {
        let spec = ArchSpec::load(&p).unwrap();
        let name = p.file_stem().unwrap().to_str().unwrap();
        assert_eq!(spec.name, name);
        assert_eq!(Some(spec), ArchSpec::builtin(name), "{name}");
    }
}

#[test]
fn train_profiles_match_bundled_defaults() {
    let dir = Path::new(CONFIGS).join("train");
    assert_eq!(TrainConfig::load(&dir.join("default.toml")).unwrap(), TrainConfig::default());
    assert_eq!(TrainConfig::load(&dir.join("smoke.toml")).unwrap(), TrainConfig::smoke());
}

#[test]
fn split_files_match_bundled_tables() {
    for p in files("splits", "json") {
        let name = p.file_stem().unwrap().to_str().unwrap();
        assert_eq!(SplitTable::load(&p).unwrap(), SplitTable::lookup(name, None).unwrap());
    }
}

#[test]
fn experiment_specs_parse() {
    let specs = files("experiments", "toml");
    assert!(specs.len() >= 10);
    for p in specs {
        let spec = ExperimentSpec::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        spec.train_config(Path::new(CONFIGS)).unwrap();
        ArchSpec::resolve(&spec.target.arch, Path::new(CONFIGS)).unwrap();
    }
}
