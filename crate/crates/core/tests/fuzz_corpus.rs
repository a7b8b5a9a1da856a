use std::path::{Path, PathBuf};

use sarith::approx::{ApproxCollection, PsiSpec};
use sarith::experiment::{read_csv, write_csv, ExperimentConfig};
use sarith::sampler::{sample_matrix, SamplerConfig};
use sarith::sring::{parse_rational, PlaceSet};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn rational_seeds() {
    let mut ok = 0;
    for (_, data) in seeds("parse_rational") {
        if let Ok(x) = parse_rational(std::str::from_utf8(&data).unwrap()) {
            assert_eq!(parse_rational(&x.to_string()).unwrap(), x);
            ok += 1;
        }
    }
    assert!(ok >= 3);
}

#[test]
fn psi_seeds_parse() {
    for (path, data) in seeds("parse_psi_spec") {
        let s = std::str::from_utf8(&data).unwrap();
        let spec: PsiSpec = serde_json::from_str(s).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<PsiSpec>(&json).unwrap(), spec);
        let places = PlaceSet::new(spec.finite.keys().copied()).unwrap();
        let psi = ApproxCollection::from_json(s, &places, 1, 1).unwrap();
        psi.integral_diverges().unwrap();
    }
}

#[test]
fn config_seeds_round_trip() {
    for (path, data) in seeds("parse_experiment_config") {
        let config = ExperimentConfig::from_json(std::str::from_utf8(&data).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap();
        let json = serde_json::to_string(&config).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), config);
    }
}

#[test]
fn csv_seeds_round_trip() {
    for (_, data) in seeds("parse_run_csv") {
        let records = read_csv(data.as_slice()).unwrap();
        let mut out = Vec::new();
        write_csv(&records, &mut out).unwrap();
        assert_eq!(out, data);
    }
}

#[test]
fn sampler_seeds() {
    for (_, data) in seeds("parse_sampler_config") {
        let config: SamplerConfig = serde_json::from_slice(&data).unwrap();
        config.validate().unwrap();
        sample_matrix(&config).unwrap();
    }
}

mod arbitrary_input {
    use proptest::prelude::*;

    use sarith::experiment::{read_csv, ExperimentConfig};
    use sarith::sring::parse_rational;

    proptest! {
        #[test]
        fn rational_parser_never_panics(s in "[-+0-9./ eE]{0,24}") {
            let _ = parse_rational(&s);
        }

        #[test]
        fn config_parser_never_panics(s in "\\{[\"a-z:0-9,\\[\\]{}/ ]{0,80}\\}") {
            let _ = ExperimentConfig::from_json(&s);
        }

        #[test]
        fn csv_reader_never_panics(body in "[0-9a-zT_,/.\\n-]{0,120}") {
            let _ = read_csv(format!("seed,sample,step,T_inf,T_2,V,N,ratio\n{body}").as_bytes());
            let _ = read_csv(body.as_bytes());
        }
    }
}
