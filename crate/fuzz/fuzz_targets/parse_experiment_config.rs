#![no_main]
use libfuzzer_sys::fuzz_target;
use sarith::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ExperimentConfig::from_json(s) {
        let _ = config.validate();
        let _ = config.profiles();
        let json = serde_json::to_string(&config).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), config);
    }
});
