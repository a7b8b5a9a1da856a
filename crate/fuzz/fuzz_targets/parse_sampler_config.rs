#![no_main]
use libfuzzer_sys::fuzz_target;
use sarith::sampler::{sample_matrix, SamplerConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(config) = serde_json::from_slice::<SamplerConfig>(data) else { return };
    if config.validate().is_ok() && config.precision.values().all(|&k| k <= 64) && config.m * config.n <= 16 {
        let _ = sample_matrix(&config);
    }
});
