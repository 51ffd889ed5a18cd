#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = decomp_cli::ExperimentConfig::from_toml_str(text, &[]) {
        assert!(cfg.train_config(0).validate().is_ok());
    }
});
