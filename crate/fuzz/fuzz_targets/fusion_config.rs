#![no_main]

use libfuzzer_sys::fuzz_target;
use lsfuse::pipeline::FusionConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = FusionConfig::from_toml_str(text) {
        let again =
            FusionConfig::from_toml_str(&cfg.to_toml_string().expect("valid config serializes"))
                .expect("own output parses");
        assert_eq!(again, cfg);
    }
});
