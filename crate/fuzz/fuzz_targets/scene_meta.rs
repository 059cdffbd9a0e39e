#![no_main]

use libfuzzer_sys::fuzz_target;
use lsfuse::data_io::{parse_meta, SynthSpec};

fuzz_target!(|text: &str| {
    let Ok(entries) = parse_meta(text) else {
        return;
    };
    if let Ok(spec) = SynthSpec::from_meta(&entries) {
        let again = SynthSpec::from_meta(&parse_meta(&spec.to_meta()).expect("own output parses"))
            .expect("own output is a spec");
        assert_eq!(again, spec);
    }
});
