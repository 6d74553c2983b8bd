#![no_main]

use libfuzzer_sys::fuzz_target;
use mmfuse::curate::{RuleSet, RuleSpec};

fuzz_target!(|data: &[u8]| {
    if data.len() > 16 * 1024 {
        return;
    }
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = RuleSpec::from_json(text) {
        let _ = RuleSet::compile(&spec);
    }
});
