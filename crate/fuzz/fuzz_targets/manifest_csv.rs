//! Series manifest parsing and classification under the default rules.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mmfuse::curate::{classify, decisions_csv, read_manifest, summarize, RuleSet};

fuzz_target!(|data: &[u8]| {
    let Ok(records) = read_manifest(data) else {
        return;
    };
    let rules = RuleSet::default_rules();
    let decisions: Vec<_> = records.iter().map(|r| classify(r, &rules)).collect();
    let _ = decisions_csv(&records, &decisions);
    let summary = summarize(&records, &decisions).expect("lengths agree");
    assert!(summary.kept_scans <= summary.total_scans);
});
