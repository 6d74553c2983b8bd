#![no_main]

use libfuzzer_sys::fuzz_target;
use mmfuse::features::{ingest_features, read_labels};

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = ingest_features(data, None) {
        // Accepted tables survive a write/read cycle unchanged.
        let again = ingest_features(table.to_csv("patient_id").as_bytes(), Some(table.width())).expect("round trip");
        assert_eq!(again.ids, table.ids);
        assert!(again.data.iter().zip(table.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let _ = read_labels(data);
});
