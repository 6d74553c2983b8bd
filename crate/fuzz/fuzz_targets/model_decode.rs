//! Model file decoding. Anything that decodes must re-encode to the same bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mmfuse::neural::{load_model, save_model};

fuzz_target!(|data: &[u8]| {
    if data.len() > 1024 * 1024 {
        return;
    }
    if let Ok(file) = load_model(data) {
        let bytes = save_model(&file).expect("decoded model re-encodes");
        let again = load_model(&bytes).expect("re-encoded model decodes");
        assert_eq!(save_model(&again).expect("second encode"), bytes);
    }
});
