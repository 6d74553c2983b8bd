//! Clinical CSV ingestion followed by schema fitting and transformation.

#![no_main]

use libfuzzer_sys::fuzz_target;
use mmfuse::tabular::{fit_schema, read_clinical_csv, transform, ColumnDecl, ColumnKind};

fuzz_target!(|data: &[u8]| {
    if data.len() > 64 * 1024 {
        return;
    }
    let decls = [
        ColumnDecl::new("gender", ColumnKind::Categorical { categories: None }),
        ColumnDecl::new("age", ColumnKind::Numeric),
        ColumnDecl::new("grade", ColumnKind::Ordinal { levels: vec!["G1".into(), "G2".into(), "G3".into()] }),
        ColumnDecl::new("vhl", ColumnKind::Numeric).with_sentinel(),
        ColumnDecl::new("status", ColumnKind::Label { positive: None }),
    ];
    let Ok(records) = read_clinical_csv(data, "case_id", &decls) else {
        return;
    };
    if let Ok(schemas) = fit_schema(&records, &decls) {
        if let Ok(out) = transform(&records, &schemas) {
            assert_eq!(out.matrix.data.nrows(), records.len());
            assert!(out.matrix.data.iter().all(|v| v.is_finite()));
        }
    }
});
