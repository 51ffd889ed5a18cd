#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = decomp_core::datastream::parse_embeddings(text, "<fuzz>") {
        // Accepted data must be usable: finite features of the declared width.
        for r in &ds.records {
            assert_eq!(r.instance.features.len(), ds.feature_dim);
            assert!(r.instance.features.iter().all(|x| x.is_finite()));
        }
    }
});
