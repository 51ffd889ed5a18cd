#![no_main]

use libfuzzer_sys::fuzz_target;
use decomp_core::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ck) = Checkpoint::from_json(text) {
        // Whatever validates must survive a round trip unchanged.
        let again = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(again, ck);
    }
});
