#![no_main]

use libfuzzer_sys::fuzz_target;
use edgeflow::ParamVector;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = ParamVector::from_bytes(data) {
        assert_eq!(params.to_bytes(), data);
    }
});
