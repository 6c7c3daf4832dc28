#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = edgeflow::harness::parse_trace(text) {
            let mut buf = Vec::new();
            edgeflow::harness::write_trace_csv(&mut buf, &records).unwrap();
            let again = edgeflow::harness::parse_trace(std::str::from_utf8(&buf).unwrap()).unwrap();
            assert_eq!(again, records);
        }
    }
});
