#![no_main]

use libfuzzer_sys::fuzz_target;
use edgeflow::topology::CommLedger;

fuzz_target!(|data: &[u8]| {
    if let Ok(ledger) = CommLedger::read_csv(data) {
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let again = CommLedger::read_csv(buf.as_slice()).unwrap();
        assert_eq!(again.entries(), ledger.entries());
    }
});
