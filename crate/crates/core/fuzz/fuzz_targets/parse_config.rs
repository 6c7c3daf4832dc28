#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = edgeflow::config::parse_config(text) {
            let again = edgeflow::config::parse_config(&config.to_toml()).expect("serialized config must parse");
            assert_eq!(again, config);
        }
    }
});
