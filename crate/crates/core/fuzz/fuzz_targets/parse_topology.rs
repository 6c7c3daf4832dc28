#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(graph) = edgeflow::topology::parse_topology(text) {
            let again = edgeflow::topology::parse_topology(&graph.to_toml()).expect("serialized topology must parse");
            assert_eq!(again.num_nodes(), graph.num_nodes());
            for m in 0..graph.num_clusters() {
                assert_eq!(again.uplink_hops(m).ok(), graph.uplink_hops(m).ok());
            }
        }
    }
});
