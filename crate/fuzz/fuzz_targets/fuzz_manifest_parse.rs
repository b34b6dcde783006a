#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::output::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = parse_manifest(data) {
        let bytes = serde_json::to_vec(&manifest).expect("serialize");
        let again = parse_manifest(&bytes).expect("round trip");
        assert_eq!(again.config_sha256, manifest.config_sha256);
        assert_eq!(again.seed, manifest.seed);
    }
});
