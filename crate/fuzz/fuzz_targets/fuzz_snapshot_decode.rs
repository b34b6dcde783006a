#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::output::{decode_snapshot, encode_snapshot, parse_snapshot_header};

fuzz_target!(|data: &[u8]| {
    let _ = parse_snapshot_header(data);
    if let Ok((header, values)) = decode_snapshot(data) {
        // Anything that decodes must re-encode and decode to the same thing.
        let bytes = encode_snapshot(&header, &values).expect("re-encode");
        let (h2, v2) = decode_snapshot(&bytes).expect("round trip");
        assert_eq!(h2, header);
        assert_eq!(v2.len(), values.len());
    }
});
