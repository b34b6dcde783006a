#![no_main]

use libfuzzer_sys::fuzz_target;
use nlhomog::config::Config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::from_toml_str(text) {
            // Accepted configs must survive validation or fail cleanly, and
            // re-serialization must parse back.
            let _ = cfg.validate();
            let round = cfg.to_toml_string();
            let again = Config::from_toml_str(&round).expect("serialized config reparses");
            assert_eq!(round, again.to_toml_string());
        }
    }
});
