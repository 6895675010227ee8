#![no_main]

use crispdec::wsss::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainConfig::parse(text) {
        let again = TrainConfig::parse(&cfg.render()).expect("rendered config parses");
        assert_eq!(again.render(), cfg.render());
    }
});
