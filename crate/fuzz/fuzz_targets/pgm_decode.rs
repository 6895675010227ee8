#![no_main]

use crispdec::io::pgm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = pgm::decode(data) {
        assert_eq!(map.len(), map.height() * map.width());
        assert_eq!(pgm::decode(&pgm::encode(&map)).expect("re-encoded map decodes"), map);
    }
});
