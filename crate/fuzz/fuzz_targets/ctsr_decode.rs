#![no_main]

use crispdec::io::ctsr;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = ctsr::decode(data) {
        assert_eq!(t.numel(), t.shape().iter().product::<usize>());
        let again = ctsr::decode(&ctsr::encode(&t)).expect("re-encoded tensor decodes");
        assert_eq!(again.shape(), t.shape());
    }
});
