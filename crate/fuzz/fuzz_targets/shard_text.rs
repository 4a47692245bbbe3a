#![no_main]

use libfuzzer_sys::fuzz_target;
use meritfed::shard_io::{decode_text, encode_text};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(shard) = decode_text(text) {
        let again = decode_text(&encode_text(&shard).unwrap()).expect("re-encoded shard decodes");
        assert_eq!(again, shard);
    }
});
