#![no_main]

use libfuzzer_sys::fuzz_target;
use meritfed::shard_io::{decode_binary, encode_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(shard) = decode_binary(data) {
        assert_eq!(encode_binary(&shard).unwrap(), data);
    }
});
