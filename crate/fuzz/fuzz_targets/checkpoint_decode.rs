#![no_main]

use libfuzzer_sys::fuzz_target;
use subnet_forge::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        assert_eq!(ckpt.encode(), data);
    }
});
