#![no_main]

use libfuzzer_sys::fuzz_target;
use meminfl::trials::TrialStore;

fuzz_target!(|data: &[u8]| {
    let Ok(store) = TrialStore::from_bytes(data) else { return };
    // The checksum covers every byte, so a decoded store re-encodes exactly.
    assert_eq!(store.to_bytes(), data);
});
