#![no_main]

use libfuzzer_sys::fuzz_target;
use meminfl::dataset::parse_truth_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok((ids, subpops, noisy)) = parse_truth_csv(data, "fuzz") {
        assert_eq!(ids.len(), subpops.len());
        assert_eq!(ids.len(), noisy.len());
    }
});
